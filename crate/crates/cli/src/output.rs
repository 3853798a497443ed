//! Data files: comma-separated tables preceded by a provenance comment
//! line, numbers printed with 9 significant digits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// Scientific notation with 9 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.8e}")
}

/// What every output file records about the run that produced it.
#[derive(Debug, Clone)]
pub struct Stamp {
    pub config_hash: String,
    pub seed: u64,
}

impl Stamp {
    pub fn comment(&self) -> String {
        format!("# config_hash={} seed={}", self.config_hash, self.seed)
    }
}

pub struct Table {
    path: PathBuf,
    inner: csv::Writer<BufWriter<File>>,
}

impl Table {
    pub fn create(path: &Path, stamp: &Stamp, header: &[&str]) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut buf = BufWriter::new(file);
        writeln!(buf, "{}", stamp.comment())?;
        let mut inner = csv::Writer::from_writer(buf);
        inner.write_record(header)?;
        Ok(Self {
            path: path.to_path_buf(),
            inner,
        })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner
            .write_record(fields)
            .with_context(|| format!("writing {}", self.path.display()))
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.inner
            .flush()
            .with_context(|| format!("writing {}", self.path.display()))?;
        Ok(self.path)
    }
}

/// Writes `value` as pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
