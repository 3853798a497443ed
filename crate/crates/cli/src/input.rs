//! Reading count curves back from disk.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use readout_core::estimation::CurvePoint;
use readout_core::DecayCurve;

const COLUMNS: [&str; 3] = ["tau_s", "mean_counts", "n_trials"];

/// Reads a `tau_s,mean_counts,n_trials` table. Lines starting with `#` are
/// ignored; columns are matched by name. Errors name the offending line and
/// column.
pub fn read_curve(path: &Path) -> Result<DecayCurve> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_curve(file).with_context(|| format!("reading {}", path.display()))
}

pub fn parse_curve<R: std::io::Read>(reader: R) -> Result<DecayCurve> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().context("reading header")?.clone();
    let index: Vec<usize> = COLUMNS
        .iter()
        .map(|name| {
            header
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| anyhow!("header is missing column '{name}'"))
        })
        .collect::<Result<_>>()?;

    let mut points: Vec<CurvePoint> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| match e.position() {
            Some(p) => anyhow!("line {}: {e}", p.line()),
            None => anyhow!("{e}"),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |k: usize| -> Result<&str> {
            record
                .get(index[k])
                .ok_or_else(|| anyhow!("line {line}, column '{}': missing value", COLUMNS[k]))
        };
        let float = |k: usize| -> Result<f64> {
            let raw = field(k)?;
            let v: f64 = raw.parse().map_err(|_| {
                anyhow!(
                    "line {line}, column '{}': cannot parse '{raw}' as a number",
                    COLUMNS[k]
                )
            })?;
            if !v.is_finite() || v < 0.0 {
                bail!(
                    "line {line}, column '{}': expected a finite nonnegative value, got {raw}",
                    COLUMNS[k]
                );
            }
            Ok(v)
        };
        let tau = float(0)?;
        let mean_counts = float(1)?;
        let raw = field(2)?;
        let n_trials: u64 = raw.parse().map_err(|_| {
            anyhow!("line {line}, column 'n_trials': cannot parse '{raw}' as a trial count")
        })?;
        if let Some(prev) = points.last() {
            if tau <= prev.tau {
                bail!("line {line}, column 'tau_s': values must be strictly increasing");
            }
        }
        points.push(CurvePoint {
            tau,
            mean_counts,
            n_trials,
        });
    }
    Ok(DecayCurve::new(points)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<DecayCurve> {
        parse_curve(text.as_bytes())
    }

    #[test]
    fn reads_written_format_with_reordered_columns() {
        let c = parse(
            "# config_hash=x seed=1\nn_trials,tau_s,mean_counts\n10,1.0e-5,2.5\n10,2.0e-5,4.0\n",
        )
        .unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.points()[1].tau, 2.0e-5);
        assert_eq!(c.points()[1].mean_counts, 4.0);
    }

    #[test]
    fn errors_name_line_and_column() {
        let e = format!(
            "{:#}",
            parse("tau_s,mean_counts,n_trials\n1e-5,1.0,10\n2e-5,abc,10\n").unwrap_err()
        );
        assert!(e.contains("line 3") && e.contains("mean_counts"), "{e}");
        let e = format!("{:#}", parse("tau_s,mean_counts\n1e-5,1.0\n").unwrap_err());
        assert!(e.contains("n_trials"), "{e}");
        let e = format!(
            "{:#}",
            parse("tau_s,mean_counts,n_trials\n2e-5,1.0,10\n1e-5,1.0,10\n").unwrap_err()
        );
        assert!(e.contains("line 3") && e.contains("tau_s"), "{e}");
        let e = format!(
            "{:#}",
            parse("tau_s,mean_counts,n_trials\n1e-5,1.0,ten\n").unwrap_err()
        );
        assert!(e.contains("line 2") && e.contains("n_trials"), "{e}");
        let e = format!(
            "{:#}",
            parse("tau_s,mean_counts,n_trials\n1e-5,-1.0,10\n").unwrap_err()
        );
        assert!(e.contains("mean_counts"), "{e}");
    }
}
