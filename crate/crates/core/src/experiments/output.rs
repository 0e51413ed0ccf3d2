use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, ResultRecord};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 16] = [
    "experiment_id",
    "claim_ref",
    "statistic_name",
    "estimate",
    "stderr",
    "ci_low",
    "ci_high",
    "n_paths",
    "n_rays",
    "probs",
    "t",
    "dt",
    "r",
    "master_seed",
    "pass",
    "wallclock_s",
];

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub suite_pass: bool,
    pub n_records: usize,
    pub records: Vec<ResultRecord>,
}

impl Summary {
    pub fn new(config: &ExperimentConfig, records: Vec<ResultRecord>) -> Self {
        Summary {
            config: config.clone(),
            config_hash: config.hash(),
            suite_pass: records.iter().all(|r| r.pass),
            n_records: records.len(),
            records,
        }
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes the records as CSV with the columns of [`CSV_HEADER`].
pub fn write_csv<W: Write>(out: W, records: &[ResultRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(csv_error)?;
    for r in records {
        let probs = r
            .probs
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(";");
        w.write_record([
            r.experiment_id.clone(),
            r.claim_ref.clone(),
            r.statistic_name.clone(),
            r.estimate.to_string(),
            opt(r.stderr),
            opt(r.ci_low),
            opt(r.ci_high),
            r.n_paths.to_string(),
            r.n_rays.to_string(),
            probs,
            r.t.to_string(),
            r.dt.to_string(),
            opt(r.r),
            r.master_seed.to_string(),
            r.pass.to_string(),
            format!("{:.3}", r.wallclock_s),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Writes `results.csv` and `summary.json` into `dir`, replacing earlier
/// files. Returns both paths.
pub fn write_results(dir: &Path, summary: &Summary) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join("results.csv");
    let json_path = dir.join("summary.json");
    let mut buf = Vec::new();
    write_csv(&mut buf, &summary.records)?;
    fs::write(&csv_path, buf)?;
    let json = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    fs::write(&json_path, json + "\n")?;
    Ok((csv_path, json_path))
}

/// Reads a `summary.json`; malformed content is a configuration error.
pub fn read_summary(path: &Path) -> Result<Summary> {
    let text = fs::read_to_string(path)?;
    let summary: Summary = serde_json::from_str(&text)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    summary.config.validate()?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_records_give_header_only() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), CSV_HEADER.join(",") + "\n");
    }

    #[test]
    fn summary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = Summary::new(&ExperimentConfig::default(), Vec::new());
        assert!(s.suite_pass);
        let (_, json) = write_results(dir.path(), &s).unwrap();
        assert_eq!(read_summary(&json).unwrap(), s);
    }
}
