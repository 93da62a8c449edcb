use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::engine::RoundMetrics;
use crate::error::{Error, Result};

const METRICS_HEADER: &str = "round,strategy,test_accuracy,mean_train_loss,global_grad_norm,qp_activations";

/// Writes the per-round metrics table.
///
/// The first line is `# config_hash=<hash>`, then a CSV header and one row
/// per round. Reals use the shortest representation that parses back to the
/// same `f64`. Wall time lives in the timings file so that this file is a pure
/// function of configuration and seed.
pub fn write_metrics<W: Write>(mut out: W, config_hash: &str, strategy: &str, metrics: &[RoundMetrics]) -> Result<()> {
    let mut buf = format!("# config_hash={config_hash}\n{METRICS_HEADER}\n");
    for m in metrics {
        buf.push_str(&format!(
            "{},{strategy},{:?},{:?},{:?},{}\n",
            m.round, m.test_accuracy, m.mean_train_loss, m.global_grad_norm, m.qp_activations
        ));
    }
    out.write_all(buf.as_bytes())?;
    Ok(())
}

pub(crate) fn write_timings<W: Write>(mut out: W, metrics: &[RoundMetrics]) -> Result<()> {
    let mut buf = String::from("round,wall_ms\n");
    for m in metrics {
        buf.push_str(&format!("{},{}\n", m.round, m.wall_ms));
    }
    out.write_all(buf.as_bytes())?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, serde::Deserialize)]
pub struct MetricsRow {
    pub round: usize,
    pub strategy: String,
    pub test_accuracy: f64,
    pub mean_train_loss: f64,
    pub global_grad_norm: f64,
    pub qp_activations: usize,
}

pub fn read_metrics_file(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path.as_ref())?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub(crate) fn mean_and_sample_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Summary recomputed from the files of a run or sweep directory.
#[derive(Clone, Debug)]
pub struct Report {
    pub dir: PathBuf,
    pub config_hash: String,
    pub strategy: String,
    pub metrics_files: Vec<String>,
    pub rounds: usize,
    pub final_accuracies: Vec<f64>,
    pub mean_final_accuracy: f64,
    pub std_final_accuracy: f64,
    pub mean_qp_activations: f64,
    /// Whether `summary.json` agrees with the recomputation (to 1e-12), when present.
    pub summary_matches: Option<bool>,
    /// Raw `comparison.csv` for sweep directories.
    pub sweep_table: Option<String>,
}

/// Reads a run directory (or a sweep directory) back from disk.
pub fn report(dir: impl AsRef<Path>) -> Result<Report> {
    let dir = dir.as_ref();
    let comparison = dir.join("comparison.csv");
    if comparison.exists() {
        return Ok(Report {
            dir: dir.to_path_buf(),
            config_hash: String::new(),
            strategy: String::new(),
            metrics_files: Vec::new(),
            rounds: 0,
            final_accuracies: Vec::new(),
            mean_final_accuracy: f64::NAN,
            std_final_accuracy: f64::NAN,
            mean_qp_activations: f64::NAN,
            summary_matches: None,
            sweep_table: Some(fs::read_to_string(comparison)?),
        });
    }

    let manifest: toml::Table = fs::read_to_string(dir.join("manifest.toml"))?
        .parse()
        .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    let config_hash = manifest
        .get("config_hash")
        .and_then(toml::Value::as_str)
        .ok_or_else(|| Error::Parse("manifest lacks config_hash".into()))?
        .to_string();
    let metrics_files: Vec<String> = manifest
        .get("metrics_files")
        .and_then(toml::Value::as_array)
        .ok_or_else(|| Error::Parse("manifest lacks metrics_files".into()))?
        .iter()
        .filter_map(|v| v.as_str().map(str::to_string))
        .collect();

    let mut final_accuracies = Vec::new();
    let mut strategy = String::new();
    let mut rounds = 0;
    let mut activations = 0usize;
    let mut row_count = 0usize;
    for name in &metrics_files {
        let rows = read_metrics_file(dir.join(name))?;
        let last = rows.last().ok_or_else(|| Error::Parse(format!("{name} has no rows")))?;
        final_accuracies.push(last.test_accuracy);
        strategy = last.strategy.clone();
        rounds = rows.len();
        activations += rows.iter().map(|r| r.qp_activations).sum::<usize>();
        row_count += rows.len();
    }
    let (mean, std) = mean_and_sample_std(&final_accuracies);

    let summary_matches = match fs::read_to_string(dir.join("summary.json")) {
        Ok(text) => {
            let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
            let close = |key: &str, want: f64| {
                v.get(key)
                    .and_then(serde_json::Value::as_f64)
                    .is_some_and(|got| (got - want).abs() <= 1e-12)
            };
            Some(close("mean_final_accuracy", mean) && close("std_final_accuracy", std))
        }
        Err(_) => None,
    };

    Ok(Report {
        dir: dir.to_path_buf(),
        config_hash,
        strategy,
        metrics_files,
        rounds,
        final_accuracies,
        mean_final_accuracy: mean,
        std_final_accuracy: std,
        mean_qp_activations: if row_count == 0 {
            0.0
        } else {
            activations as f64 / row_count as f64
        },
        summary_matches,
        sweep_table: None,
    })
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(table) = &self.sweep_table {
            writeln!(f, "sweep {}", self.dir.display())?;
            return write!(f, "{table}");
        }
        writeln!(f, "run {}", self.dir.display())?;
        writeln!(f, "config_hash {}", self.config_hash)?;
        writeln!(f, "strategy {}  rounds {}", self.strategy, self.rounds)?;
        for (file, acc) in self.metrics_files.iter().zip(&self.final_accuracies) {
            writeln!(f, "  {file}: final accuracy {:.2}%", 100.0 * acc)?;
        }
        writeln!(
            f,
            "final accuracy {:.2} +- {:.2} % over {} seed(s)",
            100.0 * self.mean_final_accuracy,
            100.0 * self.std_final_accuracy,
            self.final_accuracies.len()
        )?;
        writeln!(f, "mean qp activations per round {:.3}", self.mean_qp_activations)?;
        match self.summary_matches {
            Some(true) => writeln!(f, "summary.json consistent"),
            Some(false) => writeln!(f, "summary.json DISAGREES with metrics files"),
            None => writeln!(f, "summary.json missing"),
        }
    }
}
