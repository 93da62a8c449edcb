use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::output::{mean_and_sample_std, write_metrics, write_timings};
use crate::data::{heterogeneity_report, partition, ClientPartition, Dataset};
use crate::engine::{run_experiment, FederatedData, RoundMetrics};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::rng::RandomSource;

/// Data and model resolved for one seed.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub model: ModelSpec,
    pub data: FederatedData,
    pub partition: ClientPartition,
    pub divergence: f64,
}

/// Generates (or imports) the data, holds out the test set and partitions
/// the remainder, all from streams of `seed`.
pub fn prepare(cfg: &RunConfig, seed: u64) -> Result<Prepared> {
    cfg.validate()?;
    let mut full = match &cfg.data.import_path {
        Some(path) => Dataset::from_csv(path)?,
        None => cfg
            .data
            .synthetic()
            .generate(&mut RandomSource::new(seed, "data/generate"))?,
    };
    if cfg.data.standardize {
        full.standardize();
    }
    let (train, test) = full.split_holdout(cfg.data.test_fraction, &mut RandomSource::new(seed, "data/holdout"))?;
    if test.is_empty() {
        return Err(Error::config("data.test_fraction", "held-out test set is empty"));
    }
    let part = partition(
        train.labels(),
        &cfg.partition_spec(),
        &mut RandomSource::new(seed, "data/partition"),
    )?;
    let divergence = heterogeneity_report(&part, train.labels(), train.num_classes()).mean_divergence;
    let model = cfg.model_spec(train.input_dim(), train.num_classes());
    Ok(Prepared {
        model,
        data: FederatedData::from_partition(&train, &part, test),
        partition: part,
        divergence,
    })
}

#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    pub metrics: Vec<RoundMetrics>,
    pub divergence: f64,
    pub partition: ClientPartition,
}

pub fn run_seed(cfg: &RunConfig, seed: u64) -> Result<SeedOutcome> {
    let prepared = prepare(cfg, seed)?;
    let mut engine = cfg.engine.clone();
    engine.seed = seed;
    let state = run_experiment(&engine, &prepared.model, &prepared.data)?;
    Ok(SeedOutcome {
        seed,
        metrics: state.metrics_log,
        divergence: prepared.divergence,
        partition: prepared.partition,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub config_hash: String,
    pub strategy: String,
    pub seeds: Vec<u64>,
    pub metrics_files: Vec<String>,
    pub final_accuracies: Vec<f64>,
    pub mean_final_accuracy: f64,
    /// Sample standard deviation; zero for a single seed.
    pub std_final_accuracy: f64,
    pub mean_divergence: f64,
    /// Per-round QP activations averaged over rounds and seeds.
    pub mean_qp_activations: f64,
    /// Test accuracy per round averaged over seeds.
    pub mean_curve: Vec<f64>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    run_id: &'a str,
    config_hash: &'a str,
    created_unix_ms: u128,
    metrics_files: &'a [String],
    config: &'a RunConfig,
}

fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn create_unique_dir(parent: &Path, stem: &str) -> Result<(String, PathBuf)> {
    fs::create_dir_all(parent)?;
    for attempt in 0.. {
        let id = if attempt == 0 {
            stem.to_string()
        } else {
            format!("{stem}-{attempt}")
        };
        let dir = parent.join(&id);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok((id, dir)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!()
}

/// File names for the per-seed outputs; repeated seeds get a `-<n>` suffix.
fn seed_file_stems(seeds: &[u64]) -> Vec<String> {
    seeds
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let earlier = seeds[..i].iter().filter(|t| *t == s).count();
            if earlier == 0 {
                s.to_string()
            } else {
                format!("{s}-{earlier}")
            }
        })
        .collect()
}

/// Runs every seed and writes the run directory.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let outcomes: Vec<SeedOutcome> = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, seed))
        .collect::<Result<_>>()?;

    let (run_id, run_dir) = create_unique_dir(&cfg.output_dir, &format!("{}-{}", &hash[..16], unix_ms()))?;
    let stems = seed_file_stems(&cfg.seeds);
    let mut metrics_files = Vec::new();
    for (outcome, stem) in outcomes.iter().zip(&stems) {
        let name = format!("metrics-{stem}.csv");
        write_metrics(
            fs::File::create(run_dir.join(&name))?,
            &hash,
            cfg.strategy().as_str(),
            &outcome.metrics,
        )?;
        metrics_files.push(name);
        write_timings(
            fs::File::create(run_dir.join(format!("timings-{stem}.csv")))?,
            &outcome.metrics,
        )?;
        outcome
            .partition
            .write_to(fs::File::create(run_dir.join(format!("partition-{stem}.txt")))?)?;
    }

    let manifest = Manifest {
        run_id: &run_id,
        config_hash: &hash,
        created_unix_ms: unix_ms(),
        metrics_files: &metrics_files,
        config: cfg,
    };
    fs::write(
        run_dir.join("manifest.toml"),
        toml::to_string(&manifest).map_err(|e| Error::Parse(e.to_string()))?,
    )?;

    let final_accuracies: Vec<f64> = outcomes
        .iter()
        .map(|o| o.metrics.last().map_or(0.0, |m| m.test_accuracy))
        .collect();
    let (mean, std) = mean_and_sample_std(&final_accuracies);
    let rounds = cfg.engine.num_rounds;
    let mean_curve = (0..rounds)
        .map(|r| outcomes.iter().map(|o| o.metrics[r].test_accuracy).sum::<f64>() / outcomes.len() as f64)
        .collect();
    let total_activations: usize = outcomes
        .iter()
        .flat_map(|o| o.metrics.iter().map(|m| m.qp_activations))
        .sum();
    let summary = RunSummary {
        run_id,
        run_dir: run_dir.clone(),
        config_hash: hash,
        strategy: cfg.strategy().to_string(),
        seeds: cfg.seeds.clone(),
        metrics_files,
        final_accuracies,
        mean_final_accuracy: mean,
        std_final_accuracy: std,
        mean_divergence: outcomes.iter().map(|o| o.divergence).sum::<f64>() / outcomes.len() as f64,
        mean_qp_activations: total_activations as f64 / (rounds * outcomes.len()) as f64,
        mean_curve,
    };
    fs::write(
        run_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(|e| Error::Parse(e.to_string()))?,
    )?;
    Ok(summary)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    QpProbability,
    Beta,
    ClientsPerRound,
    Strategy,
}

impl SweepAxis {
    /// Config key the axis writes to.
    pub fn key(&self) -> &'static str {
        match self {
            SweepAxis::QpProbability => "engine.mutation.qp_probability",
            SweepAxis::Beta => "partition.beta",
            SweepAxis::ClientsPerRound => "engine.clients_per_round",
            SweepAxis::Strategy => "engine.strategy",
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::QpProbability => "qp_probability",
            SweepAxis::Beta => "beta",
            SweepAxis::ClientsPerRound => "clients_per_round",
            SweepAxis::Strategy => "strategy",
        }
    }

    /// TOML literal for one axis value.
    fn literal(&self, value: &str) -> Result<String> {
        let bad = || Error::config(self.key(), format!("`{value}` is not a valid {} value", self.as_str()));
        match self {
            SweepAxis::QpProbability | SweepAxis::Beta => {
                let v: f64 = value.parse().map_err(|_| bad())?;
                Ok(format!("{v:?}"))
            }
            SweepAxis::ClientsPerRound => {
                let v: usize = value.parse().map_err(|_| bad())?;
                Ok(v.to_string())
            }
            SweepAxis::Strategy => {
                let s: crate::engine::Strategy = value.parse()?;
                Ok(format!("\"{s}\""))
            }
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qp_probability" | "p" => Ok(SweepAxis::QpProbability),
            "beta" => Ok(SweepAxis::Beta),
            "clients_per_round" | "k" => Ok(SweepAxis::ClientsPerRound),
            "strategy" => Ok(SweepAxis::Strategy),
            other => Err(Error::config("axis", format!("unknown sweep axis `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub summary: RunSummary,
    /// Hash of the resolved config with the axis key removed.
    pub invariant_hash: String,
    pub curve_file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub sweep_dir: PathBuf,
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

/// One [`run`] per axis value with every other setting (seeds included) held
/// fixed. Writes `comparison.csv` and a `curve-<value>.csv` per value.
pub fn sweep(base: &RunConfig, spec: &SweepSpec) -> Result<SweepSummary> {
    base.validate()?;
    if spec.values.is_empty() {
        return Err(Error::config("values", "sweep needs at least one value"));
    }
    let stem = format!("sweep-{}-{}-{}", spec.axis.as_str(), &base.hash()?[..12], unix_ms());
    let (_, sweep_dir) = create_unique_dir(&base.output_dir, &stem)?;

    let mut rows = Vec::with_capacity(spec.values.len());
    for value in &spec.values {
        let assignment = format!("{}={}", spec.axis.key(), spec.axis.literal(value)?);
        let mut cfg = base.with_override(&assignment)?;
        cfg.output_dir = sweep_dir.clone();
        let summary = run(&cfg)?;
        let curve_file = format!("curve-{value}.csv");
        let mut curve = String::from("round,mean_test_accuracy\n");
        for (r, acc) in summary.mean_curve.iter().enumerate() {
            curve.push_str(&format!("{},{acc:?}\n", r + 1));
        }
        fs::write(sweep_dir.join(&curve_file), curve)?;
        rows.push(SweepRow {
            value: value.clone(),
            invariant_hash: cfg.hash_without(spec.axis.key())?,
            summary,
            curve_file,
        });
    }

    let mut table = String::from(
        "axis,value,strategy,mean_final_accuracy,std_final_accuracy,mean_divergence,mean_qp_activations,config_hash,invariant_hash,run_id\n",
    );
    for row in &rows {
        let s = &row.summary;
        table.push_str(&format!(
            "{},{},{},{:?},{:?},{:?},{:?},{},{},{}\n",
            spec.axis.as_str(),
            row.value,
            s.strategy,
            s.mean_final_accuracy,
            s.std_final_accuracy,
            s.mean_divergence,
            s.mean_qp_activations,
            s.config_hash,
            row.invariant_hash,
            s.run_id
        ));
    }
    fs::write(sweep_dir.join("comparison.csv"), table)?;
    Ok(SweepSummary {
        sweep_dir,
        axis: spec.axis,
        rows,
    })
}
