//! Synthetic classification data and client partitioning.
//!
//! Class `c` of a synthetic set is drawn from `N(mean_c, noise_std^2 I)`.
//! The means sit on signed coordinate axes: `mean_c = s * e_(c mod d)` with
//! magnitude `s = class_separation / sqrt(2)`, positive for `c < d` and
//! negative for `d <= c < 2d`. Means on distinct axes are exactly
//! `class_separation` apart; opposite means on the same axis are
//! `sqrt(2) * class_separation` apart. At most `2 * input_dim` classes fit.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomSource;

/// Labelled samples stored as a row-major `len x input_dim` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    input_dim: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, input_dim: usize, num_classes: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("dataset", "input_dim must be >= 1"));
        }
        if features.len() != labels.len() * input_dim {
            return Err(Error::invalid(
                "dataset",
                format!(
                    "{} feature values do not form {} rows of width {input_dim}",
                    features.len(),
                    labels.len()
                ),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(
                "dataset",
                format!("label {bad} out of range for {num_classes} classes"),
            ));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset", "non-finite feature value"));
        }
        Ok(Dataset {
            features,
            labels,
            input_dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.input_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            labels,
            input_dim: self.input_dim,
            num_classes: self.num_classes,
        }
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }

    /// Shifts every feature column to zero mean and scales it to unit
    /// (population) variance. Constant columns are only centred.
    pub fn standardize(&mut self) {
        let n = self.len();
        if n == 0 {
            return;
        }
        let d = self.input_dim;
        for j in 0..d {
            let mut mean = 0.0;
            for i in 0..n {
                mean += self.features[i * d + j];
            }
            mean /= n as f64;
            let mut var = 0.0;
            for i in 0..n {
                let t = self.features[i * d + j] - mean;
                var += t * t;
            }
            let std = (var / n as f64).sqrt();
            for i in 0..n {
                let v = &mut self.features[i * d + j];
                *v -= mean;
                if std > 0.0 {
                    *v /= std;
                }
            }
        }
    }

    /// Stratified hold-out: from every class, `round(fraction * count)`
    /// samples (at most `count - 1`) go to the test set.
    ///
    /// Returns `(train, test)`.
    pub fn split_holdout(&self, fraction: f64, rng: &mut RandomSource) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::invalid("test fraction", "must lie in [0, 1)"));
        }
        let mut train_idx = Vec::new();
        let mut test_idx = Vec::new();
        for c in 0..self.num_classes {
            let mut members: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == c).collect();
            members.shuffle(rng);
            let take = ((fraction * members.len() as f64).round() as usize).min(members.len().saturating_sub(1));
            test_idx.extend_from_slice(&members[..take]);
            train_idx.extend_from_slice(&members[take..]);
        }
        train_idx.sort_unstable();
        test_idx.sort_unstable();
        Ok((self.subset(&train_idx), self.subset(&test_idx)))
    }

    /// Reads a delimited text file: one sample per row, features first and an
    /// integer class label in the last column. Lines starting with `#` are
    /// comments. The first remaining row is a header iff its last field is not
    /// an unsigned integer. The number of classes is `max label + 1`.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut width: Option<usize> = None;
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() < 2 {
                return Err(Error::Parse(format!(
                    "row {}: need at least one feature and a label",
                    row + 1
                )));
            }
            let last = &record[record.len() - 1];
            let label: usize = match last.parse() {
                Ok(l) => l,
                Err(_) if row == 0 => continue,
                Err(_) => return Err(Error::Parse(format!("row {}: bad label `{last}`", row + 1))),
            };
            let d = record.len() - 1;
            match width {
                None => width = Some(d),
                Some(w) if w != d => {
                    return Err(Error::Parse(format!("row {}: expected {w} features, got {d}", row + 1)));
                }
                _ => {}
            }
            for field in record.iter().take(d) {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::Parse(format!("row {}: bad feature `{field}`", row + 1)))?;
                features.push(v);
            }
            labels.push(label);
        }
        let input_dim = width.ok_or_else(|| Error::Parse("no data rows".into()))?;
        let num_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
        Dataset::new(features, labels, input_dim, num_classes)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    pub samples_per_class: usize,
    pub class_separation: f64,
    pub noise_std: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 10,
            input_dim: 32,
            samples_per_class: 500,
            class_separation: 1.0,
            noise_std: 1.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("data.num_classes", "must be >= 2"));
        }
        if self.input_dim < 1 {
            return Err(Error::config("data.input_dim", "must be >= 1"));
        }
        if self.num_classes > 2 * self.input_dim {
            return Err(Error::config("data.num_classes", "must be <= 2 * input_dim"));
        }
        if self.samples_per_class < 1 {
            return Err(Error::config("data.samples_per_class", "must be >= 1"));
        }
        if !(self.class_separation.is_finite() && self.class_separation > 0.0) {
            return Err(Error::config("data.class_separation", "must be finite and > 0"));
        }
        if !(self.noise_std.is_finite() && self.noise_std > 0.0) {
            return Err(Error::config("data.noise_std", "must be finite and > 0"));
        }
        Ok(())
    }

    /// Row-major `num_classes x input_dim` matrix of class means.
    pub fn class_means(&self) -> Vec<f64> {
        let d = self.input_dim;
        let magnitude = self.class_separation / std::f64::consts::SQRT_2;
        let mut means = vec![0.0; self.num_classes * d];
        for c in 0..self.num_classes {
            let sign = if c < d { 1.0 } else { -1.0 };
            means[c * d + c % d] = sign * magnitude;
        }
        means
    }

    /// Draws `samples_per_class` samples per class, class by class.
    pub fn generate(&self, rng: &mut RandomSource) -> Result<Dataset> {
        self.validate()?;
        let d = self.input_dim;
        let means = self.class_means();
        let n = self.num_classes * self.samples_per_class;
        let mut features = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        for c in 0..self.num_classes {
            for _ in 0..self.samples_per_class {
                for j in 0..d {
                    let z: f64 = StandardNormal.sample(rng);
                    features.push(means[c * d + j] + self.noise_std * z);
                }
                labels.push(c);
            }
        }
        Dataset::new(features, labels, d, self.num_classes)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionMode {
    Iid,
    Dirichlet,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PartitionSpec {
    pub num_clients: usize,
    pub mode: PartitionMode,
    /// Dirichlet concentration; ignored in iid mode.
    pub beta: f64,
}

impl PartitionSpec {
    pub fn iid(num_clients: usize) -> Self {
        PartitionSpec {
            num_clients,
            mode: PartitionMode::Iid,
            beta: 0.0,
        }
    }

    pub fn dirichlet(num_clients: usize, beta: f64) -> Self {
        PartitionSpec {
            num_clients,
            mode: PartitionMode::Dirichlet,
            beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::invalid("partition", "num_clients must be >= 1"));
        }
        if self.mode == PartitionMode::Dirichlet && !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::config("partition.beta", "must be finite and > 0"));
        }
        Ok(())
    }
}

/// Per-client sample index sets. Sets are sorted, disjoint and cover the
/// partitioned index range.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientPartition {
    pub assignments: Vec<Vec<usize>>,
}

impl ClientPartition {
    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn client_sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    /// Checks that the sets are disjoint and cover `0..n`.
    pub fn check_covers(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for (client, set) in self.assignments.iter().enumerate() {
            for &i in set {
                if i >= n {
                    return Err(Error::invalid(
                        "partition",
                        format!("client {client} holds index {i} >= {n}"),
                    ));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::invalid("partition", format!("index {i} assigned twice")));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::invalid("partition", format!("index {missing} unassigned")));
        }
        Ok(())
    }

    /// Audit format: a `# fedqp partition v1` line, then one line per client
    /// holding the client id, its size and its sorted indices, tab separated
    /// (indices space separated).
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# fedqp partition v1")?;
        for (client, set) in self.assignments.iter().enumerate() {
            let idx: Vec<String> = set.iter().map(usize::to_string).collect();
            writeln!(out, "{client}\t{}\t{}", set.len(), idx.join(" "))?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<ClientPartition> {
        let mut assignments = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(id), Some(size), Some(idx)) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::Parse(format!("bad partition line `{line}`")));
            };
            let id: usize = id.parse().map_err(|_| Error::Parse(format!("bad client id `{id}`")))?;
            if id != assignments.len() {
                return Err(Error::Parse(format!("client ids out of order at `{id}`")));
            }
            let set: Vec<usize> = idx
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| Error::Parse(format!("bad index `{s}`"))))
                .collect::<Result<_>>()?;
            if size.parse::<usize>().ok() != Some(set.len()) {
                return Err(Error::Parse(format!("size column disagrees for client {id}")));
            }
            assignments.push(set);
        }
        Ok(ClientPartition { assignments })
    }
}

/// Splits sample indices `0..labels.len()` across clients.
///
/// * iid: a shuffled equal split; the first `n mod N` clients get one extra.
/// * dirichlet: per class, client proportions are drawn from `Dir(beta)`,
///   the shuffled class indices are cut at the rounded cumulative proportion
///   boundaries, and the contiguous ranges go to the clients in order. A
///   client left empty then receives one sample from the currently largest
///   client until every client holds at least one sample.
pub fn partition(labels: &[usize], spec: &PartitionSpec, rng: &mut RandomSource) -> Result<ClientPartition> {
    spec.validate()?;
    let n = labels.len();
    let clients = spec.num_clients;
    if n < clients {
        return Err(Error::invalid(
            "partition",
            format!("{n} samples cannot cover {clients} clients"),
        ));
    }
    let mut assignments: Vec<Vec<usize>> = vec![Vec::new(); clients];
    match spec.mode {
        PartitionMode::Iid => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            let base = n / clients;
            let extra = n % clients;
            let mut start = 0;
            for (k, set) in assignments.iter_mut().enumerate() {
                let size = base + usize::from(k < extra);
                set.extend_from_slice(&order[start..start + size]);
                start += size;
            }
        }
        PartitionMode::Dirichlet => {
            let num_classes = labels.iter().max().map_or(0, |m| m + 1);
            let gamma = Gamma::new(spec.beta, 1.0).map_err(|e| Error::config("partition.beta", e.to_string()))?;
            for c in 0..num_classes {
                let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
                if members.is_empty() {
                    continue;
                }
                members.shuffle(rng);
                let proportions = dirichlet_draw(&gamma, clients, rng);
                let m = members.len();
                let mut cumulative = 0.0;
                let mut start = 0;
                for (k, p) in proportions.iter().enumerate() {
                    cumulative += p;
                    let end = if k + 1 == clients {
                        m
                    } else {
                        ((cumulative * m as f64).round() as usize).clamp(start, m)
                    };
                    assignments[k].extend_from_slice(&members[start..end]);
                    start = end;
                }
            }
            repair_empty_clients(&mut assignments);
        }
    }
    for set in &mut assignments {
        set.sort_unstable();
    }
    Ok(ClientPartition { assignments })
}

fn dirichlet_draw(gamma: &Gamma<f64>, k: usize, rng: &mut RandomSource) -> Vec<f64> {
    let mut draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        for v in &mut draws {
            *v /= total;
        }
    } else {
        // every gamma draw underflowed: the limit is a one-hot vector
        let hot = rng.random_range(0..k);
        for (i, v) in draws.iter_mut().enumerate() {
            *v = if i == hot { 1.0 } else { 0.0 };
        }
    }
    draws
}

fn repair_empty_clients(assignments: &mut [Vec<usize>]) {
    while let Some(empty) = assignments.iter().position(Vec::is_empty) {
        let mut largest = 0;
        for (k, set) in assignments.iter().enumerate() {
            if set.len() > assignments[largest].len() {
                largest = k;
            }
        }
        let moved = assignments[largest].pop().expect("total samples >= clients");
        assignments[empty].push(moved);
    }
}

/// Per-client label counts and how far client label distributions sit from
/// the global one.
#[derive(Clone, Debug, PartialEq)]
pub struct HeterogeneityReport {
    /// `histograms[client][class]`.
    pub histograms: Vec<Vec<usize>>,
    /// Mean over nonempty clients of the total-variation distance
    /// `0.5 * sum_c |p_client(c) - p_global(c)|`.
    pub mean_divergence: f64,
}

pub fn heterogeneity_report(partition: &ClientPartition, labels: &[usize], num_classes: usize) -> HeterogeneityReport {
    let mut global = vec![0usize; num_classes];
    let mut histograms = Vec::with_capacity(partition.num_clients());
    for set in &partition.assignments {
        let mut h = vec![0usize; num_classes];
        for &i in set {
            h[labels[i]] += 1;
            global[labels[i]] += 1;
        }
        histograms.push(h);
    }
    let total: usize = global.iter().sum();
    let mut sum_tv = 0.0;
    let mut counted = 0usize;
    for h in &histograms {
        let size: usize = h.iter().sum();
        if size == 0 {
            continue;
        }
        let mut tv = 0.0;
        for c in 0..num_classes {
            tv += (h[c] as f64 / size as f64 - global[c] as f64 / total as f64).abs();
        }
        sum_tv += 0.5 * tv;
        counted += 1;
    }
    HeterogeneityReport {
        histograms,
        mean_divergence: if counted == 0 { 0.0 } else { sum_tv / counted as f64 },
    }
}
