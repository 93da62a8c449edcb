//! The federated round loop for FedAvg, FedMut and FedQP.
//!
//! Every random decision draws from its own stream under the run seed:
//!
//! | stream | use |
//! |---|---|
//! | `init` | initial global model |
//! | `round/<r>/select` | client selection |
//! | `round/<r>/dispatch` | pool order shuffle |
//! | `round/<r>/client/<i>` | local training in dispatch slot `i` |
//! | `round/<r>/mutate/<j>` | regeneration of pool model `j` |
//!
//! Streams never depend on which strategy runs, so strategies that reduce to
//! one another produce the same trajectory bit for bit.

use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClientPartition, Dataset};
use crate::error::{Error, Result};
use crate::model::{LocalUpdate, ModelSpec, TrainConfig};
use crate::mutation::{mutate_model, MutationBase, MutationConfig};
use crate::params::LayeredParams;
use crate::rng::RandomSource;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    FedAvg,
    FedMut,
    FedQp,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::FedAvg => "fedavg",
            Strategy::FedMut => "fedmut",
            Strategy::FedQp => "fedqp",
        }
    }

    pub fn uses_pool(&self) -> bool {
        !matches!(self, Strategy::FedAvg)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fedavg" => Ok(Strategy::FedAvg),
            "fedmut" => Ok(Strategy::FedMut),
            "fedqp" => Ok(Strategy::FedQp),
            other => Err(Error::config("engine.strategy", format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationWeighting {
    Uniform,
    BySampleCount,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub num_rounds: usize,
    pub num_devices: usize,
    pub clients_per_round: usize,
    pub strategy: Strategy,
    pub aggregation_weighting: AggregationWeighting,
    /// Supplied per run from the harness seed list, never from config files.
    #[serde(skip)]
    pub seed: u64,
    pub mutation: MutationConfig,
    pub train: TrainConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            num_rounds: 100,
            num_devices: 100,
            clients_per_round: 10,
            strategy: Strategy::FedQp,
            aggregation_weighting: AggregationWeighting::Uniform,
            seed: 0,
            mutation: MutationConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_devices == 0 {
            return Err(Error::config("engine.num_devices", "must be >= 1"));
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.num_devices {
            return Err(Error::config(
                "engine.clients_per_round",
                format!("must lie in [1, num_devices = {}]", self.num_devices),
            ));
        }
        self.mutation.validate()?;
        self.train.validate()
    }

    /// QP probability actually used: zero for FedMut, configured for FedQP.
    fn effective_mutation(&self) -> MutationConfig {
        let mut m = self.mutation;
        if self.strategy == Strategy::FedMut {
            m.qp_probability = 0.0;
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub test_accuracy: f64,
    pub mean_train_loss: f64,
    pub global_grad_norm: f64,
    pub qp_activations: usize,
    pub wall_ms: u64,
}

impl RoundMetrics {
    /// Everything except wall time, as raw bits, for exact comparisons.
    pub fn deterministic_key(&self) -> (usize, u64, u64, u64, usize) {
        (
            self.round,
            self.test_accuracy.to_bits(),
            self.mean_train_loss.to_bits(),
            self.global_grad_norm.to_bits(),
            self.qp_activations,
        )
    }
}

#[derive(Clone, Debug)]
pub struct ServerState {
    pub round: usize,
    pub w_g_current: LayeredParams,
    pub w_g_previous: LayeredParams,
    /// The `K` mutated models; empty under FedAvg.
    pub pool: Vec<LayeredParams>,
    pub metrics_log: Vec<RoundMetrics>,
}

impl ServerState {
    /// Round-0 state: `w_g^0` from the `init` stream, `w_g_previous = w_g^0`
    /// and, for pool strategies, `K` copies of `w_g^0`.
    pub fn init(model: &ModelSpec, cfg: &EngineConfig) -> Result<ServerState> {
        cfg.validate()?;
        let w0 = model.init_params(&mut RandomSource::new(cfg.seed, "init"))?;
        let pool = if cfg.strategy.uses_pool() {
            vec![w0.clone(); cfg.clients_per_round]
        } else {
            Vec::new()
        };
        Ok(ServerState {
            round: 0,
            w_g_previous: w0.clone(),
            w_g_current: w0,
            pool,
            metrics_log: Vec::new(),
        })
    }
}

/// Client datasets plus the held-out global test set.
#[derive(Clone, Debug)]
pub struct FederatedData {
    pub clients: Vec<Dataset>,
    pub test: Dataset,
}

impl FederatedData {
    pub fn from_partition(train: &Dataset, partition: &ClientPartition, test: Dataset) -> FederatedData {
        FederatedData {
            clients: partition.assignments.iter().map(|idx| train.subset(idx)).collect(),
            test,
        }
    }
}

/// `k` distinct ids drawn uniformly from `0..d`, sorted ascending.
pub fn select_clients(d: usize, k: usize, rng: &mut RandomSource) -> Result<Vec<usize>> {
    if k > d {
        return Err(Error::invalid(
            "client selection",
            format!("cannot pick {k} of {d} clients"),
        ));
    }
    let mut ids = index::sample(rng, d, k).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Weighted mean of `models` with weights normalised to sum one.
///
/// Computed as `x_0 + sum_i (w_i / W) (x_i - x_0)` in index order, so
/// identical inputs come back unchanged and a unit weight on the first model
/// returns it exactly.
pub fn aggregate(models: &[LayeredParams], weights: &[f64]) -> Result<LayeredParams> {
    let Some(first) = models.first() else {
        return Err(Error::invalid("aggregation", "no models"));
    };
    if weights.len() != models.len() {
        return Err(Error::invalid(
            "aggregation",
            format!("{} weights for {} models", weights.len(), models.len()),
        ));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::invalid(
            "aggregation",
            format!("weight {w} is not a nonnegative number"),
        ));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("aggregation", "weights sum to zero"));
    }
    for m in &models[1..] {
        first.check_compatible(m)?;
    }
    let mut out = first.clone();
    for (li, layer) in out.layers_mut().iter_mut().enumerate() {
        let anchor = &first.layers()[li].data;
        for (idx, value) in layer.data.iter_mut().enumerate() {
            let mut offset = 0.0;
            for (m, w) in models.iter().zip(weights).skip(1) {
                offset += (w / total) * (m.layers()[li].data[idx] - anchor[idx]);
            }
            *value = anchor[idx] + offset;
        }
    }
    Ok(out)
}

/// `w_new - w_old`, layer-wise.
pub fn compute_global_gradient(w_new: &LayeredParams, w_old: &LayeredParams) -> Result<LayeredParams> {
    w_new.sub(w_old)
}

/// Executes one round and returns the next state.
pub fn run_round(
    state: ServerState,
    cfg: &EngineConfig,
    model: &ModelSpec,
    data: &FederatedData,
) -> Result<ServerState> {
    cfg.validate()?;
    if data.clients.len() != cfg.num_devices {
        return Err(Error::invalid(
            "federated data",
            format!(
                "{} client datasets for num_devices = {}",
                data.clients.len(),
                cfg.num_devices
            ),
        ));
    }
    let started = Instant::now();
    let round = state.round + 1;
    let k = cfg.clients_per_round;
    let stream = |name: String| RandomSource::new(cfg.seed, format!("round/{round}/{name}"));

    // Step 1: selection and dispatch
    let selected = select_clients(cfg.num_devices, k, &mut stream("select".into()))?;
    let dispatched: Vec<&LayeredParams> = if cfg.strategy.uses_pool() {
        if state.pool.len() != k {
            return Err(Error::invalid(
                "server state",
                format!("pool holds {} models, need {k}", state.pool.len()),
            ));
        }
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut stream("dispatch".into()));
        order.iter().map(|&j| &state.pool[j]).collect()
    } else {
        vec![&state.w_g_current; k]
    };

    // Step 2: local training, one stream per dispatch slot
    let updates: Vec<LocalUpdate> = selected
        .par_iter()
        .zip(dispatched.par_iter())
        .enumerate()
        .map(|(slot, (&client, start))| {
            let mut rng = stream(format!("client/{slot}"));
            model.local_train(start, &data.clients[client], &cfg.train, &mut rng)
        })
        .collect::<Result<_>>()?;

    // Step 3: aggregation
    let weights: Vec<f64> = match cfg.aggregation_weighting {
        AggregationWeighting::Uniform => vec![1.0; k],
        AggregationWeighting::BySampleCount => selected.iter().map(|&c| data.clients[c].len() as f64).collect(),
    };
    let locals: Vec<LayeredParams> = updates.iter().map(|u| u.params.clone()).collect();
    let w_new = aggregate(&locals, &weights)?;

    // Step 4: global gradient against the previous round's global model
    let w_delta = compute_global_gradient(&w_new, &state.w_g_current)?;

    // Steps 5-7: regenerate the pool
    let mut qp_activations = 0;
    let pool = if cfg.strategy.uses_pool() {
        let mcfg = cfg.effective_mutation();
        let outcomes = (0..k)
            .into_par_iter()
            .map(|j| {
                let base = match mcfg.base {
                    MutationBase::Global => &w_new,
                    MutationBase::Local => &locals[j],
                };
                mutate_model(&w_new, &w_delta, base, &mcfg, &mut stream(format!("mutate/{j}")))
            })
            .collect::<Result<Vec<_>>>()?;
        qp_activations = outcomes.iter().map(|o| o.qp_activations).sum();
        outcomes.into_iter().map(|o| o.params).collect()
    } else {
        Vec::new()
    };

    let test_accuracy = model.evaluate(&w_new, &data.test)?;
    let mean_train_loss = updates.iter().map(|u| u.mean_loss).sum::<f64>() / k as f64;
    let mut metrics_log = state.metrics_log;
    metrics_log.push(RoundMetrics {
        round,
        test_accuracy,
        mean_train_loss,
        global_grad_norm: w_delta.norm(),
        qp_activations,
        wall_ms: started.elapsed().as_millis() as u64,
    });

    // Step 8: the current global model becomes the previous one
    Ok(ServerState {
        round,
        w_g_previous: state.w_g_current,
        w_g_current: w_new,
        pool,
        metrics_log,
    })
}

/// Runs `cfg.num_rounds` rounds from the initial state.
pub fn run_experiment(cfg: &EngineConfig, model: &ModelSpec, data: &FederatedData) -> Result<ServerState> {
    let mut state = ServerState::init(model, cfg)?;
    for _ in 0..cfg.num_rounds {
        state = run_round(state, cfg, model, data)?;
    }
    Ok(state)
}
