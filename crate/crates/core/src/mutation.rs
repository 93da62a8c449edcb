//! Stochastic model mutation and its QP correction.
//!
//! A raw mutation `mut` of one layer is projected onto the halfspace
//! `{m : <m, g> >= 0}` where `g` is the global gradient of that layer:
//!
//! ```text
//! min_m ||m - mut||^2   subject to   <m, g> >= 0
//! ```
//!
//! The Lagrangian gives `m = mut + lambda * g`. The dual is the scalar
//! problem `min_{lambda >= 0} 0.5 * lambda^2 <g, g> + lambda <mut, g>`,
//! whose minimiser is `lambda = max(0, -<mut, g> / <g, g>)`. The corrected
//! mutation is therefore a conical combination of `mut` and `g`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{dot, dot_unchecked, norm_sq, LayeredParams};
use crate::rng::RandomSource;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationDistribution {
    /// `s * alpha * grad` with a fair random sign `s`.
    SignedGradient,
    /// `alpha * ||grad|| / sqrt(d) * z` with `z ~ N(0, I_d)`.
    Gaussian,
}

/// Which model the corrected mutation is added to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationBase {
    /// The freshly aggregated global model.
    Global,
    /// The local model returned by the client at the same pool index.
    Local,
}

/// Granularity of the halfspace constraint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintScope {
    /// One constraint and one Bernoulli(p) draw per layer.
    PerLayer,
    /// One constraint over the concatenated model and one draw per model.
    WholeModel,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MutationConfig {
    pub alpha: f64,
    pub qp_probability: f64,
    pub distribution: MutationDistribution,
    pub degenerate_eps: f64,
    pub base: MutationBase,
    pub scope: ConstraintScope,
}

impl Default for MutationConfig {
    fn default() -> Self {
        MutationConfig {
            alpha: 1.0,
            qp_probability: 0.5,
            distribution: MutationDistribution::SignedGradient,
            degenerate_eps: 1e-12,
            base: MutationBase::Global,
            scope: ConstraintScope::PerLayer,
        }
    }
}

impl MutationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::config("engine.mutation.alpha", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.qp_probability) {
            return Err(Error::config(
                "engine.mutation.qp_probability",
                format!("{} is outside [0, 1]", self.qp_probability),
            ));
        }
        if !(self.degenerate_eps.is_finite() && self.degenerate_eps > 0.0) {
            return Err(Error::config(
                "engine.mutation.degenerate_eps",
                "must be finite and > 0",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpResult {
    pub corrected: Vec<f64>,
    pub lambda: f64,
    pub was_active: bool,
}

/// Draws the raw mutation of one layer.
pub fn generate_raw_mutation(layer_grad: &[f64], cfg: &MutationConfig, rng: &mut RandomSource) -> Vec<f64> {
    match cfg.distribution {
        MutationDistribution::SignedGradient => {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let scale = sign * cfg.alpha;
            layer_grad.iter().map(|g| scale * g).collect()
        }
        MutationDistribution::Gaussian => {
            let d = layer_grad.len();
            if d == 0 {
                return Vec::new();
            }
            let scale = cfg.alpha * norm_sq(layer_grad).sqrt() / (d as f64).sqrt();
            (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    scale * z
                })
                .collect()
        }
    }
}

/// Projects `mutation` onto `{m : <m, grad> >= 0}` in closed form.
///
/// When `<grad, grad> < eps` the input is returned unchanged. Rounding in the
/// final inner product can leave an active projection a few ulps on the wrong
/// side of the boundary; `lambda` is then nudged upward until the computed
/// `<corrected, grad>` is nonnegative, so re-projecting the output is a no-op.
pub fn qp_correct(mutation: &[f64], grad: &[f64], eps: f64) -> Result<QpResult> {
    let inner = dot(mutation, grad)?;
    let gg = norm_sq(grad);
    if gg < eps || inner >= 0.0 {
        return Ok(QpResult {
            corrected: mutation.to_vec(),
            lambda: 0.0,
            was_active: false,
        });
    }
    let mut lambda = -inner / gg;
    let mut corrected = combine(mutation, grad, lambda);
    let mut nudge = 1.0;
    for _ in 0..64 {
        let residual = dot_unchecked(&corrected, grad);
        if residual >= 0.0 {
            break;
        }
        nudge *= 2.0;
        lambda += nudge * (-residual) / gg;
        corrected = combine(mutation, grad, lambda);
    }
    Ok(QpResult {
        corrected,
        lambda,
        was_active: lambda > 0.0,
    })
}

fn combine(mutation: &[f64], grad: &[f64], lambda: f64) -> Vec<f64> {
    mutation.iter().zip(grad).map(|(m, g)| m + lambda * g).collect()
}

/// A mutated model plus QP bookkeeping.
#[derive(Clone, Debug)]
pub struct MutationOutcome {
    pub params: LayeredParams,
    /// Layers for which the QP correction was attempted.
    pub qp_applied: usize,
    /// Layers whose constraint was binding (`lambda > 0`).
    pub qp_activations: usize,
}

/// Builds one mutated model `base + corrected_mutation`.
///
/// Per layer, in order: draw the raw mutation from `grad`, draw
/// `u ~ U[0, 1)`, and apply [`qp_correct`] when `u < p`. With
/// [`ConstraintScope::WholeModel`] a single draw decides for the
/// concatenated model, and an active correction counts every layer.
pub fn mutate_model(
    global: &LayeredParams,
    grad: &LayeredParams,
    base: &LayeredParams,
    cfg: &MutationConfig,
    rng: &mut RandomSource,
) -> Result<MutationOutcome> {
    cfg.validate()?;
    global.check_compatible(grad)?;
    global.check_compatible(base)?;

    let raw: Vec<Vec<f64>> = grad
        .layers()
        .iter()
        .map(|l| generate_raw_mutation(&l.data, cfg, rng))
        .collect();

    let mut qp_applied = 0;
    let mut qp_activations = 0;
    let corrected: Vec<Vec<f64>> = match cfg.scope {
        ConstraintScope::PerLayer => raw
            .into_iter()
            .zip(grad.layers())
            .map(|(m, g)| {
                if rng.random::<f64>() < cfg.qp_probability {
                    qp_applied += 1;
                    let res = qp_correct(&m, &g.data, cfg.degenerate_eps)?;
                    qp_activations += usize::from(res.was_active);
                    Ok(res.corrected)
                } else {
                    Ok(m)
                }
            })
            .collect::<Result<_>>()?,
        ConstraintScope::WholeModel => {
            if rng.random::<f64>() < cfg.qp_probability {
                qp_applied = grad.len();
                let flat_m: Vec<f64> = raw.concat();
                let flat_g: Vec<f64> = grad.layers().iter().flat_map(|l| l.data.iter().copied()).collect();
                let res = qp_correct(&flat_m, &flat_g, cfg.degenerate_eps)?;
                if res.was_active {
                    qp_activations = grad.len();
                }
                let mut out = Vec::with_capacity(raw.len());
                let mut offset = 0;
                for m in &raw {
                    out.push(res.corrected[offset..offset + m.len()].to_vec());
                    offset += m.len();
                }
                out
            } else {
                raw
            }
        }
    };

    let mut params = base.clone();
    for (layer, m) in params.layers_mut().iter_mut().zip(&corrected) {
        for (w, d) in layer.data.iter_mut().zip(m) {
            *w += d;
        }
    }
    Ok(MutationOutcome {
        params,
        qp_applied,
        qp_activations,
    })
}
