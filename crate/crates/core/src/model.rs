//! Small differentiable classifiers trained with mini-batch SGD.
//!
//! Parameter layout (all matrices row-major, `rows x cols`):
//!
//! | architecture | layers |
//! |---|---|
//! | `logreg` | `W` (`input_dim x num_classes`), `b` (`num_classes`) |
//! | `mlp` | `W1` (`input_dim x hidden_dim`), `b1`, `W2` (`hidden_dim x num_classes`), `b2` |
//!
//! The MLP uses a ReLU hidden layer. Weights are initialised from
//! `N(0, 1/fan_in)`, biases are zero.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::params::{Layer, LayeredParams};
use crate::rng::RandomSource;

/// A batch is any labelled sample set; local mini-batches are gathered subsets.
pub type Batch = Dataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Logreg,
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.5,
            batch_size: 50,
            local_epochs: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config("engine.train.learning_rate", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("engine.train.momentum", "must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("engine.train.batch_size", "must be >= 1"));
        }
        if self.local_epochs == 0 {
            return Err(Error::config("engine.train.local_epochs", "must be >= 1"));
        }
        Ok(())
    }
}

/// Result of one client's local training.
#[derive(Clone, Debug)]
pub struct LocalUpdate {
    pub params: LayeredParams,
    /// Mean mini-batch loss over every step taken, measured before each update.
    pub mean_loss: f64,
}

struct Activations {
    /// Pre-activation of the hidden layer (mlp only), `n x hidden`.
    hidden_pre: Vec<f64>,
    /// `n x num_classes`.
    logits: Vec<f64>,
}

impl ModelSpec {
    pub fn logreg(input_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            architecture: Architecture::Logreg,
            input_dim,
            hidden_dim: 0,
            num_classes,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            architecture: Architecture::Mlp,
            input_dim,
            hidden_dim,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("model spec", "input_dim must be >= 1"));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("model spec", "num_classes must be >= 2"));
        }
        if self.architecture == Architecture::Mlp && self.hidden_dim == 0 {
            return Err(Error::invalid("model spec", "hidden_dim must be >= 1 for mlp"));
        }
        Ok(())
    }

    /// `(name, length)` of every layer, in order.
    pub fn layout(&self) -> Vec<(&'static str, usize)> {
        let (d, h, c) = (self.input_dim, self.hidden_dim, self.num_classes);
        match self.architecture {
            Architecture::Logreg => vec![("W", d * c), ("b", c)],
            Architecture::Mlp => vec![("W1", d * h), ("b1", h), ("W2", h * c), ("b2", c)],
        }
    }

    pub fn num_params(&self) -> usize {
        self.layout().iter().map(|(_, n)| n).sum()
    }

    pub fn init_params(&self, rng: &mut RandomSource) -> Result<LayeredParams> {
        self.validate()?;
        let fan_in = |name: &str| match name {
            "W" | "W1" => self.input_dim,
            _ => self.hidden_dim,
        };
        let layers = self
            .layout()
            .into_iter()
            .map(|(name, len)| {
                let data = if name.starts_with('W') {
                    let scale = 1.0 / (fan_in(name) as f64).sqrt();
                    (0..len)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(rng);
                            scale * z
                        })
                        .collect::<Vec<f64>>()
                } else {
                    vec![0.0; len]
                };
                Layer::new(name, data)
            })
            .collect();
        LayeredParams::new(layers)
    }

    fn check(&self, params: &LayeredParams, batch: &Batch) -> Result<()> {
        let layout = self.layout();
        if params.len() != layout.len() {
            return Err(Error::ShapeMismatch {
                layer: layout[0].0.to_string(),
                detail: format!("expected {} layers, got {}", layout.len(), params.len()),
            });
        }
        for ((name, len), layer) in layout.iter().zip(params.layers()) {
            if layer.name != *name || layer.data.len() != *len {
                return Err(Error::ShapeMismatch {
                    layer: name.to_string(),
                    detail: format!(
                        "got `{}` of length {}, expected length {len}",
                        layer.name,
                        layer.data.len()
                    ),
                });
            }
        }
        if batch.input_dim() != self.input_dim {
            return Err(Error::invalid(
                "batch",
                format!(
                    "input_dim {} does not match model input_dim {}",
                    batch.input_dim(),
                    self.input_dim
                ),
            ));
        }
        if batch.is_empty() {
            return Err(Error::invalid("batch", "empty batch"));
        }
        if let Some(&bad) = batch.labels().iter().find(|&&y| y >= self.num_classes) {
            return Err(Error::invalid(
                "batch",
                format!("label {bad} out of range for {} classes", self.num_classes),
            ));
        }
        Ok(())
    }

    fn forward(&self, params: &LayeredParams, batch: &Batch) -> Activations {
        let n = batch.len();
        let c = self.num_classes;
        let p = params.layers();
        match self.architecture {
            Architecture::Logreg => {
                let logits = affine(batch.features(), n, self.input_dim, &p[0].data, &p[1].data, c);
                Activations {
                    hidden_pre: Vec::new(),
                    logits,
                }
            }
            Architecture::Mlp => {
                let h = self.hidden_dim;
                let hidden_pre = affine(batch.features(), n, self.input_dim, &p[0].data, &p[1].data, h);
                let hidden: Vec<f64> = hidden_pre.iter().map(|&v| v.max(0.0)).collect();
                let logits = affine(&hidden, n, h, &p[2].data, &p[3].data, c);
                Activations { hidden_pre, logits }
            }
        }
    }

    /// Mean softmax cross-entropy and the `n x num_classes` logits.
    pub fn forward_loss(&self, params: &LayeredParams, batch: &Batch) -> Result<(f64, Vec<f64>)> {
        self.check(params, batch)?;
        let acts = self.forward(params, batch);
        let loss = mean_cross_entropy(&acts.logits, batch.labels(), self.num_classes);
        Ok((loss, acts.logits))
    }

    /// Gradient of [`forward_loss`](Self::forward_loss) with respect to `params`.
    pub fn backward(&self, params: &LayeredParams, batch: &Batch) -> Result<LayeredParams> {
        self.check(params, batch)?;
        Ok(self.loss_and_grad(params, batch).1)
    }

    fn loss_and_grad(&self, params: &LayeredParams, batch: &Batch) -> (f64, LayeredParams) {
        let n = batch.len();
        let c = self.num_classes;
        let acts = self.forward(params, batch);
        let loss = mean_cross_entropy(&acts.logits, batch.labels(), c);

        // d loss / d logits = (softmax - onehot) / n
        let mut dlogits = acts.logits;
        let inv_n = 1.0 / n as f64;
        for (row, &y) in dlogits.chunks_exact_mut(c).zip(batch.labels()) {
            softmax_in_place(row);
            row[y] -= 1.0;
            for v in row.iter_mut() {
                *v *= inv_n;
            }
        }

        let mut grad = params.zeros_like();
        let p = params.layers();
        match self.architecture {
            Architecture::Logreg => {
                let g = grad.layers_mut();
                let (gw, gb) = g.split_at_mut(1);
                affine_backward(
                    batch.features(),
                    n,
                    self.input_dim,
                    &dlogits,
                    c,
                    &mut gw[0].data,
                    &mut gb[0].data,
                );
            }
            Architecture::Mlp => {
                let h = self.hidden_dim;
                let hidden: Vec<f64> = acts.hidden_pre.iter().map(|&v| v.max(0.0)).collect();
                let g = grad.layers_mut();
                let (first, second) = g.split_at_mut(2);
                let (gw2, gb2) = second.split_at_mut(1);
                affine_backward(&hidden, n, h, &dlogits, c, &mut gw2[0].data, &mut gb2[0].data);

                let w2 = &p[2].data;
                let mut dpre = vec![0.0; n * h];
                for s in 0..n {
                    let drow = &dlogits[s * c..(s + 1) * c];
                    for j in 0..h {
                        if acts.hidden_pre[s * h + j] > 0.0 {
                            let wrow = &w2[j * c..(j + 1) * c];
                            let mut acc = 0.0;
                            for k in 0..c {
                                acc += wrow[k] * drow[k];
                            }
                            dpre[s * h + j] = acc;
                        }
                    }
                }
                let (gw1, gb1) = first.split_at_mut(1);
                affine_backward(
                    batch.features(),
                    n,
                    self.input_dim,
                    &dpre,
                    h,
                    &mut gw1[0].data,
                    &mut gb1[0].data,
                );
            }
        }
        (loss, grad)
    }

    /// Local SGD with momentum over `cfg.local_epochs` shuffled passes.
    ///
    /// The momentum buffer starts at zero on every call. The update is
    /// `v <- momentum * v + g; w <- w - lr * v`.
    pub fn local_train(
        &self,
        params: &LayeredParams,
        data: &Dataset,
        cfg: &TrainConfig,
        rng: &mut RandomSource,
    ) -> Result<LocalUpdate> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::invalid("client dataset", "empty dataset"));
        }
        self.check(params, data)?;

        let mut w = params.clone();
        let mut velocity = params.zeros_like();
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for _ in 0..cfg.local_epochs {
            order.shuffle(rng);
            for chunk in order.chunks(cfg.batch_size) {
                let batch = data.subset(chunk);
                let (loss, grad) = self.loss_and_grad(&w, &batch);
                loss_sum += loss;
                steps += 1;
                for ((wl, vl), gl) in w.layers_mut().iter_mut().zip(velocity.layers_mut()).zip(grad.layers()) {
                    for ((wv, vv), gv) in wl.data.iter_mut().zip(vl.data.iter_mut()).zip(&gl.data) {
                        *vv = cfg.momentum * *vv + gv;
                        *wv -= cfg.learning_rate * *vv;
                    }
                }
            }
        }
        Ok(LocalUpdate {
            params: w,
            mean_loss: loss_sum / steps as f64,
        })
    }

    /// Predicted class per sample; ties go to the lowest class index.
    pub fn predict(&self, params: &LayeredParams, batch: &Batch) -> Result<Vec<usize>> {
        self.check(params, batch)?;
        let logits = self.forward(params, batch).logits;
        Ok(logits.chunks_exact(self.num_classes).map(argmax).collect())
    }

    /// Fraction of samples whose argmax prediction equals the label.
    pub fn evaluate(&self, params: &LayeredParams, test_set: &Batch) -> Result<f64> {
        if test_set.is_empty() {
            return Err(Error::invalid("test set", "empty test set"));
        }
        let preds = self.predict(params, test_set)?;
        let correct = preds.iter().zip(test_set.labels()).filter(|(p, y)| p == y).count();
        Ok(correct as f64 / test_set.len() as f64)
    }
}

/// `x (n x d) * W (d x m) + b`, accumulating over `d` in order.
fn affine(x: &[f64], n: usize, d: usize, w: &[f64], b: &[f64], m: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * m);
    for s in 0..n {
        let xrow = &x[s * d..(s + 1) * d];
        let start = out.len();
        out.extend_from_slice(b);
        let orow = &mut out[start..];
        for (i, &xi) in xrow.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let wrow = &w[i * m..(i + 1) * m];
            for k in 0..m {
                orow[k] += xi * wrow[k];
            }
        }
    }
    out
}

/// Accumulates `dW += x^T * dy` and `db += sum_rows(dy)`.
fn affine_backward(x: &[f64], n: usize, d: usize, dy: &[f64], m: usize, dw: &mut [f64], db: &mut [f64]) {
    for s in 0..n {
        let xrow = &x[s * d..(s + 1) * d];
        let drow = &dy[s * m..(s + 1) * m];
        for (i, &xi) in xrow.iter().enumerate() {
            let gw = &mut dw[i * m..(i + 1) * m];
            for k in 0..m {
                gw[k] += xi * drow[k];
            }
        }
        for k in 0..m {
            db[k] += drow[k];
        }
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn mean_cross_entropy(logits: &[f64], labels: &[usize], c: usize) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.chunks_exact(c).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &v in row {
            sum += (v - max).exp();
        }
        total += max + sum.ln() - row[y];
    }
    total / labels.len() as f64
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;

    fn toy_batch(rng: &mut RandomSource, n: usize, d: usize, c: usize) -> Dataset {
        use rand::Rng;
        let features: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        Dataset::new(features, labels, d, c).unwrap()
    }

    /// Plain per-sample cross-entropy oracle over explicit loops.
    fn loss_oracle(spec: &ModelSpec, params: &LayeredParams, batch: &Dataset) -> f64 {
        let p = params.layers();
        let mut total = 0.0;
        for s in 0..batch.len() {
            let x = batch.row(s);
            let logits: Vec<f64> = match spec.architecture {
                Architecture::Logreg => (0..spec.num_classes)
                    .map(|k| {
                        p[1].data[k]
                            + (0..spec.input_dim)
                                .map(|i| x[i] * p[0].data[i * spec.num_classes + k])
                                .sum::<f64>()
                    })
                    .collect(),
                Architecture::Mlp => {
                    let h: Vec<f64> = (0..spec.hidden_dim)
                        .map(|j| {
                            (p[1].data[j]
                                + (0..spec.input_dim)
                                    .map(|i| x[i] * p[0].data[i * spec.hidden_dim + j])
                                    .sum::<f64>())
                            .max(0.0)
                        })
                        .collect();
                    (0..spec.num_classes)
                        .map(|k| {
                            p[3].data[k]
                                + (0..spec.hidden_dim)
                                    .map(|j| h[j] * p[2].data[j * spec.num_classes + k])
                                    .sum::<f64>()
                        })
                        .collect()
                }
            };
            let z: f64 = logits.iter().map(|v| v.exp()).sum();
            total += -(logits[batch.labels()[s]].exp() / z).ln();
        }
        total / batch.len() as f64
    }

    #[test]
    fn layouts() {
        let p = ModelSpec::logreg(4, 3)
            .init_params(&mut RandomSource::new(1, "init"))
            .unwrap();
        let shapes: Vec<(String, usize)> = p.layers().iter().map(|l| (l.name.clone(), l.data.len())).collect();
        assert_eq!(shapes, vec![("W".into(), 12), ("b".into(), 3)]);
        assert!(p.layer("b").unwrap().iter().all(|&v| v == 0.0));

        let p = ModelSpec::mlp(4, 8, 3)
            .init_params(&mut RandomSource::new(1, "init"))
            .unwrap();
        let shapes: Vec<(String, usize)> = p.layers().iter().map(|l| (l.name.clone(), l.data.len())).collect();
        assert_eq!(
            shapes,
            vec![("W1".into(), 32), ("b1".into(), 8), ("W2".into(), 24), ("b2".into(), 3)]
        );
    }

    #[test]
    fn init_is_deterministic() {
        let spec = ModelSpec::mlp(5, 4, 3);
        let a = spec.init_params(&mut RandomSource::new(9, "init")).unwrap();
        let b = spec.init_params(&mut RandomSource::new(9, "init")).unwrap();
        assert_eq!(a, b);
        let c = spec.init_params(&mut RandomSource::new(10, "init")).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_params_give_log_c_loss() {
        let spec = ModelSpec::logreg(3, 4);
        let mut rng = RandomSource::new(3, "t");
        let batch = toy_batch(&mut rng, 17, 3, 4);
        let params = spec.init_params(&mut rng).unwrap().zeros_like();
        let (loss, _) = spec.forward_loss(&params, &batch).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn confident_correct_logits_give_near_zero_loss() {
        let spec = ModelSpec::logreg(1, 2);
        let batch = Dataset::new(vec![1.0], vec![1], 1, 2).unwrap();
        let params = LayeredParams::from_pairs([("W", vec![-50.0, 50.0]), ("b", vec![0.0, 0.0])]).unwrap();
        let (loss, _) = spec.forward_loss(&params, &batch).unwrap();
        assert!((0.0..1e-40).contains(&loss));
    }

    #[test]
    fn loss_matches_scalar_oracle() {
        let mut rng = RandomSource::new(11, "oracle");
        for spec in [ModelSpec::logreg(5, 3), ModelSpec::mlp(5, 6, 4)] {
            for _ in 0..3 {
                let params = spec.init_params(&mut rng).unwrap();
                let batch = toy_batch(&mut rng, 13, 5, spec.num_classes);
                let (loss, _) = spec.forward_loss(&params, &batch).unwrap();
                assert!((loss - loss_oracle(&spec, &params, &batch)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn label_out_of_range_rejected() {
        let spec = ModelSpec::logreg(2, 2);
        let params = spec.init_params(&mut RandomSource::new(0, "i")).unwrap();
        let bad = Dataset::new(vec![0.0, 1.0], vec![2], 2, 3).unwrap();
        assert!(matches!(spec.forward_loss(&params, &bad), Err(Error::Invalid { .. })));
        assert!(spec.backward(&params, &bad).is_err());
    }

    fn fd_max_rel_error(spec: &ModelSpec, params: &LayeredParams, batch: &Dataset) -> f64 {
        let h = 1e-5;
        let grad = spec.backward(params, batch).unwrap();
        let mut worst: f64 = 0.0;
        for (li, layer) in params.layers().iter().enumerate() {
            for i in 0..layer.data.len() {
                let mut plus = params.clone();
                plus.layers_mut()[li].data[i] += h;
                let mut minus = params.clone();
                minus.layers_mut()[li].data[i] -= h;
                let fd = (spec.forward_loss(&plus, batch).unwrap().0 - spec.forward_loss(&minus, batch).unwrap().0)
                    / (2.0 * h);
                let an = grad.layers()[li].data[i];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn ten_parameter_logreg_gradient_check() {
        // 4 inputs x 2 classes + 2 biases = 10 parameters
        let spec = ModelSpec::logreg(4, 2);
        let mut rng = RandomSource::new(5, "fd");
        let mut params = spec.init_params(&mut rng).unwrap();
        params.layers_mut()[1].data = vec![0.3, -0.2];
        let batch = toy_batch(&mut rng, 9, 4, 2);
        assert_eq!(params.num_params(), 10);
        assert!(fd_max_rel_error(&spec, &params, &batch) < 1e-5);
    }

    #[test]
    fn zero_features_zero_weight_gradient() {
        let spec = ModelSpec::logreg(3, 3);
        let mut rng = RandomSource::new(8, "z");
        let mut params = spec.init_params(&mut rng).unwrap();
        params.layers_mut()[1].data = vec![0.5, -1.0, 0.25];
        let batch = Dataset::new(vec![0.0; 6], vec![0, 2], 3, 3).unwrap();
        let grad = spec.backward(&params, &batch).unwrap();
        assert!(grad.layer("W").unwrap().iter().all(|&g| g == 0.0));
        // bias gradient is the mean softmax residual
        let mut probs = params.layer("b").unwrap().to_vec();
        softmax_in_place(&mut probs);
        let want: Vec<f64> = (0..3)
            .map(|k| probs[k] - 0.5 * ((k == 0) as u8 as f64 + (k == 2) as u8 as f64))
            .collect();
        for (g, w) in grad.layer("b").unwrap().iter().zip(&want) {
            assert!((g - w).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_vanishes_after_convergence() {
        // Two separable points; long training drives the gradient to zero.
        let spec = ModelSpec::logreg(1, 2);
        let data = Dataset::new(vec![-1.0, 1.0], vec![0, 1], 1, 2).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1.0,
            momentum: 0.5,
            batch_size: 2,
            local_epochs: 20_000,
        };
        let mut rng = RandomSource::new(0, "conv");
        let init = spec.init_params(&mut rng).unwrap();
        let trained = spec.local_train(&init, &data, &cfg, &mut rng).unwrap().params;
        let grad = spec.backward(&trained, &data).unwrap();
        assert!(grad.norm() < 1e-3, "grad norm {}", grad.norm());
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let spec = ModelSpec::mlp(3, 4, 2);
        let mut rng = RandomSource::new(1, "lr0");
        let params = spec.init_params(&mut rng).unwrap();
        let data = toy_batch(&mut rng, 30, 3, 2);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let out = spec.local_train(&params, &data, &cfg, &mut rng).unwrap();
        assert_eq!(out.params, params);
    }

    #[test]
    fn single_step_matches_sgd_identity() {
        let spec = ModelSpec::logreg(3, 3);
        let mut rng = RandomSource::new(2, "one");
        let params = spec.init_params(&mut rng).unwrap();
        let data = toy_batch(&mut rng, 10, 3, 3);
        let cfg = TrainConfig {
            learning_rate: 0.1,
            momentum: 0.0,
            batch_size: 10,
            local_epochs: 1,
        };
        let out = spec.local_train(&params, &data, &cfg, &mut rng).unwrap();
        let grad = spec.backward(&params, &data).unwrap();
        let want = crate::params::axpy(-0.1, &grad, &params).unwrap();
        for (a, b) in out.params.layers().iter().zip(want.layers()) {
            for (x, y) in a.data.iter().zip(&b.data) {
                // batch order differs, so gradients agree up to summation order
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn local_train_deterministic_and_input_untouched() {
        let spec = ModelSpec::mlp(3, 5, 3);
        let mut rng = RandomSource::new(4, "det");
        let params = spec.init_params(&mut rng).unwrap();
        let snapshot = params.clone();
        let data = toy_batch(&mut rng, 120, 3, 3);
        let cfg = TrainConfig::default();
        let a = spec
            .local_train(&params, &data, &cfg, &mut RandomSource::new(4, "client"))
            .unwrap();
        let b = spec
            .local_train(&params, &data, &cfg, &mut RandomSource::new(4, "client"))
            .unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.mean_loss.to_bits(), b.mean_loss.to_bits());
        assert_eq!(params, snapshot);
        assert_ne!(a.params, params);
    }

    #[test]
    fn empty_inputs_rejected() {
        let spec = ModelSpec::logreg(2, 2);
        let params = spec.init_params(&mut RandomSource::new(0, "i")).unwrap();
        let empty = Dataset::new(vec![], vec![], 2, 2).unwrap();
        assert!(spec
            .local_train(&params, &empty, &TrainConfig::default(), &mut RandomSource::new(0, "x"))
            .is_err());
        assert!(spec.evaluate(&params, &empty).is_err());
    }

    #[test]
    fn evaluate_ties_and_perfect_separator() {
        let spec = ModelSpec::logreg(2, 2);
        let data = Dataset::new(vec![1.0, 0.0, -1.0, 0.0, 2.0, 1.0, -3.0, 1.0], vec![1, 0, 1, 0], 2, 2).unwrap();
        let sep = LayeredParams::from_pairs([("W", vec![-1.0, 1.0, 0.0, 0.0]), ("b", vec![0.0, 0.0])]).unwrap();
        assert_eq!(spec.evaluate(&sep, &data).unwrap(), 1.0);

        let single = data.subset(&[0]);
        assert_eq!(spec.evaluate(&sep, &single).unwrap(), 1.0);

        let zero = sep.zeros_like();
        assert_eq!(spec.predict(&zero, &data).unwrap(), vec![0, 0, 0, 0]);
    }
}
