//! Multinomial logistic regression and a one-hidden-layer ReLU MLP trained
//! with mini-batch SGD on softmax cross-entropy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, LearningError, LossReport};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Architecture {
    Logistic,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ModelShape {
    pub dims: usize,
    pub classes: usize,
    pub architecture: Architecture,
}

impl ModelShape {
    pub fn param_count(&self) -> usize {
        match self.architecture {
            Architecture::Logistic => self.classes * self.dims + self.classes,
            Architecture::Mlp { hidden } => hidden * self.dims + hidden + self.classes * hidden + self.classes,
        }
    }
}

/// Flat parameter vector. Layout: logistic is `W (C x d)` then `b (C)`; the
/// MLP is `W1 (H x d)`, `b1 (H)`, `W2 (C x H)`, `b2 (C)`, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub values: Vec<f64>,
    pub shape: ModelShape,
}

impl ModelParams {
    pub fn zeros(shape: ModelShape) -> Self {
        ModelParams { values: vec![0.0; shape.param_count()], shape }
    }

    /// Logistic models start at zero. MLP weights are uniform in
    /// `+-sqrt(6 / fan_in)`, biases zero.
    pub fn init(shape: ModelShape, seed: u64) -> Self {
        let mut model = Self::zeros(shape);
        if let Architecture::Mlp { hidden } = shape.architecture {
            let mut rng = rng::stream(seed, 0, 0, Purpose::ModelInit);
            let d = shape.dims;
            let c = shape.classes;
            let a1 = (6.0 / d as f64).sqrt();
            let a2 = (6.0 / hidden as f64).sqrt();
            let (w1, rest) = model.values.split_at_mut(hidden * d);
            w1.iter_mut().for_each(|w| *w = rng.random_range(-a1..a1));
            let w2 = &mut rest[hidden..hidden + c * hidden];
            w2.iter_mut().for_each(|w| *w = rng.random_range(-a2..a2));
        }
        model
    }

    fn check_data(&self, data: &Dataset) -> Result<(), LearningError> {
        if data.dims() != self.shape.dims || data.classes() > self.shape.classes {
            return Err(LearningError::ShapeMismatch(format!(
                "model expects {} features / {} classes, data has {} / {}",
                self.shape.dims,
                self.shape.classes,
                data.dims(),
                data.classes()
            )));
        }
        Ok(())
    }

    /// Writes class logits for `x` into `logits`; `hidden` receives the
    /// post-ReLU activations for the MLP.
    fn forward(&self, x: &[f64], hidden: &mut [f64], logits: &mut [f64]) {
        let d = self.shape.dims;
        let c = self.shape.classes;
        let p = &self.values;
        match self.shape.architecture {
            Architecture::Logistic => {
                let (w, b) = p.split_at(c * d);
                for k in 0..c {
                    logits[k] = b[k] + dot(&w[k * d..(k + 1) * d], x);
                }
            }
            Architecture::Mlp { hidden: nh } => {
                let (w1, rest) = p.split_at(nh * d);
                let (b1, rest) = rest.split_at(nh);
                let (w2, b2) = rest.split_at(c * nh);
                for j in 0..nh {
                    hidden[j] = (b1[j] + dot(&w1[j * d..(j + 1) * d], x)).max(0.0);
                }
                for k in 0..c {
                    logits[k] = b2[k] + dot(&w2[k * nh..(k + 1) * nh], hidden);
                }
            }
        }
    }

    fn hidden_width(&self) -> usize {
        match self.shape.architecture {
            Architecture::Logistic => 0,
            Architecture::Mlp { hidden } => hidden,
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut hidden = vec![0.0; self.hidden_width()];
        let mut logits = vec![0.0; self.shape.classes];
        self.forward(x, &mut hidden, &mut logits);
        logits
    }

    /// Cross-entropy of each listed sample.
    pub fn per_sample_losses(&self, data: &Dataset, indices: &[usize]) -> Result<Vec<f64>, LearningError> {
        self.check_data(data)?;
        let mut hidden = vec![0.0; self.hidden_width()];
        let mut logits = vec![0.0; self.shape.classes];
        Ok(indices
            .iter()
            .map(|&i| {
                let (x, y) = data.sample(i);
                self.forward(x, &mut hidden, &mut logits);
                cross_entropy(&logits, y)
            })
            .collect())
    }

    pub fn loss_report(&self, data: &Dataset, indices: &[usize]) -> Result<LossReport, LearningError> {
        Ok(LossReport::from_losses(self.per_sample_losses(data, indices)?))
    }

    /// Mean cross-entropy over `batch` and its gradient.
    pub fn loss_and_grad(&self, data: &Dataset, batch: &[usize]) -> Result<(f64, Vec<f64>), LearningError> {
        self.check_data(data)?;
        let d = self.shape.dims;
        let c = self.shape.classes;
        let nh = self.hidden_width();
        let mut grad = vec![0.0; self.values.len()];
        let mut hidden = vec![0.0; nh];
        let mut logits = vec![0.0; c];
        let mut dz = vec![0.0; c];
        let mut dh = vec![0.0; nh];
        let mut total = 0.0;
        let scale = 1.0 / batch.len() as f64;

        for &i in batch {
            let (x, y) = data.sample(i);
            self.forward(x, &mut hidden, &mut logits);
            total += cross_entropy(&logits, y);
            softmax_into(&logits, &mut dz);
            dz[y] -= 1.0;
            dz.iter_mut().for_each(|g| *g *= scale);

            match self.shape.architecture {
                Architecture::Logistic => {
                    let (gw, gb) = grad.split_at_mut(c * d);
                    for k in 0..c {
                        axpy(dz[k], x, &mut gw[k * d..(k + 1) * d]);
                        gb[k] += dz[k];
                    }
                }
                Architecture::Mlp { .. } => {
                    let w2 = &self.values[nh * d + nh..nh * d + nh + c * nh];
                    let (gw1, rest) = grad.split_at_mut(nh * d);
                    let (gb1, rest) = rest.split_at_mut(nh);
                    let (gw2, gb2) = rest.split_at_mut(c * nh);
                    dh.iter_mut().for_each(|v| *v = 0.0);
                    for k in 0..c {
                        axpy(dz[k], &hidden, &mut gw2[k * nh..(k + 1) * nh]);
                        gb2[k] += dz[k];
                        axpy(dz[k], &w2[k * nh..(k + 1) * nh], &mut dh);
                    }
                    for j in 0..nh {
                        // ReLU gate; hidden[j] is post-activation
                        if hidden[j] > 0.0 {
                            axpy(dh[j], x, &mut gw1[j * d..(j + 1) * d]);
                            gb1[j] += dh[j];
                        }
                    }
                }
            }
        }
        Ok((total * scale, grad))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - m).exp();
        s += *o;
    }
    out.iter_mut().for_each(|o| *o /= s);
}

fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    (lse - logits[label]).max(0.0)
}

/// `h` SGD steps on batches drawn with replacement from `indices`, using the
/// caller's stream. Two consecutive calls on one stream equal a single call
/// with the summed step count.
pub fn local_train_with_rng<R: Rng + ?Sized>(
    model: &ModelParams,
    data: &Dataset,
    indices: &[usize],
    h: u32,
    batch_size: usize,
    lr: f64,
    rng: &mut R,
) -> Result<(ModelParams, LossReport), LearningError> {
    if h == 0 || batch_size == 0 || indices.is_empty() || !(lr.is_finite() && lr >= 0.0) {
        return Err(LearningError::InvalidArgument(format!(
            "local_train needs h >= 1, batch_size >= 1, non-empty data and finite lr >= 0 (h={h}, batch={batch_size}, n={}, lr={lr})",
            indices.len()
        )));
    }
    let mut current = model.clone();
    let mut batch = vec![0usize; batch_size];
    for step in 0..h {
        for b in batch.iter_mut() {
            *b = indices[rng.random_range(0..indices.len())];
        }
        let (loss, grad) = current.loss_and_grad(data, &batch)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(LearningError::Divergence { step, loss });
        }
        axpy(-lr, &grad, &mut current.values);
        if current.values.iter().any(|v| !v.is_finite()) {
            return Err(LearningError::Divergence { step, loss: f64::NAN });
        }
    }
    let report = current.loss_report(data, indices)?;
    if !report.mean_loss.is_finite() {
        return Err(LearningError::Divergence { step: h, loss: report.mean_loss });
    }
    Ok((current, report))
}

pub fn local_train(
    model: &ModelParams,
    data: &Dataset,
    indices: &[usize],
    h: u32,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<(ModelParams, LossReport), LearningError> {
    let mut rng = rng::stream(seed, 0, 0, Purpose::LocalTrain);
    local_train_with_rng(model, data, indices, h, batch_size, lr, &mut rng)
}

/// `(accuracy, mean_loss)` over the whole dataset. Exact logit ties go to the
/// lowest class index.
pub fn evaluate(model: &ModelParams, data: &Dataset) -> Result<(f64, f64), LearningError> {
    model.check_data(data)?;
    let mut hidden = vec![0.0; model.hidden_width()];
    let mut logits = vec![0.0; model.shape.classes];
    let mut correct = 0usize;
    let mut losses = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let (x, y) = data.sample(i);
        model.forward(x, &mut hidden, &mut logits);
        if argmax(&logits) == y {
            correct += 1;
        }
        losses.push(cross_entropy(&logits, y));
    }
    Ok((correct as f64 / data.len() as f64, pairwise_sum(&losses) / data.len() as f64))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &z) in v.iter().enumerate().skip(1) {
        if z > v[best] {
            best = k;
        }
    }
    best
}

pub(crate) fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// FedAvg: element-wise mean weighted by local sample counts.
pub fn aggregate(updates: &[(&ModelParams, f64)]) -> Result<ModelParams, LearningError> {
    let (first, _) = updates.first().ok_or_else(|| LearningError::Aggregation("no updates to aggregate".into()))?;
    for (m, w) in updates {
        if m.shape != first.shape || m.values.len() != first.values.len() {
            return Err(LearningError::Aggregation(format!("shape mismatch: {:?} vs {:?}", m.shape, first.shape)));
        }
        if !(w.is_finite() && *w > 0.0) {
            return Err(LearningError::Aggregation(format!("weight {w} must be positive")));
        }
    }
    let weights: Vec<f64> = updates.iter().map(|(_, w)| *w).collect();
    let total = pairwise_sum(&weights);
    let mut terms = vec![0.0; updates.len()];
    let values = (0..first.values.len())
        .map(|j| {
            for (t, (m, w)) in terms.iter_mut().zip(updates) {
                *t = m.values[j] * (w / total);
            }
            pairwise_sum(&terms)
        })
        .collect();
    Ok(ModelParams { values, shape: first.shape })
}
