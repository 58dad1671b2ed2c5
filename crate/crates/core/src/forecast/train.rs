//! Mini-batch gradient descent, masked loss and finite-difference checks.

use serde::{Deserialize, Serialize};

use super::{EncodedSample, Network};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

const STREAM_SHUFFLE: u64 = 0x5348_5546;
const STREAM_GRADCHECK: u64 = 0x4752_4144;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// Global gradient norm limit.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.batch_size > 0
            && self.max_epochs > 0
            && self.patience > 0
            && self.clip_norm > 0.0;
        if !ok {
            return Err(Error::invalid(format!(
                "training settings must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Running RMSE over the epoch's batches, normalized units.
    pub train_rmse: f64,
    pub val_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub best_val_rmse: f64,
}

/// Mean squared error over present targets.
pub fn masked_mse(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<f64> {
    if pred.len() != target.len() || mask.len() != target.len() {
        return Err(Error::shape("prediction, target and mask lengths differ"));
    }
    let (sum, n) = pred
        .iter()
        .zip(target)
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(sum, n), ((p, t), _)| {
            (sum + (p - t) * (p - t), n + 1)
        });
    if n == 0 {
        return Err(Error::EmptySelection("no present targets"));
    }
    Ok(sum / n as f64)
}

/// Pooled RMSE over every present target of `samples`, normalized units.
pub fn evaluate_rmse(net: &Network, samples: &[EncodedSample]) -> Result<f64> {
    let mut sse = 0.0;
    let mut n = 0usize;
    for sample in samples {
        let out = net.forward(&sample.x)?;
        for ((o, y), &m) in out.iter().zip(&sample.y).zip(&sample.mask) {
            if m {
                sse += (o - y) * (o - y);
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptySelection("no present targets"));
    }
    Ok((sse / n as f64).sqrt())
}

/// Train with plain clipped SGD and early stopping on validation RMSE.
/// Returns the parameters of the best validation epoch.
pub fn train(
    mut net: Network,
    train_set: &[EncodedSample],
    val_set: &[EncodedSample],
    cfg: &TrainConfig,
) -> Result<(Network, History)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptySelection(
            "training and validation sets must be non-empty",
        ));
    }
    let mut best = net.clone();
    let mut best_val = evaluate_rmse(&net, val_set)?;
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut grad = vec![0.0; net.params().len()];
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut since_best = 0;

    for epoch in 1..=cfg.max_epochs {
        SplitMix64::derive(cfg.seed ^ STREAM_SHUFFLE, epoch as u64).shuffle(&mut order);
        let mut epoch_sse = 0.0;
        let mut epoch_n = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let n: usize = batch
                .iter()
                .map(|&i| train_set[i].mask.iter().filter(|&&m| m).count())
                .sum();
            if n == 0 {
                continue;
            }
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / n as f64;
            let mut sse = 0.0;
            for &i in batch {
                sse += net.sse_gradient(&train_set[i], scale, &mut grad)?;
            }
            let loss = sse / n as f64;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            epoch_sse += sse;
            epoch_n += n;
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            let step = if norm > cfg.clip_norm {
                cfg.learning_rate * cfg.clip_norm / norm
            } else {
                cfg.learning_rate
            };
            for (p, g) in net.params_mut().iter_mut().zip(&grad) {
                *p -= step * g;
            }
        }
        let val_rmse = evaluate_rmse(&net, val_set)?;
        if !val_rmse.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: 0,
                loss: val_rmse,
            });
        }
        let train_rmse = (epoch_sse / epoch_n.max(1) as f64).sqrt();
        log::debug!("epoch {epoch}: train rmse {train_rmse:.5}, val rmse {val_rmse:.5}");
        history.push(EpochStats {
            epoch,
            train_rmse,
            val_rmse,
        });
        if val_rmse < best_val {
            best_val = val_rmse;
            best_epoch = epoch;
            best = net.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok((
        best,
        History {
            epochs: history,
            best_epoch,
            best_val_rmse: best_val,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    /// Number of parameters sampled (without replacement).
    pub n_params: usize,
    /// Denominator floor of the relative error, so parameters with
    /// vanishing gradients are compared absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            n_params: 64,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter, analytic, numeric)` for every checked parameter.
    pub checked: Vec<(usize, f64, f64)>,
}

fn batch_loss(net: &Network, samples: &[EncodedSample]) -> Result<f64> {
    let mut sse = 0.0;
    let mut n = 0;
    for s in samples {
        let out = net.forward(&s.x)?;
        for ((o, y), &m) in out.iter().zip(&s.y).zip(&s.mask) {
            if m {
                sse += (o - y) * (o - y);
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptySelection("no present targets"));
    }
    Ok(sse / n as f64)
}

/// Compare the backpropagated gradient of the masked MSE over `samples`
/// with central differences on randomly chosen parameters.
/// Relative error is `|a - n| / max(|a|, |n|, floor)`.
pub fn gradient_check(
    net: &Network,
    samples: &[EncodedSample],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let n_present: usize = samples
        .iter()
        .map(|s| s.mask.iter().filter(|&&m| m).count())
        .sum();
    if n_present == 0 {
        return Err(Error::EmptySelection("no present targets"));
    }
    let mut grad = vec![0.0; net.params().len()];
    for s in samples {
        net.sse_gradient(s, 1.0 / n_present as f64, &mut grad)?;
    }

    let mut indices: Vec<usize> = (0..grad.len()).collect();
    SplitMix64::derive(cfg.seed, STREAM_GRADCHECK).shuffle(&mut indices);
    indices.truncate(cfg.n_params);
    indices.sort_unstable();

    let mut probe = net.clone();
    let mut checked = Vec::with_capacity(indices.len());
    let mut max_rel_error = 0.0f64;
    for i in indices {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + cfg.epsilon;
        let plus = batch_loss(&probe, samples)?;
        probe.params_mut()[i] = orig - cfg.epsilon;
        let minus = batch_loss(&probe, samples)?;
        probe.params_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * cfg.epsilon);
        let analytic = grad[i];
        let denom = analytic.abs().max(numeric.abs()).max(cfg.floor);
        max_rel_error = max_rel_error.max((analytic - numeric).abs() / denom);
        checked.push((i, analytic, numeric));
    }
    Ok(GradCheckReport {
        max_rel_error,
        checked,
    })
}
