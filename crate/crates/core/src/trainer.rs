//! Minibatch SGD with momentum and global-norm gradient clipping.

use std::time::Instant;

use rayon::prelude::*;

use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::network::{loss, loss_and_grad, LossParts, Model};
use crate::numkit::Rng;
use crate::params::Params;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    pub epochs: usize,
    /// Utterances per update; gradients are averaged over the batch.
    pub batch_size: usize,
    pub seed: u64,
    /// Halve the learning rate whenever the holdout loss fails to improve.
    pub lr_halving: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            clip_norm: 5.0,
            epochs: 20,
            batch_size: 8,
            seed: 1,
            lr_halving: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config(format!("clip norm must be > 0, got {}", self.clip_norm)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub grad_norm: f64,
    /// Factor applied to the gradient by clipping (1 when unclipped).
    pub clip_scale: f64,
}

/// `g ← g · min(1, clip/‖g‖)`, `v ← μv − ηg`, `θ ← θ + v`.
///
/// Nothing is modified when the gradient norm is not finite.
pub fn sgd_step<P: Params>(params: &mut P, grads: &P, velocity: &mut P, cfg: &TrainConfig) -> Result<StepStats> {
    let grad_norm = grads.sq_norm().sqrt();
    if !grad_norm.is_finite() {
        let block = grads.first_non_finite().unwrap_or_else(|| "<overflow>".into());
        return Err(Error::NonFinite(format!("gradient block {block} (global norm {grad_norm})")));
    }
    let clip_scale = if grad_norm > cfg.clip_norm {
        cfg.clip_norm / grad_norm
    } else {
        1.0
    };
    velocity.scale(cfg.momentum);
    velocity.axpy(-cfg.learning_rate * clip_scale, grads);
    params.axpy(1.0, velocity);
    Ok(StepStats {
        grad_norm,
        clip_scale,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub asr_loss: f64,
    pub lr_loss: f64,
    pub holdout_loss: Option<f64>,
    pub learning_rate: f64,
    pub wall_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    /// One `key=value` record per epoch. Wall time is the only
    /// run-dependent field and can be left out.
    pub fn render(&self, with_timing: bool) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&format!(
                "epoch={} train_loss={} asr_loss={} lr_loss={} holdout_loss={} learning_rate={}",
                e.epoch,
                e.train_loss,
                e.asr_loss,
                e.lr_loss,
                e.holdout_loss.map_or("-".to_string(), |v| v.to_string()),
                e.learning_rate
            ));
            if with_timing {
                out.push_str(&format!(" wall_secs={:.3}", e.wall_secs));
            }
            out.push('\n');
        }
        out
    }
}

/// Mean loss over `utts`, reduced in corpus order.
pub fn mean_loss(model: &Model, utts: &[Utterance]) -> Result<LossParts> {
    let parts: Vec<LossParts> = utts.par_iter().map(|u| loss(model, u)).collect::<Result<_>>()?;
    let mut acc = LossParts::default();
    for p in &parts {
        acc.total += p.total;
        acc.asr += p.asr;
        acc.lr += p.lr;
    }
    let n = utts.len().max(1) as f64;
    Ok(LossParts {
        total: acc.total / n,
        asr: acc.asr / n,
        lr: acc.lr / n,
    })
}

/// Train in place. The utterance order is reshuffled every epoch from
/// `cfg.seed`; per-utterance gradients may be computed in parallel but are
/// summed in batch order, so results do not depend on the thread count.
///
/// On divergence the model keeps the last parameters that produced a finite
/// loss and gradient.
pub fn train(model: &mut Model, train: &[Utterance], holdout: &[Utterance], cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::config("training corpus is empty"));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut step_cfg = cfg.clone();
    let mut velocity = model.params.zeros_like();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best_holdout = f64::INFINITY;
    let mut log = TrainLog::default();

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        rng.shuffle(&mut order);
        let mut sums = LossParts::default();
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(LossParts, _)> = batch
                .par_iter()
                .map(|&i| loss_and_grad(model, &train[i]))
                .collect::<Result<_>>()?;
            let mut grads = model.params.zeros_like();
            for (i, (parts, g)) in batch.iter().zip(&results) {
                if !parts.total.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        detail: format!("non-finite loss on utterance {}", train[*i].id),
                    });
                }
                sums.total += parts.total;
                sums.asr += parts.asr;
                sums.lr += parts.lr;
                grads.axpy(1.0, g);
            }
            grads.scale(1.0 / batch.len() as f64);
            sgd_step(&mut model.params, &grads, &mut velocity, &step_cfg).map_err(|e| Error::Diverged {
                epoch,
                detail: e.to_string(),
            })?;
        }

        let holdout_loss = if holdout.is_empty() {
            None
        } else {
            let h = mean_loss(model, holdout)?.total;
            if !h.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: "non-finite holdout loss".into(),
                });
            }
            Some(h)
        };
        let n = train.len() as f64;
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: sums.total / n,
            asr_loss: sums.asr / n,
            lr_loss: sums.lr / n,
            holdout_loss,
            learning_rate: step_cfg.learning_rate,
            wall_secs: start.elapsed().as_secs_f64(),
        });
        if let (true, Some(h)) = (cfg.lr_halving, holdout_loss) {
            if h >= best_holdout {
                step_cfg.learning_rate *= 0.5;
            } else {
                best_holdout = h;
            }
        }
    }
    Ok(log)
}

/// Split off the last `fraction` of `utts` as a holdout set.
pub fn split_holdout(utts: &[Utterance], fraction: f64) -> (&[Utterance], &[Utterance]) {
    let k = ((utts.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
    let k = k.min(utts.len().saturating_sub(1));
    utts.split_at(utts.len() - k)
}
