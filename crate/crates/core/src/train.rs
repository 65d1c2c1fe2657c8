//! Mini-batch training and evaluation of the helpfulness model.
//!
//! Per-instance gradients of a batch are computed in parallel and summed in
//! instance order, so results do not depend on the number of threads.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RahpConfig;
use crate::error::{Error, Result};
use crate::layers::Dropout;
use crate::metrics::EvalReport;
use crate::model::{forward, loss_node, predict, probability, ModelInput};
use crate::tensor::{Adam, Gradients, Graph, ParamStore, Precision, Var};

/// What one training instance contributed to a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceOutcome {
    pub loss: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub loss_sum: f64,
    pub correct: usize,
    pub count: usize,
}

impl BatchStats {
    pub fn add(&mut self, other: BatchStats) {
        self.loss_sum += other.loss_sum;
        self.correct += other.correct;
        self.count += other.count;
    }

    pub fn mean_loss(&self) -> f64 {
        self.loss_sum / self.count.max(1) as f64
    }

    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.count.max(1) as f64
    }
}

/// Dropout stream for instance `index` in `epoch`.
pub fn dropout_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d20f);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng
}

/// Training order for `epoch`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    order.shuffle(&mut rng);
    order
}

/// Mean gradient of `loss` over `batch`. `loss` builds the graph for one
/// item and returns its scalar loss node and whether it was classified
/// correctly.
pub fn batch_gradients<T, F>(store: &ParamStore, precision: Precision, batch: &[T], loss: F) -> Result<(Gradients, BatchStats)>
where
    T: Sync,
    F: Fn(&mut Graph, &ParamStore, &T) -> Result<(Var, bool)> + Sync,
{
    let per: Vec<Result<(Gradients, InstanceOutcome)>> = batch
        .par_iter()
        .map(|item| {
            let mut g = Graph::new(precision);
            let (l, correct) = loss(&mut g, store, item)?;
            let value = g.value(l).item();
            if !value.is_finite() {
                return Err(Error::Diverged(format!("loss is {value}")));
            }
            g.backward(l)?;
            Ok((g.param_grads(), InstanceOutcome { loss: value, correct }))
        })
        .collect();
    let mut grads = Gradients::default();
    let mut stats = BatchStats::default();
    for r in per {
        let (g, o) = r?;
        grads.merge(g);
        stats.add(BatchStats {
            loss_sum: o.loss,
            correct: o.correct as usize,
            count: 1,
        });
    }
    grads.scale(1.0 / batch.len().max(1) as f64);
    if !grads.all_finite() {
        return Err(Error::Diverged("non-finite gradient".into()));
    }
    Ok((grads, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub valid: Option<EvalReport>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best epoch (by validation AUROC) or of the last
    /// epoch when no validation data was given.
    pub best: ParamStore,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
    /// Set when training stopped on a non-finite loss; `best` then holds the
    /// last good parameters.
    pub diverged: Option<String>,
}

/// Model selection value of a validation report: AUROC when defined,
/// otherwise accuracy.
fn selection_score(r: &EvalReport) -> f64 {
    r.auroc.unwrap_or(r.accuracy)
}

/// Trains `store` on `train` with Adam and early stopping on validation
/// AUROC.
pub fn train_model(cfg: &RahpConfig, mut store: ParamStore, train: &[ModelInput], valid: &[ModelInput]) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("training shard is empty".into()));
    }
    cfg.validate()?;
    let mut adam = Adam::new(cfg.adam(), cfg.precision);
    let fingerprint = cfg.fingerprint();
    let mut best = store.clone();
    let mut best_epoch = 0;
    let mut best_score = f64::NEG_INFINITY;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut stopped_early = false;
    let mut diverged = None;

    'epochs: for epoch in 1..=cfg.epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let mut stats = BatchStats::default();
        for chunk in order.chunks(cfg.batch_size) {
            let step = batch_gradients(&store, cfg.precision, chunk, |g, s, &i| {
                let mut rng = dropout_rng(cfg.seed, epoch, i);
                let mut drop = Dropout {
                    rate: cfg.dropout,
                    rng: &mut rng,
                };
                let d = (cfg.dropout > 0.0).then_some(&mut drop);
                let out = forward(g, s, cfg, &train[i], d)?;
                let p = probability(g.value(out.logit).item());
                let l = loss_node(g, &out, train[i].label)?;
                Ok((l, (p >= cfg.threshold) == (train[i].label > 0.5)))
            });
            let (grads, s) = match step {
                Ok(x) => x,
                Err(Error::Diverged(msg)) => {
                    log::error!("epoch {epoch}: training diverged ({msg}); keeping last good parameters");
                    if valid.is_empty() {
                        best = store.clone();
                    }
                    diverged = Some(msg);
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            stats.add(s);
            adam.step(&mut store, &grads)?;
        }
        let report = if valid.is_empty() {
            None
        } else {
            Some(evaluate(&store, cfg, valid, &fingerprint)?)
        };
        log::info!(
            "epoch {epoch}: loss {:.4} train acc {:.3}{}",
            stats.mean_loss(),
            stats.accuracy(),
            report
                .as_ref()
                .map(|r| format!(" valid auroc {} f1 {:.3}", r.auroc.map_or("-".into(), |a| format!("{a:.4}")), r.f1))
                .unwrap_or_default()
        );
        match &report {
            Some(r) => {
                let score = selection_score(r);
                if score > best_score {
                    best_score = score;
                    best = store.clone();
                    best_epoch = epoch;
                    since_best = 0;
                } else {
                    since_best += 1;
                }
            }
            None => {
                best = store.clone();
                best_epoch = epoch;
            }
        }
        history.push(EpochRecord {
            epoch,
            train_loss: stats.mean_loss(),
            train_accuracy: stats.accuracy(),
            valid: report,
        });
        if !valid.is_empty() && since_best >= cfg.patience {
            log::info!("no validation improvement for {} epochs; stopping", cfg.patience);
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        history,
        stopped_early,
        diverged,
    })
}

/// Probability of Helpful for each input, in input order.
pub fn score_all(store: &ParamStore, cfg: &RahpConfig, inputs: &[ModelInput]) -> Result<Vec<f64>> {
    inputs.par_iter().map(|x| predict(store, cfg, x)).collect()
}

pub fn evaluate(store: &ParamStore, cfg: &RahpConfig, inputs: &[ModelInput], fingerprint: &str) -> Result<EvalReport> {
    let scores = score_all(store, cfg, inputs)?;
    let labels: Vec<bool> = inputs.iter().map(|x| x.label > 0.5).collect();
    EvalReport::compute(&scores, &labels, cfg.threshold, fingerprint)
}
