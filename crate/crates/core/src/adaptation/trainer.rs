use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sgd_step, LrSchedule, MlpModel, OptimizerState};
use crate::numcore::{Tape, Tensor, Var};
use crate::SampleId;

use super::losses::{ce_loss, entropy_loss, total_loss, vpa_loss, LossWeights};
use super::mixup::mixup_batch;
use super::PersistenceVault;

/// When the vault absorbs the current anchor features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VaultCadence {
    #[default]
    Epoch,
    Step,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub epochs_per_round: usize,
    /// Leading epochs of each round trained on the labeled CE term alone.
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub mixup_enabled: bool,
    /// Both shape parameters of the Beta distribution mixup draws from.
    pub mixup_beta: f64,
    pub vault_cadence: VaultCadence,
    /// EMA weight of the newest anchor features.
    pub vault_momentum: f64,
    /// Softmax temperature of the anchor assignment.
    pub temperature: f64,
    pub freeze_classifier: bool,
    /// Restart the learning-rate schedule at every round instead of spanning the run.
    pub reset_schedule_per_round: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            epochs_per_round: 30,
            warmup_epochs: 0,
            batch_size: 64,
            mixup_enabled: true,
            mixup_beta: 0.3,
            vault_cadence: VaultCadence::Epoch,
            vault_momentum: 0.9,
            temperature: 1.0,
            freeze_classifier: false,
            reset_schedule_per_round: false,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_per_round == 0 {
            return Err(Error::Config("epochs_per_round must be at least 1".into()));
        }
        if self.warmup_epochs > self.epochs_per_round {
            return Err(Error::Config("warmup_epochs exceeds epochs_per_round".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.mixup_beta > 0.0) {
            return Err(Error::Config("mixup_beta must be positive".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.vault_momentum) {
            return Err(Error::Config("vault_momentum must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Optimizer steps one round takes with `n_labeled` anchors.
    pub fn steps_per_round(&self, n_labeled: usize) -> usize {
        self.epochs_per_round * n_labeled.div_ceil(self.batch_size.max(1))
    }
}

/// Target data seen by one adaptation round. `labeled_ids` index the rows
/// of `labeled_x` and must equal the vault's id set.
#[derive(Clone, Copy, Debug)]
pub struct RoundData<'a> {
    pub labeled_ids: &'a [SampleId],
    pub labeled_x: &'a Tensor,
    pub labeled_y: &'a [usize],
    pub unlabeled_x: &'a Tensor,
}

/// Loss components of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub ce: f64,
    pub vpa: f64,
    pub ent: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoundStats {
    pub records: Vec<LossRecord>,
}

impl RoundStats {
    /// Mean CE over the steps of each epoch, in order.
    pub fn epoch_mean_ce(&self, steps_per_epoch: usize) -> Vec<f64> {
        self.records
            .chunks(steps_per_epoch.max(1))
            .map(|c| c.iter().map(|r| r.ce).sum::<f64>() / c.len() as f64)
            .collect()
    }
}

const BOUND_TOL: f64 = 1e-9;

fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut q = Tensor::zeros(labels.len(), classes);
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Argument(format!("label {y} out of range for {classes} classes")));
        }
        q.set(i, y, 1.0);
    }
    Ok(q)
}

/// Unlabeled objective: anchor-assignment entropy on embeddings plus
/// prediction entropy. Only embeddings and probabilities enter; no labels are
/// formed for unlabeled samples.
fn unlabeled_terms(
    tape: &mut Tape,
    features: Var,
    probs: Var,
    vault: &PersistenceVault,
    temperature: f64,
) -> Result<(Var, Var)> {
    let vpa = vpa_loss(tape, features, vault, temperature)?;
    let ent = entropy_loss(tape, probs)?;
    Ok((vpa, ent))
}

fn check_bounds(rec: &LossRecord, classes: usize, n_anchors: usize) -> Result<()> {
    let ok = rec.ce >= -BOUND_TOL
        && (-BOUND_TOL..=(classes as f64).ln() + BOUND_TOL).contains(&rec.ent)
        && (-BOUND_TOL..=(n_anchors as f64).ln() + BOUND_TOL).contains(&rec.vpa)
        && rec.total.is_finite();
    if !ok {
        return Err(Error::State(format!(
            "loss out of bounds at step {}: {rec:?}",
            rec.step
        )));
    }
    Ok(())
}

/// Trains `model` for `config.epochs_per_round` epochs over the labeled
/// anchors. Each step pairs a labeled batch (CE, optionally on mixup) with an
/// equally sized random unlabeled batch (anchor entropy + prediction entropy),
/// and steps SGD at the scheduled learning rate.
#[allow(clippy::too_many_arguments)]
pub fn adapt_round(
    model: &mut MlpModel,
    optimizer: &mut OptimizerState,
    data: &RoundData<'_>,
    vault: &mut PersistenceVault,
    config: &AdaptConfig,
    weights: &LossWeights,
    schedule: &mut LrSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<RoundStats> {
    config.validate()?;
    weights.validate()?;
    let n_l = data.labeled_ids.len();
    if n_l == 0 {
        return Err(Error::State("adaptation needs at least one labeled sample".into()));
    }
    if data.labeled_x.rows() != n_l || data.labeled_y.len() != n_l {
        return Err(Error::Shape("labeled ids, inputs and labels disagree in length".into()));
    }
    if vault.len() != n_l {
        return Err(Error::State(format!(
            "vault holds {} anchors for {n_l} labeled samples",
            vault.len()
        )));
    }
    let classes = model.dims().classes;
    let targets_all = one_hot(data.labeled_y, classes)?;
    let n_u = data.unlabeled_x.rows();
    let use_unlabeled = n_u > 0 && (weights.beta_vpa > 0.0 || weights.beta_ent > 0.0);

    let mut stats = RoundStats::default();
    let mut labeled_order: Vec<usize> = (0..n_l).collect();
    let mut unlabeled_order: Vec<usize> = (0..n_u).collect();

    for epoch in 0..config.epochs_per_round {
        let unlabeled_on = use_unlabeled && epoch >= config.warmup_epochs;
        labeled_order.shuffle(rng);
        let mut u_cursor = n_u;
        for chunk in labeled_order.chunks(config.batch_size) {
            let x_l = data.labeled_x.select_rows(chunk);
            let q_l = targets_all.select_rows(chunk);
            let (x_l, q_l) = if config.mixup_enabled {
                mixup_batch(&x_l, &q_l, config.mixup_beta, rng)?
            } else {
                (x_l, q_l)
            };

            let mut tape = Tape::new();
            let params = model.bind(&mut tape);
            let xl = tape.constant(x_l);
            let fl = model.features_on(&mut tape, &params, xl)?;
            let zl = model.logits_on(&mut tape, &params, fl)?;
            let pl = tape.softmax_rows(zl);
            let ce = ce_loss(&mut tape, pl, &q_l)?;

            let (vpa, ent) = if unlabeled_on {
                let mut batch = Vec::with_capacity(chunk.len());
                while batch.len() < chunk.len().min(n_u) {
                    if u_cursor >= n_u {
                        unlabeled_order.shuffle(rng);
                        u_cursor = 0;
                    }
                    batch.push(unlabeled_order[u_cursor]);
                    u_cursor += 1;
                }
                let xu = tape.constant(data.unlabeled_x.select_rows(&batch));
                let fu = model.features_on(&mut tape, &params, xu)?;
                let zu = model.logits_on(&mut tape, &params, fu)?;
                let pu = tape.softmax_rows(zu);
                unlabeled_terms(&mut tape, fu, pu, vault, config.temperature)?
            } else {
                (tape.constant(Tensor::scalar(0.0)), tape.constant(Tensor::scalar(0.0)))
            };
            let total = total_loss(&mut tape, ce, vpa, ent, weights)?;
            tape.backward(total)?;
            let grads = model.collect_grads(&tape, &params)?;

            let rec = LossRecord {
                step: schedule.step,
                lr: schedule.current(),
                ce: tape.value(ce).item()?,
                vpa: tape.value(vpa).item()?,
                ent: tape.value(ent).item()?,
                total: tape.value(total).item()?,
            };
            check_bounds(&rec, classes, n_l)?;
            let lr = schedule.next_lr();
            sgd_step(model, optimizer, &grads, lr)?;
            stats.records.push(rec);

            if config.vault_cadence == VaultCadence::Step {
                vault.update(data.labeled_ids, &model.features(data.labeled_x)?)?;
            }
        }
        if config.vault_cadence == VaultCadence::Epoch {
            vault.update(data.labeled_ids, &model.features(data.labeled_x)?)?;
        }
    }
    Ok(stats)
}
