use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adaptation::{adapt_round, ce_loss, LossRecord, PersistenceVault, RoundData};
use crate::domains::LabeledSet;
use crate::error::{Error, Result};
use crate::model::{
    from_bytes, load_checkpoint_expecting, save_checkpoint, sgd_step, to_bytes, DimExpectation, LrSchedule, MlpModel,
    OptimizerState, SgdConfig,
};
use crate::numcore::{Tape, Tensor};
use crate::sampling::{baseline_select, cas_scores, select_queries, HypothesisLog, PoolView, SampleScore, Strategy};
use crate::SampleId;

use super::config::{ExperimentConfig, PretrainConfig};
use super::output::{export_embeddings, write_losses_csv, write_metrics_csv, write_selections_csv};
use super::pool::{budget_schedule, Oracle, TargetPool};

const STREAM_PRETRAIN_SPLIT: u64 = 1;
const STREAM_PRETRAIN_SHUFFLE: u64 = 2;
const STREAM_TARGET_SPLIT: u64 = 3;
const STREAM_ADAPT: u64 = 4;
const STREAM_AUDIT: u64 = 5;

const SPLIT_ATTEMPTS: u64 = 32;
const AUDIT_SAMPLES: usize = 32;
const AUDIT_TOL: f64 = 1e-9;

fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

/// Accuracy on one evaluation set.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Unweighted mean over classes that occur in the set.
    pub mean_acc: f64,
    /// `None` for classes with no samples.
    pub per_class: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub mean_acc: f64,
    pub per_class: Vec<Option<f64>>,
    pub labeled_count: usize,
    pub duration: Duration,
}

/// One queried sample with its sampling diagnostics and oracle label.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionRecord {
    pub round: usize,
    pub id: SampleId,
    pub u_cm: f64,
    pub u_ct: f64,
    pub u: f64,
    pub y_a: usize,
    pub true_label: usize,
}

fn argmax_first(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predict(model: &MlpModel, x: &Tensor) -> Result<Vec<usize>> {
    Ok(model.logits(x)?.row_iter().map(argmax_first).collect())
}

pub fn evaluate(model: &MlpModel, test: &LabeledSet) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::Argument("evaluation set is empty".into()));
    }
    let c = model.dims().classes;
    let mut correct = vec![0usize; c];
    let mut count = vec![0usize; c];
    for (pred, &y) in predict(model, &test.features)?.into_iter().zip(&test.labels) {
        if y >= c {
            return Err(Error::Argument(format!("label {y} out of range for {c} classes")));
        }
        count[y] += 1;
        correct[y] += usize::from(pred == y);
    }
    let per_class: Vec<Option<f64>> = correct
        .iter()
        .zip(&count)
        .map(|(&k, &n)| (n > 0).then(|| k as f64 / n as f64))
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    Ok(Evaluation {
        mean_acc: present.iter().sum::<f64>() / present.len() as f64,
        per_class,
    })
}

fn plain_accuracy(model: &MlpModel, set: &LabeledSet) -> Result<f64> {
    let preds = predict(model, &set.features)?;
    let hits = preds.iter().zip(&set.labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / set.len() as f64)
}

/// Source model and its validation accuracy.
#[derive(Clone, Debug)]
pub struct Pretrained {
    pub model: MlpModel,
    pub val_acc: f64,
}

fn covers_all(labels: impl Iterator<Item = usize>, classes: usize) -> bool {
    let seen: BTreeSet<usize> = labels.collect();
    seen.len() == classes
}

/// Supervised training on a seeded 90/10 split of the source, keeping the
/// epoch with the best validation accuracy.
pub fn pretrain_source(
    source: &LabeledSet,
    init: MlpModel,
    config: &PretrainConfig,
    sgd: SgdConfig,
    seed: u64,
) -> Result<Pretrained> {
    if source.is_empty() {
        return Err(Error::Argument("source set is empty".into()));
    }
    let dims = init.dims();
    if dims.input_dim != source.input_dim() || dims.classes != source.classes {
        return Err(Error::Argument("model dims do not match the source data".into()));
    }
    if !covers_all(source.labels.iter().copied(), source.classes) {
        return Err(Error::Argument("source does not contain every class".into()));
    }
    let n = source.len();
    let n_val = ((config.val_fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let mut split = None;
    for attempt in 0..SPLIT_ATTEMPTS {
        let mut rng = stream(seed.wrapping_add(attempt), STREAM_PRETRAIN_SPLIT);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let (val, train) = order.split_at(n_val);
        if covers_all(train.iter().map(|&i| source.labels[i]), source.classes) {
            let mut train = train.to_vec();
            let mut val = val.to_vec();
            train.sort_unstable();
            val.sort_unstable();
            split = Some((train, val));
            break;
        }
    }
    let (train_pos, val_pos) =
        split.ok_or_else(|| Error::Argument("no source split keeps every class in training".into()))?;
    let train = source.subset(&train_pos);
    let val = source.subset(&val_pos);

    let mut model = init;
    let mut opt = OptimizerState::new(&model, sgd);
    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let mut schedule = LrSchedule::new(config.lr, config.epochs * steps_per_epoch);
    let mut rng = stream(seed, STREAM_PRETRAIN_SHUFFLE);
    let targets = one_hot(&train.labels, train.classes);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut best = Pretrained {
        val_acc: plain_accuracy(&model, &val)?,
        model: model.clone(),
    };
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let params = model.bind(&mut tape);
            let x = tape.constant(train.features.select_rows(chunk));
            let f = model.features_on(&mut tape, &params, x)?;
            let z = model.logits_on(&mut tape, &params, f)?;
            let p = tape.softmax_rows(z);
            let loss = ce_loss(&mut tape, p, &targets.select_rows(chunk))?;
            tape.backward(loss)?;
            let grads = model.collect_grads(&tape, &params)?;
            let lr = schedule.next_lr();
            sgd_step(&mut model, &mut opt, &grads, lr)?;
        }
        let acc = plain_accuracy(&model, &val)?;
        if acc > best.val_acc {
            best = Pretrained {
                model: model.clone(),
                val_acc: acc,
            };
        }
    }
    Ok(best)
}

fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut q = Tensor::zeros(labels.len(), classes);
    for (i, &y) in labels.iter().enumerate() {
        q.set(i, y, 1.0);
    }
    q
}

/// Seeded split of the target into an adaptation pool and a held-out test set.
pub fn split_target(target: &LabeledSet, test_fraction: f64, seed: u64) -> Result<(LabeledSet, LabeledSet)> {
    let n = target.len();
    if n < 2 {
        return Err(Error::Argument("target needs at least 2 samples to split".into()));
    }
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, STREAM_TARGET_SPLIT));
    let (test, pool) = order.split_at(n_test);
    let mut test = test.to_vec();
    let mut pool = pool.to_vec();
    test.sort_unstable();
    pool.sort_unstable();
    Ok((target.subset(&pool), target.subset(&test)))
}

/// Data and source model shared by every run over the same dataset and seed.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub source: LabeledSet,
    pub target: LabeledSet,
    pub source_model: MlpModel,
    /// `None` when the source model was loaded from a checkpoint.
    pub source_val_acc: Option<f64>,
}

/// Loads the data and pretrains (or loads) the source model.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let (source, target) = config.dataset.load()?;
    if source.input_dim() != target.input_dim() {
        return Err(Error::Config("source and target feature widths differ".into()));
    }
    let dims = config.model.dims(source.input_dim(), config.dataset.classes());
    let (source_model, source_val_acc) = match &config.pretrain.checkpoint {
        Some(path) => {
            let expect = DimExpectation {
                input_dim: Some(dims.input_dim),
                classes: Some(dims.classes),
            };
            (load_checkpoint_expecting(path, &expect)?, None)
        }
        None => {
            let activations = vec![config.model.activation; dims.hidden.len() + 1];
            let init = MlpModel::with_activations(dims, &activations, config.seed)?;
            let p = pretrain_source(&source, init, &config.pretrain, config.sgd, config.seed)?;
            (p.model, Some(p.val_acc))
        }
    };
    Ok(Prepared {
        source,
        target,
        source_model,
        source_val_acc,
    })
}

/// Everything a run produces.
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    /// Round 0 is the source model before any query.
    pub metrics: Vec<RoundMetrics>,
    pub selections: Vec<SelectionRecord>,
    pub losses: Vec<LossRecord>,
    pub model: MlpModel,
    pub budget: Vec<usize>,
    /// Anchor vault after the last round.
    pub vault: PersistenceVault,
}

impl ExperimentOutcome {
    pub fn final_accuracy(&self) -> f64 {
        self.metrics.last().map_or(0.0, |m| m.mean_acc)
    }
}

struct Split {
    pool: LabeledSet,
    test: LabeledSet,
    position: BTreeMap<SampleId, usize>,
}

fn split_for(config: &ExperimentConfig, target: &LabeledSet) -> Result<Split> {
    let (pool, test) = if config.eval_on_pool {
        (target.clone(), target.clone())
    } else {
        split_target(target, config.test_fraction, config.seed)?
    };
    let position = pool.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    Ok(Split { pool, test, position })
}

fn resolve_schedule(config: &ExperimentConfig, pool_size: usize) -> Result<Vec<usize>> {
    let budget = config.budget.resolve(pool_size)?;
    if budget > pool_size {
        return Err(Error::Config(format!(
            "budget {budget} exceeds the pool of {pool_size}"
        )));
    }
    budget_schedule(budget, config.rounds).map_err(|e| Error::Config(e.to_string()))
}

fn check_model(model: &MlpModel, pool: &LabeledSet) -> Result<()> {
    let dims = model.dims();
    if dims.input_dim != pool.input_dim() || dims.classes != pool.classes {
        return Err(Error::Config(format!(
            "model expects {} inputs / {} classes, data has {} / {}",
            dims.input_dim,
            dims.classes,
            pool.input_dim(),
            pool.classes
        )));
    }
    Ok(())
}

fn baseline_seed(seed: u64, round: usize) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(round as u64 + 1)
}

fn probs_map(ids: &[SampleId], probs: &Tensor) -> BTreeMap<SampleId, Vec<f64>> {
    ids.iter().copied().zip(probs.row_iter().map(<[f64]>::to_vec)).collect()
}

/// Picks this round's queries with the configured strategy. Returns the
/// selected ids in selection order and the contrastive scores of the pool.
#[allow(clippy::too_many_arguments)]
fn choose(
    config: &ExperimentConfig,
    model: &MlpModel,
    round: usize,
    ids: &[SampleId],
    x_u: &Tensor,
    current: &BTreeMap<SampleId, Vec<f64>>,
    previous: Option<&BTreeMap<SampleId, Vec<f64>>>,
    labeled_x: &Tensor,
    b: usize,
) -> Result<(Vec<SampleId>, Vec<SampleScore>)> {
    let log = HypothesisLog::new(round - 1, current.clone(), previous.cloned())?;
    let scores = cas_scores(&log, &config.cas)?;
    let picked = match config.strategy {
        Strategy::Cas => select_queries(&scores, b, &BTreeSet::new())?,
        other => {
            let probs = Tensor::from_rows(&current.values().collect::<Vec<_>>())?;
            let features = if other.uses_features() {
                Some(model.features(x_u)?)
            } else {
                None
            };
            let labeled_features = if other.uses_features() && labeled_x.rows() > 0 {
                Some(model.features(labeled_x)?)
            } else {
                None
            };
            let view = PoolView {
                ids,
                probs: Some(&probs),
                features: features.as_ref(),
                labeled_features: labeled_features.as_ref(),
            };
            baseline_select(other, &view, b, baseline_seed(config.seed, round))?
        }
    };
    Ok((picked, scores))
}

/// Score-only dry run of the first query round: the ids the configured
/// strategy would label, with their contrastive scores, without consulting
/// the oracle.
pub fn probe_round(config: &ExperimentConfig, prepared: &Prepared) -> Result<Vec<SampleScore>> {
    let split = split_for(config, &prepared.target)?;
    check_model(&prepared.source_model, &split.pool)?;
    let schedule = resolve_schedule(config, split.pool.len())?;
    let probs = prepared.source_model.probs(&split.pool.features)?;
    let current = probs_map(&split.pool.ids, &probs);
    let empty = Tensor::zeros(0, split.pool.input_dim());
    let (picked, scores) = choose(
        config,
        &prepared.source_model,
        1,
        &split.pool.ids,
        &split.pool.features,
        &current,
        None,
        &empty,
        schedule[0],
    )?;
    let by_id: BTreeMap<SampleId, &SampleScore> = scores.iter().map(|s| (s.id, s)).collect();
    Ok(picked.iter().map(|id| by_id[id].clone()).collect())
}

fn audit_cache(
    previous_model: &[u8],
    cache: &BTreeMap<SampleId, Vec<f64>>,
    ids: &[SampleId],
    pool: &Split,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let model = from_bytes(previous_model)?;
    let k = AUDIT_SAMPLES.min(ids.len());
    let mut picked: Vec<SampleId> = index::sample(rng, ids.len(), k).into_iter().map(|i| ids[i]).collect();
    picked.sort_unstable();
    let rows: Vec<usize> = picked.iter().map(|id| pool.position[id]).collect();
    let fresh = model.probs(&pool.pool.features.select_rows(&rows))?;
    for (id, row) in picked.iter().zip(fresh.row_iter()) {
        let cached = &cache[id];
        if row.iter().zip(cached).any(|(a, b)| (a - b).abs() > AUDIT_TOL) {
            return Err(Error::State(format!(
                "cached hypotheses of sample {id} differ from the saved model"
            )));
        }
    }
    Ok(())
}

fn write_outputs(config: &ExperimentConfig, outcome: &ExperimentOutcome, split: &Split, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let classes = outcome.model.dims().classes;
    write_metrics_csv(dir.join("metrics.csv"), &outcome.metrics, classes)?;
    write_selections_csv(dir.join("selections.csv"), &outcome.selections)?;
    write_losses_csv(dir.join("losses.csv"), &outcome.losses)?;
    save_checkpoint(&outcome.model, dir.join("model.ckpt"))?;
    let config_path = dir.join("config.json");
    std::fs::write(&config_path, config.to_json()).map_err(|e| Error::io(&config_path, e))?;
    if config.export_embeddings {
        let sets: Vec<(&str, &LabeledSet)> = if config.eval_on_pool {
            vec![("target", &split.pool)]
        } else {
            vec![("pool", &split.pool), ("test", &split.test)]
        };
        export_embeddings(&outcome.model, &sets, dir.join("embeddings.csv"))?;
    }
    Ok(())
}

/// Loads data, pretrains and runs every round; writes artifacts to `out_dir` if given.
pub fn run_experiment(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentOutcome> {
    let prepared = prepare(config)?;
    run_prepared(config, &prepared, out_dir)
}

/// The query-and-adapt loop starting from `prepared.source_model`.
///
/// Each round scores the unlabeled pool with the current model, contrasting
/// against the hypotheses cached when the previous query was made, labels the
/// selection through the oracle, admits the new anchors into the vault with
/// the features of the querying model, adapts, and evaluates.
pub fn run_prepared(
    config: &ExperimentConfig,
    prepared: &Prepared,
    out_dir: Option<&Path>,
) -> Result<ExperimentOutcome> {
    config.validate()?;
    let split = split_for(config, &prepared.target)?;
    check_model(&prepared.source_model, &split.pool)?;
    let schedule = resolve_schedule(config, split.pool.len())?;
    let oracle = Oracle::new(&split.pool.ids, &split.pool.labels)?;
    let mut pool = TargetPool::new(&split.pool.ids)?;

    let mut model = prepared.source_model.clone();
    let mut optimizer = OptimizerState::new(&model, config.sgd);
    if config.adapt.freeze_classifier {
        for i in model.classifier_param_indices() {
            optimizer.freeze(i);
        }
    }
    let total_steps: usize = schedule
        .iter()
        .scan(0, |acc, &b| {
            *acc += b;
            Some(config.adapt.steps_per_round(*acc))
        })
        .sum();
    let mut lr = LrSchedule::new(config.lr, total_steps);
    let mut vault = PersistenceVault::new(model.dims().bottleneck, config.adapt.vault_momentum)?;
    let mut adapt_rng = stream(config.seed, STREAM_ADAPT);
    let mut audit_rng = stream(config.seed, STREAM_AUDIT);

    let start = Instant::now();
    let eval0 = evaluate(&model, &split.test)?;
    let mut metrics = vec![RoundMetrics {
        round: 0,
        mean_acc: eval0.mean_acc,
        per_class: eval0.per_class,
        labeled_count: 0,
        duration: start.elapsed(),
    }];
    let mut selections = Vec::new();
    let mut losses = Vec::new();
    let mut previous: Option<BTreeMap<SampleId, Vec<f64>>> = None;
    let mut previous_model: Option<Vec<u8>> = None;

    for (r, &b) in (1..).zip(&schedule) {
        let started = Instant::now();
        let ids: Vec<SampleId> = pool.unlabeled().iter().copied().collect();
        let rows: Vec<usize> = ids.iter().map(|id| split.position[id]).collect();
        let x_u = split.pool.features.select_rows(&rows);
        let current = probs_map(&ids, &model.probs(&x_u)?);

        if let (Some(bytes), Some(cache)) = (&previous_model, &previous) {
            audit_cache(bytes, cache, &ids, &split, &mut audit_rng)?;
        }

        let labeled_rows: Vec<usize> = pool.labeled().keys().map(|id| split.position[id]).collect();
        let labeled_x = split.pool.features.select_rows(&labeled_rows);
        let (picked, scores) = choose(
            config,
            &model,
            r,
            &ids,
            &x_u,
            &current,
            previous.as_ref(),
            &labeled_x,
            b,
        )?;
        let by_id: BTreeMap<SampleId, &SampleScore> = scores.iter().map(|s| (s.id, s)).collect();

        pool.label(&picked, &oracle)?;
        for id in &picked {
            let s = by_id[id];
            selections.push(SelectionRecord {
                round: r,
                id: *id,
                u_cm: s.u_cm,
                u_ct: s.u_ct,
                u: s.u,
                y_a: s.y_a,
                true_label: oracle.label(*id)?,
            });
        }
        let picked_rows: Vec<usize> = picked.iter().map(|id| split.position[id]).collect();
        vault.admit(
            &picked,
            &model.features(&split.pool.features.select_rows(&picked_rows))?,
        )?;

        if config.retain_checkpoints {
            let bytes = to_bytes(&model);
            if let Some(dir) = out_dir {
                let ckpt_dir = dir.join("checkpoints");
                std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
                let path = ckpt_dir.join(format!("query_round_{r}.ckpt"));
                std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
            }
            previous_model = Some(bytes);
        }
        previous = Some(current);

        let labeled_ids: Vec<SampleId> = pool.labeled().keys().copied().collect();
        let labeled_y: Vec<usize> = pool.labeled().values().copied().collect();
        let labeled_rows: Vec<usize> = labeled_ids.iter().map(|id| split.position[id]).collect();
        let labeled_x = split.pool.features.select_rows(&labeled_rows);
        let unlabeled_rows: Vec<usize> = pool.unlabeled().iter().map(|id| split.position[id]).collect();
        let unlabeled_x = split.pool.features.select_rows(&unlabeled_rows);
        if config.adapt.reset_schedule_per_round {
            lr = LrSchedule::new(config.lr, config.adapt.steps_per_round(labeled_ids.len()));
        }
        let data = RoundData {
            labeled_ids: &labeled_ids,
            labeled_x: &labeled_x,
            labeled_y: &labeled_y,
            unlabeled_x: &unlabeled_x,
        };
        let stats = adapt_round(
            &mut model,
            &mut optimizer,
            &data,
            &mut vault,
            &config.adapt,
            &config.loss_weights,
            &mut lr,
            &mut adapt_rng,
        )?;
        if !vault.ids().eq(pool.labeled().keys().copied()) {
            return Err(Error::State(format!(
                "vault ids diverged from the labeled set in round {r}"
            )));
        }
        let offset = losses.len();
        losses.extend(stats.records.into_iter().enumerate().map(|(i, mut rec)| {
            rec.step = offset + i;
            rec
        }));

        let eval = evaluate(&model, &split.test)?;
        metrics.push(RoundMetrics {
            round: r,
            mean_acc: eval.mean_acc,
            per_class: eval.per_class,
            labeled_count: labeled_ids.len(),
            duration: started.elapsed(),
        });
    }

    let outcome = ExperimentOutcome {
        metrics,
        selections,
        losses,
        model,
        budget: schedule,
        vault,
    };
    if let Some(dir) = out_dir {
        write_outputs(config, &outcome, &split, dir)?;
    }
    Ok(outcome)
}
