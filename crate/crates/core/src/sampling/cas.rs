use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::ln_clamped;
use crate::SampleId;

/// Softmax hypotheses of the current model and, after the first round, of the
/// model that performed the previous query.
#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisLog {
    round: usize,
    current: BTreeMap<SampleId, Vec<f64>>,
    previous: Option<BTreeMap<SampleId, Vec<f64>>>,
}

const SIMPLEX_TOL: f64 = 1e-6;

impl HypothesisLog {
    /// `current` covers the unlabeled pool; `previous` must be present exactly
    /// when `round > 0` and cover every id in `current`.
    pub fn new(
        round: usize,
        current: BTreeMap<SampleId, Vec<f64>>,
        previous: Option<BTreeMap<SampleId, Vec<f64>>>,
    ) -> Result<Self> {
        match (&previous, round) {
            (None, r) if r > 0 => {
                return Err(Error::Argument(format!("round {r} needs previous-round hypotheses")));
            }
            (Some(_), 0) => return Err(Error::Argument("round 0 has no previous hypotheses".into())),
            _ => {}
        }
        check_simplex(&current)?;
        if let Some(prev) = &previous {
            check_simplex(prev)?;
            if let Some(missing) = current.keys().find(|id| !prev.contains_key(id)) {
                return Err(Error::Argument(format!("previous hypotheses miss sample {missing}")));
            }
        }
        Ok(Self {
            round,
            current,
            previous,
        })
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn current(&self) -> &BTreeMap<SampleId, Vec<f64>> {
        &self.current
    }

    pub fn previous(&self) -> Option<&BTreeMap<SampleId, Vec<f64>>> {
        self.previous.as_ref()
    }

    pub fn ids(&self) -> impl Iterator<Item = SampleId> + '_ {
        self.current.keys().copied()
    }
}

fn check_simplex(map: &BTreeMap<SampleId, Vec<f64>>) -> Result<()> {
    let width = map.values().next().map_or(0, Vec::len);
    for (id, p) in map {
        if p.len() != width {
            return Err(Error::Argument(format!(
                "sample {id} has {} classes, expected {width}",
                p.len()
            )));
        }
        let total: f64 = p.iter().sum();
        if p.iter().any(|&v| !(v >= 0.0)) || (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Argument(format!("sample {id} is not a probability vector")));
        }
    }
    Ok(())
}

/// Weights of the contrastive sampling criterion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CasConfig {
    /// Weight of the current-vs-previous log-probability contrast.
    pub alpha: f64,
    /// Weight of the class-transferability term.
    pub lambda: f64,
    /// Size of the most-confident window used for class statistics.
    pub kappa: usize,
}

impl Default for CasConfig {
    fn default() -> Self {
        Self {
            alpha: 0.03,
            lambda: 1.0,
            kappa: 100,
        }
    }
}

impl CasConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::Argument("alpha and lambda must be non-negative".into()));
        }
        if self.kappa == 0 {
            return Err(Error::Argument("kappa must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-sample output of [`cas_scores`].
#[derive(Clone, Debug, PartialEq)]
pub struct SampleScore {
    pub id: SampleId,
    /// Best-versus-second-best margin of the contrastive log-probabilities.
    pub u_cm: f64,
    pub y_a: usize,
    pub y_b: usize,
    /// Transferability of class `y_a`, in [0, 1].
    pub u_ct: f64,
    /// `u_cm + λ·u_ct`; smaller is more informative.
    pub u: f64,
}

/// `log p` in round 0, otherwise `log p + α (log p − log p_prev)`; every log
/// is clamped at `LOG_EPS`.
pub fn contrastive_log_probs(p: &[f64], p_prev: Option<&[f64]>, alpha: f64, round: usize) -> Result<Vec<f64>> {
    if round == 0 {
        return Ok(p.iter().map(|&v| ln_clamped(v)).collect());
    }
    let prev = p_prev.ok_or_else(|| Error::Argument(format!("round {round} needs previous hypotheses")))?;
    if prev.len() != p.len() {
        return Err(Error::Argument(format!(
            "hypotheses of length {} and {}",
            p.len(),
            prev.len()
        )));
    }
    Ok(p.iter()
        .zip(prev)
        .map(|(&cur, &old)| {
            let lc = ln_clamped(cur);
            lc + alpha * (lc - ln_clamped(old))
        })
        .collect())
}

/// Best-versus-second-best margin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Margin {
    pub value: f64,
    pub best: usize,
    pub second: usize,
}

/// Top-two margin of `scores`; ties go to the lower class index.
pub fn bvsb_margin(scores: &[f64]) -> Result<Margin> {
    if scores.len() < 2 {
        return Err(Error::Argument(format!(
            "margin needs at least 2 classes, got {}",
            scores.len()
        )));
    }
    let (mut best, mut second) = if scores[1] > scores[0] { (1, 0) } else { (0, 1) };
    for (c, &v) in scores.iter().enumerate().skip(2) {
        if v > scores[best] {
            second = best;
            best = c;
        } else if v > scores[second] {
            second = c;
        }
    }
    Ok(Margin {
        value: scores[best] - scores[second],
        best,
        second,
    })
}

/// `rank(i) = #{k : u(k) < u(i)}`; equal scores share a rank.
pub fn rank_scores(scores: &[f64]) -> Vec<usize> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    scores.iter().map(|&s| sorted.partition_point(|&v| v < s)).collect()
}

/// Frequency of each predicted class among the `κ` largest margins, divided
/// by the largest such frequency. `κ` is clamped to the pool size; when no
/// sample falls in the window every class gets 0.
pub fn class_transferability(predicted: &[usize], ranks: &[usize], kappa: usize, classes: usize) -> Result<Vec<f64>> {
    if predicted.len() != ranks.len() {
        return Err(Error::Argument(format!(
            "{} predictions but {} ranks",
            predicted.len(),
            ranks.len()
        )));
    }
    let n = ranks.len();
    let window = kappa.min(n);
    let cutoff = n - window;
    let mut counts = vec![0usize; classes];
    for (&y, &r) in predicted.iter().zip(ranks) {
        if y >= classes {
            return Err(Error::Argument(format!("class {y} out of range")));
        }
        if r >= cutoff {
            counts[y] += 1;
        }
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Ok(vec![0.0; classes]);
    }
    Ok(counts.iter().map(|&c| c as f64 / max as f64).collect())
}

/// Scores every sample in the log: contrastive decoding, margin, rank,
/// class transferability, then `u = u_cm + λ·u_ct(y_a)`. Output is in
/// ascending id order.
pub fn cas_scores(log: &HypothesisLog, config: &CasConfig) -> Result<Vec<SampleScore>> {
    config.validate()?;
    let classes = log.current.values().next().map_or(0, Vec::len);
    let mut partial = Vec::with_capacity(log.current.len());
    for (&id, p) in &log.current {
        let prev = log.previous.as_ref().map(|m| m[&id].as_slice());
        let decoded = contrastive_log_probs(p, prev, config.alpha, log.round)?;
        partial.push((id, bvsb_margin(&decoded)?));
    }
    let margins: Vec<f64> = partial.iter().map(|(_, m)| m.value).collect();
    let predicted: Vec<usize> = partial.iter().map(|(_, m)| m.best).collect();
    let ranks = rank_scores(&margins);
    let u_ct = class_transferability(&predicted, &ranks, config.kappa, classes)?;
    Ok(partial
        .into_iter()
        .map(|(id, m)| SampleScore {
            id,
            u_cm: m.value,
            y_a: m.best,
            y_b: m.second,
            u_ct: u_ct[m.best],
            u: m.value + config.lambda * u_ct[m.best],
        })
        .collect())
}

/// The `b` candidates with the smallest score, ties by ascending id.
pub fn select_smallest(candidates: &[(SampleId, f64)], b: usize) -> Result<Vec<SampleId>> {
    if b > candidates.len() {
        return Err(Error::Argument(format!(
            "cannot select {b} from a pool of {}",
            candidates.len()
        )));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
    Ok(sorted.into_iter().take(b).map(|(id, _)| id).collect())
}

/// Picks the `b` smallest-`u` samples not yet labeled.
pub fn select_queries(scores: &[SampleScore], b: usize, already_labeled: &BTreeSet<SampleId>) -> Result<Vec<SampleId>> {
    let candidates: Vec<(SampleId, f64)> = scores
        .iter()
        .filter(|s| !already_labeled.contains(&s.id))
        .map(|s| (s.id, s.u))
        .collect();
    select_smallest(&candidates, b)
}
