use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{ln_clamped, Tensor};
use crate::SampleId;

use super::cas::{bvsb_margin, select_smallest};

/// Query strategy, named by its exact CLI/config string.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Strategy {
    Cas,
    Random,
    EntropyMax,
    EntropyMin,
    LeastConfidence,
    Bvsb,
    KcenterGreedy,
    Kmeans,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::Cas,
        Strategy::Random,
        Strategy::EntropyMax,
        Strategy::EntropyMin,
        Strategy::LeastConfidence,
        Strategy::Bvsb,
        Strategy::KcenterGreedy,
        Strategy::Kmeans,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Cas => "cas",
            Strategy::Random => "random",
            Strategy::EntropyMax => "entropy_max",
            Strategy::EntropyMin => "entropy_min",
            Strategy::LeastConfidence => "least_confidence",
            Strategy::Bvsb => "bvsb",
            Strategy::KcenterGreedy => "kcenter_greedy",
            Strategy::Kmeans => "kmeans",
        }
    }

    /// Whether selection needs embeddings rather than probabilities.
    pub fn uses_features(self) -> bool {
        matches!(self, Strategy::KcenterGreedy | Strategy::Kmeans)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown strategy {s:?}")))
    }
}

impl TryFrom<String> for Strategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> String {
        s.name().to_owned()
    }
}

/// What a baseline can look at: the unlabeled pool (ids aligned with the rows
/// of `probs` / `features`) and the embeddings of already labeled samples.
#[derive(Clone, Copy, Debug)]
pub struct PoolView<'a> {
    pub ids: &'a [SampleId],
    pub probs: Option<&'a Tensor>,
    pub features: Option<&'a Tensor>,
    pub labeled_features: Option<&'a Tensor>,
}

pub fn shannon_entropy(p: &[f64]) -> f64 {
    -p.iter().map(|&v| v * ln_clamped(v)).sum::<f64>()
}

/// Per-sample score of an uncertainty baseline; the query takes the smallest.
///
/// `bvsb` uses the margin of `log p`, i.e. the non-contrastive decoding.
pub fn uncertainty_scores(strategy: Strategy, probs: &Tensor) -> Result<Vec<f64>> {
    let score = |row: &[f64]| -> Result<f64> {
        Ok(match strategy {
            Strategy::EntropyMax => -shannon_entropy(row),
            Strategy::EntropyMin => shannon_entropy(row),
            Strategy::LeastConfidence => row.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Strategy::Bvsb => {
                let logs: Vec<f64> = row.iter().map(|&v| ln_clamped(v)).collect();
                bvsb_margin(&logs)?.value
            }
            other => {
                return Err(Error::Argument(format!(
                    "{other} is not a per-sample uncertainty score"
                )));
            }
        })
    };
    probs.row_iter().map(score).collect()
}

/// Selects `b` ids from the pool with one of the baseline strategies.
pub fn baseline_select(strategy: Strategy, pool: &PoolView<'_>, b: usize, seed: u64) -> Result<Vec<SampleId>> {
    let n = pool.ids.len();
    if b > n {
        return Err(Error::Argument(format!("cannot select {b} from a pool of {n}")));
    }
    let need = |t: Option<&'_ Tensor>, what: &str| -> Result<()> {
        match t {
            Some(t) if t.rows() == n => Ok(()),
            Some(t) => Err(Error::Shape(format!("{what} has {} rows for {n} ids", t.rows()))),
            None => Err(Error::Argument(format!("{strategy} needs {what}"))),
        }
    };
    match strategy {
        Strategy::Cas => Err(Error::Argument(
            "cas is scored through cas_scores, not as a baseline".into(),
        )),
        Strategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(index::sample(&mut rng, n, b).into_iter().map(|i| pool.ids[i]).collect())
        }
        Strategy::EntropyMax | Strategy::EntropyMin | Strategy::LeastConfidence | Strategy::Bvsb => {
            need(pool.probs, "probabilities")?;
            let scores = uncertainty_scores(strategy, pool.probs.expect("checked"))?;
            let cands: Vec<(SampleId, f64)> = pool.ids.iter().copied().zip(scores).collect();
            select_smallest(&cands, b)
        }
        Strategy::KcenterGreedy => {
            need(pool.features, "features")?;
            let picks = kcenter_greedy(pool.features.expect("checked"), pool.labeled_features, b);
            Ok(picks.into_iter().map(|i| pool.ids[i]).collect())
        }
        Strategy::Kmeans => {
            need(pool.features, "features")?;
            let picks = kmeans_representatives(pool.features.expect("checked"), b, seed);
            Ok(picks.into_iter().map(|i| pool.ids[i]).collect())
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the largest value, first index on ties.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Farthest-point traversal. Starts from the labeled set; with no labeled
/// points the first centre is the pool point farthest from the pool mean.
pub fn kcenter_greedy(pool: &Tensor, labeled: Option<&Tensor>, b: usize) -> Vec<usize> {
    let n = pool.rows();
    let mut min_dist = vec![f64::INFINITY; n];
    let mut picked = Vec::with_capacity(b);
    let labeled = labeled.filter(|l| l.rows() > 0);

    match labeled {
        Some(l) => {
            for (i, d) in min_dist.iter_mut().enumerate() {
                *d = l
                    .row_iter()
                    .map(|c| sq_dist(pool.row(i), c))
                    .fold(f64::INFINITY, f64::min);
            }
        }
        None if b > 0 && n > 0 => {
            let mut mean = vec![0.0; pool.cols()];
            for row in pool.row_iter() {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v / n as f64;
                }
            }
            let from_mean: Vec<f64> = pool.row_iter().map(|r| sq_dist(r, &mean)).collect();
            let first = argmax(&from_mean);
            picked.push(first);
            for (i, d) in min_dist.iter_mut().enumerate() {
                *d = sq_dist(pool.row(i), pool.row(first));
            }
            min_dist[first] = f64::NEG_INFINITY;
        }
        None => {}
    }

    while picked.len() < b {
        let next = argmax(&min_dist);
        picked.push(next);
        for (i, d) in min_dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(pool.row(i), pool.row(next)));
        }
        min_dist[next] = f64::NEG_INFINITY;
    }
    picked
}

/// Lloyd's k-means with k-means++ seeding, then the pool point nearest to
/// each centroid (distinct points, centroids in order).
pub fn kmeans_representatives(pool: &Tensor, k: usize, seed: u64) -> Vec<usize> {
    let n = pool.rows();
    if k == 0 || n == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(pool.row(rng.random_range(0..n)).to_vec());
    let mut d2: Vec<f64> = pool.row_iter().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.push(pool.row(next).to_vec());
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(pool.row(i), &centroids[centroids.len() - 1]));
        }
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, a) in assign.iter_mut().enumerate() {
            let row = pool.row(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, cen) in centroids.iter().enumerate() {
                let d = sq_dist(row, cen);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; pool.cols()]; k];
        let mut counts = vec![0usize; k];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(pool.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            // Empty clusters keep their previous centroid.
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }

    let mut taken = vec![false; n];
    let mut picks = Vec::with_capacity(k);
    for cen in &centroids {
        let mut best = None;
        let mut best_d = f64::INFINITY;
        for (i, _) in taken.iter().enumerate().filter(|(_, t)| !**t) {
            let d = sq_dist(pool.row(i), cen);
            if d < best_d {
                best_d = d;
                best = Some(i);
            }
        }
        if let Some(i) = best {
            taken[i] = true;
            picks.push(i);
        }
    }
    picks
}
