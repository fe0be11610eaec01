use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::SampleId;

/// EMA-smoothed embeddings of the labeled anchors, keyed by sample id.
#[derive(Clone, Debug, PartialEq)]
pub struct PersistenceVault {
    momentum: f64,
    dim: usize,
    entries: BTreeMap<SampleId, Vec<f64>>,
}

impl PersistenceVault {
    /// `momentum` is the weight of the newest observation.
    pub fn new(dim: usize, momentum: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::Argument(format!("vault momentum {momentum} outside [0, 1]")));
        }
        Ok(Self {
            momentum,
            dim,
            entries: BTreeMap::new(),
        })
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = SampleId> + '_ {
        self.entries.keys().copied()
    }

    pub fn get(&self, id: SampleId) -> Option<&[f64]> {
        self.entries.get(&id).map(Vec::as_slice)
    }

    /// Anchor embeddings as an n_l×d matrix in ascending id order.
    pub fn anchors(&self) -> Tensor {
        let data: Vec<f64> = self.entries.values().flatten().copied().collect();
        Tensor::new(self.entries.len(), self.dim, data).expect("entries have width dim")
    }

    fn check_rows(&self, ids: &[SampleId], features: &Tensor) -> Result<()> {
        if features.rows() != ids.len() || features.cols() != self.dim {
            return Err(Error::Shape(format!(
                "{} ids with a {}x{} feature block (vault width {})",
                ids.len(),
                features.rows(),
                features.cols(),
                self.dim
            )));
        }
        if !features.is_finite() {
            return Err(Error::State("non-finite anchor features".into()));
        }
        Ok(())
    }

    /// Adds freshly queried anchors with the features of the model that queried them.
    pub fn admit(&mut self, ids: &[SampleId], features: &Tensor) -> Result<()> {
        self.check_rows(ids, features)?;
        let mut seen = std::collections::BTreeSet::new();
        for &id in ids {
            if self.entries.contains_key(&id) || !seen.insert(id) {
                return Err(Error::State(format!("anchor {id} admitted twice")));
            }
        }
        for (i, &id) in ids.iter().enumerate() {
            self.entries.insert(id, features.row(i).to_vec());
        }
        Ok(())
    }

    /// `f̃ ← γ·f + (1−γ)·f̃` for every anchor. `ids` must be exactly the vault's id set.
    pub fn update(&mut self, ids: &[SampleId], features: &Tensor) -> Result<()> {
        self.check_rows(ids, features)?;
        let mut sorted = ids.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != ids.len() || !sorted.iter().copied().eq(self.entries.keys().copied()) {
            return Err(Error::State("vault update ids differ from the anchor set".into()));
        }
        let g = self.momentum;
        for (i, id) in ids.iter().enumerate() {
            let entry = self.entries.get_mut(id).expect("ids checked");
            for (e, &f) in entry.iter_mut().zip(features.row(i)) {
                *e = g * f + (1.0 - g) * *e;
            }
        }
        Ok(())
    }
}
