use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::SampleId;

/// Per-round label counts: the first `B mod R` rounds take one extra label.
pub fn budget_schedule(budget: usize, rounds: usize) -> Result<Vec<usize>> {
    if rounds == 0 || budget < rounds {
        return Err(Error::Argument(format!("budget {budget} cannot cover {rounds} rounds")));
    }
    let base = budget / rounds;
    let extra = budget % rounds;
    Ok((0..rounds).map(|k| base + usize::from(k < extra)).collect())
}

/// Ground-truth labels of the target pool, consulted only for queried ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Oracle {
    labels: BTreeMap<SampleId, usize>,
}

impl Oracle {
    pub fn new(ids: &[SampleId], labels: &[usize]) -> Result<Self> {
        if ids.len() != labels.len() {
            return Err(Error::Shape(format!("{} ids with {} labels", ids.len(), labels.len())));
        }
        Ok(Self {
            labels: ids.iter().copied().zip(labels.iter().copied()).collect(),
        })
    }

    pub fn label(&self, id: SampleId) -> Result<usize> {
        self.labels
            .get(&id)
            .copied()
            .ok_or_else(|| Error::Argument(format!("oracle has no label for sample {id}")))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Partition of the adaptation pool into labeled and unlabeled ids.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetPool {
    unlabeled: BTreeSet<SampleId>,
    labeled: BTreeMap<SampleId, usize>,
    round: usize,
}

impl TargetPool {
    pub fn new(ids: &[SampleId]) -> Result<Self> {
        let unlabeled: BTreeSet<SampleId> = ids.iter().copied().collect();
        if unlabeled.len() != ids.len() {
            return Err(Error::Argument("pool ids are not unique".into()));
        }
        Ok(Self {
            unlabeled,
            labeled: BTreeMap::new(),
            round: 0,
        })
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn unlabeled(&self) -> &BTreeSet<SampleId> {
        &self.unlabeled
    }

    /// Labeled ids with their oracle labels.
    pub fn labeled(&self) -> &BTreeMap<SampleId, usize> {
        &self.labeled
    }

    /// Moves `ids` to the labeled side with labels from `oracle` and advances the round.
    pub fn label(&mut self, ids: &[SampleId], oracle: &Oracle) -> Result<()> {
        let unique: BTreeSet<SampleId> = ids.iter().copied().collect();
        if unique.len() != ids.len() {
            return Err(Error::Argument("query contains duplicate ids".into()));
        }
        if let Some(id) = ids.iter().find(|id| !self.unlabeled.contains(id)) {
            return Err(Error::State(format!("sample {id} is not in the unlabeled pool")));
        }
        for &id in ids {
            let y = oracle.label(id)?;
            self.unlabeled.remove(&id);
            self.labeled.insert(id, y);
        }
        self.round += 1;
        Ok(())
    }
}
