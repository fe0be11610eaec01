use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor, Var};

use super::PersistenceVault;

/// Weights of the anchor (vault) term and the entropy term in the total loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub beta_vpa: f64,
    pub beta_ent: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta_vpa: 10.0,
            beta_ent: 0.9,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_vpa >= 0.0 && self.beta_ent >= 0.0) {
            return Err(Error::Argument("loss weights must be non-negative".into()));
        }
        Ok(())
    }

    /// `ce + β_vpa·vpa + β_ent·ent` on plain values.
    pub fn combine(&self, ce: f64, vpa: f64, ent: f64) -> f64 {
        ce + self.beta_vpa * vpa + self.beta_ent * ent
    }
}

/// `-(1/n) Σ_i q_iᵀ log p_i` with clamped logs.
pub fn ce_loss(tape: &mut Tape, probs: Var, targets: &Tensor) -> Result<Var> {
    let p = tape.value(probs);
    if p.shape() != targets.shape() {
        return Err(Error::Shape(format!(
            "probabilities {:?} vs targets {:?}",
            p.shape(),
            targets.shape()
        )));
    }
    if p.rows() == 0 {
        return Err(Error::Shape("cross-entropy over an empty batch".into()));
    }
    let n = p.rows() as f64;
    let logp = tape.log_clamped(probs)?;
    let q = tape.constant(targets.clone());
    let prod = tape.mul(q, logp)?;
    let total = tape.sum(prod);
    Ok(tape.scale(total, -1.0 / n))
}

/// Mean Shannon entropy of the rows of a row-stochastic matrix.
pub fn entropy_loss(tape: &mut Tape, probs: Var) -> Result<Var> {
    let n = tape.value(probs).rows();
    if n == 0 {
        return Err(Error::Shape("entropy over an empty batch".into()));
    }
    let logp = tape.log_clamped(probs)?;
    let prod = tape.mul(probs, logp)?;
    let total = tape.sum(prod);
    Ok(tape.scale(total, -1.0 / n as f64))
}

/// Soft assignment of each unlabeled embedding to the anchors:
/// row-wise softmax of cosine similarity divided by `temperature`.
pub fn anchor_assignment(tape: &mut Tape, features_u: Var, anchors: &Tensor, temperature: f64) -> Result<Var> {
    if anchors.rows() == 0 {
        return Err(Error::State("no anchors before the first query round".into()));
    }
    if !(temperature > 0.0) {
        return Err(Error::Argument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let a = tape.constant(anchors.clone());
    let sim = tape.cosine_sim(features_u, a)?;
    let scaled = tape.scale(sim, 1.0 / temperature);
    Ok(tape.softmax_rows(scaled))
}

/// Mean entropy of the anchor assignment against the vault's anchors.
/// The vault is a constant: no gradient reaches it.
pub fn vpa_loss(tape: &mut Tape, features_u: Var, vault: &PersistenceVault, temperature: f64) -> Result<Var> {
    if vault.is_empty() {
        return Err(Error::State("persistence vault is empty".into()));
    }
    let d = anchor_assignment(tape, features_u, &vault.anchors(), temperature)?;
    entropy_loss(tape, d)
}

pub fn total_loss(tape: &mut Tape, ce: Var, vpa: Var, ent: Var, weights: &LossWeights) -> Result<Var> {
    let v = tape.scale(vpa, weights.beta_vpa);
    let e = tape.scale(ent, weights.beta_ent);
    let partial = tape.add(ce, v)?;
    tape.add(partial, e)
}

/// Evaluates [`ce_loss`] on plain tensors.
pub fn ce_loss_value(probs: &Tensor, targets: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(probs.clone());
    let l = ce_loss(&mut tape, p, targets)?;
    tape.value(l).item()
}

/// Evaluates [`entropy_loss`] on plain tensors.
pub fn entropy_loss_value(probs: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(probs.clone());
    let l = entropy_loss(&mut tape, p)?;
    tape.value(l).item()
}

/// Evaluates [`anchor_assignment`] on plain tensors.
pub fn anchor_assignment_value(features_u: &Tensor, anchors: &Tensor, temperature: f64) -> Result<Tensor> {
    let mut tape = Tape::new();
    let f = tape.constant(features_u.clone());
    let d = anchor_assignment(&mut tape, f, anchors, temperature)?;
    Ok(tape.value(d).clone())
}

/// Evaluates [`vpa_loss`] on plain tensors.
pub fn vpa_loss_value(features_u: &Tensor, vault: &PersistenceVault, temperature: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let f = tape.constant(features_u.clone());
    let l = vpa_loss(&mut tape, f, vault, temperature)?;
    tape.value(l).item()
}
