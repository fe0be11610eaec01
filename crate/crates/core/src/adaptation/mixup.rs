use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Convex combination of each row with row `perm[i]`, weight `lambda` on the original.
pub fn mixup_with(x: &Tensor, q: &Tensor, lambda: f64, perm: &[usize]) -> Result<(Tensor, Tensor)> {
    if x.rows() != q.rows() || perm.len() != x.rows() {
        return Err(Error::Shape(format!(
            "mixup on {} inputs, {} targets, permutation of {}",
            x.rows(),
            q.rows(),
            perm.len()
        )));
    }
    let mix = |t: &Tensor| {
        let mut out = t.clone();
        out.clear_grad();
        for (i, &j) in perm.iter().enumerate() {
            for (k, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = lambda * t.get(i, k) + (1.0 - lambda) * t.get(j, k);
            }
        }
        out
    };
    Ok((mix(x), mix(q)))
}

/// Mixup with `λ ~ Beta(beta, beta)` and a random pairing. Batches of one
/// sample are returned unchanged.
pub fn mixup_batch<R: Rng + ?Sized>(x: &Tensor, q: &Tensor, beta: f64, rng: &mut R) -> Result<(Tensor, Tensor)> {
    if x.rows() < 2 {
        return Ok((x.clone(), q.clone()));
    }
    let dist = Beta::new(beta, beta).map_err(|e| Error::Argument(format!("mixup beta {beta}: {e}")))?;
    let lambda: f64 = dist.sample(rng);
    let mut perm: Vec<usize> = (0..x.rows()).collect();
    perm.shuffle(rng);
    mixup_with(x, q, lambda, &perm)
}
