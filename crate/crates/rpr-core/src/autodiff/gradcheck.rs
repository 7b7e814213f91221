//! Central finite-difference verification of reverse-mode gradients.

use crate::error::RprError;
use crate::Result;
use ndarray::ArrayD;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Minimum coordinates probed per parameter when subsampling.
pub const MIN_SAMPLED_COORDS: usize = 200;

/// Compares analytic gradients against central finite differences.
///
/// `f` evaluates the scalar objective at a parameter assignment; `ad_grads`
/// are the reverse-mode gradients at `params` (one array per parameter, same
/// shapes). Every coordinate is probed unless `subsample` caps the count per
/// parameter, in which case at least [`MIN_SAMPLED_COORDS`] random coordinates
/// are probed (all of them for small tensors). Returns the maximum relative
/// error |g_ad − g_fd| / max(1, |g_ad|, |g_fd|).
pub fn grad_check<F>(
    f: &F,
    params: &[ArrayD<f64>],
    ad_grads: &[ArrayD<f64>],
    eps: f64,
    subsample: Option<usize>,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&[ArrayD<f64>]) -> Result<f64>,
{
    if params.len() != ad_grads.len() {
        return Err(RprError::InvalidArgument(format!(
            "{} params but {} gradient arrays",
            params.len(),
            ad_grads.len()
        )));
    }
    let mut work: Vec<ArrayD<f64>> = params.to_vec();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;
    for pi in 0..params.len() {
        let len = params[pi].len();
        let coords: Vec<usize> = match subsample {
            Some(cap) if len > cap.max(MIN_SAMPLED_COORDS) => {
                let take = cap.max(MIN_SAMPLED_COORDS);
                let mut all: Vec<usize> = (0..len).collect();
                all.shuffle(&mut rng);
                all.truncate(take);
                all
            }
            _ => (0..len).collect(),
        };
        for ci in coords {
            let base = params[pi].as_slice().unwrap()[ci];
            work[pi].as_slice_mut().unwrap()[ci] = base + eps;
            let plus = f(&work)?;
            work[pi].as_slice_mut().unwrap()[ci] = base - eps;
            let minus = f(&work)?;
            work[pi].as_slice_mut().unwrap()[ci] = base;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(RprError::NumericalError(format!(
                    "non-finite objective while probing parameter {pi} coordinate {ci}"
                )));
            }
            let g_fd = (plus - minus) / (2.0 * eps);
            let g_ad = ad_grads[pi].as_slice().unwrap()[ci];
            if !g_ad.is_finite() {
                return Err(RprError::NumericalError(format!(
                    "non-finite analytic gradient at parameter {pi} coordinate {ci}"
                )));
            }
            let rel = (g_ad - g_fd).abs() / 1.0f64.max(g_ad.abs()).max(g_fd.abs());
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}
