use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter index, element index) of the worst coordinate.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Relative error floor; below it both gradients count as zero.
const REL_FLOOR: f64 = 1e-6;

/// Compares analytic gradients against central finite differences.
///
/// `loss_and_grad` returns the loss and one gradient per parameter. Only its loss
/// value is used on the perturbed copies. Up to `samples_per_param` coordinates are
/// drawn from each parameter (all of them when it is smaller). The relative error of
/// a coordinate is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn finite_diff_check<F>(
    loss_and_grad: F,
    params: &[Tensor],
    eps: f64,
    samples_per_param: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<(f64, Vec<Vec<f64>>)>,
{
    let (_, analytic) = loss_and_grad(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for (pi, p) in params.iter().enumerate() {
        let coords: Vec<usize> = if p.len() <= samples_per_param {
            (0..p.len()).collect()
        } else {
            (0..samples_per_param).map(|_| rng.gen_range(0..p.len())).collect()
        };
        for j in coords {
            let orig = work[pi].data[j];
            work[pi].data[j] = orig + eps;
            let (plus, _) = loss_and_grad(&work)?;
            work[pi].data[j] = orig - eps;
            let (minus, _) = loss_and_grad(&work)?;
            work[pi].data[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[pi][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst = (pi, j);
            }
        }
    }
    Ok(report)
}
