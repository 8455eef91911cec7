use super::TrainingError;
use crate::compute::Tensor;
use crate::model::{TokenId, PAD};

const LOG_FLOOR: f64 = 1e-12;

/// Label-smoothed cross entropy over probability rows `[L, K]`.
///
/// The smoothed target puts `1 − ε + ε/K` on the reference token and `ε/K`
/// elsewhere. `<pad>` targets are skipped and do not count towards `L`.
pub fn label_smoothed_ce(distributions: &Tensor, targets: &[TokenId], eps: f64) -> Result<f64, TrainingError> {
    if !(0.0..1.0).contains(&eps) {
        return Err(TrainingError::InvalidSmoothing(eps));
    }
    if distributions.rank() != 2 || distributions.rows() != targets.len() {
        return Err(TrainingError::ShapeMismatch(format!(
            "{} targets for distributions of shape {:?}",
            targets.len(),
            distributions.shape()
        )));
    }
    let k = distributions.cols();
    let off = eps / k as f64;
    let (mut total, mut counted) = (0.0, 0usize);
    for (l, &y) in targets.iter().enumerate() {
        if y == PAD {
            continue;
        }
        if y as usize >= k {
            return Err(TrainingError::ShapeMismatch(format!("target {y} outside {k} classes")));
        }
        let row = distributions.row(l);
        let mut s = 0.0;
        for (j, &p) in row.iter().enumerate() {
            let w = if j == y as usize { 1.0 - eps + off } else { off };
            s += w * p.max(LOG_FLOOR).ln();
        }
        total -= s;
        counted += 1;
    }
    Ok(if counted == 0 { 0.0 } else { total / counted as f64 })
}
