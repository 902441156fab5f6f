//! Central-difference gradient checking.

use super::{example_loss_and_grad, Example};
use crate::error::Result;
use crate::model::Model;

pub const GRAD_CHECK_EPSILON: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Max relative error between `grad` and central differences of `f` at `x`.
pub fn check_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], grad: &[f64], epsilon: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        xp[i] = x[i] + epsilon;
        let fp = f(&xp);
        xp[i] = x[i] - epsilon;
        let fm = f(&xp);
        xp[i] = x[i];
        worst = worst.max(relative_error(grad[i], (fp - fm) / (2.0 * epsilon)));
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupError {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
    pub max_rel_error: f64,
}

/// Compares the analytic gradient of the decoding loss on `example` with
/// central differences for every parameter tensor not listed in `frozen`.
pub fn grad_check(model: &Model<f64>, example: &Example<f64>, epsilon: f64, frozen: &[&str]) -> Result<GradCheckReport> {
    let mut grads = model.params.zeros_like();
    example_loss_and_grad(model, example, &mut grads, 1.0, None)?;

    let mut probe = model.clone();
    let loss_at = |m: &Model<f64>| -> Result<f64> {
        let (scores, _) = m.forward_teacher(&example.encoded, &example.targets.inputs, None)?;
        super::loss::dbce_loss(&scores, &example.targets.targets)
    };

    let names: Vec<String> = model.params.named().into_iter().map(|(n, _)| n).collect();
    let mut groups = Vec::new();
    for (gi, name) in names.iter().enumerate() {
        if frozen.contains(&name.as_str()) {
            groups.push(GroupError {
                name: name.clone(),
                entries: 0,
                max_rel_error: 0.0,
            });
            continue;
        }
        let analytic = grads.named()[gi].1.as_slice().to_vec();
        let mut worst: f64 = 0.0;
        for (i, &a) in analytic.iter().enumerate() {
            let orig = probe.params.named()[gi].1.as_slice()[i];
            probe.params.named_mut()[gi].1.as_mut_slice()[i] = orig + epsilon;
            let fp = loss_at(&probe)?;
            probe.params.named_mut()[gi].1.as_mut_slice()[i] = orig - epsilon;
            let fm = loss_at(&probe)?;
            probe.params.named_mut()[gi].1.as_mut_slice()[i] = orig;
            worst = worst.max(relative_error(a, (fp - fm) / (2.0 * epsilon)));
        }
        groups.push(GroupError {
            name: name.clone(),
            entries: analytic.len(),
            max_rel_error: worst,
        });
    }
    let max_rel_error = groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { groups, max_rel_error })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let a = [[2.0, 0.5, 0.0], [0.5, 1.0, -0.3], [0.0, -0.3, 3.0]];
        let b = [0.1, -1.0, 0.4];
        let f = |x: &[f64]| {
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += 0.5 * x[i] * a[i][j] * x[j];
                }
                s += b[i] * x[i];
            }
            s
        };
        let x = [0.3, -0.7, 1.2];
        let grad: Vec<f64> = (0..3).map(|i| (0..3).map(|j| a[i][j] * x[j]).sum::<f64>() + b[i]).collect();
        assert!(check_gradient(f, &x, &grad, GRAD_CHECK_EPSILON) < 1e-8);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 0.1).abs() < 1e-12);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-12);
    }
}
