//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Step used for the central differences.
pub const GRAD_CHECK_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst element.
    pub worst: Option<(usize, usize)>,
    pub elements_checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the gradient of the scalar built by `build` against central
/// differences with step [`GRAD_CHECK_STEP`] on every element of every input.
pub fn grad_check<F>(inputs: &[Tensor<f64>], build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = build(&mut g, &vars)?;
        Ok(g.value(loss).data()[0])
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, elements_checked: 0 };
    let mut probe = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + GRAD_CHECK_STEP;
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = orig - GRAD_CHECK_STEP;
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * GRAD_CHECK_STEP);
            let err = relative_error(analytic[i][j], numeric);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((i, j));
            }
            report.elements_checked += 1;
        }
    }
    Ok(report)
}

/// [`grad_check`] on standard-normal inputs of the given shapes; input `k`
/// is drawn from seed `seed + k`.
pub fn grad_check_random<F>(shapes: &[&[usize]], seed: u64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let inputs = shapes
        .iter()
        .enumerate()
        .map(|(k, s)| Tensor::randn(s, 1.0, seed.wrapping_add(k as u64)))
        .collect::<Result<Vec<_>>>()?;
    grad_check(&inputs, build)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.001) - 0.001 / 1.001).abs() < 1e-15);
        assert!((relative_error(1e-12, 0.0) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // weighted_sum is linear, so the check must be essentially exact ...
        let w = [0.3, -1.2, 2.0];
        let ok = grad_check_random(&[&[3]], 1, |g, v| g.weighted_sum(v[0], &w)).unwrap();
        assert!(ok.max_rel_error < 1e-8, "{ok:?}");
        assert_eq!(ok.elements_checked, 3);
        // ... while relu at exactly 0 has a kink the check can see
        let x = Tensor::new(&[2], vec![0.0, 1.0]).unwrap();
        let kink = grad_check(&[x], |g, v| {
            let r = g.relu(v[0])?;
            Ok(g.sum(r))
        })
        .unwrap();
        assert!(kink.max_rel_error > 0.1);
        assert_eq!(kink.worst, Some((0, 0)));
    }
}
