//! Central-difference gradient verification.

use alloc::vec::Vec;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Magnitude under which both gradients count as zero and the coordinate is skipped.
pub const SKIP_BELOW: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max over coordinates of `|analytic − numeric| / max(1, |analytic|)`.
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
    /// `(input, coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Compares analytic gradients against `(f(x+h·e) − f(x−h·e)) / 2h`.
///
/// `eval(i, j, offset)` must return `f` with coordinate `j` of input `i`
/// shifted by `offset` and every other coordinate at its base value.
pub fn central_differences(
    analytic: &[&[f64]],
    h: f64,
    mut eval: impl FnMut(usize, usize, f64) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, skipped: 0, worst: None };
    for (i, grad) in analytic.iter().enumerate() {
        for (j, &a) in grad.iter().enumerate() {
            let plus = eval(i, j, h)?;
            let minus = eval(i, j, -h)?;
            let numeric = (plus - minus) / (2.0 * h);
            if a.abs() < SKIP_BELOW && numeric.abs() < SKIP_BELOW {
                report.skipped += 1;
                continue;
            }
            report.checked += 1;
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}

/// Checks the gradient of the scalar computation `f` with respect to every
/// coordinate of every tensor in `inputs`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor<f64>> =
        vars.iter().zip(inputs).map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()))).collect();
    drop(g);

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let slices: Vec<&[f64]> = analytic.iter().map(|t| t.data()).collect();
    central_differences(&slices, h, |i, j, offset| {
        let base = work[i].data()[j];
        work[i].data_mut()[j] = base + offset;
        let mut g = Graph::new();
        let vars: Vec<Var> = work.iter().map(|t| g.input(t.clone())).collect();
        let value = f(&mut g, &vars).map(|out| g.value(out).data()[0]);
        work[i].data_mut()[j] = base;
        value
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sum_of_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::uniform([2, 3, 4, 4], -1.0, 1.0, &mut rng);
        let r = grad_check(
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                Ok(g.sum(sq))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.checked, 96);
    }

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::from_f64([1, 1, 2, 2], &[0.3, -0.1, 2.0, 5.0]);
        let r = grad_check(|g, v| Ok(g.sum(v[0])), &[x], 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-10, "{r:?}");
    }
}
