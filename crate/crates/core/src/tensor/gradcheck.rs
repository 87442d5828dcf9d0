//! Central finite-difference gradient checking.
//!
//! The analytic gradient comes from one reverse-mode sweep; the reference
//! comes from re-running the same computation with each input coordinate
//! nudged by ±h. The two paths share no code beyond the forward function
//! itself, which is what makes the check meaningful.

use super::Tensor;
use crate::error::{Error, Result};

/// Max relative error between the reverse-mode gradient of `f` at `x` and a
/// central finite difference, over every coordinate of `x`:
/// `max_j |analytic_j - fd_j| / max(1, |fd_j|)`.
///
/// `f` must be deterministic and return a scalar tensor. `x` is perturbed as
/// a constant, so `f` may not rely on `x` being a tracked parameter.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    grad_check_subset(f, x, h, &coords)
}

/// Same check restricted to the listed coordinates of `x`; used to keep
/// whole-model sweeps inside a time budget.
pub fn grad_check_subset<F>(f: F, x: &Tensor, h: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if h <= 0.0 {
        return Err(Error::Contract(format!("grad_check step h={h} must be > 0")));
    }
    for &j in coords {
        if j >= x.len() {
            return Err(Error::IndexOutOfRange {
                what: "grad_check coordinate",
                index: j,
                bound: x.len(),
            });
        }
    }

    // Analytic pass on a tracked copy of x.
    let xp = x.detach_param();
    let out = f(&xp)?;
    if out.len() != 1 {
        return Err(Error::Contract(format!(
            "grad_check expects a scalar-valued function, got shape {:?}",
            out.shape()
        )));
    }
    out.backward()?;
    // No gradient means x does not influence f; treat as zeros.
    let analytic = xp.grad().unwrap_or_else(|| vec![0.0; x.len()]);

    let base = x.data().to_vec();
    let shape = x.shape().to_vec();
    let mut max_rel: f64 = 0.0;
    for &j in coords {
        let mut plus = base.clone();
        plus[j] += h;
        let mut minus = base.clone();
        minus[j] -= h;
        let f_plus = f(&Tensor::constant(&shape, plus)?)?.scalar()?;
        let f_minus = f(&Tensor::constant(&shape, minus)?)?.scalar()?;
        let fd = (f_plus - f_minus) / (2.0 * h);
        let rel = (analytic[j] - fd).abs() / fd.abs().max(1.0);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::constant(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let err = grad_check(|_| Ok(Tensor::full(&[1], 5.0)), &x, 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut rng = Rng::seed_from(1);
        let x = Tensor::randn(&[6], &mut rng);
        let err = grad_check(|x| Ok(x.sum_all()), &x, 1e-5).unwrap();
        assert!(err < 1e-10, "err {err}");
    }

    #[test]
    fn rejects_non_scalar_functions() {
        let x = Tensor::zeros(&[3]);
        assert!(grad_check(|x| x.reshape(&[3]), &x, 1e-5).is_err());
    }

    #[test]
    fn rejects_bad_step_and_coords() {
        let x = Tensor::zeros(&[3]);
        assert!(grad_check(|x| Ok(x.sum_all()), &x, 0.0).is_err());
        assert!(grad_check_subset(|x| Ok(x.sum_all()), &x, 1e-5, &[3]).is_err());
    }

    #[test]
    fn catches_a_wrong_gradient() {
        // A deliberately broken derivative: forward is x^2 but an extra
        // detached term shifts the analytic gradient away from 2x.
        let x = Tensor::constant(&[2], vec![1.5, -0.5]).unwrap();
        let err = grad_check(
            |x| {
                let y = x.mul(&x.detach())?; // d/dx treated as x, not 2x
                Ok(y.sum_all())
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err > 1e-2, "expected a large error, got {err}");
    }
}
