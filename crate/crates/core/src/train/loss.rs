//! Reconstruction losses.

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// General robust loss `rho(d; alpha, c)`:
/// `|a-2|/a * (((d/c)^2 / |a-2| + 1)^(a/2) - 1)`, with the `a = 2` (half
/// squared error) and `a = 0` (log) limits handled explicitly.
pub fn barron_rho<T: Scalar>(d: T, alpha: T, c: T) -> T {
    let x2 = (d / c) * (d / c);
    let two = T::lit(2.0);
    if alpha == two {
        x2 / two
    } else if alpha == T::zero() {
        (x2 / two + T::one()).ln()
    } else {
        let am2 = (alpha - two).abs();
        am2 / alpha * ((x2 / am2 + T::one()).powf(alpha / two) - T::one())
    }
}

/// Derivative of [`barron_rho`] with respect to `d`.
pub fn barron_drho<T: Scalar>(d: T, alpha: T, c: T) -> T {
    let two = T::lit(2.0);
    let c2 = c * c;
    if alpha == two {
        d / c2
    } else if alpha == T::zero() {
        two * d / (d * d + two * c2)
    } else {
        let am2 = (alpha - two).abs();
        d / c2 * ((d * d / c2) / am2 + T::one()).powf(alpha / two - T::one())
    }
}

/// Mean of [`barron_rho`] over `pred - target`.
pub fn barron_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, alpha: T, c: T) -> Result<T> {
    pred.expect_same_shape(target)?;
    let total: T = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| barron_rho(p - t, alpha, c))
        .sum();
    Ok(total / T::from_usize(pred.len()).unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{grad_check, GradCheckOptions, ParamStore};

    #[test]
    fn zero_residual_is_zero() {
        assert_eq!(barron_rho(0.0, 1.5, 2.0), 0.0);
        let t = Tensor::<f64>::from_fn(vec![5], |i| i as f64).unwrap();
        assert_eq!(barron_loss(&t, &t, 1.5, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn scalar_value_at_alpha_one_and_half() {
        let want = (1.0 / 3.0) * (3f64.powf(0.75) - 1.0);
        assert!((barron_rho(2.0, 1.5, 2.0) - want).abs() < 1e-15);
        assert!((want - 0.4265).abs() < 1e-4);
    }

    #[test]
    fn general_branch_approaches_l2_limit() {
        for d in [-3.0, -0.4, 0.1, 1.0, 2.5] {
            let l2 = 0.5 * (d / 2.0f64).powi(2);
            for alpha in [2.0 - 1e-4, 2.0 + 1e-4] {
                let v = barron_rho(d, alpha, 2.0);
                // the deviation is first order in |alpha - 2|
                assert!(
                    (v - l2).abs() <= 1e-3 * l2.max(1e-3),
                    "{d} {alpha} {v} {l2}"
                );
            }
            assert_eq!(barron_rho(d, 2.0, 2.0), l2);
        }
    }

    #[test]
    fn monotone_and_nonnegative() {
        let mut prev = 0.0;
        for i in 0..200 {
            let d = i as f64 * 0.05;
            let v = barron_rho(d, 1.5, 2.0);
            assert!(v >= prev);
            assert_eq!(v, barron_rho(-d, 1.5, 2.0));
            prev = v;
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        for alpha in [1.5, 0.0, 2.0, -1.0, 4.0] {
            for d in [-2.3, -0.2, 0.05, 1.7] {
                let h = 1e-6;
                let num =
                    (barron_rho(d + h, alpha, 2.0) - barron_rho(d - h, alpha, 2.0)) / (2.0 * h);
                let ana = barron_drho(d, alpha, 2.0);
                assert!(
                    crate::autograd::gradcheck::rel_err(ana, num) < 1e-5,
                    "{alpha} {d}"
                );
            }
        }
    }

    #[test]
    fn tape_loss_gradcheck() {
        let mut store = ParamStore::new();
        let p = store
            .add(
                "pred",
                Tensor::from_fn(vec![2, 3], |i| (i as f64 * 1.3).sin() * 2.0).unwrap(),
            )
            .unwrap();
        let target = Tensor::from_fn(vec![2, 3], |i| (i as f64 * 0.7).cos()).unwrap();
        let report = grad_check(
            &mut store,
            |g, s| {
                let v = g.param(s, p);
                g.barron_loss(v, &target, 1.5, 2.0)
            },
            &GradCheckOptions {
                tol_rel: 1e-5,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.pass, "{report:?}");
    }
}
