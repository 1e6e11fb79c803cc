use nalgebra::{DMatrix, DVector};

use super::PaonDegree;
use crate::error::{arg_err, Result};

/// A single-input, single-output Padé neuron with plain `f64`
/// coefficients, used for teachers and reference values.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarPaon {
    /// `a0, a1, .., aK`
    pub a: Vec<f64>,
    /// `b1, .., bL`
    pub b: Vec<f64>,
    pub smoothed: bool,
}

impl ScalarPaon {
    pub fn new(a: Vec<f64>, b: Vec<f64>, smoothed: bool) -> Result<Self> {
        if a.is_empty() {
            return Err(arg_err!("numerator needs at least the constant term"));
        }
        let degree = PaonDegree::new(a.len() - 1, b.len())?;
        if smoothed {
            degree.check_smoothed()?;
        }
        Ok(Self { a, b, smoothed })
    }

    pub fn degree(&self) -> PaonDegree {
        PaonDegree {
            k: self.a.len() - 1,
            l: self.b.len(),
        }
    }

    /// Truncated numerator `P_j(x)`; `P_{-1} = 0`.
    pub fn p(&self, j: isize, x: f64) -> f64 {
        if j < 0 {
            return 0.0;
        }
        horner(&self.a[..=(j as usize).min(self.a.len() - 1)], x)
    }

    /// Truncated denominator `Q_j(x)` with `Q_0 = 1`.
    pub fn q(&self, j: usize, x: f64) -> f64 {
        let j = j.min(self.b.len());
        1.0 + x * horner(&self.b[..j], x)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let PaonDegree { k, l } = self.degree();
        if l == 0 {
            return self.p(k as isize, x);
        }
        let (pk, ql) = (self.p(k as isize, x), self.q(l, x));
        if !self.smoothed {
            return pk / ql;
        }
        let (pp, qp) = (self.p(k as isize - 1, x), self.q(l - 1, x));
        (ql * pk + qp * pp) / (ql * ql + qp * qp)
    }

    /// The denominator actually divided by.
    pub fn denominator(&self, x: f64) -> f64 {
        let l = self.b.len();
        if l == 0 {
            return 1.0;
        }
        let ql = self.q(l, x);
        if self.smoothed {
            let qp = self.q(l - 1, x);
            ql * ql + qp * qp
        } else {
            ql
        }
    }
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * x + v)
}

/// Classical `[K/L]` Padé approximant `p(x) / q(x)` with `q(0) = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct PadeApproximant {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl PadeApproximant {
    /// Matches the first `K + L + 1` Taylor coefficients `c` of a function
    /// at zero.
    pub fn from_taylor(c: &[f64], k: usize, l: usize) -> Result<Self> {
        if c.len() < k + l + 1 {
            return Err(arg_err!(
                "[{k}/{l}] approximant needs {} Taylor coefficients",
                k + l + 1
            ));
        }
        let coef = |n: isize| if n < 0 { 0.0 } else { c[n as usize] };
        let mut q = vec![1.0];
        if l > 0 {
            // sum_{j=1..L} q_j c_{K+i-j} = -c_{K+i}, i = 1..L
            let m = DMatrix::from_fn(l, l, |i, j| coef(k as isize + i as isize - j as isize));
            let rhs = DVector::from_fn(l, |i, _| -coef((k + i + 1) as isize));
            let sol = m.lu().solve(&rhs).ok_or_else(|| {
                arg_err!("[{k}/{l}] approximant does not exist for these coefficients")
            })?;
            q.extend(sol.iter());
        }
        let p = (0..=k)
            .map(|i| (0..=i.min(l)).map(|j| q[j] * coef((i - j) as isize)).sum())
            .collect();
        Ok(Self { p, q })
    }

    pub fn eval(&self, x: f64) -> f64 {
        horner(&self.p, x) / horner(&self.q, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn teacher_value() {
        let t = ScalarPaon::new(vec![0.0, 1.0], vec![1.0], true).unwrap();
        assert!((t.eval(1.0) - 0.4).abs() < 1e-15);
        assert_eq!(t.denominator(1.0), 5.0);
        let v = ScalarPaon::new(vec![0.0, 1.0], vec![1.0], false).unwrap();
        assert_eq!(v.eval(1.0), 0.5);
        assert!(ScalarPaon::new(vec![0.0, 1.0, 1.0, 1.0], vec![1.0], true).is_err());
    }

    #[test]
    fn exp_one_one() {
        // exp: [1/1] = (1 + x/2) / (1 - x/2)
        let c = [1.0, 1.0, 0.5, 1.0 / 6.0];
        let a = PadeApproximant::from_taylor(&c, 1, 1).unwrap();
        assert!((a.p[0] - 1.0).abs() < 1e-15 && (a.p[1] - 0.5).abs() < 1e-15);
        assert!((a.q[1] + 0.5).abs() < 1e-15);
        let taylor = 1.0 + 0.5 + 0.125;
        assert!((a.eval(0.5) - 0.5f64.exp()).abs() < (taylor - 0.5f64.exp()).abs());
    }
}
