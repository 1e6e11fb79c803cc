//! Exact integer polynomials for checking the degree structure of the
//! scalar Padé forms.

use std::ops::{Add, Mul};

/// Polynomial in one variable with `coeffs[i]` multiplying `x^i`. Trailing
/// zeros are trimmed, so the zero polynomial has no coefficients.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Poly {
    coeffs: Vec<i128>,
}

impl Poly {
    pub fn new(mut coeffs: Vec<i128>) -> Self {
        while coeffs.last() == Some(&0) {
            coeffs.pop();
        }
        Self { coeffs }
    }

    pub fn constant(c: i128) -> Self {
        Self::new(vec![c])
    }

    pub fn coeffs(&self) -> &[i128] {
        &self.coeffs
    }

    /// `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn eval(&self, x: i128) -> i128 {
        self.coeffs.iter().rev().fold(0, |acc, &c| acc * x + c)
    }

    /// Truncation to terms of degree `<= n`.
    pub fn truncate(&self, n: usize) -> Self {
        Self::new(self.coeffs.iter().take(n + 1).copied().collect())
    }
}

impl Add for &Poly {
    type Output = Poly;

    fn add(self, rhs: &Poly) -> Poly {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        let at = |p: &Poly, i: usize| p.coeffs.get(i).copied().unwrap_or(0);
        Poly::new((0..n).map(|i| at(self, i) + at(rhs, i)).collect())
    }
}

impl Mul for &Poly {
    type Output = Poly;

    fn mul(self, rhs: &Poly) -> Poly {
        if self.coeffs.is_empty() || rhs.coeffs.is_empty() {
            return Poly::new(Vec::new());
        }
        let mut out = vec![0i128; self.coeffs.len() + rhs.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in rhs.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly::new(out)
    }
}

/// Numerator and denominator of the scalar smoothed neuron
/// `(Q_L P_K + Q_{L-1} P_{K-1}) / (Q_L^2 + Q_{L-1}^2)` for coefficients
/// `a = [a0, .., aK]` and `b = [b1, .., bL]`. With `L = 0` the pair is
/// `(P_K, 1)`.
pub fn smoothed_expansion(a: &[i128], b: &[i128]) -> (Poly, Poly) {
    let p = Poly::new(a.to_vec());
    let mut qc = vec![1];
    qc.extend_from_slice(b);
    let q = Poly::new(qc);
    let (k, l) = (a.len() - 1, b.len());
    if l == 0 {
        return (p, Poly::constant(1));
    }
    let p_prev = if k == 0 {
        Poly::new(Vec::new())
    } else {
        p.truncate(k - 1)
    };
    let q_prev = q.truncate(l - 1);
    let num = &(&q * &p) + &(&q_prev * &p_prev);
    let den = &(&q * &q) + &(&q_prev * &q_prev);
    (num, den)
}
