//! Padé neuron layers.
//!
//! A Padé neuron of order `[K/L]` computes `P_K(x) / Q_L(x)` with
//!
//! ```text
//! P_K = a0 + sum_{k=1..K} A_k * x^k
//! Q_L = 1  + sum_{k=1..L} B_k * x^k
//! ```
//!
//! where `*` is a convolution (or a matrix product for dense layers) and
//! `x^k` is an elementwise power. The smoothed form
//!
//! ```text
//! (Q_L P_K + Q_{L-1} P_{K-1}) / (Q_L^2 + Q_{L-1}^2)
//! ```
//!
//! reuses the truncated polynomials and, since `Q_0 = 1`, never divides by
//! anything smaller than one when `L = 1`.

mod layer;
mod scalar;
pub mod symbolic;

pub use layer::{
    DenominatorInit, PaLaConfig, PaLaConv, PaLaDense, PaLaDenseConfig, RationalOutput,
};
pub use scalar::{PadeApproximant, ScalarPaon};

use crate::error::{arg_err, Result};
use crate::shifter::ShifterConfig;

/// Numerator order `K` and denominator order `L`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PaonDegree {
    pub k: usize,
    pub l: usize,
}

impl PaonDegree {
    pub fn new(k: usize, l: usize) -> Result<Self> {
        if k + l == 0 {
            return Err(arg_err!("degree [0/0] has no learnable terms"));
        }
        Ok(Self { k, l })
    }

    /// Degrees the smoothed form accepts: `|K - L| <= 1` or `L = 0`.
    pub fn check_smoothed(&self) -> Result<()> {
        if self.l == 0 || self.k.abs_diff(self.l) <= 1 {
            Ok(())
        } else {
            Err(arg_err!(
                "smoothed form needs |K-L| <= 1 or L = 0, got [{}/{}]",
                self.k,
                self.l
            ))
        }
    }

    /// Number of convolutions (or matrix products) per layer.
    pub fn terms(&self) -> usize {
        self.k + self.l
    }

    /// Highest input power the layer evaluates.
    pub fn max_power(&self) -> usize {
        self.k.max(self.l)
    }

    /// `(numerator, denominator)` degree of the smoothed form as a scalar
    /// rational function: `(K + L, 2L)`, or `(K, 0)` when `L = 0`.
    pub fn effective(&self) -> (usize, usize) {
        if self.l == 0 {
            (self.k, 0)
        } else {
            (self.k + self.l, 2 * self.l)
        }
    }
}

impl std::fmt::Display for PaonDegree {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}/{}]", self.k, self.l)
    }
}

impl std::str::FromStr for PaonDegree {
    type Err = crate::Error;

    /// Parses `K/L`, optionally in brackets.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().trim_start_matches('[').trim_end_matches(']');
        let (k, l) = t
            .split_once('/')
            .ok_or_else(|| arg_err!("degree `{s}` is not of the form K/L"))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| arg_err!("degree `{s}` is not of the form K/L"))
        };
        Self::new(parse(k)?, parse(l)?)
    }
}

/// Which classical neuron model a Padé configuration collapses to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NeuronFamily {
    Ordinary,
    Quadratic,
    Generative,
    Super,
    Pade,
}

impl std::fmt::Display for NeuronFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            NeuronFamily::Ordinary => "ordinary",
            NeuronFamily::Quadratic => "quadratic",
            NeuronFamily::Generative => "generative",
            NeuronFamily::Super => "super",
            NeuronFamily::Pade => "pade",
        };
        f.write_str(s)
    }
}

pub fn reduce_config(degree: PaonDegree, shifter: Option<&ShifterConfig>) -> NeuronFamily {
    let shifted = shifter.is_some_and(|s| s.is_active());
    match (degree.k, degree.l, shifted) {
        (1, 0, false) => NeuronFamily::Ordinary,
        (2, 0, false) => NeuronFamily::Quadratic,
        (k, 0, false) if k >= 2 => NeuronFamily::Generative,
        (k, 0, true) if k >= 2 => NeuronFamily::Super,
        _ => NeuronFamily::Pade,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_rules() {
        assert!(PaonDegree::new(0, 0).is_err());
        for (k, l, ok) in [
            (1, 1, true),
            (2, 1, true),
            (1, 2, true),
            (3, 0, true),
            (3, 1, false),
            (0, 2, false),
        ] {
            assert_eq!(
                PaonDegree::new(k, l).unwrap().check_smoothed().is_ok(),
                ok,
                "[{k}/{l}]"
            );
        }
        assert_eq!(PaonDegree::new(1, 1).unwrap().effective(), (2, 2));
        assert_eq!(PaonDegree::new(2, 1).unwrap().effective(), (3, 2));
        assert_eq!(PaonDegree::new(2, 0).unwrap().effective(), (2, 0));
        assert_eq!(
            "[2/1]".parse::<PaonDegree>().unwrap(),
            PaonDegree { k: 2, l: 1 }
        );
        assert_eq!("1/0".parse::<PaonDegree>().unwrap().to_string(), "[1/0]");
        assert!("2-1".parse::<PaonDegree>().is_err());
    }

    #[test]
    fn reductions() {
        let d = |k, l| PaonDegree::new(k, l).unwrap();
        let kw = ShifterConfig::kernel_wise(3, 2);
        let off = ShifterConfig::kernel_wise(3, -1);
        let ew = ShifterConfig::element_wise(3, 1);
        assert_eq!(reduce_config(d(1, 0), None), NeuronFamily::Ordinary);
        assert_eq!(reduce_config(d(1, 0), Some(&off)), NeuronFamily::Ordinary);
        assert_eq!(reduce_config(d(2, 0), None), NeuronFamily::Quadratic);
        assert_eq!(reduce_config(d(3, 0), None), NeuronFamily::Generative);
        assert_eq!(reduce_config(d(3, 0), Some(&kw)), NeuronFamily::Super);
        assert_eq!(reduce_config(d(2, 0), Some(&ew)), NeuronFamily::Super);
        assert_eq!(reduce_config(d(1, 1), Some(&ew)), NeuronFamily::Pade);
        assert_eq!(reduce_config(d(1, 0), Some(&kw)), NeuronFamily::Pade);
    }
}
