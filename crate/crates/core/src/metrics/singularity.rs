use crate::tensor::{Scalar, Tensor};

/// Result of scanning one denominator tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanResult {
    /// Entries with `|q| < threshold`, plus exact zeros.
    pub count: usize,
    pub min_abs: f64,
}

/// Counts near-singular denominator entries. A zero threshold counts only
/// exact zeros.
pub fn singularity_scan<T: Scalar>(q: &Tensor<T>, threshold: f64) -> ScanResult {
    let mut count = 0;
    let mut min_abs = f64::INFINITY;
    for v in q.data() {
        let a = v.as_f64().abs();
        if a < threshold || a == 0.0 {
            count += 1;
        }
        min_abs = min_abs.min(a);
    }
    ScanResult { count, min_abs }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_boundaries() {
        let q = Tensor::new(vec![5], vec![0.0f64, 0.005, -0.009, 0.01, 2.0]).unwrap();
        let r = singularity_scan(&q, 0.01);
        assert_eq!(r.count, 3);
        assert_eq!(r.min_abs, 0.0);
        assert_eq!(singularity_scan(&q, 0.0).count, 1);
        let ones = Tensor::<f32>::ones(vec![4]).unwrap();
        assert_eq!(singularity_scan(&ones, 0.01).count, 0);
    }

    #[test]
    fn crafted_root_in_range() {
        // Q(x) = 1 + b1 x with b1 = -1 has its root at x = 1
        let xs: Vec<f64> = (0..=20).map(|i| i as f64 * 0.1).collect();
        let q = Tensor::new(vec![xs.len()], xs.iter().map(|x| 1.0 - x).collect()).unwrap();
        assert!(singularity_scan(&q, 0.01).count >= 1);
    }
}
