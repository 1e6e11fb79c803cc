//! PSNR on RGB and SSIM on luma, both on the 8-bit scale.

use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{Scalar, Tensor};

/// PSNR reported in CSV files for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Maps `[-1, 1]` to `0..=255`, rounding half away from zero and clamping.
pub fn to_8bit(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

pub fn from_8bit(v: u8) -> f64 {
    v as f64 / 127.5 - 1.0
}

/// `10 log10(peak^2 / MSE)`; `+inf` for identical inputs.
pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(shape_err!(
            "psnr needs equal, non-empty inputs ({} vs {})",
            a.len(),
            b.len()
        ));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// PSNR of two `[-1, 1]` RGB tensors after 8-bit quantization, peak 255.
pub fn psnr_rgb<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.expect_same_shape(b)?;
    let q = |t: &Tensor<T>| -> Vec<f64> {
        t.data()
            .iter()
            .map(|v| to_8bit(v.as_f64()) as f64)
            .collect()
    };
    psnr(&q(a), &q(b), 255.0)
}

pub fn cap_psnr(db: f64) -> f64 {
    db.min(PSNR_CAP_DB)
}

/// Full-range BT.601 luma of an 8-bit RGB image stored as three planes.
pub fn luma(r: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    r.iter()
        .zip(g)
        .zip(b)
        .map(|((r, g), b)| 0.299 * r + 0.587 * g + 0.114 * b)
        .collect()
}

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gaussian_window() -> Vec<f64> {
    let c = (WINDOW / 2) as f64;
    let g: Vec<f64> = (0..WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SIGMA * SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter, valid region only.
fn filter(x: &[f64], h: usize, w: usize, win: &[f64]) -> Vec<f64> {
    let ow = w - WINDOW + 1;
    let oh = h - WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for xo in 0..ow {
            rows[y * ow + xo] = (0..WINDOW).map(|k| win[k] * x[y * w + xo + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for yo in 0..oh {
        for xo in 0..ow {
            out[yo * ow + xo] = (0..WINDOW).map(|k| win[k] * rows[(yo + k) * ow + xo]).sum();
        }
    }
    out
}

/// Mean SSIM of two single-channel images on a `[0, range]` scale.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, range: f64) -> Result<f64> {
    if a.len() != h * w || b.len() != h * w {
        return Err(shape_err!("ssim planes must both have {h}x{w} samples"));
    }
    if h < WINDOW || w < WINDOW {
        return Err(arg_err!(
            "ssim needs at least {WINDOW}x{WINDOW} pixels, got {h}x{w}"
        ));
    }
    let win = gaussian_window();
    let c1 = (K1 * range).powi(2);
    let c2 = (K2 * range).powi(2);
    let prod = |u: &[f64], v: &[f64]| -> Vec<f64> { u.iter().zip(v).map(|(x, y)| x * y).collect() };
    let mu_a = filter(a, h, w, &win);
    let mu_b = filter(b, h, w, &win);
    let aa = filter(&prod(a, a), h, w, &win);
    let bb = filter(&prod(b, b), h, w, &win);
    let ab = filter(&prod(a, b), h, w, &win);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total +=
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / n as f64)
}

fn planes_8bit<T: Scalar>(t: &Tensor<T>) -> Result<(Vec<f64>, usize, usize)> {
    let (h, w) = match t.shape() {
        [3, h, w] | [1, 3, h, w] => (*h, *w),
        s => return Err(shape_err!("expected one RGB image (3,H,W), got {s:?}")),
    };
    let v: Vec<f64> = t
        .data()
        .iter()
        .map(|v| to_8bit(v.as_f64()) as f64)
        .collect();
    let hw = h * w;
    Ok((luma(&v[..hw], &v[hw..2 * hw], &v[2 * hw..]), h, w))
}

/// SSIM on the luma of two `[-1, 1]` RGB images after 8-bit quantization.
pub fn ssim_y<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.expect_same_shape(b)?;
    let (ya, h, w) = planes_8bit(a)?;
    let (yb, _, _) = planes_8bit(b)?;
    ssim_plane(&ya, &yb, h, w, 255.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_fn(vec![3, h, w], |i| {
            let (c, y, x) = (i / (h * w), (i / w) % h, i % w);
            ((x as f64 * 0.9 + c as f64).sin() * (y as f64 * 0.7).cos()).clamp(-1.0, 1.0)
        })
        .unwrap()
    }

    #[test]
    fn quantization_endpoints() {
        assert_eq!(to_8bit(-1.0), 0);
        assert_eq!(to_8bit(1.0), 255);
        assert_eq!(to_8bit(3.0), 255);
        for v in 0..=255u8 {
            assert_eq!(to_8bit(from_8bit(v)), v);
        }
    }

    #[test]
    fn psnr_values() {
        let a = vec![10.0; 12];
        assert_eq!(psnr(&a, &a, 255.0).unwrap(), f64::INFINITY);
        assert_eq!(cap_psnr(f64::INFINITY), 100.0);
        let b: Vec<f64> = a.iter().map(|v| v + 1.0).collect();
        assert!((psnr(&a, &b, 255.0).unwrap() - 48.1308).abs() < 1e-4);
        let c: Vec<f64> = a.iter().map(|v| v + 2.0).collect();
        let drop = psnr(&a, &b, 255.0).unwrap() - psnr(&a, &c, 255.0).unwrap();
        assert!((drop - 6.0206).abs() < 1e-4);
        assert!(psnr(&a, &b[..3], 255.0).is_err());
    }

    #[test]
    fn ssim_properties() {
        let a = textured(24, 20);
        assert!((ssim_y(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let inv = a.map(|v| -v);
        assert!(ssim_y(&a, &inv).unwrap() < 0.1);
        let b = a.map(|v| (v * 0.8 + 0.05).clamp(-1.0, 1.0));
        let (s1, s2) = (ssim_y(&a, &b).unwrap(), ssim_y(&b, &a).unwrap());
        assert!((s1 - s2).abs() < 1e-9);
        assert!(s1 < 1.0 && s1 > 0.5);
        assert!(ssim_y(&textured(8, 30), &textured(8, 30)).is_err());
    }
}
