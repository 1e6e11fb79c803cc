//! Seeded synthetic datasets: rational teachers in one dimension, textured
//! images for super-resolution and shape images for classification.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{arg_err, Result};
use crate::paon::ScalarPaon;
use crate::tensor::Tensor;

/// Samples of a scalar teacher.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherData {
    /// Uniform grid including both interval ends.
    pub train_x: Vec<f64>,
    pub train_y: Vec<f64>,
    /// Uniform random points drawn from `seed`.
    pub test_x: Vec<f64>,
    pub test_y: Vec<f64>,
}

pub fn gen_teacher_1d(
    n: usize,
    seed: u64,
    teacher: &ScalarPaon,
    interval: (f64, f64),
) -> Result<TeacherData> {
    let (lo, hi) = interval;
    if n < 2 || !(hi > lo) {
        return Err(arg_err!(
            "need n >= 2 and a non-empty interval, got {n} on [{lo}, {hi}]"
        ));
    }
    let train_x: Vec<f64> = (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let test_x: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..=hi)).collect();
    let eval = |xs: &[f64]| xs.iter().map(|&x| teacher.eval(x)).collect();
    Ok(TeacherData {
        train_y: eval(&train_x),
        test_y: eval(&test_x),
        train_x,
        test_x,
    })
}

/// A low-resolution input and its high-resolution target, both `(3, h, w)`
/// in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SrPair {
    pub lr: Tensor<f64>,
    pub hr: Tensor<f64>,
    pub scale: usize,
}

/// Catmull-Rom style cubic kernel with `a = -0.5`.
pub fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x.powi(3) - (A + 3.0) * x.powi(2) + 1.0
    } else if x < 2.0 {
        A * x.powi(3) - 5.0 * A * x.powi(2) + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

/// Antialiased bicubic resampling weights for shrinking `n` samples by
/// `factor`, edge-replicated: one `(indices, weights)` list per output.
fn shrink_weights(n: usize, factor: usize) -> Vec<Vec<(usize, f64)>> {
    let f = factor as f64;
    (0..n / factor)
        .map(|o| {
            let center = (o as f64 + 0.5) * f - 0.5;
            let lo = (center - 2.0 * f).ceil() as isize;
            let hi = (center + 2.0 * f).floor() as isize;
            let mut taps: Vec<(usize, f64)> = (lo..=hi)
                .map(|j| {
                    (
                        j.clamp(0, n as isize - 1) as usize,
                        cubic((j as f64 - center) / f),
                    )
                })
                .filter(|&(_, w)| w != 0.0)
                .collect();
            let s: f64 = taps.iter().map(|t| t.1).sum();
            for t in &mut taps {
                t.1 /= s;
            }
            taps
        })
        .collect()
}

/// Bicubic downsampling of a `(C, H, W)` image by an integer factor.
pub fn bicubic_downsample(img: &Tensor<f64>, factor: usize) -> Result<Tensor<f64>> {
    let (c, h, w) = match img.shape() {
        [c, h, w] => (*c, *h, *w),
        s => return Err(arg_err!("expected a (C,H,W) image, got {s:?}")),
    };
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(arg_err!("{h}x{w} is not divisible by {factor}"));
    }
    let (oh, ow) = (h / factor, w / factor);
    let wx = shrink_weights(w, factor);
    let wy = shrink_weights(h, factor);
    let src = img.data();
    let mut rows = vec![0.0; c * h * ow];
    for p in 0..c * h {
        for (o, taps) in wx.iter().enumerate() {
            rows[p * ow + o] = taps.iter().map(|&(j, wt)| wt * src[p * w + j]).sum();
        }
    }
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for (o, taps) in wy.iter().enumerate() {
            for x in 0..ow {
                out[(ch * oh + o) * ow + x] = taps
                    .iter()
                    .map(|&(j, wt)| wt * rows[(ch * h + j) * ow + x])
                    .sum();
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Mean of squared samples.
pub fn mean_power(t: &Tensor<f64>) -> f64 {
    t.data().iter().map(|v| v * v).sum::<f64>() / t.len() as f64
}

fn point_in_polygon(px: f64, py: f64, poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn texture(size: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let hw = size * size;
    let mut data = vec![0.0; 3 * hw];
    let base: [f64; 3] = [
        rng.gen_range(-0.5..0.5),
        rng.gen_range(-0.5..0.5),
        rng.gen_range(-0.5..0.5),
    ];
    for (c, b) in base.iter().enumerate() {
        data[c * hw..(c + 1) * hw].fill(*b);
    }
    for _ in 0..rng.gen_range(2..=4) {
        let freq = rng.gen_range(0.04..0.4) * std::f64::consts::TAU;
        let theta = rng.gen_range(0.0..std::f64::consts::PI);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let amp = rng.gen_range(0.1..0.5);
        let tint: [f64; 3] = [
            rng.gen_range(0.2..1.0),
            rng.gen_range(0.2..1.0),
            rng.gen_range(0.2..1.0),
        ];
        let (cx, cy) = (theta.cos() * freq, theta.sin() * freq);
        for y in 0..size {
            for x in 0..size {
                let v = amp * (cx * x as f64 + cy * y as f64 + phase).sin();
                for c in 0..3 {
                    data[c * hw + y * size + x] += tint[c] * v;
                }
            }
        }
    }
    let s = size as f64;
    for _ in 0..rng.gen_range(1..=3) {
        let (cx, cy) = (rng.gen_range(0.0..s), rng.gen_range(0.0..s));
        let r = rng.gen_range(0.1 * s..0.4 * s);
        let sides = rng.gen_range(3..=6);
        let rot = rng.gen_range(0.0..std::f64::consts::TAU);
        let poly: Vec<(f64, f64)> = (0..sides)
            .map(|k| {
                let a = rot + std::f64::consts::TAU * k as f64 / sides as f64;
                (cx + r * a.cos(), cy + r * a.sin())
            })
            .collect();
        let color: [f64; 3] = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        for y in 0..size {
            for x in 0..size {
                if point_in_polygon(x as f64 + 0.5, y as f64 + 0.5, &poly) {
                    for c in 0..3 {
                        data[c * hw + y * size + x] = color[c];
                    }
                }
            }
        }
    }
    for v in &mut data {
        *v = v.clamp(-1.0, 1.0);
    }
    Tensor::new(vec![3, size, size], data).expect("valid shape")
}

/// Procedural high-resolution textures (sinusoid mixtures with filled
/// polygons) and their bicubic low-resolution versions. Every image has
/// mean power within `[0.05, 1]`.
pub fn gen_sr_textures(count: usize, size: usize, scale: usize, seed: u64) -> Result<Vec<SrPair>> {
    if scale == 0 || size % scale != 0 {
        return Err(arg_err!("size {size} is not divisible by scale {scale}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let hr = texture(size, &mut rng);
        if !(0.05..=1.0).contains(&mean_power(&hr)) {
            continue;
        }
        let lr = bicubic_downsample(&hr, scale)?;
        out.push(SrPair { lr, hr, scale });
    }
    Ok(out)
}

pub const SHAPE_CLASSES: [&str; 10] = [
    "disk", "square", "triangle", "cross", "ring", "hstripes", "vstripes", "dstripes", "checker",
    "dots",
];

fn shape_mask(class: usize, x: f64, y: f64, cx: f64, cy: f64, r: f64, period: f64) -> bool {
    let (dx, dy) = (x - cx, y - cy);
    let d = (dx * dx + dy * dy).sqrt();
    let inside = dx.abs() <= r && dy.abs() <= r;
    let stripe = |v: f64| (v / period).rem_euclid(2.0) < 1.0;
    match class {
        0 => d <= r,
        1 => inside,
        2 => dy <= r && dy >= -r && dx.abs() <= (dy + r) * 0.5,
        3 => (dx.abs() <= r * 0.3 && dy.abs() <= r) || (dy.abs() <= r * 0.3 && dx.abs() <= r),
        4 => d <= r && d >= r * 0.6,
        5 => inside && stripe(dy + r),
        6 => inside && stripe(dx + r),
        7 => inside && stripe((dx + dy) / std::f64::consts::SQRT_2 + 2.0 * r),
        8 => inside && (stripe(dx + r) ^ stripe(dy + r)),
        9 => {
            inside
                && ((dx + r).rem_euclid(2.0 * period) < period
                    && (dy + r).rem_euclid(2.0 * period) < period)
        }
        _ => false,
    }
}

/// Ten-class synthetic image set `(N, 3, size, size)` in `[-1, 1]`: one
/// randomly placed, sized and colored shape per image on a noisy
/// background. Classes are balanced and interleaved.
pub fn gen_shapes(count: usize, size: usize, seed: u64) -> Result<(Tensor<f64>, Vec<usize>)> {
    if size < 8 {
        return Err(arg_err!("shape images need at least 8x8 pixels"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hw = size * size;
    let s = size as f64;
    let mut data = Vec::with_capacity(count * 3 * hw);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let class = i % SHAPE_CLASSES.len();
        let bg: [f64; 3] = [
            rng.gen_range(-1.0..0.0),
            rng.gen_range(-1.0..0.0),
            rng.gen_range(-1.0..0.0),
        ];
        let fg: [f64; 3] = [
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..1.0),
        ];
        let r = rng.gen_range(0.25 * s..0.4 * s);
        let cx = rng.gen_range(r..s - r);
        let cy = rng.gen_range(r..s - r);
        let period = rng.gen_range(1.5..3.0);
        let mut img = vec![0.0; 3 * hw];
        for y in 0..size {
            for x in 0..size {
                let on = shape_mask(class, x as f64 + 0.5, y as f64 + 0.5, cx, cy, r, period);
                for c in 0..3 {
                    let v = if on { fg[c] } else { bg[c] };
                    img[c * hw + y * size + x] = (v + rng.gen_range(-0.1..0.1)).clamp(-1.0, 1.0);
                }
            }
        }
        data.extend(img);
        labels.push(class);
    }
    Ok((Tensor::new(vec![count, 3, size, size], data)?, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn teacher_samples() {
        let t = ScalarPaon::new(vec![0.0, 1.0], vec![1.0], true).unwrap();
        let d = gen_teacher_1d(7, 3, &t, (-3.0, 3.0)).unwrap();
        assert_eq!(d.train_x[0], -3.0);
        assert_eq!(d.train_x[6], 3.0);
        assert_eq!(d.train_x[4], 1.0);
        assert!((d.train_y[4] - 0.4).abs() < 1e-15);
        assert_eq!(d, gen_teacher_1d(7, 3, &t, (-3.0, 3.0)).unwrap());
        let affine = ScalarPaon::new(vec![0.5, 2.0], vec![], true).unwrap();
        let a = gen_teacher_1d(5, 0, &affine, (0.0, 1.0)).unwrap();
        for (x, y) in a.train_x.iter().zip(&a.train_y) {
            assert!((y - (0.5 + 2.0 * x)).abs() < 1e-15);
        }
    }

    #[test]
    fn cubic_kernel() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        // weights at quarter offsets sum to one
        let s: f64 = [-1.25, -0.25, 0.75, 1.75].iter().map(|&x| cubic(x)).sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn downsample_preserves_constants_and_shapes() {
        let img = Tensor::full(vec![3, 8, 12], 0.3).unwrap();
        let d = bicubic_downsample(&img, 2).unwrap();
        assert_eq!(d.shape(), &[3, 4, 6]);
        assert!(d.data().iter().all(|v| (v - 0.3).abs() < 1e-12));
        assert!(bicubic_downsample(&img, 5).is_err());
    }

    #[test]
    fn textures() {
        let a = gen_sr_textures(4, 64, 2, 11).unwrap();
        assert_eq!(a[0].lr.shape(), &[3, 32, 32]);
        assert_eq!(a[0].hr.shape(), &[3, 64, 64]);
        assert_eq!(a, gen_sr_textures(4, 64, 2, 11).unwrap());
        for p in &a {
            let pw = mean_power(&p.hr);
            assert!((0.05..=1.0).contains(&pw));
        }
        assert!(gen_sr_textures(1, 30, 4, 0).is_err());
    }

    #[test]
    fn shapes_are_balanced() {
        let (x, y) = gen_shapes(30, 32, 1).unwrap();
        assert_eq!(x.shape(), &[30, 3, 32, 32]);
        for c in 0..10 {
            assert_eq!(y.iter().filter(|&&l| l == c).count(), 3);
        }
        assert!(x.data().iter().all(|v| v.abs() <= 1.0));
    }
}
