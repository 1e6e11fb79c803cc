//! Geometric augmentation and additive noise at a target SNR.
//!
//! Geometric transforms are drawn once per sample as an [`AugmentPlan`] so
//! the same plan can be applied to an input and its target.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{arg_err, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub hflip: bool,
    pub vflip: bool,
    pub rot90: bool,
    pub channel_shuffle: bool,
    /// Probability of each enabled transform.
    pub prob: f64,
    /// Additive Gaussian noise SNR in dB; `None` disables noise.
    pub snr_db: Option<f64>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hflip: true,
            vflip: true,
            rot90: true,
            channel_shuffle: true,
            prob: 0.5,
            snr_db: Some(40.0),
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            hflip: false,
            vflip: false,
            rot90: false,
            channel_shuffle: false,
            prob: 0.5,
            snr_db: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AugmentPlan {
    pub hflip: bool,
    pub vflip: bool,
    pub rot90: bool,
    /// Output channel `i` takes input channel `perm[i]`.
    pub channel_perm: Option<Vec<usize>>,
}

impl AugmentPlan {
    pub fn draw(cfg: &AugmentConfig, channels: usize, rng: &mut impl Rng) -> Self {
        let mut coin = |on: bool| on && rng.gen_bool(cfg.prob);
        let hflip = coin(cfg.hflip);
        let vflip = coin(cfg.vflip);
        let rot90 = coin(cfg.rot90);
        let channel_perm = if coin(cfg.channel_shuffle) {
            let mut perm: Vec<usize> = (0..channels).collect();
            for i in (1..channels).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            Some(perm)
        } else {
            None
        };
        Self {
            hflip,
            vflip,
            rot90,
            channel_perm,
        }
    }

    /// Applies the plan to every sample of an `(N, C, H, W)` batch.
    pub fn apply<T: Scalar>(&self, t: &Tensor<T>) -> Result<Tensor<T>> {
        let mut out = t.clone();
        if self.hflip {
            out = hflip(&out)?;
        }
        if self.vflip {
            out = vflip(&out)?;
        }
        if self.rot90 {
            out = rot90(&out)?;
        }
        if let Some(perm) = &self.channel_perm {
            out = permute_channels(&out, perm)?;
        }
        Ok(out)
    }
}

pub fn hflip<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, _, w) = t.dims4()?;
    let mut out = t.clone();
    for row in out.data_mut().chunks_mut(w) {
        row.reverse();
    }
    Ok(out)
}

pub fn vflip<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = t.dims4()?;
    let src = t.data();
    let mut out = t.clone();
    let dst = out.data_mut();
    for plane in 0..n * c {
        for y in 0..h {
            let s = plane * h * w + (h - 1 - y) * w;
            dst[plane * h * w + y * w..plane * h * w + (y + 1) * w].copy_from_slice(&src[s..s + w]);
        }
    }
    Ok(out)
}

/// Counter-clockwise quarter turn of square planes.
pub fn rot90<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = t.dims4()?;
    if h != w {
        return Err(arg_err!("rot90 needs square planes, got {h}x{w}"));
    }
    let src = t.data();
    let mut out = t.clone();
    let dst = out.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..h {
            for x in 0..w {
                dst[base + (w - 1 - x) * w + y] = src[base + y * w + x];
            }
        }
    }
    Ok(out)
}

pub fn permute_channels<T: Scalar>(t: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    let (n, c, h, w) = t.dims4()?;
    if perm.len() != c {
        return Err(arg_err!(
            "permutation of length {} for {c} channels",
            perm.len()
        ));
    }
    let src = t.data();
    let mut out = t.clone();
    let dst = out.data_mut();
    let hw = h * w;
    for b in 0..n {
        for (i, &p) in perm.iter().enumerate() {
            dst[(b * c + i) * hw..(b * c + i + 1) * hw]
                .copy_from_slice(&src[(b * c + p) * hw..(b * c + p + 1) * hw]);
        }
    }
    Ok(out)
}

/// Noise variance for a signal of mean power `power` at `snr_db`.
pub fn noise_variance(power: f64, snr_db: f64) -> f64 {
    power / 10f64.powf(snr_db / 10.0)
}

/// Adds white Gaussian noise to each sample independently, with variance set
/// from that sample's mean power.
pub fn add_noise<T: Scalar>(t: &mut Tensor<T>, snr_db: f64, rng: &mut impl Rng) -> Result<()> {
    if snr_db.is_infinite() && snr_db > 0.0 {
        return Ok(());
    }
    let n = t.shape()[0];
    let per = t.len() / n;
    for sample in t.data_mut().chunks_mut(per) {
        let power = sample.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>() / per as f64;
        let sigma = noise_variance(power, snr_db).sqrt();
        if sigma == 0.0 {
            continue;
        }
        let dist = Normal::new(0.0, sigma).map_err(|e| arg_err!("noise: {e}"))?;
        for v in sample.iter_mut() {
            *v += T::lit(dist.sample(rng));
        }
    }
    Ok(())
}

/// Draws a plan per sample, applies it to `inputs` and `targets` alike, then
/// adds noise to the inputs only.
pub fn augment<T: Scalar>(
    inputs: &Tensor<T>,
    targets: Option<&Tensor<T>>,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    let (n, c, h, w) = inputs.dims4()?;
    let square = h == w
        && targets.map_or(true, |t| {
            let s = t.shape();
            s.len() == 4 && s[2] == s[3]
        });
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let mut plan = AugmentPlan::draw(cfg, c, rng);
        plan.rot90 &= square;
        xs.push(plan.apply(&inputs.slice_batch(i, 1)?)?);
        if let Some(t) = targets {
            ys.push(plan.apply(&t.slice_batch(i, 1)?)?);
        }
    }
    let mut x = Tensor::stack_batch(&xs)?;
    if let Some(snr) = cfg.snr_db {
        add_noise(&mut x, snr, rng)?;
    }
    let y = if targets.is_some() {
        Some(Tensor::stack_batch(&ys)?)
    } else {
        None
    };
    Ok((x, y))
}
