//! Learnable feature shifting in front of a Padé layer.
//!
//! Two mechanisms are provided:
//!
//! * **Kernel-wise**: one `(dx, dy)` per input channel. With `b < 0` the
//!   module is off; with `b > 0` each channel owns two free parameters
//!   limited to `(-b, b)`; with `b = 0` the shift is predicted from the
//!   input by global average pooling, a dense `C -> 2C` map and a scaled
//!   `tanh`.
//! * **Element-wise**: a `k_s x k_s` convolution predicts a `(dx, dy)` per
//!   pixel and channel, giving a `(N, 2C, H, W)` offset map.
//!
//! Offsets pass through `m * tanh(raw / m)` and are applied by bilinear
//! sampling with edge replication. All offset parameters start at zero, so
//! a fresh shifter is the identity.

use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::error::{arg_err, Result};
use crate::kernels::{ConvSpec, PadMode};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShifterKind {
    KernelWise,
    ElementWise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShifterConfig {
    pub kind: ShifterKind,
    /// Shift parameter: `< 0` off (kernel-wise only), `0` data-driven with
    /// the limit derived from the feature size, `> 0` limit in pixels.
    pub b: i32,
    /// Offset-kernel size for the element-wise head.
    pub k_s: usize,
    pub channels: usize,
}

impl ShifterConfig {
    pub fn kernel_wise(channels: usize, b: i32) -> Self {
        Self {
            kind: ShifterKind::KernelWise,
            b,
            k_s: 1,
            channels,
        }
    }

    pub fn element_wise(channels: usize, k_s: usize) -> Self {
        Self {
            kind: ShifterKind::ElementWise,
            b: 0,
            k_s,
            channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_s % 2 == 0 {
            return Err(arg_err!("offset kernel size must be odd, got {}", self.k_s));
        }
        if self.channels == 0 {
            return Err(arg_err!("shifter needs at least one channel"));
        }
        Ok(())
    }

    /// Whether the shifter can move features at all.
    pub fn is_active(&self) -> bool {
        !(self.kind == ShifterKind::KernelWise && self.b < 0)
    }

    pub fn param_count(&self) -> usize {
        let c = self.channels;
        match (self.kind, self.b) {
            (ShifterKind::KernelWise, b) if b < 0 => 0,
            (ShifterKind::KernelWise, b) if b > 0 => 2 * c,
            (ShifterKind::KernelWise, _) => 2 * c * c + 2 * c,
            (ShifterKind::ElementWise, _) => 2 * c * c * self.k_s * self.k_s + 2 * c,
        }
    }
}

/// Largest allowed shift, in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OffsetLimit {
    pub m: f64,
}

impl OffsetLimit {
    /// `m = b` for positive `b`, otherwise `max(h, w) / 4`.
    pub fn new(b: i32, h: usize, w: usize) -> Self {
        let m = if b > 0 {
            b as f64
        } else {
            h.max(w) as f64 / 4.0
        };
        Self { m }
    }
}

/// Outer factor of the bound: `m` shrunk by one epsilon, so offsets stay
/// strictly inside `(-m, m)` even where `tanh` rounds to 1.
fn outer_scale<T: Scalar>(m: f64) -> T {
    T::lit(m) * (T::one() - T::epsilon())
}

/// `m * tanh(raw / m)`, elementwise.
pub fn limit_offsets<T: Scalar>(raw: &Tensor<T>, m: f64) -> Result<Tensor<T>> {
    if !(m > 0.0) {
        return Err(arg_err!("offset limit must be positive, got {m}"));
    }
    let (mm, inv) = (outer_scale::<T>(m), T::lit(1.0 / m));
    Ok(raw.map(|v| mm * (v * inv).tanh()))
}

fn limit_on_tape<T: Scalar>(g: &mut Graph<T>, raw: Var, m: f64) -> Result<Var> {
    if !(m > 0.0) {
        return Err(arg_err!("offset limit must be positive, got {m}"));
    }
    let scaled = g.scale(raw, T::lit(1.0 / m))?;
    let t = g.tanh(scaled)?;
    g.scale(t, outer_scale(m))
}

#[derive(Clone, Debug)]
enum Head {
    Off,
    /// `(C, 2)` raw shifts.
    Fixed(ParamId),
    /// Dense `C -> 2C` on pooled features.
    Pooled {
        w: ParamId,
        b: ParamId,
    },
    /// `k_s x k_s` convolution `C -> 2C`.
    Conv {
        w: ParamId,
        b: ParamId,
    },
}

#[derive(Clone, Debug)]
pub struct Shifter {
    cfg: ShifterConfig,
    head: Head,
}

impl Shifter {
    /// Registers the (zero-initialized) shifter parameters under `prefix`.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: ShifterConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let head = match (cfg.kind, cfg.b) {
            (ShifterKind::KernelWise, b) if b < 0 => Head::Off,
            (ShifterKind::KernelWise, b) if b > 0 => {
                Head::Fixed(store.add(&format!("{prefix}.shift"), Tensor::zeros(vec![c, 2])?)?)
            }
            (ShifterKind::KernelWise, _) => Head::Pooled {
                w: store.add(
                    &format!("{prefix}.offset.weight"),
                    Tensor::zeros(vec![2 * c, c])?,
                )?,
                b: store.add(
                    &format!("{prefix}.offset.bias"),
                    Tensor::zeros(vec![2 * c])?,
                )?,
            },
            (ShifterKind::ElementWise, _) => Head::Conv {
                w: store.add(
                    &format!("{prefix}.offset.weight"),
                    Tensor::zeros(vec![2 * c, c, cfg.k_s, cfg.k_s])?,
                )?,
                b: store.add(
                    &format!("{prefix}.offset.bias"),
                    Tensor::zeros(vec![2 * c])?,
                )?,
            },
        };
        Ok(Self { cfg, head })
    }

    pub fn config(&self) -> &ShifterConfig {
        &self.cfg
    }

    /// Applied offsets `(N, 2C, H, W)`, or `None` when the shifter is off.
    pub fn offsets<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Option<Var>> {
        let (n, c, h, w) = g.value(x).dims4()?;
        if c != self.cfg.channels {
            return Err(arg_err!(
                "shifter built for {} channels, got {c}",
                self.cfg.channels
            ));
        }
        let limit = OffsetLimit::new(self.cfg.b, h, w);
        let off = match &self.head {
            Head::Off => return Ok(None),
            Head::Fixed(id) => {
                let raw = g.param(store, *id);
                let lim = limit_on_tape(g, raw, limit.m)?;
                let row = g.reshape(lim, &[1, 2 * c])?;
                let rows = g.tile_batch(row, n)?;
                g.broadcast_spatial(rows, h, w)?
            }
            Head::Pooled { w: wid, b: bid } => {
                let pooled = g.global_avg_pool(x)?;
                let (wv, bv) = (g.param(store, *wid), g.param(store, *bid));
                let raw = g.linear(pooled, wv, Some(bv))?;
                let lim = limit_on_tape(g, raw, limit.m)?;
                g.broadcast_spatial(lim, h, w)?
            }
            Head::Conv { w: wid, b: bid } => {
                let (wv, bv) = (g.param(store, *wid), g.param(store, *bid));
                let spec = ConvSpec::new(c, 2 * c, self.cfg.k_s).with_padding(PadMode::Replicate);
                let raw = g.conv2d(x, wv, Some(bv), spec)?;
                limit_on_tape(g, raw, limit.m)?
            }
        };
        Ok(Some(off))
    }

    /// Shifted features; the input variable itself when the shifter is off.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        match self.offsets(g, store, x)? {
            None => Ok(x),
            Some(off) => g.bilinear_sample(x, off),
        }
    }

    pub fn param_count(&self) -> usize {
        self.cfg.param_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{grad_check, GradCheckOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn limit_values() {
        let z = Tensor::<f64>::zeros(vec![3]).unwrap();
        assert_eq!(limit_offsets(&z, 2.0).unwrap(), z);
        let one = Tensor::<f64>::ones(vec![1]).unwrap();
        let v = limit_offsets(&one, 64.0).unwrap().data()[0];
        assert!((v - 64.0 * (1.0f64 / 64.0).tanh()).abs() < 1e-15);
        assert!((v - 0.99992).abs() < 1e-5);
        let big = Tensor::<f64>::full(vec![1], 1e6).unwrap();
        let v = limit_offsets(&big, 3.0).unwrap().data()[0];
        assert!(v < 3.0 && v > 2.999);
        let v = limit_offsets(&Tensor::<f32>::full(vec![1], 1e6).unwrap(), 2.25)
            .unwrap()
            .data()[0];
        assert!(v < 2.25 && v > 2.2499);
        assert!(limit_offsets(&one, 0.0).is_err());
        assert!(limit_offsets(&one, -1.0).is_err());
    }

    #[test]
    fn limit_from_feature_size() {
        assert_eq!(OffsetLimit::new(0, 256, 256).m, 64.0);
        assert_eq!(OffsetLimit::new(-3, 48, 64).m, 16.0);
        assert_eq!(OffsetLimit::new(2, 256, 256).m, 2.0);
    }

    #[test]
    fn deactivated_kernel_wise_returns_input() {
        let mut store = ParamStore::<f64>::new();
        let s = Shifter::new(&mut store, "s", ShifterConfig::kernel_wise(2, -1)).unwrap();
        assert_eq!(store.count(), 0);
        let mut g = Graph::new();
        let x = g.constant(random(&[1, 2, 3, 3], 1));
        assert_eq!(s.forward(&mut g, &store, x).unwrap(), x);
    }

    #[test]
    fn zero_init_is_identity_for_every_kind() {
        for cfg in [
            ShifterConfig::kernel_wise(3, 0),
            ShifterConfig::kernel_wise(3, 2),
            ShifterConfig::element_wise(3, 1),
            ShifterConfig::element_wise(3, 3),
        ] {
            let mut store = ParamStore::<f64>::new();
            let s = Shifter::new(&mut store, "s", cfg).unwrap();
            assert_eq!(store.count(), cfg.param_count());
            let xv = random(&[2, 3, 5, 4], 2);
            let mut g = Graph::new();
            let x = g.constant(xv.clone());
            let y = s.forward(&mut g, &store, x).unwrap();
            assert_eq!(g.value(y), &xv);
        }
    }

    #[test]
    fn fixed_shift_moves_a_ramp_by_one_column() {
        let mut store = ParamStore::<f64>::new();
        let s = Shifter::new(&mut store, "s", ShifterConfig::kernel_wise(1, 2)).unwrap();
        // raw such that 2 * tanh(raw / 2) == 1
        let raw = 2.0 * (0.5f64).atanh();
        store.get_mut(store.id("s.shift").unwrap()).data_mut()[0] = raw;
        let ramp = Tensor::from_fn(vec![1, 1, 3, 6], |i| (i % 6) as f64).unwrap();
        let mut g = Graph::new();
        let x = g.constant(ramp.clone());
        let y = s.forward(&mut g, &store, x).unwrap();
        for yy in 0..3 {
            for xx in 0..5 {
                assert!((g.value(y).at4(0, 0, yy, xx) - (xx + 1) as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn offsets_stay_below_limit_for_large_weights() {
        let mut store = ParamStore::<f64>::new();
        let s = Shifter::new(&mut store, "s", ShifterConfig::element_wise(2, 1)).unwrap();
        for (id, p) in store.clone().iter() {
            *store.get_mut(id) = p.value.map(|_| 50.0);
        }
        let mut g = Graph::new();
        let x = g.constant(random(&[1, 2, 8, 12], 3).map(|v| v * 10.0));
        let off = s.offsets(&mut g, &store, x).unwrap().unwrap();
        assert!(g.value(off).data().iter().all(|v| v.abs() < 3.0 + 1e-12));
        assert!(g.value(off).max_abs() > 2.9);
    }

    #[test]
    fn offset_head_gradients() {
        for cfg in [
            ShifterConfig::kernel_wise(2, 0),
            ShifterConfig::kernel_wise(2, 2),
            ShifterConfig::element_wise(2, 3),
        ] {
            let mut store = ParamStore::<f64>::new();
            let s = Shifter::new(&mut store, "s", cfg).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            for (id, p) in store.clone().iter() {
                *store.get_mut(id) = p.value.map(|_| rng.gen_range(-0.8..0.8));
            }
            let xv = random(&[2, 2, 5, 5], 4);
            let wv = random(&[2, 2, 5, 5], 5);
            let report = grad_check(
                &mut store,
                |g, st| {
                    let x = g.constant(xv.clone());
                    let y = s.forward(g, st, x)?;
                    let w = g.constant(wv.clone());
                    let p = g.mul(y, w)?;
                    g.sum(p)
                },
                &GradCheckOptions::default(),
            )
            .unwrap();
            assert!(report.pass, "{cfg:?}: {report:?}");
        }
    }
}
