use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PaonDegree;
use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::error::{arg_err, Result};
use crate::kernels::ConvSpec;
use crate::metrics::singularity_scan;
use crate::shifter::{Shifter, ShifterConfig};
use crate::tensor::{Scalar, Tensor};

/// Starting values of the denominator weights `B_k`.
///
/// With `Zero`, `Q = 1` at init and a smoothed `[1/1]` layer starts as the
/// affine map `(P_1 + a0) / 2`. Its denominator gradient is then
/// proportional to `a0`, so a layer without bias, or one followed by batch
/// norm (which cancels `a0`), never leaves the affine regime. `FanIn` draws
/// `B_k` like `A_1` and avoids that.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum DenominatorInit {
    #[default]
    Zero,
    FanIn,
}

impl std::str::FromStr for DenominatorInit {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Self::Zero),
            "fan-in" | "fan_in" => Ok(Self::FanIn),
            _ => Err(arg_err!(
                "unknown denominator init `{s}`, expected zero or fan-in"
            )),
        }
    }
}

impl std::fmt::Display for DenominatorInit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Zero => "zero",
            Self::FanIn => "fan-in",
        })
    }
}

/// Convolutional Padé layer settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PaLaConfig {
    pub degree: PaonDegree,
    pub smoothed: bool,
    pub spec: ConvSpec,
    pub bias: bool,
    pub shifter: Option<ShifterConfig>,
    pub den_init: DenominatorInit,
}

impl PaLaConfig {
    pub fn new(degree: PaonDegree, spec: ConvSpec) -> Self {
        Self {
            degree,
            smoothed: true,
            spec,
            bias: true,
            shifter: None,
            den_init: DenominatorInit::Zero,
        }
    }

    pub fn vanilla(mut self) -> Self {
        self.smoothed = false;
        self
    }

    pub fn with_shifter(mut self, shifter: Option<ShifterConfig>) -> Self {
        self.shifter = shifter;
        self
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn with_den_init(mut self, den_init: DenominatorInit) -> Self {
        self.den_init = den_init;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.smoothed {
            self.degree.check_smoothed()?;
        }
        if let Some(s) = &self.shifter {
            s.validate()?;
            if s.channels != self.spec.in_channels {
                return Err(arg_err!(
                    "shifter has {} channels, layer input has {}",
                    s.channels,
                    self.spec.in_channels
                ));
            }
        }
        Ok(())
    }

    /// `(K + L) * C_o * C_i * k^2` weights plus `C_o` bias, plus the
    /// shifter's own parameters.
    pub fn param_count(&self) -> usize {
        let s = &self.spec;
        self.degree.terms() * s.out_channels * s.in_channels * s.kernel * s.kernel
            + if self.bias { s.out_channels } else { 0 }
            + self.shifter.map_or(0, |sh| sh.param_count())
    }
}

/// Dense Padé layer settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PaLaDenseConfig {
    pub degree: PaonDegree,
    pub smoothed: bool,
    pub in_features: usize,
    pub out_features: usize,
    pub bias: bool,
    pub den_init: DenominatorInit,
}

impl PaLaDenseConfig {
    pub fn new(degree: PaonDegree, in_features: usize, out_features: usize) -> Self {
        Self {
            degree,
            smoothed: true,
            in_features,
            out_features,
            bias: true,
            den_init: DenominatorInit::Zero,
        }
    }

    pub fn vanilla(mut self) -> Self {
        self.smoothed = false;
        self
    }

    pub fn with_den_init(mut self, den_init: DenominatorInit) -> Self {
        self.den_init = den_init;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_features == 0 || self.out_features == 0 {
            return Err(arg_err!("dense layer needs nonzero feature counts"));
        }
        if self.smoothed {
            self.degree.check_smoothed()?;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.degree.terms() * self.in_features * self.out_features
            + if self.bias { self.out_features } else { 0 }
    }
}

/// Layer output together with the tensor whose magnitude decides
/// numerical safety: `Q_L` for the vanilla form, `Q_L^2 + Q_{L-1}^2` for
/// the smoothed one, `None` when `L = 0`.
#[derive(Clone, Copy, Debug)]
pub struct RationalOutput {
    pub out: Var,
    pub denominator: Option<Var>,
}

#[derive(Clone, Debug)]
struct Coefficients {
    num: Vec<ParamId>,
    den: Vec<ParamId>,
    bias: Option<ParamId>,
}

impl Coefficients {
    fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        degree: PaonDegree,
        weight_shape: &[usize],
        bias: Option<usize>,
    ) -> Result<Self> {
        let mut add =
            |name: String, shape: &[usize]| store.add(&name, Tensor::zeros(shape.to_vec())?);
        let num = (1..=degree.k)
            .map(|k| add(format!("{prefix}.num.{k}"), weight_shape))
            .collect::<Result<Vec<_>>>()?;
        let den = (1..=degree.l)
            .map(|k| add(format!("{prefix}.den.{k}"), weight_shape))
            .collect::<Result<Vec<_>>>()?;
        let bias = bias
            .map(|c| add(format!("{prefix}.bias"), &[c]))
            .transpose()?;
        Ok(Self { num, den, bias })
    }

    /// First numerator weight uniform in `+-sqrt(1 / fan_in)`, the
    /// denominator weights too with [`DenominatorInit::FanIn`], everything
    /// else zero.
    fn init<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        fan_in: usize,
        den_init: DenominatorInit,
        seed: u64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (1.0 / fan_in as f64).sqrt();
        let (n, d) = (self.num.len(), self.den.len());
        for (i, id) in self
            .num
            .iter()
            .chain(&self.den)
            .chain(&self.bias)
            .enumerate()
        {
            let t = store.get_mut(*id);
            let random_den = den_init == DenominatorInit::FanIn && (n..n + d).contains(&i);
            if (i == 0 && n > 0) || random_den {
                for v in t.data_mut() {
                    *v = T::lit(rng.gen_range(-bound..bound));
                }
            } else {
                *t = t.zeros_like();
            }
        }
    }
}

/// A partial polynomial value on the tape. Constant and bias-only values
/// are kept symbolic so the common `[1/1]` case avoids full-size constants.
#[derive(Clone, Copy, Debug)]
enum Part {
    Zero,
    One,
    Bias(Var),
    Full(Var),
}

fn materialize<T: Scalar>(g: &mut Graph<T>, p: Part, like: Var) -> Result<Var> {
    let shape = g.value(like).shape().to_vec();
    match p {
        Part::Full(v) => Ok(v),
        Part::Zero => Ok(g.constant(Tensor::zeros(shape)?)),
        Part::One => Ok(g.constant(Tensor::ones(shape)?)),
        Part::Bias(b) => {
            let z = g.constant(Tensor::zeros(shape)?);
            g.channel_bias(z, b)
        }
    }
}

fn part_add<T: Scalar>(g: &mut Graph<T>, a: Part, b: Part, like: Var) -> Result<Part> {
    Ok(match (a, b) {
        (Part::Zero, p) | (p, Part::Zero) => p,
        (Part::One, Part::Full(v)) | (Part::Full(v), Part::One) => {
            Part::Full(g.add_scalar(v, T::one())?)
        }
        (Part::Bias(c), Part::Full(v)) | (Part::Full(v), Part::Bias(c)) => {
            Part::Full(g.channel_bias(v, c)?)
        }
        (Part::Full(u), Part::Full(v)) => Part::Full(g.add(u, v)?),
        (a, b) => {
            let (u, v) = (materialize(g, a, like)?, materialize(g, b, like)?);
            Part::Full(g.add(u, v)?)
        }
    })
}

fn part_mul<T: Scalar>(g: &mut Graph<T>, a: Part, b: Part, like: Var) -> Result<Part> {
    Ok(match (a, b) {
        (Part::Zero, _) | (_, Part::Zero) => Part::Zero,
        (Part::One, p) | (p, Part::One) => p,
        (Part::Bias(c), Part::Full(v)) | (Part::Full(v), Part::Bias(c)) => {
            Part::Full(g.channel_scale(v, c)?)
        }
        (Part::Full(u), Part::Full(v)) => Part::Full(g.mul(u, v)?),
        (a, b) => {
            let (u, v) = (materialize(g, a, like)?, materialize(g, b, like)?);
            Part::Full(g.mul(u, v)?)
        }
    })
}

/// Evaluates the rational form given a per-power weight application.
#[allow(clippy::too_many_arguments)]
fn rational<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    name: &str,
    degree: PaonDegree,
    smoothed: bool,
    coef: &Coefficients,
    x: Var,
    mut apply: impl FnMut(&mut Graph<T>, Var, Var) -> Result<Var>,
) -> Result<RationalOutput> {
    let mut powers = vec![x];
    for k in 2..=degree.max_power() {
        powers.push(g.pow(x, k as u32)?);
    }
    let mut num_terms = Vec::with_capacity(degree.k);
    for (k, id) in coef.num.iter().enumerate() {
        let w = g.param(store, *id);
        num_terms.push(apply(g, powers[k], w)?);
    }
    let mut den_terms = Vec::with_capacity(degree.l);
    for (k, id) in coef.den.iter().enumerate() {
        let w = g.param(store, *id);
        den_terms.push(apply(g, powers[k], w)?);
    }
    let like = num_terms
        .first()
        .or(den_terms.first())
        .copied()
        .expect("K + L >= 1");

    // truncated sums: s[j] = sum_{k <= j} terms
    let partial_sums = |g: &mut Graph<T>, terms: &[Var]| -> Result<Vec<Part>> {
        let mut sums = vec![Part::Zero];
        for &t in terms {
            let prev = *sums.last().unwrap();
            sums.push(part_add(g, prev, Part::Full(t), like)?);
        }
        Ok(sums)
    };
    let bias = match coef.bias {
        Some(id) => Part::Bias(g.param(store, id)),
        None => Part::Zero,
    };
    let s_num = partial_sums(g, &num_terms)?;
    let s_den = partial_sums(g, &den_terms)?;
    let k = degree.k;
    let l = degree.l;
    let p_k = part_add(g, s_num[k], bias, like)?;

    if l == 0 {
        let out = materialize(g, p_k, like)?;
        return Ok(RationalOutput {
            out,
            denominator: None,
        });
    }
    let q_l = part_add(g, s_den[l], Part::One, like)?;
    let threshold = g.singularity_threshold();

    if !smoothed {
        let (p, q) = (materialize(g, p_k, like)?, materialize(g, q_l, like)?);
        let scan = singularity_scan(g.value(q), threshold);
        g.record_singularity(name, scan.count, scan.min_abs);
        let out = g.div_guarded(p, q)?;
        return Ok(RationalOutput {
            out,
            denominator: Some(q),
        });
    }

    // P_{-1} = 0 when K = 0
    let p_prev = if k == 0 {
        Part::Zero
    } else {
        part_add(g, s_num[k - 1], bias, like)?
    };
    let q_prev = part_add(g, s_den[l - 1], Part::One, like)?;
    let a = part_mul(g, q_l, p_k, like)?;
    let b = part_mul(g, q_prev, p_prev, like)?;
    let num = part_add(g, a, b, like)?;
    let q_l_sq = part_mul(g, q_l, q_l, like)?;
    let q_prev_sq = match q_prev {
        Part::One => Part::One,
        p => part_mul(g, p, p, like)?,
    };
    let den = part_add(g, q_l_sq, q_prev_sq, like)?;
    let (num, den) = (materialize(g, num, like)?, materialize(g, den, like)?);
    let scan = singularity_scan(g.value(den), threshold);
    g.record_singularity(name, scan.count, scan.min_abs);
    let out = g.div(num, den)?;
    Ok(RationalOutput {
        out,
        denominator: Some(den),
    })
}

/// Convolutional Padé layer.
#[derive(Clone, Debug)]
pub struct PaLaConv {
    name: String,
    cfg: PaLaConfig,
    coef: Coefficients,
    shifter: Option<Shifter>,
}

impl PaLaConv {
    /// Registers the layer under `prefix` and initializes it from `seed`.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: PaLaConfig,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let coef = Coefficients::register(
            store,
            prefix,
            cfg.degree,
            &cfg.spec.weight_shape(),
            cfg.bias.then_some(cfg.spec.out_channels),
        )?;
        let shifter = cfg
            .shifter
            .map(|s| Shifter::new(store, &format!("{prefix}.shifter"), s))
            .transpose()?;
        let layer = Self {
            name: prefix.to_string(),
            cfg,
            coef,
            shifter,
        };
        layer.init(store, seed);
        Ok(layer)
    }

    /// Resets the weights: first numerator weight uniform in
    /// `+-sqrt(1 / (C_i k^2))`, all other coefficients zero, so `Q = 1`.
    /// Shifter parameters are left as they are.
    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, seed: u64) {
        let s = &self.cfg.spec;
        self.coef.init(
            store,
            s.in_channels * s.kernel * s.kernel,
            self.cfg.den_init,
            seed,
        );
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn config(&self) -> &PaLaConfig {
        &self.cfg
    }

    pub fn numerator(&self) -> &[ParamId] {
        &self.coef.num
    }

    pub fn denominator(&self) -> &[ParamId] {
        &self.coef.den
    }

    pub fn bias(&self) -> Option<ParamId> {
        self.coef.bias
    }

    pub fn shifter(&self) -> Option<&Shifter> {
        self.shifter.as_ref()
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        Ok(self.forward_parts(g, store, x)?.out)
    }

    pub fn forward_parts<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<RationalOutput> {
        let (_, c, _, _) = g.value(x).dims4()?;
        if c != self.cfg.spec.in_channels {
            return Err(arg_err!(
                "layer {} expects {} channels, got {c}",
                self.name,
                self.cfg.spec.in_channels
            ));
        }
        let x = match &self.shifter {
            Some(s) => s.forward(g, store, x)?,
            None => x,
        };
        let spec = self.cfg.spec;
        rational(
            g,
            store,
            &self.name,
            self.cfg.degree,
            self.cfg.smoothed,
            &self.coef,
            x,
            |g, xk, w| g.conv2d(xk, w, None, spec),
        )
    }

    pub fn param_count(&self) -> usize {
        self.cfg.param_count()
    }
}

/// Fully-connected Padé layer over `(N, F)` features.
#[derive(Clone, Debug)]
pub struct PaLaDense {
    name: String,
    cfg: PaLaDenseConfig,
    coef: Coefficients,
}

impl PaLaDense {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: PaLaDenseConfig,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let coef = Coefficients::register(
            store,
            prefix,
            cfg.degree,
            &[cfg.out_features, cfg.in_features],
            cfg.bias.then_some(cfg.out_features),
        )?;
        let layer = Self {
            name: prefix.to_string(),
            cfg,
            coef,
        };
        layer.init(store, seed);
        Ok(layer)
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, seed: u64) {
        self.coef
            .init(store, self.cfg.in_features, self.cfg.den_init, seed);
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn config(&self) -> &PaLaDenseConfig {
        &self.cfg
    }

    pub fn numerator(&self) -> &[ParamId] {
        &self.coef.num
    }

    pub fn denominator(&self) -> &[ParamId] {
        &self.coef.den
    }

    pub fn bias(&self) -> Option<ParamId> {
        self.coef.bias
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        Ok(self.forward_parts(g, store, x)?.out)
    }

    pub fn forward_parts<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<RationalOutput> {
        let (_, f) = g.value(x).dims2()?;
        if f != self.cfg.in_features {
            return Err(arg_err!(
                "layer {} expects {} features, got {f}",
                self.name,
                self.cfg.in_features
            ));
        }
        rational(
            g,
            store,
            &self.name,
            self.cfg.degree,
            self.cfg.smoothed,
            &self.coef,
            x,
            |g, xk, w| g.linear(xk, w, None),
        )
    }

    pub fn param_count(&self) -> usize {
        self.cfg.param_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(store: &mut ParamStore<f64>, name: &str, v: f64) {
        let id = store.id(name).unwrap();
        *store.get_mut(id) = store.get(id).map(|_| v);
    }

    fn scalar_layer(k: usize, l: usize, smoothed: bool) -> (ParamStore<f64>, PaLaConv) {
        let mut store = ParamStore::new();
        let mut cfg = PaLaConfig::new(PaonDegree::new(k, l).unwrap(), ConvSpec::new(1, 1, 1));
        cfg.smoothed = smoothed;
        let layer = PaLaConv::new(&mut store, "p", cfg, 0).unwrap();
        (store, layer)
    }

    fn eval(store: &ParamStore<f64>, layer: &PaLaConv, x: f64) -> f64 {
        let mut g = Graph::new();
        let xv = g.constant(Tensor::full(vec![1, 1, 1, 1], x).unwrap());
        let y = layer.forward(&mut g, store, xv).unwrap();
        g.value(y).data()[0]
    }

    #[test]
    fn vanilla_scalar_toy() {
        let (mut s, layer) = scalar_layer(1, 1, false);
        set(&mut s, "p.bias", 0.0);
        set(&mut s, "p.num.1", 1.0);
        set(&mut s, "p.den.1", 1.0);
        assert_eq!(eval(&s, &layer, 1.0), 0.5);
    }

    #[test]
    fn smoothed_scalar_toy() {
        let (mut s, layer) = scalar_layer(1, 1, true);
        set(&mut s, "p.num.1", 1.0);
        set(&mut s, "p.den.1", 0.0);
        assert_eq!(eval(&s, &layer, 2.0), 1.0);
        set(&mut s, "p.den.1", 1.0);
        // (Q1 P1 + P0) / (Q1^2 + 1) at x = 1
        assert!((eval(&s, &layer, 1.0) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn k_zero_smoothed_is_bias_over_q() {
        let (mut s, layer) = scalar_layer(0, 1, true);
        set(&mut s, "p.bias", 3.0);
        set(&mut s, "p.den.1", 2.0);
        // (Q1 a0 + Q0 * 0) / (Q1^2 + 1) with Q1 = 1 + 2x
        let x: f64 = 0.5;
        let q = 1.0 + 2.0 * x;
        assert!((eval(&s, &layer, x) - 3.0 * q / (q * q + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn parameter_count_law() {
        for (k, l) in [(1, 0), (2, 0), (1, 1), (2, 1), (2, 2), (0, 1)] {
            for (ci, co, ks) in [(3, 5, 3), (2, 2, 1), (4, 1, 5)] {
                let mut store = ParamStore::<f64>::new();
                let mut cfg =
                    PaLaConfig::new(PaonDegree::new(k, l).unwrap(), ConvSpec::new(ci, co, ks));
                cfg.smoothed = false;
                let layer = PaLaConv::new(&mut store, "p", cfg, 1).unwrap();
                assert_eq!(store.count(), (k + l) * co * ci * ks * ks + co);
                assert_eq!(layer.param_count(), store.count());
            }
        }
    }

    #[test]
    fn init_is_seeded_and_leaves_q_at_one() {
        let build = |seed| {
            let mut store = ParamStore::<f64>::new();
            let cfg = PaLaConfig::new(PaonDegree::new(2, 1).unwrap(), ConvSpec::new(3, 4, 3));
            PaLaConv::new(&mut store, "p", cfg, seed).unwrap();
            store
        };
        let (a, b, c) = (build(7), build(7), build(8));
        let bound = (1.0f64 / 27.0).sqrt();
        for ((_, pa), (_, pb)) in a.iter().zip(b.iter()) {
            assert_eq!(pa.value, pb.value);
        }
        let n1 = a.get(a.id("p.num.1").unwrap());
        assert!(n1.data().iter().all(|v| v.abs() < bound));
        assert!(n1.max_abs() > 0.5 * bound);
        assert_ne!(n1, c.get(c.id("p.num.1").unwrap()));
        for name in ["p.num.2", "p.den.1", "p.bias"] {
            assert_eq!(a.get(a.id(name).unwrap()).max_abs(), 0.0);
        }
    }

    #[test]
    fn zero_denominators_stall_behind_batch_norm() {
        // d(loss)/d(B) is proportional to a0, and batch norm zeroes the
        // gradient of a per-channel constant, so B never moves from zero.
        let grad_norm = |den_init| {
            let mut store = ParamStore::<f64>::new();
            let cfg = PaLaConfig::new(PaonDegree::new(1, 1).unwrap(), ConvSpec::new(2, 3, 3))
                .without_bias()
                .with_den_init(den_init);
            let layer = PaLaConv::new(&mut store, "p", cfg, 3).unwrap();
            let bn = crate::nn::BatchNorm2d::new(&mut store, "bn", 3).unwrap();
            let mut g = Graph::new();
            let x = g.constant(
                Tensor::from_fn(vec![2, 2, 5, 5], |i| ((i * 29 % 17) as f64 / 17.0) - 0.5).unwrap(),
            );
            let h = layer.forward(&mut g, &store, x).unwrap();
            let h = bn.forward(&mut g, &store, h).unwrap();
            let target =
                Tensor::from_fn(vec![2, 3, 5, 5], |i| ((i * 7 % 11) as f64 / 11.0) - 0.5).unwrap();
            let loss = g.mse_loss(h, &target).unwrap();
            g.backward(loss).unwrap();
            let id = store.id("p.den.1").unwrap();
            g.param_grads()
                .into_iter()
                .find(|(p, _)| *p == id)
                .map_or(0.0, |(_, t)| t.max_abs())
        };
        assert!(grad_norm(DenominatorInit::Zero) < 1e-12);
        assert!(grad_norm(DenominatorInit::FanIn) > 1e-4);
    }

    #[test]
    fn shifter_channels_must_match() {
        let mut store = ParamStore::<f64>::new();
        let cfg = PaLaConfig::new(PaonDegree::new(1, 1).unwrap(), ConvSpec::new(3, 4, 3))
            .with_shifter(Some(ShifterConfig::element_wise(4, 1)));
        assert!(PaLaConv::new(&mut store, "p", cfg, 0).is_err());
        let bad = PaLaConfig::new(PaonDegree::new(3, 1).unwrap(), ConvSpec::new(3, 4, 3));
        assert!(PaLaConv::new(&mut store, "q", bad, 0).is_err());
        assert!(PaLaConv::new(&mut store, "q", bad.vanilla(), 0).is_ok());
    }

    #[test]
    fn singularities_are_logged_per_layer() {
        let (mut s, layer) = scalar_layer(1, 1, false);
        set(&mut s, "p.num.1", 1.0);
        set(&mut s, "p.den.1", -1.0);
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 1, 1, 3], vec![0.0, 0.995, 1.0]).unwrap());
        let out = layer.forward(&mut g, &s, x).unwrap();
        assert!(g.value(out).all_finite());
        let ev = g.singularities();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].layer, "p");
        assert_eq!(ev[0].count, 2);
        assert_eq!(g.clamp_events(), 1);

        let (s2, smooth) = scalar_layer(1, 1, true);
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 1, 1, 3], vec![0.0, 0.995, 1.0]).unwrap());
        smooth.forward(&mut g, &s2, x).unwrap();
        assert_eq!(g.singularities()[0].count, 0);
    }

    #[test]
    fn dense_matches_conv_on_unit_spatial() {
        let degree = PaonDegree::new(2, 1).unwrap();
        let mut sc = ParamStore::<f64>::new();
        let conv = PaLaConv::new(
            &mut sc,
            "c",
            PaLaConfig::new(degree, ConvSpec::new(4, 3, 1)),
            3,
        )
        .unwrap();
        let mut sd = ParamStore::<f64>::new();
        let dense = PaLaDense::new(&mut sd, "d", PaLaDenseConfig::new(degree, 4, 3), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for ((_, pc), (id, _)) in sc.clone().iter().zip(sd.clone().iter()) {
            let v: Vec<f64> = (0..pc.value.len())
                .map(|_| rng.gen_range(-0.5..0.5))
                .collect();
            *sc.get_mut(sc.id(&pc.name).unwrap()) =
                Tensor::new(pc.value.shape().to_vec(), v.clone()).unwrap();
            let shape = sd.get(id).shape().to_vec();
            *sd.get_mut(id) = Tensor::new(shape, v).unwrap();
        }
        let xv = Tensor::from_fn(vec![5, 4], |i| ((i * 7) % 11) as f64 / 11.0 - 0.4).unwrap();
        let mut g = Graph::new();
        let x2 = g.constant(xv.clone());
        let yd = dense.forward(&mut g, &sd, x2).unwrap();
        // a graph memoizes parameters by id, so each store gets its own
        let mut h = Graph::new();
        let x4 = h.constant(xv.reshape(vec![5, 4, 1, 1]).unwrap());
        let yc = conv.forward(&mut h, &sc, x4).unwrap();
        let yc = h.value(yc).clone().reshape(vec![5, 3]).unwrap();
        assert!(g.value(yd).max_abs_diff(&yc).unwrap() < 1e-14);
    }
}
