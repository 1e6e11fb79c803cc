//! Classic building blocks: convolution, dense, batch norm and
//! activations, plus a layer type that is either classic or Padé.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{BnUpdate, Graph, ParamId, ParamStore, Var};
use crate::error::{arg_err, Result};
use crate::kernels::{ConvSpec, BN_MOMENTUM};
use crate::paon::{PaLaConfig, PaLaConv};
use crate::tensor::{Scalar, Tensor};

fn uniform<T: Scalar>(store: &mut ParamStore<T>, id: ParamId, bound: f64, rng: &mut impl Rng) {
    for v in store.get_mut(id).data_mut() {
        *v = T::lit(rng.gen_range(-bound..bound));
    }
}

/// Plain convolution with weights uniform in `+-sqrt(1 / fan_in)`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv2d {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        spec: ConvSpec,
        bias: bool,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        let weight = store.add(
            &format!("{prefix}.weight"),
            Tensor::zeros(spec.weight_shape().to_vec())?,
        )?;
        let bias = if bias {
            Some(store.add(
                &format!("{prefix}.bias"),
                Tensor::zeros(vec![spec.out_channels])?,
            )?)
        } else {
            None
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_in = spec.in_channels * spec.kernel * spec.kernel;
        uniform(store, weight, (1.0 / fan_in as f64).sqrt(), &mut rng);
        Ok(Self { spec, weight, bias })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|id| g.param(store, id));
        g.conv2d(x, w, b, self.spec)
    }

    pub fn param_count(&self) -> usize {
        let s = &self.spec;
        s.out_channels * s.in_channels * s.kernel * s.kernel
            + if self.bias.is_some() {
                s.out_channels
            } else {
                0
            }
    }
}

/// `y = x W^T + b` over `(N, F)` features.
#[derive(Clone, Debug)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_features: usize,
        out_features: usize,
        seed: u64,
    ) -> Result<Self> {
        let weight = store.add(
            &format!("{prefix}.weight"),
            Tensor::zeros(vec![out_features, in_features])?,
        )?;
        let bias = store.add(
            &format!("{prefix}.bias"),
            Tensor::zeros(vec![out_features])?,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (1.0 / in_features as f64).sqrt();
        uniform(store, weight, bound, &mut rng);
        uniform(store, bias, bound, &mut rng);
        Ok(Self {
            in_features,
            out_features,
            weight,
            bias,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, Some(b))
    }

    pub fn param_count(&self) -> usize {
        self.out_features * (self.in_features + 1)
    }
}

/// Batch norm with learnable scale and shift and running statistics kept
/// as non-trainable buffers.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm2d {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
    ) -> Result<Self> {
        Ok(Self {
            gamma: store.add(&format!("{prefix}.gamma"), Tensor::ones(vec![channels])?)?,
            beta: store.add(&format!("{prefix}.beta"), Tensor::zeros(vec![channels])?)?,
            running_mean: store.add_buffer(
                &format!("{prefix}.running_mean"),
                Tensor::zeros(vec![channels])?,
            )?,
            running_var: store.add_buffer(
                &format!("{prefix}.running_var"),
                Tensor::ones(vec![channels])?,
            )?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.batch_norm(
            x,
            gamma,
            beta,
            (self.running_mean, store.get(self.running_mean)),
            (self.running_var, store.get(self.running_var)),
        )
    }
}

/// Folds the batch statistics queued by a training graph into the running
/// buffers with momentum [`BN_MOMENTUM`].
pub fn apply_bn_updates<T: Scalar>(store: &mut ParamStore<T>, updates: &[BnUpdate<T>]) {
    let m = T::lit(BN_MOMENTUM);
    let keep = T::one() - m;
    for u in updates {
        for (r, &b) in store
            .get_mut(u.running_mean)
            .data_mut()
            .iter_mut()
            .zip(&u.mean)
        {
            *r = keep * *r + m * b;
        }
        for (r, &b) in store
            .get_mut(u.running_var)
            .data_mut()
            .iter_mut()
            .zip(&u.unbiased_var)
        {
            *r = keep * *r + m * b;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Relu,
    Gelu,
}

impl Activation {
    pub fn apply<T: Scalar>(self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => g.relu(x),
            Activation::Gelu => g.gelu(x),
        }
    }
}

impl FromStr for Activation {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "id" | "identity" | "none" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "gelu" => Ok(Activation::Gelu),
            _ => Err(arg_err!("unknown activation `{s}`")),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Identity => "id",
            Activation::Relu => "relu",
            Activation::Gelu => "gelu",
        })
    }
}

/// What a network position is built from: a plain convolution or a Padé
/// layer with the given settings (the spec inside is replaced per use).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Classic,
    Pala(PaLaConfig),
}

/// A convolution-shaped layer of either kind.
#[derive(Clone, Debug)]
pub enum ConvLayer {
    Classic(Conv2d),
    Pala(Box<PaLaConv>),
}

impl ConvLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        kind: LayerKind,
        spec: ConvSpec,
        bias: bool,
        seed: u64,
    ) -> Result<Self> {
        match kind {
            LayerKind::Classic => Ok(ConvLayer::Classic(Conv2d::new(
                store, prefix, spec, bias, seed,
            )?)),
            LayerKind::Pala(template) => {
                let mut cfg = template;
                cfg.spec = spec;
                cfg.bias = bias;
                cfg.shifter = template.shifter.map(|mut s| {
                    s.channels = spec.in_channels;
                    s
                });
                Ok(ConvLayer::Pala(Box::new(PaLaConv::new(
                    store, prefix, cfg, seed,
                )?)))
            }
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        match self {
            ConvLayer::Classic(c) => c.forward(g, store, x),
            ConvLayer::Pala(p) => p.forward(g, store, x),
        }
    }

    pub fn spec(&self) -> ConvSpec {
        match self {
            ConvLayer::Classic(c) => c.spec,
            ConvLayer::Pala(p) => p.config().spec,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            ConvLayer::Classic(c) => c.param_count(),
            ConvLayer::Pala(p) => p.param_count(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_stats_follow_momentum() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 1).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![2, 1, 1, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap());
        bn.forward(&mut g, &store, x).unwrap();
        apply_bn_updates(&mut store, g.bn_updates());
        // batch mean 4, unbiased variance 20/3
        assert!((store.get(bn.running_mean).data()[0] - 0.4).abs() < 1e-12);
        assert!((store.get(bn.running_var).data()[0] - (0.9 + 0.1 * 20.0 / 3.0)).abs() < 1e-12);
        assert_eq!(store.count(), 2);
    }

    #[test]
    fn conv_layer_counts() {
        let mut store = ParamStore::<f64>::new();
        let spec = ConvSpec::new(3, 4, 3);
        let c = ConvLayer::new(&mut store, "c", LayerKind::Classic, spec, false, 0).unwrap();
        assert_eq!(c.param_count(), 108);
        let pala = PaLaConfig::new(
            crate::paon::PaonDegree::new(1, 1).unwrap(),
            ConvSpec::new(1, 1, 1),
        );
        let p = ConvLayer::new(&mut store, "p", LayerKind::Pala(pala), spec, true, 0).unwrap();
        assert_eq!(p.param_count(), 2 * 108 + 4);
        assert_eq!(store.count(), 108 + 2 * 108 + 4);
        assert_eq!("gelu".parse::<Activation>().unwrap(), Activation::Gelu);
    }
}
