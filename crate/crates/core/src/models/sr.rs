use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::error::{arg_err, Result};
use crate::kernels::ConvSpec;
use crate::metrics::OpLayer;
use crate::nn::{Activation, ConvLayer, LayerKind};
use crate::tensor::{Scalar, Tensor};

/// Super-resolution network settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SrNetConfig {
    /// Residual blocks `R`.
    pub blocks: usize,
    /// Block width multiplier: `1` for a plain residual block, `> 1` for a
    /// wide block whose inner features have `width * channels` maps.
    pub width: usize,
    pub channels: usize,
    /// Layers inside the residual blocks.
    pub body: LayerKind,
    pub activation: Activation,
    /// Upscaling factor, 2 or 4.
    pub scale: usize,
    /// Reuse one conv for every x2 upsampling stage.
    pub shared_upsampler: bool,
    pub residual_scale: f64,
    pub kernel: usize,
}

impl SrNetConfig {
    pub fn classic(channels: usize, blocks: usize, scale: usize) -> Self {
        Self {
            blocks,
            width: 1,
            channels,
            body: LayerKind::Classic,
            activation: Activation::Gelu,
            scale,
            shared_upsampler: false,
            residual_scale: 0.1,
            kernel: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale != 2 && self.scale != 4 {
            return Err(arg_err!("scale must be 2 or 4, got {}", self.scale));
        }
        if self.channels == 0 || self.width == 0 {
            return Err(arg_err!("channels and width must be positive"));
        }
        Ok(())
    }

    pub fn stages(&self) -> usize {
        self.scale.trailing_zeros() as usize
    }
}

#[derive(Clone, Debug)]
struct Block {
    first: ConvLayer,
    second: ConvLayer,
    scale: ParamId,
}

/// Head conv, residual blocks, refinement conv with a global skip,
/// PixelShuffle upsampling and an output conv. Head, refinement, upsampler
/// and output layers are always plain convolutions.
#[derive(Clone, Debug)]
pub struct SrNet {
    cfg: SrNetConfig,
    head: ConvLayer,
    blocks: Vec<Block>,
    refine: ConvLayer,
    upsamplers: Vec<ConvLayer>,
    tail: ConvLayer,
}

impl SrNet {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: SrNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = cfg.channels;
        let k = cfg.kernel;
        let mut classic = |store: &mut ParamStore<T>, name: &str, spec| {
            ConvLayer::new(store, name, LayerKind::Classic, spec, true, rng.next_u64())
        };
        let head = classic(store, "head", ConvSpec::new(3, c, k))?;
        let mut blocks = Vec::with_capacity(cfg.blocks);
        let mut seeds = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_b10c);
        for i in 0..cfg.blocks {
            let inner = c * cfg.width;
            let first = ConvLayer::new(
                store,
                &format!("blocks.{i}.layer1"),
                cfg.body,
                ConvSpec::new(c, inner, k),
                true,
                seeds.next_u64(),
            )?;
            let second = ConvLayer::new(
                store,
                &format!("blocks.{i}.layer2"),
                cfg.body,
                ConvSpec::new(inner, c, k),
                true,
                seeds.next_u64(),
            )?;
            let scale = store.add(
                &format!("blocks.{i}.scale"),
                Tensor::full(vec![c], T::lit(cfg.residual_scale))?,
            )?;
            blocks.push(Block {
                first,
                second,
                scale,
            });
        }
        let refine = classic(store, "refine", ConvSpec::new(c, c, k))?;
        let n_up = if cfg.shared_upsampler {
            1
        } else {
            cfg.stages()
        };
        let mut upsamplers = Vec::with_capacity(n_up);
        for i in 0..n_up {
            upsamplers.push(classic(
                store,
                &format!("upsample.{i}"),
                ConvSpec::new(c, 4 * c, k),
            )?);
        }
        let tail = classic(store, "tail", ConvSpec::new(c, 3, k))?;
        Ok(Self {
            cfg,
            head,
            blocks,
            refine,
            upsamplers,
            tail,
        })
    }

    pub fn config(&self) -> &SrNetConfig {
        &self.cfg
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let (_, c, _, _) = g.value(x).dims4()?;
        if c != 3 {
            return Err(arg_err!("super-resolution input needs 3 channels, got {c}"));
        }
        let shallow = self.head.forward(g, store, x)?;
        let mut f = shallow;
        for b in &self.blocks {
            let h = b.first.forward(g, store, f)?;
            let h = self.cfg.activation.apply(g, h)?;
            let h = b.second.forward(g, store, h)?;
            let s = g.param(store, b.scale);
            let h = g.channel_scale(h, s)?;
            f = g.add(f, h)?;
        }
        let refined = self.refine.forward(g, store, f)?;
        let mut f = g.add(shallow, refined)?;
        for stage in 0..self.cfg.stages() {
            let up = &self.upsamplers[stage.min(self.upsamplers.len() - 1)];
            f = up.forward(g, store, f)?;
            f = self.cfg.activation.apply(g, f)?;
            f = g.pixel_shuffle(f, 2)?;
        }
        self.tail.forward(g, store, f)
    }

    /// Parameter ids of the per-block residual scales.
    pub fn residual_scales(&self) -> Vec<ParamId> {
        self.blocks.iter().map(|b| b.scale).collect()
    }

    /// Names of the Padé layers, in evaluation order.
    pub fn pala_layers(&self) -> Vec<String> {
        self.body_layers()
            .filter_map(|l| match l {
                ConvLayer::Pala(p) => Some(p.name().to_string()),
                ConvLayer::Classic(_) => None,
            })
            .collect()
    }

    fn body_layers(&self) -> impl Iterator<Item = &ConvLayer> {
        self.blocks.iter().flat_map(|b| [&b.first, &b.second])
    }

    /// Per-layer geometry for an `h x w` low-resolution input.
    pub fn op_layers(&self, h: usize, w: usize) -> Vec<OpLayer> {
        let mut out = vec![OpLayer::from_conv("head", &self.head, h, w)];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push(OpLayer::from_conv(
                &format!("blocks.{i}.layer1"),
                &b.first,
                h,
                w,
            ));
            out.push(OpLayer::from_conv(
                &format!("blocks.{i}.layer2"),
                &b.second,
                h,
                w,
            ));
        }
        out.push(OpLayer::from_conv("refine", &self.refine, h, w));
        let (mut hh, mut ww) = (h, w);
        for stage in 0..self.cfg.stages() {
            let up = &self.upsamplers[stage.min(self.upsamplers.len() - 1)];
            out.push(OpLayer::from_conv(&format!("upsample.{stage}"), up, hh, ww));
            hh *= 2;
            ww *= 2;
        }
        out.push(OpLayer::from_conv("tail", &self.tail, hh, ww));
        out
    }
}
