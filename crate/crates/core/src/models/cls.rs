use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, ParamStore, Var};
use crate::error::{arg_err, Result};
use crate::kernels::ConvSpec;
use crate::metrics::{OpKind, OpLayer};
use crate::nn::{Activation, BatchNorm2d, ConvLayer, LayerKind, Linear};
use crate::paon::{DenominatorInit, PaLaDense, PaLaDenseConfig, PaonDegree};
use crate::tensor::Scalar;

pub const STAGE_CHANNELS: [usize; 3] = [16, 32, 64];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    Affine,
    /// Smoothed Padé dense layer of the given order, with the conv layers'
    /// denominator init.
    Pade(PaonDegree),
}

/// Residual classifier settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClsNetConfig {
    /// Residual blocks per stage.
    pub stages: [usize; 3],
    pub layer: LayerKind,
    pub activation: Activation,
    pub head: HeadKind,
    pub classes: usize,
    pub in_channels: usize,
}

impl ClsNetConfig {
    pub fn classic(stages: [usize; 3]) -> Self {
        Self {
            stages,
            layer: LayerKind::Classic,
            activation: Activation::Relu,
            head: HeadKind::Affine,
            classes: 10,
            in_channels: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.iter().any(|&n| n == 0) {
            return Err(arg_err!(
                "every stage needs at least one block, got {:?}",
                self.stages
            ));
        }
        if self.classes < 2 {
            return Err(arg_err!("need at least two classes"));
        }
        Ok(())
    }

    /// Stem, two layers per block and the head; projection shortcuts are
    /// not counted.
    pub fn layer_count(&self) -> usize {
        2 + 2 * self.stages.iter().sum::<usize>()
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    conv1: ConvLayer,
    bn1: BatchNorm2d,
    conv2: ConvLayer,
    bn2: BatchNorm2d,
    shortcut: Option<(ConvLayer, BatchNorm2d)>,
}

#[derive(Clone, Debug)]
enum Head {
    Affine(Linear),
    Pade(PaLaDense),
}

/// Three-stage residual classifier with 16, 32 and 64 channels; the last
/// two stages halve the spatial size.
#[derive(Clone, Debug)]
pub struct ClsNet {
    cfg: ClsNetConfig,
    stem: ConvLayer,
    stem_bn: BatchNorm2d,
    blocks: Vec<ResBlock>,
    head: Head,
}

impl ClsNet {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: ClsNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kind = cfg.layer;
        // shifters only sit in front of the residual-block convolutions
        let plain = match kind {
            LayerKind::Pala(p) => LayerKind::Pala(p.with_shifter(None)),
            k => k,
        };
        let stem = ConvLayer::new(
            store,
            "stem",
            plain,
            ConvSpec::new(cfg.in_channels, STAGE_CHANNELS[0], 3),
            false,
            rng.next_u64(),
        )?;
        let stem_bn = BatchNorm2d::new(store, "stem.bn", STAGE_CHANNELS[0])?;
        let mut blocks = Vec::new();
        let mut c_in = STAGE_CHANNELS[0];
        for (s, (&n, &c)) in cfg.stages.iter().zip(&STAGE_CHANNELS).enumerate() {
            for b in 0..n {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let p = format!("stages.{s}.{b}");
                let conv1 = ConvLayer::new(
                    store,
                    &format!("{p}.conv1"),
                    kind,
                    ConvSpec::new(c_in, c, 3).with_stride(stride),
                    false,
                    rng.next_u64(),
                )?;
                let bn1 = BatchNorm2d::new(store, &format!("{p}.bn1"), c)?;
                let conv2 = ConvLayer::new(
                    store,
                    &format!("{p}.conv2"),
                    kind,
                    ConvSpec::new(c, c, 3),
                    false,
                    rng.next_u64(),
                )?;
                let bn2 = BatchNorm2d::new(store, &format!("{p}.bn2"), c)?;
                let shortcut = if stride != 1 || c_in != c {
                    let conv = ConvLayer::new(
                        store,
                        &format!("{p}.shortcut"),
                        plain,
                        ConvSpec::new(c_in, c, 1).with_stride(stride),
                        false,
                        rng.next_u64(),
                    )?;
                    Some((
                        conv,
                        BatchNorm2d::new(store, &format!("{p}.shortcut.bn"), c)?,
                    ))
                } else {
                    None
                };
                blocks.push(ResBlock {
                    conv1,
                    bn1,
                    conv2,
                    bn2,
                    shortcut,
                });
                c_in = c;
            }
        }
        let features = STAGE_CHANNELS[2];
        let head = match cfg.head {
            HeadKind::Affine => Head::Affine(Linear::new(
                store,
                "head",
                features,
                cfg.classes,
                rng.next_u64(),
            )?),
            HeadKind::Pade(degree) => Head::Pade(PaLaDense::new(
                store,
                "head",
                PaLaDenseConfig::new(degree, features, cfg.classes).with_den_init(match kind {
                    LayerKind::Pala(p) => p.den_init,
                    LayerKind::Classic => DenominatorInit::Zero,
                }),
                rng.next_u64(),
            )?),
        };
        Ok(Self {
            cfg,
            stem,
            stem_bn,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &ClsNetConfig {
        &self.cfg
    }

    /// Logits `(N, classes)`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let (_, c, _, _) = g.value(x).dims4()?;
        if c != self.cfg.in_channels {
            return Err(arg_err!(
                "classifier expects {} channels, got {c}",
                self.cfg.in_channels
            ));
        }
        let act = self.cfg.activation;
        let f = self.stem.forward(g, store, x)?;
        let f = self.stem_bn.forward(g, store, f)?;
        let mut f = act.apply(g, f)?;
        for b in &self.blocks {
            let h = b.conv1.forward(g, store, f)?;
            let h = b.bn1.forward(g, store, h)?;
            let h = act.apply(g, h)?;
            let h = b.conv2.forward(g, store, h)?;
            let h = b.bn2.forward(g, store, h)?;
            let skip = match &b.shortcut {
                Some((conv, bn)) => {
                    let s = conv.forward(g, store, f)?;
                    bn.forward(g, store, s)?
                }
                None => f,
            };
            let sum = g.add(h, skip)?;
            f = act.apply(g, sum)?;
        }
        let pooled = g.global_avg_pool(f)?;
        match &self.head {
            Head::Affine(l) => l.forward(g, store, pooled),
            Head::Pade(l) => l.forward(g, store, pooled),
        }
    }

    pub fn layer_count(&self) -> usize {
        self.cfg.layer_count()
    }

    /// Names of the Padé layers, in evaluation order.
    pub fn pala_layers(&self) -> Vec<String> {
        let mut names = Vec::new();
        let mut push = |l: &ConvLayer| {
            if let ConvLayer::Pala(p) = l {
                names.push(p.name().to_string());
            }
        };
        push(&self.stem);
        for b in &self.blocks {
            push(&b.conv1);
            push(&b.conv2);
            if let Some((s, _)) = &b.shortcut {
                push(s);
            }
        }
        if let Head::Pade(p) = &self.head {
            names.push(p.name().to_string());
        }
        names
    }

    pub fn op_layers(&self, h: usize, w: usize) -> Vec<OpLayer> {
        let mut out = vec![OpLayer::from_conv("stem", &self.stem, h, w)];
        let (mut hh, mut ww) = (h, w);
        for (i, b) in self.blocks.iter().enumerate() {
            out.push(OpLayer::from_conv(
                &format!("block{i}.conv1"),
                &b.conv1,
                hh,
                ww,
            ));
            if let Some((s, _)) = &b.shortcut {
                out.push(OpLayer::from_conv(&format!("block{i}.shortcut"), s, hh, ww));
            }
            let (nh, nw) = b.conv1.spec().output_hw(hh, ww);
            hh = nh;
            ww = nw;
            out.push(OpLayer::from_conv(
                &format!("block{i}.conv2"),
                &b.conv2,
                hh,
                ww,
            ));
        }
        let kind = match &self.head {
            Head::Affine(_) => OpKind::Classic,
            Head::Pade(p) => OpKind::Pala {
                degree: p.config().degree,
                smoothed: p.config().smoothed,
            },
        };
        out.push(OpLayer::dense(
            "head",
            kind,
            STAGE_CHANNELS[2],
            self.cfg.classes,
        ));
        out
    }
}
