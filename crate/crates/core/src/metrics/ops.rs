//! Static operation counts for convolution-shaped layers.
//!
//! For a layer with `C_i` inputs, `C_o` outputs, a `k x k` kernel and a
//! `W x H` output, a Padé layer of order `[K/L]` needs
//! `(K + L) C_i k^2 W H C_o` multiplications, `W H C_o` divisions when
//! `L > 0`, and `4 W H C_o` further elementwise operations to combine the
//! smoothed form. A shifter adds `2 C_i k_s^2 W H C_i` multiplications for
//! its offset head and `4 W H C_i` interpolation operations.

use std::fmt::Write as _;

use crate::kernels::ConvSpec;
use crate::nn::ConvLayer;
use crate::paon::PaonDegree;
use crate::shifter::{ShifterConfig, ShifterKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Classic,
    Pala { degree: PaonDegree, smoothed: bool },
}

/// Geometry of one layer at a fixed input size.
#[derive(Clone, Debug, PartialEq)]
pub struct OpLayer {
    pub name: String,
    pub kind: OpKind,
    pub spec: ConvSpec,
    pub in_h: usize,
    pub in_w: usize,
    pub shifter: Option<ShifterConfig>,
}

impl OpLayer {
    pub fn from_conv(name: &str, layer: &ConvLayer, in_h: usize, in_w: usize) -> Self {
        let (kind, shifter) = match layer {
            ConvLayer::Classic(_) => (OpKind::Classic, None),
            ConvLayer::Pala(p) => {
                let c = p.config();
                (
                    OpKind::Pala {
                        degree: c.degree,
                        smoothed: c.smoothed,
                    },
                    c.shifter,
                )
            }
        };
        Self {
            name: name.to_string(),
            kind,
            spec: layer.spec(),
            in_h,
            in_w,
            shifter,
        }
    }

    /// A dense layer counted as a 1x1 convolution on a 1x1 map.
    pub fn dense(name: &str, kind: OpKind, in_features: usize, out_features: usize) -> Self {
        Self {
            name: name.to_string(),
            kind,
            spec: ConvSpec::new(in_features, out_features, 1),
            in_h: 1,
            in_w: 1,
            shifter: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerOps {
    pub name: String,
    pub multiplications: u64,
    pub divisions: u64,
    pub aux_tensor_ops: u64,
    pub shifter_mults: u64,
    pub shifter_interp_ops: u64,
}

impl LayerOps {
    /// Multiply-accumulates of the convolutions and the offset head.
    pub fn macs(&self) -> u64 {
        self.multiplications + self.shifter_mults
    }

    pub fn flops(&self) -> u64 {
        2 * self.macs()
    }
}

pub fn count_layer(layer: &OpLayer) -> LayerOps {
    let s = &layer.spec;
    let (oh, ow) = s.output_hw(layer.in_h, layer.in_w);
    let out = (oh * ow * s.out_channels) as u64;
    let per_conv = (s.in_channels * s.kernel * s.kernel) as u64 * out;
    let (terms, divisions, aux) = match layer.kind {
        OpKind::Classic => (1, 0, 0),
        OpKind::Pala { degree, smoothed } => {
            let has_den = degree.l > 0;
            (
                degree.terms() as u64,
                if has_den { out } else { 0 },
                if has_den && smoothed { 4 * out } else { 0 },
            )
        }
    };
    let (shifter_mults, shifter_interp_ops) = match layer.shifter {
        Some(sh) if sh.is_active() => {
            let ci = s.in_channels as u64;
            let hw = (layer.in_h * layer.in_w) as u64;
            let head = match (sh.kind, sh.b) {
                (ShifterKind::ElementWise, _) => 2 * ci * (sh.k_s * sh.k_s) as u64 * hw * ci,
                (ShifterKind::KernelWise, 0) => 2 * ci * ci,
                (ShifterKind::KernelWise, _) => 0,
            };
            (head, 4 * hw * ci)
        }
        _ => (0, 0),
    };
    LayerOps {
        name: layer.name.clone(),
        multiplications: terms * per_conv,
        divisions,
        aux_tensor_ops: aux,
        shifter_mults,
        shifter_interp_ops,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OpCountReport {
    pub layers: Vec<LayerOps>,
}

impl OpCountReport {
    pub fn total(&self) -> LayerOps {
        let mut t = LayerOps {
            name: "total".to_string(),
            multiplications: 0,
            divisions: 0,
            aux_tensor_ops: 0,
            shifter_mults: 0,
            shifter_interp_ops: 0,
        };
        for l in &self.layers {
            t.multiplications += l.multiplications;
            t.divisions += l.divisions;
            t.aux_tensor_ops += l.aux_tensor_ops;
            t.shifter_mults += l.shifter_mults;
            t.shifter_interp_ops += l.shifter_interp_ops;
        }
        t
    }

    pub fn macs(&self) -> u64 {
        self.total().macs()
    }

    pub fn flops(&self) -> u64 {
        self.total().flops()
    }

    pub const CSV_HEADER: &'static str =
        "layer,multiplications,divisions,aux_tensor_ops,shifter_mults,shifter_interp_ops,macs,flops";

    /// One row per layer plus a `total` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for l in self.layers.iter().chain(std::iter::once(&self.total())) {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                l.name,
                l.multiplications,
                l.divisions,
                l.aux_tensor_ops,
                l.shifter_mults,
                l.shifter_interp_ops,
                l.macs(),
                l.flops()
            );
        }
        s
    }
}

pub fn count_ops(layers: &[OpLayer]) -> OpCountReport {
    OpCountReport {
        layers: layers.iter().map(count_layer).collect(),
    }
}

/// Aligned text table of `(label, report)` rows in millions, truncated
/// (not rounded) to two decimals.
pub fn format_table(rows: &[(String, OpCountReport)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(6);
    let mut s = format!(
        "{:<width$}  {:>12}  {:>12}  {:>12}  {:>12}\n",
        "Neuron", "MACs (M)", "FLOPs (M)", "Divisions", "Aux ops"
    );
    for (label, r) in rows {
        let t = r.total();
        let _ = writeln!(
            s,
            "{:<width$}  {:>12.2}  {:>12.2}  {:>12}  {:>12}",
            label,
            millions(t.macs()),
            millions(t.flops()),
            t.divisions,
            t.aux_tensor_ops + t.shifter_interp_ops
        );
    }
    s
}

fn millions(n: u64) -> f64 {
    (n / 10_000) as f64 / 100.0
}
