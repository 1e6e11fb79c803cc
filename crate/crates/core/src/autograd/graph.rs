use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU32, Ordering};

use crate::autograd::params::{ParamId, ParamStore};
use crate::error::{shape_err, Error, Result};
use crate::kernels::{self, BatchStats, ConvSpec};
use crate::tensor::{Scalar, Tensor};
use crate::train::loss::{barron_drho, barron_rho};

static NEXT_GRAPH: AtomicU32 = AtomicU32::new(1);

/// Smallest denominator magnitude used by guarded division.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

/// Default `|Q|` threshold for singularity events.
pub const SINGULARITY_THRESHOLD: f64 = 0.01;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u32,
    id: usize,
}

/// Per-layer count of near-zero denominators seen during one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct SingularityEvent {
    pub layer: String,
    pub count: usize,
    pub min_abs: f64,
}

/// Batch statistics a training-mode batch norm wants folded into its buffers.
#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub mean: Vec<T>,
    pub unbiased_var: Vec<T>,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div {
        num: Var,
        den: Var,
        guarded: bool,
    },
    Scale(Var, T),
    AddScalar(Var),
    Pow(Var, u32),
    Tanh(Var),
    Relu(Var),
    Gelu(Var),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    ChannelBias {
        x: Var,
        b: Var,
    },
    ChannelScale {
        x: Var,
        s: Var,
    },
    PixelShuffle {
        x: Var,
        r: usize,
    },
    Bilinear {
        x: Var,
        offsets: Var,
    },
    BroadcastSpatial(Var),
    TileBatch(Var),
    GlobalAvgPool(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        stats: BatchStats<T>,
        beta: Var,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        inv_std: Vec<T>,
        mean: Vec<T>,
    },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Barron {
        pred: Var,
        target: Tensor<T>,
        alpha: T,
        c: T,
    },
    Mse {
        pred: Var,
        target: Tensor<T>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// A reverse-mode tape. Nodes are appended in evaluation order, so the node
/// list is already topologically sorted; backward walks it in reverse.
pub struct Graph<T> {
    id: u32,
    nodes: Vec<Node<T>>,
    params: BTreeMap<ParamId, Var>,
    singularity_threshold: f64,
    singularities: Vec<SingularityEvent>,
    clamp_events: usize,
    bn_updates: Vec<BnUpdate<T>>,
    training: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn gelu_parts<T: Scalar>(x: T) -> (T, T) {
    // tanh approximation of GELU and its derivative
    let k = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let a = T::lit(0.044715);
    let half = T::lit(0.5);
    let one = T::one();
    let inner = k * (x + a * x * x * x);
    let t = inner.tanh();
    let y = half * x * (one + t);
    let dinner = k * (one + T::lit(3.0) * a * x * x);
    let dy = half * (one + t) + half * x * (one - t * t) * dinner;
    (y, dy)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: BTreeMap::new(),
            singularity_threshold: SINGULARITY_THRESHOLD,
            singularities: Vec::new(),
            clamp_events: 0,
            bn_updates: Vec::new(),
            training: true,
        }
    }

    /// A graph whose batch norms use running statistics.
    pub fn eval() -> Self {
        let mut g = Self::new();
        g.training = false;
        g
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn set_singularity_threshold(&mut self, threshold: f64) {
        self.singularity_threshold = threshold;
    }

    pub fn singularity_threshold(&self) -> f64 {
        self.singularity_threshold
    }

    pub fn singularities(&self) -> &[SingularityEvent] {
        &self.singularities
    }

    pub fn record_singularity(&mut self, layer: &str, count: usize, min_abs: f64) {
        self.singularities.push(SingularityEvent {
            layer: layer.to_string(),
            count,
            min_abs,
        });
    }

    /// Number of denominator entries raised to the floor by guarded division.
    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    pub fn bn_updates(&self) -> &[BnUpdate<T>] {
        &self.bn_updates
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<&Node<T>> {
        if v.graph != self.id || v.id >= self.nodes.len() {
            return Err(Error::Autograd("variable belongs to another graph".into()));
        }
        Ok(&self.nodes[v.id])
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.id].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var {
            graph: self.id,
            id: self.nodes.len() - 1,
        }
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var {
            graph: self.id,
            id: self.nodes.len() - 1,
        }
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Leaf for a stored parameter. Repeated calls return the same variable,
    /// so shared weights accumulate one gradient. A graph serves a single
    /// store: ids from two stores would collide.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.param(id);
        let v = self.leaf(p.value.clone(), p.trainable);
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.id].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.id].requires_grad
    }

    /// Accumulated gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.id].grad.as_ref()
    }

    /// Gradients of every trainable parameter touched by this graph.
    /// Untouched parameters are absent.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor<T>)> {
        self.params
            .iter()
            .filter(|(_, v)| self.nodes[v.id].requires_grad)
            .map(|(&id, v)| {
                let node = &self.nodes[v.id];
                (
                    id,
                    node.grad.clone().unwrap_or_else(|| node.value.zeros_like()),
                )
            })
            .collect()
    }

    /// Clears all accumulated leaf gradients.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let out = self.check(a)?.value.zip_map(&self.check(b)?.value, f)?;
        Ok(self.push(out, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, num: Var, den: Var) -> Result<Var> {
        self.binary(
            num,
            den,
            |x, y| x / y,
            Op::Div {
                num,
                den,
                guarded: false,
            },
        )
    }

    /// Division whose denominator magnitude is floored at
    /// [`DENOMINATOR_FLOOR`] in both passes. Each floored entry is counted.
    pub fn div_guarded(&mut self, num: Var, den: Var) -> Result<Var> {
        let floor = T::lit(DENOMINATOR_FLOOR);
        let clamped = self
            .check(den)?
            .value
            .data()
            .iter()
            .filter(|q| q.abs() < floor)
            .count();
        self.clamp_events += clamped;
        self.binary(
            num,
            den,
            move |x, y| x / guard(y, floor),
            Op::Div {
                num,
                den,
                guarded: true,
            },
        )
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let out = self.check(a)?.value.scale(s);
        Ok(self.push(out, Op::Scale(a, s), &[a]))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Result<Var> {
        let out = self.check(a)?.value.map(|v| v + s);
        Ok(self.push(out, Op::AddScalar(a), &[a]))
    }

    pub fn pow(&mut self, a: Var, k: u32) -> Result<Var> {
        let out = kernels::elem_pow(&self.check(a)?.value, k)?;
        Ok(self.push(out, Op::Pow(a, k), &[a]))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.pow(a, 2)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.check(a)?.value.map(|v| v.tanh());
        Ok(self.push(out, Op::Tanh(a), &[a]))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.check(a)?.value.map(|v| v.max(T::zero()));
        Ok(self.push(out, Op::Relu(a), &[a]))
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = self.check(a)?.value.map(|v| gelu_parts(v).0);
        Ok(self.push(out, Op::Gelu(a), &[a]))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let bias = match b {
            Some(b) => Some(&self.check(b)?.value),
            None => None,
        };
        let out = kernels::conv2d(&self.check(x)?.value, &self.check(w)?.value, bias, &spec)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Conv { x, w, b, spec }, &inputs))
    }

    /// `x + b[c]` along channel axis 1 (rank 2 or 4).
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let out = channel_apply(&self.check(x)?.value, &self.check(b)?.value, |v, p| v + p)?;
        Ok(self.push(out, Op::ChannelBias { x, b }, &[x, b]))
    }

    /// `x * s[c]` along channel axis 1 (rank 2 or 4).
    pub fn channel_scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let out = channel_apply(&self.check(x)?.value, &self.check(s)?.value, |v, p| v * p)?;
        Ok(self.push(out, Op::ChannelScale { x, s }, &[x, s]))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let out = kernels::pixel_shuffle(&self.check(x)?.value, r)?;
        Ok(self.push(out, Op::PixelShuffle { x, r }, &[x]))
    }

    pub fn bilinear_sample(&mut self, x: Var, offsets: Var) -> Result<Var> {
        let out = kernels::bilinear_sample(&self.check(x)?.value, &self.check(offsets)?.value)?;
        Ok(self.push(out, Op::Bilinear { x, offsets }, &[x, offsets]))
    }

    /// `(N, C) -> (N, C, H, W)` by repetition.
    pub fn broadcast_spatial(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let src = &self.check(x)?.value;
        let (n, c) = src.dims2()?;
        let mut data = Vec::with_capacity(n * c * h * w);
        for &v in src.data() {
            data.extend(std::iter::repeat(v).take(h * w));
        }
        let out = Tensor::new(vec![n, c, h, w], data)?;
        Ok(self.push(out, Op::BroadcastSpatial(x), &[x]))
    }

    /// Repeats a leading-axis-1 tensor `n` times along the leading axis.
    pub fn tile_batch(&mut self, x: Var, n: usize) -> Result<Var> {
        let src = &self.check(x)?.value;
        if src.shape()[0] != 1 {
            return Err(shape_err!(
                "tile_batch needs a leading extent of 1, got {:?}",
                src.shape()
            ));
        }
        let parts = vec![src.clone(); n];
        let out = Tensor::stack_batch(&parts)?;
        Ok(self.push(out, Op::TileBatch(x), &[x]))
    }

    /// `(N, C, H, W) -> (N, C)` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let src = &self.check(x)?.value;
        let (n, c, h, w) = src.dims4()?;
        let inv = T::one() / T::from_usize(h * w).unwrap();
        let data = src
            .data()
            .chunks(h * w)
            .map(|plane| plane.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::new(vec![n, c], data)?;
        Ok(self.push(out, Op::GlobalAvgPool(x), &[x]))
    }

    /// `x (N, F) * w^T (F, O) + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xv = &self.check(x)?.value;
        let wv = &self.check(w)?.value;
        let (n, f) = xv.dims2()?;
        let (o, fw) = wv.dims2()?;
        if f != fw {
            return Err(shape_err!(
                "linear: input has {f} features, weight expects {fw}"
            ));
        }
        let mut out = Tensor::zeros(vec![n, o])?;
        T::gemm(
            n,
            f,
            o,
            T::one(),
            xv.data(),
            f as isize,
            1,
            wv.data(),
            1,
            f as isize,
            T::zero(),
            out.data_mut(),
            o as isize,
            1,
        );
        if let Some(b) = b {
            out = channel_apply(&out, &self.check(b)?.value, |v, p| v + p)?;
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Linear { x, w, b }, &inputs))
    }

    /// Batch norm over channel axis 1. In a training graph batch statistics
    /// are used and an update for the running buffers is queued; an eval
    /// graph uses the running buffers.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: (ParamId, &Tensor<T>),
        running_var: (ParamId, &Tensor<T>),
    ) -> Result<Var> {
        let xv = &self.check(x)?.value;
        let gv = &self.check(gamma)?.value;
        let bv = &self.check(beta)?.value;
        if self.training {
            let (out, stats) = kernels::batch_norm_train(xv, gv, bv)?;
            let unbiased = if stats.count > 1 {
                let k =
                    T::from_usize(stats.count).unwrap() / T::from_usize(stats.count - 1).unwrap();
                stats.var.iter().map(|&v| v * k).collect()
            } else {
                stats.var.clone()
            };
            self.bn_updates.push(BnUpdate {
                running_mean: running_mean.0,
                running_var: running_var.0,
                mean: stats.mean.clone(),
                unbiased_var: unbiased,
            });
            Ok(self.push(
                out,
                Op::BatchNorm {
                    x,
                    gamma,
                    stats,
                    beta,
                },
                &[x, gamma, beta],
            ))
        } else {
            let out = kernels::batch_norm_eval(xv, gv, bv, running_mean.1, running_var.1)?;
            let eps = T::lit(kernels::BN_EPS);
            let inv_std = running_var
                .1
                .data()
                .iter()
                .map(|&v| T::one() / (v + eps).sqrt())
                .collect();
            let mean = running_mean.1.data().to_vec();
            Ok(self.push(
                out,
                Op::BatchNormEval {
                    x,
                    gamma,
                    beta,
                    inv_std,
                    mean,
                },
                &[x, gamma, beta],
            ))
        }
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.check(x)?.value.clone().reshape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.check(x)?.value.sum());
        Ok(self.push(out, Op::Sum(x), &[x]))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.check(x)?.value.mean());
        Ok(self.push(out, Op::Mean(x), &[x]))
    }

    /// Mean general robust loss of `pred - target`.
    pub fn barron_loss(&mut self, pred: Var, target: &Tensor<T>, alpha: T, c: T) -> Result<Var> {
        let pv = &self.check(pred)?.value;
        pv.expect_same_shape(target)?;
        let total: T = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| barron_rho(p - t, alpha, c))
            .sum();
        let out = Tensor::scalar(total / T::from_usize(pv.len()).unwrap());
        Ok(self.push(
            out,
            Op::Barron {
                pred,
                target: target.clone(),
                alpha,
                c,
            },
            &[pred],
        ))
    }

    pub fn mse_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let pv = &self.check(pred)?.value;
        pv.expect_same_shape(target)?;
        let total: T = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        let out = Tensor::scalar(total / T::from_usize(pv.len()).unwrap());
        Ok(self.push(
            out,
            Op::Mse {
                pred,
                target: target.clone(),
            },
            &[pred],
        ))
    }

    /// Mean softmax cross-entropy of `(N, K)` logits.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = &self.check(logits)?.value;
        let (n, k) = lv.dims2()?;
        if labels.len() != n || labels.iter().any(|&l| l >= k) {
            return Err(shape_err!(
                "cross_entropy: bad labels for logits {:?}",
                lv.shape()
            ));
        }
        let mut probs = lv.clone();
        let mut total = T::zero();
        for (row, &label) in probs.data_mut().chunks_mut(k).zip(labels) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v = *v / z;
            }
            total -= row[label].max(T::min_positive_value()).ln();
        }
        let out = Tensor::scalar(total / T::from_usize(n).unwrap());
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Accumulates `d loss / d leaf` into every leaf that requires a gradient.
    /// Calling it twice without [`Graph::zero_grad`] doubles the gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let node = self.check(loss)?;
        if node.value.len() != 1 {
            return Err(Error::Autograd(format!(
                "backward needs a scalar loss, got shape {:?}",
                node.value.shape()
            )));
        }
        if !node.requires_grad {
            return Err(Error::Autograd(
                "loss does not depend on any variable that requires a gradient".into(),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(node.value.shape().to_vec(), T::one())?);
        for i in (0..=loss.id).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let slot = &mut self.nodes[i].grad;
                match slot {
                    Some(acc) => acc.add_assign(&g)?,
                    None => *slot = Some(g),
                }
                continue;
            }
            for (input, gi) in self.local_grads(i, &g)? {
                if !self.nodes[input.id].requires_grad {
                    continue;
                }
                match &mut grads[input.id] {
                    Some(acc) => acc.add_assign(&gi)?,
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        Ok(())
    }

    fn v(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.id].value
    }

    fn local_grads(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[i];
        let out = &node.value;
        let one = T::one();
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-one))],
            Op::Mul(a, b) => vec![(*a, g.mul(self.v(*b))?), (*b, g.mul(self.v(*a))?)],
            Op::Div { num, den, guarded } => {
                let floor = T::lit(DENOMINATOR_FLOOR);
                let q = if *guarded {
                    self.v(*den).map(|y| guard(y, floor))
                } else {
                    self.v(*den).clone()
                };
                let dnum = g.zip_map(&q, |gv, qv| gv / qv)?;
                // d/dq (p/q) = -(p/q) / q
                let dden = g
                    .zip_map(out, |gv, o| gv * o)?
                    .zip_map(&q, |v, qv| -v / qv)?;
                vec![(*num, dnum), (*den, dden)]
            }
            Op::Scale(a, s) => vec![(*a, g.scale(*s))],
            Op::AddScalar(a) => vec![(*a, g.clone())],
            Op::Pow(a, k) => {
                let kk = T::from_u32(*k).unwrap();
                let d = if *k == 1 {
                    g.clone()
                } else {
                    let base = kernels::elem_pow(self.v(*a), k - 1)?;
                    g.zip_map(&base, |gv, b| gv * kk * b)?
                };
                vec![(*a, d)]
            }
            Op::Tanh(a) => vec![(*a, g.zip_map(out, |gv, t| gv * (one - t * t))?)],
            Op::Relu(a) => vec![(
                *a,
                g.zip_map(
                    self.v(*a),
                    |gv, x| if x > T::zero() { gv } else { T::zero() },
                )?,
            )],
            Op::Gelu(a) => vec![(*a, g.zip_map(self.v(*a), |gv, x| gv * gelu_parts(x).1)?)],
            Op::Conv { x, w, b, spec } => {
                let (dx, dw, db) =
                    kernels::conv2d_backward(self.v(*x), self.v(*w), g, spec, b.is_some())?;
                let mut v = vec![(*x, dx), (*w, dw)];
                if let (Some(b), Some(db)) = (b, db) {
                    v.push((*b, db));
                }
                v
            }
            Op::ChannelBias { x, b } => vec![(*x, g.clone()), (*b, kernels::channel_sum(g))],
            Op::ChannelScale { x, s } => {
                let dx = channel_apply(g, self.v(*s), |v, p| v * p)?;
                let ds = kernels::channel_sum(&g.mul(self.v(*x))?);
                vec![(*x, dx), (*s, ds)]
            }
            Op::PixelShuffle { x, r } => vec![(*x, kernels::pixel_unshuffle(g, *r)?)],
            Op::Bilinear { x, offsets } => {
                let (dx, doff) =
                    kernels::bilinear_sample_backward(self.v(*x), self.v(*offsets), g)?;
                vec![(*x, dx), (*offsets, doff)]
            }
            Op::BroadcastSpatial(x) => {
                let (n, c, h, w) = g.dims4()?;
                let data = g
                    .data()
                    .chunks(h * w)
                    .map(|plane| plane.iter().copied().sum())
                    .collect();
                vec![(*x, Tensor::new(vec![n, c], data)?)]
            }
            Op::TileBatch(x) => {
                let mut acc = self.v(*x).zeros_like();
                for chunk in g.data().chunks(acc.len()) {
                    for (a, &v) in acc.data_mut().iter_mut().zip(chunk) {
                        *a += v;
                    }
                }
                vec![(*x, acc)]
            }
            Op::GlobalAvgPool(x) => {
                let (n, c, h, w) = self.v(*x).dims4()?;
                let inv = one / T::from_usize(h * w).unwrap();
                let mut data = Vec::with_capacity(n * c * h * w);
                for &v in g.data() {
                    data.extend(std::iter::repeat(v * inv).take(h * w));
                }
                vec![(*x, Tensor::new(vec![n, c, h, w], data)?)]
            }
            Op::Linear { x, w, b } => {
                let xv = self.v(*x);
                let wv = self.v(*w);
                let (n, f) = xv.dims2()?;
                let o = wv.shape()[0];
                let mut dx = xv.zeros_like();
                T::gemm(
                    n,
                    o,
                    f,
                    one,
                    g.data(),
                    o as isize,
                    1,
                    wv.data(),
                    f as isize,
                    1,
                    T::zero(),
                    dx.data_mut(),
                    f as isize,
                    1,
                );
                let mut dw = wv.zeros_like();
                T::gemm(
                    o,
                    n,
                    f,
                    one,
                    g.data(),
                    1,
                    o as isize,
                    xv.data(),
                    f as isize,
                    1,
                    T::zero(),
                    dw.data_mut(),
                    f as isize,
                    1,
                );
                let mut v = vec![(*x, dx), (*w, dw)];
                if let Some(b) = b {
                    v.push((*b, kernels::channel_sum(g)));
                }
                v
            }
            Op::BatchNorm {
                x,
                gamma,
                stats,
                beta,
            } => {
                let (dx, dg, db) =
                    kernels::batch_norm_train_backward(self.v(*x), self.v(*gamma), stats, g)?;
                vec![(*x, dx), (*gamma, dg), (*beta, db)]
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                inv_std,
                mean,
            } => {
                let xv = self.v(*x);
                let scale: Vec<T> = inv_std
                    .iter()
                    .zip(self.v(*gamma).data())
                    .map(|(&i, &gm)| i * gm)
                    .collect();
                let scale = Tensor::new(vec![scale.len()], scale)?;
                let dx = channel_apply(g, &scale, |v, s| v * s)?;
                let inv = Tensor::new(vec![inv_std.len()], inv_std.clone())?;
                let mean = Tensor::new(vec![mean.len()], mean.clone())?;
                let xhat =
                    channel_apply(&channel_apply(xv, &mean, |v, m| v - m)?, &inv, |v, s| v * s)?;
                let dg = kernels::channel_sum(&g.mul(&xhat)?);
                vec![(*x, dx), (*gamma, dg), (*beta, kernels::channel_sum(g))]
            }
            Op::Reshape(x) => vec![(*x, g.clone().reshape(self.v(*x).shape().to_vec())?)],
            Op::Sum(x) => {
                let gv = g.item()?;
                vec![(*x, self.v(*x).map(|_| gv))]
            }
            Op::Mean(x) => {
                let xv = self.v(*x);
                let gv = g.item()? / T::from_usize(xv.len()).unwrap();
                vec![(*x, xv.map(|_| gv))]
            }
            Op::Barron {
                pred,
                target,
                alpha,
                c,
            } => {
                let pv = self.v(*pred);
                let k = g.item()? / T::from_usize(pv.len()).unwrap();
                let d = pv.zip_map(target, |p, t| k * barron_drho(p - t, *alpha, *c))?;
                vec![(*pred, d)]
            }
            Op::Mse { pred, target } => {
                let pv = self.v(*pred);
                let k = g.item()? * T::lit(2.0) / T::from_usize(pv.len()).unwrap();
                vec![(*pred, pv.zip_map(target, |p, t| k * (p - t))?)]
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let k = probs.shape()[1];
                let scale = g.item()? / T::from_usize(labels.len()).unwrap();
                let mut d = probs.clone();
                for (row, &label) in d.data_mut().chunks_mut(k).zip(labels) {
                    row[label] -= one;
                    for v in row.iter_mut() {
                        *v *= scale;
                    }
                }
                vec![(*logits, d)]
            }
        })
    }
}

#[inline]
fn guard<T: Scalar>(q: T, floor: T) -> T {
    if q.abs() >= floor {
        q
    } else if q < T::zero() {
        -floor
    } else {
        floor
    }
}

/// Applies `f(x, p[c])` along channel axis 1 of a rank-2 or rank-4 tensor.
fn channel_apply<T: Scalar>(
    x: &Tensor<T>,
    p: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    let shape = x.shape();
    if shape.len() < 2 || p.shape() != [shape[1]] {
        return Err(shape_err!(
            "per-channel parameter {:?} does not match {:?}",
            p.shape(),
            shape
        ));
    }
    let c = shape[1];
    let inner: usize = shape[2..].iter().product();
    let mut out = x.clone();
    for (i, chunk) in out.data_mut().chunks_mut(inner).enumerate() {
        let pv = p.data()[i % c];
        for v in chunk {
            *v = f(*v, pv);
        }
    }
    Ok(out)
}
