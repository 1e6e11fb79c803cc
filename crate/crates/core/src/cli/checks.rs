//! `gradcheck`, `count` and `reduce-check`.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{key, parse_bool, sci, write_file, Key, Settings};
use crate::autograd::{grad_check, GradCheckOptions, Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::kernels::ConvSpec;
use crate::metrics::{count_ops, format_table, OpCountReport, OpKind, OpLayer};
use crate::paon::{reduce_config, PaLaConfig, PaLaConv, PaLaDense, PaLaDenseConfig, PaonDegree};
use crate::shifter::ShifterConfig;
use crate::tensor::Tensor;

pub fn gradcheck_schema() -> Vec<Key> {
    vec![
        key("seed", "0", "seed of inputs, targets and parameter values"),
        key("tol", "1e-4", "maximum relative error"),
        key("degrees", "1/0,2/0,1/1,2/1", "orders to check"),
        key("forms", "smoothed,vanilla", "smoothed and/or vanilla"),
        key(
            "shifters",
            "off,kernel,kernel-gap,element",
            "conv shifters: off, kernel (b=1), kernel-gap (b=0), element (k_s=3)",
        ),
        key(
            "layers",
            "conv,dense",
            "layer types; dense layers have no shifter",
        ),
        key("max_coords", "512", "coordinates checked per case"),
    ]
}

fn random_tensor(shape: Vec<usize>, scale: f64, rng: &mut impl Rng) -> Result<Tensor<f64>> {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

/// Moves every trainable value away from its initialization so that
/// denominators, biases and shifts all take part. Denominator weights stay
/// small so vanilla `Q` stays away from zero.
fn perturb(store: &mut ParamStore<f64>, rng: &mut impl Rng) {
    for id in store.trainable_ids() {
        let scale = if store.param(id).name.contains(".den.") {
            0.05
        } else {
            0.3
        };
        for v in store.get_mut(id).data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

fn shifter_for(name: &str, channels: usize) -> Result<Option<ShifterConfig>> {
    match name {
        "off" => Ok(None),
        "kernel" => Ok(Some(ShifterConfig::kernel_wise(channels, 1))),
        "kernel-gap" => Ok(Some(ShifterConfig::kernel_wise(channels, 0))),
        "element" => Ok(Some(ShifterConfig::element_wise(channels, 3))),
        v => Err(Error::Config(format!("unknown shifter `{v}` in gradcheck"))),
    }
}

fn form_flag(form: &str) -> Result<bool> {
    match form {
        "smoothed" => Ok(true),
        "vanilla" => Ok(false),
        v => Err(Error::Config(format!("unknown form `{v}`"))),
    }
}

/// One gradient check of a PaLa layer: `(checked, max_rel_err, pass)`.
pub fn gradcheck_case(
    layer: &str,
    degree: PaonDegree,
    smoothed: bool,
    shifter: &str,
    opts: &GradCheckOptions,
) -> Result<(usize, f64, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut store = ParamStore::<f64>::new();
    let report = match layer {
        "conv" => {
            let spec = ConvSpec::new(2, 3, 3);
            let mut cfg = PaLaConfig::new(degree, spec).with_shifter(shifter_for(shifter, 2)?);
            cfg.smoothed = smoothed;
            let l = PaLaConv::new(&mut store, "pala", cfg, rng.gen())?;
            perturb(&mut store, &mut rng);
            let x = random_tensor(vec![2, 2, 6, 6], 0.5, &mut rng)?;
            let y = random_tensor(vec![2, 3, 6, 6], 0.5, &mut rng)?;
            grad_check(
                &mut store,
                |g, st| {
                    let xv = g.constant(x.clone());
                    let out = l.forward(g, st, xv)?;
                    g.mse_loss(out, &y)
                },
                opts,
            )?
        }
        "dense" => {
            if shifter != "off" {
                return Err(Error::Config("dense layers have no shifter".into()));
            }
            let mut cfg = PaLaDenseConfig::new(degree, 4, 3);
            cfg.smoothed = smoothed;
            let l = PaLaDense::new(&mut store, "pala", cfg, rng.gen())?;
            perturb(&mut store, &mut rng);
            let x = random_tensor(vec![3, 4], 0.5, &mut rng)?;
            let y = random_tensor(vec![3, 3], 0.5, &mut rng)?;
            grad_check(
                &mut store,
                |g, st| {
                    let xv = g.constant(x.clone());
                    let out = l.forward(g, st, xv)?;
                    g.mse_loss(out, &y)
                },
                opts,
            )?
        }
        v => return Err(Error::Config(format!("unknown layer type `{v}`"))),
    };
    Ok((report.checked, report.max_rel_err, report.pass))
}

pub fn gradcheck(s: &Settings, out: &Path) -> Result<bool> {
    let degrees: Vec<PaonDegree> = s.list("degrees")?;
    let forms: Vec<String> = s.list("forms")?;
    let shifters: Vec<String> = s.list("shifters")?;
    let layers: Vec<String> = s.list("layers")?;
    let seed: u64 = s.get("seed")?;
    let mut csv = String::from("layer,degree,form,shifter,checked,max_rel_err,pass\n");
    let mut all = true;
    let mut case = 0u64;
    for layer in &layers {
        let shifts: Vec<&str> = if layer == "dense" {
            vec!["off"]
        } else {
            shifters.iter().map(String::as_str).collect()
        };
        for &degree in &degrees {
            for form in &forms {
                for shifter in &shifts {
                    let opts = GradCheckOptions {
                        tol_rel: s.get("tol")?,
                        max_coords: s.get("max_coords")?,
                        seed: seed.wrapping_add(case),
                    };
                    case += 1;
                    let (checked, err, pass) =
                        gradcheck_case(layer, degree, form_flag(form)?, shifter, &opts)?;
                    all &= pass;
                    let _ = writeln!(
                        csv,
                        "{layer},{degree},{form},{shifter},{checked},{},{pass}",
                        sci(err)
                    );
                    println!(
                        "{layer:<5} {degree} {form:<8} shifter {shifter:<10} max rel err {err:.2e}  {}",
                        if pass { "pass" } else { "FAIL" }
                    );
                }
            }
        }
    }
    write_file(out, "gradcheck.csv", &csv)?;
    Ok(all)
}

pub fn count_schema() -> Vec<Key> {
    vec![
        key("height", "256", "input height"),
        key("width", "256", "input width"),
        key("in_channels", "3", "input channels"),
        key("out_channels", "3", "output channels"),
        key("kernel", "5", "kernel size"),
        key("degrees", "1/1,2/1", "Padé orders, one row each"),
        key(
            "smoothed",
            "true",
            "smoothed form (adds the combination ops)",
        ),
        key(
            "shifter_rows",
            "true",
            "also count kernel-wise (b=0) and element-wise shifters",
        ),
        key("shift_ks", "3", "element-wise offset kernel size"),
        key(
            "check_anchor",
            "true",
            "require 14,745,600 classic and 29,491,200 [1/1] MACs",
        ),
    ]
}

pub const ANCHOR_CLASSIC_MACS: u64 = 14_745_600;
pub const ANCHOR_PADE_1_1_MACS: u64 = 29_491_200;

pub fn count(s: &Settings, out: &Path) -> Result<bool> {
    let spec = ConvSpec::new(
        s.get("in_channels")?,
        s.get("out_channels")?,
        s.get("kernel")?,
    );
    spec.validate()?;
    let (h, w): (usize, usize) = (s.get("height")?, s.get("width")?);
    let smoothed = parse_bool(s, "smoothed")?;
    let layer = |kind, shifter| OpLayer {
        name: "layer".into(),
        kind,
        spec,
        in_h: h,
        in_w: w,
        shifter,
    };
    let mut rows: Vec<(String, OpCountReport)> =
        vec![("classic".into(), count_ops(&[layer(OpKind::Classic, None)]))];
    for degree in s.list::<PaonDegree>("degrees")? {
        let kind = OpKind::Pala { degree, smoothed };
        rows.push((format!("pade {degree}"), count_ops(&[layer(kind, None)])));
        if parse_bool(s, "shifter_rows")? {
            let c = spec.in_channels;
            let kw = ShifterConfig::kernel_wise(c, 0);
            let ew = ShifterConfig::element_wise(c, s.get("shift_ks")?);
            rows.push((
                format!("pade {degree} + kernel-wise shift"),
                count_ops(&[layer(kind, Some(kw))]),
            ));
            rows.push((
                format!("pade {degree} + element-wise shift"),
                count_ops(&[layer(kind, Some(ew))]),
            ));
        }
    }
    let base = rows[0].1.macs() as f64;
    let mut csv = String::from(
        "row,macs,flops,divisions,aux_ops,shifter_mults,shifter_interp_ops,mac_ratio\n",
    );
    for (label, r) in &rows {
        let t = r.total();
        let _ = writeln!(
            csv,
            "{label},{},{},{},{},{},{},{}",
            t.macs(),
            t.flops(),
            t.divisions,
            t.aux_tensor_ops,
            t.shifter_mults,
            t.shifter_interp_ops,
            t.macs() as f64 / base
        );
    }
    write_file(out, "count.csv", &csv)?;
    print!("{}", format_table(&rows));

    let flops_ok = rows.iter().all(|(_, r)| r.flops() == 2 * r.macs());
    if !parse_bool(s, "check_anchor")? {
        return Ok(flops_ok);
    }
    let classic_ok = rows[0].1.macs() == ANCHOR_CLASSIC_MACS;
    let pade_ok = rows
        .iter()
        .find(|(l, _)| l == "pade [1/1]")
        .is_some_and(|(_, r)| r.macs() == ANCHOR_PADE_1_1_MACS);
    println!(
        "anchor classic {ANCHOR_CLASSIC_MACS}: {}, anchor [1/1] {ANCHOR_PADE_1_1_MACS}: {}, FLOPs = 2 x MACs: {}",
        if classic_ok { "pass" } else { "FAIL" },
        if pade_ok { "pass" } else { "FAIL" },
        if flops_ok { "pass" } else { "FAIL" }
    );
    Ok(classic_ok && pade_ok && flops_ok)
}

pub fn reduce_schema() -> Vec<Key> {
    vec![
        key("seed", "0", "seed of the random instances"),
        key("instances", "100", "random geometries per check"),
        key("tol", "1e-12", "maximum absolute difference"),
    ]
}

/// A random small convolution problem.
#[derive(Clone, Copy, Debug)]
pub struct Instance {
    pub spec: ConvSpec,
    pub batch: usize,
    pub h: usize,
    pub w: usize,
}

impl Instance {
    pub fn draw(rng: &mut impl Rng) -> Self {
        let k = if rng.gen_bool(0.5) { 1 } else { 3 };
        let spec = ConvSpec::new(rng.gen_range(1..=3), rng.gen_range(1..=3), k)
            .with_stride(rng.gen_range(1..=2));
        Self {
            spec,
            batch: rng.gen_range(1..=2),
            h: rng.gen_range(3..=7),
            w: rng.gen_range(3..=7),
        }
    }
}

/// Output and weight-gradient differences between a `[K/0]` PaLa layer
/// (`K` = 1 or 2) and the same map built from plain convolutions:
/// `conv(x, W1) + b` and `conv(x, W1) + conv(x * x, W2) + b`.
pub fn reduction_gap(
    order: usize,
    smoothed: bool,
    inst: Instance,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    let spec = inst.spec;
    let mut store = ParamStore::<f64>::new();
    let mut cfg = PaLaConfig::new(PaonDegree::new(order, 0)?, spec);
    cfg.smoothed = smoothed;
    let pala = PaLaConv::new(&mut store, "pala", cfg, rng.gen())?;
    let ws: Vec<ParamId> = (1..=order)
        .map(|k| {
            let t = random_tensor(spec.weight_shape().to_vec(), 0.5, rng)?;
            *store.get_mut(pala.numerator()[k - 1]) = t.clone();
            store.add(&format!("plain.w{k}"), t)
        })
        .collect::<Result<_>>()?;
    let b = random_tensor(vec![spec.out_channels], 0.5, rng)?;
    *store.get_mut(pala.bias().expect("bias is on")) = b.clone();
    let b_plain = store.add("plain.b", b)?;

    let x = random_tensor(vec![inst.batch, spec.in_channels, inst.h, inst.w], 1.0, rng)?;
    let (oh, ow) = spec.output_hw(inst.h, inst.w);
    let r = random_tensor(vec![inst.batch, spec.out_channels, oh, ow], 1.0, rng)?;
    let weighted_sum = |g: &mut Graph<f64>, y: Var| -> Result<Var> {
        let rv = g.constant(r.clone());
        let p = g.mul(y, rv)?;
        g.sum(p)
    };

    let mut g1 = Graph::new();
    let xv = g1.constant(x.clone());
    let y1 = pala.forward(&mut g1, &store, xv)?;
    let l1 = weighted_sum(&mut g1, y1)?;
    g1.backward(l1)?;

    let mut g2 = Graph::new();
    let xv = g2.constant(x);
    let bv = g2.param(&store, b_plain);
    let mut power = xv;
    let mut y2 = None;
    for (k, &w) in ws.iter().enumerate() {
        if k > 0 {
            power = g2.mul(power, xv)?;
        }
        let wv = g2.param(&store, w);
        let term = g2.conv2d(power, wv, if k == 0 { Some(bv) } else { None }, spec)?;
        y2 = Some(match y2 {
            None => term,
            Some(acc) => g2.add(acc, term)?,
        });
    }
    let y2 = y2.expect("order >= 1");
    let l2 = weighted_sum(&mut g2, y2)?;
    g2.backward(l2)?;

    let out_gap = g1.value(y1).max_abs_diff(g2.value(y2))?;
    let grads1 = g1.param_grads();
    let grads2 = g2.param_grads();
    let find = |gs: &[(ParamId, Tensor<f64>)], id: ParamId| {
        gs.iter().find(|(p, _)| *p == id).map(|(_, t)| t.clone())
    };
    let mut grad_gap: f64 = 0.0;
    let pairs = pala
        .numerator()
        .iter()
        .zip(&ws)
        .map(|(&a, &b)| (a, b))
        .chain(std::iter::once((pala.bias().expect("bias is on"), b_plain)));
    for (a, b) in pairs {
        let (ga, gb) = (find(&grads1, a), find(&grads2, b));
        match (ga, gb) {
            (Some(ga), Some(gb)) => grad_gap = grad_gap.max(ga.max_abs_diff(&gb)?),
            _ => return Err(Error::Autograd("missing weight gradient".into())),
        }
    }
    Ok((out_gap, grad_gap))
}

pub fn reduce_check(s: &Settings, out: &Path) -> Result<bool> {
    let tol: f64 = s.get("tol")?;
    let n: usize = s.get("instances")?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.get("seed")?);
    let mut csv = String::from("instance,degree,form,family,in_channels,out_channels,kernel,stride,max_out_diff,max_grad_diff\n");
    let mut worst = [(0.0f64, 0.0f64); 2];
    for i in 0..n {
        let inst = Instance::draw(&mut rng);
        for (slot, order) in [1usize, 2].into_iter().enumerate() {
            for smoothed in [true, false] {
                let (o, gr) = reduction_gap(order, smoothed, inst, &mut rng)?;
                worst[slot].0 = worst[slot].0.max(o);
                worst[slot].1 = worst[slot].1.max(gr);
                let degree = PaonDegree::new(order, 0)?;
                let _ = writeln!(
                    csv,
                    "{i},{degree},{},{},{},{},{},{},{},{}",
                    if smoothed { "smoothed" } else { "vanilla" },
                    reduce_config(degree, None),
                    inst.spec.in_channels,
                    inst.spec.out_channels,
                    inst.spec.kernel,
                    inst.spec.stride,
                    sci(o),
                    sci(gr)
                );
            }
        }
    }
    write_file(out, "reduce.csv", &csv)?;
    let mut ok = true;
    for (slot, (label, family)) in [
        ("[1/0] vs plain conv", "ordinary"),
        ("[2/0] vs quadratic form", "quadratic"),
    ]
    .into_iter()
    .enumerate()
    {
        let (o, gr) = worst[slot];
        let pass = o <= tol && gr <= tol;
        ok &= pass;
        println!(
            "{label} ({family}): max |dy| {o:.3e}, max |dW| {gr:.3e} over {n} instances  {}",
            if pass { "pass" } else { "FAIL" }
        );
    }
    Ok(ok)
}
