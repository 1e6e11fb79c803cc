//! Task drivers: super-resolution, classification and scalar curve fitting.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::augment::augment;
use super::run::{train_loop, LossKind, TrainConfig, TrainOutcome};
use crate::autograd::{Graph, ParamStore, Var};
use crate::data::{SrPair, TeacherData};
use crate::error::{arg_err, Result};
use crate::metrics::{psnr_rgb, ssim_y};
use crate::models::{ClsNet, SrNet};
use crate::paon::{PaLaDense, PaLaDenseConfig, PaonDegree};
use crate::tensor::{Scalar, Tensor};

fn apply_loss<T: Scalar>(
    g: &mut Graph<T>,
    kind: LossKind,
    pred: Var,
    target: &Tensor<T>,
) -> Result<Var> {
    match kind {
        LossKind::L2 => g.mse_loss(pred, target),
        LossKind::Barron { alpha, c } => g.barron_loss(pred, target, T::lit(alpha), T::lit(c)),
        LossKind::CrossEntropy => Err(arg_err!("cross entropy needs class labels")),
    }
}

/// Random aligned crops: `patch x patch` from the low-resolution images
/// and the matching region of the targets.
pub fn sample_sr_batch(
    pairs: &[SrPair],
    batch: usize,
    patch: usize,
    rng: &mut impl Rng,
) -> Result<(Tensor<f64>, Tensor<f64>)> {
    if pairs.is_empty() {
        return Err(arg_err!("no training pairs"));
    }
    let mut xs = Vec::with_capacity(batch);
    let mut ys = Vec::with_capacity(batch);
    for _ in 0..batch {
        let p = &pairs[rng.gen_range(0..pairs.len())];
        let (_, h, w) = (p.lr.shape()[0], p.lr.shape()[1], p.lr.shape()[2]);
        if patch > h || patch > w {
            return Err(arg_err!("patch {patch} exceeds image size {h}x{w}"));
        }
        let (y0, x0) = (rng.gen_range(0..=h - patch), rng.gen_range(0..=w - patch));
        xs.push(crop(&p.lr, y0, x0, patch)?);
        let s = p.scale;
        ys.push(crop(&p.hr, y0 * s, x0 * s, patch * s)?);
    }
    Ok((Tensor::stack_batch(&xs)?, Tensor::stack_batch(&ys)?))
}

/// `(3, H, W)` -> `(1, 3, size, size)` window at `(y0, x0)`.
fn crop(img: &Tensor<f64>, y0: usize, x0: usize, size: usize) -> Result<Tensor<f64>> {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let d = img.data();
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for y in y0..y0 + size {
            let row = (ch * h + y) * w;
            out.extend_from_slice(&d[row + x0..row + x0 + size]);
        }
    }
    Tensor::new(vec![1, c, size, size], out)
}

/// Mean PSNR (RGB) and SSIM (luma) over full test images.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SrScores {
    pub psnr: f64,
    pub ssim: f64,
}

/// Super-resolves one `(3, h, w)` image.
pub fn super_resolve<T: Scalar>(
    net: &SrNet,
    store: &ParamStore<T>,
    lr: &Tensor<f64>,
) -> Result<Tensor<f64>> {
    let mut g = Graph::eval();
    let shape = lr.shape();
    let x = g.constant(
        lr.cast::<T>()
            .reshape(vec![1, shape[0], shape[1], shape[2]])?,
    );
    let y = net.forward(&mut g, store, x)?;
    let out = g.value(y).cast::<f64>();
    let s = out.shape().to_vec();
    out.reshape(vec![s[1], s[2], s[3]])
}

pub fn eval_sr<T: Scalar>(
    net: &SrNet,
    store: &ParamStore<T>,
    pairs: &[SrPair],
) -> Result<SrScores> {
    if pairs.is_empty() {
        return Err(arg_err!("no evaluation pairs"));
    }
    let (mut psnr, mut ssim) = (0.0, 0.0);
    for p in pairs {
        let sr = super_resolve(net, store, &p.lr)?;
        psnr += crate::metrics::cap_psnr(psnr_rgb(&sr, &p.hr)?);
        ssim += ssim_y(&sr, &p.hr)?;
    }
    let n = pairs.len() as f64;
    Ok(SrScores {
        psnr: psnr / n,
        ssim: ssim / n,
    })
}

/// Trains on random crops of `train`; the metric is mean test PSNR.
pub fn train_sr<T: Scalar>(
    net: &SrNet,
    store: &mut ParamStore<T>,
    train: &[SrPair],
    test: &[SrPair],
    patch: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let layers = net.pala_layers();
    train_loop(
        store,
        cfg,
        &layers,
        |g, st, seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, y) = sample_sr_batch(train, cfg.batch_size, patch, &mut rng)?;
            let (x, y) = augment(&x, Some(&y), &cfg.augment, &mut rng)?;
            let y = y.expect("targets were given");
            let xv = g.constant(x.cast::<T>());
            let pred = net.forward(g, st, xv)?;
            apply_loss(g, cfg.loss, pred, &y.cast::<T>())
        },
        |st| Ok(eval_sr(net, st, test)?.psnr),
    )
}

fn gather(images: &Tensor<f64>, idx: &[usize]) -> Result<Tensor<f64>> {
    let parts = idx
        .iter()
        .map(|&i| images.slice_batch(i, 1))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack_batch(&parts)
}

/// Top-1 accuracy in percent, evaluated with running batch statistics.
pub fn eval_cls<T: Scalar>(
    net: &ClsNet,
    store: &ParamStore<T>,
    images: &Tensor<f64>,
    labels: &[usize],
    batch: usize,
) -> Result<f64> {
    let n = labels.len();
    if n == 0 || images.shape()[0] != n {
        return Err(arg_err!("{} images for {n} labels", images.shape()[0]));
    }
    let mut correct = 0;
    for start in (0..n).step_by(batch.max(1)) {
        let count = batch.max(1).min(n - start);
        let mut g = Graph::eval();
        let x = g.constant(images.slice_batch(start, count)?.cast::<T>());
        let logits = net.forward(&mut g, store, x)?;
        let v = g.value(logits);
        let classes = v.shape()[1];
        for (row, &label) in v.data().chunks(classes).zip(&labels[start..start + count]) {
            let arg = row
                .iter()
                .enumerate()
                .fold(
                    (0, row[0]),
                    |best, (i, &x)| if x > best.1 { (i, x) } else { best },
                )
                .0;
            correct += usize::from(arg == label);
        }
    }
    Ok(100.0 * correct as f64 / n as f64)
}

/// Cross-entropy training on batches drawn without replacement per step;
/// the metric is test accuracy.
pub fn train_cls<T: Scalar>(
    net: &ClsNet,
    store: &mut ParamStore<T>,
    train: (&Tensor<f64>, &[usize]),
    test: (&Tensor<f64>, &[usize]),
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let (images, labels) = train;
    let n = labels.len();
    if cfg.batch_size > n {
        return Err(arg_err!(
            "batch size {} exceeds {n} samples",
            cfg.batch_size
        ));
    }
    let layers = net.pala_layers();
    train_loop(
        store,
        cfg,
        &layers,
        |g, st, seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let idx = sample(&mut rng, n, cfg.batch_size).into_vec();
            let x = gather(images, &idx)?;
            let (x, _) = augment(&x, None, &cfg.augment, &mut rng)?;
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let xv = g.constant(x.cast::<T>());
            let logits = net.forward(g, st, xv)?;
            g.cross_entropy(logits, &y)
        },
        |st| eval_cls(net, st, test.0, test.1, 100),
    )
}

/// A scalar model fitted to teacher samples.
pub struct ScalarFit {
    pub layer: PaLaDense,
    pub store: ParamStore<f64>,
    pub train_mse: f64,
    pub test_mse: f64,
    pub log: super::RunLog,
}

impl ScalarFit {
    pub fn predict(&self, xs: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::eval();
        let x = g.constant(Tensor::new(vec![xs.len(), 1], xs.to_vec())?);
        let y = self.layer.forward(&mut g, &self.store, x)?;
        Ok(g.value(y).data().to_vec())
    }
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Full-batch fit of a single `1 -> 1` Padé neuron.
pub fn fit_scalar(
    degree: PaonDegree,
    smoothed: bool,
    data: &TeacherData,
    cfg: &TrainConfig,
) -> Result<ScalarFit> {
    let mut store = ParamStore::new();
    let mut dcfg = PaLaDenseConfig::new(degree, 1, 1);
    dcfg.smoothed = smoothed;
    let layer = PaLaDense::new(&mut store, "neuron", dcfg, cfg.seed)?;
    let n = data.train_x.len();
    let x = Tensor::new(vec![n, 1], data.train_x.clone())?;
    let y = Tensor::new(vec![n, 1], data.train_y.clone())?;
    let outcome = train_loop(
        &mut store,
        cfg,
        &[layer.name().to_string()],
        |g, st, _| {
            let xv = g.constant(x.clone());
            let p = layer.forward(g, st, xv)?;
            g.mse_loss(p, &y)
        },
        |_| Ok(0.0),
    )?;
    let mut fit = ScalarFit {
        layer,
        store,
        train_mse: 0.0,
        test_mse: 0.0,
        log: outcome.log,
    };
    fit.train_mse = mse(&fit.predict(&data.train_x)?, &data.train_y);
    fit.test_mse = mse(&fit.predict(&data.test_x)?, &data.test_y);
    Ok(fit)
}

/// Runs [`fit_scalar`] from `restarts` initializations (seeds `cfg.seed`,
/// `cfg.seed + 1`, ...) and keeps the lowest training error. A single
/// rational neuron has poor local minima, so one start is not enough.
pub fn fit_scalar_restarts(
    degree: PaonDegree,
    smoothed: bool,
    data: &TeacherData,
    cfg: &TrainConfig,
    restarts: usize,
) -> Result<ScalarFit> {
    if restarts == 0 {
        return Err(arg_err!("need at least one start"));
    }
    let mut best: Option<ScalarFit> = None;
    for r in 0..restarts {
        let run = TrainConfig {
            seed: cfg.seed.wrapping_add(r as u64),
            ..cfg.clone()
        };
        let fit = fit_scalar(degree, smoothed, data, &run)?;
        if best.as_ref().map_or(true, |b| fit.train_mse < b.train_mse) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one start"))
}

/// Least-squares quadratic `c0 + c1 x + c2 x^2` through `(xs, ys)`.
pub fn quadratic_least_squares(xs: &[f64], ys: &[f64]) -> Result<[f64; 3]> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(arg_err!("need at least three paired samples"));
    }
    let a = DMatrix::from_fn(xs.len(), 3, |i, j| xs[i].powi(j as i32));
    let b = DVector::from_column_slice(ys);
    let ata = a.transpose() * &a;
    let atb = a.transpose() * b;
    let c = ata
        .cholesky()
        .ok_or_else(|| arg_err!("normal equations are singular"))?
        .solve(&atb);
    Ok([c[0], c[1], c[2]])
}

pub fn eval_quadratic(c: &[f64; 3], x: f64) -> f64 {
    c[0] + c[1] * x + c[2] * x * x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_sr_textures;

    #[test]
    fn crops_are_aligned() {
        let pairs = gen_sr_textures(2, 16, 2, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (x, y) = sample_sr_batch(&pairs, 3, 4, &mut rng).unwrap();
        assert_eq!(x.shape(), &[3, 3, 4, 4]);
        assert_eq!(y.shape(), &[3, 3, 8, 8]);
        let full = crop(&pairs[0].hr, 0, 0, 16).unwrap();
        assert_eq!(full.data(), pairs[0].hr.data());
    }

    #[test]
    fn least_squares_recovers_a_parabola() {
        let xs: Vec<f64> = (0..9).map(|i| i as f64 * 0.5 - 2.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 - 2.0 * x + 0.5 * x * x).collect();
        let c = quadratic_least_squares(&xs, &ys).unwrap();
        assert!(
            (c[0] - 1.0).abs() < 1e-10 && (c[1] + 2.0).abs() < 1e-10 && (c[2] - 0.5).abs() < 1e-10
        );
    }
}
