//! Training-based commands: `singularity`, `train-sr`, `train-cls`, `eval`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{
    key, parse_bool, parse_form, parse_shifter, sci, train_config, train_keys, write_file, Key,
    Settings,
};
use crate::autograd::ParamStore;
use crate::data::{
    gen_shapes, gen_sr_textures, load_cifar10_bin, read_ppm, write_ppm, Split, SrPair,
};
use crate::error::{Error, Result};
use crate::kernels::ConvSpec;
use crate::metrics::{cap_psnr, psnr_rgb, ssim_y};
use crate::models::{
    load_checkpoint, save_checkpoint, ClsNet, ClsNetConfig, HeadKind, SrNet, SrNetConfig,
    MANIFEST_FILE,
};
use crate::nn::LayerKind;
use crate::paon::{DenominatorInit, PaLaConfig, PaonDegree};
use crate::tensor::{Scalar, Tensor};
use crate::train::tasks::{super_resolve, train_cls as fit_cls, train_sr as fit_sr};
use crate::train::{LossKind, RunLog};

fn with_defaults(mut keys: Vec<Key>, overrides: &[(&str, &'static str)]) -> Vec<Key> {
    for &(name, default) in overrides {
        let k = keys
            .iter_mut()
            .find(|k| k.name == name)
            .unwrap_or_else(|| panic!("no key `{name}` to override"));
        k.default = default;
    }
    keys
}

fn layer_keys(
    layer: &'static str,
    activation: &'static str,
    den_init: &'static str,
    shift_ks: &'static str,
) -> Vec<Key> {
    vec![
        key("layer", layer, "classic or pala for the replaceable layers"),
        key("degree", "1/1", "Padé order K/L"),
        key("form", "smoothed", "smoothed or vanilla"),
        key(
            "den_init",
            den_init,
            "denominator weights at init: zero or fan-in",
        ),
        key("activation", activation, "id, relu or gelu"),
        key("shifter", "off", "off, kernel or element"),
        key("shift_b", "0", "kernel-wise shift parameter b"),
        key("shift_ks", shift_ks, "element-wise offset kernel size"),
        key("dtype", "f32", "f32 or f64"),
    ]
}

fn layer_kind(s: &Settings) -> Result<LayerKind> {
    match s.raw("layer") {
        "classic" => Ok(LayerKind::Classic),
        "pala" => {
            let mut cfg = PaLaConfig::new(s.get("degree")?, ConvSpec::new(1, 1, 3))
                .with_shifter(parse_shifter(s)?)
                .with_den_init(s.get::<DenominatorInit>("den_init")?);
            cfg.smoothed = parse_form(s)?;
            Ok(LayerKind::Pala(cfg))
        }
        v => Err(Error::Config(format!(
            "bad layer `{v}`: expected classic or pala"
        ))),
    }
}

pub fn train_sr_schema() -> Vec<Key> {
    let mut k = vec![
        key("seed", "5", "model initialization seed"),
        key("data_seed", "11", "texture generator seed"),
        key("pairs", "200", "texture pairs generated"),
        key(
            "train_pairs",
            "160",
            "pairs used for training; the rest are test pairs",
        ),
        key("size", "64", "high-resolution texture size"),
        key("scale", "2", "upscaling factor, 2 or 4"),
        key("channels", "16", "feature channels"),
        key("blocks", "2", "residual blocks R"),
        key("width", "1", "block width multiplier (2 for wide blocks)"),
        key(
            "shared_upsampler",
            "false",
            "reuse one conv for every x2 stage",
        ),
        key(
            "residual_scale",
            "0.1",
            "initial per-channel residual scale",
        ),
        key("patch", "24", "low-resolution training crop size"),
        key("loss", "barron", "barron or l2"),
        key("barron_alpha", "1.5", "Barron loss shape"),
        key("barron_c", "2", "Barron loss scale"),
    ];
    k.extend(layer_keys("pala", "id", "zero", "1"));
    k.extend(train_keys("5000", "4", "2e-3", "1e-6", "1000"));
    k
}

pub fn singularity_schema() -> Vec<Key> {
    let mut k = with_defaults(
        train_sr_schema(),
        &[
            ("pairs", "32"),
            ("size", "32"),
            ("train_pairs", "24"),
            ("channels", "8"),
            ("patch", "8"),
            ("iterations", "2000"),
            ("eval_every", "0"),
        ],
    );
    k.push(key(
        "require_zero",
        "auto",
        "fail on any event: true, false, or auto (smoothed with L <= 1)",
    ));
    k
}

fn sr_net_config(s: &Settings) -> Result<SrNetConfig> {
    let cfg = SrNetConfig {
        blocks: s.get("blocks")?,
        width: s.get("width")?,
        channels: s.get("channels")?,
        body: layer_kind(s)?,
        activation: s.get("activation")?,
        scale: s.get("scale")?,
        shared_upsampler: parse_bool(s, "shared_upsampler")?,
        residual_scale: s.get("residual_scale")?,
        kernel: 3,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn sr_data(s: &Settings) -> Result<(Vec<SrPair>, Vec<SrPair>)> {
    let n: usize = s.get("pairs")?;
    let n_train: usize = s.get("train_pairs")?;
    if n_train == 0 || n_train >= n {
        return Err(Error::Config(format!(
            "train_pairs must be in 1..{n}, got {n_train}"
        )));
    }
    let mut pairs = gen_sr_textures(n, s.get("size")?, s.get("scale")?, s.get("data_seed")?)?;
    let test = pairs.split_off(n_train);
    Ok((pairs, test))
}

fn sr_loss(s: &Settings) -> Result<LossKind> {
    match s.raw("loss") {
        "barron" => Ok(LossKind::Barron {
            alpha: s.get("barron_alpha")?,
            c: s.get("barron_c")?,
        }),
        "l2" => Ok(LossKind::L2),
        v => Err(Error::Config(format!(
            "bad loss `{v}`: expected barron or l2"
        ))),
    }
}

fn write_log(out: &Path, name: &str, log: &RunLog) -> Result<()> {
    write_file(out, name, &log.to_csv())?;
    write_file(out, "layers.csv", &log.layers_csv())
}

/// Trains the configured SR network; returns the network, the best
/// parameters and the log.
fn run_sr<T: Scalar>(s: &Settings) -> Result<(SrNet, ParamStore<T>, RunLog, Vec<SrPair>)> {
    let mut store = ParamStore::<T>::new();
    let net = SrNet::new(&mut store, sr_net_config(s)?, s.get("seed")?)?;
    let (train, test) = sr_data(s)?;
    let cfg = train_config(s, sr_loss(s)?)?;
    let outcome = fit_sr(&net, &mut store, &train, &test, s.get("patch")?, &cfg)?;
    Ok((net, outcome.best, outcome.log, test))
}

fn train_sr_typed<T: Scalar>(s: &Settings, out: &Path) -> Result<bool> {
    let (net, best, log, test) = run_sr::<T>(s)?;
    write_log(out, "train.csv", &log)?;
    let scores = crate::train::tasks::eval_sr(&net, &best, &test)?;
    let mut summary = String::from("key,value\n");
    let _ = writeln!(summary, "params,{}", best.count());
    let _ = writeln!(summary, "test_psnr_db,{:.6}", scores.psnr);
    let _ = writeln!(summary, "test_ssim,{:.6}", scores.ssim);
    let _ = writeln!(
        summary,
        "final_loss,{}",
        sci(log.final_loss().unwrap_or(f64::NAN))
    );
    let _ = writeln!(summary, "singularity_events,{}", log.total_events());
    write_file(out, "summary.csv", &summary)?;
    save_checkpoint(out.join("checkpoint"), &s.manifest(), &best)?;
    println!(
        "params {}  test PSNR {:.3} dB  SSIM {:.4}  events {}",
        best.count(),
        scores.psnr,
        scores.ssim,
        log.total_events()
    );
    Ok(true)
}

pub fn train_sr(s: &Settings, out: &Path) -> Result<bool> {
    match s.raw("dtype") {
        "f32" => train_sr_typed::<f32>(s, out),
        "f64" => train_sr_typed::<f64>(s, out),
        v => Err(Error::Config(format!(
            "bad dtype `{v}`: expected f32 or f64"
        ))),
    }
}

fn singularity_typed<T: Scalar>(s: &Settings, out: &Path) -> Result<bool> {
    let (_, _, log, _) = run_sr::<T>(s)?;
    write_log(out, "singularity.csv", &log)?;
    let degree: PaonDegree = s.get("degree")?;
    let smoothed = parse_form(s)?;
    let require = match s.raw("require_zero") {
        "auto" => s.raw("layer") == "pala" && smoothed && degree.l <= 1,
        _ => parse_bool(s, "require_zero")?,
    };
    let mut totals = vec![0usize; log.layers.len()];
    for r in &log.records {
        for (t, e) in totals.iter_mut().zip(&r.events) {
            *t += e;
        }
    }
    for (name, t) in log.layers.iter().zip(&totals) {
        println!("{name}: events: {t}");
    }
    let total: usize = totals.iter().sum();
    println!(
        "total events: {total} over {} iterations",
        log.records.len()
    );
    if require && total > 0 {
        println!("expected no events for this configuration: FAIL");
        return Ok(false);
    }
    Ok(true)
}

pub fn singularity(s: &Settings, out: &Path) -> Result<bool> {
    match s.raw("dtype") {
        "f32" => singularity_typed::<f32>(s, out),
        "f64" => singularity_typed::<f64>(s, out),
        v => Err(Error::Config(format!(
            "bad dtype `{v}`: expected f32 or f64"
        ))),
    }
}

pub fn train_cls_schema() -> Vec<Key> {
    let mut k = vec![
        key("seed", "9", "model initialization seed"),
        key("data_seed", "21", "synthetic shapes seed"),
        key("dataset", "shapes", "shapes or cifar"),
        key(
            "cifar_dir",
            "",
            "directory with the CIFAR-10 binary batches",
        ),
        key("samples", "2000", "training samples"),
        key("test_samples", "1000", "test samples"),
        key("size", "16", "synthetic image size"),
        key("stages", "1,1,2", "residual blocks per stage"),
        key("head", "pade", "affine or pade"),
    ];
    k.extend(layer_keys("pala", "id", "fan-in", "1"));
    k.extend(train_keys("1000", "32", "3e-3", "1e-5", "250"));
    k
}

type Images = (Tensor<f64>, Vec<usize>);

fn cls_data(s: &Settings) -> Result<(Images, Images)> {
    let n: usize = s.get("samples")?;
    let m: usize = s.get("test_samples")?;
    match s.raw("dataset") {
        "shapes" => {
            let (x, y) = gen_shapes(n + m, s.get("size")?, s.get("data_seed")?)?;
            Ok((
                (x.slice_batch(0, n)?, y[..n].to_vec()),
                (x.slice_batch(n, m)?, y[n..].to_vec()),
            ))
        }
        "cifar" => {
            let dir = s.raw("cifar_dir");
            if dir.is_empty() {
                return Err(Error::Config("dataset=cifar needs cifar_dir".into()));
            }
            Ok((
                load_cifar10_bin(dir, Split::Train, Some(n))?,
                load_cifar10_bin(dir, Split::Test, Some(m))?,
            ))
        }
        v => Err(Error::Config(format!(
            "bad dataset `{v}`: expected shapes or cifar"
        ))),
    }
}

fn cls_net_config(s: &Settings) -> Result<ClsNetConfig> {
    let stages: Vec<usize> = s.list("stages")?;
    let stages: [usize; 3] = stages.try_into().map_err(|v: Vec<usize>| {
        Error::Config(format!("stages needs three counts, got {}", v.len()))
    })?;
    let head = match s.raw("head") {
        "affine" => HeadKind::Affine,
        "pade" => HeadKind::Pade(s.get("degree")?),
        v => {
            return Err(Error::Config(format!(
                "bad head `{v}`: expected affine or pade"
            )))
        }
    };
    let cfg = ClsNetConfig {
        stages,
        layer: layer_kind(s)?,
        activation: s.get("activation")?,
        head,
        ..ClsNetConfig::classic(stages)
    };
    cfg.validate()?;
    Ok(cfg)
}

fn train_cls_typed<T: Scalar>(s: &Settings, out: &Path) -> Result<bool> {
    let ((xtr, ytr), (xte, yte)) = cls_data(s)?;
    let mut store = ParamStore::<T>::new();
    let net = ClsNet::new(&mut store, cls_net_config(s)?, s.get("seed")?)?;
    let cfg = train_config(s, LossKind::CrossEntropy)?;
    let outcome = fit_cls(&net, &mut store, (&xtr, &ytr), (&xte, &yte), &cfg)?;
    write_log(out, "train.csv", &outcome.log)?;
    let best = outcome.log.best_metric().unwrap_or(f64::NAN);
    let last = outcome
        .log
        .records
        .last()
        .and_then(|r| r.metric)
        .unwrap_or(f64::NAN);
    let mut summary = String::from("key,value\n");
    let _ = writeln!(summary, "params,{}", outcome.best.count());
    let _ = writeln!(summary, "layers,{}", net.layer_count());
    let _ = writeln!(summary, "best_test_accuracy,{best:.6}");
    let _ = writeln!(summary, "final_test_accuracy,{last:.6}");
    let _ = writeln!(summary, "singularity_events,{}", outcome.log.total_events());
    write_file(out, "summary.csv", &summary)?;
    save_checkpoint(out.join("checkpoint"), &s.manifest(), &outcome.best)?;
    println!(
        "{} layers, {} params  best test accuracy {best:.2}%  final {last:.2}%",
        net.layer_count(),
        outcome.best.count()
    );
    Ok(true)
}

pub fn train_cls(s: &Settings, out: &Path) -> Result<bool> {
    match s.raw("dtype") {
        "f32" => train_cls_typed::<f32>(s, out),
        "f64" => train_cls_typed::<f64>(s, out),
        v => Err(Error::Config(format!(
            "bad dtype `{v}`: expected f32 or f64"
        ))),
    }
}

pub fn eval_schema() -> Vec<Key> {
    vec![
        key(
            "checkpoint",
            "",
            "train-sr checkpoint directory; its test pairs are evaluated",
        ),
        key("reference", "", "reference PPM image (pair mode)"),
        key("candidate", "", "candidate PPM image (pair mode)"),
        key("images", "0", "test pairs to evaluate, 0 for all"),
        key("dump", "true", "write lr/sr/hr PPM images per test pair"),
    ]
}

fn score(sr: &Tensor<f64>, hr: &Tensor<f64>) -> Result<(f64, f64)> {
    Ok((cap_psnr(psnr_rgb(sr, hr)?), ssim_y(sr, hr)?))
}

fn eval_checkpoint<T: Scalar>(
    train: &Settings,
    dir: &Path,
    s: &Settings,
    out: &Path,
) -> Result<Vec<(String, f64, f64)>> {
    let mut store = ParamStore::<T>::new();
    let net = SrNet::new(&mut store, sr_net_config(train)?, train.get("seed")?)?;
    load_checkpoint(dir, &mut store)?;
    let (_, mut test) = sr_data(train)?;
    let limit: usize = s.get("images")?;
    if limit > 0 {
        test.truncate(limit);
    }
    let dump = parse_bool(s, "dump")?;
    let mut rows = Vec::with_capacity(test.len());
    for (i, p) in test.iter().enumerate() {
        let sr = super_resolve(&net, &store, &p.lr)?;
        let (psnr, ssim) = score(&sr, &p.hr)?;
        if dump {
            write_ppm(out.join(format!("lr_{i:03}.ppm")), &p.lr)?;
            write_ppm(out.join(format!("sr_{i:03}.ppm")), &sr)?;
            write_ppm(out.join(format!("hr_{i:03}.ppm")), &p.hr)?;
        }
        rows.push((format!("test_{i:03}"), psnr, ssim));
    }
    Ok(rows)
}

pub fn eval(s: &Settings, out: &Path) -> Result<bool> {
    let (reference, candidate, checkpoint) =
        (s.raw("reference"), s.raw("candidate"), s.raw("checkpoint"));
    let rows = if !reference.is_empty() || !candidate.is_empty() {
        if reference.is_empty() || candidate.is_empty() || !checkpoint.is_empty() {
            return Err(Error::Config(
                "pair mode needs reference and candidate and no checkpoint".into(),
            ));
        }
        let a = read_ppm::<f64>(reference)?;
        let b = read_ppm::<f64>(candidate)?;
        let (psnr, ssim) = score(&b, &a)?;
        vec![(candidate.to_string(), psnr, ssim)]
    } else if !checkpoint.is_empty() {
        let dir = Path::new(checkpoint);
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut train = Settings::new("train-sr", train_sr_schema());
        train.apply_text(&text, &path.display().to_string())?;
        match train.raw("dtype") {
            "f32" => eval_checkpoint::<f32>(&train, dir, s, out)?,
            "f64" => eval_checkpoint::<f64>(&train, dir, s, out)?,
            v => {
                return Err(Error::Config(format!(
                    "bad dtype `{v}` in checkpoint manifest"
                )))
            }
        }
    } else {
        return Err(Error::Config(
            "eval needs checkpoint=DIR or reference= and candidate=".into(),
        ));
    };
    let mut csv = String::from("image,psnr_db,ssim\n");
    for (name, psnr, ssim) in &rows {
        let _ = writeln!(csv, "{name},{psnr:.6},{ssim:.6}");
        println!("{name}: PSNR {psnr:.3} dB  SSIM {ssim:.4}");
    }
    let n = rows.len() as f64;
    let mean_psnr = rows.iter().map(|r| r.1).sum::<f64>() / n;
    let mean_ssim = rows.iter().map(|r| r.2).sum::<f64>() / n;
    let _ = writeln!(csv, "mean,{mean_psnr:.6},{mean_ssim:.6}");
    println!("mean: PSNR {mean_psnr:.3} dB  SSIM {mean_ssim:.4}");
    write_file(out, "eval.csv", &csv)?;
    Ok(true)
}
