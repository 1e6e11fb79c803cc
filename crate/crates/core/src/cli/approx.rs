//! `approx`: scalar teacher-student fits against the closed-form quadratic
//! least-squares floor.

use std::fmt::Write as _;
use std::path::Path;

use super::{key, parse_bool, sci, write_file, Key, Settings};
use crate::data::gen_teacher_1d;
use crate::error::Result;
use crate::paon::{PaonDegree, ScalarPaon};
use crate::train::tasks::{
    eval_quadratic, fit_scalar_restarts, quadratic_least_squares, ScalarFit,
};
use crate::train::{AugmentConfig, LossKind, Schedule, TrainConfig};

pub fn schema() -> Vec<Key> {
    vec![
        key(
            "seed",
            "1",
            "first initialization seed; restarts use seed+1, seed+2, ...",
        ),
        key("data_seed", "7", "seed of the random test points"),
        key("points", "256", "training grid points and test points"),
        key("lo", "-3", "interval start"),
        key("hi", "3", "interval end"),
        key("teacher_num", "0,1", "teacher a0,a1,..,aK"),
        key(
            "teacher_den",
            "1",
            "teacher b1,..,bL (empty for a polynomial)",
        ),
        key(
            "teacher_smoothed",
            "true",
            "evaluate the teacher in smoothed form",
        ),
        key("iterations", "4000", "full-batch Adam steps per start"),
        key("lr", "1e-2", "initial learning rate"),
        key("lr_min", "1e-7", "final learning rate"),
        key(
            "restarts",
            "8",
            "initializations per model; the lowest training error is kept",
        ),
        key(
            "max_mse",
            "1e-6",
            "pass if the [1/1] test MSE is below this",
        ),
        key(
            "min_ratio",
            "100",
            "pass if quadratic floor / [1/1] MSE reaches this; 0 skips",
        ),
        key("curve_points", "201", "rows of curves.csv"),
    ]
}

pub fn run(s: &Settings, out: &Path) -> Result<bool> {
    let teacher = ScalarPaon::new(
        s.list("teacher_num")?,
        s.list("teacher_den")?,
        parse_bool(s, "teacher_smoothed")?,
    )?;
    let interval = (s.get::<f64>("lo")?, s.get::<f64>("hi")?);
    let data = gen_teacher_1d(s.get("points")?, s.get("data_seed")?, &teacher, interval)?;
    let cfg = TrainConfig {
        iterations: s.get("iterations")?,
        batch_size: 1,
        loss: LossKind::L2,
        schedule: Schedule::Cosine {
            lr0: s.get("lr")?,
            lr_min: s.get("lr_min")?,
        },
        clip_norm: None,
        augment: AugmentConfig::none(),
        seed: s.get("seed")?,
        ..Default::default()
    };
    let restarts = s.get("restarts")?;
    let pade = fit_scalar_restarts(PaonDegree::new(1, 1)?, true, &data, &cfg, restarts)?;
    let quad = fit_scalar_restarts(PaonDegree::new(2, 0)?, true, &data, &cfg, restarts)?;
    let c = quadratic_least_squares(&data.train_x, &data.train_y)?;
    let ls_mse = |xs: &[f64], ys: &[f64]| {
        xs.iter()
            .zip(ys)
            .map(|(&x, &y)| (eval_quadratic(&c, x) - y).powi(2))
            .sum::<f64>()
            / xs.len() as f64
    };
    let floor_train = ls_mse(&data.train_x, &data.train_y);
    let floor = ls_mse(&data.test_x, &data.test_y);

    let mut csv = String::from("model,train_mse,test_mse\n");
    for (name, tr, te) in [
        ("pade_1_1", pade.train_mse, pade.test_mse),
        ("quadratic_2_0", quad.train_mse, quad.test_mse),
        ("least_squares_quadratic", floor_train, floor),
    ] {
        let _ = writeln!(csv, "{name},{},{}", sci(tr), sci(te));
    }
    write_file(out, "approx.csv", &csv)?;
    write_file(out, "curves.csv", &curves(s, &teacher, &pade, &quad, &c)?)?;
    write_file(out, "train_pade_1_1.csv", &pade.log.to_csv())?;
    write_file(out, "train_quadratic_2_0.csv", &quad.log.to_csv())?;

    let max_mse: f64 = s.get("max_mse")?;
    let min_ratio: f64 = s.get("min_ratio")?;
    let ratio = floor / pade.test_mse;
    let fit_ok = pade.test_mse < max_mse;
    let ratio_ok = min_ratio <= 0.0 || ratio >= min_ratio;
    println!("smoothed [1/1] test MSE   {:.3e}", pade.test_mse);
    println!("[2/0] neuron test MSE     {:.3e}", quad.test_mse);
    println!("quadratic floor test MSE  {floor:.3e}");
    println!("floor / [1/1]             {ratio:.3e}");
    println!(
        "[1/1] MSE < {max_mse:e}: {}",
        if fit_ok { "pass" } else { "FAIL" }
    );
    if min_ratio > 0.0 {
        println!(
            "ratio >= {min_ratio}: {}",
            if ratio_ok { "pass" } else { "FAIL" }
        );
    }
    Ok(fit_ok && ratio_ok)
}

fn curves(
    s: &Settings,
    teacher: &ScalarPaon,
    pade: &ScalarFit,
    quad: &ScalarFit,
    c: &[f64; 3],
) -> Result<String> {
    let n: usize = s.get("curve_points")?;
    let (lo, hi): (f64, f64) = (s.get("lo")?, s.get("hi")?);
    let xs: Vec<f64> = (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n.max(2) - 1) as f64)
        .collect();
    let p = pade.predict(&xs)?;
    let q = quad.predict(&xs)?;
    let mut csv = String::from("x,teacher,pade_1_1,quadratic_2_0,least_squares_quadratic\n");
    for (i, &x) in xs.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            sci(x),
            sci(teacher.eval(x)),
            sci(p[i]),
            sci(q[i]),
            sci(eval_quadratic(c, x))
        );
    }
    Ok(csv)
}
