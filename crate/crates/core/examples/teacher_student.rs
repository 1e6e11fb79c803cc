//! Fits a single smoothed [1/1] neuron and a [2/0] quadratic neuron to a
//! rational teacher, keeping the best of eight starts, and compares both
//! with the best possible quadratic.

use paon::data::gen_teacher_1d;
use paon::paon::{PaonDegree, ScalarPaon};
use paon::train::tasks::{eval_quadratic, fit_scalar_restarts, quadratic_least_squares};
use paon::train::{AugmentConfig, LossKind, Schedule, TrainConfig};

fn main() -> paon::Result<()> {
    let teacher = ScalarPaon::new(vec![0.0, 1.0], vec![1.0], true)?;
    let data = gen_teacher_1d(256, 7, &teacher, (-3.0, 3.0))?;
    let cfg = TrainConfig {
        iterations: 4000,
        batch_size: 1,
        loss: LossKind::L2,
        schedule: Schedule::Cosine {
            lr0: 1e-2,
            lr_min: 1e-7,
        },
        clip_norm: None,
        augment: AugmentConfig::none(),
        seed: 1,
        ..Default::default()
    };
    let pade = fit_scalar_restarts(PaonDegree::new(1, 1)?, true, &data, &cfg, 8)?;
    let quad = fit_scalar_restarts(PaonDegree::new(2, 0)?, true, &data, &cfg, 8)?;
    let c = quadratic_least_squares(&data.train_x, &data.train_y)?;
    let floor = data
        .test_x
        .iter()
        .zip(&data.test_y)
        .map(|(&x, &y)| (eval_quadratic(&c, x) - y).powi(2))
        .sum::<f64>()
        / data.test_x.len() as f64;
    println!("smoothed [1/1] test MSE  {:.3e}", pade.test_mse);
    println!("[2/0] neuron test MSE    {:.3e}", quad.test_mse);
    println!("best quadratic test MSE  {floor:.3e}");
    println!("ratio                    {:.3e}", floor / pade.test_mse);
    Ok(())
}
