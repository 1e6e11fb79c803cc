//! Central-difference check of a smoothed [2/1] layer with an element-wise
//! shifter, after moving every parameter away from its initial value.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use paon::autograd::{grad_check, GradCheckOptions, Graph, ParamStore};
use paon::kernels::ConvSpec;
use paon::paon::{PaLaConfig, PaLaConv, PaonDegree};
use paon::shifter::ShifterConfig;
use paon::tensor::Tensor;

fn main() -> paon::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::<f64>::new();
    let cfg = PaLaConfig::new(PaonDegree::new(2, 1)?, ConvSpec::new(2, 3, 3))
        .with_shifter(Some(ShifterConfig::element_wise(2, 3)));
    let layer = PaLaConv::new(&mut store, "pala", cfg, 1)?;
    for id in store.trainable_ids() {
        for v in store.get_mut(id).data_mut() {
            *v = rng.gen_range(-0.2..0.2);
        }
    }
    let x = Tensor::from_fn(vec![2, 2, 6, 6], |_| rng.gen_range(-0.5..0.5))?;
    let target = Tensor::from_fn(vec![2, 3, 6, 6], |_| rng.gen_range(-0.5..0.5))?;
    let report = grad_check(
        &mut store,
        |g: &mut Graph<f64>, st| {
            let xv = g.constant(x.clone());
            let y = layer.forward(g, st, xv)?;
            g.mse_loss(y, &target)
        },
        &GradCheckOptions {
            max_coords: 1000,
            ..Default::default()
        },
    )?;
    println!(
        "{} coordinates, max relative error {:.2e}, {}",
        report.checked,
        report.max_rel_err,
        if report.pass { "pass" } else { "FAIL" }
    );
    Ok(())
}
