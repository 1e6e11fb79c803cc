//! Denominators of vanilla and smoothed [1/1] dense layers with random
//! weights: the vanilla one crosses zero, the smoothed one stays >= 1.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use paon::autograd::{Graph, ParamStore};
use paon::metrics::singularity_scan;
use paon::paon::{PaLaDense, PaLaDenseConfig, PaonDegree};
use paon::tensor::Tensor;

fn main() -> paon::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::<f64>::from_fn(vec![1000, 8], |_| rng.gen_range(-2.0..2.0))?;
    for smoothed in [false, true] {
        let mut store = ParamStore::<f64>::new();
        let mut cfg = PaLaDenseConfig::new(PaonDegree::new(1, 1)?, 8, 16);
        cfg.smoothed = smoothed;
        let layer = PaLaDense::new(&mut store, "d", cfg, 1)?;
        let mut wr = ChaCha8Rng::seed_from_u64(4);
        for id in store.trainable_ids() {
            for v in store.get_mut(id).data_mut() {
                *v = wr.gen_range(-1.0..1.0);
            }
        }
        let mut g = Graph::eval();
        let xv = g.constant(x.clone());
        let parts = layer.forward_parts(&mut g, &store, xv)?;
        let den = g.value(parts.denominator.expect("L > 0"));
        let scan = singularity_scan(den, 0.01);
        println!(
            "{:>8}: {} of {} denominators below 0.01, min |Q| = {:.3e}",
            if smoothed { "smoothed" } else { "vanilla" },
            scan.count,
            den.len(),
            scan.min_abs
        );
    }
    Ok(())
}
