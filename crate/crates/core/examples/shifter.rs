//! A kernel-wise shifter moving each channel of an image by a learned
//! sub-pixel amount, bounded by m * tanh(raw / m).

use paon::autograd::{Graph, ParamStore};
use paon::shifter::{Shifter, ShifterConfig};
use paon::tensor::Tensor;

fn main() -> paon::Result<()> {
    let mut store = ParamStore::<f64>::new();
    let shifter = Shifter::new(&mut store, "s", ShifterConfig::kernel_wise(1, 2))?;
    let ramp = Tensor::from_fn(vec![1, 1, 1, 8], |i| i as f64)?;
    for raw in [0.0, 0.5, 1.0, 5.0, 50.0] {
        store.get_mut(store.id("s.shift").unwrap()).data_mut()[0] = raw;
        let mut g = Graph::eval();
        let x = g.constant(ramp.clone());
        let off = shifter.offsets(&mut g, &store, x)?.unwrap();
        let dx = g.value(off).data()[0];
        let y = shifter.forward(&mut g, &store, x)?;
        let row: Vec<String> = g
            .value(y)
            .data()
            .iter()
            .map(|v| format!("{v:.2}"))
            .collect();
        println!("raw {raw:>5}: dx = {dx:.4}  row = [{}]", row.join(" "));
    }
    Ok(())
}
