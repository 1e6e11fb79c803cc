//! A smoothed [1/0] layer is an ordinary convolution: copy a classic
//! convolution's weights into it and compare outputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use paon::autograd::{Graph, ParamStore};
use paon::kernels::ConvSpec;
use paon::nn::Conv2d;
use paon::paon::{PaLaConfig, PaLaConv, PaonDegree};
use paon::tensor::Tensor;

fn main() -> paon::Result<()> {
    let spec = ConvSpec::new(3, 4, 3).with_stride(2);
    let mut store = ParamStore::<f64>::new();
    let conv = Conv2d::new(&mut store, "conv", spec, true, 1)?;
    let pala = PaLaConv::new(
        &mut store,
        "pala",
        PaLaConfig::new(PaonDegree::new(1, 0)?, spec),
        2,
    )?;
    let w = store.get(conv.weight).clone();
    *store.get_mut(pala.numerator()[0]) = w;
    let b = store.get(conv.bias.unwrap()).clone();
    *store.get_mut(pala.bias().unwrap()) = b;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::from_fn(vec![2, 3, 9, 9], |_| rng.gen_range(-1.0..1.0))?;
    let mut g = Graph::eval();
    let xv = g.constant(x);
    let a = conv.forward(&mut g, &store, xv)?;
    let p = pala.forward(&mut g, &store, xv)?;
    let diff = g
        .value(a)
        .data()
        .iter()
        .zip(g.value(p).data())
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max);
    println!(
        "output {:?}, max |conv - [1/0]| = {diff:e}",
        g.value(a).shape()
    );
    Ok(())
}
