//! Trains a classic ResNet-(2,2,2) and a shallower Padé classifier (1,1,2)
//! on 2000 synthetic shapes with the same budget and compares test accuracy.
//! Usage: `cls_compare [iterations]`.

use std::time::Instant;

use paon::autograd::ParamStore;
use paon::data::gen_shapes;
use paon::kernels::ConvSpec;
use paon::models::{ClsNet, ClsNetConfig, HeadKind};
use paon::nn::{Activation, LayerKind};
use paon::paon::{DenominatorInit, PaLaConfig, PaonDegree};
use paon::train::tasks::train_cls;
use paon::train::{LossKind, Schedule, TrainConfig};

fn main() -> paon::Result<()> {
    let iterations = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1000);
    let (images, labels) = gen_shapes(3000, 16, 21)?;
    let train = (images.slice_batch(0, 2000)?, labels[..2000].to_vec());
    let test = (images.slice_batch(2000, 1000)?, labels[2000..].to_vec());
    let cfg = TrainConfig {
        iterations,
        batch_size: 32,
        loss: LossKind::CrossEntropy,
        schedule: Schedule::Cosine {
            lr0: 3e-3,
            lr_min: 1e-5,
        },
        eval_every: 250,
        seed: 4,
        ..Default::default()
    };
    let degree = PaonDegree::new(1, 1)?;
    let pade = ClsNetConfig {
        layer: LayerKind::Pala(
            PaLaConfig::new(degree, ConvSpec::new(1, 1, 3)).with_den_init(DenominatorInit::FanIn),
        ),
        activation: Activation::Identity,
        head: HeadKind::Pade(degree),
        ..ClsNetConfig::classic([1, 1, 2])
    };
    for (name, net_cfg) in [
        ("resnet (2,2,2)", ClsNetConfig::classic([2, 2, 2])),
        ("pade (1,1,2)", pade),
    ] {
        let t = Instant::now();
        let mut store = ParamStore::<f32>::new();
        let net = ClsNet::new(&mut store, net_cfg, 9)?;
        let out = train_cls(
            &net,
            &mut store,
            (&train.0, &train.1),
            (&test.0, &test.1),
            &cfg,
        )?;
        println!(
            "{name:<15} layers {:>2}  best test accuracy {:.2}%  ({:.1} s)",
            net.layer_count(),
            out.log.best_metric().unwrap_or(f64::NAN),
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
