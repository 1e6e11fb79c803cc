//! Trains a Padé SR network without activations and a classic wide-block
//! GELU network of matched size on synthetic textures, then compares test
//! PSNR. Usage: `sr_compare [iterations]`.

use std::time::Instant;

use paon::autograd::ParamStore;
use paon::data::gen_sr_textures;
use paon::kernels::ConvSpec;
use paon::models::{SrNet, SrNetConfig};
use paon::nn::{Activation, LayerKind};
use paon::paon::{PaLaConfig, PaonDegree};
use paon::train::tasks::train_sr;
use paon::train::{Schedule, TrainConfig};

fn main() -> paon::Result<()> {
    let iterations = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(5000);
    let pairs = gen_sr_textures(200, 32, 2, 11)?;
    let (train, test) = pairs.split_at(160);
    let cfg = TrainConfig {
        iterations,
        batch_size: 4,
        schedule: Schedule::Cosine {
            lr0: 2e-3,
            lr_min: 1e-6,
        },
        seed: 3,
        ..Default::default()
    };
    let classic = SrNetConfig {
        width: 2,
        ..SrNetConfig::classic(16, 2, 2)
    };
    let pade = SrNetConfig {
        body: LayerKind::Pala(PaLaConfig::new(
            PaonDegree::new(1, 1)?,
            ConvSpec::new(1, 1, 3),
        )),
        activation: Activation::Identity,
        ..SrNetConfig::classic(16, 2, 2)
    };
    for (name, net_cfg) in [("classic wide GELU", classic), ("pade [1/1] id", pade)] {
        let t = Instant::now();
        let mut store = ParamStore::<f32>::new();
        let net = SrNet::new(&mut store, net_cfg, 5)?;
        let out = train_sr(&net, &mut store, train, test, 12, &cfg)?;
        println!(
            "{name:<18} params {:>6}  best test PSNR {:.3} dB  ({:.1} s)",
            store.count(),
            out.log.best_metric().unwrap_or(f64::NAN),
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
