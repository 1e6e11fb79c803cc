//! Reference networks: a residual super-resolution network and a
//! three-stage residual classifier, each buildable from plain or Padé
//! layers.

mod checkpoint;
mod cls;
mod sr;

pub use checkpoint::{load_checkpoint, save_checkpoint, MANIFEST_FILE};
pub use cls::{ClsNet, ClsNetConfig, HeadKind, STAGE_CHANNELS};
pub use sr::{SrNet, SrNetConfig};

use crate::autograd::{Graph, ParamStore, Var};
use crate::error::Result;
use crate::metrics::OpLayer;
use crate::tensor::Scalar;

/// Either network, for code that trains or evaluates both.
#[derive(Clone, Debug)]
pub enum Network {
    Sr(SrNet),
    Cls(ClsNet),
}

impl Network {
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        match self {
            Network::Sr(n) => n.forward(g, store, x),
            Network::Cls(n) => n.forward(g, store, x),
        }
    }

    pub fn pala_layers(&self) -> Vec<String> {
        match self {
            Network::Sr(n) => n.pala_layers(),
            Network::Cls(n) => n.pala_layers(),
        }
    }

    pub fn op_layers(&self, h: usize, w: usize) -> Vec<OpLayer> {
        match self {
            Network::Sr(n) => n.op_layers(h, w),
            Network::Cls(n) => n.op_layers(h, w),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::ConvSpec;
    use crate::nn::{Activation, LayerKind};
    use crate::paon::{PaLaConfig, PaonDegree};
    use crate::shifter::ShifterConfig;
    use crate::tensor::Tensor;

    fn pala(k: usize, l: usize) -> LayerKind {
        LayerKind::Pala(PaLaConfig::new(
            PaonDegree::new(k, l).unwrap(),
            ConvSpec::new(1, 1, 3),
        ))
    }

    fn sr_count(cfg: SrNetConfig) -> usize {
        let mut store = ParamStore::<f32>::new();
        SrNet::new(&mut store, cfg, 0).unwrap();
        store.count()
    }

    #[test]
    fn sr_parameter_counts() {
        let mut wide = SrNetConfig::classic(48, 3, 4);
        wide.width = 2;
        assert_eq!(sr_count(wide), 439_107);
        let mut pade = SrNetConfig::classic(48, 3, 4);
        pade.body = pala(1, 1);
        pade.activation = Activation::Identity;
        assert_eq!(sr_count(pade), 438_963);
        let mut quad = pade;
        quad.body = pala(2, 0);
        assert_eq!(sr_count(quad), sr_count(pade));
        let mut shifted = pade;
        shifted.body = LayerKind::Pala(
            PaLaConfig::new(PaonDegree::new(1, 1).unwrap(), ConvSpec::new(1, 1, 3))
                .with_shifter(Some(ShifterConfig::element_wise(1, 1))),
        );
        assert_eq!(sr_count(shifted), 467_187);
        let mut shared = pade;
        shared.shared_upsampler = true;
        assert_eq!(sr_count(pade) - sr_count(shared), 48 * 192 * 9 + 192);
    }

    #[test]
    fn reduction_reproduces_classic_sr_count() {
        let classic = SrNetConfig::classic(16, 2, 2);
        let mut reduced = classic;
        reduced.body = pala(1, 0);
        assert_eq!(sr_count(classic), sr_count(reduced));
    }

    #[test]
    fn sr_shapes_and_scale_detachment() {
        let mut cfg = SrNetConfig::classic(8, 2, 4);
        cfg.body = pala(1, 1);
        let mut store = ParamStore::<f64>::new();
        let net = SrNet::new(&mut store, cfg, 3).unwrap();
        let x = Tensor::from_fn(vec![2, 3, 5, 6], |i| ((i % 13) as f64 / 13.0) - 0.5).unwrap();
        let run = |store: &ParamStore<f64>| {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let y = net.forward(&mut g, store, xv).unwrap();
            g.value(y).clone()
        };
        let y = run(&store);
        assert_eq!(y.shape(), &[2, 3, 20, 24]);
        assert_eq!(y, run(&store));
        for id in net.residual_scales() {
            *store.get_mut(id) = store.get(id).zeros_like();
        }
        let detached = run(&store);
        let w = store.id("blocks.0.layer1.num.1").unwrap();
        *store.get_mut(w) = store.get(w).map(|v| v * 3.0 + 0.1);
        assert_eq!(run(&store), detached);
        assert!(SrNet::new(
            &mut ParamStore::<f64>::new(),
            SrNetConfig::classic(8, 1, 3),
            0
        )
        .is_err());
    }

    #[test]
    fn classifier_layers_and_shapes() {
        for (stages, n) in [([3, 3, 3], 20), ([2, 2, 2], 14), ([1, 1, 2], 10)] {
            assert_eq!(ClsNetConfig::classic(stages).layer_count(), n);
        }
        let mut cfg = ClsNetConfig::classic([1, 1, 2]);
        cfg.layer = pala(1, 1);
        cfg.activation = Activation::Identity;
        cfg.head = HeadKind::Pade(PaonDegree::new(1, 1).unwrap());
        let mut store = ParamStore::<f64>::new();
        let net = ClsNet::new(&mut store, cfg, 1).unwrap();
        assert_eq!(net.layer_count(), 10);
        let mut g = Graph::new();
        let x = g.constant(
            Tensor::from_fn(vec![2, 3, 32, 32], |i| ((i * 31 % 17) as f64 / 17.0) - 0.5).unwrap(),
        );
        let y = net.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 10]);
        assert!(g.value(y).all_finite());
        assert!(g.singularities().iter().all(|e| e.count == 0));
        assert!(net
            .pala_layers()
            .contains(&"stages.1.0.shortcut".to_string()));
    }

    #[test]
    fn reduction_reproduces_classic_classifier_count() {
        let classic = ClsNetConfig::classic([2, 2, 2]);
        let mut reduced = classic;
        reduced.layer = pala(1, 0);
        let count = |cfg| {
            let mut s = ParamStore::<f32>::new();
            ClsNet::new(&mut s, cfg, 0).unwrap();
            s.count()
        };
        assert_eq!(count(classic), count(reduced));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParamStore::<f32>::new();
        let net = ClsNet::new(&mut store, ClsNetConfig::classic([1, 1, 1]), 5).unwrap();
        save_checkpoint(dir.path(), "seed = 5\n", &store).unwrap();
        let mut other = ParamStore::<f32>::new();
        ClsNet::new(&mut other, ClsNetConfig::classic([1, 1, 1]), 6).unwrap();
        assert_eq!(
            load_checkpoint(dir.path(), &mut other).unwrap(),
            "seed = 5\n"
        );
        for ((_, a), (_, b)) in store.iter().zip(other.iter()) {
            assert_eq!(a.value, b.value);
        }
        let _ = net;
    }
}
