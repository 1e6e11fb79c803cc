//! The optimization loop and its log.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::augment::AugmentConfig;
use super::optim::{clip_grad_norm, Optimizer, OptimizerKind, StepOutcome};
use super::schedule::Schedule;
use crate::autograd::{Graph, ParamStore, Var, SINGULARITY_THRESHOLD};
use crate::error::{arg_err, Error, Result};
use crate::nn::apply_bn_updates;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossKind {
    L2,
    Barron { alpha: f64, c: f64 },
    CrossEntropy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    pub schedule: Schedule,
    /// Global gradient-norm limit; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub augment: AugmentConfig,
    pub seed: u64,
    /// Evaluate every this many iterations and after the last one; `0`
    /// evaluates only at the end.
    pub eval_every: usize,
    pub singularity_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            batch_size: 8,
            loss: LossKind::Barron { alpha: 1.5, c: 2.0 },
            optimizer: OptimizerKind::AdamW { weight_decay: 0.0 },
            schedule: Schedule::Cosine {
                lr0: 1e-3,
                lr_min: 1e-6,
            },
            clip_norm: Some(1.0),
            augment: AugmentConfig::default(),
            seed: 0,
            eval_every: 0,
            singularity_threshold: SINGULARITY_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(arg_err!("iterations and batch size must be positive"));
        }
        self.schedule.validate()?;
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(arg_err!("clip norm must be positive, got {c}"));
            }
        }
        if !(0.0..=1.0).contains(&self.augment.prob) {
            return Err(arg_err!("augmentation probability must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Seed of the batch drawn at `iter`, so a failing batch can be rebuilt.
pub fn batch_seed(seed: u64, iter: usize) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed
        ^ (iter as u64)
            .wrapping_add(1)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub lr: f64,
    pub loss: f64,
    /// Validation metric, when evaluated at this iteration.
    pub metric: Option<f64>,
    /// Near-singular denominator entries per tracked layer.
    pub events: Vec<usize>,
    pub skipped: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub layers: Vec<String>,
    pub records: Vec<IterRecord>,
}

impl RunLog {
    pub fn header(&self) -> String {
        let mut h = String::from("iter,lr,loss,metric");
        for i in 0..self.layers.len() {
            let _ = write!(h, ",qzero_events_layer_{i}");
        }
        h
    }

    /// CSV with one row per iteration; the metric column is empty when no
    /// evaluation ran.
    pub fn to_csv(&self) -> String {
        let mut s = self.header();
        s.push('\n');
        for r in &self.records {
            let metric = r.metric.map(|m| format!("{m:.6}")).unwrap_or_default();
            let _ = write!(s, "{},{:.9e},{:.9e},{}", r.iter, r.lr, r.loss, metric);
            for e in &r.events {
                let _ = write!(s, ",{e}");
            }
            s.push('\n');
        }
        s
    }

    /// `layer_index,name` rows naming the event columns.
    pub fn layers_csv(&self) -> String {
        let mut s = String::from("layer_index,name\n");
        for (i, n) in self.layers.iter().enumerate() {
            let _ = writeln!(s, "{i},{n}");
        }
        s
    }

    pub fn total_events(&self) -> usize {
        self.records.iter().flat_map(|r| &r.events).sum()
    }

    pub fn best_metric(&self) -> Option<f64> {
        self.records
            .iter()
            .filter_map(|r| r.metric)
            .fold(None, |b, m| Some(b.map_or(m, |b: f64| b.max(m))))
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }
}

/// Result of [`train_loop`]: the log and the parameters with the best
/// validation metric (the final ones when nothing was evaluated).
pub struct TrainOutcome<T> {
    pub log: RunLog,
    pub best: ParamStore<T>,
}

/// Runs `cfg.iterations` optimizer steps.
///
/// `batch_loss` builds the loss for the batch identified by its seed on a
/// fresh training graph; `evaluate` returns a validation metric where
/// larger is better. Padé layers named in `layers` get one event column
/// each. A non-finite loss aborts with the offending batch seed.
pub fn train_loop<T: Scalar>(
    store: &mut ParamStore<T>,
    cfg: &TrainConfig,
    layers: &[String],
    mut batch_loss: impl FnMut(&mut Graph<T>, &ParamStore<T>, u64) -> Result<Var>,
    mut evaluate: impl FnMut(&ParamStore<T>) -> Result<f64>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let mut opt = Optimizer::new(cfg.optimizer.clone(), store);
    let mut log = RunLog {
        layers: layers.to_vec(),
        records: Vec::with_capacity(cfg.iterations),
    };
    let column: BTreeMap<&str, usize> = layers
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut best: Option<(f64, ParamStore<T>)> = None;

    for iter in 0..cfg.iterations {
        let seed = batch_seed(cfg.seed, iter);
        let mut g = Graph::new();
        g.set_singularity_threshold(cfg.singularity_threshold);
        let loss = batch_loss(&mut g, store, seed)?;
        let loss_value = g.value(loss).item()?.as_f64();
        if !loss_value.is_finite() {
            return Err(Error::Diverged {
                iter,
                batch_seed: seed,
                reason: format!("loss is {loss_value}"),
            });
        }
        g.backward(loss)?;
        let mut grads = g.param_grads();
        if let Some(max) = cfg.clip_norm {
            clip_grad_norm(&mut grads, max);
        }
        let lr = cfg.schedule.lr_at(iter, cfg.iterations)?;
        let outcome = opt.step(store, &grads, lr)?;
        apply_bn_updates(store, g.bn_updates());

        let mut events = vec![0; layers.len()];
        for e in g.singularities() {
            if let Some(&i) = column.get(e.layer.as_str()) {
                events[i] += e.count;
            }
        }
        let last = iter + 1 == cfg.iterations;
        let metric = if last || (cfg.eval_every > 0 && (iter + 1) % cfg.eval_every == 0) {
            let m = evaluate(store)?;
            if best.as_ref().map_or(true, |(b, _)| m > *b) {
                best = Some((m, store.clone()));
            }
            Some(m)
        } else {
            None
        };
        log.records.push(IterRecord {
            iter,
            lr,
            loss: loss_value,
            metric,
            events,
            skipped: outcome == StepOutcome::SkippedNonFinite,
        });
    }
    let best = best.map(|(_, s)| s).unwrap_or_else(|| store.clone());
    Ok(TrainOutcome { log, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::ConvSpec;
    use crate::paon::{PaLaConfig, PaLaConv, PaonDegree};
    use crate::tensor::Tensor;

    #[test]
    fn batch_seeds_differ_and_repeat() {
        assert_eq!(batch_seed(1, 5), batch_seed(1, 5));
        assert_ne!(batch_seed(1, 5), batch_seed(1, 6));
        assert_ne!(batch_seed(1, 5), batch_seed(2, 5));
    }

    fn overfit(iterations: usize) -> (RunLog, f64) {
        let mut store = ParamStore::<f64>::new();
        let layer = PaLaConv::new(
            &mut store,
            "pala",
            PaLaConfig::new(PaonDegree::new(1, 1).unwrap(), ConvSpec::new(3, 3, 3)),
            2,
        )
        .unwrap();
        let x = Tensor::from_fn(vec![1, 3, 6, 6], |i| ((i * 37 % 23) as f64 / 23.0) - 0.5).unwrap();
        let y = Tensor::from_fn(vec![1, 3, 6, 6], |i| {
            ((i * 11 % 19) as f64 / 19.0) * 0.6 - 0.3
        })
        .unwrap();
        let cfg = TrainConfig {
            iterations,
            loss: LossKind::L2,
            schedule: Schedule::Cosine {
                lr0: 1e-2,
                lr_min: 1e-5,
            },
            clip_norm: None,
            eval_every: 500,
            ..Default::default()
        };
        let out = train_loop(
            &mut store,
            &cfg,
            &["pala".to_string()],
            |g, st, _| {
                let xv = g.constant(x.clone());
                let p = layer.forward(g, st, xv)?;
                g.mse_loss(p, &y)
            },
            |_| Ok(0.0),
        )
        .unwrap();
        let last = out.log.final_loss().unwrap();
        (out.log, last)
    }

    #[test]
    fn memorizes_one_sample() {
        let (log, last) = overfit(2000);
        assert!(last < 1e-4, "final loss {last}");
        assert_eq!(log.total_events(), 0);
        for r in &log.records {
            let want = crate::train::cosine_lr(r.iter, 2000, 1e-2, 1e-5).unwrap();
            assert_eq!(r.lr, want);
        }
        assert_eq!(log.records.iter().filter(|r| r.metric.is_some()).count(), 4);
        let (again, _) = overfit(2000);
        assert_eq!(log.to_csv(), again.to_csv());
        assert!(log
            .to_csv()
            .starts_with("iter,lr,loss,metric,qzero_events_layer_0\n0,"));
    }

    #[test]
    fn nan_loss_reports_the_batch() {
        let mut store = ParamStore::<f64>::new();
        let cfg = TrainConfig {
            iterations: 3,
            ..Default::default()
        };
        let err = train_loop(
            &mut store,
            &cfg,
            &[],
            |g, _, _| Ok(g.leaf(Tensor::scalar(f64::NAN), true)),
            |_| Ok(0.0),
        )
        .err()
        .unwrap();
        match err {
            Error::Diverged {
                iter,
                batch_seed: s,
                ..
            } => {
                assert_eq!(iter, 0);
                assert_eq!(s, batch_seed(0, 0));
            }
            e => panic!("unexpected {e}"),
        }
    }
}
