//! Central-difference validation of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::graph::{Graph, Var};
use crate::autograd::params::{ParamId, ParamStore};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub tol_rel: f64,
    /// Coordinates checked per run; larger parameter sets are subsampled.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            tol_rel: 1e-4,
            max_coords: 256,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradMismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates above tolerance or with a non-finite gradient.
    pub failures: Vec<GradMismatch>,
    pub pass: bool,
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-8)
}

fn eval_loss<F>(f: &F, store: &ParamStore<f64>) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    g.value(loss).item()
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences with step `1e-6 * max(1, |theta|)` for every trainable
/// coordinate of `store`, or a seeded subsample of `max_coords` of them.
pub fn grad_check<F>(
    store: &mut ParamStore<f64>,
    f: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    let analytic: Vec<(ParamId, Vec<f64>)> = if g.requires_grad(loss) {
        g.backward(loss)?;
        g.param_grads()
            .into_iter()
            .map(|(id, t)| (id, t.into_data()))
            .collect()
    } else {
        Vec::new()
    };
    let grad_of = |id: ParamId, i: usize| -> f64 {
        analytic
            .iter()
            .find(|(p, _)| *p == id)
            .map_or(0.0, |(_, v)| v[i])
    };

    let coords: Vec<(ParamId, usize)> = store
        .trainable_ids()
        .into_iter()
        .flat_map(|id| (0..store.get(id).len()).map(move |i| (id, i)))
        .collect();
    let picked: Vec<(ParamId, usize)> = if coords.len() > opts.max_coords {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut idx = sample(&mut rng, coords.len(), opts.max_coords).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| coords[i]).collect()
    } else {
        coords
    };

    let mut max_rel_err: f64 = 0.0;
    let mut failures = Vec::new();
    for &(id, i) in &picked {
        let theta = store.get(id).data()[i];
        let h = 1e-6 * theta.abs().max(1.0);
        store.get_mut(id).data_mut()[i] = theta + h;
        let plus = eval_loss(&f, store);
        store.get_mut(id).data_mut()[i] = theta - h;
        let minus = eval_loss(&f, store);
        store.get_mut(id).data_mut()[i] = theta;
        let numeric = (plus? - minus?) / (2.0 * h);
        let a = grad_of(id, i);
        let err = if a.is_finite() && numeric.is_finite() {
            rel_err(a, numeric)
        } else {
            f64::INFINITY
        };
        max_rel_err = max_rel_err.max(err);
        if err > opts.tol_rel {
            failures.push(GradMismatch {
                param: store.param(id).name.clone(),
                index: i,
                analytic: a,
                numeric,
                rel_err: err,
            });
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        checked: picked.len(),
        pass: failures.is_empty(),
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn linear_layer_is_exact() {
        let mut store = ParamStore::new();
        let w = store
            .add(
                "w",
                Tensor::from_fn(vec![3, 4], |i| (i as f64 * 0.37).sin()).unwrap(),
            )
            .unwrap();
        let b = store
            .add("b", Tensor::from_fn(vec![3], |i| i as f64 * 0.1).unwrap())
            .unwrap();
        let x = Tensor::from_fn(vec![2, 4], |i| (i as f64 * 0.91).cos()).unwrap();
        let report = grad_check(
            &mut store,
            |g, s| {
                let xv = g.constant(x.clone());
                let (wv, bv) = (g.param(s, w), g.param(s, b));
                let y = g.linear(xv, wv, Some(bv))?;
                let sq = g.square(y)?;
                g.sum(sq)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.pass);
        assert!(report.max_rel_err <= 1e-7, "{}", report.max_rel_err);
        assert_eq!(report.checked, 15);
    }

    #[test]
    fn constant_function_passes() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::ones(vec![3]).unwrap()).unwrap();
        let report = grad_check(
            &mut store,
            |g, _| {
                let c = g.constant(Tensor::ones(vec![2]).unwrap());
                g.sum(c)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.pass);
        assert_eq!(report.max_rel_err, 0.0);
    }

    #[test]
    fn wrong_gradient_is_reported() {
        // relu at an exact kink: analytic (one-sided 0) disagrees with the
        // central difference (0.5)
        let mut store = ParamStore::new();
        store.add("x", Tensor::zeros(vec![1]).unwrap()).unwrap();
        let report = grad_check(
            &mut store,
            |g, s| {
                let x = g.param(s, ParamId(0));
                let r = g.relu(x)?;
                g.sum(r)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(!report.pass);
        assert_eq!(report.failures[0].param, "x");
    }
}
