//! Central finite-difference checks of reverse-mode gradients.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Comparison of analytic and numeric derivatives over a set of probes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `|a - n| / max(|a|, |n|)` over the probe vectors as a whole.
    pub rel_err: f64,
    /// Largest absolute entry-wise discrepancy.
    pub max_abs_err: f64,
    pub probes: usize,
}

fn summarize(analytic: &[f64], numeric: &[f64]) -> GradCheck {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let denom = na.max(nn);
    let rel_err = if denom == 0.0 { 0.0 } else { diff / denom };
    let max_abs_err = analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    GradCheck { rel_err, max_abs_err, probes: analytic.len() }
}

fn eval_loss<F>(store: &ParamStore<f64>, loss: &F) -> f64
where
    F: for<'g> Fn(&'g Graph<f64>, &ParamStore<f64>) -> Var<'g, f64>,
{
    let g = Graph::inference();
    loss(&g, store).item()
}

/// Checks `d loss / d params` on `probes` randomly chosen parameter entries.
pub fn check_params<F, R>(store: &mut ParamStore<f64>, loss: F, probes: usize, step: f64, rng: &mut R) -> GradCheck
where
    F: for<'g> Fn(&'g Graph<f64>, &ParamStore<f64>) -> Var<'g, f64>,
    R: Rng + ?Sized,
{
    let grads = {
        let g = Graph::new();
        let l = loss(&g, store);
        g.backward(l).for_store(store)
    };
    let ids: Vec<_> = store.ids().filter(|&id| store.get(id).numel() > 0).collect();
    let mut analytic = Vec::with_capacity(probes);
    let mut numeric = Vec::with_capacity(probes);
    for _ in 0..probes {
        let id = ids[rng.random_range(0..ids.len())];
        let idx = rng.random_range(0..store.get(id).numel());
        let a = grads[id.index()].as_ref().map_or(0.0, |t| t.data()[idx]);
        let orig = store.get(id).data()[idx];
        store.get_mut(id).data_mut()[idx] = orig + step;
        let up = eval_loss(store, &loss);
        store.get_mut(id).data_mut()[idx] = orig - step;
        let down = eval_loss(store, &loss);
        store.get_mut(id).data_mut()[idx] = orig;
        analytic.push(a);
        numeric.push((up - down) / (2.0 * step));
    }
    summarize(&analytic, &numeric)
}

/// Directional-derivative check: compares `<grad, v>` with the central
/// difference of the loss along `v` for `probes` random directions `v` in the
/// joint space of all parameters and inputs.
pub fn check_directional<F, R>(
    store: &mut ParamStore<f64>,
    inputs: &mut [Tensor<f64>],
    loss: F,
    probes: usize,
    step: f64,
    rng: &mut R,
) -> GradCheck
where
    F: for<'g> Fn(&'g Graph<f64>, &ParamStore<f64>, &[Var<'g, f64>]) -> Var<'g, f64>,
    R: Rng + ?Sized,
{
    let (pgrads, igrads) = {
        let g = Graph::new();
        let vars: Vec<_> = inputs.iter().map(|t| g.variable(t.clone())).collect();
        let l = loss(&g, store, &vars);
        let grads = g.backward(l);
        let ig: Vec<Option<Tensor<f64>>> = vars.iter().map(|v| grads.get(*v).cloned()).collect();
        (grads.for_store(store), ig)
    };
    let eval = |store: &ParamStore<f64>, inputs: &[Tensor<f64>]| {
        let g = Graph::inference();
        let vars: Vec<_> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        loss(&g, store, &vars).item()
    };
    let mut analytic = Vec::with_capacity(probes);
    let mut numeric = Vec::with_capacity(probes);
    let ids: Vec<_> = store.ids().collect();
    for _ in 0..probes {
        let pdir: Vec<Tensor<f64>> = ids
            .iter()
            .map(|&id| {
                let t = store.get(id);
                let data = (0..t.numel()).map(|_| StandardNormal.sample(rng)).collect();
                Tensor::from_vec(t.shape(), data).expect("shape")
            })
            .collect();
        let idir: Vec<Tensor<f64>> = inputs
            .iter()
            .map(|t| {
                let data = (0..t.numel()).map(|_| StandardNormal.sample(rng)).collect();
                Tensor::from_vec(t.shape(), data).expect("shape")
            })
            .collect();
        let mut a = 0.0;
        for (i, d) in pdir.iter().enumerate() {
            if let Some(gr) = &pgrads[i] {
                a += gr.data().iter().zip(d.data()).map(|(x, y)| x * y).sum::<f64>();
            }
        }
        for (gr, d) in igrads.iter().zip(&idir) {
            if let Some(gr) = gr {
                a += gr.data().iter().zip(d.data()).map(|(x, y)| x * y).sum::<f64>();
            }
        }
        let shift = |store: &mut ParamStore<f64>, inputs: &mut [Tensor<f64>], s: f64| {
            for (&id, d) in ids.iter().zip(&pdir) {
                let p = store.get_mut(id).data_mut();
                p.iter_mut().zip(d.data()).for_each(|(v, dv)| *v += s * dv);
            }
            for (t, d) in inputs.iter_mut().zip(&idir) {
                t.data_mut().iter_mut().zip(d.data()).for_each(|(v, dv)| *v += s * dv);
            }
        };
        shift(store, inputs, step);
        let up = eval(store, inputs);
        shift(store, inputs, -2.0 * step);
        let down = eval(store, inputs);
        shift(store, inputs, step);
        analytic.push(a);
        numeric.push((up - down) / (2.0 * step));
    }
    summarize(&analytic, &numeric)
}
