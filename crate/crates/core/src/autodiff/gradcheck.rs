//! Central finite-difference verification of analytic gradients.
//!
//! Tensor-valued outputs are reduced to a scalar by a fixed random
//! projection `Σ wᵢ yᵢ`, which exercises every output component at once.
//! The error for one scalar is `|a − n| / max(|a|, |n|, floor)`.

use super::graph::{Graph, NodeId};
use super::params::ParamStore;
use crate::error::Result;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Lower bound on the relative-error denominator, so that components
    /// whose true gradient is essentially zero are compared absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            floor: 1e-3,
            seed: 0,
        }
    }
}

/// Which scalar produced the worst error.
#[derive(Debug, Clone, PartialEq)]
pub enum Site {
    Input { input: usize, index: usize },
    Param { name: String, index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<Site>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

fn evaluate<F>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    proj: &Option<Tensor<f64>>,
    build: &F,
) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&mut g, store, &ids)?;
    let v = g.value(out);
    Ok(match proj {
        Some(w) => v.data().iter().zip(w.data()).map(|(a, b)| a * b).sum(),
        None => v.data()[0],
    })
}

/// Checks gradients with respect to every scalar of `inputs` and of every
/// parameter in `store`. `build` must construct the same function each call.
pub fn grad_check_with_params<F>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    opts: GradCheckOptions,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&mut g, store, &ids)?;
    let proj = if g.value(out).len() == 1 {
        None
    } else {
        let mut rng = SeededRng::new(opts.seed).split("projection");
        let dims = g.value(out).dims().to_vec();
        let n = g.value(out).len();
        Some(Tensor::from_vec(
            &dims,
            (0..n).map(|_| rng.normal()).collect(),
        )?)
    };
    let scalar = match &proj {
        Some(w) => g.weighted_sum(out, w.clone())?,
        None => out,
    };
    let grads = g.backward(scalar)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut record = |a: f64, n: f64, site: Site| {
        let err = (a - n).abs() / a.abs().max(n.abs()).max(opts.floor);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = err.max(report.max_rel_error);
            report.worst = Some(site);
            report.analytic = a;
            report.numeric = n;
        }
    };

    let mut perturbed = inputs.to_vec();
    for (k, id) in ids.iter().enumerate() {
        let analytic = grads
            .get(*id)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = inputs[k].data()[i];
            perturbed[k].data_mut()[i] = orig + opts.eps;
            let fp = evaluate(store, &perturbed, &proj, &build)?;
            perturbed[k].data_mut()[i] = orig - opts.eps;
            let fm = evaluate(store, &perturbed, &proj, &build)?;
            perturbed[k].data_mut()[i] = orig;
            record(
                a,
                (fp - fm) / (2.0 * opts.eps),
                Site::Input { input: k, index: i },
            );
        }
    }

    let mut ps = store.clone();
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let analytic = grads.params().get(&name).map(|t| t.data().to_vec());
        let len = store.get(&name).map_or(0, Tensor::len);
        let analytic = analytic.unwrap_or_else(|| vec![0.0; len]);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = store.get(&name).expect("listed").data()[i];
            ps.get_mut(&name).expect("listed").data_mut()[i] = orig + opts.eps;
            let fp = evaluate(&ps, inputs, &proj, &build)?;
            ps.get_mut(&name).expect("listed").data_mut()[i] = orig - opts.eps;
            let fm = evaluate(&ps, inputs, &proj, &build)?;
            ps.get_mut(&name).expect("listed").data_mut()[i] = orig;
            record(
                a,
                (fp - fm) / (2.0 * opts.eps),
                Site::Param {
                    name: name.clone(),
                    index: i,
                },
            );
        }
    }
    Ok(report)
}

/// [`grad_check_with_params`] without parameters.
pub fn grad_check<F>(
    inputs: &[Tensor<f64>],
    opts: GradCheckOptions,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    grad_check_with_params(&ParamStore::new(), inputs, opts, |g, _, ids| build(g, ids))
}
