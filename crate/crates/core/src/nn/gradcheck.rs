//! Central finite-difference verification of [`Graph::backward`].

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::graph::{Graph, NodeId};
use super::params::{Gradients, ParamId, ParamStore};
use crate::error::Result;
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tol: f64,
    /// Entries checked per parameter tensor; every entry when the tensor is
    /// this small or smaller.
    pub samples_per_param: usize,
    /// Seed for entry sampling and for the graph's dropout masks.
    pub seed: u64,
    /// Build the graph in training mode (dropout active, masks fixed by seed).
    pub training: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-4,
            tol: 1e-4,
            samples_per_param: 24,
            seed: 0,
            training: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Relative error `|a - n| / max(|a|, |n|, 1e-8)`. The floor keeps
/// vanishing gradients from turning round-off into large ratios.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `backward` against central differences of the loss built by
/// `build` for sampled entries of every parameter.
pub fn grad_check<F>(params: &ParamStore<f64>, build: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<NodeId>,
{
    let mut graph = Graph::new(params, cfg.training, cfg.seed);
    let loss = build(&mut graph)?;
    let analytic = graph.backward(loss)?;
    compare_gradients(params, build, &analytic, cfg)
}

/// Finite-difference comparison against externally supplied gradients.
pub fn compare_gradients<F>(
    params: &ParamStore<f64>,
    build: F,
    analytic: &Gradients<f64>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<NodeId>,
{
    let eval = |p: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new(p, cfg.training, cfg.seed);
        let loss = build(&mut g)?;
        Ok(g.value(loss).data()[0])
    };
    let mut rng = seeded(cfg.seed ^ 0x5eed);
    let mut work = params.clone();
    let mut checks = Vec::new();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let id = ParamId(i);
        let len = params.get(id).len();
        let entries: Vec<usize> = if len <= cfg.samples_per_param {
            (0..len).collect()
        } else {
            (0..cfg.samples_per_param).map(|_| rng.gen_range(0..len)).collect()
        };
        let mut max_rel = 0.0f64;
        for &e in &entries {
            let original = work.get(id).data()[e];
            work.get_mut(id).data_mut()[e] = original + cfg.eps;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[e] = original - cfg.eps;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[e] = original;
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let a = analytic.get(id).data()[e];
            max_rel = max_rel.max(relative_error(a, numeric));
        }
        worst = worst.max(max_rel);
        checks.push(ParamCheck {
            name: String::from(params.name(id)),
            checked: entries.len(),
            max_rel_error: max_rel,
        });
    }
    Ok(GradCheckReport {
        params: checks,
        max_rel_error: worst,
        tol: cfg.tol,
    })
}
