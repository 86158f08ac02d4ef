//! Discretized Bayesian posterior over model parameters.
//!
//! The prior is represented on a fixed tensor grid with trapezoidal weights.
//! A posterior is the prior plus sufficient statistics (DLT / non-DLT counts
//! per dose); log weights are always rebuilt from the prior in ascending dose
//! order, so the result does not depend on the order in which observations
//! arrived.
//!
//! Probabilities fed into likelihood terms and functionals are clamped to
//! `[PROB_CLAMP, 1 - PROB_CLAMP]`. Posterior means use the raw model value.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ModelSpec, Node};

/// Probabilities are clamped to [ε, 1 − ε] before entering logs or losses.
pub const PROB_CLAMP: f64 = 1e-12;

/// Minimum number of quadrature nodes.
pub const MIN_NODES: usize = 32;

fn default_half_width() -> f64 {
    8.0
}

/// Quadrature grid resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Nodes per parameter dimension. Defaults to 201 for one-parameter
    /// models and 101 for two-parameter models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes_per_dim: Option<usize>,
    /// Grid spans prior mean ± this many prior standard deviations.
    #[serde(default = "default_half_width")]
    pub half_width_sd: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            nodes_per_dim: None,
            half_width_sd: default_half_width(),
        }
    }
}

impl GridSpec {
    pub fn with_nodes(nodes_per_dim: usize) -> Self {
        GridSpec {
            nodes_per_dim: Some(nodes_per_dim),
            ..Default::default()
        }
    }

    fn resolved_nodes(&self, dim: usize) -> usize {
        self.nodes_per_dim
            .unwrap_or(if dim == 1 { 201 } else { 101 })
    }
}

#[inline]
pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

#[derive(Debug)]
struct Grid {
    model: ModelSpec,
    nodes: Vec<Node>,
    log_prior: Vec<f64>,
}

/// Model evaluations at one dose across all grid nodes.
#[derive(Debug)]
pub(crate) struct DoseRow {
    pub dose: f64,
    /// Raw ψ(dose, node).
    pub prob: Vec<f64>,
    pub ln_p: Vec<f64>,
    pub ln_q: Vec<f64>,
}

impl DoseRow {
    fn compute(grid: &Grid, dose: f64) -> DoseRow {
        let n = grid.nodes.len();
        let mut prob = Vec::with_capacity(n);
        let mut ln_p = Vec::with_capacity(n);
        let mut ln_q = Vec::with_capacity(n);
        for node in &grid.nodes {
            let raw = grid.model.prob(dose, node);
            let p = clamp_prob(raw);
            prob.push(raw);
            ln_p.push(p.ln());
            ln_q.push((-p).ln_1p());
        }
        DoseRow {
            dose,
            prob,
            ln_p,
            ln_q,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Tally {
    dose: f64,
    dlt: u32,
    non_dlt: u32,
}

/// Normalized discrete posterior over model parameters.
#[derive(Debug, Clone)]
pub struct PosteriorRep {
    grid: Arc<Grid>,
    rows: Arc<Vec<Arc<DoseRow>>>,
    tallies: Vec<Tally>,
    log_weights: Vec<f64>,
    weights: Vec<f64>,
}

/// Builds the prior state for `model` on the requested grid.
pub fn build_grid(model: &ModelSpec, spec: &GridSpec) -> Result<PosteriorRep> {
    model.validate()?;
    let dim = model.dim();
    let per_dim = spec.resolved_nodes(dim);
    let total = per_dim.checked_pow(dim as u32).unwrap_or(usize::MAX);
    if per_dim < 3 || total < MIN_NODES {
        return Err(Error::InvalidGrid(format!(
            "{total} nodes requested; at least {MIN_NODES} are required"
        )));
    }
    if !(spec.half_width_sd > 0.0 && spec.half_width_sd.is_finite()) {
        return Err(Error::InvalidGrid(format!(
            "half_width_sd = {} must be positive",
            spec.half_width_sd
        )));
    }
    let trapezoid = |i: usize| if i == 0 || i + 1 == per_dim { 0.5f64 } else { 1.0 };
    let axis = |mean: f64, sd: f64| -> Vec<f64> {
        let lo = mean - spec.half_width_sd * sd;
        let step = 2.0 * spec.half_width_sd * sd / (per_dim - 1) as f64;
        (0..per_dim).map(|i| lo + step * i as f64).collect()
    };

    let (nodes, log_prior) = match model {
        ModelSpec::Power {
            prior_mean,
            prior_variance,
            ..
        } => {
            let xs = axis(*prior_mean, prior_variance.sqrt());
            let log_prior = xs
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    -(x - prior_mean) * (x - prior_mean) / (2.0 * prior_variance)
                        + trapezoid(i).ln()
                })
                .collect();
            (xs.into_iter().map(|x| [x, 0.0]).collect(), log_prior)
        }
        ModelSpec::Logistic {
            prior_mean,
            prior_cov,
            ..
        } => {
            let [[s11, s12], [_, s22]] = *prior_cov;
            let det = s11 * s22 - s12 * s12;
            let (p11, p12, p22) = (s22 / det, -s12 / det, s11 / det);
            let xs = axis(prior_mean[0], s11.sqrt());
            let ys = axis(prior_mean[1], s22.sqrt());
            let mut nodes = Vec::with_capacity(total);
            let mut log_prior = Vec::with_capacity(total);
            for (i, x) in xs.iter().enumerate() {
                for (j, y) in ys.iter().enumerate() {
                    let dx = x - prior_mean[0];
                    let dy = y - prior_mean[1];
                    let quad = p11 * dx * dx + 2.0 * p12 * dx * dy + p22 * dy * dy;
                    nodes.push([*x, *y]);
                    log_prior.push(-0.5 * quad + (trapezoid(i) * trapezoid(j)).ln());
                }
            }
            (nodes, log_prior)
        }
    };

    let grid = Arc::new(Grid {
        model: model.clone(),
        nodes,
        log_prior,
    });
    PosteriorRep::from_parts(grid, Arc::new(Vec::new()), Vec::new())
}

/// Posterior after one more observation at `dose`.
pub fn update(post: &PosteriorRep, model: &ModelSpec, dose: f64, dlt: bool) -> Result<PosteriorRep> {
    update_batch(post, model, &[(dose, dlt)])
}

/// Posterior after a batch of observations. Equivalent to sequential updates.
pub fn update_batch(post: &PosteriorRep, model: &ModelSpec, observations: &[(f64, bool)]) -> Result<PosteriorRep> {
    post.check_model(model)?;
    if observations.is_empty() {
        return Ok(post.clone());
    }
    let mut tallies = post.tallies.clone();
    for &(dose, dlt) in observations {
        model.check_dose(dose)?;
        let pos = tallies.binary_search_by(|t| t.dose.total_cmp(&dose));
        let idx = match pos {
            Ok(i) => i,
            Err(i) => {
                tallies.insert(
                    i,
                    Tally {
                        dose,
                        dlt: 0,
                        non_dlt: 0,
                    },
                );
                i
            }
        };
        if dlt {
            tallies[idx].dlt += 1;
        } else {
            tallies[idx].non_dlt += 1;
        }
    }
    PosteriorRep::from_parts(post.grid.clone(), post.rows.clone(), tallies)
}

/// Posterior mean of ψ(dose, β).
pub fn post_mean_tox(post: &PosteriorRep, model: &ModelSpec, dose: f64) -> Result<f64> {
    post.check_model(model)?;
    model.check_dose(dose)?;
    if let Some(row) = post.row(dose) {
        return Ok(post.expect_row(&row.prob));
    }
    Ok(post
        .grid
        .nodes
        .iter()
        .zip(&post.weights)
        .map(|(node, w)| w * model.prob(dose, node))
        .sum())
}

/// Posterior mean of `functional(ψ(dose, β))`, with ψ clamped away from 0 and 1.
pub fn post_expect<F>(post: &PosteriorRep, model: &ModelSpec, dose: f64, functional: F) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    post.check_model(model)?;
    model.check_dose(dose)?;
    let mut acc = 0.0;
    for (node, w) in post.grid.nodes.iter().zip(&post.weights) {
        let p = clamp_prob(model.prob(dose, node));
        let v = functional(p);
        if !v.is_finite() {
            return Err(Error::Numerical(format!(
                "functional returned {v} at p = {p} (dose {dose})"
            )));
        }
        acc += w * v;
    }
    Ok(acc)
}

impl PosteriorRep {
    fn from_parts(grid: Arc<Grid>, rows: Arc<Vec<Arc<DoseRow>>>, tallies: Vec<Tally>) -> Result<Self> {
        let mut log_weights = grid.log_prior.clone();
        for t in &tallies {
            let dlt = t.dlt as f64;
            let non = t.non_dlt as f64;
            match rows.iter().find(|r| r.dose == t.dose) {
                Some(row) => {
                    for ((lw, lp), lq) in log_weights.iter_mut().zip(&row.ln_p).zip(&row.ln_q) {
                        *lw += dlt * lp + non * lq;
                    }
                }
                None => {
                    let row = DoseRow::compute(&grid, t.dose);
                    for ((lw, lp), lq) in log_weights.iter_mut().zip(&row.ln_p).zip(&row.ln_q) {
                        *lw += dlt * lp + non * lq;
                    }
                }
            }
        }
        let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Numerical("all posterior weights underflowed".into()));
        }
        let mut weights: Vec<f64> = log_weights.iter().map(|lw| (lw - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Numerical("posterior normalizing constant is degenerate".into()));
        }
        let log_total = total.ln();
        for w in &mut weights {
            *w /= total;
        }
        for lw in &mut log_weights {
            *lw -= max + log_total;
        }
        Ok(PosteriorRep {
            grid,
            rows,
            tallies,
            log_weights,
            weights,
        })
    }

    /// A posterior concentrated on a single parameter value.
    pub fn point_mass(model: &ModelSpec, node: Node) -> Result<Self> {
        model.validate()?;
        let grid = Arc::new(Grid {
            model: model.clone(),
            nodes: vec![node],
            log_prior: vec![0.0],
        });
        PosteriorRep::from_parts(grid, Arc::new(Vec::new()), Vec::new())
    }

    /// Same posterior with model evaluations cached at `doses`.
    pub fn with_cached_doses(&self, doses: &[f64]) -> Result<Self> {
        let mut rows: Vec<Arc<DoseRow>> = self.rows.as_ref().clone();
        for &d in doses {
            self.grid.model.check_dose(d)?;
            if !rows.iter().any(|r| r.dose == d) {
                rows.push(Arc::new(DoseRow::compute(&self.grid, d)));
            }
        }
        PosteriorRep::from_parts(self.grid.clone(), Arc::new(rows), self.tallies.clone())
    }

    fn check_model(&self, model: &ModelSpec) -> Result<()> {
        if *model != self.grid.model {
            return Err(Error::InvalidModel(
                "model differs from the one the posterior grid was built for".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn row(&self, dose: f64) -> Option<&DoseRow> {
        self.rows.iter().find(|r| r.dose == dose).map(|r| r.as_ref())
    }

    /// Σ_k w_k values_k.
    pub(crate) fn expect_row(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    pub fn model(&self) -> &ModelSpec {
        &self.grid.model
    }

    pub fn nodes(&self) -> &[Node] {
        &self.grid.nodes
    }

    /// Normalized log posterior mass per node.
    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Normalized posterior mass per node.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weights are normalized on construction.
    pub fn is_normalized(&self) -> bool {
        true
    }

    pub fn node_count(&self) -> usize {
        self.grid.nodes.len()
    }

    /// Number of observations absorbed so far.
    pub fn observation_count(&self) -> usize {
        self.tallies
            .iter()
            .map(|t| (t.dlt + t.non_dlt) as usize)
            .sum()
    }

    /// Posterior mean of the first model parameter.
    pub fn mean_parameter(&self) -> f64 {
        self.grid
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(n, w)| w * n[0])
            .sum()
    }

    /// Log weights identical bit for bit.
    pub fn same_weights(&self, other: &PosteriorRep) -> bool {
        self.log_weights.len() == other.log_weights.len()
            && self
                .log_weights
                .iter()
                .zip(&other.log_weights)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}
