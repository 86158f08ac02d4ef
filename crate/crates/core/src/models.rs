//! Dose-toxicity models and skeleton calibration.
//!
//! Two parametric families are supported:
//!
//! * `power-1`: ψ(d, β) = d^exp(β) with β ~ N(mean, variance). Standardized
//!   doses live in (0, 1).
//! * `logistic-2`: ψ(d, β₁, β₂) = logistic(β₁ + β₂·d) with (β₁, β₂) bivariate
//!   normal. Dose scores are real numbers, by default the logits of the
//!   skeleton.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in parameter space. One-parameter models use only the first
/// coordinate.
pub type Node = [f64; 2];

/// Prior guesses of the DLT probability at each dose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SkeletonRepr", into = "SkeletonRepr")]
pub struct Skeleton {
    values: Vec<f64>,
    prior_mtd: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkeletonRepr {
    values: Vec<f64>,
    prior_mtd: Option<usize>,
}

impl TryFrom<SkeletonRepr> for Skeleton {
    type Error = Error;

    fn try_from(raw: SkeletonRepr) -> Result<Self> {
        let prior_mtd = match raw.prior_mtd {
            Some(k) => k,
            None => nearest_to_median(&raw.values),
        };
        Skeleton::new(raw.values, prior_mtd)
    }
}

impl From<Skeleton> for SkeletonRepr {
    fn from(s: Skeleton) -> Self {
        SkeletonRepr {
            values: s.values,
            prior_mtd: Some(s.prior_mtd),
        }
    }
}

fn nearest_to_median(values: &[f64]) -> usize {
    values.len().div_ceil(2).max(1)
}

impl Skeleton {
    /// `prior_mtd` is 1-based.
    pub fn new(values: Vec<f64>, prior_mtd: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidSkeleton("values: at least one dose required".into()));
        }
        for (i, &v) in values.iter().enumerate() {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidSkeleton(format!(
                    "values[{i}] = {v} is outside (0, 1)"
                )));
            }
        }
        for (i, w) in values.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(Error::InvalidSkeleton(format!(
                    "values must be strictly increasing: values[{}] = {} >= values[{}] = {}",
                    i,
                    w[0],
                    i + 1,
                    w[1]
                )));
            }
        }
        if prior_mtd == 0 || prior_mtd > values.len() {
            return Err(Error::InvalidSkeleton(format!(
                "prior_mtd = {prior_mtd} must lie in 1..={}",
                values.len()
            )));
        }
        Ok(Skeleton { values, prior_mtd })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// 1-based index of the prior MTD.
    pub fn prior_mtd(&self) -> usize {
        self.prior_mtd
    }
}

/// How skeleton values map to standardized doses for the power model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DoseScaling {
    /// d_i equals the skeleton value, so ψ(d_i, 0) reproduces the skeleton.
    #[default]
    Skeleton,
    /// d_i = s_i^(1/E[exp β]): the plug-in curve at the prior mean of exp(β)
    /// reproduces the skeleton.
    PriorMean,
}

fn default_power_variance() -> f64 {
    1.34
}

fn default_logistic_mean() -> [f64; 2] {
    [0.0, 1.0]
}

fn default_logistic_cov() -> [[f64; 2]; 2] {
    [[1.0, 0.0], [0.0, 0.25]]
}

/// Parametric dose-toxicity model together with its prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum ModelSpec {
    #[serde(rename = "power-1")]
    Power {
        #[serde(default)]
        prior_mean: f64,
        /// Variance (not standard deviation) of the normal prior on β.
        #[serde(default = "default_power_variance")]
        prior_variance: f64,
        #[serde(default)]
        dose_scaling: DoseScaling,
    },
    #[serde(rename = "logistic-2")]
    Logistic {
        #[serde(default = "default_logistic_mean")]
        prior_mean: [f64; 2],
        #[serde(default = "default_logistic_cov")]
        prior_cov: [[f64; 2]; 2],
        /// Explicit dose scores; defaults to logit(skeleton).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dose_scores: Option<Vec<f64>>,
    },
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::power(0.0, default_power_variance())
    }
}

impl ModelSpec {
    pub fn power(prior_mean: f64, prior_variance: f64) -> Self {
        ModelSpec::Power {
            prior_mean,
            prior_variance,
            dose_scaling: DoseScaling::Skeleton,
        }
    }

    pub fn logistic(prior_mean: [f64; 2], prior_cov: [[f64; 2]; 2]) -> Self {
        ModelSpec::Logistic {
            prior_mean,
            prior_cov,
            dose_scores: None,
        }
    }

    /// Number of model parameters.
    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::Power { .. } => 1,
            ModelSpec::Logistic { .. } => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Power {
                prior_mean,
                prior_variance,
                ..
            } => {
                if !prior_mean.is_finite() {
                    return Err(Error::InvalidModel("prior_mean must be finite".into()));
                }
                if !(*prior_variance > 0.0 && prior_variance.is_finite()) {
                    return Err(Error::InvalidModel(format!(
                        "prior_variance = {prior_variance} must be strictly positive"
                    )));
                }
            }
            ModelSpec::Logistic {
                prior_mean,
                prior_cov,
                dose_scores,
            } => {
                if prior_mean.iter().any(|m| !m.is_finite()) {
                    return Err(Error::InvalidModel("prior_mean must be finite".into()));
                }
                let [[a, b], [c, d]] = *prior_cov;
                if (b - c).abs() > 1e-12 * (1.0 + b.abs()) {
                    return Err(Error::InvalidModel("prior_cov must be symmetric".into()));
                }
                if !(a > 0.0 && d > 0.0 && a * d - b * c > 0.0) {
                    return Err(Error::InvalidModel(
                        "prior_cov must be positive-definite".into(),
                    ));
                }
                if let Some(scores) = dose_scores {
                    if scores.iter().any(|s| !s.is_finite()) {
                        return Err(Error::InvalidModel("dose_scores must be finite".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Standardized dose levels (power model) or dose scores (logistic model)
    /// for each skeleton entry.
    pub fn dose_levels(&self, skeleton: &Skeleton) -> Result<Vec<f64>> {
        match self {
            ModelSpec::Power {
                prior_mean,
                prior_variance,
                dose_scaling,
            } => Ok(match dose_scaling {
                DoseScaling::Skeleton => skeleton.values().to_vec(),
                DoseScaling::PriorMean => {
                    let mean_exponent = (prior_mean + prior_variance / 2.0).exp();
                    skeleton
                        .values()
                        .iter()
                        .map(|s| s.powf(1.0 / mean_exponent))
                        .collect()
                }
            }),
            ModelSpec::Logistic { dose_scores, .. } => match dose_scores {
                Some(scores) => {
                    if scores.len() != skeleton.len() {
                        return Err(Error::InvalidModel(format!(
                            "dose_scores has {} entries but the skeleton has {}",
                            scores.len(),
                            skeleton.len()
                        )));
                    }
                    Ok(scores.clone())
                }
                None => Ok(skeleton.values().iter().map(|&s| logit(s)).collect()),
            },
        }
    }

    /// DLT probability at `dose` for parameter `node`.
    #[inline]
    pub fn prob(&self, dose: f64, node: &Node) -> f64 {
        match self {
            ModelSpec::Power { .. } => power_prob_unchecked(dose, node[0]),
            ModelSpec::Logistic { .. } => logistic2_prob(dose, node[0], node[1]),
        }
    }

    /// Checks that `dose` is a legal argument for this model.
    pub fn check_dose(&self, dose: f64) -> Result<()> {
        match self {
            ModelSpec::Power { .. } if !(dose > 0.0 && dose < 1.0) => Err(Error::Domain(format!(
                "standardized dose {dose} is outside (0, 1)"
            ))),
            _ if !dose.is_finite() => Err(Error::Domain(format!("dose {dose} is not finite"))),
            _ => Ok(()),
        }
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Power model ψ(d, β) = d^exp(β).
pub fn power_prob(d: f64, beta: f64) -> Result<f64> {
    if !(d > 0.0 && d < 1.0) {
        return Err(Error::Domain(format!("dose {d} is outside (0, 1)")));
    }
    Ok(power_prob_unchecked(d, beta))
}

#[inline]
fn power_prob_unchecked(d: f64, beta: f64) -> f64 {
    (beta.exp() * d.ln()).exp()
}

/// Two-parameter logistic model exp(β₁+β₂d)/(1+exp(β₁+β₂d)).
#[inline]
pub fn logistic2_prob(d: f64, beta1: f64, beta2: f64) -> f64 {
    let z = beta1 + beta2 * d;
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Builds a power-model skeleton from an indifference half-width around the
/// target. The prior MTD is anchored at `gamma`, and neighbouring doses are
/// spaced so that the parameter value putting one dose at `gamma + halfwidth`
/// puts the next lower dose at `gamma - halfwidth`.
pub fn calibrate_skeleton(m: usize, prior_mtd: usize, gamma: f64, halfwidth: f64) -> Result<Skeleton> {
    if m == 0 {
        return Err(Error::Domain("dose count must be at least 1".into()));
    }
    if prior_mtd == 0 || prior_mtd > m {
        return Err(Error::Domain(format!("prior_mtd = {prior_mtd} must lie in 1..={m}")));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Domain(format!("gamma = {gamma} must lie in (0, 1)")));
    }
    if !(halfwidth > 0.0) {
        return Err(Error::Domain(format!("halfwidth = {halfwidth} must be positive")));
    }
    if halfwidth >= gamma || halfwidth >= 1.0 - gamma {
        return Err(Error::Domain(format!(
            "halfwidth = {halfwidth} must be below min(gamma, 1 - gamma) = {}",
            gamma.min(1.0 - gamma)
        )));
    }
    let lo = (gamma - halfwidth).ln();
    let hi = (gamma + halfwidth).ln();
    let anchor = prior_mtd - 1;
    let mut values = vec![0.0; m];
    values[anchor] = gamma;
    for i in (0..anchor).rev() {
        values[i] = (values[i + 1].ln() / hi * lo).exp();
    }
    for i in anchor + 1..m {
        values[i] = (values[i - 1].ln() / lo * hi).exp();
    }
    Skeleton::new(values, prior_mtd)
}
