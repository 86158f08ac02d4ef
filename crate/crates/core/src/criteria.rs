//! Allocation criteria: pointwise losses evaluated at a DLT probability, the
//! feasibility-bound schedules of the overdose-control family, and the
//! calibration of the CIBP asymmetry parameter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::logit;

/// Target toxicity and the CIBP asymmetry settings attached to it.
///
/// `a` may be given directly, derived from a half-width `theta`, or both (in
/// which case they must agree). With neither, `a = 2γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
}

impl TargetConfig {
    pub fn new(gamma: f64) -> Self {
        TargetConfig {
            gamma,
            a: None,
            theta: None,
        }
    }

    pub fn with_asymmetry(mut self, a: f64) -> Self {
        self.a = Some(a);
        self
    }

    pub fn with_half_width(mut self, theta: f64) -> Self {
        self.theta = Some(theta);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 0.5) {
            return Err(Error::InvalidTarget(format!(
                "gamma = {} must lie in (0, 0.5)",
                self.gamma
            )));
        }
        if let Some(a) = self.a {
            if !(a > 0.0 && a < 2.0) {
                return Err(Error::InvalidTarget(format!("a = {a} must lie in (0, 2)")));
            }
        }
        if let Some(theta) = self.theta {
            let calibrated = calibrate_asymmetry(self.gamma, theta)
                .map_err(|e| Error::InvalidTarget(format!("theta: {e}")))?;
            if let Some(a) = self.a {
                if (a - calibrated).abs() > 1e-12 {
                    return Err(Error::InvalidTarget(format!(
                        "a = {a} disagrees with theta = {theta}, which calibrates to a = {calibrated}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Resolved asymmetry parameter.
    pub fn asymmetry(&self) -> f64 {
        match (self.a, self.theta) {
            (Some(a), _) => a,
            (None, Some(theta)) => calibrate_asymmetry(self.gamma, theta).unwrap_or(2.0 * self.gamma),
            (None, None) => 2.0 * self.gamma,
        }
    }
}

/// Patient-indexed feasibility-bound schedule: α stays at `alpha_start` for
/// the first `hold_until` patients, then grows by `step` per patient up to
/// `cap`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrSchedule {
    #[serde(default = "quarter")]
    pub alpha_start: f64,
    #[serde(default = "tr_hold")]
    pub hold_until: usize,
    #[serde(default = "tr_step")]
    pub step: f64,
    #[serde(default = "half")]
    pub cap: f64,
}

impl Default for TrSchedule {
    fn default() -> Self {
        TrSchedule {
            alpha_start: quarter(),
            hold_until: tr_hold(),
            step: tr_step(),
            cap: half(),
        }
    }
}

fn quarter() -> f64 {
    0.25
}
fn half() -> f64 {
    0.5
}
fn tr_hold() -> usize {
    9
}
fn tr_step() -> f64 {
    0.05
}
fn tdfb_s() -> f64 {
    38.0 / 3.0
}

/// One interval of a piecewise-constant loss on the probability scale.
/// Intervals are closed on the left and open on the right, except the last,
/// which includes 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossInterval {
    pub lower: f64,
    pub upper: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LossInterval>", into = "Vec<LossInterval>")]
pub struct LossTable {
    intervals: Vec<LossInterval>,
}

impl LossTable {
    pub fn new(intervals: Vec<LossInterval>) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::InvalidCriterion("loss table is empty".into()));
        }
        if intervals[0].lower != 0.0 {
            return Err(Error::InvalidCriterion(format!(
                "loss table must start at 0, found {}",
                intervals[0].lower
            )));
        }
        let last = intervals[intervals.len() - 1].upper;
        if last != 1.0 {
            return Err(Error::InvalidCriterion(format!(
                "loss table must end at 1, found {last}"
            )));
        }
        for (i, iv) in intervals.iter().enumerate() {
            if !(iv.upper > iv.lower) {
                return Err(Error::InvalidCriterion(format!(
                    "interval {i} is empty: [{}, {})",
                    iv.lower, iv.upper
                )));
            }
            if !(iv.loss >= 0.0 && iv.loss.is_finite()) {
                return Err(Error::InvalidCriterion(format!(
                    "interval {i} has invalid loss {}",
                    iv.loss
                )));
            }
        }
        for (i, w) in intervals.windows(2).enumerate() {
            if w[0].upper < w[1].lower {
                return Err(Error::InvalidCriterion(format!(
                    "gap between interval {i} (ends {}) and {} (starts {})",
                    w[0].upper,
                    i + 1,
                    w[1].lower
                )));
            }
            if w[0].upper > w[1].lower {
                return Err(Error::InvalidCriterion(format!(
                    "interval {i} (ends {}) overlaps {} (starts {})",
                    w[0].upper,
                    i + 1,
                    w[1].lower
                )));
            }
        }
        Ok(LossTable { intervals })
    }

    pub fn intervals(&self) -> &[LossInterval] {
        &self.intervals
    }

    /// Interval loss with boundaries at 0.26, 0.41 and 0.66 (target 0.33).
    pub fn default_blrm() -> Self {
        LossTable::new(vec![
            LossInterval { lower: 0.0, upper: 0.26, loss: 1.0 },
            LossInterval { lower: 0.26, upper: 0.41, loss: 0.0 },
            LossInterval { lower: 0.41, upper: 0.66, loss: 1.0 },
            LossInterval { lower: 0.66, upper: 1.0, loss: 2.0 },
        ])
        .expect("default table is well formed")
    }
}

impl Default for LossTable {
    fn default() -> Self {
        LossTable::default_blrm()
    }
}

impl TryFrom<Vec<LossInterval>> for LossTable {
    type Error = Error;
    fn try_from(v: Vec<LossInterval>) -> Result<Self> {
        LossTable::new(v)
    }
}

impl From<LossTable> for Vec<LossInterval> {
    fn from(t: LossTable) -> Self {
        t.intervals
    }
}

/// Allocation criterion of a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CriterionSpec {
    /// Squared distance between the posterior mean and the target.
    SqDistance {},
    /// Posterior mean of the CIBP loss, with `a` from the design's target.
    Cibp {},
    /// Posterior mean of the Aitchison distance.
    Aitchison {},
    EwocFixed {
        #[serde(default = "quarter")]
        alpha: f64,
    },
    EwocTr {
        #[serde(default = "quarter")]
        alpha_start: f64,
        #[serde(default = "tr_hold")]
        hold_until: usize,
        #[serde(default = "tr_step")]
        step: f64,
        #[serde(default = "half")]
        cap: f64,
    },
    EwocTdfb {
        #[serde(default = "quarter")]
        alpha_min: f64,
        #[serde(default = "tdfb_s")]
        s: f64,
        #[serde(default = "half")]
        cap: f64,
    },
    BlrmLoss {
        #[serde(default)]
        table: LossTable,
    },
}

impl CriterionSpec {
    pub fn validate(&self) -> Result<()> {
        let check_alpha = |name: &str, v: f64| {
            if v > 0.0 && v <= 0.5 {
                Ok(())
            } else {
                Err(Error::InvalidCriterion(format!("{name} = {v} must lie in (0, 0.5]")))
            }
        };
        match self {
            CriterionSpec::SqDistance {} | CriterionSpec::Cibp {} | CriterionSpec::Aitchison {} => Ok(()),
            CriterionSpec::EwocFixed { alpha } => check_alpha("alpha", *alpha),
            CriterionSpec::EwocTr { .. } => {
                let schedule = self.tr_schedule().expect("tr variant");
                check_alpha("alpha_start", schedule.alpha_start)?;
                check_alpha("cap", schedule.cap)?;
                if !(schedule.step >= 0.0) {
                    return Err(Error::InvalidCriterion("step must be non-negative".into()));
                }
                Ok(())
            }
            CriterionSpec::EwocTdfb { alpha_min, s, cap } => {
                check_alpha("alpha_min", *alpha_min)?;
                check_alpha("cap", *cap)?;
                if !(*s > 0.0) {
                    return Err(Error::InvalidCriterion(format!("s = {s} must be positive")));
                }
                if cap < alpha_min {
                    return Err(Error::InvalidCriterion("cap must be at least alpha_min".into()));
                }
                Ok(())
            }
            // validated on construction
            CriterionSpec::BlrmLoss { .. } => Ok(()),
        }
    }

    pub fn tr(schedule: TrSchedule) -> Self {
        CriterionSpec::EwocTr {
            alpha_start: schedule.alpha_start,
            hold_until: schedule.hold_until,
            step: schedule.step,
            cap: schedule.cap,
        }
    }

    pub fn tr_schedule(&self) -> Option<TrSchedule> {
        match *self {
            CriterionSpec::EwocTr {
                alpha_start,
                hold_until,
                step,
                cap,
            } => Some(TrSchedule {
                alpha_start,
                hold_until,
                step,
                cap,
            }),
            _ => None,
        }
    }

    /// Short label used in reports when a design has no explicit name.
    pub fn label(&self) -> &'static str {
        match self {
            CriterionSpec::SqDistance {} => "crm",
            CriterionSpec::Cibp {} => "cibp",
            CriterionSpec::Aitchison {} => "aitchison",
            CriterionSpec::EwocFixed { .. } => "ewoc",
            CriterionSpec::EwocTr { .. } => "tr",
            CriterionSpec::EwocTdfb { .. } => "tdfb",
            CriterionSpec::BlrmLoss { .. } => "blrm",
        }
    }

    /// Feasibility bound for the next patient, given the number already
    /// treated and their DLT count. `None` for criteria without one.
    pub fn feasibility_bound(&self, treated: usize, dlt_total: usize) -> Option<f64> {
        match self {
            CriterionSpec::EwocFixed { alpha } => Some(*alpha),
            CriterionSpec::EwocTr { .. } => {
                Some(tr_alpha(treated + 1, &self.tr_schedule().expect("tr variant")))
            }
            CriterionSpec::EwocTdfb { alpha_min, s, cap } => {
                Some(tdfb_alpha_capped(*alpha_min, *s, treated + 1, dlt_total, *cap))
            }
            _ => None,
        }
    }
}

/// (p − γ)².
pub fn sq_distance(p: f64, gamma: f64) -> f64 {
    (p - gamma) * (p - gamma)
}

/// |logit p − logit γ|.
pub fn aitchison_distance(p: f64, gamma: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) || !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Domain(format!(
            "Aitchison distance needs p, gamma in (0, 1); got p = {p}, gamma = {gamma}"
        )));
    }
    Ok(aitchison_unchecked(p, gamma))
}

#[inline]
pub(crate) fn aitchison_unchecked(p: f64, gamma: f64) -> f64 {
    (logit(p) - logit(gamma)).abs()
}

/// Convex infinite-bounds penalization (p − γ)² / (p^a (1 − p)^(2−a)).
pub fn cibp(p: f64, gamma: f64, a: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("CIBP is unbounded at p = {p}")));
    }
    if !(a > 0.0 && a < 2.0) {
        return Err(Error::Domain(format!("asymmetry a = {a} must lie in (0, 2)")));
    }
    Ok(cibp_unchecked(p, gamma, a))
}

#[inline]
pub(crate) fn cibp_unchecked(p: f64, gamma: f64, a: f64) -> f64 {
    let num = (p - gamma) * (p - gamma);
    num / (p.powf(a) * (1.0 - p).powf(2.0 - a))
}

/// Asymmetry parameter that makes CIBP equal at γ − θ and γ + θ.
pub fn calibrate_asymmetry(gamma: f64, theta: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 0.5) {
        return Err(Error::Domain(format!("gamma = {gamma} must lie in (0, 0.5)")));
    }
    if !(theta > 0.0) {
        return Err(Error::Domain(format!("theta = {theta} must be positive")));
    }
    if theta >= gamma {
        return Err(Error::Domain(format!(
            "theta = {theta} must be below gamma = {gamma}"
        )));
    }
    let ratio = ((gamma - theta) / (gamma + theta)).ln()
        / ((1.0 - gamma - theta) / (1.0 - gamma + theta)).ln();
    Ok(2.0 / (1.0 + ratio))
}

/// α(γ − p)⁺ + (1 − α)(p − γ)⁺.
#[inline]
pub fn ewoc_loss_point(p: f64, gamma: f64, alpha: f64) -> f64 {
    alpha * (gamma - p).max(0.0) + (1.0 - alpha) * (p - gamma).max(0.0)
}

/// Feasibility bound for patient `patient_index` (1-based) under a TR schedule.
pub fn tr_alpha(patient_index: usize, schedule: &TrSchedule) -> f64 {
    let mut alpha = schedule.alpha_start;
    for _ in schedule.hold_until.max(1) + 1..=patient_index {
        alpha = (alpha + schedule.step).min(schedule.cap);
    }
    alpha
}

/// Toxicity-dependent feasibility bound for patient `n` (1-based), given
/// `dlt_total` DLTs among the previous `n - 1`. Capped at 0.5, floored at
/// `alpha_min`.
pub fn tdfb_alpha(alpha_min: f64, s: f64, n: usize, dlt_total: usize) -> f64 {
    tdfb_alpha_capped(alpha_min, s, n, dlt_total, 0.5)
}

pub fn tdfb_alpha_capped(alpha_min: f64, s: f64, n: usize, dlt_total: usize, cap: f64) -> f64 {
    let non_dlt = n as f64 - 1.0 - dlt_total as f64;
    let alpha = (alpha_min + (cap - alpha_min) * non_dlt / s).min(cap);
    alpha.max(alpha_min)
}

/// Piecewise-constant interval loss.
#[inline]
pub fn blrm_loss_point(p: f64, table: &LossTable) -> f64 {
    let ivs = &table.intervals;
    for iv in &ivs[..ivs.len() - 1] {
        if p < iv.upper {
            return iv.loss;
        }
    }
    ivs[ivs.len() - 1].loss
}
