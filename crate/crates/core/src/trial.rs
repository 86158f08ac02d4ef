//! Sequential trial state machine: allocation under escalation restrictions,
//! cohort bookkeeping and final MTD selection.

use serde::{Deserialize, Serialize};

use crate::criteria::{
    aitchison_unchecked, blrm_loss_point, cibp_unchecked, CriterionSpec, TargetConfig,
};
use crate::error::{Error, Result};
use crate::models::{ModelSpec, Skeleton};
use crate::posterior::{build_grid, clamp_prob, update_batch, GridSpec, PosteriorRep};

fn default_cohort_size() -> usize {
    3
}

fn default_true() -> bool {
    true
}

fn default_start_dose() -> usize {
    1
}

/// A complete dose-escalation design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub model: ModelSpec,
    pub skeleton: Skeleton,
    pub target: TargetConfig,
    pub criterion: CriterionSpec,
    #[serde(default = "default_cohort_size")]
    pub cohort_size: usize,
    pub max_patients: usize,
    #[serde(default = "default_true")]
    pub no_skip: bool,
    /// 1-based.
    #[serde(default = "default_start_dose")]
    pub start_dose: usize,
    #[serde(default)]
    pub grid: GridSpec,
}

impl DesignSpec {
    pub fn new(
        skeleton: Skeleton,
        target: TargetConfig,
        criterion: CriterionSpec,
        max_patients: usize,
    ) -> Self {
        DesignSpec {
            name: None,
            model: ModelSpec::default(),
            skeleton,
            target,
            criterion,
            cohort_size: default_cohort_size(),
            max_patients,
            no_skip: true,
            start_dose: 1,
            grid: GridSpec::default(),
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn with_model(mut self, model: ModelSpec) -> Self {
        self.model = model;
        self
    }

    pub fn with_cohort_size(mut self, cohort_size: usize) -> Self {
        self.cohort_size = cohort_size;
        self
    }

    /// Name used in reports.
    pub fn display_name(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| self.criterion.label().to_string())
    }

    pub fn dose_count(&self) -> usize {
        self.skeleton.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.target.validate()?;
        self.criterion.validate()?;
        if self.cohort_size == 0 {
            return Err(Error::InvalidDesign("cohort_size must be at least 1".into()));
        }
        if self.max_patients == 0 {
            return Err(Error::InvalidDesign("max_patients must be at least 1".into()));
        }
        let m = self.skeleton.len();
        if self.start_dose == 0 || self.start_dose > m {
            return Err(Error::InvalidDesign(format!(
                "start_dose = {} must lie in 1..={m}",
                self.start_dose
            )));
        }
        if let ModelSpec::Logistic {
            dose_scores: Some(scores),
            ..
        } = &self.model
        {
            if scores.len() != m {
                return Err(Error::InvalidDesign(format!(
                    "model.dose_scores has {} entries but skeleton has {m}",
                    scores.len()
                )));
            }
        }
        Ok(())
    }
}

/// Posterior summary at one dose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoseEstimate {
    /// 1-based.
    pub dose: usize,
    pub post_mean_tox: f64,
    pub criterion_value: f64,
}

/// One allocated cohort.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortRecord {
    /// 1-based dose actually given.
    pub dose: usize,
    /// DLT indicator per patient.
    pub outcomes: Vec<bool>,
    /// What the design recommended for this cohort.
    pub recommended: usize,
    pub overridden: bool,
}

/// State of one trial. Only ever mutated through a [`Design`].
#[derive(Debug, Clone)]
pub struct TrialState {
    cohorts: Vec<CohortRecord>,
    posterior: PosteriorRep,
    patients_treated: usize,
    dlt_total: usize,
    highest_tried: usize,
    terminated_externally: bool,
    termination_reason: Option<String>,
}

impl TrialState {
    pub fn cohorts(&self) -> &[CohortRecord] {
        &self.cohorts
    }

    /// Per-patient (dose, DLT) history in allocation order.
    pub fn history(&self) -> Vec<(usize, bool)> {
        self.cohorts
            .iter()
            .flat_map(|c| c.outcomes.iter().map(move |&y| (c.dose, y)))
            .collect()
    }

    pub fn posterior(&self) -> &PosteriorRep {
        &self.posterior
    }

    pub fn patients_treated(&self) -> usize {
        self.patients_treated
    }

    pub fn dlt_total(&self) -> usize {
        self.dlt_total
    }

    /// 0 before any allocation.
    pub fn highest_tried(&self) -> usize {
        self.highest_tried
    }

    pub fn terminated_externally(&self) -> bool {
        self.terminated_externally
    }

    pub fn termination_reason(&self) -> Option<&str> {
        self.termination_reason.as_deref()
    }
}

enum Rows {
    SqDistance,
    Single(Vec<Vec<f64>>),
    Hinge {
        below: Vec<Vec<f64>>,
        above: Vec<Vec<f64>>,
    },
}

/// A validated design with its prior and per-dose tables precomputed.
pub struct Design {
    spec: DesignSpec,
    doses: Vec<f64>,
    prior: PosteriorRep,
    gamma: f64,
    rows: Rows,
}

impl std::fmt::Debug for Design {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Design")
            .field("spec", &self.spec)
            .field("doses", &self.doses)
            .finish_non_exhaustive()
    }
}

impl Design {
    pub fn new(spec: DesignSpec) -> Result<Design> {
        spec.validate()?;
        let doses = spec.model.dose_levels(&spec.skeleton)?;
        let prior = build_grid(&spec.model, &spec.grid)?.with_cached_doses(&doses)?;
        let gamma = spec.target.gamma;
        let a = spec.target.asymmetry();

        let clamped: Vec<Vec<f64>> = doses
            .iter()
            .map(|&d| {
                prior
                    .row(d)
                    .expect("dose rows are cached")
                    .prob
                    .iter()
                    .map(|&p| clamp_prob(p))
                    .collect()
            })
            .collect();
        let map = |f: &dyn Fn(f64) -> f64| -> Vec<Vec<f64>> {
            clamped
                .iter()
                .map(|row| row.iter().map(|&p| f(p)).collect())
                .collect()
        };
        let rows = match &spec.criterion {
            CriterionSpec::SqDistance {} => Rows::SqDistance,
            CriterionSpec::Cibp {} => Rows::Single(map(&|p| cibp_unchecked(p, gamma, a))),
            CriterionSpec::Aitchison {} => Rows::Single(map(&|p| aitchison_unchecked(p, gamma))),
            CriterionSpec::BlrmLoss { table } => Rows::Single(map(&|p| blrm_loss_point(p, table))),
            CriterionSpec::EwocFixed { .. }
            | CriterionSpec::EwocTr { .. }
            | CriterionSpec::EwocTdfb { .. } => Rows::Hinge {
                below: map(&|p| (gamma - p).max(0.0)),
                above: map(&|p| (p - gamma).max(0.0)),
            },
        };
        Ok(Design {
            spec,
            doses,
            prior,
            gamma,
            rows,
        })
    }

    pub fn spec(&self) -> &DesignSpec {
        &self.spec
    }

    /// Standardized dose values fed to the model.
    pub fn doses(&self) -> &[f64] {
        &self.doses
    }

    pub fn dose_count(&self) -> usize {
        self.doses.len()
    }

    pub fn start(&self) -> TrialState {
        TrialState {
            cohorts: Vec::new(),
            posterior: self.prior.clone(),
            patients_treated: 0,
            dlt_total: 0,
            highest_tried: 0,
            terminated_externally: false,
            termination_reason: None,
        }
    }

    /// Rebuilds a state from recorded cohorts.
    pub fn replay(&self, cohorts: &[CohortRecord]) -> Result<TrialState> {
        let mut state = self.start();
        for c in cohorts {
            self.apply_cohort(&mut state, c.dose, &c.outcomes, c.overridden)?;
        }
        Ok(state)
    }

    pub fn is_complete(&self, state: &TrialState) -> bool {
        state.terminated_externally || state.patients_treated >= self.spec.max_patients
    }

    /// Feasibility bound for the next patient, for overdose-control criteria.
    pub fn current_alpha(&self, state: &TrialState) -> Option<f64> {
        self.spec
            .criterion
            .feasibility_bound(state.patients_treated, state.dlt_total)
    }

    /// Highest dose the next cohort may receive without an override.
    pub fn max_admissible(&self, state: &TrialState) -> usize {
        let m = self.dose_count();
        if state.patients_treated == 0 {
            self.spec.start_dose
        } else if self.spec.no_skip {
            m.min(state.highest_tried + 1)
        } else {
            m
        }
    }

    fn posterior_mean(&self, post: &PosteriorRep, idx: usize) -> f64 {
        post.expect_row(&post.row(self.doses[idx]).expect("dose rows are cached").prob)
    }

    fn criterion_at(&self, state: &TrialState, idx: usize, alpha: Option<f64>) -> f64 {
        let post = &state.posterior;
        match &self.rows {
            Rows::SqDistance => {
                let m = self.posterior_mean(post, idx);
                (m - self.gamma) * (m - self.gamma)
            }
            Rows::Single(rows) => post.expect_row(&rows[idx]),
            Rows::Hinge { below, above } => {
                let alpha = alpha.expect("hinge criteria carry a feasibility bound");
                alpha * post.expect_row(&below[idx]) + (1.0 - alpha) * post.expect_row(&above[idx])
            }
        }
    }

    /// Posterior mean toxicity and criterion value at every dose.
    pub fn evaluate(&self, state: &TrialState) -> Vec<DoseEstimate> {
        let alpha = self.current_alpha(state);
        (0..self.dose_count())
            .map(|i| DoseEstimate {
                dose: i + 1,
                post_mean_tox: self.posterior_mean(&state.posterior, i),
                criterion_value: self.criterion_at(state, i, alpha),
            })
            .collect()
    }

    /// Recommended dose for the next cohort (1-based).
    pub fn next_dose(&self, state: &TrialState) -> Result<usize> {
        if self.is_complete(state) {
            return Err(Error::TrialComplete);
        }
        if state.patients_treated == 0 {
            return Ok(self.spec.start_dose);
        }
        let alpha = self.current_alpha(state);
        let mut best = 0;
        let mut best_value = f64::INFINITY;
        for i in 0..self.max_admissible(state) {
            let v = self.criterion_at(state, i, alpha);
            if v < best_value {
                best = i;
                best_value = v;
            }
        }
        if !best_value.is_finite() {
            return Err(Error::Numerical("no admissible dose has a finite criterion value".into()));
        }
        Ok(best + 1)
    }

    /// Records a cohort. A dose other than the recommendation requires `overridden`.
    pub fn record_cohort(
        &self,
        state: &TrialState,
        dose: usize,
        outcomes: &[bool],
        overridden: bool,
    ) -> Result<TrialState> {
        let mut next = state.clone();
        self.apply_cohort(&mut next, dose, outcomes, overridden)?;
        Ok(next)
    }

    /// In-place variant of [`Design::record_cohort`].
    pub fn apply_cohort(
        &self,
        state: &mut TrialState,
        dose: usize,
        outcomes: &[bool],
        overridden: bool,
    ) -> Result<()> {
        if self.is_complete(state) {
            return Err(Error::TrialComplete);
        }
        if outcomes.is_empty() {
            return Err(Error::InvalidDesign("a cohort needs at least one outcome".into()));
        }
        let remaining = self.spec.max_patients - state.patients_treated;
        if outcomes.len() > remaining {
            return Err(Error::CapacityExceeded {
                requested: outcomes.len(),
                remaining,
            });
        }
        let m = self.dose_count();
        if dose == 0 || dose > m {
            return Err(Error::Domain(format!("dose {dose} outside 1..={m}")));
        }
        let recommended = self.next_dose(state)?;
        if dose != recommended && !overridden {
            return Err(Error::Inadmissible {
                dose,
                max_admissible: self.max_admissible(state),
            });
        }
        let d = self.doses[dose - 1];
        let obs: Vec<(f64, bool)> = outcomes.iter().map(|&y| (d, y)).collect();
        state.posterior = update_batch(&state.posterior, &self.spec.model, &obs)?;
        state.patients_treated += outcomes.len();
        state.dlt_total += outcomes.iter().filter(|&&y| y).count();
        state.highest_tried = state.highest_tried.max(dose);
        state.cohorts.push(CohortRecord {
            dose,
            outcomes: outcomes.to_vec(),
            recommended,
            overridden: dose != recommended,
        });
        Ok(())
    }

    /// Stops the trial early. Idempotent.
    pub fn terminate(&self, state: &mut TrialState, reason: Option<String>) {
        if !state.terminated_externally {
            state.terminated_externally = true;
            state.termination_reason = reason;
        }
    }

    /// Final MTD: dose whose posterior mean toxicity is closest to the target.
    pub fn select_mtd(&self, state: &TrialState) -> Result<usize> {
        if state.patients_treated == 0 {
            return Err(Error::NoData);
        }
        let mut best = 0;
        let mut best_value = f64::INFINITY;
        for i in 0..self.dose_count() {
            let m = self.posterior_mean(&state.posterior, i);
            let v = (m - self.gamma) * (m - self.gamma);
            if v < best_value {
                best = i;
                best_value = v;
            }
        }
        Ok(best + 1)
    }
}
