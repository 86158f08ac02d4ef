//! Monte Carlo operating characteristics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trial::{CohortRecord, Design};

/// True dose-toxicity curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub true_tox: Vec<f64>,
    /// 1-based. Computed as the dose nearest the target when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mtd_index: Option<usize>,
}

impl ScenarioSpec {
    pub fn new(name: impl Into<String>, true_tox: Vec<f64>) -> Self {
        ScenarioSpec {
            name: name.into(),
            true_tox,
            mtd_index: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.true_tox.is_empty() {
            return Err(Error::InvalidScenario(format!("{}: true_tox is empty", self.name)));
        }
        for (i, &p) in self.true_tox.iter().enumerate() {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::InvalidScenario(format!(
                    "{}: true_tox[{i}] = {p} must lie in (0, 1)",
                    self.name
                )));
            }
        }
        if self.true_tox.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidScenario(format!(
                "{}: true_tox must be non-decreasing",
                self.name
            )));
        }
        if let Some(k) = self.mtd_index {
            if k == 0 || k > self.true_tox.len() {
                return Err(Error::InvalidScenario(format!(
                    "{}: mtd_index = {k} must lie in 1..={}",
                    self.name,
                    self.true_tox.len()
                )));
            }
        }
        Ok(())
    }

    /// True MTD for target `gamma` and any warnings about ties.
    pub fn resolve_mtd(&self, gamma: f64) -> Result<(usize, Vec<String>)> {
        self.validate()?;
        let dist: Vec<f64> = self.true_tox.iter().map(|p| (p - gamma).abs()).collect();
        let best = dist.iter().copied().fold(f64::INFINITY, f64::min);
        let nearest: Vec<usize> = (0..dist.len())
            .filter(|&i| dist[i] - best <= 1e-12)
            .map(|i| i + 1)
            .collect();
        let mut warnings = Vec::new();
        if nearest.len() > 1 {
            warnings.push(format!(
                "{}: doses {nearest:?} are equally close to the target {gamma}",
                self.name
            ));
        }
        match self.mtd_index {
            Some(k) if !nearest.contains(&k) => Err(Error::InvalidScenario(format!(
                "{}: mtd_index = {k} but the dose nearest the target {gamma} is {}",
                self.name, nearest[0]
            ))),
            Some(k) => Ok((k, warnings)),
            None => Ok((nearest[0], warnings)),
        }
    }
}

/// Result of one simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub selected: usize,
    pub dlt_count: usize,
    pub patients: usize,
    pub cohorts: Vec<CohortRecord>,
    /// Feasibility bound in force at each allocation (overdose-control designs).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alphas: Vec<f64>,
}

/// RNG for replication `rep` of cell `cell`.
pub fn substream(master_seed: u64, cell: u32, rep: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(((cell as u64) << 32) | rep as u64);
    rng
}

/// Runs one trial to completion with Bernoulli outcomes drawn from `scenario`.
pub fn simulate_trial<R: Rng + ?Sized>(scenario: &ScenarioSpec, design: &Design, rng: &mut R) -> Result<TrialOutcome> {
    if scenario.true_tox.len() != design.dose_count() {
        return Err(Error::InvalidScenario(format!(
            "{}: {} doses but design has {}",
            scenario.name,
            scenario.true_tox.len(),
            design.dose_count()
        )));
    }
    let spec = design.spec();
    let mut state = design.start();
    let mut alphas = Vec::new();
    let mut outcomes = Vec::with_capacity(spec.cohort_size);
    while !design.is_complete(&state) {
        if let Some(a) = design.current_alpha(&state) {
            alphas.push(a);
        }
        let dose = design.next_dose(&state)?;
        let n = spec.cohort_size.min(spec.max_patients - state.patients_treated());
        let p = scenario.true_tox[dose - 1];
        outcomes.clear();
        outcomes.extend((0..n).map(|_| rng.random::<f64>() < p));
        design.apply_cohort(&mut state, dose, &outcomes, false)?;
    }
    Ok(TrialOutcome {
        selected: design.select_mtd(&state)?,
        dlt_count: state.dlt_total(),
        patients: state.patients_treated(),
        cohorts: state.cohorts().to_vec(),
        alphas,
    })
}

/// 𝒜 = 1 − m Σ (p_i − γ)² π_i / Σ (p_i − γ)².
pub fn accuracy_index(selection_probs: &[f64], true_tox: &[f64], gamma: f64) -> Result<f64> {
    if selection_probs.len() != true_tox.len() {
        return Err(Error::InvalidScenario(format!(
            "{} selection probabilities for {} doses",
            selection_probs.len(),
            true_tox.len()
        )));
    }
    let m = true_tox.len() as f64;
    let denom: f64 = true_tox.iter().map(|p| (p - gamma) * (p - gamma)).sum();
    if denom == 0.0 {
        return Err(Error::InvalidScenario(
            "every dose sits exactly at the target; accuracy is undefined".into(),
        ));
    }
    let num: f64 = true_tox
        .iter()
        .zip(selection_probs)
        .map(|(p, pi)| (p - gamma) * (p - gamma) * pi)
        .sum();
    Ok(1.0 - m * num / denom)
}

/// Aggregates for one (design, scenario) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub design: String,
    pub scenario: String,
    pub true_mtd: usize,
    pub selection_pct: Vec<f64>,
    /// Share of all patients allocated to each dose.
    pub allocation_pct: Vec<f64>,
    pub pcs: f64,
    /// Percentage of patients with a DLT.
    pub dlt_pct: f64,
    /// Mean number of DLTs per trial.
    pub mean_dlt_count: f64,
    pub mean_patients: f64,
    pub accuracy: f64,
}

/// Per-design averages across scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSummary {
    pub design: String,
    pub mean_accuracy: f64,
    /// Absent when any accuracy is not strictly positive.
    pub geometric_mean_accuracy: Option<f64>,
    pub mean_dlt_count: f64,
    pub mean_dlt_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub reps: usize,
    pub seed: u64,
    pub cells: Vec<CellResult>,
    pub summary: Vec<DesignSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// Resolved configuration that produced this report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

fn aggregate(
    design: &Design,
    scenario: &ScenarioSpec,
    true_mtd: usize,
    runs: &[TrialOutcome],
) -> Result<CellResult> {
    let m = design.dose_count();
    let reps = runs.len() as f64;
    let mut selected = vec![0usize; m];
    let mut allocated = vec![0usize; m];
    let mut dlts = 0usize;
    let mut patients = 0usize;
    for r in runs {
        selected[r.selected - 1] += 1;
        for c in &r.cohorts {
            allocated[c.dose - 1] += c.outcomes.len();
        }
        dlts += r.dlt_count;
        patients += r.patients;
    }
    let selection_pct: Vec<f64> = selected.iter().map(|&k| 100.0 * k as f64 / reps).collect();
    let probs: Vec<f64> = selected.iter().map(|&k| k as f64 / reps).collect();
    Ok(CellResult {
        design: design.spec().display_name(),
        scenario: scenario.name.clone(),
        true_mtd,
        pcs: selection_pct[true_mtd - 1],
        allocation_pct: allocated
            .iter()
            .map(|&k| 100.0 * k as f64 / patients as f64)
            .collect(),
        selection_pct,
        dlt_pct: 100.0 * dlts as f64 / patients as f64,
        mean_dlt_count: dlts as f64 / reps,
        mean_patients: patients as f64 / reps,
        accuracy: accuracy_index(&probs, &scenario.true_tox, design.spec().target.gamma)?,
    })
}

fn run_cell(design: &Design, scenario: &ScenarioSpec, cell: u32, reps: usize, seed: u64) -> Result<Vec<TrialOutcome>> {
    (0..reps)
        .into_par_iter()
        .map(|rep| simulate_trial(scenario, design, &mut substream(seed, cell, rep as u32)))
        .collect()
}

/// Simulates every design under every scenario. Cells are ordered design-major.
/// `threads = None` uses the global pool.
pub fn run_study(
    scenarios: &[ScenarioSpec],
    designs: &[Design],
    reps: usize,
    master_seed: u64,
    threads: Option<usize>,
) -> Result<StudyReport> {
    if reps == 0 {
        return Err(Error::InvalidDesign("reps must be at least 1".into()));
    }
    if reps > u32::MAX as usize {
        return Err(Error::InvalidDesign(format!("reps = {reps} is too large")));
    }
    let mut warnings = Vec::new();
    let mut jobs = Vec::new();
    for (d, design) in designs.iter().enumerate() {
        for (s, scenario) in scenarios.iter().enumerate() {
            if scenario.true_tox.len() != design.dose_count() {
                return Err(Error::InvalidScenario(format!(
                    "scenario {} has {} doses but design {} has {}",
                    scenario.name,
                    scenario.true_tox.len(),
                    design.spec().display_name(),
                    design.dose_count()
                )));
            }
            let (mtd, w) = scenario.resolve_mtd(design.spec().target.gamma)?;
            for msg in w {
                if !warnings.contains(&msg) {
                    warnings.push(msg);
                }
            }
            jobs.push((d, s, (d * scenarios.len() + s) as u32, mtd));
        }
    }

    let run_all = || -> Result<Vec<CellResult>> {
        jobs.iter()
            .map(|&(d, s, cell, mtd)| {
                let runs = run_cell(&designs[d], &scenarios[s], cell, reps, master_seed)?;
                aggregate(&designs[d], &scenarios[s], mtd, &runs)
            })
            .collect()
    };
    let cells = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidDesign(format!("cannot start worker pool: {e}")))?
            .install(run_all)?,
        None => run_all()?,
    };

    let summary = designs
        .iter()
        .map(|design| summarize(&design.spec().display_name(), &cells))
        .collect();
    Ok(StudyReport {
        reps,
        seed: master_seed,
        cells,
        summary,
        warnings,
        config: None,
    })
}

/// Averages over all cells belonging to `design`.
pub fn summarize(design: &str, cells: &[CellResult]) -> DesignSummary {
    let own: Vec<&CellResult> = cells.iter().filter(|c| c.design == design).collect();
    let n = own.len().max(1) as f64;
    let mean_accuracy = own.iter().map(|c| c.accuracy).sum::<f64>() / n;
    let geometric_mean_accuracy = if !own.is_empty() && own.iter().all(|c| c.accuracy > 0.0) {
        Some((own.iter().map(|c| c.accuracy.ln()).sum::<f64>() / n).exp())
    } else {
        None
    };
    DesignSummary {
        design: design.to_string(),
        mean_accuracy,
        geometric_mean_accuracy,
        mean_dlt_count: own.iter().map(|c| c.mean_dlt_count).sum::<f64>() / n,
        mean_dlt_pct: own.iter().map(|c| c.dlt_pct).sum::<f64>() / n,
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    design: &'a str,
    scenario: &'a str,
    dose: usize,
    selection_pct: f64,
    allocation_pct: f64,
    pcs: f64,
    dlt_pct: f64,
    mean_dlt_count: f64,
    accuracy: f64,
    reps: usize,
    seed: u64,
}

impl StudyReport {
    /// One row per (design, scenario, dose).
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for c in &self.cells {
            for (i, (&sel, &alloc)) in c.selection_pct.iter().zip(&c.allocation_pct).enumerate() {
                w.serialize(CsvRow {
                    design: &c.design,
                    scenario: &c.scenario,
                    dose: i + 1,
                    selection_pct: sel,
                    allocation_pct: alloc,
                    pcs: c.pcs,
                    dlt_pct: c.dlt_pct,
                    mean_dlt_count: c.mean_dlt_count,
                    accuracy: c.accuracy,
                    reps: self.reps,
                    seed: self.seed,
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn cell(&self, design: &str, scenario: &str) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.design == design && c.scenario == scenario)
    }
}
