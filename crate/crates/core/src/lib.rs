//! Model-based dose-escalation engine.

// `!(x > 0.0)` style checks also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod criteria;
pub mod error;
pub mod models;
pub mod posterior;
pub mod sim;
pub mod trial;

pub use config::{OutputSpec, ScenarioEntry, StudyConfig};
pub use criteria::{CriterionSpec, LossTable, TargetConfig, TrSchedule};
pub use error::{Error, Result};
pub use models::{DoseScaling, ModelSpec, Skeleton};
pub use posterior::{GridSpec, PosteriorRep};
pub use sim::{CellResult, DesignSummary, ScenarioSpec, StudyReport, TrialOutcome};
pub use trial::{CohortRecord, Design, DesignSpec, DoseEstimate, TrialState};
