//! HTTP conduct service under `/v1`.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/v1/trials` | create a trial from a design |
//! | GET | `/v1/trials/{id}` | full state with per-dose estimates and audit trail |
//! | POST | `/v1/trials/{id}/cohorts` | record a cohort |
//! | GET | `/v1/trials/{id}/recommendation` | next dose and per-dose estimates |
//! | POST | `/v1/trials/{id}/terminate` | stop early and select the MTD |
//! | GET | `/v1/presets` | shipped example designs |

mod error;
mod store;

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use escalate_core::{DesignSpec, DoseEstimate};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use error::ApiError;
pub use store::{CohortInput, CohortView, Event, Status, Store, Termination, TrialView};

type Shared = Arc<Store>;

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let text = if body.iter().all(u8::is_ascii_whitespace) { b"{}".as_slice() } else { body };
    let de = &mut serde_json::Deserializer::from_slice(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ApiError::bad_request(path, e.into_inner().to_string())
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    #[serde(default)]
    id: Option<String>,
    design: DesignSpec,
}

/// An outcome given as `true`/`false` or `1`/`0`.
#[derive(Deserialize)]
#[serde(untagged)]
enum Outcome {
    Flag(bool),
    Code(u8),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CohortRequest {
    dose: usize,
    outcomes: Vec<Outcome>,
    #[serde(default, rename = "override")]
    overridden: bool,
    #[serde(default)]
    cohort_index: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct TerminateRequest {
    #[serde(default)]
    reason: Option<String>,
}

#[derive(Serialize)]
struct Recommendation {
    id: String,
    status: Status,
    recommendation: Option<usize>,
    max_admissible: Option<usize>,
    feasibility_bound: Option<f64>,
    patients_treated: usize,
    remaining: usize,
    estimates: Vec<DoseEstimate>,
    mtd: Option<usize>,
}

#[derive(Serialize)]
struct Preset {
    name: &'static str,
    design: DesignSpec,
}

const PRESETS: [(&str, &str); 3] = [
    ("everolimus-crm", include_str!("../../../configs/everolimus-crm.design.json")),
    ("everolimus-cibp", include_str!("../../../configs/everolimus-cibp.design.json")),
    ("six-dose-cibp-0.3", include_str!("../../../configs/six-dose-cibp.design.json")),
];

/// Shipped example designs.
pub fn presets() -> Vec<(&'static str, DesignSpec)> {
    PRESETS
        .iter()
        .map(|(name, text)| (*name, serde_json::from_str(text).expect("preset parses")))
        .collect()
}

async fn create(State(store): State<Shared>, body: Bytes) -> Result<(StatusCode, Json<TrialView>), ApiError> {
    let req: CreateRequest = parse(&body)?;
    let view = store.create(req.id, req.design)?;
    Ok((StatusCode::CREATED, Json(view.as_ref().clone())))
}

async fn show(State(store): State<Shared>, Path(id): Path<String>) -> Result<Json<TrialView>, ApiError> {
    Ok(Json(store.get(&id)?.as_ref().clone()))
}

async fn cohort(
    State(store): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<TrialView>, ApiError> {
    store.get(&id)?;
    let req: CohortRequest = parse(&body)?;
    let mut outcomes = Vec::with_capacity(req.outcomes.len());
    for (i, o) in req.outcomes.iter().enumerate() {
        outcomes.push(match o {
            Outcome::Flag(y) => *y,
            Outcome::Code(0) => false,
            Outcome::Code(1) => true,
            Outcome::Code(c) => {
                return Err(ApiError::bad_request(format!("outcomes[{i}]"), format!("outcome {c} is not 0 or 1")))
            }
        });
    }
    let input = CohortInput {
        dose: req.dose,
        outcomes,
        overridden: req.overridden,
        cohort_index: req.cohort_index,
    };
    let view = tokio::task::spawn_blocking(move || store.post_cohort(&id, input))
        .await
        .expect("cohort task")?;
    Ok(Json(view.as_ref().clone()))
}

async fn recommendation(
    State(store): State<Shared>,
    Path(id): Path<String>,
) -> Result<Json<Recommendation>, ApiError> {
    let v = store.get(&id)?;
    Ok(Json(Recommendation {
        id: v.id.clone(),
        status: v.status,
        recommendation: v.recommendation,
        max_admissible: v.max_admissible,
        feasibility_bound: v.feasibility_bound,
        patients_treated: v.patients_treated,
        remaining: v.design.max_patients.saturating_sub(v.patients_treated),
        estimates: v.estimates.clone(),
        mtd: v.mtd,
    }))
}

async fn terminate(
    State(store): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<TrialView>, ApiError> {
    store.get(&id)?;
    let req: TerminateRequest = parse(&body)?;
    let view = tokio::task::spawn_blocking(move || store.terminate(&id, req.reason))
        .await
        .expect("terminate task")?;
    Ok(Json(view.as_ref().clone()))
}

async fn list_presets() -> Json<Vec<Preset>> {
    Json(
        presets()
            .into_iter()
            .map(|(name, design)| Preset { name, design })
            .collect(),
    )
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/v1/trials", post(create))
        .route("/v1/trials/{id}", get(show))
        .route("/v1/trials/{id}/cohorts", post(cohort))
        .route("/v1/trials/{id}/recommendation", get(recommendation))
        .route("/v1/trials/{id}/terminate", post(terminate))
        .route("/v1/presets", get(list_presets))
        .with_state(store)
}

/// Serves until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, store: Arc<Store>) -> std::io::Result<()> {
    axum::serve(listener, router(store))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
