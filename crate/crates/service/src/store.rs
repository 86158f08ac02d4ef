//! Trial sessions backed by one append-only JSON-lines file each.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use escalate_core::{CohortRecord, Design, DesignSpec, DoseEstimate, TrialState};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

/// One line of a session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum Event {
    Created {
        id: String,
        design: Box<DesignSpec>,
        at_ms: u64,
    },
    Cohort {
        dose: usize,
        outcomes: Vec<bool>,
        #[serde(rename = "override")]
        overridden: bool,
        recommended: usize,
        at_ms: u64,
    },
    Terminated {
        reason: Option<String>,
        at_ms: u64,
    },
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Read-only view of a session, rebuilt after every accepted event.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialView {
    pub id: String,
    pub status: Status,
    pub design: DesignSpec,
    pub patients_treated: usize,
    pub dlt_total: usize,
    pub highest_tried: usize,
    /// Next recommended dose; absent once the trial is complete.
    pub recommendation: Option<usize>,
    pub max_admissible: Option<usize>,
    pub feasibility_bound: Option<f64>,
    pub estimates: Vec<DoseEstimate>,
    pub cohorts: Vec<CohortView>,
    pub termination: Option<Termination>,
    /// Final MTD; present once the trial is complete.
    pub mtd: Option<usize>,
    pub event_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Open,
    Complete,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortView {
    pub index: usize,
    #[serde(flatten)]
    pub record: CohortRecord,
    pub dlt_count: usize,
    pub at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Termination {
    pub reason: Option<String>,
    pub at_ms: u64,
}

struct Session {
    design: Design,
    state: TrialState,
    events: Vec<Event>,
    log: File,
}

struct Entry {
    writer: Mutex<Session>,
    snapshot: RwLock<Arc<TrialView>>,
}

/// Session registry; every session writes to `<dir>/<id>.jsonl`.
pub struct Store {
    dir: PathBuf,
    sessions: RwLock<HashMap<String, Arc<Entry>>>,
}

/// Outcome of a cohort submission.
pub struct CohortInput {
    pub dose: usize,
    pub outcomes: Vec<bool>,
    pub overridden: bool,
    pub cohort_index: Option<usize>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn append(log: &mut File, event: &Event) -> std::io::Result<()> {
    let mut line = serde_json::to_vec(event).map_err(std::io::Error::other)?;
    line.push(b'\n');
    log.write_all(&line)?;
    log.sync_data()
}

fn view(id: &str, session: &Session) -> TrialView {
    let Session { design, state, events, .. } = session;
    let complete = design.is_complete(state);
    let status = if state.terminated_externally() {
        Status::Terminated
    } else if complete {
        Status::Complete
    } else {
        Status::Open
    };
    let times: Vec<u64> = events
        .iter()
        .filter_map(|e| match e {
            Event::Cohort { at_ms, .. } => Some(*at_ms),
            _ => None,
        })
        .collect();
    let termination = events.iter().find_map(|e| match e {
        Event::Terminated { reason, at_ms } => Some(Termination {
            reason: reason.clone(),
            at_ms: *at_ms,
        }),
        _ => None,
    });
    TrialView {
        id: id.to_string(),
        status,
        design: design.spec().clone(),
        patients_treated: state.patients_treated(),
        dlt_total: state.dlt_total(),
        highest_tried: state.highest_tried(),
        recommendation: design.next_dose(state).ok(),
        max_admissible: (!complete).then(|| design.max_admissible(state)),
        feasibility_bound: if complete { None } else { design.current_alpha(state) },
        estimates: design.evaluate(state),
        cohorts: state
            .cohorts()
            .iter()
            .zip(times)
            .enumerate()
            .map(|(index, (record, at_ms))| CohortView {
                index,
                record: record.clone(),
                dlt_count: record.outcomes.iter().filter(|&&y| y).count(),
                at_ms,
            })
            .collect(),
        termination,
        mtd: if complete { design.select_mtd(state).ok() } else { None },
        event_count: events.len(),
    }
}

impl Entry {
    fn new(id: &str, session: Session) -> Arc<Entry> {
        let snapshot = RwLock::new(Arc::new(view(id, &session)));
        Arc::new(Entry {
            writer: Mutex::new(session),
            snapshot,
        })
    }
}

/// Folds a session log into a state. A torn final line is ignored.
fn replay(path: &Path) -> Result<(String, Session), String> {
    let file = File::open(path).map_err(|e| e.to_string())?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| e.to_string())?;
    let mut events = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Event>(line) {
            Ok(e) => events.push(e),
            Err(_) if i + 1 == lines.len() => break,
            Err(e) => return Err(format!("line {}: {e}", i + 1)),
        }
    }
    let Some(Event::Created { id, design, .. }) = events.first().cloned() else {
        return Err("log does not start with a created event".into());
    };
    let design = Design::new(*design).map_err(|e| e.to_string())?;
    let mut state = design.start();
    for (i, e) in events.iter().enumerate().skip(1) {
        match e {
            Event::Created { .. } => return Err(format!("event {}: duplicate created event", i + 1)),
            Event::Cohort {
                dose,
                outcomes,
                overridden,
                ..
            } => design
                .apply_cohort(&mut state, *dose, outcomes, *overridden)
                .map_err(|err| format!("event {}: {err}", i + 1))?,
            Event::Terminated { reason, .. } => design.terminate(&mut state, reason.clone()),
        }
    }
    let log = OpenOptions::new().append(true).open(path).map_err(|e| e.to_string())?;
    Ok((
        id,
        Session {
            design,
            state,
            events,
            log,
        },
    ))
}

impl Store {
    /// Opens `dir`, creating it if needed, and replays every session log in it.
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Store> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let mut sessions = HashMap::new();
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            let (id, session) = replay(&path).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{}: {e}", path.display()),
                )
            })?;
            sessions.insert(id.clone(), Entry::new(&id, session));
        }
        Ok(Store {
            dir,
            sessions: RwLock::new(sessions),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.sessions.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }

    fn entry(&self, id: &str) -> Result<Arc<Entry>, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }

    pub fn create(&self, id: Option<String>, spec: DesignSpec) -> Result<Arc<TrialView>, ApiError> {
        let id = match id {
            Some(id) if !valid_id(&id) => {
                return Err(ApiError::bad_request(
                    "id",
                    "ids are 1-64 characters of letters, digits, '-' or '_'",
                ))
            }
            Some(id) => id,
            None => uuid::Uuid::new_v4().to_string(),
        };
        let design = Design::new(spec.clone()).map_err(ApiError::invalid_design)?;
        let mut sessions = self.sessions.write().unwrap();
        if sessions.contains_key(&id) {
            return Err(ApiError::conflict("id-collision", format!("trial `{id}` already exists")));
        }
        let path = self.dir.join(format!("{id}.jsonl"));
        let mut log = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => {
                    ApiError::conflict("id-collision", format!("trial `{id}` already exists"))
                }
                _ => ApiError::storage(e),
            })?;
        let event = Event::Created {
            id: id.clone(),
            design: Box::new(spec),
            at_ms: now_ms(),
        };
        append(&mut log, &event).map_err(ApiError::storage)?;
        let session = Session {
            state: design.start(),
            design,
            events: vec![event],
            log,
        };
        let entry = Entry::new(&id, session);
        let snapshot = entry.snapshot.read().unwrap().clone();
        sessions.insert(id, entry);
        Ok(snapshot)
    }

    pub fn get(&self, id: &str) -> Result<Arc<TrialView>, ApiError> {
        Ok(self.entry(id)?.snapshot.read().unwrap().clone())
    }

    /// Validates, logs (with fsync) and applies a cohort.
    pub fn post_cohort(&self, id: &str, input: CohortInput) -> Result<Arc<TrialView>, ApiError> {
        let entry = self.entry(id)?;
        let mut session = entry.writer.lock().unwrap();
        let done = session.state.cohorts().len();
        if let Some(slot) = input.cohort_index {
            if slot != done {
                return Err(ApiError::conflict(
                    "cohort-slot-taken",
                    format!("cohort_index {slot} does not match the next slot {done}"),
                ));
            }
        }
        let Session { design, state, .. } = &*session;
        let recommended = design.next_dose(state).map_err(ApiError::from_engine)?;
        let next = design
            .record_cohort(state, input.dose, &input.outcomes, input.overridden)
            .map_err(|e| match e {
                escalate_core::Error::Inadmissible { dose, max_admissible } => ApiError::unprocessable(
                    "inadmissible-dose",
                    format!(
                        "dose {dose} differs from the recommended dose {recommended} \
                         (highest admissible {max_admissible}); set \"override\": true to record it"
                    ),
                ),
                other => ApiError::from_engine(other),
            })?;
        let event = Event::Cohort {
            dose: input.dose,
            outcomes: input.outcomes,
            overridden: input.dose != recommended,
            recommended,
            at_ms: now_ms(),
        };
        append(&mut session.log, &event).map_err(ApiError::storage)?;
        session.state = next;
        session.events.push(event);
        let snapshot = Arc::new(view(id, &session));
        *entry.snapshot.write().unwrap() = snapshot.clone();
        Ok(snapshot)
    }

    /// Marks the trial terminated. Repeated calls succeed without new events.
    pub fn terminate(&self, id: &str, reason: Option<String>) -> Result<Arc<TrialView>, ApiError> {
        let entry = self.entry(id)?;
        let mut session = entry.writer.lock().unwrap();
        if session.state.terminated_externally() {
            return Ok(entry.snapshot.read().unwrap().clone());
        }
        let event = Event::Terminated {
            reason: reason.clone(),
            at_ms: now_ms(),
        };
        append(&mut session.log, &event).map_err(ApiError::storage)?;
        let Session { design, state, .. } = &mut *session;
        design.terminate(state, reason);
        session.events.push(event);
        let snapshot = Arc::new(view(id, &session));
        *entry.snapshot.write().unwrap() = snapshot.clone();
        Ok(snapshot)
    }

    /// Recorded events of a session, oldest first.
    pub fn events(&self, id: &str) -> Result<Vec<Event>, ApiError> {
        Ok(self.entry(id)?.writer.lock().unwrap().events.clone())
    }
}
