//! Interactive preference elicitation: session state machine, a file-backed
//! store, and a service that serializes operations per session.
//!
//! A session cycles `ready → awaiting_feedback → ready` once per round.
//! `next_pair` refits the posterior, runs PF-TS and parks the pair together
//! with a fresh token; `submit_feedback` appends the comparison and clears it.
//! The token makes retried submissions land at most once.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidates::CandidateSet;
use crate::inference::{fit, ExplorationSchedule, PreferenceHistory, DEFAULT_LAMBDA};
use crate::kernels::{BaseKernel, DuelingKernel};
use crate::policies::pfts_select;
use crate::{argmax, Point};

/// Schema tag written into every stored session file.
pub const SESSION_SCHEMA: &str = "pfts-session/1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("session {0} not found")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("corrupt store record {record}: {message}")]
    CorruptStore { record: String, message: String },
    #[error("io error at {path}: {message}")]
    Io { path: String, message: String },
    #[error("model error: {0}")]
    Model(String),
}

impl SessionError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Self::BadRequest(_) => "bad_request",
            Self::NotFound(_) => "not_found",
            Self::Conflict(_) => "conflict",
            Self::CorruptStore { .. } => "corrupt_store",
            Self::Io { .. } => "io",
            Self::Model(_) => "model",
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> SessionError {
    SessionError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    #[serde(default)]
    pub kernel: BaseKernel,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_norm_bound")]
    pub norm_bound: f64,
    #[serde(default)]
    pub schedule: ExplorationSchedule,
    /// Seeds the per-round policy stream.
    #[serde(default)]
    pub seed: u64,
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

fn default_norm_bound() -> f64 {
    1.0
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            kernel: BaseKernel::default(),
            lambda: DEFAULT_LAMBDA,
            norm_bound: 1.0,
            schedule: ExplorationSchedule::default(),
            seed: 0,
        }
    }
}

/// A candidate as submitted by a client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateInput {
    pub label: String,
    #[serde(default)]
    pub features: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCandidate {
    pub label: String,
    pub features: Point,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Ready,
    AwaitingFeedback,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingPair {
    pub token: String,
    pub first: usize,
    pub second: usize,
    pub v_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub first: usize,
    pub second: usize,
    pub winner: usize,
    /// Token of the pair this answered.
    pub token: String,
}

impl Comparison {
    pub fn first_won(&self) -> bool {
        self.winner == self.first
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub config: SessionConfig,
    pub candidates: Vec<SessionCandidate>,
    pub history: Vec<Comparison>,
    pub pending: Option<PendingPair>,
    pub t: usize,
    pub status: SessionStatus,
    pub created_ms: u64,
    pub updated_ms: u64,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

impl SessionState {
    /// Validates candidates and builds a fresh session in state `ready`.
    pub fn new(id: String, candidates: Vec<CandidateInput>, config: SessionConfig) -> Result<Self, SessionError> {
        if candidates.len() < 2 {
            return Err(SessionError::BadRequest(format!("need at least 2 candidates, got {}", candidates.len())));
        }
        if !(config.lambda > 0.0 && config.lambda.is_finite()) {
            return Err(SessionError::BadRequest(format!("lambda must be positive, got {}", config.lambda)));
        }
        if !(config.norm_bound >= 0.0 && config.norm_bound.is_finite()) {
            return Err(SessionError::BadRequest(format!("norm_bound must be nonnegative, got {}", config.norm_bound)));
        }
        config.kernel.validate().map_err(|e| SessionError::BadRequest(e.to_string()))?;
        let n = candidates.len();
        let with = candidates.iter().filter(|c| c.features.is_some()).count();
        let features: Vec<Point> = if with == 0 {
            (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
        } else if with < n {
            return Err(SessionError::BadRequest("features must be given for all candidates or none".into()));
        } else {
            let rows: Vec<Point> = candidates.iter().map(|c| c.features.clone().unwrap_or_default()).collect();
            let d = rows[0].len();
            if d == 0 || rows.iter().any(|r| r.len() != d) {
                return Err(SessionError::BadRequest("ragged or empty feature vectors".into()));
            }
            if rows.iter().flatten().any(|v| !v.is_finite()) {
                return Err(SessionError::BadRequest("features must be finite".into()));
            }
            rows
        };
        let set = CandidateSet::new(features.clone()).map_err(|e| SessionError::BadRequest(e.to_string()))?;
        if set.len() != n {
            return Err(SessionError::BadRequest("duplicate feature vectors".into()));
        }
        let now = now_ms();
        Ok(Self {
            id,
            config,
            candidates: candidates
                .into_iter()
                .zip(features)
                .map(|(c, features)| SessionCandidate { label: c.label, features })
                .collect(),
            history: Vec::new(),
            pending: None,
            t: 0,
            status: SessionStatus::Ready,
            created_ms: now,
            updated_ms: now,
        })
    }

    pub fn candidate_set(&self) -> CandidateSet {
        // features were validated on creation
        CandidateSet::new(self.candidates.iter().map(|c| c.features.clone()).collect())
            .expect("validated candidate features")
    }

    pub fn preference_history(&self) -> PreferenceHistory {
        let mut h = PreferenceHistory::new();
        for c in &self.history {
            h.push(self.candidates[c.first].features.clone(), self.candidates[c.second].features.clone(), c.first_won());
        }
        h
    }

    fn check_invariants(&self) -> Result<(), String> {
        if self.t != self.history.len() {
            return Err(format!("t = {} but history has {} entries", self.t, self.history.len()));
        }
        if self.pending.is_some() != (self.status == SessionStatus::AwaitingFeedback) {
            return Err("pending pair does not match status".into());
        }
        let n = self.candidates.len();
        let in_range = |i: usize| i < n;
        if self.history.iter().any(|c| !in_range(c.first) || !in_range(c.second) || (c.winner != c.first && c.winner != c.second))
        {
            return Err("history entry out of range".into());
        }
        if let Some(p) = &self.pending {
            if !in_range(p.first) || !in_range(p.second) {
                return Err("pending pair out of range".into());
            }
        }
        Ok(())
    }

    /// The pending pair, drawing one first if the session is ready.
    pub fn next_pair(&mut self) -> Result<PendingPair, SessionError> {
        match self.status {
            SessionStatus::Closed => return Err(SessionError::Conflict(format!("session {} is closed", self.id))),
            SessionStatus::AwaitingFeedback => {
                if let Some(p) = &self.pending {
                    return Ok(p.clone());
                }
            }
            SessionStatus::Ready => {}
        }
        let c = self.candidate_set();
        let post = fit(&self.preference_history(), &DuelingKernel::new(self.config.kernel), self.config.lambda, self.config.norm_bound)
            .map_err(|e| SessionError::Model(e.to_string()))?;
        let round = self.t + 1;
        let v_t = self.config.schedule.v_t(round, Some(&post)).map_err(|e| SessionError::Model(e.to_string()))?;
        let mut rng = round_rng(self.config.seed, round);
        let d = pfts_select(&post, &c, v_t, &mut rng).map_err(|e| SessionError::Model(e.to_string()))?;
        let pending = PendingPair { token: uuid::Uuid::new_v4().to_string(), first: d.first, second: d.second, v_t };
        self.pending = Some(pending.clone());
        self.status = SessionStatus::AwaitingFeedback;
        self.updated_ms = now_ms();
        Ok(pending)
    }

    /// Records `winner` for the pending pair.
    ///
    /// A `token` that matches the most recent answered pair with the same
    /// winner is a replay and leaves the state untouched.
    pub fn submit_feedback(&mut self, winner: usize, token: Option<&str>) -> Result<(), SessionError> {
        if let (Some(tok), Some(last)) = (token, self.history.last()) {
            if last.token == tok && self.pending.is_none() {
                return if last.winner == winner {
                    Ok(())
                } else {
                    Err(SessionError::Conflict("token already answered with a different winner".into()))
                };
            }
        }
        if self.status == SessionStatus::Closed {
            return Err(SessionError::Conflict(format!("session {} is closed", self.id)));
        }
        let Some(p) = self.pending.clone() else {
            return Err(SessionError::Conflict("no pending pair".into()));
        };
        if let Some(tok) = token {
            if tok != p.token {
                return Err(SessionError::Conflict("token does not match the pending pair".into()));
            }
        }
        if winner != p.first && winner != p.second {
            return Err(SessionError::BadRequest(format!(
                "winner {winner} is not in the pending pair ({}, {})",
                p.first, p.second
            )));
        }
        self.history.push(Comparison { first: p.first, second: p.second, winner, token: p.token });
        self.t += 1;
        self.pending = None;
        self.status = SessionStatus::Ready;
        self.updated_ms = now_ms();
        Ok(())
    }

    pub fn close(&mut self) {
        self.pending = None;
        self.status = SessionStatus::Closed;
        self.updated_ms = now_ms();
    }

    /// Posterior mean and σ against candidate 0.
    pub fn report(&self) -> Result<SessionReport, SessionError> {
        let c = self.candidate_set();
        let post = fit(&self.preference_history(), &DuelingKernel::new(self.config.kernel), self.config.lambda, self.config.norm_bound)
            .map_err(|e| SessionError::Model(e.to_string()))?;
        let ap = post.anchored(&c, c.point(0)).map_err(|e| SessionError::Model(e.to_string()))?;
        let candidates: Vec<CandidateReport> = self
            .candidates
            .iter()
            .enumerate()
            .map(|(i, cand)| CandidateReport {
                index: i,
                label: cand.label.clone(),
                mean: ap.mean[i],
                sd: ap.cov[(i, i)].max(0.0).sqrt(),
                wins: self.history.iter().filter(|h| h.winner == i).count(),
                comparisons: self.history.iter().filter(|h| h.first == i || h.second == i).count(),
            })
            .collect();
        let best = argmax(ap.mean.iter().copied()).unwrap_or(0);
        let mut ranking: Vec<usize> = (0..candidates.len()).collect();
        ranking.sort_by(|&a, &b| ap.mean[b].total_cmp(&ap.mean[a]).then(a.cmp(&b)));
        Ok(SessionReport {
            id: self.id.clone(),
            status: self.status,
            t: self.t,
            best,
            best_label: self.candidates[best].label.clone(),
            ranking,
            candidates,
            history: self.history.clone(),
            pending: self.pending.clone(),
        })
    }
}

/// Policy stream for round `round` (1-based) of a session seeded with `seed`.
pub fn round_rng(seed: u64, round: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub index: usize,
    pub label: String,
    pub mean: f64,
    pub sd: f64,
    pub wins: usize,
    pub comparisons: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub id: String,
    pub status: SessionStatus,
    pub t: usize,
    pub best: usize,
    pub best_label: String,
    /// Candidate indices by descending mean.
    pub ranking: Vec<usize>,
    pub candidates: Vec<CandidateReport>,
    pub history: Vec<Comparison>,
    pub pending: Option<PendingPair>,
}

#[derive(Serialize, Deserialize)]
struct StoredSession {
    schema: String,
    session: SessionState,
}

/// One JSON file per session. Writes go to a temporary file that is synced
/// and renamed over the old one. Without a directory, sessions live only in
/// memory.
#[derive(Debug, Clone, Default)]
pub struct SessionStore {
    dir: Option<PathBuf>,
}

impl SessionStore {
    pub fn in_memory() -> Self {
        Self { dir: None }
    }

    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, SessionError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(Self { dir: Some(dir) })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn path(dir: &Path, id: &str) -> PathBuf {
        dir.join(format!("{id}.json"))
    }

    pub fn save(&self, s: &SessionState) -> Result<(), SessionError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let body = serde_json::to_vec_pretty(&StoredSession { schema: SESSION_SCHEMA.into(), session: s.clone() })
            .map_err(|e| SessionError::Model(e.to_string()))?;
        let tmp = dir.join(format!(".{}.json.tmp", s.id));
        let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        f.write_all(&body).and_then(|_| f.sync_all()).map_err(|e| io_err(&tmp, e))?;
        let dest = Self::path(dir, &s.id);
        fs::rename(&tmp, &dest).map_err(|e| io_err(&dest, e))
    }

    pub fn parse(record: &str, bytes: &[u8]) -> Result<SessionState, SessionError> {
        let corrupt = |message: String| SessionError::CorruptStore { record: record.to_string(), message };
        let v: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| corrupt(e.to_string()))?;
        match v.get("schema").and_then(|s| s.as_str()) {
            Some(SESSION_SCHEMA) => {}
            Some(other) => return Err(corrupt(format!("unknown schema version {other:?}"))),
            None => return Err(corrupt("missing schema tag".into())),
        }
        let stored: StoredSession = serde_json::from_value(v).map_err(|e| corrupt(e.to_string()))?;
        if stored.session.id != record {
            return Err(corrupt(format!("file holds session {}", stored.session.id)));
        }
        stored.session.check_invariants().map_err(corrupt)?;
        Ok(stored.session)
    }

    pub fn load(&self, id: &str) -> Result<Option<SessionState>, SessionError> {
        let Some(dir) = &self.dir else { return Ok(None) };
        let path = Self::path(dir, id);
        match fs::read(&path) {
            Ok(bytes) => Self::parse(id, &bytes).map(Some),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path, e)),
        }
    }

    /// Every stored session, sorted by id.
    pub fn load_all(&self) -> Result<Vec<SessionState>, SessionError> {
        let Some(dir) = &self.dir else { return Ok(Vec::new()) };
        let mut ids: Vec<String> = fs::read_dir(dir)
            .map_err(|e| io_err(dir, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".json")).map(str::to_string))
            .filter(|n| !n.starts_with('.'))
            .collect();
        ids.sort();
        ids.iter().map(|id| self.load(id).map(|s| s.expect("listed file exists"))).collect()
    }
}

type Slot = Arc<Mutex<SessionState>>;

/// Thread-safe front end. Operations on one session are serialized by its
/// own lock; different sessions do not contend beyond the map lookup.
/// Every mutation is persisted before it returns.
#[derive(Debug, Default)]
pub struct SessionService {
    store: SessionStore,
    sessions: Mutex<HashMap<String, Slot>>,
}

impl SessionService {
    /// Loads every stored session.
    pub fn new(store: SessionStore) -> Result<Self, SessionError> {
        let sessions = store
            .load_all()?
            .into_iter()
            .map(|s| (s.id.clone(), Arc::new(Mutex::new(s))))
            .collect();
        Ok(Self { store, sessions: Mutex::new(sessions) })
    }

    pub fn store(&self) -> &SessionStore {
        &self.store
    }

    fn slot(&self, id: &str) -> Result<Slot, SessionError> {
        self.sessions.lock().expect("session map poisoned").get(id).cloned().ok_or_else(|| SessionError::NotFound(id.into()))
    }

    /// Applies `op` to a copy of the session and commits it only if `op`
    /// succeeds and the copy was persisted.
    fn mutate<T>(&self, id: &str, op: impl FnOnce(&mut SessionState) -> Result<T, SessionError>) -> Result<(T, SessionState), SessionError> {
        let slot = self.slot(id)?;
        let mut guard = slot.lock().expect("session poisoned");
        let mut next = guard.clone();
        let out = op(&mut next)?;
        if next != *guard {
            self.store.save(&next)?;
            *guard = next;
        }
        Ok((out, guard.clone()))
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.lock().expect("session map poisoned").keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn create(&self, candidates: Vec<CandidateInput>, config: SessionConfig) -> Result<SessionState, SessionError> {
        let state = SessionState::new(uuid::Uuid::new_v4().simple().to_string(), candidates, config)?;
        self.store.save(&state)?;
        self.sessions.lock().expect("session map poisoned").insert(state.id.clone(), Arc::new(Mutex::new(state.clone())));
        Ok(state)
    }

    pub fn get(&self, id: &str) -> Result<SessionState, SessionError> {
        Ok(self.slot(id)?.lock().expect("session poisoned").clone())
    }

    pub fn next_pair(&self, id: &str) -> Result<(PendingPair, SessionState), SessionError> {
        self.mutate(id, |s| s.next_pair())
    }

    pub fn submit_feedback(&self, id: &str, winner: usize, token: Option<&str>) -> Result<SessionState, SessionError> {
        self.mutate(id, |s| s.submit_feedback(winner, token)).map(|(_, s)| s)
    }

    pub fn report(&self, id: &str) -> Result<SessionReport, SessionError> {
        self.get(id)?.report()
    }

    pub fn close(&self, id: &str) -> Result<SessionState, SessionError> {
        self.mutate(id, |s| {
            s.close();
            Ok(())
        })
        .map(|(_, s)| s)
    }
}
