//! Session store. Each session lives in `<data_dir>/<session_id>/` as
//! `session.json` plus an append-only `votes.ndjson`; votes to one session
//! are serialized by that session's lock.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{AbError, Result};
use crate::session::{parse_log, summarize, PairSpec, Session, Summary, VoteRecord, MAX_SCORE, MIN_SCORE};

const SESSION_FILE: &str = "session.json";
const VOTES_FILE: &str = "votes.ndjson";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

/// What a listener sees of a trial: no condition labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialView {
    pub trial_id: u32,
    pub index: usize,
    pub total: usize,
    pub audio_a: String,
    pub audio_b: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NextTrial {
    pub done: bool,
    pub completed: usize,
    pub total: usize,
    pub trial: Option<TrialView>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoteAck {
    pub trial_id: u32,
    pub stored_score: i64,
}

struct Progress {
    voted: HashSet<(String, u32)>,
    played: HashSet<(String, u32, Side)>,
    log: File,
}

struct SessionState {
    session: Session,
    dir: PathBuf,
    progress: Mutex<Progress>,
}

pub struct AbService {
    data_dir: PathBuf,
    audio_root: PathBuf,
    sessions: RwLock<HashMap<String, Arc<SessionState>>>,
}

fn now_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

/// Relative path without `..` or root components.
pub fn safe_relative(p: &str) -> Option<PathBuf> {
    let path = Path::new(p);
    let ok = !p.is_empty() && path.components().all(|c| matches!(c, Component::Normal(_)));
    ok.then(|| path.to_path_buf())
}

impl AbService {
    /// Open the store, reloading sessions and votes already on disk.
    pub fn open(data_dir: &Path, audio_root: &Path) -> Result<Self> {
        std::fs::create_dir_all(data_dir)?;
        let svc = AbService { data_dir: data_dir.into(), audio_root: audio_root.into(), sessions: RwLock::new(HashMap::new()) };
        for entry in std::fs::read_dir(data_dir)? {
            let dir = entry?.path();
            let file = dir.join(SESSION_FILE);
            if !file.is_file() {
                continue;
            }
            let session: Session = serde_json::from_str(&std::fs::read_to_string(&file)?)
                .map_err(|e| AbError::Corrupt(format!("{}: {e}", file.display())))?;
            let state = svc.state_for(session, dir)?;
            svc.sessions.write().expect("session map").insert(state.session.session_id.clone(), Arc::new(state));
        }
        Ok(svc)
    }

    fn state_for(&self, session: Session, dir: PathBuf) -> Result<SessionState> {
        let log_path = dir.join(VOTES_FILE);
        let existing = if log_path.exists() { parse_log(&std::fs::read_to_string(&log_path)?)? } else { Vec::new() };
        let voted = existing.iter().map(|v| (v.listener_id.clone(), v.trial_id)).collect();
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        Ok(SessionState { session, dir, progress: Mutex::new(Progress { voted, played: HashSet::new(), log }) })
    }

    pub fn audio_root(&self) -> &Path {
        &self.audio_root
    }

    pub fn create_session(&self, manifest: Vec<PairSpec>, seed: u64) -> Result<SessionInfo> {
        let mut missing = Vec::new();
        for p in &manifest {
            for f in [&p.test, &p.reference] {
                match safe_relative(f) {
                    Some(rel) if self.audio_root.join(&rel).is_file() => {}
                    _ => missing.push(f.clone()),
                }
            }
        }
        if !missing.is_empty() {
            return Err(AbError::MissingFiles(missing));
        }
        let session = Session::new(manifest, seed, now_millis())?;
        let id = session.session_id.clone();
        let mut map = self.sessions.write().expect("session map");
        if let Some(existing) = map.get(&id) {
            if existing.session.trials == session.trials {
                return Ok(SessionInfo { session_id: id, trials: existing.session.trials.len() });
            }
            return Err(AbError::BadRequest(format!("session {id} already exists with another manifest")));
        }
        let dir = self.data_dir.join(&id);
        std::fs::create_dir_all(&dir)?;
        let text = serde_json::to_string_pretty(&session).map_err(|e| AbError::Corrupt(e.to_string()))?;
        std::fs::write(dir.join(SESSION_FILE), text)?;
        let info = SessionInfo { session_id: id.clone(), trials: session.trials.len() };
        map.insert(id, Arc::new(self.state_for(session, dir)?));
        Ok(info)
    }

    fn get(&self, id: &str) -> Result<Arc<SessionState>> {
        self.sessions.read().expect("session map").get(id).cloned().ok_or_else(|| AbError::UnknownSession(id.into()))
    }

    pub fn session(&self, id: &str) -> Result<Session> {
        Ok(self.get(id)?.session.clone())
    }

    /// First trial the listener has not voted on.
    pub fn next_trial(&self, id: &str, listener: &str) -> Result<NextTrial> {
        let st = self.get(id)?;
        let prog = st.progress.lock().expect("session lock");
        let total = st.session.trials.len();
        let completed = st.session.trials.iter().filter(|t| prog.voted.contains(&(listener.to_string(), t.trial_id))).count();
        let trial = st.session.trials.iter().enumerate().find(|(_, t)| !prog.voted.contains(&(listener.to_string(), t.trial_id)));
        Ok(NextTrial {
            done: trial.is_none(),
            completed,
            total,
            trial: trial.map(|(index, t)| {
                let (a, b) = t.presented();
                TrialView { trial_id: t.trial_id, index, total, audio_a: format!("/audio/{a}"), audio_b: format!("/audio/{b}") }
            }),
        })
    }

    pub fn mark_played(&self, id: &str, trial: u32, listener: &str, side: Side) -> Result<()> {
        let st = self.get(id)?;
        st.session.trial(trial).ok_or(AbError::UnknownTrial(trial))?;
        st.progress.lock().expect("session lock").played.insert((listener.to_string(), trial, side));
        Ok(())
    }

    /// Validate, orient and append a vote. `raw` is positive when A is
    /// preferred.
    pub fn record_vote(&self, id: &str, trial: u32, listener: &str, raw: i64) -> Result<VoteAck> {
        let st = self.get(id)?;
        let t = st.session.trial(trial).ok_or(AbError::UnknownTrial(trial))?;
        if !(MIN_SCORE..=MAX_SCORE).contains(&raw) {
            return Err(AbError::ScoreOutOfRange(raw));
        }
        if listener.is_empty() {
            return Err(AbError::BadRequest("listener id is empty".into()));
        }
        let mut prog = st.progress.lock().expect("session lock");
        let key = (listener.to_string(), trial);
        if prog.voted.contains(&key) {
            return Err(AbError::Duplicate { listener: listener.into(), trial });
        }
        let played = |s| prog.played.contains(&(listener.to_string(), trial, s));
        if !(played(Side::A) && played(Side::B)) {
            return Err(AbError::NotPlayed { trial });
        }
        let rec = VoteRecord {
            session_id: st.session.session_id.clone(),
            trial_id: trial,
            listener_id: listener.into(),
            score: t.orient(raw),
            timestamp: now_millis(),
        };
        let mut line = serde_json::to_string(&rec).map_err(|e| AbError::Corrupt(e.to_string()))?;
        line.push('\n');
        prog.log.write_all(line.as_bytes())?;
        prog.log.flush()?;
        prog.voted.insert(key);
        Ok(VoteAck { trial_id: trial, stored_score: rec.score })
    }

    /// Raw vote log as stored.
    pub fn vote_log(&self, id: &str) -> Result<String> {
        let st = self.get(id)?;
        let _guard = st.progress.lock().expect("session lock");
        Ok(std::fs::read_to_string(st.dir.join(VOTES_FILE))?)
    }

    /// Recomputed from the vote log on every call.
    pub fn summary(&self, id: &str) -> Result<Summary> {
        let st = self.get(id)?;
        let votes = parse_log(&self.vote_log(id)?)?;
        summarize(&st.session, &votes)
    }
}
