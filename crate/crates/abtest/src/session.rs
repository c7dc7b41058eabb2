//! Sessions, vote records and summary arithmetic.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AbError, Result};

pub const MIN_SCORE: i64 = -2;
pub const MAX_SCORE: i64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Hash, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

/// One manifest entry: the system under test against a reference system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSpec {
    /// Audio path (relative to the audio root) of the system under test.
    pub test: String,
    pub reference: String,
    pub test_condition: String,
    pub reference_condition: String,
    pub gender: Gender,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: u32,
    pub pair: PairSpec,
    /// True when the system under test is presented as B.
    pub swapped: bool,
}

impl Trial {
    /// `(A, B)` audio paths in presentation order.
    pub fn presented(&self) -> (&str, &str) {
        if self.swapped {
            (&self.pair.reference, &self.pair.test)
        } else {
            (&self.pair.test, &self.pair.reference)
        }
    }

    /// Listener scores are "+ prefers A"; stored scores are "+ prefers the
    /// system under test".
    pub fn orient(&self, raw: i64) -> i64 {
        if self.swapped {
            -raw
        } else {
            raw
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub seed: u64,
    pub created_at: u64,
    pub trials: Vec<Trial>,
}

impl Session {
    /// Seeded A/B presentation order; the same seed gives the same order
    /// and id.
    pub fn new(manifest: Vec<PairSpec>, seed: u64, created_at: u64) -> Result<Self> {
        if manifest.is_empty() {
            return Err(AbError::BadRequest("manifest has no pairs".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let session_id = format!("{:016x}", rng.gen::<u64>());
        let trials = manifest
            .into_iter()
            .enumerate()
            .map(|(i, pair)| Trial { trial_id: i as u32, pair, swapped: rng.gen_bool(0.5) })
            .collect();
        Ok(Session { session_id, seed, created_at, trials })
    }

    pub fn trial(&self, id: u32) -> Option<&Trial> {
        self.trials.get(id as usize).filter(|t| t.trial_id == id)
    }
}

/// One line of the vote log. `score` is already oriented.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub session_id: String,
    pub trial_id: u32,
    pub listener_id: String,
    pub score: i64,
    pub timestamp: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean_total: f64,
    pub mean_male: Option<f64>,
    pub mean_female: Option<f64>,
    pub n_total: usize,
    pub n_male: usize,
    pub n_female: usize,
}

/// Means of the oriented scores overall and by the trial's gender tag.
pub fn summarize(session: &Session, votes: &[VoteRecord]) -> Result<Summary> {
    let mut sums: BTreeMap<Gender, (i64, usize)> = BTreeMap::new();
    for v in votes {
        let t = session
            .trial(v.trial_id)
            .ok_or_else(|| AbError::Corrupt(format!("vote for unknown trial {}", v.trial_id)))?;
        let e = sums.entry(t.pair.gender).or_default();
        e.0 += v.score;
        e.1 += 1;
    }
    let (s, n) = sums.values().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if n == 0 {
        return Err(AbError::NoVotes);
    }
    let mean = |g| sums.get(&g).map(|&(s, n)| s as f64 / n as f64);
    let count = |g| sums.get(&g).map_or(0, |e| e.1);
    Ok(Summary {
        mean_total: s as f64 / n as f64,
        mean_male: mean(Gender::Male),
        mean_female: mean(Gender::Female),
        n_total: n,
        n_male: count(Gender::Male),
        n_female: count(Gender::Female),
    })
}

/// Parse an NDJSON vote log.
pub fn parse_log(text: &str) -> Result<Vec<VoteRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| AbError::Corrupt(format!("vote log line {}: {e}", i + 1))))
        .collect()
}
