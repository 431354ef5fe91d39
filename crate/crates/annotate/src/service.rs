//! Tagging sessions, score acceptance and export over the event log.

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use vcr_core::agreement::{tagging_agreement, AgreementTables, Level, TauVariant};
use vcr_core::corpus::{on_scale, write_corpus, Corpus, CorpusError, RawScore};
use vcr_core::seed::rng_for;

use crate::log::{Entry, EventLog, LogError, Record, ScoreEvent};

pub const PHASES: [u32; 2] = [1, 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub seed: u64,
    /// Taggers allowed from the start; more can be registered at runtime.
    pub taggers: Vec<String>,
    /// Phases open from the start. Others open only through the operator call.
    pub open_phases: Vec<u32>,
    /// `{image_id}` and `{sample_id}` are substituted.
    pub image_locator: String,
    pub snapshot_every: usize,
    pub level: Level,
    pub tau: TauVariant,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            data_dir: PathBuf::from("annotation-data"),
            seed: 0,
            taggers: Vec::new(),
            open_phases: vec![1],
            image_locator: "images/{image_id}.jpg".into(),
            snapshot_every: 1000,
            level: Level::Interval,
            tau: TauVariant::B,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("tagger `{0}` is not registered")]
    UnknownTagger(String),
    #[error("phase {0} does not exist (phases are 1 and 2)")]
    InvalidPhase(u32),
    #[error("phase {0} has not been opened")]
    PhaseClosed(u32),
    #[error("score {0} is not on the 5-point scale")]
    InvalidScore(f64),
    #[error("unknown sample `{0}`")]
    UnknownSample(String),
    #[error("sample `{sample_id}` already scored by `{tagger_id}` in phase {phase} (event {original_seq})")]
    Duplicate {
        sample_id: String,
        tagger_id: String,
        phase: u32,
        original_seq: u64,
    },
    #[error("tagger id must be non-empty")]
    EmptyTagger,
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("replayed log does not match the corpus: {0}")]
    Replay(String),
}

impl ServiceError {
    /// HTTP status the API answers with.
    pub fn status(&self) -> u16 {
        match self {
            ServiceError::InvalidScore(_)
            | ServiceError::InvalidPhase(_)
            | ServiceError::EmptyTagger => 400,
            ServiceError::UnknownTagger(_) | ServiceError::PhaseClosed(_) => 403,
            ServiceError::UnknownSample(_) => 404,
            ServiceError::Duplicate { .. } => 409,
            ServiceError::Log(_) | ServiceError::Corpus(_) | ServiceError::Replay(_) => 500,
        }
    }

    pub fn reason(&self) -> &'static str {
        match self {
            ServiceError::UnknownTagger(_) => "unknown_tagger",
            ServiceError::InvalidPhase(_) => "invalid_phase",
            ServiceError::PhaseClosed(_) => "phase_closed",
            ServiceError::InvalidScore(_) => "invalid_score",
            ServiceError::UnknownSample(_) => "unknown_sample",
            ServiceError::Duplicate { .. } => "duplicate",
            ServiceError::EmptyTagger => "empty_tagger",
            ServiceError::Log(_) | ServiceError::Corpus(_) | ServiceError::Replay(_) => "internal",
        }
    }
}

pub type Result<T> = std::result::Result<T, ServiceError>;

/// Body of a score submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSubmission {
    pub sample_id: String,
    pub tagger_id: String,
    pub phase: u32,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accepted {
    pub seq: u64,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextItem {
    Item {
        sample_id: String,
        image_id: String,
        image_locator: String,
        candidate: String,
        /// 0-based position in this session's order.
        position: usize,
        total: usize,
    },
    Done {
        total: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionProgress {
    pub tagger_id: String,
    pub phase: u32,
    pub scored: usize,
    pub total: usize,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub total_samples: usize,
    pub accepted_events: usize,
    pub open_phases: Vec<u32>,
    pub taggers: Vec<String>,
    pub sessions: Vec<SessionProgress>,
}

/// Presentation order of the corpus for one tagger and phase.
pub fn session_order(n_samples: usize, seed: u64, tagger_id: &str, phase: u32) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_samples).collect();
    let mut rng = rng_for(
        seed,
        &[b"tagging", tagger_id.as_bytes(), &phase.to_le_bytes()],
    );
    order.shuffle(&mut rng);
    order
}

struct Session {
    order: Vec<usize>,
    cursor: usize,
}

type SessionKey = (String, u32);

struct State {
    log: EventLog,
    entries: Vec<Entry>,
    taggers: BTreeSet<String>,
    open_phases: BTreeSet<u32>,
    /// sample index -> seq of the accepted event, per (tagger, phase)
    scored: HashMap<SessionKey, HashMap<usize, u64>>,
    sessions: HashMap<SessionKey, Session>,
    n_scores: usize,
}

/// The annotation service. All mutation goes through one lock, so
/// concurrent callers see a single ordered event stream.
pub struct AnnotationService {
    corpus: Corpus,
    index: HashMap<String, usize>,
    config: ServiceConfig,
    state: Mutex<State>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

impl AnnotationService {
    /// Opens the log under `config.data_dir`, replays it and applies the
    /// configured taggers and open phases.
    pub fn open(corpus: Corpus, config: ServiceConfig) -> Result<Self> {
        let (log, replay) = EventLog::open(&config.data_dir, config.snapshot_every)?;
        let index = corpus
            .iter()
            .enumerate()
            .map(|(i, s)| (s.sample_id.clone(), i))
            .collect();
        let service = AnnotationService {
            corpus,
            index,
            state: Mutex::new(State {
                log,
                entries: Vec::new(),
                taggers: config.taggers.iter().cloned().collect(),
                open_phases: config.open_phases.iter().copied().collect(),
                scored: HashMap::new(),
                sessions: HashMap::new(),
                n_scores: 0,
            }),
            config,
        };
        for p in &service.config.open_phases {
            if !PHASES.contains(p) {
                return Err(ServiceError::InvalidPhase(*p));
            }
        }
        {
            let mut st = service.state.lock().expect("state lock");
            for e in replay.entries {
                service.apply(&mut st, e)?;
            }
        }
        Ok(service)
    }

    fn apply(&self, st: &mut State, entry: Entry) -> Result<()> {
        match &entry.record {
            Record::Score(ev) => {
                let &idx = self.index.get(&ev.sample_id).ok_or_else(|| {
                    ServiceError::Replay(format!("unknown sample `{}`", ev.sample_id))
                })?;
                let slot = st
                    .scored
                    .entry((ev.tagger_id.clone(), ev.phase))
                    .or_default();
                if slot.insert(idx, entry.seq).is_some() {
                    return Err(ServiceError::Replay(format!(
                        "duplicate event {}",
                        entry.seq
                    )));
                }
                st.n_scores += 1;
            }
            Record::PhaseOpened { phase, .. } => {
                st.open_phases.insert(*phase);
            }
            Record::TaggerRegistered { tagger_id, .. } => {
                st.taggers.insert(tagger_id.clone());
            }
        }
        st.entries.push(entry);
        Ok(())
    }

    fn append(&self, st: &mut State, record: Record) -> Result<Entry> {
        let entry = st.log.append(record)?;
        self.apply(st, entry.clone())?;
        if st.log.snapshot_due() {
            let State { log, entries, .. } = st;
            log.compact(entries)?;
        }
        Ok(entry)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    fn check_session(st: &State, tagger_id: &str, phase: u32) -> Result<()> {
        if !st.taggers.contains(tagger_id) {
            return Err(ServiceError::UnknownTagger(tagger_id.into()));
        }
        if !PHASES.contains(&phase) {
            return Err(ServiceError::InvalidPhase(phase));
        }
        if !st.open_phases.contains(&phase) {
            return Err(ServiceError::PhaseClosed(phase));
        }
        Ok(())
    }

    /// Next unscored sample of the session, creating it on first use.
    /// Repeated calls return the same item until a score is posted.
    pub fn next_item(&self, tagger_id: &str, phase: u32) -> Result<NextItem> {
        let mut st = self.state.lock().expect("state lock");
        Self::check_session(&st, tagger_id, phase)?;
        let key = (tagger_id.to_string(), phase);
        let n = self.corpus.len();
        let seed = self.config.seed;
        let State {
            sessions, scored, ..
        } = &mut *st;
        let session = sessions.entry(key.clone()).or_insert_with(|| Session {
            order: session_order(n, seed, tagger_id, phase),
            cursor: 0,
        });
        let done = scored.get(&key);
        while session.cursor < n
            && done.is_some_and(|d| d.contains_key(&session.order[session.cursor]))
        {
            session.cursor += 1;
        }
        if session.cursor == n {
            return Ok(NextItem::Done { total: n });
        }
        let s = &self.corpus.samples()[session.order[session.cursor]];
        Ok(NextItem::Item {
            sample_id: s.sample_id.clone(),
            image_id: s.image_id.clone(),
            image_locator: self
                .config
                .image_locator
                .replace("{image_id}", &s.image_id)
                .replace("{sample_id}", &s.sample_id),
            candidate: s.candidate.clone(),
            position: session.cursor,
            total: n,
        })
    }

    /// Validates and durably records a score. Returns only after the event
    /// is synced to disk.
    pub fn post_score(&self, sub: &ScoreSubmission) -> Result<Accepted> {
        let mut st = self.state.lock().expect("state lock");
        Self::check_session(&st, &sub.tagger_id, sub.phase)?;
        if !on_scale(sub.score) {
            return Err(ServiceError::InvalidScore(sub.score));
        }
        let &idx = self
            .index
            .get(&sub.sample_id)
            .ok_or_else(|| ServiceError::UnknownSample(sub.sample_id.clone()))?;
        if let Some(&seq) = st
            .scored
            .get(&(sub.tagger_id.clone(), sub.phase))
            .and_then(|d| d.get(&idx))
        {
            return Err(ServiceError::Duplicate {
                sample_id: sub.sample_id.clone(),
                tagger_id: sub.tagger_id.clone(),
                phase: sub.phase,
                original_seq: seq,
            });
        }
        let timestamp_ms = now_ms();
        let entry = self.append(
            &mut st,
            Record::Score(ScoreEvent {
                sample_id: sub.sample_id.clone(),
                tagger_id: sub.tagger_id.clone(),
                phase: sub.phase,
                score: if sub.score == 0.0 { 0.0 } else { sub.score },
                timestamp_ms,
            }),
        )?;
        Ok(Accepted {
            seq: entry.seq,
            timestamp_ms,
        })
    }

    /// Operator action; opening an already open phase is a no-op.
    pub fn open_phase(&self, phase: u32) -> Result<Vec<u32>> {
        if !PHASES.contains(&phase) {
            return Err(ServiceError::InvalidPhase(phase));
        }
        let mut st = self.state.lock().expect("state lock");
        if !st.open_phases.contains(&phase) {
            self.append(
                &mut st,
                Record::PhaseOpened {
                    phase,
                    timestamp_ms: now_ms(),
                },
            )?;
        }
        Ok(st.open_phases.iter().copied().collect())
    }

    pub fn register_tagger(&self, tagger_id: &str) -> Result<Vec<String>> {
        if tagger_id.trim().is_empty() {
            return Err(ServiceError::EmptyTagger);
        }
        let mut st = self.state.lock().expect("state lock");
        if !st.taggers.contains(tagger_id) {
            self.append(
                &mut st,
                Record::TaggerRegistered {
                    tagger_id: tagger_id.into(),
                    timestamp_ms: now_ms(),
                },
            )?;
        }
        Ok(st.taggers.iter().cloned().collect())
    }

    pub fn progress(&self) -> Progress {
        let st = self.state.lock().expect("state lock");
        let n = self.corpus.len();
        let mut sessions = Vec::new();
        for t in &st.taggers {
            for &p in &st.open_phases {
                let scored = st.scored.get(&(t.clone(), p)).map_or(0, HashMap::len);
                sessions.push(SessionProgress {
                    tagger_id: t.clone(),
                    phase: p,
                    scored,
                    total: n,
                    done: scored == n,
                });
            }
        }
        Progress {
            total_samples: n,
            accepted_events: st.n_scores,
            open_phases: st.open_phases.iter().copied().collect(),
            taggers: st.taggers.iter().cloned().collect(),
            sessions,
        }
    }

    /// Accepted score events in log order.
    pub fn events(&self) -> Vec<ScoreEvent> {
        let st = self.state.lock().expect("state lock");
        st.entries
            .iter()
            .filter_map(|e| match &e.record {
                Record::Score(ev) => Some(ev.clone()),
                _ => None,
            })
            .collect()
    }

    /// The corpus with every accepted event appended to its sample's raw
    /// scores, in log order.
    pub fn export_corpus(&self) -> Corpus {
        let events = self.events();
        let mut samples = self.corpus.samples().to_vec();
        for ev in events {
            samples[self.index[&ev.sample_id]]
                .raw_scores
                .push(RawScore {
                    tagger: ev.tagger_id,
                    phase: ev.phase,
                    score: ev.score,
                });
        }
        Corpus::new(samples).expect("ids are unique in the source corpus")
    }

    /// Export in the corpus interchange format.
    pub fn export_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_corpus(&self.export_corpus(), &mut out).expect("writing to memory cannot fail");
        out
    }

    /// Agreement tables over the scores accepted so far.
    pub fn live_agreement(&self) -> AgreementTables {
        tagging_agreement(&self.export_corpus(), self.config.level, self.config.tau)
    }
}
