//! Event-sourced sessions.
//!
//! A [`Session`] wraps an [`Engine`] and records every input and every
//! resulting transition as a JSONL journal line. Lines reach the sink before
//! the call returns. [`replay`] re-drives a fresh engine from the inputs of a
//! journal (consuming the recorded random draws) and checks that every
//! derived line comes out identical.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::engine::{ChallengeResponse, Engine, EngineConfig, Outcome, Prompt};
use crate::error::{Error, Result};
use crate::metrics::{Agent, CallbackKind, DecidedBy, PhaseTag};
use crate::record::{LabeledRecord, Record, Schema};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    #[serde(default)]
    pub engine: EngineConfig,
    pub schema: Schema,
    #[serde(default)]
    pub seed: Vec<LabeledRecord>,
}

/// Inputs a client (UI or simulated user) can send to a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientEvent {
    OfferRecord { record: Record },
    UserLabel { label: String },
    ChallengeResponse { response: ChallengeResponse },
    ConsentResponse { grant: bool },
    NoticeResponse { revert: bool },
    RequestExplanation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    SessionCreated,
    RecordOffered,
    PromptIssued,
    ResponseReceived,
    RngDraw,
    DecisionFinalized,
    ModelUpdated,
    PhaseChanged,
    ExplanationServed,
    NoticeIssued,
    Checkpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub seq: u64,
    /// Logical clock; equal to `seq`.
    pub ts: u64,
    pub kind: EntryKind,
    pub payload: Value,
}

/// Running counters derived from the decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsView {
    pub phase: PhaseTag,
    pub k: u64,
    pub p: u64,
    pub records_offered: u64,
    pub records_finalized: u64,
    pub pending_prompt: Option<String>,
    pub n_seen: u64,
    pub fea_model: BTreeMap<String, f64>,
    pub fea_human: BTreeMap<String, f64>,
    pub average_fea_model: f64,
    pub average_fea_human: f64,
    pub hic_decisions: u64,
    pub challenges: u64,
    pub challenges_accepted: u64,
    pub callbacks_low_belief: u64,
    pub callbacks_random_check: u64,
    pub auto_accepts: u64,
    pub human_queries: u64,
    pub human_query_rate: f64,
}

#[derive(Debug)]
pub struct Session {
    id: String,
    config: SessionConfig,
    engine: Engine,
    journal: Vec<JournalEntry>,
    sink: Option<File>,
    poisoned: bool,
}

impl Session {
    /// Starts the engine and writes the `session_created` line.
    pub fn create(id: impl Into<String>, config: SessionConfig) -> Result<Self> {
        let engine = Engine::start(config.engine.clone(), config.schema.clone(), &config.seed)?;
        let mut session = Session {
            id: id.into(),
            config,
            engine,
            journal: Vec::new(),
            sink: None,
            poisoned: false,
        };
        let payload = json!({ "session_id": session.id, "config": session.config });
        session.push(EntryKind::SessionCreated, payload);
        Ok(session)
    }

    /// Like [`Session::create`], persisting the journal to a new file.
    pub fn create_with_file(id: impl Into<String>, config: SessionConfig, path: &Path) -> Result<Self> {
        let mut session = Session::create(id, config)?;
        let file = OpenOptions::new().create_new(true).write(true).open(path)?;
        session.sink = Some(file);
        session.flush_from(0)?;
        Ok(session)
    }

    /// Rebuilds a session from its journal file and keeps appending to it.
    pub fn resume_file(path: &Path) -> Result<Self> {
        let entries = read_jsonl(File::open(path)?)?;
        let mut session = replay(&entries)?.session;
        session.sink = Some(OpenOptions::new().append(true).open(path)?);
        Ok(session)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn journal(&self) -> &[JournalEntry] {
        &self.journal
    }

    pub fn journal_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.journal {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_journal(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.journal_jsonl())?;
        Ok(())
    }

    pub fn prompt(&self) -> Option<&Prompt> {
        self.engine.prompt()
    }

    pub fn state_hash(&self) -> String {
        self.engine.state_hash()
    }

    fn push(&mut self, kind: EntryKind, payload: Value) {
        let seq = self.journal.len() as u64;
        self.journal.push(JournalEntry { seq, ts: seq, kind, payload });
    }

    fn flush_from(&mut self, start: usize) -> Result<()> {
        let Some(file) = self.sink.as_mut() else {
            return Ok(());
        };
        let mut buf = Vec::new();
        for e in &self.journal[start..] {
            serde_json::to_writer(&mut buf, e)?;
            buf.push(b'\n');
        }
        let written = file.write_all(&buf).and_then(|_| file.sync_data());
        if let Err(e) = written {
            self.poisoned = true;
            return Err(e.into());
        }
        Ok(())
    }

    /// Runs one client event through the engine. Rejected events change
    /// neither the engine nor the journal.
    pub fn handle(&mut self, event: ClientEvent) -> Result<Outcome> {
        if self.poisoned {
            return Err(Error::Io(std::io::Error::other("journal write failed earlier; session is read-only")));
        }
        let outcome = match &event {
            ClientEvent::OfferRecord { record } => self.engine.offer_record(record.clone()),
            ClientEvent::UserLabel { label } => self.engine.submit_user_label(label),
            ClientEvent::ChallengeResponse { response } => self.engine.resolve_challenge(*response),
            ClientEvent::ConsentResponse { grant } => self.engine.respond_consent(*grant),
            ClientEvent::NoticeResponse { revert } => self.engine.respond_notice(*revert),
            ClientEvent::RequestExplanation => self.engine.request_explanation(),
        }?;

        let start = self.journal.len();
        match &event {
            ClientEvent::OfferRecord { record } => {
                self.push(EntryKind::RecordOffered, json!({ "record": record }))
            }
            other => self.push(EntryKind::ResponseReceived, serde_json::to_value(other)?),
        }
        if let Some(value) = outcome.rng_draw {
            let index = self.engine.rng_draws() - 1;
            self.push(EntryKind::RngDraw, json!({ "index": index, "value": value }));
        }
        if let Some(decision) = &outcome.decision {
            self.push(EntryKind::DecisionFinalized, json!({ "event": decision }));
        }
        if let Some(n_seen) = outcome.model_updated {
            self.push(EntryKind::ModelUpdated, json!({ "n_seen": n_seen }));
        }
        if let Some(change) = &outcome.phase_change {
            self.push(EntryKind::PhaseChanged, serde_json::to_value(change)?);
        }
        if !outcome.explanations.is_empty() {
            self.push(EntryKind::ExplanationServed, json!({ "explanations": outcome.explanations }));
        }
        if let Some(prompt) = &outcome.prompt {
            let kind = match prompt {
                Prompt::CriticalNotice { .. } => EntryKind::NoticeIssued,
                _ => EntryKind::PromptIssued,
            };
            self.push(kind, json!({ "prompt": prompt }));
        }
        self.flush_from(start)?;
        Ok(outcome)
    }

    /// Appends a `checkpoint` line carrying the current state hash.
    pub fn checkpoint(&mut self) -> Result<String> {
        let hash = self.state_hash();
        let start = self.journal.len();
        let payload = json!({
            "state_hash": hash,
            "decisions": self.engine.log().len(),
            "rng_draws": self.engine.rng_draws(),
        });
        self.push(EntryKind::Checkpoint, payload);
        self.flush_from(start)?;
        Ok(hash)
    }

    pub fn metrics(&self) -> MetricsView {
        let engine = self.engine();
        let log = engine.log();
        let labels = &engine.schema().labels;
        let count = |f: &dyn Fn(&crate::metrics::DecisionEvent) -> bool| log.iter().filter(|e| f(e)).count() as u64;

        let hic_decisions = count(&|e| e.phase == PhaseTag::HiC);
        let callbacks_low_belief = count(&|e| e.callback_kind == CallbackKind::LowBelief);
        let callbacks_random_check = count(&|e| e.callback_kind == CallbackKind::RandomCheck);
        let auto_accepts = count(&|e| e.decided_by == DecidedBy::MachineAuto);
        let records_finalized = log.len() as u64;
        let in_flight = matches!(
            engine.prompt(),
            Some(Prompt::NeedUserLabel { .. } | Prompt::SkepticalChallenge { .. } | Prompt::Callback { .. })
        );
        let human_queries = hic_decisions + callbacks_low_belief + callbacks_random_check;
        let fea_model = engine.fea_per_label(Agent::Model);
        let fea_human = engine.fea_per_label(Agent::Human);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        MetricsView {
            phase: engine.phase().tag,
            k: engine.phase().k,
            p: engine.phase().p,
            records_offered: records_finalized + u64::from(in_flight),
            records_finalized,
            pending_prompt: engine.prompt().map(|p| p.kind().to_string()),
            n_seen: crate::learner::Learner::n_seen(engine.model()),
            average_fea_model: mean(&fea_model),
            average_fea_human: mean(&fea_human),
            fea_model: labels.iter().cloned().zip(fea_model).collect(),
            fea_human: labels.iter().cloned().zip(fea_human).collect(),
            hic_decisions,
            challenges: count(&|e| e.challenged),
            challenges_accepted: count(&|e| e.challenge_accepted == Some(true)),
            callbacks_low_belief,
            callbacks_random_check,
            auto_accepts,
            human_queries,
            human_query_rate: if records_finalized > 0 {
                human_queries as f64 / records_finalized as f64
            } else {
                0.0
            },
        }
    }
}

/// Parses a JSONL journal. A line that does not parse is reported with the
/// sequence number it should have carried.
pub fn read_jsonl<R: Read>(reader: R) -> Result<Vec<JournalEntry>> {
    let mut entries = Vec::new();
    for line in BufReader::new(reader).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let seq = entries.len() as u64;
        let entry: JournalEntry = serde_json::from_str(&line)
            .map_err(|e| Error::corrupt(seq, format!("unparseable line: {e}")))?;
        entries.push(entry);
    }
    Ok(entries)
}

pub fn read_jsonl_file(path: &Path) -> Result<Vec<JournalEntry>> {
    read_jsonl(File::open(path)?)
}

#[derive(Debug)]
pub struct Replay {
    pub session: Session,
    /// Hash carried by the journal's final line, when that line is a checkpoint.
    pub recorded_hash: Option<String>,
}

impl Replay {
    pub fn final_hash(&self) -> String {
        self.session.state_hash()
    }

    pub fn verified(&self) -> bool {
        self.recorded_hash.as_deref() == Some(self.final_hash().as_str())
    }
}

fn payload_field<T: serde::de::DeserializeOwned>(entry: &JournalEntry, field: &str) -> Result<T> {
    let value = entry
        .payload
        .get(field)
        .ok_or_else(|| Error::corrupt(entry.seq, format!("payload lacks `{field}`")))?;
    serde_json::from_value(value.clone()).map_err(|e| Error::corrupt(entry.seq, format!("bad `{field}`: {e}")))
}

/// Re-executes a journal on a fresh engine. Every regenerated line must match
/// the recorded one; the first divergence is reported by sequence number.
pub fn replay(entries: &[JournalEntry]) -> Result<Replay> {
    for (i, e) in entries.iter().enumerate() {
        if e.seq != i as u64 {
            return Err(Error::corrupt(i as u64, format!("expected seq {i}, found {}", e.seq)));
        }
    }
    let first = entries.first().ok_or_else(|| Error::corrupt(0, "empty journal"))?;
    if first.kind != EntryKind::SessionCreated {
        return Err(Error::corrupt(0, "journal must start with session_created"));
    }
    let id: String = payload_field(first, "session_id")?;
    let config: SessionConfig = payload_field(first, "config")?;
    let mut session = Session::create(id, config).map_err(|e| Error::corrupt(0, e.to_string()))?;

    let mut draws = Vec::new();
    for e in entries.iter().filter(|e| e.kind == EntryKind::RngDraw) {
        draws.push(payload_field::<f64>(e, "value")?);
    }
    session.engine.script_draws(draws);

    let mut cursor = 0;
    loop {
        let produced = session.journal.len();
        for i in cursor..produced {
            let Some(recorded) = entries.get(i) else {
                return Err(Error::corrupt(i as u64, "journal ends before this line"));
            };
            if recorded != &session.journal[i] {
                return Err(Error::corrupt(
                    i as u64,
                    format!("recorded {:?} line differs from replayed {:?}", recorded.kind, session.journal[i].kind),
                ));
            }
        }
        cursor = produced;
        let Some(next) = entries.get(cursor) else {
            break;
        };
        let event = match next.kind {
            EntryKind::RecordOffered => ClientEvent::OfferRecord {
                record: payload_field(next, "record")?,
            },
            EntryKind::ResponseReceived => serde_json::from_value(next.payload.clone())
                .map_err(|e| Error::corrupt(next.seq, format!("bad response: {e}")))?,
            EntryKind::Checkpoint => {
                session.checkpoint()?;
                continue;
            }
            other => return Err(Error::corrupt(next.seq, format!("unexpected {other:?} line"))),
        };
        session
            .handle(event)
            .map_err(|e| Error::corrupt(next.seq, format!("rejected on replay: {e}")))?;
    }

    let recorded_hash = entries
        .last()
        .filter(|e| e.kind == EntryKind::Checkpoint)
        .and_then(|e| e.payload.get("state_hash"))
        .and_then(Value::as_str)
        .map(str::to_string);
    Ok(Replay { session, recorded_hash })
}
