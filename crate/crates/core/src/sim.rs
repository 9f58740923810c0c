//! Desk-scale experiments: a simulated user answers every prompt of a
//! session fed from a labeled stream.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{ChallengeResponse, CriticalReason, EngineConfig, PhaseChange, Prompt};
use crate::error::{Error, Result};
use crate::learner::Learner;
use crate::metrics::{CallbackKind, DecidedBy, PhaseTag};
use crate::oracle::{SimulatedUser, SimulatedUserConfig};
use crate::record::{LabeledRecord, Schema};
use crate::session::{ClientEvent, Session, SessionConfig};
use crate::stream::{apply_drift, blob_schema, gen_blobs, load_csv, BlobSpec, DriftSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Csv { path: PathBuf, schema: Schema },
    Generator(BlobSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub oracle: SimulatedUserConfig,
    pub data: DataSource,
    #[serde(default)]
    pub drift: Option<DriftSpec>,
    /// Leading rows used to pre-train the model; not part of the stream.
    #[serde(default = "default_seed_rows")]
    pub seed_rows: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_seed_rows() -> usize {
    20
}

impl ExperimentConfig {
    /// Generated two-class blobs with every other knob at its default.
    pub fn blobs(n: usize, separation: f64, seeds: Vec<u64>) -> Self {
        ExperimentConfig {
            engine: EngineConfig::default(),
            oracle: SimulatedUserConfig::default(),
            data: DataSource::Generator(BlobSpec {
                n,
                classes: 2,
                dims: 2,
                separation,
                seed: None,
            }),
            drift: None,
            seed_rows: default_seed_rows(),
            seeds,
            output: None,
        }
    }

    pub fn schema(&self) -> Schema {
        match &self.data {
            DataSource::Csv { schema, .. } => schema.clone(),
            DataSource::Generator(spec) => blob_schema(spec.classes, spec.dims),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        self.engine.validate()?;
        let schema = self.schema();
        schema.validate()?;
        self.oracle.validate(schema.n_labels())?;
        match &self.data {
            DataSource::Generator(spec) => spec.validate()?,
            DataSource::Csv { path, .. } => {
                if !path.exists() {
                    return Err(Error::config("data.csv.path", format!("{} does not exist", path.display())));
                }
            }
        }
        if let Some(d) = &self.drift {
            d.validate(&schema)?;
        }
        Ok(())
    }

    /// Seed rows and the interactive stream (re-indexed from t = 0) for one run.
    pub fn materialize(&self, seed: u64) -> Result<(Vec<LabeledRecord>, Vec<LabeledRecord>)> {
        let all = match &self.data {
            DataSource::Generator(spec) => gen_blobs(
                spec.n + self.seed_rows,
                spec.classes,
                spec.dims,
                spec.separation,
                spec.seed.unwrap_or(seed),
            ),
            DataSource::Csv { path, schema } => load_csv(path, schema)?,
        };
        if all.len() <= self.seed_rows {
            return Err(Error::config("seed_rows", "leaves no records to stream"));
        }
        let mut all = all;
        let mut stream = all.split_off(self.seed_rows);
        for (t, lr) in stream.iter_mut().enumerate() {
            lr.record.t = t as u64;
        }
        if let Some(d) = &self.drift {
            stream = apply_drift(stream, d);
        }
        Ok((all, stream))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoticeSummary {
    /// Index of the record whose resolution raised the notice.
    pub t: u64,
    pub reasons: Vec<CriticalReason>,
    pub reverted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub records: u64,
    pub final_accuracy: f64,
    /// Accuracy of the labels the simulated user produced on its own.
    pub oracle_accuracy: f64,
    pub oracle_labels: u64,
    pub hic_records: u64,
    pub mic_records: u64,
    pub human_queries_hic: u64,
    pub human_queries_mic: u64,
    pub challenges: u64,
    pub challenges_accepted: u64,
    pub challenge_acceptance_rate: f64,
    pub callbacks_low_belief: u64,
    pub callbacks_random_check: u64,
    pub auto_accepts: u64,
    /// Callbacks per MiC record.
    pub mic_query_rate: f64,
    pub low_belief_rate: f64,
    pub explanations_served: u64,
    pub phase_timeline: Vec<PhaseChange>,
    pub consent_requests: Vec<u64>,
    pub notices: Vec<NoticeSummary>,
    pub first_mic_t: Option<u64>,
    pub final_phase: PhaseTag,
    pub final_k: u64,
    pub final_p: u64,
    pub n_seen: u64,
    pub seed_rows: u64,
    pub state_hash: String,
}

impl SeedSummary {
    /// Phase in command when record `t` was offered.
    pub fn phase_at(&self, t: u64) -> PhaseTag {
        self.phase_timeline
            .iter()
            .take_while(|c| c.t <= t)
            .last()
            .map(|c| c.to)
            .unwrap_or(PhaseTag::HiC)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanSummary {
    pub final_accuracy: f64,
    pub oracle_accuracy: f64,
    pub challenge_acceptance_rate: f64,
    pub human_queries_hic: f64,
    pub human_queries_mic: f64,
    pub mic_query_rate: f64,
    pub auto_accepts: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: Vec<SeedSummary>,
    pub mean: MeanSummary,
}

pub struct RunOutput {
    pub session: Session,
    pub summary: SeedSummary,
    pub truths: Vec<String>,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// One full session for `seed`, ending with a checkpoint line.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    cfg.validate()?;
    let (seed_rows, stream) = cfg.materialize(seed)?;
    let schema = cfg.schema();
    let engine = EngineConfig {
        rng_seed: seed,
        ..cfg.engine.clone()
    };
    let user = SimulatedUser::new(cfg.oracle.clone(), &schema.labels, seed)?;
    let mut session = Session::create(
        format!("sim-seed-{seed}"),
        SessionConfig {
            engine,
            schema,
            seed: seed_rows.clone(),
        },
    )?;

    let mut own_labels = 0u64;
    let mut own_correct = 0u64;
    let mut timeline = Vec::new();
    let mut consent_requests = Vec::new();
    let mut notices: Vec<NoticeSummary> = Vec::new();
    let mut explanations = 0u64;

    for lr in &stream {
        let truth = lr.label.as_str();
        let t = lr.record.t;
        let mut event = ClientEvent::OfferRecord { record: lr.record.clone() };
        loop {
            let out = session.handle(event)?;
            explanations += u64::from(!out.explanations.is_empty());
            if let Some(change) = out.phase_change {
                timeline.push(change);
            }
            let next_t = session.engine().next_t();
            let asked_why = !out.explanations.is_empty();
            event = match session.prompt() {
                None => break,
                Some(Prompt::NeedUserLabel { .. }) | Some(Prompt::Callback { .. }) => {
                    if !asked_why
                        && matches!(session.prompt(), Some(Prompt::Callback { .. }))
                        && user.wants_explanation(t)
                    {
                        ClientEvent::RequestExplanation
                    } else {
                        let label = user.decide(t, truth)?;
                        own_labels += 1;
                        own_correct += u64::from(label == truth);
                        ClientEvent::UserLabel { label }
                    }
                }
                Some(Prompt::SkepticalChallenge { model_label, .. }) => {
                    let response = if !asked_why && user.wants_explanation(t) {
                        ChallengeResponse::RequestExplanation
                    } else if user.respond_to_challenge(t, model_label, truth) {
                        ChallengeResponse::Accept
                    } else {
                        ChallengeResponse::Refuse
                    };
                    ClientEvent::ChallengeResponse { response }
                }
                Some(Prompt::ConsentRequest { t: at, .. }) => {
                    consent_requests.push(*at);
                    ClientEvent::ConsentResponse { grant: user.respond_consent(*at) }
                }
                Some(Prompt::CriticalNotice { reasons, .. }) => {
                    let revert = user.respond_notice(next_t);
                    notices.push(NoticeSummary {
                        t: next_t - 1,
                        reasons: reasons.clone(),
                        reverted: revert,
                    });
                    ClientEvent::NoticeResponse { revert }
                }
            };
        }
    }
    let state_hash = session.checkpoint()?;

    let log = session.engine().log();
    let truths: Vec<String> = stream.iter().map(|lr| lr.label.clone()).collect();
    let correct = log.iter().zip(&truths).filter(|(e, y)| &e.final_label == *y).count() as u64;
    let count = |f: &dyn Fn(&crate::metrics::DecisionEvent) -> bool| log.iter().filter(|e| f(e)).count() as u64;
    let hic_records = count(&|e| e.phase == PhaseTag::HiC);
    let mic_records = count(&|e| e.phase == PhaseTag::MiC);
    let low = count(&|e| e.callback_kind == CallbackKind::LowBelief);
    let random = count(&|e| e.callback_kind == CallbackKind::RandomCheck);
    let challenges = count(&|e| e.challenged);
    let accepted = count(&|e| e.challenge_accepted == Some(true));
    let engine = session.engine();
    let summary = SeedSummary {
        seed,
        records: log.len() as u64,
        final_accuracy: ratio(correct, log.len() as u64),
        oracle_accuracy: ratio(own_correct, own_labels),
        oracle_labels: own_labels,
        hic_records,
        mic_records,
        human_queries_hic: hic_records,
        human_queries_mic: low + random,
        challenges,
        challenges_accepted: accepted,
        challenge_acceptance_rate: ratio(accepted, challenges),
        callbacks_low_belief: low,
        callbacks_random_check: random,
        auto_accepts: count(&|e| e.decided_by == DecidedBy::MachineAuto),
        mic_query_rate: ratio(low + random, mic_records),
        low_belief_rate: ratio(low, mic_records),
        explanations_served: explanations,
        first_mic_t: timeline.iter().find(|c| c.to == PhaseTag::MiC).map(|c| c.t),
        phase_timeline: timeline,
        consent_requests,
        notices,
        final_phase: engine.phase().tag,
        final_k: engine.phase().k,
        final_p: engine.phase().p,
        n_seen: engine.model().n_seen(),
        seed_rows: seed_rows.len() as u64,
        state_hash,
    };
    Ok(RunOutput { session, summary, truths })
}

pub fn summarize(runs: Vec<SeedSummary>) -> Summary {
    let n = runs.len().max(1) as f64;
    let mean = |f: &dyn Fn(&SeedSummary) -> f64| runs.iter().map(f).sum::<f64>() / n;
    Summary {
        mean: MeanSummary {
            final_accuracy: mean(&|r| r.final_accuracy),
            oracle_accuracy: mean(&|r| r.oracle_accuracy),
            challenge_acceptance_rate: mean(&|r| r.challenge_acceptance_rate),
            human_queries_hic: mean(&|r| r.human_queries_hic as f64),
            human_queries_mic: mean(&|r| r.human_queries_mic as f64),
            mic_query_rate: mean(&|r| r.mic_query_rate),
            auto_accepts: mean(&|r| r.auto_accepts as f64),
        },
        runs,
    }
}

/// Runs every seed, writing `seed-<n>.jsonl` per seed and `summary.json`.
pub fn simulate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Summary> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let run = run_seed(cfg, seed)?;
        run.session.write_journal(&out_dir.join(format!("seed-{seed}.jsonl")))?;
        runs.push(run.summary);
    }
    let summary = summarize(runs);
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    std::fs::write(out_dir.join("summary.json"), json)?;
    Ok(summary)
}
