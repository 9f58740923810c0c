//! The decision loop as a prompt/response state machine.
//!
//! A session alternates between two phases. In Human-in-Command (HiC) the
//! user labels every record and the model challenges clashing labels when
//! its skepticality exceeds `alpha`. In Machine-in-Command (MiC) the model
//! labels records itself, calling the user back when its belief is below
//! `beta` or when a random check fires. Promotion to MiC needs `k > k_max`
//! HiC records, an average model FEA above `tau_promote` and the user's
//! consent; MiC raises a critical notice when more than `p_max` low-belief
//! callbacks piled up or the average FEA fell below `tau_demote`.
//!
//! The engine never blocks on a human: each operation either finalizes a
//! record or leaves exactly one outstanding [`Prompt`] that the next call
//! must answer.

use std::collections::VecDeque;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::explain::{self, Explanation};
use crate::learner::{LabelDistribution, Learner, Model, ModelKind};
use crate::metrics::{Agent, CallbackKind, DecidedBy, DecisionEvent, Evidence, FadingConfig, PhaseTag};
use crate::record::{LabeledRecord, Record, Schema};

/// Which probability the anti-overreliance random check compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckMode {
    /// Accept the machine label iff `r < belief`.
    #[default]
    Belief,
    /// Accept the machine label iff `r < beta`.
    Beta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub alpha: f64,
    pub beta: f64,
    pub k_max: u64,
    pub p_max: u64,
    pub tau_promote: f64,
    pub tau_demote: f64,
    pub fading: FadingConfig,
    pub check_mode: CheckMode,
    pub consent_cooldown: u64,
    pub rng_seed: u64,
    pub model: ModelKind,
    /// Number of records in exemplar-style explanations.
    pub explanation_k: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            alpha: 0.1,
            beta: 0.5,
            k_max: 100,
            p_max: 10,
            tau_promote: 0.8,
            tau_demote: 0.6,
            fading: FadingConfig::default(),
            check_mode: CheckMode::Belief,
            consent_cooldown: 25,
            rng_seed: 0,
            model: ModelKind::NaiveBayes,
            explanation_k: 3,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !self.alpha.is_finite() {
            return Err(Error::config("engine.alpha", "must be finite"));
        }
        if !unit(self.beta) {
            return Err(Error::config("engine.beta", "must lie in [0, 1]"));
        }
        if self.k_max < 1 {
            return Err(Error::config("engine.k_max", "must be at least 1"));
        }
        if self.p_max < 1 {
            return Err(Error::config("engine.p_max", "must be at least 1"));
        }
        if !unit(self.tau_promote) {
            return Err(Error::config("engine.tau_promote", "must lie in [0, 1]"));
        }
        if !unit(self.tau_demote) {
            return Err(Error::config("engine.tau_demote", "must lie in [0, 1]"));
        }
        if self.tau_demote > self.tau_promote {
            return Err(Error::config("engine.tau_demote", "must not exceed tau_promote"));
        }
        if self.explanation_k < 1 {
            return Err(Error::config("engine.explanation_k", "must be at least 1"));
        }
        self.fading.validate("engine.fading")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase {
    pub tag: PhaseTag,
    /// Records finalized in the current HiC stint.
    pub k: u64,
    /// Low-belief callbacks in the current MiC counting window.
    pub p: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalReason {
    Callbacks,
    FeaDrop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prompt {
    NeedUserLabel {
        record: Record,
    },
    SkepticalChallenge {
        record: Record,
        user_label: String,
        model_label: String,
        skepticality: f64,
        explanation_available: bool,
    },
    Callback {
        record: Record,
        reason: CallbackKind,
        model_label: String,
        belief: f64,
        explanation_available: bool,
    },
    ConsentRequest {
        t: u64,
        average_fea: f64,
    },
    CriticalNotice {
        reasons: Vec<CriticalReason>,
        p: u64,
        average_fea: f64,
    },
}

impl Prompt {
    pub fn kind(&self) -> &'static str {
        match self {
            Prompt::NeedUserLabel { .. } => "need_user_label",
            Prompt::SkepticalChallenge { .. } => "skeptical_challenge",
            Prompt::Callback { .. } => "callback",
            Prompt::ConsentRequest { .. } => "consent_request",
            Prompt::CriticalNotice { .. } => "critical_notice",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChallengeResponse {
    Accept,
    Refuse,
    RequestExplanation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseChange {
    pub from: PhaseTag,
    pub to: PhaseTag,
    pub t: u64,
    pub k: u64,
    pub p: u64,
}

/// Everything one engine call produced.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub decision: Option<DecisionEvent>,
    /// Newly issued prompt, if the call left one outstanding.
    pub prompt: Option<Prompt>,
    pub explanations: Vec<Explanation>,
    pub rng_draw: Option<f64>,
    /// Model size after an update, when the call trained the model.
    pub model_updated: Option<u64>,
    pub phase_change: Option<PhaseChange>,
}

/// A record whose decision is still open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct InFlight {
    record: Record,
    probs: Option<LabelDistribution>,
    model_label: Option<String>,
    user_label: Option<String>,
    skepticality: Option<f64>,
    belief: Option<f64>,
    callback: CallbackKind,
    rng_draw: Option<f64>,
    explanation_shown: bool,
}

impl InFlight {
    fn new(record: Record) -> Self {
        InFlight {
            record,
            probs: None,
            model_label: None,
            user_label: None,
            skepticality: None,
            belief: None,
            callback: CallbackKind::None,
            rng_draw: None,
            explanation_shown: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Pending {
    prompt: Prompt,
    work: Option<InFlight>,
}

/// ChaCha8 stream positioned by the number of draws taken, so the state is
/// fully described by `(seed, draws)`. Scripted values (replay) override the
/// live draw while still advancing the generator.
#[derive(Debug, Clone)]
pub struct SessionRng {
    seed: u64,
    draws: u64,
    generator: ChaCha8Rng,
    scripted: VecDeque<f64>,
}

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: u64,
    draws: u64,
}

impl SessionRng {
    pub fn new(seed: u64) -> Self {
        SessionRng {
            seed,
            draws: 0,
            generator: ChaCha8Rng::seed_from_u64(seed),
            scripted: VecDeque::new(),
        }
    }

    fn at(seed: u64, draws: u64) -> Self {
        let mut rng = SessionRng::new(seed);
        // each draw consumes one u64 = two 32-bit words
        rng.generator.set_word_pos(u128::from(draws) * 2);
        rng.draws = draws;
        rng
    }

    /// Uniform draw in `[0, 1)`.
    pub fn draw(&mut self) -> f64 {
        let live = (self.generator.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        self.draws += 1;
        self.scripted.pop_front().unwrap_or(live)
    }

    pub fn script(&mut self, values: impl IntoIterator<Item = f64>) {
        self.scripted.extend(values);
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }
}

impl PartialEq for SessionRng {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed && self.draws == other.draws
    }
}

impl Serialize for SessionRng {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RngState { seed: self.seed, draws: self.draws }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SessionRng {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let state = RngState::deserialize(d)?;
        Ok(SessionRng::at(state.seed, state.draws))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Engine {
    config: EngineConfig,
    schema: Schema,
    phase: Phase,
    model: Model,
    log: Vec<DecisionEvent>,
    pending: Option<Pending>,
    rng: SessionRng,
    consent_snooze_until: u64,
    next_t: u64,
}

impl Engine {
    /// Starts in HiC with the model pre-trained on `seed`. Seed rows are not
    /// entered into the decision log.
    pub fn start(config: EngineConfig, schema: Schema, seed: &[LabeledRecord]) -> Result<Self> {
        config.validate()?;
        schema.validate()?;
        let mut model = Model::new(config.model, &schema);
        let records: Vec<Record> = seed.iter().map(|s| s.record.clone()).collect();
        let labels = seed
            .iter()
            .map(|s| schema.require_label(&s.label))
            .collect::<Result<Vec<_>>>()?;
        model.fit_seed(&records, &labels)?;
        Ok(Engine {
            rng: SessionRng::new(config.rng_seed),
            config,
            schema,
            phase: Phase { tag: PhaseTag::HiC, k: 0, p: 0 },
            model,
            log: Vec::new(),
            pending: None,
            consent_snooze_until: 0,
            next_t: 0,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn log(&self) -> &[DecisionEvent] {
        &self.log
    }

    pub fn prompt(&self) -> Option<&Prompt> {
        self.pending.as_ref().map(|p| &p.prompt)
    }

    /// Logical index the next offered record receives.
    pub fn next_t(&self) -> u64 {
        self.next_t
    }

    pub fn consent_snooze_until(&self) -> u64 {
        self.consent_snooze_until
    }

    pub fn rng_draws(&self) -> u64 {
        self.rng.draws()
    }

    /// Queues values to be returned by the next random draws (replay).
    pub fn script_draws(&mut self, values: impl IntoIterator<Item = f64>) {
        self.rng.script(values);
    }

    pub fn snapshot_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("engine state serializes")
    }

    /// SHA-256 over the canonical JSON snapshot, hex encoded.
    pub fn state_hash(&self) -> String {
        hex::encode(Sha256::digest(self.snapshot_json()))
    }

    pub fn evidence(&self) -> Evidence<'_> {
        Evidence::new(&self.log, &self.schema.labels, &self.config.fading)
    }

    /// Context record for monitor-style queries: the latest logged record.
    fn monitor_anchor(&self) -> Option<&Record> {
        self.log.last().map(|e| &e.record)
    }

    /// FEA of `agent` per label at the current time.
    pub fn fea_per_label(&self, agent: Agent) -> Vec<f64> {
        match self.monitor_anchor() {
            None => vec![self.config.fading.prior; self.schema.n_labels()],
            Some(x) => self
                .evidence()
                .fea_per_label(agent, self.next_t, Some(x))
                .expect("monitor query is well formed"),
        }
    }

    pub fn average_fea(&self, agent: Agent) -> f64 {
        let per_label = self.fea_per_label(agent);
        per_label.iter().sum::<f64>() / per_label.len() as f64
    }

    /// Whether the HiC promotion conditions currently hold.
    pub fn promotion_due(&self) -> bool {
        self.phase.tag == PhaseTag::HiC
            && self.phase.k > self.config.k_max
            && self.next_t >= self.consent_snooze_until
            && self.average_fea(Agent::Model) > self.config.tau_promote
    }

    /// Critical conditions that currently hold in MiC.
    pub fn critical_reasons(&self) -> Vec<CriticalReason> {
        let mut reasons = Vec::new();
        if self.phase.tag != PhaseTag::MiC {
            return reasons;
        }
        if self.phase.p > self.config.p_max {
            reasons.push(CriticalReason::Callbacks);
        }
        if self.average_fea(Agent::Model) < self.config.tau_demote {
            reasons.push(CriticalReason::FeaDrop);
        }
        reasons
    }

    fn expect_idle(&self, got: &str) -> Result<()> {
        match &self.pending {
            None => Ok(()),
            Some(p) => Err(Error::protocol(format!("response to {}", p.prompt.kind()), got)),
        }
    }

    fn expect_prompt(&self, kinds: &[&str], got: &str) -> Result<&Pending> {
        match &self.pending {
            Some(p) if kinds.contains(&p.prompt.kind()) => Ok(p),
            Some(p) => Err(Error::protocol(format!("response to {}", p.prompt.kind()), got)),
            None => Err(Error::protocol("offer_record", got)),
        }
    }

    fn issue(&mut self, prompt: Prompt, work: Option<InFlight>, out: &mut Outcome) {
        out.prompt = Some(prompt.clone());
        self.pending = Some(Pending { prompt, work });
    }

    fn predict(&self, x: &Record) -> Result<(LabelDistribution, String)> {
        let probs = self.model.predict_proba(x)?;
        let label = self.schema.labels[probs.argmax()].clone();
        Ok((probs, label))
    }

    /// Receives the next record. In HiC the user is asked for a label; in
    /// MiC the machine step runs and may finalize the record on its own.
    pub fn offer_record(&mut self, mut x: Record) -> Result<Outcome> {
        self.expect_idle("offer_record")?;
        self.schema.check_record(&x)?;
        x.t = self.next_t;
        let mut out = Outcome::default();
        match self.phase.tag {
            PhaseTag::HiC => {
                let prompt = Prompt::NeedUserLabel { record: x.clone() };
                self.issue(prompt, Some(InFlight::new(x)), &mut out);
            }
            PhaseTag::MiC => self.machine_step(x, &mut out)?,
        }
        Ok(out)
    }

    fn machine_step(&mut self, x: Record, out: &mut Outcome) -> Result<()> {
        let (probs, model_label) = self.predict(&x)?;
        let belief = self.evidence().belief(&x, &model_label, &probs, self.next_t)?;
        let mut work = InFlight::new(x);
        work.belief = Some(belief);
        work.probs = Some(probs);
        work.model_label = Some(model_label.clone());

        if belief < self.config.beta {
            self.phase.p += 1;
            work.callback = CallbackKind::LowBelief;
        } else {
            let r = self.rng.draw();
            out.rng_draw = Some(r);
            work.rng_draw = Some(r);
            let accept = match self.config.check_mode {
                CheckMode::Belief => r < belief,
                CheckMode::Beta => r < self.config.beta,
            };
            if accept {
                self.finalize(work, model_label, DecidedBy::MachineAuto, out)?;
                return Ok(());
            }
            work.callback = CallbackKind::RandomCheck;
        }
        let prompt = Prompt::Callback {
            record: work.record.clone(),
            reason: work.callback,
            model_label,
            belief,
            explanation_available: true,
        };
        self.issue(prompt, Some(work), out);
        Ok(())
    }

    /// Answers a `need_user_label` prompt (HiC) or a `callback` prompt (MiC).
    pub fn submit_user_label(&mut self, label: &str) -> Result<Outcome> {
        let kind = self
            .expect_prompt(&["need_user_label", "callback"], "user_label")?
            .prompt
            .kind();
        self.schema.require_label(label)?;
        let mut out = Outcome::default();
        if kind == "callback" {
            let mut work = self.take_work();
            work.user_label = Some(label.to_string());
            self.finalize(work, label.to_string(), DecidedBy::Human, &mut out)?;
            return Ok(out);
        }

        let record = self.pending.as_ref().and_then(|p| p.work.as_ref()).expect("in flight").record.clone();
        let (probs, model_label) = self.predict(&record)?;
        let skepticality = if label != model_label {
            Some(self.evidence().skepticality(&record, &model_label, label, &probs, self.next_t)?)
        } else {
            None
        };
        let mut work = self.take_work();
        work.probs = Some(probs);
        work.model_label = Some(model_label.clone());
        work.user_label = Some(label.to_string());
        work.skepticality = skepticality;
        match skepticality {
            Some(skp) if skp > self.config.alpha => {
                let prompt = Prompt::SkepticalChallenge {
                    record: work.record.clone(),
                    user_label: label.to_string(),
                    model_label,
                    skepticality: skp,
                    explanation_available: true,
                };
                self.issue(prompt, Some(work), &mut out);
            }
            _ => self.finalize(work, label.to_string(), DecidedBy::Human, &mut out)?,
        }
        Ok(out)
    }

    /// Answers a skeptical challenge. Explanations leave the challenge open.
    pub fn resolve_challenge(&mut self, response: ChallengeResponse) -> Result<Outcome> {
        self.expect_prompt(&["skeptical_challenge"], "challenge_response")?;
        if response == ChallengeResponse::RequestExplanation {
            return self.request_explanation();
        }
        let work = self.take_work();
        let mut out = Outcome::default();
        let (label, by) = match response {
            ChallengeResponse::Accept => (work.model_label.clone(), DecidedBy::HumanAcceptedSuggestion),
            _ => (work.user_label.clone(), DecidedBy::Human),
        };
        self.finalize(work, label.expect("set before challenge"), by, &mut out)?;
        Ok(out)
    }

    /// Explanation payload for the outstanding challenge or callback.
    pub fn request_explanation(&mut self) -> Result<Outcome> {
        let pending = self.expect_prompt(&["skeptical_challenge", "callback"], "request_explanation")?;
        let work = pending.work.as_ref().expect("in flight");
        let explanations = self.explain(work)?;
        if let Some(w) = self.pending.as_mut().and_then(|p| p.work.as_mut()) {
            w.explanation_shown = true;
        }
        Ok(Outcome {
            explanations,
            ..Outcome::default()
        })
    }

    /// Builds the explanations for an open decision without touching state.
    fn explain(&self, work: &InFlight) -> Result<Vec<Explanation>> {
        let k = self.config.explanation_k;
        let x = &work.record;
        if work.callback == CallbackKind::LowBelief {
            let belief = work.belief.unwrap_or(0.0);
            return Ok(vec![explain::unreliability(&self.log, x, k, self.config.beta, belief)?]);
        }
        let target = work.model_label.as_deref().expect("model label set");
        let mut out = vec![
            explain::exemplars(&self.log, x, target, k)?,
            explain::counter_exemplars(&self.log, x, target, k)?,
        ];
        if self.model.as_naive_bayes().is_some() {
            let idx = self.schema.require_label(target)?;
            out.push(explain::feature_contributions(&self.model, x, idx)?);
        }
        Ok(out)
    }

    /// Explanation for the outstanding prompt, without recording that it was shown.
    pub fn preview_explanation(&self) -> Result<Vec<Explanation>> {
        let pending = self.expect_prompt(&["skeptical_challenge", "callback"], "explanation")?;
        self.explain(pending.work.as_ref().expect("in flight"))
    }

    pub fn respond_consent(&mut self, grant: bool) -> Result<Outcome> {
        self.expect_prompt(&["consent_request"], "consent_response")?;
        self.pending = None;
        let mut out = Outcome::default();
        if grant {
            let from = self.phase.tag;
            self.phase.tag = PhaseTag::MiC;
            self.phase.p = 0;
            out.phase_change = Some(self.phase_change(from));
        } else {
            self.consent_snooze_until = self.next_t + self.config.consent_cooldown;
        }
        Ok(out)
    }

    /// `revert` hands command back to the user (k = 0); otherwise MiC
    /// continues with a fresh callback window (p = 0).
    pub fn respond_notice(&mut self, revert: bool) -> Result<Outcome> {
        self.expect_prompt(&["critical_notice"], "notice_response")?;
        self.pending = None;
        let mut out = Outcome::default();
        if revert {
            let from = self.phase.tag;
            self.phase.tag = PhaseTag::HiC;
            self.phase.k = 0;
            out.phase_change = Some(self.phase_change(from));
        } else {
            self.phase.p = 0;
        }
        Ok(out)
    }

    fn phase_change(&self, from: PhaseTag) -> PhaseChange {
        PhaseChange {
            from,
            to: self.phase.tag,
            t: self.next_t,
            k: self.phase.k,
            p: self.phase.p,
        }
    }

    fn take_work(&mut self) -> InFlight {
        self.pending.take().and_then(|p| p.work).expect("prompt carries a record")
    }

    fn finalize(&mut self, work: InFlight, final_label: String, by: DecidedBy, out: &mut Outcome) -> Result<()> {
        let challenged = matches!(work.skepticality, Some(s) if s > self.config.alpha)
            && self.phase.tag == PhaseTag::HiC;
        let event = DecisionEvent {
            t: work.record.t,
            phase: self.phase.tag,
            user_label: work.user_label,
            model_label: work.model_label.expect("model label set before finalizing"),
            model_probs: work.probs.expect("probabilities set before finalizing"),
            skepticality: work.skepticality,
            challenged,
            challenge_accepted: challenged.then_some(by == DecidedBy::HumanAcceptedSuggestion),
            belief: work.belief,
            callback_kind: work.callback,
            rng_draw: work.rng_draw,
            explanation_shown: work.explanation_shown,
            final_label,
            decided_by: by,
            record: work.record,
        };
        if by != DecidedBy::MachineAuto {
            let label = self.schema.require_label(&event.final_label)?;
            self.model.learn_one(&event.record, label)?;
            out.model_updated = Some(self.model.n_seen());
        }
        self.log.push(event.clone());
        self.next_t += 1;
        out.decision = Some(event);

        match (self.phase.tag, by) {
            (PhaseTag::HiC, _) => {
                self.phase.k += 1;
                if self.promotion_due() {
                    let prompt = Prompt::ConsentRequest {
                        t: self.next_t,
                        average_fea: self.average_fea(Agent::Model),
                    };
                    self.issue(prompt, None, out);
                }
            }
            (PhaseTag::MiC, DecidedBy::MachineAuto) => {}
            (PhaseTag::MiC, _) => {
                let reasons = self.critical_reasons();
                if !reasons.is_empty() {
                    let prompt = Prompt::CriticalNotice {
                        reasons,
                        p: self.phase.p,
                        average_fea: self.average_fea(Agent::Model),
                    };
                    self.issue(prompt, None, out);
                }
            }
        }
        Ok(())
    }
}
