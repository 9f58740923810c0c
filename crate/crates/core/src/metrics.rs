//! Track-record bookkeeping over the decision log: fading empirical
//! accuracy (FEA), skepticality, belief and the average-FEA monitor.
//!
//! FEA of an agent towards a label is the weighted share of that agent's
//! past proposals of the label that ended up as the accepted final label.
//! Weights fade either with age in the stream (`temporal`) or with distance
//! to the current record in feature space (`feature`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::LabelDistribution;
use crate::record::{raw_distance, Record};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseTag {
    HiC,
    MiC,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallbackKind {
    #[default]
    None,
    LowBelief,
    RandomCheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecidedBy {
    Human,
    HumanAcceptedSuggestion,
    MachineAuto,
}

/// One finalized record in the append-only decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionEvent {
    pub t: u64,
    pub record: Record,
    pub phase: PhaseTag,
    pub user_label: Option<String>,
    pub model_label: String,
    pub model_probs: LabelDistribution,
    pub skepticality: Option<f64>,
    pub challenged: bool,
    pub challenge_accepted: Option<bool>,
    pub belief: Option<f64>,
    pub callback_kind: CallbackKind,
    pub rng_draw: Option<f64>,
    pub explanation_shown: bool,
    pub final_label: String,
    pub decided_by: DecidedBy,
}

impl DecisionEvent {
    /// Label the given agent proposed for this record, if it proposed one.
    pub fn output_of(&self, agent: Agent) -> Option<&str> {
        match agent {
            Agent::Model => Some(&self.model_label),
            Agent::Human => self.user_label.as_deref(),
        }
    }

    /// Structural invariants every logged event satisfies.
    pub fn check(&self, labels: &[String]) -> Result<()> {
        let fail = |m: &str| Err(Error::invalid(format!("event t={}: {m}", self.t)));
        if !labels.contains(&self.final_label) || !labels.contains(&self.model_label) {
            return fail("label outside label set");
        }
        if self.decided_by == DecidedBy::MachineAuto
            && (self.phase != PhaseTag::MiC || self.callback_kind != CallbackKind::None)
        {
            return fail("machine_auto outside MiC or with callback");
        }
        if self.challenged && self.user_label.as_deref() == Some(self.model_label.as_str()) {
            return fail("challenge without clash");
        }
        match self.decided_by {
            DecidedBy::MachineAuto if self.final_label != self.model_label => {
                fail("auto decision differs from model label")
            }
            DecidedBy::HumanAcceptedSuggestion
                if !(self.challenged && self.challenge_accepted == Some(true)
                    && self.final_label == self.model_label) =>
            {
                fail("accepted suggestion without accepted challenge")
            }
            DecidedBy::Human if self.user_label.as_deref() != Some(self.final_label.as_str()) => {
                fail("human decision differs from user label")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    Model,
    Human,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    #[default]
    Temporal,
    Feature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Divide by the weight of events where the agent proposed the label.
    #[default]
    PerLabel,
    /// Divide by the weight of every eligible event of the agent.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FadingConfig {
    pub decay: f64,
    pub weight_mode: WeightMode,
    pub feature_bandwidth: f64,
    pub norm_mode: NormMode,
    pub prior: f64,
    pub include_machine_auto: bool,
}

impl Default for FadingConfig {
    fn default() -> Self {
        FadingConfig {
            decay: 0.98,
            weight_mode: WeightMode::Temporal,
            feature_bandwidth: 1.0,
            norm_mode: NormMode::PerLabel,
            prior: 0.5,
            include_machine_auto: false,
        }
    }
}

impl FadingConfig {
    /// Plain empirical accuracy: no fading, every event counted.
    pub fn unfaded() -> Self {
        FadingConfig {
            decay: 1.0,
            include_machine_auto: true,
            ..FadingConfig::default()
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::config(format!("{path}.decay"), "must lie in (0, 1]"));
        }
        if !self.feature_bandwidth.is_finite() || self.feature_bandwidth <= 0.0 {
            return Err(Error::config(format!("{path}.feature_bandwidth"), "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.prior) {
            return Err(Error::config(format!("{path}.prior"), "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Weight of a past event: `decay^age` in temporal mode,
/// `exp(-bandwidth * dist^2)` in feature mode.
pub fn fading_weight(age_or_distance: f64, cfg: &FadingConfig) -> f64 {
    match cfg.weight_mode {
        WeightMode::Temporal => cfg.decay.powf(age_or_distance),
        WeightMode::Feature => (-cfg.feature_bandwidth * age_or_distance * age_or_distance).exp(),
    }
}

/// `c_model * fea_model - c_user * fea_user`.
pub fn skepticality_from_parts(c_model: f64, fea_model: f64, c_user: f64, fea_user: f64) -> f64 {
    c_model * fea_model - c_user * fea_user
}

/// Read-only view of a decision log for metric evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Evidence<'a> {
    pub log: &'a [DecisionEvent],
    pub labels: &'a [String],
    pub cfg: &'a FadingConfig,
}

impl<'a> Evidence<'a> {
    pub fn new(log: &'a [DecisionEvent], labels: &'a [String], cfg: &'a FadingConfig) -> Self {
        Evidence { log, labels, cfg }
    }

    fn weight(&self, event: &DecisionEvent, now_t: u64, x_now: Option<&Record>) -> f64 {
        match self.cfg.weight_mode {
            WeightMode::Temporal => {
                let age = now_t - event.t;
                match i32::try_from(age) {
                    Ok(age) => self.cfg.decay.powi(age),
                    Err(_) => fading_weight(age as f64, self.cfg),
                }
            }
            WeightMode::Feature => {
                let d = raw_distance(&event.record, x_now.expect("checked by caller"));
                fading_weight(d, self.cfg)
            }
        }
    }

    fn check_query(&self, now_t: u64, x_now: Option<&Record>) -> Result<()> {
        if let Some(last) = self.log.last() {
            if last.t >= now_t {
                return Err(Error::invalid(format!(
                    "now_t {now_t} does not follow the last logged t {}",
                    last.t
                )));
            }
        }
        if self.cfg.weight_mode == WeightMode::Feature && x_now.is_none() {
            return Err(Error::invalid("feature weighting needs the current record"));
        }
        Ok(())
    }

    /// Fading empirical accuracy of `agent` towards `label`.
    pub fn fea(&self, agent: Agent, label: &str, now_t: u64, x_now: Option<&Record>) -> Result<f64> {
        if !self.labels.iter().any(|l| l == label) {
            return Err(Error::invalid(format!("unknown label `{label}`")));
        }
        self.check_query(now_t, x_now)?;
        Ok(self.fea_unchecked(agent, label, now_t, x_now))
    }

    fn fea_unchecked(&self, agent: Agent, label: &str, now_t: u64, x_now: Option<&Record>) -> f64 {
        let mut hits = 0.0;
        let mut proposed = 0.0;
        let mut eligible = 0.0;
        for event in self.log {
            if event.decided_by == DecidedBy::MachineAuto && !self.cfg.include_machine_auto {
                continue;
            }
            let Some(output) = event.output_of(agent) else {
                continue;
            };
            let w = self.weight(event, now_t, x_now);
            eligible += w;
            if output == label {
                proposed += w;
                if output == event.final_label {
                    hits += w;
                }
            }
        }
        let denom = match self.cfg.norm_mode {
            NormMode::PerLabel => proposed,
            NormMode::Global => eligible,
        };
        if denom > 0.0 {
            hits / denom
        } else {
            self.cfg.prior
        }
    }

    /// FEA of `agent` for every label, in declared order.
    pub fn fea_per_label(&self, agent: Agent, now_t: u64, x_now: Option<&Record>) -> Result<Vec<f64>> {
        self.check_query(now_t, x_now)?;
        Ok(self
            .labels
            .iter()
            .map(|l| self.fea_unchecked(agent, l, now_t, x_now))
            .collect())
    }

    /// Unweighted mean of the per-label FEA values.
    pub fn average_fea(&self, agent: Agent, now_t: u64, x_now: Option<&Record>) -> Result<f64> {
        let per_label = self.fea_per_label(agent, now_t, x_now)?;
        Ok(per_label.iter().sum::<f64>() / per_label.len() as f64)
    }

    /// Fading skepticality of the model towards the user's label.
    pub fn skepticality(
        &self,
        x: &Record,
        model_label: &str,
        user_label: &str,
        probs: &LabelDistribution,
        now_t: u64,
    ) -> Result<f64> {
        let c_model = probs.get(self.index(model_label)?);
        let c_user = probs.get(self.index(user_label)?);
        let fea_model = self.fea(Agent::Model, model_label, now_t, Some(x))?;
        let fea_user = self.fea(Agent::Human, user_label, now_t, Some(x))?;
        Ok(skepticality_from_parts(c_model, fea_model, c_user, fea_user))
    }

    /// Model belief towards its own prediction: `c_model * fea_model`.
    pub fn belief(
        &self,
        x: &Record,
        model_label: &str,
        probs: &LabelDistribution,
        now_t: u64,
    ) -> Result<f64> {
        let c_model = probs.get(self.index(model_label)?);
        Ok(c_model * self.fea(Agent::Model, model_label, now_t, Some(x))?)
    }

    fn index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::invalid(format!("unknown label `{label}`")))
    }
}
