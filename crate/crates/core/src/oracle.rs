//! Simulated human labeler for reproducible experiments.
//!
//! Every answer is drawn from a generator keyed by `(seed, t, question)`, so
//! the user's behaviour on a record does not depend on how many questions
//! were asked before it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsentPolicy {
    #[default]
    Always,
    Never,
    /// Grant only for `t` strictly after the given index.
    AfterT(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoticePolicy {
    #[default]
    Stay,
    Revert,
    /// Keep the machine in command before the index, revert from it on.
    RevertFromT(u64),
}

/// Change of the user's behaviour from `at_t` on (inclusive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserDrift {
    pub at_t: u64,
    #[serde(default)]
    pub base_accuracy: Option<f64>,
    #[serde(default)]
    pub confusion: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatedUserConfig {
    pub base_accuracy: f64,
    /// Row per true label: distribution used to pick a wrong answer.
    pub confusion: Option<Vec<Vec<f64>>>,
    pub accept_when_correct: f64,
    pub accept_when_wrong: f64,
    pub consent_policy: ConsentPolicy,
    pub notice_policy: NoticePolicy,
    pub drift: Vec<UserDrift>,
    /// Probability of asking "why?" before answering a challenge or callback.
    pub explanation_rate: f64,
}

impl Default for SimulatedUserConfig {
    fn default() -> Self {
        SimulatedUserConfig {
            base_accuracy: 0.75,
            confusion: None,
            accept_when_correct: 0.9,
            accept_when_wrong: 0.1,
            consent_policy: ConsentPolicy::Always,
            notice_policy: NoticePolicy::Stay,
            drift: Vec::new(),
            explanation_rate: 0.0,
        }
    }
}

fn check_unit(path: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::config(path, "must lie in [0, 1]"))
    }
}

fn check_confusion(path: &str, rows: &[Vec<f64>], n_labels: usize) -> Result<()> {
    if rows.len() != n_labels {
        return Err(Error::config(path, format!("expected {n_labels} rows")));
    }
    for (i, row) in rows.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.len() != n_labels || row.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("{path}[{i}]"), "row must be a distribution over labels"));
        }
    }
    Ok(())
}

impl SimulatedUserConfig {
    pub fn validate(&self, n_labels: usize) -> Result<()> {
        check_unit("oracle.base_accuracy", self.base_accuracy)?;
        check_unit("oracle.accept_when_correct", self.accept_when_correct)?;
        check_unit("oracle.accept_when_wrong", self.accept_when_wrong)?;
        check_unit("oracle.explanation_rate", self.explanation_rate)?;
        if let Some(c) = &self.confusion {
            check_confusion("oracle.confusion", c, n_labels)?;
        }
        for (i, d) in self.drift.iter().enumerate() {
            if let Some(a) = d.base_accuracy {
                check_unit(&format!("oracle.drift[{i}].base_accuracy"), a)?;
            }
            if let Some(c) = &d.confusion {
                check_confusion(&format!("oracle.drift[{i}].confusion"), c, n_labels)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Question {
    Label = 0,
    Challenge = 1,
    Explain = 2,
}

#[derive(Debug, Clone)]
pub struct SimulatedUser {
    config: SimulatedUserConfig,
    labels: Vec<String>,
    seed: u64,
}

impl SimulatedUser {
    pub fn new(config: SimulatedUserConfig, labels: &[String], seed: u64) -> Result<Self> {
        config.validate(labels.len())?;
        let mut config = config;
        config.drift.sort_by_key(|d| d.at_t);
        Ok(SimulatedUser {
            config,
            labels: labels.to_vec(),
            seed,
        })
    }

    pub fn config(&self) -> &SimulatedUserConfig {
        &self.config
    }

    fn rng(&self, t: u64, q: Question) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(t.wrapping_mul(3).wrapping_add(q as u64));
        rng
    }

    /// Accuracy and confusion in effect at `t`.
    pub fn profile_at(&self, t: u64) -> (f64, Option<&Vec<Vec<f64>>>) {
        let mut accuracy = self.config.base_accuracy;
        let mut confusion = self.config.confusion.as_ref();
        for d in self.config.drift.iter().take_while(|d| d.at_t <= t) {
            if let Some(a) = d.base_accuracy {
                accuracy = a;
            }
            if let Some(c) = &d.confusion {
                confusion = Some(c);
            }
        }
        (accuracy, confusion)
    }

    /// The user's own label for the record at `t`.
    pub fn decide(&self, t: u64, true_label: &str) -> Result<String> {
        let truth = self
            .labels
            .iter()
            .position(|l| l == true_label)
            .ok_or_else(|| Error::invalid(format!("unknown label `{true_label}`")))?;
        let (accuracy, confusion) = self.profile_at(t);
        let mut rng = self.rng(t, Question::Label);
        if rng.random::<f64>() < accuracy {
            return Ok(true_label.to_string());
        }
        let weights: Vec<f64> = (0..self.labels.len())
            .map(|j| match confusion {
                _ if j == truth => 0.0,
                Some(rows) => rows[truth][j],
                None => 1.0,
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let weights = if total > 0.0 {
            weights
        } else {
            (0..self.labels.len()).map(|j| if j == truth { 0.0 } else { 1.0 }).collect()
        };
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = (0..weights.len()).rev().find(|&j| weights[j] > 0.0).expect("a wrong label exists");
        for (j, w) in weights.iter().enumerate() {
            if *w > 0.0 && u < *w {
                pick = j;
                break;
            }
            u -= w;
        }
        Ok(self.labels[pick].clone())
    }

    /// Whether the user accepts the model's suggestion over their own label.
    pub fn respond_to_challenge(&self, t: u64, suggestion: &str, true_label: &str) -> bool {
        let p = if suggestion == true_label {
            self.config.accept_when_correct
        } else {
            self.config.accept_when_wrong
        };
        self.rng(t, Question::Challenge).random::<f64>() < p
    }

    pub fn wants_explanation(&self, t: u64) -> bool {
        self.config.explanation_rate > 0.0
            && self.rng(t, Question::Explain).random::<f64>() < self.config.explanation_rate
    }

    pub fn respond_consent(&self, t: u64) -> bool {
        match self.config.consent_policy {
            ConsentPolicy::Always => true,
            ConsentPolicy::Never => false,
            ConsentPolicy::AfterT(after) => t > after,
        }
    }

    /// `true` means take command back.
    pub fn respond_notice(&self, t: u64) -> bool {
        match self.config.notice_policy {
            NoticePolicy::Stay => false,
            NoticePolicy::Revert => true,
            NoticePolicy::RevertFromT(from) => t >= from,
        }
    }
}
