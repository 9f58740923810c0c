//! Explanation payloads: nearest (counter-)exemplars from the decision log,
//! naive Bayes feature contributions, and unreliability evidence.
//!
//! Everything here is read-only over the latest model and log, so a payload
//! always reflects the current state of the session.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::Model;
use crate::metrics::DecisionEvent;
use crate::record::{FeatureValue, Normalizer, Record};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplanationKind {
    Exemplars,
    CounterExemplars,
    FeatureContributions,
    Unreliability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationItem {
    pub record_id: String,
    pub t: u64,
    pub features: Vec<FeatureValue>,
    pub final_label: String,
    pub model_label: String,
    pub model_confidence: f64,
    pub belief: Option<f64>,
    pub model_correct: bool,
    pub distance: f64,
}

impl ExplanationItem {
    fn from_event(e: &DecisionEvent, distance: f64) -> Self {
        ExplanationItem {
            record_id: e.record.id.clone(),
            t: e.t,
            features: e.record.features.clone(),
            final_label: e.final_label.clone(),
            model_label: e.model_label.clone(),
            model_confidence: e.model_probs.max(),
            belief: e.belief,
            model_correct: e.model_label == e.final_label,
            distance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub feature: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub kind: ExplanationKind,
    pub target_label: Option<String>,
    pub items: Vec<ExplanationItem>,
    pub scores: Vec<FeatureScore>,
    pub rival_label: Option<String>,
    pub log_prior_diff: Option<f64>,
    pub current_belief: Option<f64>,
}

impl Explanation {
    fn empty(kind: ExplanationKind) -> Self {
        Explanation {
            kind,
            target_label: None,
            items: Vec::new(),
            scores: Vec::new(),
            rival_label: None,
            log_prior_diff: None,
            current_belief: None,
        }
    }

    /// Sum of feature scores plus the log-prior difference.
    pub fn total_log_odds(&self) -> f64 {
        self.scores.iter().map(|s| s.score).sum::<f64>() + self.log_prior_diff.unwrap_or(0.0)
    }
}

/// The `k` logged events passing `keep`, nearest to `x` first (ties by t).
fn nearest(
    log: &[DecisionEvent],
    x: &Record,
    k: usize,
    keep: impl Fn(&DecisionEvent) -> bool,
) -> Result<Vec<ExplanationItem>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let normalizer = Normalizer::fit(
        x.features.len(),
        log.iter().map(|e| &e.record).chain(std::iter::once(x)),
    );
    let mut scored: Vec<(f64, &DecisionEvent)> = log
        .iter()
        .filter(|e| keep(e))
        .map(|e| (normalizer.distance(&e.record, x), e))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.t.cmp(&b.1.t)));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(d, e)| ExplanationItem::from_event(e, d))
        .collect())
}

/// Nearest past records whose final label is `target`.
pub fn exemplars(log: &[DecisionEvent], x: &Record, target: &str, k: usize) -> Result<Explanation> {
    Ok(Explanation {
        target_label: Some(target.to_string()),
        items: nearest(log, x, k, |e| e.final_label == target)?,
        ..Explanation::empty(ExplanationKind::Exemplars)
    })
}

/// Nearest past records whose final label differs from `target`.
pub fn counter_exemplars(
    log: &[DecisionEvent],
    x: &Record,
    target: &str,
    k: usize,
) -> Result<Explanation> {
    Ok(Explanation {
        target_label: Some(target.to_string()),
        items: nearest(log, x, k, |e| e.final_label != target)?,
        ..Explanation::empty(ExplanationKind::CounterExemplars)
    })
}

/// Nearest past records on which the model's top probability was below
/// `threshold`, together with the current belief.
pub fn unreliability(
    log: &[DecisionEvent],
    x: &Record,
    k: usize,
    threshold: f64,
    current_belief: f64,
) -> Result<Explanation> {
    Ok(Explanation {
        items: nearest(log, x, k, |e| e.model_probs.max() < threshold)?,
        current_belief: Some(current_belief),
        ..Explanation::empty(ExplanationKind::Unreliability)
    })
}

/// Per-feature log-likelihood differences between `target` and its strongest
/// rival under naive Bayes. Scores plus the log-prior difference add up to
/// the log-odds of the two labels.
pub fn feature_contributions(model: &Model, x: &Record, target: usize) -> Result<Explanation> {
    let nb = model
        .as_naive_bayes()
        .ok_or_else(|| Error::Capability("feature contributions need a naive Bayes model".into()))?;
    let schema = nb.schema();
    if target >= schema.n_labels() {
        return Err(Error::invalid(format!("label index {target} out of range")));
    }
    let joint = nb.joint_log_likelihood(x)?;
    let rival = (0..joint.len())
        .filter(|&l| l != target)
        .fold(None, |best: Option<usize>, l| match best {
            Some(b) if joint[b] >= joint[l] => Some(b),
            _ => Some(l),
        })
        .expect("at least two labels");
    let own = nb.log_likelihood_terms(x, target)?;
    let other = nb.log_likelihood_terms(x, rival)?;
    Ok(Explanation {
        target_label: Some(schema.labels[target].clone()),
        rival_label: Some(schema.labels[rival].clone()),
        log_prior_diff: Some(nb.log_prior(target) - nb.log_prior(rival)),
        scores: schema
            .features
            .iter()
            .zip(own.iter().zip(&other))
            .map(|(f, (a, b))| FeatureScore {
                feature: f.name.clone(),
                score: a - b,
            })
            .collect(),
        ..Explanation::empty(ExplanationKind::FeatureContributions)
    })
}
