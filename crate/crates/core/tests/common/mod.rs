#![allow(dead_code)]

use bridget_core::{CallbackKind, DecidedBy, DecisionEvent, FeatureValue, LabelDistribution, PhaseTag, Record};
use rand::{Rng, RngCore};

pub fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| ((b'A' + i as u8) as char).to_string()).collect()
}

pub fn random_probs(rng: &mut impl RngCore, n: usize) -> LabelDistribution {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    LabelDistribution::from_probs(raw.iter().map(|p| p / total).collect()).unwrap()
}

/// Record with `dims` numeric features and, when `with_cat`, one trailing
/// categorical feature over {"u", "v", "w"}.
pub fn random_record(rng: &mut impl RngCore, id: String, t: u64, dims: usize, with_cat: bool) -> Record {
    let mut features: Vec<FeatureValue> = (0..dims)
        .map(|_| FeatureValue::Num((rng.random_range(-50..50) as f64) / 4.0))
        .collect();
    if with_cat {
        let c = ["u", "v", "w"][rng.random_range(0..3)];
        features.push(FeatureValue::Cat(c.to_string()));
    }
    Record { id, features, t }
}

/// A well-formed decision log of `n` events. With `human_only` every event
/// carries a user label (no machine_auto decisions).
pub fn random_log(rng: &mut impl RngCore, n: usize, labels: &[String], human_only: bool) -> Vec<DecisionEvent> {
    let pick = |rng: &mut dyn RngCore| labels[rng.random_range(0..labels.len())].clone();
    (0..n as u64)
        .map(|t| {
            let record = random_record(rng, format!("r{t}"), t, 2, false);
            let probs = random_probs(rng, labels.len());
            let model_label = labels[probs.argmax()].clone();
            let mic = rng.random_bool(0.5);
            let auto = mic && !human_only && rng.random_bool(0.5);
            let (user_label, final_label, by, challenged, accepted) = if auto {
                (None, model_label.clone(), DecidedBy::MachineAuto, false, None)
            } else if mic {
                let y = pick(rng);
                (Some(y.clone()), y, DecidedBy::Human, false, None)
            } else {
                let y = pick(rng);
                if y != model_label && rng.random_bool(0.5) {
                    if rng.random_bool(0.5) {
                        (Some(y), model_label.clone(), DecidedBy::HumanAcceptedSuggestion, true, Some(true))
                    } else {
                        (Some(y.clone()), y, DecidedBy::Human, true, Some(false))
                    }
                } else {
                    (Some(y.clone()), y, DecidedBy::Human, false, None)
                }
            };
            DecisionEvent {
                t,
                record,
                phase: if mic { PhaseTag::MiC } else { PhaseTag::HiC },
                user_label,
                model_label,
                model_probs: probs,
                skepticality: challenged.then_some(0.5),
                challenged,
                challenge_accepted: accepted,
                belief: mic.then_some(0.5),
                callback_kind: if mic && !auto { CallbackKind::LowBelief } else { CallbackKind::None },
                rng_draw: None,
                explanation_shown: false,
                final_label,
                decided_by: by,
            }
        })
        .collect()
}
