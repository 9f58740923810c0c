//! Incremental probabilistic classifiers that play the machine's role.
//!
//! Every learner consumes one labeled record at a time and exposes a full
//! label distribution. An untrained learner answers with the uniform
//! distribution so the decision loop never has to special-case cold starts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{FeatureKind, FeatureValue, Record, Schema};

/// Lower bound applied to every Gaussian variance before it is used.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Probabilities aligned with the schema's declared label order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelDistribution {
    probs: Vec<f64>,
}

impl LabelDistribution {
    pub fn uniform(n: usize) -> Self {
        LabelDistribution {
            probs: vec![1.0 / n as f64; n],
        }
    }

    /// Normalizes unnormalized log-scores with the log-sum-exp shift.
    pub fn from_log_scores(scores: &[f64]) -> Self {
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exp.iter().sum();
        LabelDistribution {
            probs: exp.into_iter().map(|e| e / total).collect(),
        }
    }

    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("not a probability vector: {probs:?}")));
        }
        Ok(LabelDistribution { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, label: usize) -> f64 {
        self.probs[label]
    }

    /// Most probable label; ties go to the earliest label in declared order.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate().skip(1) {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn max(&self) -> f64 {
        self.probs[self.argmax()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[default]
    NaiveBayes,
    OnlineLinear,
}

pub trait Learner {
    fn predict_proba(&self, x: &Record) -> Result<LabelDistribution>;
    fn learn_one(&mut self, x: &Record, label: usize) -> Result<()>;
    fn n_seen(&self) -> u64;
}

/// Running mean and sum of squared deviations (Welford).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningMoments {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl RunningMoments {
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        let delta = v - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (v - self.mean);
    }

    /// Population variance; zero with fewer than one sample.
    pub fn variance(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.m2 / self.n as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureStats {
    Numeric(RunningMoments),
    Categorical { counts: Vec<u64> },
}

impl FeatureStats {
    fn empty(kind: &FeatureKind) -> Self {
        match kind {
            FeatureKind::Numeric => FeatureStats::Numeric(RunningMoments::default()),
            FeatureKind::Categorical { categories } => FeatureStats::Categorical {
                counts: vec![0; categories.len()],
            },
        }
    }
}

/// Incremental naive Bayes: Gaussian likelihoods for numeric features and
/// Laplace-smoothed (k = 1) category frequencies for categorical ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayes {
    schema: Schema,
    class_counts: Vec<u64>,
    /// `stats[label][feature]`
    stats: Vec<Vec<FeatureStats>>,
    /// All-label numeric moments; stand in for labels without evidence.
    pooled: Vec<FeatureStats>,
    n_seen: u64,
}

impl NaiveBayes {
    pub fn new(schema: &Schema) -> Self {
        let fresh = || schema.features.iter().map(|f| FeatureStats::empty(&f.kind)).collect::<Vec<_>>();
        NaiveBayes {
            schema: schema.clone(),
            class_counts: vec![0; schema.n_labels()],
            stats: (0..schema.n_labels()).map(|_| fresh()).collect(),
            pooled: fresh(),
            n_seen: 0,
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn class_counts(&self) -> &[u64] {
        &self.class_counts
    }

    pub fn feature_stats(&self, label: usize, feature: usize) -> &FeatureStats {
        &self.stats[label][feature]
    }

    /// Log prior with add-one smoothing over labels.
    pub fn log_prior(&self, label: usize) -> f64 {
        let n_labels = self.class_counts.len() as f64;
        ((self.class_counts[label] as f64 + 1.0) / (self.n_seen as f64 + n_labels)).ln()
    }

    /// Per-feature log-likelihood terms of `x` under `label`.
    pub fn log_likelihood_terms(&self, x: &Record, label: usize) -> Result<Vec<f64>> {
        self.schema.check_record(x)?;
        Ok(x.features
            .iter()
            .enumerate()
            .map(|(j, value)| self.feature_log_likelihood(label, j, value))
            .collect())
    }

    fn feature_log_likelihood(&self, label: usize, j: usize, value: &FeatureValue) -> f64 {
        match (&self.stats[label][j], value) {
            (FeatureStats::Numeric(m), FeatureValue::Num(v)) => {
                let moments = if m.n > 0 {
                    m
                } else {
                    match &self.pooled[j] {
                        FeatureStats::Numeric(p) if p.n > 0 => p,
                        // nothing seen for any label: uninformative
                        _ => return 0.0,
                    }
                };
                let var = moments.variance().max(VARIANCE_FLOOR);
                let d = v - moments.mean;
                -0.5 * (2.0 * std::f64::consts::PI * var).ln() - d * d / (2.0 * var)
            }
            (FeatureStats::Categorical { counts }, FeatureValue::Cat(c)) => {
                let idx = self
                    .schema
                    .category_index(j, c)
                    .expect("record checked against schema");
                let n_y = self.class_counts[label] as f64;
                ((counts[idx] as f64 + 1.0) / (n_y + counts.len() as f64)).ln()
            }
            _ => unreachable!("record checked against schema"),
        }
    }

    /// Joint log-likelihood `log P(y) + sum_j log P(x_j | y)` for every label.
    pub fn joint_log_likelihood(&self, x: &Record) -> Result<Vec<f64>> {
        self.schema.check_record(x)?;
        Ok((0..self.class_counts.len())
            .map(|y| {
                self.log_prior(y)
                    + x.features
                        .iter()
                        .enumerate()
                        .map(|(j, v)| self.feature_log_likelihood(y, j, v))
                        .sum::<f64>()
            })
            .collect())
    }
}

impl Learner for NaiveBayes {
    fn predict_proba(&self, x: &Record) -> Result<LabelDistribution> {
        Ok(LabelDistribution::from_log_scores(&self.joint_log_likelihood(x)?))
    }

    fn learn_one(&mut self, x: &Record, label: usize) -> Result<()> {
        self.schema.check_record(x)?;
        if label >= self.class_counts.len() {
            return Err(Error::invalid(format!("label index {label} out of range")));
        }
        for (j, value) in x.features.iter().enumerate() {
            match value {
                FeatureValue::Num(v) => {
                    for stats in [&mut self.stats[label][j], &mut self.pooled[j]] {
                        if let FeatureStats::Numeric(m) = stats {
                            m.push(*v);
                        }
                    }
                }
                FeatureValue::Cat(c) => {
                    let idx = self.schema.category_index(j, c).expect("checked");
                    if let FeatureStats::Categorical { counts } = &mut self.stats[label][j] {
                        counts[idx] += 1;
                    }
                }
            }
        }
        self.class_counts[label] += 1;
        self.n_seen += 1;
        Ok(())
    }

    fn n_seen(&self) -> u64 {
        self.n_seen
    }
}

/// Multinomial logistic regression trained by one SGD step per record.
/// Numeric inputs are standardized with running moments; categoricals are
/// one-hot encoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineLinear {
    schema: Schema,
    learning_rate: f64,
    moments: Vec<RunningMoments>,
    /// `weights[label]`, first entry is the bias.
    weights: Vec<Vec<f64>>,
    n_seen: u64,
}

impl OnlineLinear {
    pub const DEFAULT_LEARNING_RATE: f64 = 0.1;

    pub fn new(schema: &Schema, learning_rate: f64) -> Self {
        let dim = 1 + schema
            .features
            .iter()
            .map(|f| match &f.kind {
                FeatureKind::Numeric => 1,
                FeatureKind::Categorical { categories } => categories.len(),
            })
            .sum::<usize>();
        OnlineLinear {
            schema: schema.clone(),
            learning_rate,
            moments: vec![RunningMoments::default(); schema.features.len()],
            weights: vec![vec![0.0; dim]; schema.n_labels()],
            n_seen: 0,
        }
    }

    fn encode(&self, x: &Record) -> Vec<f64> {
        let mut phi = vec![1.0];
        for (j, value) in x.features.iter().enumerate() {
            match value {
                FeatureValue::Num(v) => {
                    let m = &self.moments[j];
                    let sd = m.variance().max(VARIANCE_FLOOR).sqrt();
                    phi.push(if m.n > 1 { (v - m.mean) / sd } else { 0.0 });
                }
                FeatureValue::Cat(c) => {
                    let n = match &self.schema.features[j].kind {
                        FeatureKind::Categorical { categories } => categories.len(),
                        FeatureKind::Numeric => unreachable!(),
                    };
                    let idx = self.schema.category_index(j, c).expect("checked");
                    phi.extend((0..n).map(|k| if k == idx { 1.0 } else { 0.0 }));
                }
            }
        }
        phi
    }

    fn scores(&self, phi: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.iter().zip(phi).map(|(a, b)| a * b).sum())
            .collect()
    }
}

impl Learner for OnlineLinear {
    fn predict_proba(&self, x: &Record) -> Result<LabelDistribution> {
        self.schema.check_record(x)?;
        Ok(LabelDistribution::from_log_scores(&self.scores(&self.encode(x))))
    }

    fn learn_one(&mut self, x: &Record, label: usize) -> Result<()> {
        self.schema.check_record(x)?;
        if label >= self.weights.len() {
            return Err(Error::invalid(format!("label index {label} out of range")));
        }
        for (m, value) in self.moments.iter_mut().zip(&x.features) {
            if let FeatureValue::Num(v) = value {
                m.push(*v);
            }
        }
        let phi = self.encode(x);
        let p = LabelDistribution::from_log_scores(&self.scores(&phi));
        for (y, w) in self.weights.iter_mut().enumerate() {
            let err = p.get(y) - if y == label { 1.0 } else { 0.0 };
            for (wk, xk) in w.iter_mut().zip(&phi) {
                *wk -= self.learning_rate * err * xk;
            }
        }
        self.n_seen += 1;
        Ok(())
    }

    fn n_seen(&self) -> u64 {
        self.n_seen
    }
}

/// The machine model of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Model {
    NaiveBayes(NaiveBayes),
    OnlineLinear(OnlineLinear),
}

impl Model {
    pub fn new(kind: ModelKind, schema: &Schema) -> Self {
        match kind {
            ModelKind::NaiveBayes => Model::NaiveBayes(NaiveBayes::new(schema)),
            ModelKind::OnlineLinear => {
                Model::OnlineLinear(OnlineLinear::new(schema, OnlineLinear::DEFAULT_LEARNING_RATE))
            }
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::NaiveBayes(_) => ModelKind::NaiveBayes,
            Model::OnlineLinear(_) => ModelKind::OnlineLinear,
        }
    }

    pub fn as_naive_bayes(&self) -> Option<&NaiveBayes> {
        match self {
            Model::NaiveBayes(nb) => Some(nb),
            Model::OnlineLinear(_) => None,
        }
    }

    /// Folds `learn_one` over the pairs in order.
    pub fn fit_seed(&mut self, records: &[Record], labels: &[usize]) -> Result<()> {
        if records.len() != labels.len() {
            return Err(Error::invalid(format!(
                "seed has {} records but {} labels",
                records.len(),
                labels.len()
            )));
        }
        for (x, y) in records.iter().zip(labels) {
            self.learn_one(x, *y)?;
        }
        Ok(())
    }
}

impl Learner for Model {
    fn predict_proba(&self, x: &Record) -> Result<LabelDistribution> {
        match self {
            Model::NaiveBayes(m) => m.predict_proba(x),
            Model::OnlineLinear(m) => m.predict_proba(x),
        }
    }

    fn learn_one(&mut self, x: &Record, label: usize) -> Result<()> {
        match self {
            Model::NaiveBayes(m) => m.learn_one(x, label),
            Model::OnlineLinear(m) => m.learn_one(x, label),
        }
    }

    fn n_seen(&self) -> u64 {
        match self {
            Model::NaiveBayes(m) => m.n_seen(),
            Model::OnlineLinear(m) => m.n_seen(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::FeatureSpec;
    use proptest::prelude::*;

    fn cat_schema() -> Schema {
        Schema::new(
            vec![
                FeatureSpec::categorical("shape", &["round", "square"]),
                FeatureSpec::categorical("color", &["red", "green", "blue"]),
            ],
            &["A", "B"],
        )
        .unwrap()
    }

    fn cat(id: &str, shape: &str, color: &str) -> Record {
        Record::new(
            id,
            vec![FeatureValue::Cat(shape.into()), FeatureValue::Cat(color.into())],
        )
    }

    #[test]
    fn untrained_is_uniform() {
        for kind in [ModelKind::NaiveBayes, ModelKind::OnlineLinear] {
            let m = Model::new(kind, &Schema::numeric(2, &["A", "B"]).unwrap());
            let p = m.predict_proba(&Record::numeric("x", &[1.0, -3.0])).unwrap();
            assert_eq!(p.probs(), &[0.5, 0.5]);
            assert_eq!(p.argmax(), 0);
        }
    }

    #[test]
    fn single_class_evidence_wins() {
        let schema = cat_schema();
        let mut m = Model::new(ModelKind::NaiveBayes, &schema);
        m.learn_one(&cat("a", "round", "red"), 0).unwrap();
        m.learn_one(&cat("b", "square", "blue"), 0).unwrap();
        assert_eq!(m.predict_proba(&cat("c", "round", "green")).unwrap().argmax(), 0);

        let mut m = Model::new(ModelKind::NaiveBayes, &Schema::numeric(1, &["A", "B"]).unwrap());
        for v in [1.0, 2.0, 3.0] {
            m.learn_one(&Record::numeric("n", &[v]), 1).unwrap();
        }
        assert_eq!(m.predict_proba(&Record::numeric("q", &[10.0])).unwrap().argmax(), 1);
    }

    #[test]
    fn hand_enumerated_count_tables() {
        // rows: (round, red, A) (round, green, A) (square, red, B) (round, blue, B)
        let mut nb = NaiveBayes::new(&cat_schema());
        nb.learn_one(&cat("1", "round", "red"), 0).unwrap();
        nb.learn_one(&cat("2", "round", "green"), 0).unwrap();
        nb.learn_one(&cat("3", "square", "red"), 1).unwrap();
        nb.learn_one(&cat("4", "round", "blue"), 1).unwrap();

        // query (round, red)
        // A: prior 3/6, shape (2+1)/(2+2), color (1+1)/(2+3)
        // B: prior 3/6, shape (1+1)/(2+2), color (1+1)/(2+3)
        let a = 0.5 * 0.75 * 0.4;
        let b = 0.5 * 0.5 * 0.4;
        let p = nb.predict_proba(&cat("q", "round", "red")).unwrap();
        assert!((p.get(0) - a / (a + b)).abs() < 1e-12);
        assert!((p.get(1) - b / (a + b)).abs() < 1e-12);
        assert!((p.get(0) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn learn_one_raises_probability_of_label() {
        let mut nb = NaiveBayes::new(&cat_schema());
        nb.learn_one(&cat("1", "square", "green"), 0).unwrap();
        nb.learn_one(&cat("2", "round", "red"), 1).unwrap();
        let x = cat("q", "round", "blue");
        let before = nb.predict_proba(&x).unwrap().get(0);
        nb.learn_one(&x, 0).unwrap();
        assert!(nb.predict_proba(&x).unwrap().get(0) > before);
    }

    #[test]
    fn unknown_label_and_bad_schema_rejected() {
        let mut m = Model::new(ModelKind::NaiveBayes, &cat_schema());
        assert!(m.learn_one(&cat("1", "round", "red"), 2).is_err());
        assert!(m.predict_proba(&cat("1", "oval", "red")).is_err());
        assert!(m.fit_seed(&[cat("1", "round", "red")], &[]).is_err());
        assert_eq!(m.n_seen(), 0);
    }

    #[test]
    fn fit_seed_matches_fold() {
        let schema = Schema::numeric(2, &["A", "B", "C"]).unwrap();
        let rows: Vec<Record> = (0..12)
            .map(|i| Record::numeric(format!("r{i}"), &[i as f64 * 0.7, (i * i) as f64 % 5.0]))
            .collect();
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        for kind in [ModelKind::NaiveBayes, ModelKind::OnlineLinear] {
            let mut seeded = Model::new(kind, &schema);
            seeded.fit_seed(&rows, &labels).unwrap();
            let mut folded = Model::new(kind, &schema);
            for (x, y) in rows.iter().zip(&labels) {
                folded.learn_one(x, *y).unwrap();
            }
            assert_eq!(seeded, folded);
            let mut empty = Model::new(kind, &schema);
            empty.fit_seed(&[], &[]).unwrap();
            assert_eq!(empty, Model::new(kind, &schema));
        }
    }

    #[test]
    fn online_linear_learns_separable_data() {
        let schema = Schema::numeric(1, &["A", "B"]).unwrap();
        let mut m = Model::new(ModelKind::OnlineLinear, &schema);
        for i in 0..200 {
            let (v, y) = if i % 2 == 0 { (-2.0 - (i % 7) as f64 * 0.1, 0) } else { (2.0 + (i % 5) as f64 * 0.1, 1) };
            m.learn_one(&Record::numeric("r", &[v]), y).unwrap();
        }
        assert_eq!(m.predict_proba(&Record::numeric("q", &[-2.5])).unwrap().argmax(), 0);
        assert_eq!(m.predict_proba(&Record::numeric("q", &[2.5])).unwrap().argmax(), 1);
    }

    proptest! {
        #[test]
        fn distributions_are_valid(
            rows in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0, 0usize..3), 0..40),
            q in (-100.0f64..100.0, -100.0f64..100.0),
        ) {
            let schema = Schema::numeric(2, &["A", "B", "C"]).unwrap();
            for kind in [ModelKind::NaiveBayes, ModelKind::OnlineLinear] {
                let mut m = Model::new(kind, &schema);
                for (a, b, y) in &rows {
                    m.learn_one(&Record::numeric("r", &[*a, *b]), *y).unwrap();
                }
                let p = m.predict_proba(&Record::numeric("q", &[q.0, q.1])).unwrap();
                let total: f64 = p.probs().iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
                prop_assert!(p.probs().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
                // determinism
                let again = m.clone().predict_proba(&Record::numeric("q", &[q.0, q.1])).unwrap();
                prop_assert_eq!(p, again);
            }
        }
    }
}
