//! Records, feature values and the session schema.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Num(f64),
    Cat(String),
}

impl FeatureValue {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            FeatureValue::Num(v) => Some(*v),
            FeatureValue::Cat(_) => None,
        }
    }

    pub fn as_cat(&self) -> Option<&str> {
        match self {
            FeatureValue::Cat(c) => Some(c),
            FeatureValue::Num(_) => None,
        }
    }
}

/// One unlabeled instance of the stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub features: Vec<FeatureValue>,
    /// Arrival index inside a session. The engine stamps it on offer.
    #[serde(default)]
    pub t: u64,
}

impl Record {
    pub fn new(id: impl Into<String>, features: Vec<FeatureValue>) -> Self {
        Record {
            id: id.into(),
            features,
            t: 0,
        }
    }

    pub fn numeric(id: impl Into<String>, values: &[f64]) -> Self {
        Record::new(id, values.iter().map(|v| FeatureValue::Num(*v)).collect())
    }
}

/// A record together with its label (ground truth in a stream, or a seed row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub record: Record,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Categorical { categories: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

impl FeatureSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Numeric,
        }
    }

    pub fn categorical(name: impl Into<String>, categories: &[&str]) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Categorical {
                categories: categories.iter().map(|c| c.to_string()).collect(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub features: Vec<FeatureSpec>,
    #[serde(default = "default_label_column")]
    pub label_column: String,
    /// Declared label order; also the tie-breaking order for argmax.
    pub labels: Vec<String>,
}

fn default_label_column() -> String {
    "label".to_string()
}

impl Schema {
    pub fn new(features: Vec<FeatureSpec>, labels: &[&str]) -> Result<Self> {
        let schema = Schema {
            features,
            label_column: default_label_column(),
            labels: labels.iter().map(|l| l.to_string()).collect(),
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Schema with `dims` numeric features named `x0..`.
    pub fn numeric(dims: usize, labels: &[&str]) -> Result<Self> {
        Schema::new(
            (0..dims).map(|i| FeatureSpec::numeric(format!("x{i}"))).collect(),
            labels,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() < 2 {
            return Err(Error::config("schema.labels", "at least two labels are required"));
        }
        for (i, l) in self.labels.iter().enumerate() {
            if self.labels[..i].contains(l) {
                return Err(Error::config("schema.labels", format!("duplicate label `{l}`")));
            }
        }
        for (i, f) in self.features.iter().enumerate() {
            if f.name == self.label_column || self.features[..i].iter().any(|g| g.name == f.name) {
                return Err(Error::config(
                    format!("schema.features[{i}].name"),
                    format!("duplicate column `{}`", f.name),
                ));
            }
            if let FeatureKind::Categorical { categories } = &f.kind {
                if categories.is_empty() {
                    return Err(Error::config(
                        format!("schema.features[{i}].categories"),
                        "categorical feature needs at least one category",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn require_label(&self, label: &str) -> Result<usize> {
        self.label_index(label)
            .ok_or_else(|| Error::invalid(format!("unknown label `{label}`")))
    }

    /// Checks arity, per-position kind, finiteness and category membership.
    pub fn check_record(&self, x: &Record) -> Result<()> {
        if x.features.len() != self.features.len() {
            return Err(Error::invalid(format!(
                "record `{}` has {} features, schema declares {}",
                x.id,
                x.features.len(),
                self.features.len()
            )));
        }
        for (spec, value) in self.features.iter().zip(&x.features) {
            match (&spec.kind, value) {
                (FeatureKind::Numeric, FeatureValue::Num(v)) if v.is_finite() => {}
                (FeatureKind::Categorical { categories }, FeatureValue::Cat(c))
                    if categories.contains(c) => {}
                _ => {
                    return Err(Error::invalid(format!(
                        "record `{}`: bad value {:?} for feature `{}`",
                        x.id, value, spec.name
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn category_index(&self, feature: usize, value: &str) -> Option<usize> {
        match &self.features.get(feature)?.kind {
            FeatureKind::Categorical { categories } => categories.iter().position(|c| c == value),
            FeatureKind::Numeric => None,
        }
    }
}

/// Unscaled Euclidean distance on numeric features plus Hamming mismatches
/// on categorical ones.
pub fn raw_distance(a: &Record, b: &Record) -> f64 {
    let mut sq = 0.0;
    for (u, v) in a.features.iter().zip(&b.features) {
        match (u, v) {
            (FeatureValue::Num(u), FeatureValue::Num(v)) => sq += (u - v) * (u - v),
            (u, v) => {
                if u != v {
                    sq += 1.0;
                }
            }
        }
    }
    sq.sqrt()
}

/// Min-max scaling of numeric features, fitted over a set of records.
#[derive(Debug, Clone)]
pub struct Normalizer {
    ranges: Vec<Option<(f64, f64)>>,
}

impl Normalizer {
    pub fn fit<'a>(arity: usize, records: impl IntoIterator<Item = &'a Record>) -> Self {
        let mut ranges: Vec<Option<(f64, f64)>> = vec![None; arity];
        for r in records {
            for (slot, value) in ranges.iter_mut().zip(&r.features) {
                if let FeatureValue::Num(v) = value {
                    *slot = Some(match *slot {
                        None => (*v, *v),
                        Some((lo, hi)) => (lo.min(*v), hi.max(*v)),
                    });
                }
            }
        }
        Normalizer { ranges }
    }

    /// Euclidean distance over min-max scaled numerics, each categorical
    /// mismatch adding 1 to the squared sum. A constant feature contributes 0.
    pub fn distance(&self, a: &Record, b: &Record) -> f64 {
        let mut sq = 0.0;
        for ((u, v), range) in a.features.iter().zip(&b.features).zip(&self.ranges) {
            match (u, v) {
                (FeatureValue::Num(u), FeatureValue::Num(v)) => {
                    let span = range.map(|(lo, hi)| hi - lo).unwrap_or(0.0);
                    if span > 0.0 {
                        let d = (u - v) / span;
                        sq += d * d;
                    }
                }
                (u, v) => {
                    if u != v {
                        sq += 1.0;
                    }
                }
            }
        }
        sq.sqrt()
    }
}
