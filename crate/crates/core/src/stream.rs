//! Record sources: CSV files and synthetic Gaussian blobs, with optional
//! concept drift.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{FeatureKind, FeatureValue, LabeledRecord, Record, Schema};

/// Parameters of [`gen_blobs`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub n: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_dims")]
    pub dims: usize,
    pub separation: f64,
    /// Falls back to the run seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_classes() -> usize {
    2
}

fn default_dims() -> usize {
    2
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::config("data.generator.n", "must be at least 1"));
        }
        if self.classes < 2 {
            return Err(Error::config("data.generator.classes", "must be at least 2"));
        }
        if self.dims < 1 {
            return Err(Error::config("data.generator.dims", "must be at least 1"));
        }
        if !self.separation.is_finite() || self.separation < 0.0 {
            return Err(Error::config("data.generator.separation", "must be a finite value >= 0"));
        }
        Ok(())
    }
}

/// `A`, `B`, ... for up to 26 classes, `c0`, `c1`, ... beyond.
pub fn class_names(classes: usize) -> Vec<String> {
    if classes <= 26 {
        (0..classes).map(|i| ((b'A' + i as u8) as char).to_string()).collect()
    } else {
        (0..classes).map(|i| format!("c{i}")).collect()
    }
}

/// Schema produced by [`gen_blobs`] for the given shape.
pub fn blob_schema(classes: usize, dims: usize) -> Schema {
    let names = class_names(classes);
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    Schema::numeric(dims, &refs).expect("at least two classes")
}

/// Unit-variance Gaussian clusters whose means are `separation` apart.
/// With `classes <= dims` the means sit on scaled axes (all pairwise
/// distances equal); otherwise they are spaced along the first axis.
/// Labels are balanced and shuffled; `t` is the position in the stream.
pub fn gen_blobs(n: usize, classes: usize, dims: usize, separation: f64, seed: u64) -> Vec<LabeledRecord> {
    let names = class_names(classes);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            let mut m = vec![0.0; dims];
            if classes <= dims {
                m[c] = separation / std::f64::consts::SQRT_2;
            } else {
                m[0] = c as f64 * separation;
            }
            m
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    labels
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let features = means[c]
                .iter()
                .map(|mu| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    FeatureValue::Num(mu + z)
                })
                .collect();
            let mut record = Record::new(format!("r{i}"), features);
            record.t = i as u64;
            LabeledRecord {
                record,
                label: names[c].clone(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftKind {
    /// Relabel from `at_t` on.
    LabelFlip { mapping: BTreeMap<String, String> },
    /// Add a per-class offset to the numeric features from `at_t` on.
    MeanShift { delta: BTreeMap<String, Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub at_t: u64,
    #[serde(flatten)]
    pub kind: DriftKind,
}

impl DriftSpec {
    pub fn label_flip(at_t: u64, pairs: &[(&str, &str)]) -> Self {
        DriftSpec {
            at_t,
            kind: DriftKind::LabelFlip {
                mapping: pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
            },
        }
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        match &self.kind {
            DriftKind::LabelFlip { mapping } => {
                for (from, to) in mapping {
                    if schema.label_index(from).is_none() || schema.label_index(to).is_none() {
                        return Err(Error::config("drift.mapping", format!("unknown label in {from} -> {to}")));
                    }
                }
            }
            DriftKind::MeanShift { delta } => {
                for (label, d) in delta {
                    if schema.label_index(label).is_none() {
                        return Err(Error::config("drift.delta", format!("unknown label `{label}`")));
                    }
                    if d.len() != schema.features.len() {
                        return Err(Error::config(
                            format!("drift.delta.{label}"),
                            format!("expected {} entries", schema.features.len()),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Applies drift to every record with `t >= at_t`; earlier records are untouched.
pub fn apply_drift(stream: Vec<LabeledRecord>, spec: &DriftSpec) -> Vec<LabeledRecord> {
    stream
        .into_iter()
        .map(|mut lr| {
            if lr.record.t < spec.at_t {
                return lr;
            }
            match &spec.kind {
                DriftKind::LabelFlip { mapping } => {
                    if let Some(to) = mapping.get(&lr.label) {
                        lr.label = to.clone();
                    }
                }
                DriftKind::MeanShift { delta } => {
                    if let Some(d) = delta.get(&lr.label) {
                        for (f, shift) in lr.record.features.iter_mut().zip(d) {
                            if let FeatureValue::Num(v) = f {
                                *v += shift;
                            }
                        }
                    }
                }
            }
            lr
        })
        .collect()
}

/// Reads labeled records; `t` follows file order and ids are `r<t>`.
pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Vec<LabeledRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Csv { row: 1, message: e.to_string() })?.clone();
    let column = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Csv {
            row: 1,
            message: format!("missing column `{name}`"),
        })
    };
    let feature_cols = schema
        .features
        .iter()
        .map(|f| column(&f.name))
        .collect::<Result<Vec<_>>>()?;
    let label_col = column(&schema.label_column)?;

    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        // line 1 is the header
        let line = i + 2;
        let row = row.map_err(|e| Error::Csv { row: line, message: e.to_string() })?;
        let cell = |c: usize| row.get(c).unwrap_or("").trim();
        let mut features = Vec::with_capacity(feature_cols.len());
        for (spec, &c) in schema.features.iter().zip(&feature_cols) {
            let raw = cell(c);
            let value = match &spec.kind {
                FeatureKind::Numeric => match raw.parse::<f64>() {
                    Ok(v) if v.is_finite() => FeatureValue::Num(v),
                    _ => {
                        return Err(Error::Csv {
                            row: line,
                            message: format!("bad numeric cell `{raw}` in column `{}`", spec.name),
                        })
                    }
                },
                FeatureKind::Categorical { categories } => {
                    if !categories.iter().any(|c| c == raw) {
                        return Err(Error::Csv {
                            row: line,
                            message: format!("unknown category `{raw}` in column `{}`", spec.name),
                        });
                    }
                    FeatureValue::Cat(raw.to_string())
                }
            };
            features.push(value);
        }
        let label = cell(label_col);
        if schema.label_index(label).is_none() {
            return Err(Error::Csv {
                row: line,
                message: format!("unknown label `{label}`"),
            });
        }
        let t = out.len() as u64;
        let mut record = Record::new(format!("r{t}"), features);
        record.t = t;
        out.push(LabeledRecord {
            record,
            label: label.to_string(),
        });
    }
    Ok(out)
}

pub fn load_csv(path: &Path, schema: &Schema) -> Result<Vec<LabeledRecord>> {
    read_csv(std::fs::File::open(path)?, schema)
}

pub fn write_csv<W: Write>(writer: W, schema: &Schema, records: &[LabeledRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut header: Vec<&str> = schema.features.iter().map(|f| f.name.as_str()).collect();
    header.push(&schema.label_column);
    wtr.write_record(&header).map_err(csv_err)?;
    for lr in records {
        let mut row: Vec<String> = lr
            .record
            .features
            .iter()
            .map(|f| match f {
                FeatureValue::Num(v) => format!("{v:?}"),
                FeatureValue::Cat(c) => c.clone(),
            })
            .collect();
        row.push(lr.label.clone());
        wtr.write_record(&row).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_csv(path: &Path, schema: &Schema, records: &[LabeledRecord]) -> Result<()> {
    write_csv(std::fs::File::create(path)?, schema, records)
}
