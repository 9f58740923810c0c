use bridget_core::stream::{apply_drift, blob_schema, gen_blobs, read_csv, save_csv, load_csv, write_csv, DriftKind};
use bridget_core::{DriftSpec, Error, FeatureValue, LabeledRecord, Learner, Model, ModelKind};
use std::collections::BTreeMap;

/// Batch-trained naive Bayes on the first half, accuracy on the second.
fn holdout_accuracy(classes: usize, separation: f64, seed: u64) -> f64 {
    let rows = gen_blobs(2000, classes, 2, separation, seed);
    let schema = blob_schema(classes, 2);
    let (train, test) = rows.split_at(1000);
    let mut model = Model::new(ModelKind::NaiveBayes, &schema);
    for r in train {
        model.learn_one(&r.record, schema.label_index(&r.label).unwrap()).unwrap();
    }
    let correct = test
        .iter()
        .filter(|r| model.predict_proba(&r.record).unwrap().argmax() == schema.label_index(&r.label).unwrap())
        .count();
    correct as f64 / test.len() as f64
}

#[test]
fn no_separation_means_chance_accuracy() {
    for classes in [2, 3, 4] {
        let acc = holdout_accuracy(classes, 0.0, 11);
        assert!((acc - 1.0 / classes as f64).abs() <= 0.05, "{classes} classes: {acc}");
    }
}

#[test]
fn wide_separation_is_nearly_perfect() {
    for seed in 0..3 {
        let acc = holdout_accuracy(2, 6.0, seed);
        assert!(acc >= 0.99, "seed {seed}: {acc}");
    }
}

#[test]
fn class_means_sit_at_the_requested_distance() {
    let rows = gen_blobs(20_000, 2, 2, 4.0, 3);
    let mean = |label: &str| {
        let pts: Vec<&LabeledRecord> = rows.iter().filter(|r| r.label == label).collect();
        let n = pts.len() as f64;
        (0..2)
            .map(|j| pts.iter().map(|r| r.record.features[j].as_num().unwrap()).sum::<f64>() / n)
            .collect::<Vec<_>>()
    };
    let (a, b) = (mean("A"), mean("B"));
    let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    assert!((d - 4.0).abs() < 0.1, "distance {d}");
}

#[test]
fn csv_round_trip_is_exact() {
    let rows = gen_blobs(257, 3, 4, 2.5, 8);
    let schema = blob_schema(3, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("blobs.csv");
    save_csv(&path, &schema, &rows).unwrap();
    let back = load_csv(&path, &schema).unwrap();
    assert_eq!(back, rows);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 258);
    assert_eq!(text.lines().next().unwrap(), "x0,x1,x2,x3,label");
}

#[test]
fn csv_errors_name_the_row() {
    let schema = blob_schema(2, 2);
    let bad_label = "x0,x1,label\n1.0,2.0,A\n3.0,4.0,Q\n";
    match read_csv(bad_label.as_bytes(), &schema) {
        Err(Error::Csv { row, message }) => {
            assert_eq!(row, 3);
            assert!(message.contains('Q'), "{message}");
        }
        other => panic!("expected csv error, got {other:?}"),
    }
    let bad_number = "label,x1,x0\nA,1.0,zz\n";
    assert!(matches!(read_csv(bad_number.as_bytes(), &schema), Err(Error::Csv { row: 2, .. })));
    let missing = "x0,label\n1.0,A\n";
    assert!(matches!(read_csv(missing.as_bytes(), &schema), Err(Error::Csv { row: 1, .. })));
    // Columns are matched by name, not position.
    let shuffled = "label,x1,x0\nB,1.5,-2.0\n";
    let rows = read_csv(shuffled.as_bytes(), &schema).unwrap();
    assert_eq!(rows[0].record.features, [FeatureValue::Num(-2.0), FeatureValue::Num(1.5)]);
    let mut out = Vec::new();
    write_csv(&mut out, &schema, &rows).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), "x0,x1,label\n-2.0,1.5,B\n");
}

#[test]
fn flip_at_600_touches_exactly_400_rows() {
    let base = gen_blobs(1000, 2, 2, 4.0, 21);
    let flipped = apply_drift(base.clone(), &DriftSpec::label_flip(600, &[("A", "B"), ("B", "A")]));
    let changed: Vec<usize> = (0..1000).filter(|&i| base[i].label != flipped[i].label).collect();
    assert_eq!(changed.len(), 400);
    assert_eq!(changed.first(), Some(&600));
    assert!(base.iter().zip(&flipped).all(|(a, b)| a.record == b.record));

    let past_end = apply_drift(base.clone(), &DriftSpec::label_flip(1000, &[("A", "B")]));
    assert_eq!(past_end, base);
}

#[test]
fn mean_shift_moves_only_the_named_class() {
    let base = gen_blobs(100, 2, 2, 4.0, 2);
    let spec = DriftSpec {
        at_t: 50,
        kind: DriftKind::MeanShift { delta: BTreeMap::from([("B".to_string(), vec![1.0, -1.0])]) },
    };
    let shifted = apply_drift(base.clone(), &spec);
    for (a, b) in base.iter().zip(&shifted) {
        let moved = a.record.t >= 50 && a.label == "B";
        let dx = b.record.features[0].as_num().unwrap() - a.record.features[0].as_num().unwrap();
        assert!((dx - if moved { 1.0 } else { 0.0 }).abs() < 1e-12, "t = {}", a.record.t);
    }
}

#[test]
fn blobs_replay_identically() {
    assert_eq!(gen_blobs(300, 3, 2, 1.0, 4), gen_blobs(300, 3, 2, 1.0, 4));
    assert_ne!(gen_blobs(300, 3, 2, 1.0, 4), gen_blobs(300, 3, 2, 1.0, 5));
    let rows = gen_blobs(301, 3, 2, 1.0, 4);
    for c in ["A", "B", "C"] {
        let n = rows.iter().filter(|r| r.label == c).count() as i64;
        assert!((n - 100).abs() <= 1, "{c}: {n}");
    }
}
