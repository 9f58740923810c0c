use bridget_core::metrics::FadingConfig;
use bridget_core::session::{read_jsonl, read_jsonl_file, EntryKind};
use bridget_core::sim::{run_seed, simulate};
use bridget_core::{
    replay, ChallengeResponse, ClientEvent, ConsentPolicy, DecidedBy, EngineConfig, Error, ExperimentConfig,
    LabeledRecord, Prompt, Record, Schema, Session, SessionConfig,
};

fn config() -> SessionConfig {
    SessionConfig {
        engine: EngineConfig::default(),
        schema: Schema::numeric(1, &["A", "B"]).unwrap(),
        seed: (0..4)
            .map(|i| LabeledRecord {
                record: Record::numeric(format!("s{i}"), &[i as f64]),
                label: "A".into(),
            })
            .collect(),
    }
}

fn offer(v: f64) -> ClientEvent {
    ClientEvent::OfferRecord { record: Record::numeric(format!("x{v}"), &[v]) }
}

fn label(y: &str) -> ClientEvent {
    ClientEvent::UserLabel { label: y.into() }
}

fn sim_cfg() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::blobs(300, 4.0, vec![1, 2]);
    cfg.engine.k_max = 50;
    cfg.oracle.consent_policy = ConsentPolicy::Always;
    cfg.oracle.explanation_rate = 0.2;
    cfg
}

#[test]
fn lines_follow_the_engine() {
    let mut s = Session::create("s1", config()).unwrap();
    s.handle(offer(1.0)).unwrap();
    let kinds: Vec<EntryKind> = s.journal().iter().map(|e| e.kind).collect();
    assert_eq!(kinds, [EntryKind::SessionCreated, EntryKind::RecordOffered, EntryKind::PromptIssued]);
    assert_eq!(s.journal()[2].payload["prompt"]["kind"], "need_user_label");

    let out = s.handle(label("B")).unwrap();
    let skp = match out.prompt {
        Some(Prompt::SkepticalChallenge { skepticality, .. }) => skepticality,
        other => panic!("expected challenge, got {other:?}"),
    };
    let last = s.journal().last().unwrap();
    assert_eq!(last.kind, EntryKind::PromptIssued);
    assert_eq!(last.payload["prompt"]["skepticality"], skp);

    let out = s
        .handle(ClientEvent::ChallengeResponse { response: ChallengeResponse::Accept })
        .unwrap();
    assert_eq!(out.decision.unwrap().decided_by, DecidedBy::HumanAcceptedSuggestion);
    let tail: Vec<EntryKind> = s.journal()[5..].iter().map(|e| e.kind).collect();
    assert_eq!(tail, [EntryKind::ResponseReceived, EntryKind::DecisionFinalized, EntryKind::ModelUpdated]);
    for (i, e) in s.journal().iter().enumerate() {
        assert_eq!((e.seq, e.ts), (i as u64, i as u64));
    }
}

#[test]
fn metrics_view_counts_conserve() {
    let mut s = Session::create("m", config()).unwrap();
    let fresh = s.metrics();
    assert_eq!((fresh.k, fresh.p, fresh.records_offered), (0, 0, 0));
    assert!(fresh.fea_model.values().chain(fresh.fea_human.values()).all(|v| *v == 0.5));

    let out = run_seed(&sim_cfg(), 1).unwrap();
    let m = out.session.metrics();
    assert_eq!(m.records_offered, 300);
    assert_eq!(m.auto_accepts + m.callbacks_low_belief + m.callbacks_random_check + m.hic_decisions, m.records_offered);
    assert!(m.auto_accepts > 0);
    s.handle(offer(2.0)).unwrap();
    assert_eq!(s.metrics().records_offered, 1);
    assert_eq!(s.metrics().pending_prompt.as_deref(), Some("need_user_label"));
}

#[test]
fn duplicate_creates_share_initial_state() {
    let a = Session::create("a", config()).unwrap();
    let b = Session::create("b", config()).unwrap();
    assert_eq!(a.state_hash(), b.state_hash());
    let bad = SessionConfig {
        engine: EngineConfig { tau_demote: 0.95, ..EngineConfig::default() },
        ..config()
    };
    match Session::create("c", bad) {
        Err(Error::Config { path, .. }) => assert_eq!(path, "engine.tau_demote"),
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn header_only_journal_replays_to_the_start_state() {
    let s = Session::create("h", config()).unwrap();
    let entries = read_jsonl(s.journal_jsonl().as_bytes()).unwrap();
    assert_eq!(replay(&entries).unwrap().final_hash(), s.state_hash());
}

#[test]
fn simulated_journal_replays_bit_identically() {
    let out = run_seed(&sim_cfg(), 2).unwrap();
    let text = out.session.journal_jsonl();
    assert!(text.ends_with('\n') && !text.contains("\n\n"));
    let entries = read_jsonl(text.as_bytes()).unwrap();
    assert!(entries.iter().any(|e| e.kind == EntryKind::RngDraw));
    assert!(entries.iter().any(|e| e.kind == EntryKind::ExplanationServed));
    let r = replay(&entries).unwrap();
    assert!(r.verified());
    assert_eq!(r.session.engine().snapshot_json(), out.session.engine().snapshot_json());
    assert_eq!(r.session.journal_jsonl(), text);
}

fn corrupt_seq(err: Error) -> u64 {
    match err {
        Error::CorruptLog { seq, .. } => seq,
        other => panic!("expected corrupt log, got {other:?}"),
    }
}

#[test]
fn damaged_journals_name_the_line() {
    let out = run_seed(&sim_cfg(), 1).unwrap();
    let text = out.session.journal_jsonl();
    let lines: Vec<&str> = text.lines().collect();

    // Cut in the middle of line 40.
    let cut: String = lines[..40].join("\n") + "\n" + &lines[40][..lines[40].len() / 2];
    assert_eq!(corrupt_seq(read_jsonl(cut.as_bytes()).unwrap_err()), 40);

    // Drop line 12: sequence gap.
    let mut gap = lines.clone();
    gap.remove(12);
    let entries = read_jsonl(gap.join("\n").as_bytes()).unwrap();
    assert_eq!(corrupt_seq(replay(&entries).err().unwrap()), 12);

    // Flip one final label.
    let i = lines.iter().position(|l| l.contains("\"decision_finalized\"")).unwrap();
    let flipped = lines[i].replace("\"final_label\":\"A\"", "\"final_label\":\"X\"").replace(
        "\"final_label\":\"B\"",
        "\"final_label\":\"A\"",
    );
    let flipped = flipped.replace("\"final_label\":\"X\"", "\"final_label\":\"B\"");
    assert_ne!(flipped, lines[i]);
    let mut bad = lines.clone();
    bad[i] = &flipped;
    let entries = read_jsonl(bad.join("\n").as_bytes()).unwrap();
    assert_eq!(corrupt_seq(replay(&entries).err().unwrap()), i as u64);
}

#[test]
fn file_sessions_append_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.jsonl");
    let mut s = Session::create_with_file("f", config(), &path).unwrap();
    s.handle(offer(1.0)).unwrap();
    s.handle(label("A")).unwrap();
    assert!(Session::create_with_file("f", config(), &path).is_err(), "existing journal overwritten");
    let on_disk = std::fs::read_to_string(&path).unwrap();
    assert_eq!(on_disk, s.journal_jsonl());

    let mut resumed = Session::resume_file(&path).unwrap();
    assert_eq!(resumed.state_hash(), s.state_hash());
    resumed.handle(offer(2.0)).unwrap();
    let entries = read_jsonl_file(&path).unwrap();
    assert_eq!(entries.len(), s.journal().len() + 2);
    assert_eq!(replay(&entries).unwrap().final_hash(), resumed.state_hash());
}

#[test]
fn simulate_twice_gives_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg = sim_cfg();
    let summary = simulate(&cfg, &a).unwrap();
    simulate(&cfg, &b).unwrap();
    assert_eq!(summary.runs.len(), 2);
    let mut names: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["seed-1.jsonl", "seed-2.jsonl", "summary.json"]);
    for n in &names {
        assert_eq!(std::fs::read(a.join(n)).unwrap(), std::fs::read(b.join(n)).unwrap(), "{n} differs");
    }
}

#[test]
fn truthful_user_is_never_challenged() {
    let mut cfg = ExperimentConfig::blobs(200, 2.0, vec![5]);
    cfg.seed_rows = 0;
    cfg.engine.alpha = 1.0;
    cfg.engine.fading = FadingConfig::default();
    cfg.oracle.base_accuracy = 1.0;
    cfg.oracle.consent_policy = ConsentPolicy::Never;
    let s = run_seed(&cfg, 5).unwrap().summary;
    assert_eq!(s.challenges, 0);
    assert_eq!(s.final_accuracy, 1.0);
}
