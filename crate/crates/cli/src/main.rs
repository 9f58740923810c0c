use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bridget_core::session::read_jsonl_file;
use bridget_core::stream::{apply_drift, blob_schema, gen_blobs, save_csv};
use bridget_core::{replay, simulate, BlobSpec, DriftSpec, Error, ExperimentConfig};
use bridget_service::{AppState, ServiceConfig};
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(name = "bridget", version, about = "Hybrid human/machine labeling engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a simulated labeling experiment for every configured seed.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic labeled stream as CSV.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-drive a journal and check its final state hash.
    Replay { file: PathBuf },
    /// Serve the HTTP interface.
    Serve {
        #[arg(long)]
        port: u16,
        #[arg(long)]
        config: PathBuf,
    },
}

/// Exit status 2 for bad usage or config, 1 for anything that failed at run time.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn usage(e: impl Display) -> Self {
        Failure::Usage(e.to_string())
    }

    fn runtime(e: impl Display) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::usage(e),
            other => Failure::runtime(other),
        }
    }
}

#[derive(Debug, Deserialize)]
struct GenDataSpec {
    #[serde(flatten)]
    blobs: BlobSpec,
    #[serde(default)]
    drift: Option<DriftSpec>,
}

fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn run_simulate(config: &Path, out: &Path) -> Result<(), Failure> {
    let cfg: ExperimentConfig = load_json(config)?;
    cfg.validate()?;
    let summary = simulate(&cfg, out)?;
    println!("seed  records  final_acc  oracle_acc  mic_records  query_rate_mic  notices  final_phase");
    for r in &summary.runs {
        println!(
            "{:<5} {:>7}  {:>9.4}  {:>10.4}  {:>11}  {:>14.4}  {:>7}  {:?}",
            r.seed,
            r.records,
            r.final_accuracy,
            r.oracle_accuracy,
            r.mic_records,
            r.mic_query_rate,
            r.notices.len(),
            r.final_phase
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn run_gen_data(spec: &Path, out: &Path) -> Result<(), Failure> {
    let spec: GenDataSpec = load_json(spec)?;
    spec.blobs.validate()?;
    let b = &spec.blobs;
    let schema = blob_schema(b.classes, b.dims);
    let mut rows = gen_blobs(b.n, b.classes, b.dims, b.separation, b.seed.unwrap_or(0));
    if let Some(drift) = &spec.drift {
        drift.validate(&schema)?;
        rows = apply_drift(rows, drift);
    }
    save_csv(out, &schema, &rows)?;
    println!("wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}

fn run_replay(file: &Path) -> Result<(), Failure> {
    if !file.is_file() {
        return Err(Failure::Usage(format!("{}: no such file", file.display())));
    }
    let result = read_jsonl_file(file).and_then(|entries| replay(&entries).map(|r| (entries.len(), r)));
    let (n, r) = match result {
        Ok(ok) => ok,
        Err(e @ Error::CorruptLog { .. }) => {
            println!("FAIL {e}");
            return Err(Failure::runtime(e));
        }
        Err(e) => return Err(e.into()),
    };
    let hash = r.final_hash();
    println!("entries {n}");
    println!("state_hash {hash}");
    match &r.recorded_hash {
        Some(recorded) if *recorded == hash => println!("PASS final state matches the recorded checkpoint"),
        Some(recorded) => {
            println!("FAIL recorded checkpoint {recorded} differs");
            return Err(Failure::Runtime("state hash mismatch".into()));
        }
        None => println!("PASS replayed cleanly (no checkpoint to compare)"),
    }
    Ok(())
}

fn run_serve(port: u16, config: &Path) -> Result<(), Failure> {
    let cfg: ServiceConfig = load_json(config)?;
    cfg.engine.validate()?;
    let state = AppState::open(cfg).map_err(Failure::runtime)?;
    let rt = tokio::runtime::Runtime::new().map_err(Failure::runtime)?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await.map_err(Failure::runtime)?;
        eprintln!("listening on {}", listener.local_addr().map_err(Failure::runtime)?);
        bridget_service::serve(listener, state).await.map_err(Failure::runtime)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { config, out } => run_simulate(config, out),
        Command::GenData { spec, out } => run_gen_data(spec, out),
        Command::Replay { file } => run_replay(file),
        Command::Serve { port, config } => run_serve(*port, config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
