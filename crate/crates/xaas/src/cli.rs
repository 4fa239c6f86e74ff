//! The `xaas` command line.
//!
//! Exit codes: 0 success; 1 a step or replay check failed, or the server
//! could not start; 2 bad usage, unreadable or invalid configuration;
//! 3 a service role could not be reached; 4 unknown run or dataset.

use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use tracing_subscriber::EnvFilter;
use xaas_core::dataset::{read_dataset, write_dataset, DatasetError, MANIFEST_FILE};
use xaas_core::orchestrator::{
    heatmap, normalize_for_radar, replay, run, to_csv, PipelineConfig, QualityReport, RunError, RunOptions,
};
use xaas_core::perturb::{self, SeverityTable};
use xaas_core::provenance::{Mismatch, StepStatus};
use xaas_core::service::{LocalServices, Role, ServiceApi, ServiceError};
use xaas_core::store::{Store, StoreError, REPORT_FILE};
use xaas_core::synthetic;
use xaas_core::types::{PerturbationKind, PerturbationSpec};
use xaas_core::wire::{PerturbRequest, WireDataset};
use xaas_gateway::{spawn_until_ctrl_c, GatewayError, HttpClient, Served};

use crate::import::{import_png_dir, ImportError};
use crate::{normalize_url, services_for, DEFAULT_STORE};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_UNREACHABLE: u8 = 3;
pub const EXIT_UNKNOWN: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "xaas", version, about = "Run and inspect XAI evaluation pipelines")]
pub struct Cli {
    /// Store directory.
    #[arg(long, global = true, env = "XAAS_STORE", default_value = DEFAULT_STORE)]
    pub store: PathBuf,
    /// Print one JSON object per line on stdout.
    #[arg(long, global = true)]
    pub porcelain: bool,
    /// Log level for stderr (error, warn, info, debug); XAAS_LOG overrides.
    #[arg(long, global = true, default_value = "warn")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute the pipelines of a configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Store directory for this run (overrides --store).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        run_id: Option<String>,
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Serve one role, or all four on one port.
    Serve {
        #[arg(long, value_parser = parse_served)]
        role: Served,
        #[arg(long, default_value_t = 8000)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Per-request timeout in seconds.
        #[arg(long, default_value_t = 300)]
        timeout: u64,
    },
    /// Apply one corruption to a registered dataset or a dataset directory.
    #[command(group(clap::ArgGroup::new("source").required(true).args(["dataset", "input"])))]
    Perturb {
        /// Registered dataset id.
        #[arg(long)]
        dataset: Option<String>,
        /// Dataset directory, or its manifest.json, to perturb outside the store.
        #[arg(long = "in", value_name = "MANIFEST", requires = "out")]
        input: Option<PathBuf>,
        /// Directory for the perturbed copy of `--in`.
        #[arg(long, value_name = "DIR", requires = "input")]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        severity: u8,
        #[arg(long)]
        seed: Option<u64>,
        /// Data role to call instead of the local store.
        #[arg(long)]
        url: Option<String>,
    },
    /// Print a finished run's report.
    Report {
        #[arg(long)]
        run: String,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Re-execute a run from its provenance and compare step digests.
    Replay {
        #[arg(long)]
        run: String,
    },
    /// Register a synthetic dataset.
    Synth {
        #[arg(long, value_enum, default_value_t = SynthKind::Image)]
        kind: SynthKind,
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Image side in pixels.
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        id: Option<String>,
    },
    /// Register a directory of PNG files as an image dataset.
    Import {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        id: Option<String>,
    },
    /// List runs in the store.
    Runs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Radar,
    Heatmap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    GaussianNoise,
    DefocusBlur,
    Pixelate,
    TabularNoise,
    Identity,
}

impl From<KindArg> for PerturbationKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::GaussianNoise => PerturbationKind::GaussianNoise,
            KindArg::DefocusBlur => PerturbationKind::DefocusBlur,
            KindArg::Pixelate => PerturbationKind::Pixelate,
            KindArg::TabularNoise => PerturbationKind::TabularNoise,
            KindArg::Identity => PerturbationKind::Identity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    Image,
    Tabular,
}

fn parse_served(s: &str) -> Result<Served, String> {
    s.parse()
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        let code = match e {
            StoreError::UnknownRun(_) | StoreError::UnknownDataset(_) => EXIT_UNKNOWN,
            StoreError::BadName(_) => EXIT_USAGE,
            _ => EXIT_FAILED,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<ServiceError> for Failure {
    fn from(e: ServiceError) -> Self {
        let code = match e {
            ServiceError::NotFound(_) => EXIT_UNKNOWN,
            ServiceError::Invalid(_) | ServiceError::Conflict(_) => EXIT_USAGE,
            ServiceError::Unavailable { .. } => EXIT_UNREACHABLE,
            _ => EXIT_FAILED,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<GatewayError> for Failure {
    fn from(e: GatewayError) -> Self {
        let code = match e {
            GatewayError::BadUrl(_) => EXIT_USAGE,
            _ => EXIT_FAILED,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<ImportError> for Failure {
    fn from(e: ImportError) -> Self {
        Failure::new(EXIT_USAGE, e.to_string())
    }
}

fn run_failure(e: RunError) -> Failure {
    let code = match &e {
        RunError::Config(_) | RunError::Plan(_) | RunError::RunExists(_) | RunError::Unresolved { .. } => EXIT_USAGE,
        RunError::Store(StoreError::UnknownRun(_)) => EXIT_UNKNOWN,
        _ => EXIT_FAILED,
    };
    Failure::new(code, e.to_string())
}

/// Human text or JSON lines on stdout.
struct Out {
    porcelain: bool,
}

impl Out {
    fn emit(&self, event: &str, mut fields: Value, human: impl FnOnce() -> String) {
        let mut stdout = std::io::stdout().lock();
        if self.porcelain {
            fields["event"] = json!(event);
            let _ = writeln!(stdout, "{fields}");
        } else {
            let _ = writeln!(stdout, "{}", human());
        }
        let _ = stdout.flush();
    }

    fn raw(&self, text: &str) {
        let mut stdout = std::io::stdout().lock();
        let _ = stdout.write_all(text.as_bytes());
        if !text.ends_with('\n') {
            let _ = stdout.write_all(b"\n");
        }
        let _ = stdout.flush();
    }
}

fn open_store(path: &Path) -> Result<Arc<Store>, Failure> {
    Store::open(path)
        .map(Arc::new)
        .map_err(|e| Failure::new(EXIT_FAILED, format!("cannot open store {}: {e}", path.display())))
}

fn load_config(path: &Path) -> Result<PipelineConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::new(EXIT_USAGE, format!("cannot read {}: {e}", path.display())))?;
    let stripped = xaas_core::orchestrator::config::strip_line_comments(&text);
    PipelineConfig::from_slice(stripped.as_bytes()).map_err(|e| Failure::new(EXIT_USAGE, format!("{}: {e}", path.display())))
}

fn cmd_run(
    out: &Out,
    store_dir: &Path,
    config: &Path,
    run_id: Option<String>,
    parallelism: Option<usize>,
) -> Result<u8, Failure> {
    let cfg = load_config(config)?;
    let store = open_store(store_dir)?;
    let local = Arc::new(LocalServices::new(store.clone()));
    let services = services_for(&cfg, &local)?;
    let mut opts = RunOptions::for_config(&cfg);
    opts.run_id = run_id;
    opts.parallelism = parallelism;
    let outcome = run(&cfg, &services, &store, &opts).map_err(run_failure)?;
    if out.porcelain {
        for s in &outcome.log.steps {
            out.emit(
                "step",
                json!({"step_id": s.step_id, "role": s.role, "status": s.status, "seconds": s.seconds, "error": s.error}),
                String::new,
            );
        }
    }
    let report_path = store.run_dir(&outcome.run_id).join(REPORT_FILE);
    let failed = outcome.failure().map(|(s, e)| (s.step_id.clone(), e.to_string()));
    out.emit(
        "run",
        json!({
            "run_id": outcome.run_id,
            "status": outcome.log.status,
            "steps": outcome.log.steps.len(),
            "skipped": outcome.skipped.len(),
            "failed_step": failed.as_ref().map(|f| &f.0),
            "report": report_path,
        }),
        || {
            let ok = outcome.log.steps.iter().filter(|s| s.status == StepStatus::Ok).count();
            format!(
                "{}\n{} of {} steps ok, {} skipped; report: {}",
                outcome.run_id,
                ok,
                outcome.plan.len(),
                outcome.skipped.len(),
                report_path.display()
            )
        },
    );
    match failed {
        None => Ok(EXIT_OK),
        Some((step, err)) => match outcome.unreachable_role() {
            Some(role) => Err(Failure::new(
                EXIT_UNREACHABLE,
                format!("{role} service unreachable (step {step} failed: {err})"),
            )),
            None => Err(Failure::new(EXIT_FAILED, format!("step {step} failed: {err}"))),
        },
    }
}

fn cmd_serve(out: &Out, store_dir: &Path, served: Served, host: IpAddr, port: u16, timeout: u64) -> Result<u8, Failure> {
    let store = open_store(store_dir)?;
    let services = Arc::new(LocalServices::new(store));
    let handle = spawn_until_ctrl_c(services, served, SocketAddr::new(host, port), Duration::from_secs(timeout))?;
    out.emit("serving", json!({"role": served.name(), "url": handle.url()}), || {
        format!("serving {} on {}", served.name(), handle.url())
    });
    handle
        .join()
        .map_err(|e| Failure::new(EXIT_FAILED, format!("server stopped: {e}")))?;
    Ok(EXIT_OK)
}

fn cmd_perturb(
    out: &Out,
    store_dir: &Path,
    dataset: &str,
    kind: KindArg,
    severity: u8,
    seed: Option<u64>,
    url: Option<&str>,
) -> Result<u8, Failure> {
    let spec = PerturbationSpec::new(kind.into(), severity, seed).map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))?;
    let req = PerturbRequest {
        kind: spec.kind,
        severity: spec.severity,
        seed: spec.seed,
    };
    let api: Arc<dyn ServiceApi> = match url {
        Some(u) => Arc::new(HttpClient::new(&normalize_url(u), Role::Data, Duration::from_secs(300))?),
        None => Arc::new(LocalServices::new(open_store(store_dir)?)),
    };
    let resp = api.perturb(dataset, &req)?;
    out.emit("perturbed", serde_json::to_value(&resp).expect("serialisable"), || {
        format!("{} -> {} ({})", resp.source_id, resp.perturbed_id, resp.digest)
    });
    Ok(EXIT_OK)
}

fn cmd_perturb_files(out: &Out, input: &Path, dir: &Path, kind: KindArg, severity: u8, seed: Option<u64>) -> Result<u8, Failure> {
    let spec = PerturbationSpec::new(kind.into(), severity, seed).map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))?;
    let src = if input.file_name().is_some_and(|n| n == MANIFEST_FILE) {
        input.parent().unwrap_or(Path::new("."))
    } else {
        input
    };
    let ds = read_dataset(src).map_err(|e| match e {
        DatasetError::Io(ref io) if io.kind() == std::io::ErrorKind::NotFound => {
            Failure::new(EXIT_UNKNOWN, format!("no dataset at {}: {e}", src.display()))
        }
        e => Failure::new(EXIT_USAGE, format!("{}: {e}", src.display())),
    })?;
    let perturbed = perturb::apply(&spec, &ds, &SeverityTable::default()).map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))?;
    let manifest = write_dataset(&perturbed, dir).map_err(|e| Failure::new(EXIT_FAILED, format!("{}: {e}", dir.display())))?;
    let digest = perturbed.content_digest().map_err(|e| Failure::new(EXIT_FAILED, e.to_string()))?;
    let v = json!({"source_id": ds.id, "perturbed_id": manifest.id, "digest": digest, "out": dir});
    out.emit("perturbed", v, || format!("{} -> {} in {} ({digest})", ds.id, manifest.id, dir.display()));
    Ok(EXIT_OK)
}

fn load_report(store: &Store, run_id: &str) -> Result<QualityReport, Failure> {
    let bytes = match store.read_run_file(run_id, REPORT_FILE) {
        Ok(b) => b,
        Err(StoreError::MissingArtifact { .. }) => {
            return Err(Failure::new(EXIT_UNKNOWN, format!("run `{run_id}` has no report")))
        }
        Err(e) => return Err(e.into()),
    };
    serde_json::from_slice(&bytes).map_err(|e| Failure::new(EXIT_FAILED, format!("corrupt report: {e}")))
}

fn cmd_report(out: &Out, store_dir: &Path, run_id: &str, format: Format) -> Result<u8, Failure> {
    let store = open_store(store_dir)?;
    let report = load_report(&store, run_id)?;
    let pretty = |v: &dyn erased::Json| v.render(out.porcelain);
    match format {
        Format::Json => out.raw(&pretty(&report)),
        Format::Csv => out.raw(&to_csv(&report).map_err(|e| Failure::new(EXIT_FAILED, e.to_string()))?),
        Format::Radar => {
            let radar = normalize_for_radar(&report.models).map_err(|e| Failure::new(EXIT_FAILED, e.to_string()))?;
            for w in &radar.warnings {
                eprintln!("warning: {w}");
            }
            out.raw(&pretty(&radar));
        }
        Format::Heatmap => out.raw(&pretty(&heatmap(&report))),
    }
    Ok(EXIT_OK)
}

fn cmd_replay(out: &Out, store_dir: &Path, run_id: &str) -> Result<u8, Failure> {
    let store = open_store(store_dir)?;
    let recorded = store.read_provenance(run_id)?;
    let cfg = PipelineConfig::from_value(recorded.config.clone())
        .map_err(|e| Failure::new(EXIT_FAILED, format!("recorded configuration is invalid: {e}")))?;
    let local = Arc::new(LocalServices::new(store.clone()));
    let services = services_for(&cfg, &local)?;
    let outcome = replay(&store, &services, run_id, &RunOptions::for_config(&cfg)).map_err(run_failure)?;
    let r = &outcome.report;
    if out.porcelain {
        for m in &r.mismatches {
            out.emit("mismatch", serde_json::to_value(m).expect("serialisable"), String::new);
        }
    } else if !r.mismatches.is_empty() {
        out.raw(&mismatch_table(r));
    }
    out.emit(
        "replay",
        json!({
            "run_id": run_id,
            "replay_run_id": outcome.fresh.run_id,
            "matched": r.matched,
            "skipped_nondeterministic": r.skipped_nondeterministic,
            "mismatches": r.mismatches.len(),
        }),
        || {
            format!(
                "replay {} of {}: {} matched, {} non-deterministic skipped, {} mismatched",
                outcome.fresh.run_id,
                run_id,
                r.matched,
                r.skipped_nondeterministic,
                r.mismatches.len()
            )
        },
    );
    Ok(if r.is_clean() { EXIT_OK } else { EXIT_FAILED })
}

fn short(d: &str) -> String {
    d.chars().take(12).collect()
}

fn mismatch_table(r: &xaas_core::provenance::ReplayReport) -> String {
    let rows: Vec<[String; 4]> = r
        .mismatches
        .iter()
        .map(|m| {
            let (reason, rec, fresh) = match &m.mismatch {
                Mismatch::MissingInFresh => ("missing_in_fresh", String::new(), String::new()),
                Mismatch::ExtraInFresh => ("extra_in_fresh", String::new(), String::new()),
                Mismatch::Request { recorded, fresh } => ("request", short(recorded), short(fresh)),
                Mismatch::Response { recorded, fresh } => (
                    "response",
                    recorded.as_deref().map(short).unwrap_or_default(),
                    fresh.as_deref().map(short).unwrap_or_default(),
                ),
                Mismatch::Status => ("status", String::new(), String::new()),
                Mismatch::TamperedArtifact { artifact } => ("tampered_artifact", artifact.clone(), String::new()),
            };
            [m.step_id.clone(), reason.to_string(), rec, fresh]
        })
        .collect();
    let head = ["STEP", "REASON", "RECORDED", "FRESH"].map(String::from);
    let mut widths = [0usize; 4];
    for row in std::iter::once(&head).chain(&rows) {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut s = String::new();
    for row in std::iter::once(&head).chain(&rows) {
        let line: Vec<String> = row.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
        s.push_str(line.join("  ").trim_end());
        s.push('\n');
    }
    s
}

fn register(out: &Out, store_dir: &Path, ds: &xaas_core::dataset::Dataset) -> Result<u8, Failure> {
    let store = open_store(store_dir)?;
    let info = LocalServices::new(store).register_dataset(&WireDataset::from_dataset(ds))?;
    out.emit("dataset", serde_json::to_value(&info).expect("serialisable"), || {
        format!("{} ({} {:?} samples, shape {:?})", info.dataset_id, info.count, info.kind, info.shape)
    });
    Ok(EXIT_OK)
}

fn cmd_synth(out: &Out, store_dir: &Path, kind: SynthKind, count: usize, seed: u64, size: Option<usize>, id: Option<String>) -> Result<u8, Failure> {
    if count == 0 {
        return Err(Failure::new(EXIT_USAGE, "--count must be positive"));
    }
    let mut ds = match (kind, size) {
        (SynthKind::Image, None) => synthetic::image_dataset(count, seed),
        (SynthKind::Image, Some(s)) if s >= 4 => synthetic::image_dataset_sized(count, s, seed),
        (SynthKind::Image, Some(_)) => return Err(Failure::new(EXIT_USAGE, "--size must be at least 4")),
        (SynthKind::Tabular, None) => synthetic::tabular_dataset(count, seed),
        (SynthKind::Tabular, Some(_)) => return Err(Failure::new(EXIT_USAGE, "--size applies to images only")),
    };
    if let Some(id) = id {
        ds.id = id;
    }
    register(out, store_dir, &ds)
}

fn cmd_runs(out: &Out, store_dir: &Path) -> Result<u8, Failure> {
    let store = open_store(store_dir)?;
    let runs = if store.root().join("runs").is_dir() { store.list_runs()? } else { vec![] };
    for r in runs {
        let status = store.read_provenance(&r).map(|l| json!(l.status)).unwrap_or(Value::Null);
        out.emit("run", json!({"run_id": r, "status": status}), || {
            format!("{r}\t{}", status.as_str().unwrap_or("-"))
        });
    }
    Ok(EXIT_OK)
}

mod erased {
    use serde::Serialize;

    /// Object-safe serialisation for the report formats.
    pub trait Json {
        fn render(&self, compact: bool) -> String;
    }

    impl<T: Serialize> Json for T {
        fn render(&self, compact: bool) -> String {
            if compact {
                serde_json::to_string(self).expect("serialisable")
            } else {
                serde_json::to_string_pretty(self).expect("serialisable")
            }
        }
    }
}

pub fn execute(cli: Cli) -> Result<u8, Failure> {
    let out = Out { porcelain: cli.porcelain };
    let store = cli.store.as_path();
    match cli.command {
        Command::Run {
            config,
            out: dir,
            run_id,
            parallelism,
        } => cmd_run(&out, dir.as_deref().unwrap_or(store), &config, run_id, parallelism),
        Command::Serve {
            role,
            port,
            host,
            timeout,
        } => cmd_serve(&out, store, role, host, port, timeout),
        Command::Perturb {
            input: Some(input),
            out: Some(dir),
            kind,
            severity,
            seed,
            ..
        } => cmd_perturb_files(&out, &input, &dir, kind, severity, seed),
        Command::Perturb {
            dataset,
            kind,
            severity,
            seed,
            url,
            ..
        } => cmd_perturb(&out, store, dataset.as_deref().unwrap_or_default(), kind, severity, seed, url.as_deref()),
        Command::Report { run, format } => cmd_report(&out, store, &run, format),
        Command::Replay { run } => cmd_replay(&out, store, &run),
        Command::Synth {
            kind,
            count,
            seed,
            size,
            id,
        } => cmd_synth(&out, store, kind, count, seed, size, id),
        Command::Import { dir, id } => {
            let ds = import_png_dir(&dir, id.as_deref())?;
            register(&out, store, &ds)
        }
        Command::Runs => cmd_runs(&out, store),
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = EnvFilter::try_from_env("XAAS_LOG").unwrap_or_else(|_| EnvFilter::new(&cli.log));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
    let porcelain = cli.porcelain;
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            if porcelain {
                println!("{}", json!({"event": "error", "code": f.code, "message": f.message}));
            }
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
