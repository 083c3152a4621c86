//! Command-line interface.
//!
//! Exit codes: 0 success, 1 failure (failed prompts, invalid store, failed
//! check), 2 bad configuration or usage.

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::config::{process_env, ConfigError, RunConfig};
use crate::mock::{MockBackend, MockServer};
use crate::orchestrator::{run_pipeline, write_summary, RunError, CHECKPOINT_DIR};
use crate::prompts::{demo_prompts, read_prompts};
use crate::reports::{self, DEFAULT_KS, REWARD_MODEL_METHOD};
use crate::store::{self, DatasetStore, StoreSpec, MANIFEST_FILE};
use crate::verify;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

/// Run configuration snapshot written next to the outputs.
pub const CONFIG_SNAPSHOT: &str = "run-config.toml";

#[derive(Debug, Parser)]
#[command(name = "synthalign", version, about = "Build and analyze synthetic image-text preference datasets")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed; overrides `pipeline.global_seed` and seeds `sample`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log filter, e.g. `info` or `synthalign=debug`.
    #[arg(long, global = true)]
    pub log_level: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the pipeline over a prompt file.
    Run(RunArgs),
    /// Compute a report from a dataset.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Check a dataset's records, blobs and manifest.
    Validate(StoreArg),
    /// Write the flat DPO training export.
    Export(ExportArgs),
    /// Draw a seeded random subset into a new dataset.
    Sample(SampleArgs),
    /// Run the preference-math self-checks.
    VerifyMath,
    /// Serve the mock backend over HTTP.
    MockServe(MockServeArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Prompt file, one `{prompt_id, text, topic}` record per line.
    #[arg(long, conflicts_with = "demo", required_unless_present = "demo")]
    pub prompts: Option<PathBuf>,
    /// Use N built-in demo prompts instead of a prompt file.
    #[arg(long)]
    pub demo: Option<usize>,
    /// Overrides `run_id` from the config.
    #[arg(long)]
    pub run_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct StoreArg {
    /// Dataset directory; defaults to the output directory.
    #[arg(long)]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Winning guidance-scale shares, per topic by default.
    Guidance {
        #[command(flatten)]
        store: StoreArg,
        /// One group over all topics.
        #[arg(long)]
        overall: bool,
    },
    /// Top-k agreement between scorer rankings.
    Overlap {
        #[command(flatten)]
        store: StoreArg,
        /// External ranking files, one `{prompt_id, method_id, ranking}` per line.
        #[arg(long = "rankings")]
        rankings: Vec<PathBuf>,
        /// Leave out the rankings derived from the stored image scores.
        #[arg(long)]
        no_reward_model: bool,
        /// Values of k.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
        k: Vec<usize>,
    },
    /// Tally judge outcomes.
    Judge {
        /// Counts object or one outcome per line.
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub store: StoreArg,
    /// Export name; writes `<out>/<name>.dpo.jsonl`.
    #[arg(long, default_value = "dataset")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub store: StoreArg,
    /// Records to draw.
    #[arg(long)]
    pub n: usize,
    /// Directory of the new dataset.
    #[arg(long)]
    pub dest: PathBuf,
}

#[derive(Debug, Args)]
pub struct MockServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
}

struct Failure {
    code: u8,
    msg: String,
}

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_USAGE,
        msg: msg.to_string(),
    }
}

fn failure(msg: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_FAILURE,
        msg: msg.to_string(),
    }
}

fn init_logging(level: &str) {
    let filter = tracing_subscriber::EnvFilter::try_new(level).unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            f.code
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(usage)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.pipeline.global_seed = seed;
    }
    if let Some(level) = &cli.log_level {
        cfg.log_level = level.clone();
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<u8, Failure> {
    let cfg = load_config(&cli)?;
    init_logging(&cfg.log_level);
    let store_dir = |s: &StoreArg| s.store.clone().unwrap_or_else(|| cfg.out_dir.clone());
    match &cli.command {
        Command::Run(args) => cmd_run(cfg.clone(), args),
        Command::Analyze(a) => cmd_analyze(&cfg, a, &store_dir),
        Command::Validate(s) => cmd_validate(&store_dir(s)),
        Command::Export(e) => {
            let root = store_dir(&e.store);
            let out = cfg.out_dir.join(format!("{}.dpo.jsonl", e.name));
            let n = store::export_dpo(&root, &out).map_err(failure)?;
            println!("exported {n} records to {}", out.display());
            Ok(EXIT_OK)
        }
        Command::Sample(s) => {
            let report = store::sample_subset(&store_dir(&s.store), s.n, cli.seed.unwrap_or(0), &s.dest).map_err(failure)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(EXIT_OK)
        }
        Command::VerifyMath => {
            let results = verify::run_all();
            print!("{}", verify::render_table(&results));
            Ok(if results.iter().all(|r| r.passed) { EXIT_OK } else { EXIT_FAILURE })
        }
        Command::MockServe(m) => cmd_mock_serve(&cfg, m.addr),
    }
}

fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(failure)
}

fn cmd_run(mut cfg: RunConfig, args: &RunArgs) -> Result<u8, Failure> {
    if let Some(id) = &args.run_id {
        cfg.run_id = id.clone();
        cfg.validate().map_err(usage)?;
    }
    let (gateway, _mock) = cfg.build_gateway(&process_env).map_err(|e| match e {
        ConfigError::Io { .. } => failure(e),
        e => usage(e),
    })?;
    let prompts = match (&args.prompts, args.demo) {
        (Some(p), _) => read_prompts(p).map_err(usage)?,
        (None, Some(n)) => demo_prompts(n, &cfg.pipeline.topics, cfg.pipeline.global_seed),
        (None, None) => return Err(usage("either --prompts or --demo is required")),
    };
    crate::orchestrator::check_prompts(&prompts, &cfg.pipeline).map_err(usage)?;

    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).map_err(|e| failure(format!("{}: {e}", out.display())))?;
    let snapshot = out.join(CONFIG_SNAPSHOT);
    std::fs::write(&snapshot, cfg.to_toml()).map_err(|e| failure(format!("{}: {e}", snapshot.display())))?;
    let spec = StoreSpec {
        guidance_scales: cfg.pipeline.guidance_scales.clone(),
        topics: cfg.pipeline.topics.clone(),
        config: serde_json::to_value(&cfg.pipeline).expect("config serializes"),
    };
    let mut store = DatasetStore::create_or_open(out, &spec).map_err(failure)?;

    let rt = runtime()?;
    let summary = rt
        .block_on(run_pipeline(
            &cfg.run_id,
            &prompts,
            &cfg.pipeline,
            &gateway,
            &mut store,
            &out.join(CHECKPOINT_DIR),
        ))
        .map_err(|e| match e {
            RunError::Prompts(_) => usage(e),
            e => failure(e),
        })?;
    write_summary(out, &summary).map_err(failure)?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    println!(
        "paired: {} degenerate: {} failed: {} skipped: {} new: {}",
        summary.paired, summary.degenerate, summary.failed, summary.skipped, summary.new_records
    );
    Ok(if summary.failed == 0 { EXIT_OK } else { EXIT_FAILURE })
}

fn valid_records(root: &Path) -> Result<(Vec<store::PreferenceRecord>, store::Manifest), Failure> {
    let report = store::validate_dataset(root).map_err(failure)?;
    if !report.passed {
        return Err(failure(format!(
            "{} fails validation with {} violation(s); run `synthalign validate --store {}`",
            root.display(),
            report.violations.len(),
            root.display()
        )));
    }
    let manifest: store::Manifest = serde_json::from_slice(
        &std::fs::read(root.join(MANIFEST_FILE)).map_err(|e| failure(format!("{}: {e}", root.display())))?,
    )
    .map_err(failure)?;
    Ok((store::read_records(root).map_err(failure)?, manifest))
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn cmd_analyze(cfg: &RunConfig, cmd: &AnalyzeCommand, store_dir: &dyn Fn(&StoreArg) -> PathBuf) -> Result<u8, Failure> {
    match cmd {
        AnalyzeCommand::Guidance { store, overall } => {
            let (records, manifest) = valid_records(&store_dir(store))?;
            let report = reports::guidance_report(&records, &manifest.guidance_scales, !overall).map_err(failure)?;
            print_written(&reports::write_guidance(&cfg.out_dir, &report).map_err(failure)?);
        }
        AnalyzeCommand::Overlap {
            store,
            rankings,
            no_reward_model,
            k,
        } => {
            let mut methods = Vec::new();
            if !no_reward_model {
                let (records, _) = valid_records(&store_dir(store))?;
                methods.push((
                    REWARD_MODEL_METHOD.to_string(),
                    reports::reward_model_rankings(&records, REWARD_MODEL_METHOD),
                ));
            }
            for path in rankings {
                methods.extend(reports::read_rankings(path).map_err(failure)?);
            }
            let report = reports::overlap_report(&methods, k).map_err(failure)?;
            print_written(&reports::write_overlap(&cfg.out_dir, &report).map_err(failure)?);
        }
        AnalyzeCommand::Judge { input } => {
            let report = reports::read_judge_input(input).map_err(failure)?;
            print!("{}", reports::judge_table(&report));
            print_written(&reports::write_judge(&cfg.out_dir, &report).map_err(failure)?);
        }
    }
    Ok(EXIT_OK)
}

fn cmd_validate(root: &Path) -> Result<u8, Failure> {
    let report = store::validate_dataset(root).map_err(failure)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(if report.passed { EXIT_OK } else { EXIT_FAILURE })
}

fn cmd_mock_serve(cfg: &RunConfig, addr: SocketAddr) -> Result<u8, Failure> {
    let backend = Arc::new(MockBackend::new(cfg.mock.clone(), cfg.pipeline.global_seed));
    let rt = runtime()?;
    rt.block_on(async {
        let server = MockServer::spawn(addr, backend)
            .await
            .map_err(|e| failure(format!("cannot bind {addr}: {e}")))?;
        println!("mock backend listening on {}", server.base_url());
        tokio::select! {
            r = server.wait() => r.map_err(failure)?,
            _ = tokio::signal::ctrl_c() => {}
        }
        Ok(EXIT_OK)
    })
}
