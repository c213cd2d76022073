use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hvs_core::ingest::{write_hierarchy, write_panel, write_returns};
use hvs_core::report::{cmd_run, ResponseMode, RunConfig, RunSummary};
use hvs_core::synth::{generate, returns_with_volatility, PlantSpec};
use hvs_core::validation::PairedMethod;
use hvs_core::{HvsError, Result};

const RESPONSE_COLUMN: &str = "log_volatility";
const DAYS_PER_YEAR: usize = 250;

#[derive(Parser)]
#[command(name = "hvs", version, about = "Hierarchical variable selection for ESG panels")]
struct Cli {
    /// Worker threads for the parallel stages.
    #[arg(long, global = true, env = "HVS_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline with every artifact enabled by the flags.
    Run(RunArgs),
    /// Pipeline plus the temporal and leave-one-company-out designs.
    Validate(RunArgs),
    /// Pipeline plus the benchmark table only.
    Bench(RunArgs),
    /// Write a synthetic panel, hierarchy and ground truth.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ResponseArg {
    Column,
    LogVolatility,
    Returns,
}

#[derive(Clone, Copy, ValueEnum)]
enum PairedArg {
    TTest,
    SignedRank,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; flags given alongside override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    panel: Option<PathBuf>,
    #[arg(long)]
    hierarchy: Option<PathBuf>,
    #[arg(long)]
    returns: Option<PathBuf>,
    #[arg(long)]
    factors: Option<PathBuf>,
    #[arg(long, value_enum)]
    response: Option<ResponseArg>,
    /// Panel column holding a precomputed response.
    #[arg(long, default_value = RESPONSE_COLUMN)]
    response_column: String,
    #[arg(long, env = "HVS_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    availability_threshold: Option<f64>,
    #[arg(long)]
    window_years: Option<usize>,
    #[arg(long, value_enum)]
    paired_method: Option<PairedArg>,
    #[arg(long)]
    temporal: bool,
    #[arg(long)]
    cross_sectional: bool,
    #[arg(long)]
    validate_benchmarks: bool,
    #[arg(long)]
    no_benchmarks: bool,
    #[arg(long)]
    no_box_cox: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Standard,
    Null,
    OverfitProne,
    SectorScale,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, conflicts_with = "spec")]
    preset: Option<Preset>,
    /// JSON plant specification.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "HVS_OUTPUT_DIR")]
    output_dir: PathBuf,
    /// Write daily returns whose log volatility is the response, in place
    /// of the response column.
    #[arg(long)]
    returns: bool,
}

fn invalid(msg: impl Into<String>) -> HvsError {
    HvsError::InvalidInput(msg.into())
}

fn read_input(p: &Path) -> Result<String> {
    fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))
}

fn build_config(a: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => serde_json::from_str::<RunConfig>(&read_input(p)?)?,
        None => {
            let panel = a.panel.clone().ok_or_else(|| invalid("--panel or --config is required"))?;
            let hierarchy = a.hierarchy.clone().ok_or_else(|| invalid("--hierarchy or --config is required"))?;
            let out = a.output_dir.clone().ok_or_else(|| invalid("--output-dir or HVS_OUTPUT_DIR is required"))?;
            RunConfig::new(panel, hierarchy, ResponseMode::PrecomputedColumn(a.response_column.clone()), out, 0)
        }
    };
    if let Some(p) = &a.panel {
        cfg.panel = p.clone();
    }
    if let Some(p) = &a.hierarchy {
        cfg.hierarchy = p.clone();
    }
    if a.returns.is_some() {
        cfg.returns = a.returns.clone();
    }
    if a.factors.is_some() {
        cfg.factors = a.factors.clone();
    }
    if let Some(r) = a.response {
        cfg.response = match r {
            ResponseArg::Column => ResponseMode::PrecomputedColumn(a.response_column.clone()),
            ResponseArg::LogVolatility => ResponseMode::LogVolatilityFromReturns,
            ResponseArg::Returns => ResponseMode::ReturnsResponse,
        };
    }
    if let Some(d) = &a.output_dir {
        cfg.output_dir = d.clone();
    }
    if cfg.output_dir.as_os_str().is_empty() {
        return Err(invalid("no output directory given"));
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(k) = a.folds {
        cfg.hvs.cv.n_folds = k;
    }
    if let Some(t) = a.availability_threshold {
        cfg.preprocess.availability_threshold = t;
    }
    if let Some(w) = a.window_years {
        cfg.window_years = w;
    }
    if let Some(m) = a.paired_method {
        cfg.paired_method = match m {
            PairedArg::TTest => PairedMethod::TTest,
            PairedArg::SignedRank => PairedMethod::SignedRank,
        };
    }
    let t = &mut cfg.toggles;
    t.temporal |= a.temporal;
    t.cross_sectional |= a.cross_sectional;
    t.validate_benchmarks |= a.validate_benchmarks;
    t.benchmarks &= !a.no_benchmarks;
    t.box_cox &= !a.no_box_cox;
    Ok(cfg)
}

fn synth(a: &SynthArgs) -> Result<Vec<PathBuf>> {
    let seed = a.seed.unwrap_or(0);
    let mut spec = match (&a.spec, a.preset) {
        (Some(p), _) => serde_json::from_str::<PlantSpec>(&read_input(p)?)?,
        (None, Some(Preset::Null)) => PlantSpec::null_design(seed),
        (None, Some(Preset::OverfitProne)) => PlantSpec::overfit_prone(seed),
        (None, Some(Preset::SectorScale)) => PlantSpec::sector_scale(seed),
        (None, Some(Preset::Standard) | None) => PlantSpec::standard(seed),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    spec.validate()?;
    let out = generate(&spec)?;
    let dir = &a.output_dir;
    fs::create_dir_all(dir)?;
    let path = |name: &str| dir.join(name);
    let response_column = (!a.returns).then_some(RESPONSE_COLUMN);
    write_panel(&path("panel.csv"), &out.data, response_column)?;
    write_hierarchy(&path("hierarchy.json"), &out.tree)?;
    fs::write(path("truth.json"), serde_json::to_string_pretty(&out.truth)? + "\n")?;
    fs::write(path("spec.json"), serde_json::to_string_pretty(&spec)? + "\n")?;
    let mut files = vec![path("panel.csv"), path("hierarchy.json"), path("truth.json"), path("spec.json")];
    if a.returns {
        let y = out.data.require_response()?;
        let r = returns_with_volatility(out.data.keys(), y, 0.0, DAYS_PER_YEAR, spec.seed)?;
        write_returns(fs::File::create(path("returns.csv"))?, &r)?;
        files.push(path("returns.csv"));
    }
    Ok(files)
}

fn print_files(files: &[PathBuf]) {
    for f in files {
        println!("{}", f.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| invalid(format!("thread pool: {e}")))?;
    }
    let summary = |s: RunSummary| {
        log::info!("config hash {}", s.config_hash);
        print_files(&s.files);
    };
    match cli.command {
        Command::Run(a) => summary(cmd_run(&build_config(&a)?)?),
        Command::Validate(a) => {
            let mut cfg = build_config(&a)?;
            cfg.toggles.temporal = true;
            cfg.toggles.cross_sectional = true;
            cfg.toggles.benchmarks = false;
            cfg.toggles.box_cox = false;
            summary(cmd_run(&cfg)?)
        }
        Command::Bench(a) => {
            let mut cfg = build_config(&a)?;
            cfg.toggles.benchmarks = true;
            cfg.toggles.temporal = false;
            cfg.toggles.cross_sectional = false;
            cfg.toggles.box_cox = false;
            summary(cmd_run(&cfg)?)
        }
        Command::Synth(a) => print_files(&synth(&a)?),
    }
    Ok(())
}

fn error_line(e: &HvsError, code: u8) -> String {
    serde_json::json!({ "error": e.to_string(), "exit_code": code }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if e.is_input_error() { 2 } else { 1 };
            eprintln!("{}", error_line(&e, code));
            ExitCode::from(code)
        }
    }
}
