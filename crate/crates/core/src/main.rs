use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use ctxsense::cluster::ClusterSelection;
use ctxsense::features::{read_matrix_csv, write_exclusions_jsonl, write_matrix_csv, FeatureMatrix, Task, FEATURE_NAMES};
use ctxsense::hrv::NnCleaning;
use ctxsense::learn::conditioning_csv;
use ctxsense::run::{self, Provenance, RunConfig, RunError};
use ctxsense::synth::{write_study, Completeness, Preset, SynthConfig};

#[derive(Parser, Debug)]
#[command(name = "ctxsense", version, about = "Wristband feature extraction and social-context analysis")]
struct Cli {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// JSON run configuration; keys left out keep their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract the 13-feature table from a study directory.
    Extract(ExtractArgs),
    /// Univariate tests, k-best curve and importances for one or all tasks.
    Analyze(AnalyzeArgs),
    /// HDBSCAN on a task's conditioned features.
    Cluster(ClusterArgs),
    /// Write a synthetic study.
    Synth(SynthArgs),
    /// Benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    study: PathBuf,
    #[arg(long, default_value = "features.csv")]
    out: PathBuf,
    /// none, rules, automatic or median.
    #[arg(long)]
    nn_filter: Option<String>,
    /// Use only the first S seconds of each interval for NN features.
    #[arg(long, value_name = "S")]
    window: Option<f64>,
    /// Exclusion log (JSON lines); defaults to OUT with `.exclusions.jsonl`.
    #[arg(long)]
    exclusions: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    features: PathBuf,
    /// A task token or `all`.
    #[arg(long)]
    task: String,
    #[arg(long, default_value = "report")]
    out: PathBuf,
    /// Study directory for the NN-filter benchmark under `--task all`.
    #[arg(long)]
    study: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    task: Task,
    /// Number of ANOVA-selected features.
    #[arg(long, conflicts_with = "columns")]
    k: Option<usize>,
    /// Explicit feature names, comma separated.
    #[arg(long, value_delimiter = ',')]
    columns: Option<Vec<String>>,
    #[arg(long)]
    min_cluster_size: Option<usize>,
    #[arg(long)]
    min_samples: Option<usize>,
    #[arg(long)]
    leaf: bool,
    #[arg(long, default_value = "clusters")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value = "study")]
    out: PathBuf,
    #[arg(long, conflicts_with = "complete")]
    preset: Option<Preset>,
    #[arg(long)]
    participants: Option<usize>,
    /// Every participant attends all five events.
    #[arg(long)]
    complete: bool,
    /// PPG saturation bursts per minute.
    #[arg(long)]
    artifact_rate: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum BenchCommand {
    /// Macro accuracy per NN-cleaning method and window length.
    NnFilters {
        #[arg(long)]
        study: PathBuf,
        #[arg(long, default_value = "bench")]
        out: PathBuf,
    },
    /// The four centring/scaling combinations.
    Conditioning {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value = "bench")]
        out: PathBuf,
    },
}

fn write(path: &Path, body: &str) -> Result<(), RunError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| RunError::Internal(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, body).map_err(|e| RunError::Internal(format!("{}: {e}", path.display())))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn read_features(path: &Path) -> Result<FeatureMatrix, RunError> {
    let bytes = fs::read(path).map_err(|e| RunError::Usage(format!("{}: {e}", path.display())))?;
    read_matrix_csv(&bytes).map_err(|e| RunError::Parse(format!("{}: {e}", path.display())))
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn cmd_extract(a: &ExtractArgs, mut cfg: RunConfig) -> Result<(), RunError> {
    if let Some(name) = &a.nn_filter {
        cfg.extract.nn_cleaning =
            NnCleaning::from_name(name).ok_or_else(|| RunError::Usage(format!("unknown NN filter {name:?}")))?;
    }
    if let Some(w) = a.window {
        if !(w > 0.0) {
            return Err(RunError::Usage("--window must be positive".into()));
        }
        cfg.extract.nn_window_s = Some(w);
    }
    let out = run::extract(&a.study, &cfg)?;
    let prov = Provenance::new("extract", &[("study", &display(&a.study))], &cfg);
    write(&a.out, &write_matrix_csv(&out.matrix, Some(&prov.line())))?;
    let log_path = a.exclusions.clone().unwrap_or_else(|| a.out.with_extension("exclusions.jsonl"));
    write(&log_path, &format!("{}\n{}", prov.line(), write_exclusions_jsonl(&out.exclusions)))?;
    if !out.exclusions.is_empty() {
        warn!("{} intervals excluded, see {}", out.exclusions.len(), log_path.display());
    }
    Ok(())
}

fn parse_tasks(s: &str) -> Result<Vec<Task>, RunError> {
    if s == "all" {
        Ok(Task::ALL.to_vec())
    } else {
        Ok(vec![s.parse::<Task>().map_err(RunError::Usage)?])
    }
}

fn cmd_analyze(a: &AnalyzeArgs, cfg: RunConfig) -> Result<(), RunError> {
    let tasks = parse_tasks(&a.task)?;
    let matrix = read_features(&a.features)?;
    let features = display(&a.features);
    for &task in &tasks {
        let report = run::analyze_task(&matrix, task, &cfg)?;
        let prov = Provenance::new(&format!("analyze {task}"), &[("features", &features)], &cfg);
        let base = a.out.join(task.token());
        write(&base.with_extension("json"), &prov.json(&report))?;
        write(&a.out.join(format!("{task}_univariate.csv")), &prov.csv(&report.univariate.figure_csv()))?;
        write(&a.out.join(format!("{task}_kbest.csv")), &prov.csv(&report.kbest.figure_csv()))?;
        write(&a.out.join(format!("{task}_importance.csv")), &prov.csv(&report.importance.figure_csv()))?;
    }
    if tasks.len() > 1 {
        conditioning_outputs(&matrix, &features, &a.out, &cfg)?;
        match &a.study {
            Some(study) => nn_outputs(study, &a.out, &cfg)?,
            None => warn!("no --study given, skipping the NN-filter benchmark"),
        }
    }
    Ok(())
}

fn conditioning_outputs(matrix: &FeatureMatrix, features: &str, out: &Path, cfg: &RunConfig) -> Result<(), RunError> {
    let rows = run::conditioning(matrix, &Task::ALL, cfg)?;
    let prov = Provenance::new("bench conditioning", &[("features", features)], cfg);
    write(&out.join("conditioning.json"), &prov.json(&rows))?;
    write(&out.join("conditioning.csv"), &prov.csv(&conditioning_csv(&rows)))
}

fn nn_outputs(study: &Path, out: &Path, cfg: &RunConfig) -> Result<(), RunError> {
    let report = run::nn_benchmark(study, &Task::ALL, cfg)?;
    let prov = Provenance::new("bench nn-filters", &[("study", &display(study))], cfg);
    write(&out.join("nn_filters.json"), &prov.json(&report))?;
    write(&out.join("nn_filters.csv"), &prov.csv(&report.figure_csv()))
}

fn cmd_cluster(a: &ClusterArgs, cfg: RunConfig) -> Result<(), RunError> {
    let matrix = read_features(&a.features)?;
    let mut params = cfg.cluster;
    if let Some(m) = a.min_cluster_size {
        params.min_cluster_size = m;
    }
    if let Some(m) = a.min_samples {
        params.min_samples = m;
    }
    if a.leaf {
        params.selection = ClusterSelection::Leaf;
    }
    let columns = match &a.columns {
        None => None,
        Some(names) => Some(
            names
                .iter()
                .map(|n| {
                    FEATURE_NAMES
                        .iter()
                        .position(|f| f == n)
                        .ok_or_else(|| RunError::Usage(format!("unknown feature {n:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?,
        ),
    };
    let out = run::cluster_task(&matrix, a.task, columns.as_deref(), a.k, &params, &cfg)?;
    let prov = Provenance::new(&format!("cluster {}", a.task), &[("features", &display(&a.features))], &cfg);
    let task = a.task.token();
    write(&a.out.join(format!("{task}_clusters.json")), &prov.json(&out))?;
    write(&a.out.join(format!("{task}_clusters.csv")), &prov.csv(&out.report.table_csv(task)))?;
    write(&a.out.join(format!("{task}_points.csv")), &prov.csv(&out.points_csv))
}

fn cmd_synth(a: &SynthArgs, cfg: RunConfig) -> Result<(), RunError> {
    let mut synth: SynthConfig = match a.preset {
        Some(p) => SynthConfig::preset(p, cfg.seed),
        None => cfg.synth.clone(),
    };
    if a.complete {
        synth.completeness = Completeness::Complete;
    }
    if let Some(n) = a.participants {
        synth.participants = n;
    }
    if let Some(r) = a.artifact_rate {
        synth.artifact_rate_per_min = r;
    }
    synth.validate()?;
    let truth = write_study(&synth, &a.out)?;
    let resolved = RunConfig { synth, ..cfg };
    let prov = Provenance::new("synth", &[], &resolved);
    write(&a.out.join("provenance.json"), &format!("{}\n", serde_json::to_string_pretty(&prov).expect("serialises")))?;
    info!("{} participants, {} intervals", truth.participants.len(), truth.intervals.len());
    Ok(())
}

fn run_cli(cli: Cli) -> Result<(), RunError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if cli.jobs.is_some() {
        cfg.jobs = cli.jobs;
    }
    let seed = cli.seed.unwrap_or(cfg.seed);
    let cfg = cfg.with_seed(seed);
    cfg.validate()?;
    if let Some(j) = cfg.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| RunError::Internal(e.to_string()))?;
    }
    match &cli.command {
        Command::Extract(a) => cmd_extract(a, cfg),
        Command::Analyze(a) => cmd_analyze(a, cfg),
        Command::Cluster(a) => cmd_cluster(a, cfg),
        Command::Synth(a) => cmd_synth(a, cfg),
        Command::Bench(BenchCommand::NnFilters { study, out }) => nn_outputs(study, out, &cfg),
        Command::Bench(BenchCommand::Conditioning { features, out }) => {
            let matrix = read_features(features)?;
            conditioning_outputs(&matrix, &display(features), out, &cfg)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CTXSENSE_LOG", "warn")).init();
    let cli = Cli::parse();
    match run_cli(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
