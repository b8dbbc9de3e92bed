use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hydronets::data::{generate_synthetic, SynthConfig};
use hydronets::experiment::{
    prepare, run_all_basins, run_depth_experiment, run_scarcity,
    write_output, ExperimentConfig, ExperimentError, ExperimentOutput, Metric, Prepared,
    ReportFormat,
};
use hydronets::metrics::evaluate;
use hydronets::model::{init_flat, init_hydronet, load_checkpoint, save_checkpoint, LoadedModel};
use hydronets::region::{parse_region, validate, ValidationReport};
use hydronets::training::{history_csv, train, train_flat, TrainConfig, WeightSpec};

#[derive(Parser)]
#[command(name = "hydronets", version, about = "River-network structured linear forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check that a region file describes a single-drain inverted tree.
    Validate { region: PathBuf },
    /// Generate a synthetic region and series from a TOML config.
    GenSynth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one model and write its checkpoint and loss history.
    Train(TrainArgs),
    /// Score a checkpoint on the test split of a config's data.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Depth sweep at the drain.
    ExpDepth(ExpArgs),
    /// Focused HydroNet versus flat baseline for every target basin.
    ExpBasins(ExpArgs),
    /// Shrinking training sets against a fixed test tail.
    ExpScarcity(ExpArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed list; repeat for several seeds.
    #[arg(long)]
    seed: Vec<u64>,
    #[arg(long, value_parser = ["r2", "r2_persist"])]
    metric: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Hydronets,
    Linear,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    model: ModelKind,
    /// Target basin. HydroNets focus their loss on it; defaults to the drain for linear.
    #[arg(long)]
    target: Option<String>,
    /// Subtree depth of the linear model; defaults to the config's flat_depth.
    #[arg(long)]
    depth: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct ExpArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Run jobs one after another instead of on the thread pool.
    #[arg(long)]
    serial: bool,
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn load_config(c: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if !c.seed.is_empty() {
        cfg.seeds = c.seed.clone();
    }
    if let Some(m) = &c.metric {
        cfg.metric = Metric::parse(m).expect("clap restricts values");
    }
    if let Some(out) = &c.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn cmd_validate(region: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(region).map_err(|e| io_err(region, e))?;
    let report = match parse_region(&text) {
        Ok(g) => validate(&g),
        Err(e) => ValidationReport::from_region_error(&e),
    };
    print!("{report}");
    if report.ok {
        Ok(())
    } else {
        Err(Failure::Validation(format!("{} is not a valid region", region.display())))
    }
}

fn cmd_gen_synth(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let text = std::fs::read_to_string(config).map_err(|e| io_err(config, e))?;
    let mut sc: SynthConfig = toml::from_str(&text).map_err(|e| Failure::Validation(e.to_string()))?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    let (g, s) = generate_synthetic(&sc).map_err(|e| Failure::Validation(e.to_string()))?;
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    write(&out.join("region.json"), &g.to_json())?;
    write(&out.join("series.csv"), &s.to_csv())?;
    println!("wrote {} basins x {} steps to {}", g.len(), s.len(), out.display());
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.common)?;
    let data = prepare(&cfg)?;
    let seed = cfg.seeds[0];
    let runtime = |e: &dyn std::fmt::Display| Failure::Runtime(e.to_string());
    if let Some(t) = &args.target {
        if !data.graph.contains(t) {
            return Err(Failure::Validation(format!("unknown basin `{t}`")));
        }
    }
    let (model, history) = match args.model {
        ModelKind::Hydronets => {
            let weights = match &args.target {
                Some(t) => WeightSpec::Focused {
                    target: t.clone(),
                    alpha: cfg.alpha,
                },
                None => cfg.train.weights.clone(),
            };
            let tc = TrainConfig {
                seed,
                weights,
                ..cfg.train.clone()
            };
            let p = init_hydronet(data.graph.clone(), cfg.dims.dims(), seed).map_err(|e| runtime(&e))?;
            let (p, history) = train(p, &data.train, &tc).map_err(|e| runtime(&e))?;
            (LoadedModel::HydroNet(p), history)
        }
        ModelKind::Linear => {
            let target = match &args.target {
                Some(t) => t.clone(),
                None => data.graph.drain().unwrap_or_default().to_string(),
            };
            let depth = args.depth.unwrap_or(cfg.flat_depth);
            let p = init_flat(&data.graph, &target, depth, cfg.dims.dims())
                .map_err(|e| Failure::Validation(e.to_string()))?;
            let set = data.train.restrict(p.graph()).map_err(|e| runtime(&e))?;
            let tc = TrainConfig {
                seed,
                ..cfg.train.clone()
            };
            let (p, history) = train_flat(p, &set, &tc).map_err(|e| runtime(&e))?;
            (LoadedModel::Flat(p), history)
        }
    };
    std::fs::create_dir_all(&cfg.out).map_err(|e| io_err(&cfg.out, e))?;
    write(&cfg.out.join("checkpoint.json"), &save_checkpoint(&model))?;
    write(&cfg.out.join("history.csv"), &history_csv(&history))?;
    if let Some(last) = history.last() {
        println!("final training loss {last}");
    }
    println!("wrote checkpoint and history to {}", cfg.out.display());
    Ok(())
}

fn cmd_evaluate(common: &Common, checkpoint: &Path) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let data = prepare(&cfg)?;
    let text = std::fs::read_to_string(checkpoint).map_err(|e| io_err(checkpoint, e))?;
    let model = load_checkpoint(&text, &data.graph).map_err(|e| Failure::Validation(e.to_string()))?;
    let report = match &model {
        LoadedModel::HydroNet(p) => evaluate(p, &data.test, Some(&data.norm)),
        LoadedModel::Flat(p) => evaluate(p, &data.test, Some(&data.norm)),
    }
    .map_err(|e| Failure::Runtime(e.to_string()))?;
    let csv = report.to_csv();
    print!("{csv}");
    std::fs::create_dir_all(&cfg.out).map_err(|e| io_err(&cfg.out, e))?;
    write(&cfg.out.join("metrics.csv"), &csv)
}

fn cmd_experiment(
    args: &ExpArgs,
    run: fn(&ExperimentConfig, &Prepared) -> Result<ExperimentOutput, ExperimentError>,
) -> Result<(), Failure> {
    let mut cfg = load_config(&args.common)?;
    if args.serial {
        cfg.parallel = false;
    }
    let data = prepare(&cfg)?;
    let out = run(&cfg, &data)?;
    let format = match args.format {
        Format::Csv => ReportFormat::Csv,
        Format::Json => ReportFormat::Json,
    };
    let written = write_output(&cfg, &out, format)?;
    print!("{}", out.table.to_csv());
    for p in written {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate { region } => cmd_validate(region),
        Command::GenSynth { config, out, seed } => cmd_gen_synth(config, out, *seed),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate { common, checkpoint } => cmd_evaluate(common, checkpoint),
        Command::ExpDepth(args) => cmd_experiment(args, run_depth_experiment),
        Command::ExpBasins(args) => cmd_experiment(args, run_all_basins),
        Command::ExpScarcity(args) => cmd_experiment(args, run_scarcity),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
