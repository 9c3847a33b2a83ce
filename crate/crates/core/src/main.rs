use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tomosar::config::PipelineConfig;
use tomosar::pipeline::{parse_stages, run_pipeline, Stage};
use tomosar::plot::{plot_file, PlotKind};
use tomosar::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

#[derive(Parser)]
#[command(name = "tomosar", version, about = "Multi-master TomoSAR height reconstruction pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the scene and the interferogram stack.
    Simulate(RunArgs),
    /// Non-local filtering of the simulated stack.
    Filter(RunArgs),
    /// Per-pixel elevation inversion and model selection.
    Invert(RunArgs),
    /// Robust per-object height fusion.
    Fuse(RunArgs),
    /// Compare fused heights with the reference model.
    Validate(RunArgs),
    /// Render plots, either the pipeline's or a single artifact.
    Plot(PlotArgs),
    /// Run every stage, or the subset given by --stages.
    All(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated stages (only with `all`).
    #[arg(long)]
    stages: Option<String>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (overrides the configured one).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Pipeline configuration; renders the plots of its output directory.
    #[arg(long, required_unless_present = "input")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Single artifact to render: report JSON or float raster sidecar.
    #[arg(long, requires_all = ["kind", "output"], conflicts_with = "config")]
    input: Option<PathBuf>,
    /// histogram | height-raster
    #[arg(long)]
    kind: Option<String>,
    /// Output SVG path.
    #[arg(long)]
    output: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Config(String),
    Stage(String),
}

fn classify(e: Error) -> Failure {
    match e {
        Error::Config(_) => Failure::Config(e.to_string()),
        _ => Failure::Stage(e.to_string()),
    }
}

fn load(path: &PathBuf, seed: Option<u64>, workers: Option<usize>, out: Option<PathBuf>) -> Result<PipelineConfig, Failure> {
    let mut config = PipelineConfig::load(path).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(w) = workers {
        config.workers = w;
    }
    if let Some(o) = out {
        config.out = o;
    }
    Ok(config)
}

fn run(config: &PipelineConfig, stages: &[Stage]) -> Result<(), Failure> {
    let summary = run_pipeline(config, stages, &config.out).map_err(classify)?;
    for (stage, seconds) in &summary.stages {
        println!("{stage}: {seconds:.2} s");
    }
    println!("artifacts in {}", summary.out.display());
    Ok(())
}

fn execute(command: Command) -> Result<(), Failure> {
    let single = |stage: Stage, args: RunArgs| -> Result<(), Failure> {
        if args.stages.is_some() {
            return Err(Failure::Usage("--stages is only accepted by `all`".into()));
        }
        let config = load(&args.config, args.seed, args.workers, args.out)?;
        run(&config, &[stage])
    };
    match command {
        Command::Simulate(a) => single(Stage::Simulate, a),
        Command::Filter(a) => single(Stage::Filter, a),
        Command::Invert(a) => single(Stage::Invert, a),
        Command::Fuse(a) => single(Stage::Fuse, a),
        Command::Validate(a) => single(Stage::Validate, a),
        Command::All(a) => {
            let stages = match &a.stages {
                Some(list) => parse_stages(list).map_err(|e| Failure::Usage(e.to_string()))?,
                None => Stage::ALL.to_vec(),
            };
            let config = load(&a.config, a.seed, a.workers, a.out)?;
            run(&config, &stages)
        }
        Command::Plot(p) => match (p.input, p.config) {
            (Some(input), _) => {
                let kind_name = p.kind.unwrap_or_default();
                let kind = PlotKind::parse(&kind_name)
                    .ok_or_else(|| Failure::Usage(format!("unknown plot kind {kind_name:?}")))?;
                let output = p.output.unwrap_or_default();
                plot_file(&input, kind, &output).map_err(classify)?;
                println!("wrote {}", output.display());
                Ok(())
            }
            (None, Some(path)) => {
                let config = load(&path, p.seed, p.workers, p.out)?;
                run(&config, &[Stage::Plot])
            }
            (None, None) => Err(Failure::Usage("plot needs --config or --input".into())),
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Stage(m)) => {
            eprintln!("stage failed: {m}");
            ExitCode::from(EXIT_STAGE)
        }
    }
}
