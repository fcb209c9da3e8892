use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use handbooster::fixture::ToyFixture;
use handbooster::pipeline::{self, Context, PipelineConfig, Stage};
use handbooster::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;

#[derive(Parser)]
#[command(name = "handbooster", version, about = "Curate hand-object grasps and render generator conditions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the worker count (0 = every core).
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides the predictions file used by `filter` and `metrics`.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Prints the stage plan and exits.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Marks grasping frames of the real sequences.
    Label(Common),
    /// Selects diverse poses and draws aligned synthetic candidates.
    Sample(Common),
    /// Checks candidates for contact, intersection and self-penetration.
    Validate(Common),
    /// Renders condition sets for real and accepted synthetic grasps.
    Render(Common),
    /// Drops condition sets whose reconstruction errors are too large.
    Filter(Common),
    /// Scores predictions against condition annotations.
    Metrics(Common),
    /// Summarizes an output directory.
    Report(Common),
    /// Runs every stage and replaces the output directory on success.
    Run(Common),
    /// Writes the procedural toy dataset.
    Fixture {
        /// Destination directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = ToyFixture::default().seed)]
        seed: u64,
    },
}

fn absolute(p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir().unwrap_or_default().join(p)
    }
}

fn load(common: &Common) -> handbooster::Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = absolute(o);
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if let Some(p) = &common.predictions {
        cfg.predictions = Some(absolute(p));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(command: Command) -> handbooster::Result<()> {
    let (stage, common) = match command {
        Command::Fixture { out, seed } => {
            let data = ToyFixture { seed, ..ToyFixture::default() }.generate()?;
            let config = data.write(&out)?;
            println!("wrote toy fixture; config at {}", config.display());
            return Ok(());
        }
        Command::Run(c) => (None, c),
        Command::Label(c) => (Some(Stage::Label), c),
        Command::Sample(c) => (Some(Stage::Sample), c),
        Command::Validate(c) => (Some(Stage::Validate), c),
        Command::Render(c) => (Some(Stage::Render), c),
        Command::Filter(c) => (Some(Stage::Filter), c),
        Command::Metrics(c) => (Some(Stage::Metrics), c),
        Command::Report(c) => (Some(Stage::Report), c),
    };
    let cfg = load(&common)?;
    if common.dry_run {
        print!("{}", cfg.plan());
        return Ok(());
    }
    let out = cfg.out_dir();
    match stage {
        None => {
            pipeline::run_pipeline(cfg)?;
        }
        Some(stage) => {
            let ctx = Context::load(cfg)?;
            pipeline::run_stage(&ctx, stage, &out)?;
            if stage != Stage::Report {
                println!("{}: done, outputs in {}", stage.name(), out.display());
                return Ok(());
            }
        }
    }
    let text = std::fs::read_to_string(out.join(pipeline::REPORT_TEXT)).map_err(|e| Error::io(&out, e))?;
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_DATA })
        }
    }
}
