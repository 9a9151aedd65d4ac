//! `kultur` command line: one subcommand per pipeline stage plus `run`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kultur::pipeline::{run_pipeline, run_stage, CommonsMode, PipelineConfig, StageName, StageReport};
use kultur::replay::Mode;

#[derive(Debug, Parser)]
#[command(name = "kultur", version, about = "Build multilingual cultural VQA data from a knowledge-graph dump")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true, default_value = "kultur.toml")]
    config: PathBuf,
    /// Overrides `paths.workdir`.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// Overrides `sampling.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Serve model and Commons responses from the stores only, optionally
    /// naming the model response store.
    #[arg(long, global = true, num_args = 0..=1, require_equals = true, value_name = "STORE", conflicts_with = "record")]
    replay: Option<Option<PathBuf>>,
    /// Call live clients for anything not yet stored and append the responses.
    #[arg(long, global = true, num_args = 0..=1, require_equals = true, value_name = "STORE")]
    record: Option<Option<PathBuf>>,
    /// Overrides `sampling.budget`.
    #[arg(long, global = true)]
    budget: Option<u64>,
    /// Overrides `sampling.t_region`.
    #[arg(long = "t-region", global = true)]
    t_region: Option<f64>,
    /// Overrides `sampling.t_lang`.
    #[arg(long = "t-lang", global = true)]
    t_lang: Option<f64>,
    /// Print stage reports as JSON instead of one summary line each.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Stream the dump and keep culturally relevant entities.
    Select,
    /// Collect up to N images per selected entity.
    Images,
    /// Instantiate templated QA pairs and bind them to images.
    Generate,
    /// Generate multiple-choice and true/false items.
    Mcq,
    /// Rewrite templated QA pairs with the model.
    Refine,
    /// Judge image/QA alignment and drop mismatches.
    Filter,
    /// Deduplicate and apply hybrid temperature sampling.
    Sample,
    /// Per-region, per-language and per-stage counts.
    Stats,
    /// Score prediction files against gold answers.
    Eval,
    /// Every stage from select to stats, then the run manifest.
    Run,
}

impl Command {
    fn stage(&self) -> Option<StageName> {
        Some(match self {
            Command::Select => StageName::Select,
            Command::Images => StageName::Images,
            Command::Generate => StageName::Generate,
            Command::Mcq => StageName::Mcq,
            Command::Refine => StageName::Refine,
            Command::Filter => StageName::Filter,
            Command::Sample => StageName::Sample,
            Command::Stats => StageName::Stats,
            Command::Eval => StageName::Eval,
            Command::Run => return None,
        })
    }
}

fn apply_overrides(cfg: &mut PipelineConfig, c: &Common) {
    if let Some(w) = &c.workdir {
        cfg.paths.workdir = w.clone();
    }
    if let Some(s) = c.seed {
        cfg.sampling.seed = s;
    }
    if let Some(b) = c.budget {
        cfg.sampling.budget = Some(b);
    }
    if let Some(t) = c.t_region {
        cfg.sampling.t_region = t;
    }
    if let Some(t) = c.t_lang {
        cfg.sampling.t_lang = t;
    }
    let (mode, store) = match (&c.replay, &c.record) {
        (Some(store), _) => (Mode::Replay, store),
        (_, Some(store)) => (Mode::Record, store),
        _ => return,
    };
    cfg.gateway.mode = mode;
    if let Some(p) = store {
        cfg.paths.replay = Some(p.clone());
    }
    if cfg.images.commons != CommonsMode::None {
        cfg.images.commons = if mode == Mode::Replay { CommonsMode::Replay } else { CommonsMode::Record };
    }
}

fn print_report(r: &StageReport, json: bool) {
    if json {
        println!("{}", serde_json::to_string(r).expect("report serializes"));
    } else {
        println!("{}", r.summary());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match PipelineConfig::load(&cli.common.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("kultur: {e}");
            return ExitCode::from(2);
        }
    };
    apply_overrides(&mut cfg, &cli.common);

    let result = match cli.command.stage() {
        Some(stage) => run_stage(stage, &cfg).map(|r| print_report(&r, cli.common.json)),
        None => run_pipeline(&cfg).map(|(reports, manifest)| {
            for r in &reports {
                print_report(r, cli.common.json);
            }
            if !cli.common.json {
                println!("manifest: {} artifacts, {:?}", manifest.artifacts.len(), manifest.stage_counts);
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kultur: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
