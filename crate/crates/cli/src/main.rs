use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::{Parser, Subcommand};
use stcray_core::caption::SynonymPools;
use stcray_core::instruct::Task;
use stcray_core::pipeline::{self, BuildConfig, PipelineError};

#[derive(Parser)]
#[command(name = "stcray", version, about = "Synthesize and evaluate X-ray baggage instruction data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compose, render and caption every scene in the protocol grid, then
    /// emit instruction files.
    Build {
        #[arg(long)]
        config: PathBuf,
    },
    /// Emit instruction files from an existing manifest.
    Instruct {
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated subset of scene,refer,grounding,vqa.
        #[arg(long, value_delimiter = ',', value_parser = parse_task, default_value = "scene,refer,grounding,vqa")]
        tasks: Vec<Task>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check caption diversity with ROUGE-L against a second synonym draw.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
        /// Synonym pools JSON; the built-in pools when absent.
        #[arg(long)]
        pools: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0.7)]
        threshold: f64,
    },
    /// Score predictions against ground-truth instruction files.
    Eval {
        /// Directory holding instructions_{task}.jsonl.
        #[arg(long)]
        instructions: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', value_parser = parse_task, default_value = "scene,refer,grounding,vqa")]
        tasks: Vec<Task>,
    },
    /// Print dataset counts as JSON.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn parse_task(s: &str) -> Result<Task, String> {
    Task::from_name(s.trim()).ok_or_else(|| format!("unknown task {s:?}"))
}

enum Failure {
    Pipeline(PipelineError),
    /// Ran fine but the data did not pass a check.
    Check(String),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Pipeline(e)
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Build { config } => {
            let cfg = BuildConfig::load(&config)?;
            let done = AtomicUsize::new(0);
            let progress = |_: usize, total: usize| {
                let n = done.fetch_add(1, Ordering::Relaxed) + 1;
                if n == total || n % 50 == 0 {
                    eprintln!("built {n}/{total} scenes");
                }
            };
            let summary = pipeline::build(&cfg, &progress)?;
            let records = pipeline::load_manifest(&summary.manifest)?;
            let counts = pipeline::instruct(&records, &cfg.instruct.tasks, cfg.instruct.seed, &cfg.output_dir)?;
            for (task, n) in &counts {
                eprintln!("{}: {n} instructions", task.name());
            }
            if let Some(endpoint) = &cfg.vqa_freeform {
                let n = pipeline::instruct_freeform(&records, endpoint, &cfg.output_dir)?;
                eprintln!("vqa_freeform: {n} conversations");
            }
            println!("{} scenes ({} resumed) -> {}", summary.scenes, summary.resumed, summary.manifest.display());
        }
        Command::Instruct { manifest, tasks, seed, out } => {
            let records = pipeline::load_manifest(&manifest)?;
            let counts = pipeline::instruct(&records, &tasks, seed, &out)?;
            for (task, n) in counts {
                println!("{}: {n}", task.name());
            }
        }
        Command::Validate { manifest, pools, seed, threshold } => {
            let records = pipeline::load_manifest(&manifest)?;
            let pools = match pools {
                Some(p) => SynonymPools::load(&p).map_err(PipelineError::from)?,
                None => SynonymPools::default(),
            };
            pools.validate().map_err(PipelineError::from)?;
            let report = pipeline::validate(&records, &pools, seed, threshold);
            println!(
                "{} captions: mean ROUGE-L {:.4}, min {:.4}, {} below {threshold}",
                report.count,
                report.mean,
                report.min,
                report.flagged.len()
            );
            for id in &report.flagged {
                log::info!("below threshold: {id}");
            }
            if !report.passed() {
                return Err(Failure::Check(format!("mean ROUGE-L {:.4} is below {threshold}", report.mean)));
            }
        }
        Command::Eval { instructions, predictions, out, tasks } => {
            let gt = pipeline::load_instructions(&instructions, &tasks)?;
            if gt.is_empty() {
                return Err(PipelineError::Config(format!("no instruction files in {}", instructions.display())).into());
            }
            let preds = pipeline::load_predictions(&predictions)?;
            let report = pipeline::eval(&gt, &preds, &out)?;
            print!("{}", report.to_markdown());
        }
        Command::Stats { manifest } => {
            let records = pipeline::load_manifest(&manifest)?;
            println!("{}", serde_json::to_string_pretty(&pipeline::stats(&records)).expect("stats serialize"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Pipeline(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
