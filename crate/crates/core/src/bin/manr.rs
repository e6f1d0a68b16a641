use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use manr::datagen::{generate_dataset, GenConfig, Instance};
use manr::eval::{inference_trace, multi_run_eval, run_rng, Baseline, EvalOptions, DEFAULT_INFERENCE_STEPS, DEFAULT_RUNS};
use manr::io::{self, Checkpoint};
use manr::training::{Trainer, TrainingConfig};
use manr::{Error, Result};

/// Environment variable holding the number of worker threads.
const WORKERS_VAR: &str = "MANR_WORKERS";

#[derive(Parser)]
#[command(name = "manr", version, about = "Multi-agent neural rewriting for multi-vehicle routing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train, validation and test problem files.
    GenData {
        #[arg(long)]
        customers: usize,
        #[arg(long)]
        agents: usize,
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes a checkpoint per epoch and a metrics log.
    Train {
        /// Dataset directory written by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// TOML file overriding the default training configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint with repeated greedy rollouts.
    Eval {
        /// Dataset directory or a single dataset file.
        #[arg(long)]
        data: PathBuf,
        /// Split used when --data is a directory.
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = DEFAULT_RUNS)]
        runs: usize,
        #[arg(long, default_value_t = DEFAULT_INFERENCE_STEPS)]
        steps: usize,
        #[arg(long, value_enum, default_value = "none")]
        baseline: Baseline,
        /// Add the collaboration-benefit columns.
        #[arg(long)]
        collab: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Record one greedy rollout as JSON lines.
    Trace {
        /// Dataset file holding the problem.
        #[arg(long)]
        problem: PathBuf,
        /// Problem id within the file; the first record by default.
        #[arg(long)]
        id: Option<usize>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = DEFAULT_INFERENCE_STEPS)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn gen_data(customers: usize, agents: usize, size: usize, seed: u64, out: &Path) -> Result<()> {
    let config = GenConfig::new(customers, agents, size, seed);
    let data = generate_dataset(&config)?;
    io::write_dataset(out, &config, &data)?;
    println!(
        "wrote {} train, {} validation, {} test problems to {}",
        data.train.len(),
        data.validation.len(),
        data.test.len(),
        out.display()
    );
    Ok(())
}

fn mismatch(what: &str, expected: impl std::fmt::Debug, found: impl std::fmt::Debug) -> Error {
    Error::Version {
        expected: format!("{what} {expected:?}"),
        found: format!("{what} {found:?}"),
    }
}

fn train(data: &Path, config: Option<&Path>, out: &Path, resume: Option<&Path>) -> Result<()> {
    let (generator, dataset) = io::read_dataset(data)?;
    let defaults = match &generator {
        Some(g) => TrainingConfig::for_size(g.customers, g.agents),
        None => return Err(Error::Config(format!("{} holds no problems", data.display()))),
    };
    let mut trainer = match resume {
        Some(path) => {
            let ckpt = io::load_checkpoint(path)?;
            if ckpt.generator != generator {
                return Err(mismatch("data generator", &ckpt.generator, &generator));
            }
            let mut trainer = ckpt.into_trainer()?;
            if let Some(path) = config {
                // Only the epoch budget may change on resume.
                let req = io::load_training_config(path, &trainer.config)?;
                let mut same = req.clone();
                same.epochs = trainer.config.epochs;
                if same != trainer.config {
                    return Err(mismatch("training config", &trainer.config, &req));
                }
                trainer.config.epochs = req.epochs;
            }
            trainer
        }
        None => {
            let cfg = config.map(|p| io::load_training_config(p, &defaults)).transpose()?;
            Trainer::new(cfg.unwrap_or(defaults))?
        }
    };
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let metrics_path = out.join("metrics.jsonl");
    if resume.is_none() && metrics_path.exists() {
        std::fs::remove_file(&metrics_path).map_err(|e| Error::Io {
            path: metrics_path.clone(),
            source: e,
        })?;
    }
    println!(
        "training on {} problems from epoch {} to {} (T={}, Z={})",
        dataset.train.len(),
        trainer.epoch,
        trainer.config.epochs,
        trainer.config.steps,
        trainer.config.candidates
    );
    trainer.train(&dataset.train, &dataset.validation, |t, m| {
        io::save_checkpoint(&out.join(io::checkpoint_name(t.epoch)), &Checkpoint::from_trainer(t, generator.clone()))?;
        io::append_metrics(&metrics_path, m)?;
        let gap = m.validation_gap.map(|g| format!("{g:.2}%")).unwrap_or_else(|| "n/a".into());
        println!("epoch {} loss {:.5} validation gap {}", m.epoch, m.mean_loss, gap);
        Ok(())
    })?;
    Ok(())
}

fn load_split(data: &Path, split: Split) -> Result<Vec<Instance>> {
    if data.is_dir() {
        let name = io::SPLIT_FILES[split as usize];
        Ok(io::read_instances(&data.join(name))?.1)
    } else {
        Ok(io::read_instances(data)?.1)
    }
}

fn eval(data: &Path, split: Split, checkpoint: &Path, options: EvalOptions, out: &Path) -> Result<()> {
    let instances = load_split(data, split)?;
    let ckpt = io::load_checkpoint(checkpoint)?;
    let report = multi_run_eval(&instances, &ckpt.model, &options)?;
    io::write_eval_report(out, &report, &options)?;
    let s = &report.summary;
    println!("{} problems, {} runs of {} steps", s.problems, s.runs, s.steps);
    println!("gap vs initial: mean {:.2}%, best {:.2}%", s.mean_gap_initial, s.mean_gap_initial_best);
    if let (Some(g), Some(b)) = (s.mean_gap_baseline, s.mean_gap_baseline_best) {
        println!("gap vs baseline: mean {g:.2}%, best {b:.2}% ({} skipped)", s.baseline_skipped);
    }
    if let (Some(g), Some(b)) = (s.mean_collaboration, s.mean_collaboration_best) {
        println!("collaboration benefit: mean {g:.2}%, best {b:.2}%");
    }
    Ok(())
}

fn trace(problem: &Path, id: Option<usize>, checkpoint: &Path, steps: usize, seed: u64, out: &Path) -> Result<()> {
    let (_, instances) = io::read_instances(problem)?;
    let inst = match id {
        Some(id) => instances.iter().find(|i| i.id == id),
        None => instances.first(),
    }
    .ok_or_else(|| Error::Config(format!("problem not found in {}", problem.display())))?;
    let ckpt = io::load_checkpoint(checkpoint)?;
    let mut rng = run_rng(seed, inst.id, 0);
    let episode = inference_trace(&inst.problem, &inst.initial, &ckpt.model, steps, &mut rng)?;
    io::write_trace(out, &io::trace_records(&inst.problem, &episode, seed))?;
    println!("wrote {} steps of problem {} to {}", episode.len(), inst.id, out.display());
    Ok(())
}

fn configure_workers() -> Result<()> {
    let Ok(value) = std::env::var(WORKERS_VAR) else {
        return Ok(());
    };
    let workers: usize = value
        .parse()
        .ok()
        .filter(|&w| w > 0)
        .ok_or_else(|| Error::Config(format!("{WORKERS_VAR} must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    configure_workers()?;
    match cli.command {
        Command::GenData {
            customers,
            agents,
            size,
            seed,
            out,
        } => gen_data(customers, agents, size, seed, &out),
        Command::Train {
            data,
            config,
            out,
            resume,
        } => train(&data, config.as_deref(), &out, resume.as_deref()),
        Command::Eval {
            data,
            split,
            checkpoint,
            runs,
            steps,
            baseline,
            collab,
            seed,
            out,
        } => {
            let options = EvalOptions {
                runs,
                steps,
                seed,
                baseline,
                collaboration: collab,
            };
            eval(&data, split, &checkpoint, options, &out)
        }
        Command::Trace {
            problem,
            id,
            checkpoint,
            steps,
            seed,
            out,
        } => trace(&problem, id, &checkpoint, steps, seed, &out),
    }
}

fn exit_code(error: &Error) -> u8 {
    match error {
        Error::Numerical { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
