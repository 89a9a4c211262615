//! `picl` command line: synthetic data generation, continual-stream runs,
//! offline joint runs, checkpoint re-evaluation, and the gradient-check
//! suite.

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use picl_core::{
    data::write_atomic, generate_synthetic, load_checkpoint, metrics, resume_stream, run_joint,
    run_stream, split_tasks, ClassOrder, EmbeddingDataset, RunConfigFile, RunMetrics,
    StreamOptions, TaskStream,
};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "picl",
    about = "Incremental class learning on embedding datasets: autoencoder prototypes, cosine nearest-class-mean, SI/MAS forgetting mitigation, LOF prototype refinement",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Override the training seed from the config
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic embedding dataset (train + test splits)
    GenSynth {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory for train.picl / test.picl
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a full continual stream and write metrics
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory for metrics and checkpoints
        #[arg(long)]
        out: PathBuf,
        /// Class ordering: `ascending` or `shuffled:<seed>`
        #[arg(long)]
        class_order: Option<String>,
        /// Resume from a checkpoint written by an earlier run
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Skip per-session checkpoints
        #[arg(long)]
        no_checkpoints: bool,
    },
    /// Offline joint upper-bound run; prints the measured alpha_ideal
    Joint {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-evaluate a checkpoint on the test split
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint file to evaluate
        #[arg(long)]
        checkpoint: PathBuf,
        /// Optional output directory for eval.json
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient checks over every loss term
    Gradcheck {
        #[arg(long, default_value_t = 17)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
    },
}

/// Failure that carries its process exit code: 2 for usage/configuration
/// problems, 1 for runtime errors.
struct Failure {
    exit_code: i32,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure {
            exit_code: 1,
            error: e.into(),
        }
    }
}

fn usage(error: anyhow::Error) -> Failure {
    Failure {
        exit_code: 2,
        error,
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => {}
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            std::process::exit(f.exit_code);
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfigFile, Failure> {
    let mut cfg = RunConfigFile::load(path)
        .with_context(|| format!("loading config {}", path.display()))
        .map_err(usage)?;
    if let Some(seed) = seed {
        cfg.train.seed = seed;
        if let Some(synth) = &mut cfg.data.synth {
            synth.seed = seed;
        }
    }
    Ok(cfg)
}

/// Datasets come from the config: generated when [data.synth] is present,
/// loaded from files otherwise (paths are resolved against the config's
/// directory).
fn obtain_datasets(
    cfg: &RunConfigFile,
    config_path: &Path,
) -> Result<(EmbeddingDataset, EmbeddingDataset), Failure> {
    if let Some(synth) = &cfg.data.synth {
        let (train, test) = generate_synthetic(synth)?;
        return Ok((train, test));
    }
    let base = config_path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    let train_path = resolve(cfg.data.train_path.as_ref().expect("validated"));
    let test_path = resolve(cfg.data.test_path.as_ref().expect("validated"));
    let train = EmbeddingDataset::load(&train_path)
        .with_context(|| format!("loading {}", train_path.display()))?;
    let test = EmbeddingDataset::load(&test_path)
        .with_context(|| format!("loading {}", test_path.display()))?;
    Ok((train, test))
}

fn build_stream(
    cfg: &RunConfigFile,
    train: &EmbeddingDataset,
    class_order_override: Option<&str>,
) -> Result<TaskStream, Failure> {
    let order: ClassOrder = match class_order_override {
        Some(s) => s.parse().map_err(|e: picl_core::Error| usage(e.into()))?,
        None => cfg.split.class_order().map_err(|e| usage(e.into()))?,
    };
    let base = cfg.split.resolved_base_classes(train.num_classes() as usize);
    Ok(split_tasks(
        train,
        base,
        cfg.split.classes_per_increment,
        order,
    )?)
}

fn write_resolved_config(cfg: &RunConfigFile, out: &Path) -> Result<(), Failure> {
    let resolved = cfg.to_resolved_toml()?;
    write_atomic(&out.join("resolved-config.toml"), resolved.as_bytes())?;
    Ok(())
}

fn write_metrics(out: &Path, metrics: &RunMetrics, alpha_ideal: Option<f64>) -> Result<(), Failure> {
    let mut csv = String::from("session_index,alpha_base,alpha_new,alpha_all\n");
    for s in &metrics.sessions {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            s.session_index, s.alpha_base, s.alpha_new, s.alpha_all
        ));
    }
    write_atomic(&out.join("metrics.csv"), csv.as_bytes())?;

    let json = serde_json::json!({
        "sessions": metrics.sessions,
        "psi": metrics.psi,
        "alpha_ideal": alpha_ideal,
    });
    write_atomic(
        &out.join("metrics.json"),
        serde_json::to_string_pretty(&json)?.as_bytes(),
    )?;
    Ok(())
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::GenSynth { cfg, out } => {
            let config = load_config(&cfg.config, cfg.seed)?;
            let synth = config
                .data
                .synth
                .as_ref()
                .ok_or_else(|| usage(anyhow!("gen-synth needs a [data.synth] section")))?;
            let (train, test) = generate_synthetic(synth)?;
            train.save(&out.join("train.picl"))?;
            test.save(&out.join("test.picl"))?;
            write_resolved_config(&config, &out)?;
            println!(
                "wrote {} train and {} test samples ({} classes, dim {}) to {}",
                train.len(),
                test.len(),
                train.num_classes(),
                train.dim(),
                out.display()
            );
            Ok(())
        }
        Command::Run {
            cfg,
            out,
            class_order,
            resume,
            no_checkpoints,
        } => {
            let config = load_config(&cfg.config, cfg.seed)?;
            let (train, test) = obtain_datasets(&config, &cfg.config)?;
            let stream = build_stream(&config, &train, class_order.as_deref())?;
            let train_cfg = config.train_config();
            let opts = StreamOptions {
                checkpoint_dir: if no_checkpoints {
                    None
                } else {
                    Some(out.join("checkpoints"))
                },
                alpha_ideal: config.eval.alpha_ideal,
            };
            let metrics = match resume {
                Some(ckpt_path) => {
                    let ckpt = load_checkpoint(&ckpt_path)
                        .with_context(|| format!("loading checkpoint {}", ckpt_path.display()))?;
                    println!(
                        "resuming from {} (next session {})",
                        ckpt_path.display(),
                        ckpt.state.next_session
                    );
                    resume_stream(ckpt.state, &train, &test, &stream, &train_cfg, &opts)?
                }
                None => run_stream(&train, &test, &stream, &train_cfg, &opts)?,
            };
            write_resolved_config(&config, &out)?;
            write_metrics(&out, &metrics, config.eval.alpha_ideal)?;
            for s in &metrics.sessions {
                println!(
                    "session {:>3}: alpha_base {:.4}  alpha_new {:.4}  alpha_all {:.4}",
                    s.session_index, s.alpha_base, s.alpha_new, s.alpha_all
                );
            }
            match &metrics.psi {
                Some(psi) => println!(
                    "psi_base {:.4}  psi_new {:.4}  psi_all {:.4}",
                    psi.psi_base, psi.psi_new, psi.psi_all
                ),
                None => println!(
                    "psi metrics skipped: eval.alpha_ideal not set (run `picl joint` to measure it)"
                ),
            }
            Ok(())
        }
        Command::Joint { cfg, out } => {
            let config = load_config(&cfg.config, cfg.seed)?;
            let (train, test) = obtain_datasets(&config, &cfg.config)?;
            let train_cfg = config.train_config();
            let alpha_ideal = run_joint(&train, &test, &train_cfg)?;
            write_resolved_config(&config, &out)?;
            let json = serde_json::json!({ "alpha_ideal": alpha_ideal });
            write_atomic(
                &out.join("joint.json"),
                serde_json::to_string_pretty(&json)?.as_bytes(),
            )?;
            println!("alpha_ideal {alpha_ideal:.6}");
            Ok(())
        }
        Command::Eval {
            cfg,
            checkpoint,
            out,
        } => {
            let config = load_config(&cfg.config, cfg.seed)?;
            let (_train, test) = obtain_datasets(&config, &cfg.config)?;
            let ckpt = load_checkpoint(&checkpoint)
                .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
            let state = ckpt.state;
            let seen: Vec<u32> = state.store.classes().collect();
            let idx = test.indices_with_labels(&seen);
            if idx.is_empty() {
                return Err(anyhow!("the test split has no samples for the learned classes").into());
            }
            let inputs = test.rows_to_matrix(&idx);
            let codes = state.net.forward_encode(&inputs)?;
            let preds = state.store.predict_batch(&codes)?;
            let labels = test.gather_labels(&idx);
            let acc = metrics::accuracy(&preds, &labels)?;
            println!(
                "checkpoint after session {}: {} classes learned, accuracy {:.4} over {} test samples",
                state.next_session - 1,
                seen.len(),
                acc,
                idx.len()
            );
            if let Some(out) = out {
                let json = serde_json::json!({
                    "classes_learned": seen.len(),
                    "completed_session": state.next_session - 1,
                    "accuracy": acc,
                    "test_samples": idx.len(),
                });
                write_atomic(
                    &out.join("eval.json"),
                    serde_json::to_string_pretty(&json)?.as_bytes(),
                )?;
            }
            Ok(())
        }
        Command::Gradcheck { seed, tol, step } => {
            let checks = picl_core::gradcheck::run_gradient_check_suite(seed, tol, step)?;
            let mut all_ok = true;
            for c in &checks {
                println!(
                    "{:<32} max rel error {:10.3e}  {}",
                    c.name,
                    c.report.max_rel_error,
                    if c.report.passed { "pass" } else { "FAIL" }
                );
                all_ok &= c.report.passed;
            }
            if all_ok {
                println!("gradient checks passed ({} cases, tol {tol:e})", checks.len());
                Ok(())
            } else {
                Err(anyhow!("gradient check failed").into())
            }
        }
    }
}
