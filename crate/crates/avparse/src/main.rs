//! Command-line entry point: dataset synthesis, joint training, evaluation,
//! and convergence-curve plotting.
//!
//! Exit codes: 0 on success, 1 on usage/configuration errors, 2 on a
//! numerical abort during training.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use avparse::checkpoint;
use avparse::config::{self, RunFileConfig};
use avparse::data::{self, Split};
use avparse::error::{Error, Result};
use avparse::metrics::Aggregation;
use avparse::plot;
use avparse::trainer;

/// Environment variable overriding the training seed.
const SEED_ENV: &str = "AVPARSE_SEED";

#[derive(Parser)]
#[command(name = "avparse", version, about = "Reinforced label denoising for audio-visual video parsing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Dotted-key overrides, e.g. --set train.batch_size=32.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the dataset seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the denoising policy and the parsing network jointly.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset directory produced by `synth`.
        #[arg(long)]
        data: PathBuf,
        /// Run output directory.
        #[arg(long)]
        out: PathBuf,
        /// Named ablation: none, no_inter_reward, no_initialized_labels, no_denoiser.
        #[arg(long)]
        ablation: Option<String>,
        /// Override the training seed (takes precedence over AVPARSE_SEED).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        /// Checkpoint directory (…/checkpoints/best or …/checkpoints/last).
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Split to evaluate: train, validation, or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Optional directory for report.json and predictions.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw convergence curves from one or more run directories.
    Plot {
        /// Run directories (each containing traces.csv).
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Keep clap's help/version on stdout with success, everything
            // else is a usage error.
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if is_help {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { cfg, out, seed } => cmd_synth(&cfg, &out, seed),
        Command::Train {
            cfg,
            data,
            out,
            ablation,
            seed,
        } => cmd_train(&cfg, &data, &out, ablation.as_deref(), seed),
        Command::Eval {
            checkpoint,
            data,
            split,
            out,
        } => cmd_eval(&checkpoint, &data, &split, out.as_deref()),
        Command::Plot { runs, out } => cmd_plot(&runs, &out),
    }
}

fn cmd_synth(args: &ConfigArgs, out: &PathBuf, seed: Option<u64>) -> Result<()> {
    let mut cfg = config::load_config(&args.config, &args.overrides)?;
    if let Some(seed) = seed {
        cfg.dataset.seed = seed;
    }
    let dataset = data::generate_dataset(&cfg.dataset)?;
    data::save_dataset(&dataset, &cfg.dataset, out)?;
    println!(
        "wrote dataset to {} (train {}, validation {}, test {}, {} classes)",
        out.display(),
        dataset.train.len(),
        dataset.validation.len(),
        dataset.test.len(),
        dataset.num_classes
    );
    Ok(())
}

fn resolve_seed(cli_seed: Option<u64>, config_seed: u64) -> Result<u64> {
    if let Some(seed) = cli_seed {
        return Ok(seed);
    }
    match std::env::var(SEED_ENV) {
        Ok(raw) => raw
            .parse::<u64>()
            .map_err(|e| Error::Config(format!("{SEED_ENV}={raw}: {e}"))),
        Err(_) => Ok(config_seed),
    }
}

fn cmd_train(
    args: &ConfigArgs,
    data_dir: &PathBuf,
    out: &PathBuf,
    ablation: Option<&str>,
    seed: Option<u64>,
) -> Result<()> {
    let mut cfg: RunFileConfig = config::load_config(&args.config, &args.overrides)?;
    if let Some(name) = ablation {
        cfg.train.apply_ablation(name)?;
    }
    cfg.train.seed = resolve_seed(seed, cfg.train.seed)?;

    if !data_dir.join("meta.json").is_file() {
        return Err(Error::Config(format!(
            "dataset not found at {} (missing meta.json)",
            data_dir.display()
        )));
    }
    let (dataset, _meta) = data::load_dataset(data_dir)?;

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let snapshot = config::to_pretty_json(&cfg)?;
    let config_path = out.join("config.json");
    std::fs::write(&config_path, &snapshot).map_err(|e| Error::io(&config_path, e))?;

    let artifacts = trainer::fit(&dataset, &cfg.train)?;

    trainer::write_traces(&out.join("traces.csv"), &artifacts.traces)?;
    let hash = checkpoint::config_hash(&snapshot);
    for (name, den, task) in [
        ("best", &artifacts.best_denoiser, &artifacts.best_task),
        ("last", &artifacts.denoiser, &artifacts.task),
    ] {
        checkpoint::save_checkpoint(
            &out.join("checkpoints").join(name),
            den,
            task,
            cfg.train.threshold,
            cfg.train.seed,
            hash.clone(),
            &dataset.class_names,
        )?;
    }
    if !artifacts.traces.is_empty() {
        let curves = plot::collect_curves(&[out.clone()])?;
        plot::emit_curves(&curves, &out.join("plots"))?;
    }

    println!(
        "trained {} epochs ({} episodes); best validation segment Type@AV {:.4} at epoch {}",
        artifacts.epochs_run,
        artifacts.traces.len(),
        artifacts.best_score,
        artifacts.best_epoch
    );
    println!("{}", artifacts.final_validation.table());
    Ok(())
}

fn cmd_eval(
    checkpoint_dir: &PathBuf,
    data_dir: &PathBuf,
    split: &str,
    out: Option<&std::path::Path>,
) -> Result<()> {
    let split = Split::parse(split)?;
    let (denoiser, task, manifest) = checkpoint::load_checkpoint(checkpoint_dir)?;
    let (dataset, _) = data::load_dataset(data_dir)?;
    let samples = dataset.split(split);
    if samples.is_empty() {
        return Err(Error::EmptyDataset(format!("{} split is empty", split.name())));
    }

    let predictions = trainer::predict_split(&task, samples, manifest.threshold)?;
    let report = avparse::metrics::evaluate(
        &predictions,
        samples,
        avparse::metrics::DEFAULT_MIOU_THRESHOLD,
        Aggregation::Micro,
    )?;
    println!("{}", report.table());

    if samples
        .iter()
        .all(|s| s.clean_audio_segments.is_some() && s.clean_visual_segments.is_some())
    {
        let policy_f =
            trainer::noise_identification_f1(&denoiser, samples, manifest.denoiser.include_labels)?;
        let random_f = trainer::random_mask_identification_f1(samples, manifest.seed, 10)?;
        println!("noise identification F: policy {policy_f:.4}, random-mask {random_f:.4}");
    }

    if let Some(out) = out {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let report_path = out.join("report.json");
        let body = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(&report_path, body).map_err(|e| Error::io(&report_path, e))?;

        // Per-video temporal decision dump.
        let dump: std::collections::BTreeMap<String, serde_json::Value> = predictions
            .iter()
            .map(|(id, p)| {
                let to_rows = |m: &ndarray::Array2<u8>| -> Vec<Vec<u8>> {
                    m.rows().into_iter().map(|r| r.to_vec()).collect()
                };
                (
                    id.clone(),
                    serde_json::json!({
                        "audio": to_rows(&p.audio),
                        "visual": to_rows(&p.visual),
                        "audio_visual": to_rows(&p.audio_visual),
                    }),
                )
            })
            .collect();
        let pred_path = out.join("predictions.json");
        let body =
            serde_json::to_string(&dump).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(&pred_path, body).map_err(|e| Error::io(&pred_path, e))?;
    }
    Ok(())
}

fn cmd_plot(runs: &[PathBuf], out: &PathBuf) -> Result<()> {
    let curves = plot::collect_curves(runs)?;
    let files = plot::emit_curves(&curves, out)?;
    println!("wrote {} curves to {}", files.len(), out.display());
    Ok(())
}
