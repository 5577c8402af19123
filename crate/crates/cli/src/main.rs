//! `sdemg`: batch pipeline for removing ECG interference from sEMG.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use sdemg::harness::{
    cmd_denoise, cmd_evaluate, cmd_prepare, cmd_report, cmd_synth, cmd_train, compute_device,
    ExperimentConfig, Method, Profile, NOISY_FILE,
};

#[derive(Parser, Debug)]
#[command(name = "sdemg", version, about = "Diffusion-based ECG removal for surface EMG")]
struct Cli {
    /// TOML config overlaid on the selected profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the global seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "desk")]
    profile: Profile,
    /// Overrides the working directory all default paths live under.
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the surrogate sEMG and ECG source corpus.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the train/val/test pairs from the corpus.
    Prepare,
    /// Train the score network and keep the best-validation checkpoint.
    Train,
    /// Denoise a segment file.
    Denoise {
        #[arg(long, default_value = "sdemg")]
        method: Method,
        /// Defaults to the test split's noisy segments.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Defaults to `<denoised_dir>/<method>.seg`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score denoised files against the test split.
    Evaluate {
        /// `method=path` pairs; defaults to every method file in the denoised directory.
        #[arg(long = "input", value_parser = parse_method_path)]
        inputs: Vec<(Method, PathBuf)>,
        #[arg(long)]
        split_dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the aggregate table of an evaluation.
    Report {
        #[arg(long)]
        eval_dir: Option<PathBuf>,
    },
}

fn parse_method_path(s: &str) -> Result<(Method, PathBuf), String> {
    let (m, p) = s.split_once('=').ok_or("expected METHOD=PATH")?;
    Ok((m.parse().map_err(|e: sdemg::Error| e.to_string())?, PathBuf::from(p)))
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p, cli.profile)
            .with_context(|| format!("loading config {}", p.display()))?,
        None => ExperimentConfig::for_profile(cli.profile),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = &cli.work_dir {
        cfg.paths.work_dir = Some(w.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    compute_device()?;
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Synth { out } => {
            let dir = out.unwrap_or_else(|| cfg.corpus_dir());
            let s = cmd_synth(&cfg, &dir)?;
            println!("wrote {} sEMG and {} ECG sources to {}", s.semg_count, s.ecg_count, dir.display());
        }
        Command::Prepare => {
            let s = cmd_prepare(&cfg)?;
            for ((split, dir), (_, n)) in s.dirs.iter().zip(&s.counts) {
                println!("{split}: {n} pairs in {}", dir.display());
            }
        }
        Command::Train => {
            let s = cmd_train(&cfg)?;
            println!(
                "trained {} epochs in {:.0} s; best validation loss {:.5} at epoch {} (initial {:.5}); checkpoint {}",
                s.log.len() - 1,
                s.seconds,
                s.best_val_loss,
                s.best_epoch,
                s.initial().val_loss,
                s.checkpoint.display()
            );
        }
        Command::Denoise { method, input, output } => {
            let input = input.unwrap_or_else(|| cfg.test_dir().join(NOISY_FILE));
            let output = output.unwrap_or_else(|| cfg.denoised_dir().join(format!("{method}.seg")));
            let s = cmd_denoise(&cfg, method, &input, &output, cfg.seed)?;
            println!("{method}: {} segments to {} ({} failed)", s.count, s.output.display(), s.failed.len());
            if !s.failed.is_empty() {
                anyhow::bail!("{} segments failed; see {}", s.failed.len(), s.manifest.display());
            }
        }
        Command::Evaluate { inputs, split_dir, out } => {
            let inputs = if inputs.is_empty() {
                [Method::Sdemg, Method::Hp, Method::Ts]
                    .into_iter()
                    .map(|m| (m, cfg.denoised_dir().join(format!("{m}.seg"))))
                    .filter(|(_, p)| p.exists())
                    .collect()
            } else {
                inputs
            };
            let split_dir = split_dir.unwrap_or_else(|| cfg.test_dir());
            let out = out.unwrap_or_else(|| cfg.eval_dir());
            let s = cmd_evaluate(&split_dir, &inputs, &out)?;
            println!("{} rows to {}", s.rows.len(), s.rows_path.display());
            print!("{}", std::fs::read_to_string(&s.report_path)?);
        }
        Command::Report { eval_dir } => {
            print!("{}", cmd_report(&eval_dir.unwrap_or_else(|| cfg.eval_dir()))?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
