//! Experiment runner CLI.
//!
//! Exit codes: 0 success, 1 config or I/O error, 2 numeric abort.

use clap::{Args, Parser, Subcommand};
use gfoes::baselines::BaselineMethod;
use gfoes::exp::{
    audit, eval_check, load_config, run_ablation, run_experiment, ExperimentConfig,
    MethodSelection,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "gfoes", about = "Few-shot zero-glance class unlearning laboratory", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML, or JSON by extension/content). Defaults
    /// apply for every omitted field.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for run artifacts.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train the original model and persist it with its metrics.
    Train(ConfigArgs),
    /// Run the full unlearning pipeline (generator training plus two-phase
    /// fine-tuning).
    Unlearn(ConfigArgs),
    /// Run baseline unlearning methods.
    Baseline {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated method list (retrain, neggrad, random_label,
        /// noise_impair_repair). Defaults to the config's enabled set.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
    },
    /// Run the data-composition x rate-schedule ablation grid.
    Ablate(ConfigArgs),
    /// Recompute all persisted metrics from models and datasets and compare
    /// with run.json.
    Eval {
        #[arg(long)]
        out: PathBuf,
    },
    /// Full audit: metric re-derivation, instrumented re-run, zero-glance
    /// check.
    Audit {
        #[arg(long)]
        out: PathBuf,
    },
}

fn effective_config(args: &ConfigArgs) -> gfoes::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

fn run() -> gfoes::Result<()> {
    match Cli::parse().command {
        Command::Train(args) => {
            let cfg = effective_config(&args)?;
            let summary = run_experiment(&cfg, &args.out, &MethodSelection::none())?;
            println!(
                "theta0 trained: ad_f={:.4} ad_r={:.4} -> {}",
                summary.original.ad_f,
                summary.original.ad_r,
                args.out.display()
            );
        }
        Command::Unlearn(args) => {
            let cfg = effective_config(&args)?;
            let summary = run_experiment(&cfg, &args.out, &MethodSelection::gfoes_only())?;
            for m in &summary.methods {
                println!("{}: ad_f={:.4} ad_r={:.4}", m.name, m.metrics.ad_f, m.metrics.ad_r);
            }
        }
        Command::Baseline { config, methods } => {
            let cfg = effective_config(&config)?;
            let baselines = if methods.is_empty() {
                MethodSelection::from_config(&cfg)?.baselines
            } else {
                methods
                    .iter()
                    .map(|tag| BaselineMethod::from_tag(tag))
                    .collect::<gfoes::Result<Vec<_>>>()?
            };
            let selection = MethodSelection {
                gfoes: false,
                baselines,
            };
            let summary = run_experiment(&cfg, &config.out, &selection)?;
            println!(
                "original: ad_f={:.4} ad_r={:.4}",
                summary.original.ad_f, summary.original.ad_r
            );
            for m in &summary.methods {
                println!("{}: ad_f={:.4} ad_r={:.4}", m.name, m.metrics.ad_f, m.metrics.ad_r);
            }
        }
        Command::Ablate(args) => {
            let cfg = effective_config(&args)?;
            let summary = run_ablation(&cfg, &args.out)?;
            for row in summary.ablation.as_deref().unwrap_or_default() {
                println!("{}: ad_f={:.4} ad_r={:.4}", row.cell, row.ad_f, row.ad_r);
            }
        }
        Command::Eval { out } => {
            let checks = eval_check(&out)?;
            let mut all_ok = true;
            for (name, ok) in &checks {
                println!("{name}: {}", if *ok { "match" } else { "MISMATCH" });
                all_ok &= ok;
            }
            if !all_ok {
                return Err(gfoes::Error::Config("persisted metrics do not re-derive".into()));
            }
        }
        Command::Audit { out } => {
            let report = audit(&out)?;
            for (name, ok) in &report.metrics_match {
                println!("metrics {name}: {}", if *ok { "match" } else { "MISMATCH" });
            }
            for name in &report.rederivation_mismatches {
                println!("re-derivation {name}: MISMATCH");
            }
            println!("zero-glance violations: {}", report.zero_glance_violations);
            println!("audit: {}", if report.ok { "PASS" } else { "FAIL" });
            if !report.ok {
                return Err(gfoes::Error::Config("audit failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (gfoes::Error::NumericAbort { .. } | gfoes::Error::NonFinite { .. })) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
