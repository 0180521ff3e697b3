use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use metatrack_cli::commands;
use metatrack_cli::config::RunConfig;
use metatrack_cli::CliError;
use metatrack_core::meta::Method;

#[derive(Parser)]
#[command(
    name = "metatrack",
    version,
    about = "Meta-RL tuning of a radar tracker on a synthetic room suite"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML). `train` accepts several and overlays their curves.
    #[arg(long, global = true)]
    config: Vec<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// context_prior, reptile, fomaml or fixed_baseline.
    #[arg(long, global = true)]
    method: Option<String>,
    /// Checkpoint to resume from (`train`) or to evaluate (`eval`, `ood`).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Dump frames, ground truth and RAI statistics per room.
    Simulate,
    /// Meta-train and write the learning curve and checkpoints.
    Train,
    /// Evaluate a checkpoint or the fixed baseline on the test rooms.
    Eval,
    /// Score test scenes and report OOD precision, recall and F1.
    Ood,
    /// Reward-scale ablation.
    Ablate,
}

fn configs(cli: &Cli) -> Result<Vec<RunConfig>, CliError> {
    let mut cfgs = if cli.config.is_empty() {
        vec![RunConfig::default()]
    } else {
        cli.config
            .iter()
            .map(|p| RunConfig::load(p))
            .collect::<Result<Vec<_>, _>>()?
    };
    let method = cli
        .method
        .as_deref()
        .map(Method::parse)
        .transpose()
        .map_err(|e| CliError::Config(e.to_string()))?;
    for c in &mut cfgs {
        if let Some(s) = cli.seed {
            c.seed = s;
        }
        if let Some(o) = &cli.out {
            c.out = o.clone();
        }
        if let Some(m) = method {
            c.method = m;
        }
        c.validate()?;
    }
    Ok(cfgs)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfgs = configs(cli)?;
    if cfgs.len() > 1 && !matches!(cli.command, Command::Train) {
        return Err(CliError::Config(
            "only train accepts several configurations".into(),
        ));
    }
    let cfg = &cfgs[0];
    let out = cfg.out.clone();
    let ck = cli.checkpoint.as_deref();
    match cli.command {
        Command::Simulate => {
            let m = commands::simulate(cfg, &out)?;
            eprintln!("wrote {} files to {}", m.outputs.len(), out.display());
        }
        Command::Train if cfgs.len() > 1 => {
            let curves = commands::train_many(&cfgs, &out)?;
            for (c, curve) in cfgs.iter().zip(&curves) {
                eprintln!(
                    "{}: final {:.4}",
                    c.method.name(),
                    curve.last().unwrap_or(f64::NAN)
                );
            }
        }
        Command::Train => {
            let curve = commands::train(cfg, &out, ck)?;
            eprintln!(
                "final {:.4} peak {:.4}",
                curve.last().unwrap_or(f64::NAN),
                curve.peak().unwrap_or(f64::NAN)
            );
        }
        Command::Eval => {
            let r = commands::eval(cfg, &out, ck)?;
            eprintln!("average {:.4}", r.average);
        }
        Command::Ood => {
            let o = commands::ood(cfg, &out, ck)?;
            let r = o.report.report;
            eprintln!(
                "alpha {} precision {:.3} recall {:.3} F1 {:.3}",
                o.report.alpha, r.precision, r.recall, r.f1
            );
        }
        Command::Ablate => {
            for r in commands::ablate(cfg, &out)? {
                eprintln!("scale {} best {:.4}", r.reward_scale, r.best_reward);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
