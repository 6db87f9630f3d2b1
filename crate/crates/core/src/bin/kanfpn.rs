use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kanfpn::config::RunConfig;
use kanfpn::gradcheck::{self, ScopeKind};
use kanfpn::stem::StemVariant;
use kanfpn::train::{eval_checkpoint, run_ablation, run_stage, Mode};

#[derive(Parser)]
#[command(name = "kanfpn", about = "FPN/KAGN stem ablations for heatmap pose estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Finite-difference gradient check of one scope (or `all`).
    Gradcheck {
        #[arg(long)]
        scope: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one stage.
    Train {
        #[arg(long)]
        stage: StemVariant,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "smoke")]
        overfit: bool,
        #[arg(long)]
        smoke: bool,
    },
    /// Train several stages and write a combined table.
    Ablate {
        #[arg(long, value_delimiter = ',', default_value = "s0,s1,s2,s3,s4,s5,s6")]
        stages: Vec<StemVariant>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "smoke")]
        overfit: bool,
        #[arg(long)]
        smoke: bool,
    },
    /// Evaluate a checkpoint on the eval split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        stage: StemVariant,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write per-keypoint predictions as CSV.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
}

fn load(config: Option<&PathBuf>) -> kanfpn::Result<RunConfig> {
    config.map_or_else(|| Ok(RunConfig::default()), |p| RunConfig::load(p))
}

fn mode(overfit: bool, smoke: bool) -> Mode {
    if overfit {
        Mode::Overfit
    } else if smoke {
        Mode::Smoke
    } else {
        Mode::Full
    }
}

fn gradcheck_cmd(scope: &str, seed: u64) -> kanfpn::Result<bool> {
    let scopes: Vec<_> = if scope == "all" {
        gradcheck::SCOPES.iter().collect()
    } else {
        vec![gradcheck::find(scope)?]
    };
    let mut ok = true;
    for s in scopes {
        let report = s.run(seed)?;
        let tol = s.kind.tolerance();
        let kind = match s.kind {
            ScopeKind::Op => "op",
            ScopeKind::Layer => "layer",
        };
        let pass = report.passes(tol);
        ok &= pass;
        println!("{} ({kind}, tol {tol:e}): {}", s.name, if pass { "pass" } else { "FAIL" });
        for g in &report.groups {
            println!("  {:<40} {:>4}/{:<6} max rel {:.3e}", g.name, g.checked, g.numel, g.max_rel_err);
        }
    }
    Ok(ok)
}

fn run(cli: Cli) -> kanfpn::Result<bool> {
    match cli.command {
        Command::Gradcheck { scope, seed } => gradcheck_cmd(&scope, seed),
        Command::Train {
            stage,
            config,
            overfit,
            smoke,
        } => {
            let cfg = load(config.as_ref())?;
            let out = run_stage(stage, &cfg, mode(overfit, smoke), &cfg.out_dir)?;
            let last = out.last();
            println!(
                "{stage}: params {} loss {:.6} pck@0.05 {:.4} pck@0.1 {:.4}",
                out.params, last.loss, last.pck05, last.pck10
            );
            println!("metrics: {}\ncheckpoint: {}", out.metrics.display(), out.checkpoint.display());
            Ok(true)
        }
        Command::Ablate {
            stages,
            config,
            overfit,
            smoke,
        } => {
            let cfg = load(config.as_ref())?;
            let table = run_ablation(&stages, &cfg, mode(overfit, smoke), &cfg.out_dir)?;
            println!("{:<4} {:<42} {:>8} {:>8} {:>8} {:>9}", "", "method", "ref AP", "pck@.05", "pck@.1", "params");
            let mut ok = true;
            for r in &table {
                match &r.outcome {
                    Ok(o) => println!(
                        "{:<4} {:<42} {:>8.1} {:>8.4} {:>8.4} {:>9}",
                        r.stage.key(),
                        r.stage.description(),
                        r.paper_ap,
                        o.last().pck05,
                        o.last().pck10,
                        o.params
                    ),
                    Err(e) => {
                        ok = false;
                        println!("{:<4} {:<42} {:>8.1} failed: {e}", r.stage.key(), r.stage.description(), r.paper_ap);
                    }
                }
            }
            println!("table: {}", cfg.out_dir.join("ablation.csv").display());
            Ok(ok)
        }
        Command::Eval {
            ckpt,
            stage,
            config,
            predictions,
        } => {
            let cfg = load(config.as_ref())?;
            let mut file = predictions.as_ref().map(std::fs::File::create).transpose()?;
            let result = eval_checkpoint(&ckpt, stage, &cfg, file.as_mut().map(|f| f as &mut dyn std::io::Write))?;
            println!("{stage}: pck@0.05 {:.4} pck@0.1 {:.4}", result.pck05, result.pck10);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
