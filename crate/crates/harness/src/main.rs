use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use siegmund::formats::write_mdp;
use siegmund::{Error, Result};
use siegmund_harness::checks::{run_suite, SuiteOptions};
use siegmund_harness::config::{load_config, validate_config, ExperimentConfig, ExperimentKind};
use siegmund_harness::corpus::{builtin, BUILTINS};
use siegmund_harness::run::run_experiment;

/// Simulation and verification of almost-supermartingale recursions,
/// skeleton stochastic approximation and linear Q-learning.
#[derive(Parser)]
#[command(name = "siegmund", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an rs_special, example1, rs_general or sa_generic experiment.
    Simulate(RunArgs),
    /// Build a skeleton timescale and check its bracket lemmas.
    Skeleton(RunArgs),
    /// Run linear Q-learning with the adaptive epsilon-softmax policy.
    Qlearn(RunArgs),
    /// Compute statistics, rate and envelope verdicts for saved path CSVs.
    Analyze(RunArgs),
    /// Run the acceptance suite.
    Verify(VerifyArgs),
    /// List or export the built-in MDPs.
    Corpus {
        #[command(subcommand)]
        action: CorpusAction,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<u32>,
    #[arg(long)]
    horizon: Option<u64>,
    /// Output directory.
    #[arg(long, env = "SIEGMUND_OUT")]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Criteria to run (default: all).
    #[arg(long, num_args = 1..)]
    only: Vec<u32>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
    /// Directory for `verify_summary.json`.
    #[arg(long, env = "SIEGMUND_OUT")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum CorpusAction {
    List,
    Generate {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate(a) => experiment(
            a,
            &[
                ExperimentKind::RsSpecial,
                ExperimentKind::Example1,
                ExperimentKind::RsGeneral,
                ExperimentKind::SaGeneric,
            ],
        ),
        Command::Skeleton(a) => experiment(a, &[ExperimentKind::Skeleton]),
        Command::Qlearn(a) => experiment(a, &[ExperimentKind::LinearQ]),
        Command::Analyze(a) => experiment(a, &[ExperimentKind::Analyze]),
        Command::Verify(v) => verify(v),
        Command::Corpus { action } => corpus(action),
    }
}

fn experiment(a: RunArgs, kinds: &[ExperimentKind]) -> Result<bool> {
    let cfg = match &a.config {
        Some(p) => load_config(p)?,
        // Skeleton and Q-learning runs have complete defaults.
        None if kinds.len() == 1 && kinds[0] != ExperimentKind::Analyze => {
            validate_config(&format!("{{\"kind\": \"{}\"}}", kinds[0].name()))?
        }
        None => return Err(Error::Config("--config is required for this subcommand".into())),
    };
    if !kinds.contains(&cfg.kind) {
        let names: Vec<&str> = kinds.iter().map(|k| k.name()).collect();
        return Err(Error::Config(format!(
            "kind: {} does not belong to this subcommand (expected one of {})",
            cfg.kind.name(),
            names.join(", ")
        )));
    }
    let cfg = apply_overrides(cfg, &a)?;
    let bundle = run_experiment(&cfg)?;
    for v in &bundle.verdicts {
        let crit = v.criterion.map_or(String::new(), |c| format!(" (criterion {c})"));
        println!(
            "{} {}{crit}: {:.6e} vs {:.6e}; {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.check,
            v.value,
            v.threshold,
            v.detail
        );
    }
    println!(
        "wrote {} files to {} in {:.2} s",
        bundle.files.len(),
        bundle.dir.display(),
        bundle.wall_seconds
    );
    Ok(bundle.all_pass())
}

fn apply_overrides(mut cfg: ExperimentConfig, a: &RunArgs) -> Result<ExperimentConfig> {
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(p) = a.paths {
        cfg.paths = p;
    }
    if let Some(h) = a.horizon {
        cfg.horizon = h;
    }
    if let Some(o) = &a.out {
        cfg.out = o.clone();
    }
    if a.threads.is_some() {
        cfg.threads = a.threads;
    }
    cfg.validate()
}

fn verify(v: VerifyArgs) -> Result<bool> {
    if v.threads == Some(0) {
        return Err(Error::Config("threads: must be at least 1".into()));
    }
    let opts = SuiteOptions {
        seed: v.seed,
        threads: v.threads,
    };
    let outcomes = run_suite(&v.only, &opts)?;
    for o in &outcomes {
        println!("{}", o.line());
    }
    if let Some(dir) = &v.out {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(&outcomes).map_err(|e| Error::Argument(e.to_string()))?;
        std::fs::write(dir.join("verify_summary.json"), json)?;
    }
    Ok(outcomes.iter().all(|o| o.pass))
}

fn corpus(action: CorpusAction) -> Result<bool> {
    match action {
        CorpusAction::List => {
            for (name, about) in BUILTINS {
                println!("{name}\t{about}");
            }
        }
        CorpusAction::Generate { name, out } => {
            let (mdp, features) = builtin(&name)?;
            let text = write_mdp(&mdp, &features);
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(true)
}
