//! `iqn`: train and evaluate distributional RL agents on desk-scale
//! environments, run the N/N' ablation grid and the distortion-measure
//! sweep, plot metrics CSVs, and compute human-normalized scores.
//!
//! Exit codes: 0 on success, 1 on configuration errors, 2 on runtime
//! failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use iqn_core::agent::{evaluate_policy, EvalBudget, PolicyNet};
use iqn_core::checkpoint;
use iqn_core::config::ExperimentConfig;
use iqn_core::env::parse_env;
use iqn_core::harness::{
    parse_metrics, run_ablation_nn, run_risk_sweep, train_command,
};
use iqn_core::metrics::{human_gap, human_normalized_score, ScoreTriple};
use iqn_core::networks::{DqnNetwork, IqnNetwork, QrNetwork};
use iqn_core::plot::plot_metrics;
use iqn_core::{Error, Result};

#[derive(Parser)]
#[command(name = "iqn", version, about = "Implicit quantile networks on desk-scale environments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run from a config file and write its artifact directory.
    Train {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Greedy evaluation of a saved checkpoint.
    Eval {
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the N/N' sample-count ablation grid.
    AblateNn {
        config: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run one training run per configured distortion measure and seed.
    RiskSweep {
        config: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Render a metrics CSV as an SVG line chart.
    Plot {
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Human-normalized score and human-gap for a raw score triple.
    Score {
        #[arg(long, allow_negative_numbers = true)]
        agent: f64,
        #[arg(long, allow_negative_numbers = true)]
        human: f64,
        #[arg(long, allow_negative_numbers = true)]
        random: f64,
    },
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Config(iqn_core::ConfigError::Invalid(format!(
            "cannot read `{}`: {e}",
            path.display()
        )))
    })?;
    ExperimentConfig::parse(&text)
}

struct Overrides {
    seed: Option<u64>,
    steps: Option<usize>,
    out_dir: Option<PathBuf>,
    jobs: Option<usize>,
}

fn apply_overrides(cfg: &mut ExperimentConfig, o: &Overrides) -> Result<()> {
    if let Some(seed) = o.seed {
        cfg.seed = seed;
        cfg.seeds = vec![seed];
    }
    if let Some(steps) = o.steps {
        cfg.steps = steps;
    }
    if let Some(out_dir) = &o.out_dir {
        cfg.out_dir = out_dir.display().to_string();
    }
    if let Some(jobs) = o.jobs {
        cfg.jobs = jobs;
    }
    cfg.validate()
}

fn cmd_train(config: &Path, o: &Overrides) -> Result<()> {
    let mut cfg = load_config(config)?;
    apply_overrides(&mut cfg, o)?;
    let outcome = train_command(&cfg)?;
    let dir = Path::new(&cfg.out_dir).join(&outcome.run_id);
    println!(
        "run {} finished: {} steps, {} gradient steps",
        outcome.run_id,
        cfg.steps,
        outcome.output.trainer.grad_steps()
    );
    if let Some(&(step, ret)) = outcome.output.eval_points.last() {
        println!("last eval at step {step}: mean return {ret}");
    }
    println!("artifacts in {}", dir.display());
    Ok(())
}

fn cmd_eval(config: &Path, ckpt: &Path, episodes: usize, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(config)?;
    let env = parse_env(&cfg.env)?;
    let arch = cfg.architecture_for(env.state_dim(), env.action_count())?;
    let params = checkpoint::load(ckpt)?;
    let net = match cfg.algorithm {
        iqn_core::agent::Algorithm::Iqn => PolicyNet::Iqn(IqnNetwork::from_params(arch, params)?),
        iqn_core::agent::Algorithm::Qr => {
            PolicyNet::Qr(QrNetwork::from_params(arch, cfg.n_online, params)?)
        }
        iqn_core::agent::Algorithm::Dqn => PolicyNet::Dqn(DqnNetwork::from_params(arch, params)?),
    };
    let measure = if cfg.eval_with_measure {
        cfg.measure
    } else {
        iqn_core::distortion::DistortionMeasure::identity()
    };
    let stats = evaluate_policy(
        env,
        &net,
        &measure,
        cfg.k_policy,
        cfg.gamma,
        EvalBudget::Episodes(episodes),
        seed.unwrap_or(cfg.seed),
    )?;
    println!(
        "eval over {} episodes ({} steps): mean return {}, hazards {}",
        stats.episodes, stats.steps, stats.mean_return, stats.hazards
    );
    let counts: Vec<String> = stats
        .action_counts
        .iter()
        .enumerate()
        .map(|(a, c)| format!("a{a}:{c}"))
        .collect();
    println!("action counts: {}", counts.join(" "));
    Ok(())
}

fn cmd_ablate(config: &Path, o: &Overrides) -> Result<()> {
    let mut cfg = load_config(config)?;
    apply_overrides(&mut cfg, o)?;
    let outcome = run_ablation_nn(&cfg)?;
    let failed = outcome.cells.iter().filter(|c| c.status != "ok").count();
    println!(
        "ablation grid: {} cells ({} failed), summary at {}",
        outcome.cells.len(),
        failed,
        outcome.summary_path.display()
    );
    for cell in &outcome.cells {
        println!(
            "  N={} N'={} seed={}: early {:?} late {:?} [{}]",
            cell.n_online, cell.n_target, cell.seed, cell.early_eval_mean, cell.late_eval_mean, cell.status
        );
    }
    if failed > 0 {
        return Err(Error::invalid(format!("{failed} grid cells failed")));
    }
    Ok(())
}

fn cmd_risk_sweep(config: &Path, o: &Overrides) -> Result<()> {
    let mut cfg = load_config(config)?;
    apply_overrides(&mut cfg, o)?;
    let outcome = run_risk_sweep(&cfg)?;
    let failed = outcome.cells.iter().filter(|c| c.status != "ok").count();
    println!(
        "risk sweep: {} runs ({} failed), summary at {}",
        outcome.cells.len(),
        failed,
        outcome.summary_path.display()
    );
    for cell in &outcome.cells {
        match &cell.eval {
            Some(e) => println!(
                "  {} seed={}: eval return {}, hazards {} over {} steps",
                cell.measure, cell.seed, e.mean_return, e.hazards, e.steps
            ),
            None => println!("  {} seed={}: {}", cell.measure, cell.seed, cell.status),
        }
    }
    if failed > 0 {
        return Err(Error::invalid(format!("{failed} sweep runs failed")));
    }
    Ok(())
}

fn cmd_plot(csv: &Path, out: &Path) -> Result<()> {
    let file = std::fs::File::open(csv)?;
    let rows = parse_metrics(std::io::BufReader::new(file))?;
    let svg = plot_metrics(&rows)?;
    std::fs::write(out, svg)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_score(agent: f64, human: f64, random: f64) -> Result<()> {
    let triple = ScoreTriple { agent, human, random };
    let score = human_normalized_score(&triple)?;
    println!("score = {score}");
    println!("gap = {}", human_gap(score));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            seed,
            steps,
            out_dir,
        } => cmd_train(
            &config,
            &Overrides {
                seed,
                steps,
                out_dir,
                jobs: None,
            },
        ),
        Command::Eval {
            config,
            checkpoint,
            episodes,
            seed,
        } => cmd_eval(&config, &checkpoint, episodes.unwrap_or(20), seed),
        Command::AblateNn {
            config,
            jobs,
            out_dir,
            steps,
        } => cmd_ablate(
            &config,
            &Overrides {
                seed: None,
                steps,
                out_dir,
                jobs,
            },
        ),
        Command::RiskSweep {
            config,
            jobs,
            out_dir,
            steps,
        } => cmd_risk_sweep(
            &config,
            &Overrides {
                seed: None,
                steps,
                out_dir,
                jobs,
            },
        ),
        Command::Plot { csv, out } => cmd_plot(&csv, &out),
        Command::Score {
            agent,
            human,
            random,
        } => cmd_score(agent, human, random),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
