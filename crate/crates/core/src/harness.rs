//! Experiment orchestration: metrics CSV emission, the N/N' ablation grid,
//! the distortion-measure sweep, and per-run artifact directories.
//!
//! Every run directory receives the resolved config, a provenance record
//! (build identifier plus seed list) and a parameter checkpoint next to its
//! metrics CSV, so any row in any summary can be traced back to a
//! reproducible invocation.

use std::borrow::Borrow;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::agent::{run_training, EvalStats, TrainingOutput};
use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::env::parse_env;
use crate::{Error, Result};

pub const METRICS_FIELDS: [&str; 13] = [
    "run_id",
    "seed",
    "env",
    "algorithm",
    "measure",
    "n_online",
    "n_target",
    "step",
    "behavior_return",
    "eval_return",
    "loss",
    "epsilon",
    "aux",
];

pub const METRICS_HEADER: &str =
    "run_id,seed,env,algorithm,measure,n_online,n_target,step,behavior_return,eval_return,loss,epsilon,aux";

/// One emitted metrics record. Within a run, rows are strictly ordered by
/// step; optional fields are empty CSV cells.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub seed: u64,
    pub env: String,
    pub algorithm: String,
    pub measure: String,
    pub n_online: usize,
    pub n_target: usize,
    pub step: u64,
    pub behavior_return: Option<f64>,
    pub eval_return: Option<f64>,
    pub loss: Option<f64>,
    pub epsilon: f64,
    pub aux: u64,
}

/// Identity fields handed to `run_training` for row stamping.
#[derive(Debug, Clone)]
pub struct RunMeta {
    pub run_id: String,
    pub env: String,
}

impl RunMeta {
    pub fn new(run_id: &str, env: &str) -> Self {
        RunMeta {
            run_id: run_id.to_string(),
            env: env.to_string(),
        }
    }
}

/// Floats are written with 9 significant digits.
pub fn fmt_sig9(x: f64) -> String {
    format!("{x:.8e}")
}

fn parse_opt_f64(field: &str, context: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse()
        .map(Some)
        .map_err(|_| Error::Metrics(format!("bad float `{field}` in {context}")))
}

/// Stream rows to CSV without materializing them: header, then one record
/// per row. Rows must be strictly step-ordered within each run.
pub fn emit_metrics<W: Write, R: Borrow<MetricsRow>>(
    writer: W,
    rows: impl IntoIterator<Item = R>,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(writer);
    w.write_record(METRICS_FIELDS)
        .map_err(|e| Error::Metrics(e.to_string()))?;
    let mut last_step: BTreeMap<String, u64> = BTreeMap::new();
    for row in rows {
        let row = row.borrow();
        if let Some(&prev) = last_step.get(&row.run_id) {
            if row.step <= prev {
                return Err(Error::Metrics(format!(
                    "rows for run `{}` not strictly ordered by step ({} after {})",
                    row.run_id, row.step, prev
                )));
            }
        }
        last_step.insert(row.run_id.clone(), row.step);
        w.write_record([
            row.run_id.as_str(),
            &row.seed.to_string(),
            row.env.as_str(),
            row.algorithm.as_str(),
            row.measure.as_str(),
            &row.n_online.to_string(),
            &row.n_target.to_string(),
            &row.step.to_string(),
            &row.behavior_return.map(fmt_sig9).unwrap_or_default(),
            &row.eval_return.map(fmt_sig9).unwrap_or_default(),
            &row.loss.map(fmt_sig9).unwrap_or_default(),
            &fmt_sig9(row.epsilon),
            &row.aux.to_string(),
        ])
        .map_err(|e| Error::Metrics(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_metrics<R: Read>(reader: R) -> Result<Vec<MetricsRow>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    {
        let headers = r.headers().map_err(|e| Error::Metrics(e.to_string()))?;
        let expected: Vec<&str> = METRICS_FIELDS.to_vec();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Metrics(format!(
                "unexpected header `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
    }
    let mut rows = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record.map_err(|e| Error::Metrics(e.to_string()))?;
        let context = format!("record {}", i + 1);
        if record.len() != METRICS_FIELDS.len() {
            return Err(Error::Metrics(format!(
                "{context}: expected {} fields, got {}",
                METRICS_FIELDS.len(),
                record.len()
            )));
        }
        let int = |idx: usize| -> Result<u64> {
            record[idx]
                .parse()
                .map_err(|_| Error::Metrics(format!("bad integer `{}` in {context}", &record[idx])))
        };
        rows.push(MetricsRow {
            run_id: record[0].to_string(),
            seed: int(1)?,
            env: record[2].to_string(),
            algorithm: record[3].to_string(),
            measure: record[4].to_string(),
            n_online: int(5)? as usize,
            n_target: int(6)? as usize,
            step: int(7)?,
            behavior_return: parse_opt_f64(&record[8], &context)?,
            eval_return: parse_opt_f64(&record[9], &context)?,
            loss: parse_opt_f64(&record[10], &context)?,
            epsilon: record[11]
                .parse()
                .map_err(|_| Error::Metrics(format!("bad epsilon in {context}")))?,
            aux: int(12)?,
        });
    }
    Ok(rows)
}

fn sanitize(text: &str) -> String {
    text.chars()
        .map(|c| match c {
            ':' | ',' | '=' | '/' | ' ' => '_',
            c => c,
        })
        .collect()
}

pub fn run_id_for(cfg: &ExperimentConfig, seed: u64) -> String {
    sanitize(&format!(
        "{}-{}-{}-n{}-m{}-s{}",
        cfg.env,
        cfg.algorithm.as_str(),
        cfg.measure,
        cfg.n_online,
        cfg.n_target,
        seed
    ))
}

/// A finished training run plus its identity.
pub struct RunOutcome {
    pub run_id: String,
    pub seed: u64,
    pub output: TrainingOutput,
}

/// Train one run of the experiment described by `cfg` with the given seed.
pub fn execute_run(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutcome> {
    let env = parse_env(&cfg.env)?;
    let arch = cfg.architecture_for(env.state_dim(), env.action_count())?;
    let agent_cfg = cfg.agent_config(seed)?;
    let run_id = run_id_for(cfg, seed);
    let meta = RunMeta::new(&run_id, &env.name());
    let output = run_training(env, arch, agent_cfg, cfg.steps, &meta)?;
    Ok(RunOutcome {
        run_id,
        seed,
        output,
    })
}

pub const BUILD_ID: &str = concat!("iqn ", env!("CARGO_PKG_VERSION"));

fn write_provenance(dir: &Path, seeds: &[u64]) -> Result<()> {
    let seeds = seeds
        .iter()
        .map(u64::to_string)
        .collect::<Vec<_>>()
        .join(",");
    std::fs::write(
        dir.join("provenance.txt"),
        format!("build = {BUILD_ID}\nseeds = {seeds}\n"),
    )?;
    Ok(())
}

/// Write metrics.csv, resolved.cfg, provenance.txt and checkpoint.ckpt for a
/// finished run; returns the metrics path.
pub fn write_run_artifacts(
    out_dir: &Path,
    cfg: &ExperimentConfig,
    outcome: &RunOutcome,
) -> Result<PathBuf> {
    let dir = out_dir.join(&outcome.run_id);
    std::fs::create_dir_all(&dir)?;
    let metrics_path = dir.join("metrics.csv");
    let file = std::fs::File::create(&metrics_path)?;
    emit_metrics(std::io::BufWriter::new(file), outcome.output.rows.iter())?;
    let mut resolved = cfg.clone();
    resolved.seed = outcome.seed;
    resolved.seeds = vec![outcome.seed];
    std::fs::write(dir.join("resolved.cfg"), resolved.resolved_text())?;
    write_provenance(&dir, &[outcome.seed])?;
    checkpoint::save(
        &dir.join("checkpoint.ckpt"),
        outcome.output.trainer.online().params(),
    )?;
    Ok(metrics_path)
}

/// `train` entry point: one run, artifacts on disk.
pub fn train_command(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let outcome = execute_run(cfg, cfg.seed)?;
    write_run_artifacts(Path::new(&cfg.out_dir), cfg, &outcome)?;
    Ok(outcome)
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Eval means over the first and last 10% of training steps.
pub fn phase_means(eval_points: &[(u64, f64)], total_steps: usize) -> (Option<f64>, Option<f64>) {
    let early_cut = (total_steps as f64 * 0.1).ceil() as u64;
    let late_cut = (total_steps as f64 * 0.9).floor() as u64;
    let early: Vec<f64> = eval_points
        .iter()
        .filter(|&&(s, _)| s <= early_cut)
        .map(|&(_, v)| v)
        .collect();
    let late: Vec<f64> = eval_points
        .iter()
        .filter(|&&(s, _)| s >= late_cut)
        .map(|&(_, v)| v)
        .collect();
    (mean(&early), mean(&late))
}

fn run_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot build thread pool: {e}")))
}

#[derive(Debug, Clone)]
pub struct AblationCell {
    pub run_id: String,
    pub seed: u64,
    pub n_online: usize,
    pub n_target: usize,
    pub early_eval_mean: Option<f64>,
    pub late_eval_mean: Option<f64>,
    pub final_eval_mean: Option<f64>,
    pub status: String,
}

pub struct AblationOutcome {
    pub cells: Vec<AblationCell>,
    pub summary_path: PathBuf,
}

fn write_ablation_summary(path: &Path, cells: &[AblationCell]) -> Result<()> {
    let mut w = csv::Writer::from_writer(std::fs::File::create(path)?);
    w.write_record([
        "run_id",
        "seed",
        "n_online",
        "n_target",
        "early_eval_mean",
        "late_eval_mean",
        "final_eval_mean",
        "status",
    ])
    .map_err(|e| Error::Metrics(e.to_string()))?;
    for c in cells {
        w.write_record([
            c.run_id.as_str(),
            &c.seed.to_string(),
            &c.n_online.to_string(),
            &c.n_target.to_string(),
            &c.early_eval_mean.map(fmt_sig9).unwrap_or_default(),
            &c.late_eval_mean.map(fmt_sig9).unwrap_or_default(),
            &c.final_eval_mean.map(fmt_sig9).unwrap_or_default(),
            c.status.as_str(),
        ])
        .map_err(|e| Error::Metrics(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// The N/N' grid: one run per (n_online, n_target, seed) cell, in parallel
/// up to `cfg.jobs`. A failed cell is recorded in its summary row and does
/// not abort the grid.
pub fn run_ablation_nn(cfg: &ExperimentConfig) -> Result<AblationOutcome> {
    let out_dir = Path::new(&cfg.out_dir);
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("resolved.cfg"), cfg.resolved_text())?;
    write_provenance(out_dir, &cfg.seeds)?;

    let mut cell_cfgs = Vec::new();
    for &n in &cfg.sweep_n {
        for &np in &cfg.sweep_n_target {
            for &seed in &cfg.seeds {
                let mut c = cfg.clone();
                c.n_online = n;
                c.n_target = np;
                cell_cfgs.push((c, seed));
            }
        }
    }

    let pool = run_pool(cfg.jobs)?;
    let cells: Vec<AblationCell> = pool.install(|| {
        cell_cfgs
            .par_iter()
            .map(|(c, seed)| {
                let run_id = run_id_for(c, *seed);
                match execute_run(c, *seed)
                    .and_then(|o| write_run_artifacts(out_dir, c, &o).map(|_| o))
                {
                    Ok(outcome) => {
                        let (early, late) =
                            phase_means(&outcome.output.eval_points, c.steps);
                        let final_eval = outcome.output.eval_points.last().map(|&(_, v)| v);
                        AblationCell {
                            run_id,
                            seed: *seed,
                            n_online: c.n_online,
                            n_target: c.n_target,
                            early_eval_mean: early,
                            late_eval_mean: late,
                            final_eval_mean: final_eval,
                            status: "ok".into(),
                        }
                    }
                    Err(e) => AblationCell {
                        run_id,
                        seed: *seed,
                        n_online: c.n_online,
                        n_target: c.n_target,
                        early_eval_mean: None,
                        late_eval_mean: None,
                        final_eval_mean: None,
                        status: format!("error: {e}"),
                    },
                }
            })
            .collect()
    });

    let summary_path = out_dir.join("summary.csv");
    write_ablation_summary(&summary_path, &cells)?;
    Ok(AblationOutcome {
        cells,
        summary_path,
    })
}

#[derive(Debug, Clone)]
pub struct RiskCell {
    pub run_id: String,
    pub seed: u64,
    pub measure: String,
    pub final_eval_mean: Option<f64>,
    pub eval: Option<EvalStats>,
    pub status: String,
}

pub struct RiskSweepOutcome {
    pub cells: Vec<RiskCell>,
    pub summary_path: PathBuf,
}

fn write_risk_summary(path: &Path, cells: &[RiskCell]) -> Result<()> {
    let mut w = csv::Writer::from_writer(std::fs::File::create(path)?);
    w.write_record([
        "run_id",
        "seed",
        "measure",
        "final_eval_mean",
        "eval_steps",
        "cliff_falls",
        "greedy_action",
        "action_counts",
        "status",
    ])
    .map_err(|e| Error::Metrics(e.to_string()))?;
    for c in cells {
        let (steps, falls, greedy, counts) = match &c.eval {
            Some(e) => {
                let greedy = e
                    .action_counts
                    .iter()
                    .enumerate()
                    .max_by_key(|&(i, &c)| (c, std::cmp::Reverse(i)))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                let counts = e
                    .action_counts
                    .iter()
                    .enumerate()
                    .map(|(i, n)| format!("a{i}:{n}"))
                    .collect::<Vec<_>>()
                    .join(";");
                (
                    e.steps.to_string(),
                    e.hazards.to_string(),
                    greedy.to_string(),
                    counts,
                )
            }
            None => (String::new(), String::new(), String::new(), String::new()),
        };
        w.write_record([
            c.run_id.as_str(),
            &c.seed.to_string(),
            c.measure.as_str(),
            &c.final_eval_mean.map(fmt_sig9).unwrap_or_default(),
            &steps,
            &falls,
            &greedy,
            &counts,
            c.status.as_str(),
        ])
        .map_err(|e| Error::Metrics(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// The distortion-measure sweep: one run per (measure, seed), each followed
/// by a greedy evaluation pass of `risk_eval_steps` env steps that collects
/// risk diagnostics (cliff falls, per-action frequencies).
pub fn run_risk_sweep(cfg: &ExperimentConfig) -> Result<RiskSweepOutcome> {
    let out_dir = Path::new(&cfg.out_dir);
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("resolved.cfg"), cfg.resolved_text())?;
    write_provenance(out_dir, &cfg.seeds)?;

    let mut cell_cfgs = Vec::new();
    for measure in &cfg.measures {
        for &seed in &cfg.seeds {
            let mut c = cfg.clone();
            c.measure = *measure;
            cell_cfgs.push((c, seed));
        }
    }

    let pool = run_pool(cfg.jobs)?;
    let cells: Vec<RiskCell> = pool.install(|| {
        cell_cfgs
            .par_iter()
            .map(|(c, seed)| {
                let run_id = run_id_for(c, *seed);
                let measure = c.measure.to_string();
                let result = execute_run(c, *seed).and_then(|mut o| {
                    write_run_artifacts(out_dir, c, &o)?;
                    let eval = o.output.trainer.evaluate_steps(c.risk_eval_steps)?;
                    Ok((o, eval))
                });
                match result {
                    Ok((_outcome, eval)) => RiskCell {
                        run_id,
                        seed: *seed,
                        measure,
                        final_eval_mean: Some(eval.mean_return),
                        eval: Some(eval),
                        status: "ok".into(),
                    },
                    Err(e) => RiskCell {
                        run_id,
                        seed: *seed,
                        measure,
                        final_eval_mean: None,
                        eval: None,
                        status: format!("error: {e}"),
                    },
                }
            })
            .collect()
    });

    let summary_path = out_dir.join("summary.csv");
    write_risk_summary(&summary_path, &cells)?;
    Ok(RiskSweepOutcome {
        cells,
        summary_path,
    })
}
