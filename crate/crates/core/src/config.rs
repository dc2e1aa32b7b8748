//! Experiment configuration: a flat text file of `key = value` lines.
//!
//! `#` starts a comment, blank lines are ignored, lists are comma-separated.
//! Unknown and duplicate keys are hard errors that name the offending line.
//! The resolved config (defaults plus file plus CLI overrides) can be echoed
//! back as canonical text for the run directory.

use std::fmt;

use crate::agent::{AgentConfig, Algorithm, EpsilonSchedule};
use crate::distortion::DistortionMeasure;
use crate::losses::LossConfig;
use crate::networks::{ArchitectureSpec, Embedding, MergeKind, Nonlinearity};
use crate::adam::AdamHyper;
use crate::Result;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("config line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("config line {line}: `{text}` is not a `key = value` line")]
    Malformed { line: usize, text: String },
    #[error("config line {line}: bad value for `{key}`: {detail}")]
    BadValue {
        line: usize,
        key: String,
        detail: String,
    },
    #[error("config: missing required key `{key}`")]
    MissingKey { key: String },
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    // env & run
    pub env: String,
    pub algorithm: Algorithm,
    pub measure: DistortionMeasure,
    pub steps: usize,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub out_dir: String,
    pub jobs: usize,
    // loss
    pub gamma: f64,
    pub kappa: f64,
    pub n_online: usize,
    pub n_target: usize,
    pub k_policy: usize,
    pub normalize_loss: bool,
    // architecture
    pub embedding: String,
    pub embedding_dim: usize,
    pub nonlinearity: String,
    pub merge: String,
    pub psi_hidden: Vec<usize>,
    pub feature_dim: usize,
    // agent
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub warmup: usize,
    pub target_sync: usize,
    pub train_period: usize,
    pub eval_period: usize,
    pub eval_episodes: usize,
    pub metrics_period: usize,
    pub risk_eval_steps: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: u64,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub eval_with_measure: bool,
    // sweep axes
    pub sweep_n: Vec<usize>,
    pub sweep_n_target: Vec<usize>,
    pub measures: Vec<DistortionMeasure>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env: String::new(),
            algorithm: Algorithm::Iqn,
            measure: DistortionMeasure::identity(),
            steps: 20_000,
            seed: 1,
            seeds: vec![1],
            out_dir: "runs".into(),
            jobs: 1,
            gamma: 0.99,
            kappa: 1.0,
            n_online: 8,
            n_target: 8,
            k_policy: 32,
            normalize_loss: false,
            embedding: "cosine".into(),
            embedding_dim: 64,
            nonlinearity: "relu".into(),
            merge: "hadamard".into(),
            psi_hidden: vec![128],
            feature_dim: 128,
            buffer_capacity: 10_000,
            batch_size: 32,
            warmup: 1_000,
            target_sync: 500,
            train_period: 1,
            eval_period: 1_000,
            eval_episodes: 5,
            metrics_period: 100,
            risk_eval_steps: 10_000,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 10_000,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 0.01 / 32.0,
            eval_with_measure: true,
            sweep_n: vec![1, 8, 32, 64],
            sweep_n_target: vec![1, 8, 32, 64],
            measures: vec![
                DistortionMeasure::identity(),
                DistortionMeasure::Cpw { eta: 0.71 },
                DistortionMeasure::Wang { eta: 1.5 },
                DistortionMeasure::Cvar { eta: 0.1 },
                DistortionMeasure::Cvar { eta: 0.25 },
            ],
        }
    }
}

fn parse_scalar<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> std::result::Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::BadValue {
        line,
        key: key.to_string(),
        detail: format!("cannot parse `{value}`"),
    })
}

fn parse_bool(line: usize, key: &str, value: &str) -> std::result::Result<bool, ConfigError> {
    match value.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(ConfigError::BadValue {
            line,
            key: key.to_string(),
            detail: format!("expected true/false, got `{other}`"),
        }),
    }
}

fn parse_list<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> std::result::Result<Vec<T>, ConfigError> {
    let value = value.trim();
    if value == "none" || value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|item| {
            item.trim().parse().map_err(|_| ConfigError::BadValue {
                line,
                key: key.to_string(),
                detail: format!("cannot parse list item `{item}`"),
            })
        })
        .collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        let mut env_set = false;
        let mut seeds_set = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ConfigError::Malformed {
                line,
                text: raw.trim().to_string(),
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey {
                    line,
                    key: key.to_string(),
                }
                .into());
            }
            let bad = |detail: String| ConfigError::BadValue {
                line,
                key: key.to_string(),
                detail,
            };
            match key {
                "env" => {
                    cfg.env = value.to_string();
                    env_set = true;
                }
                "algorithm" => cfg.algorithm = Algorithm::parse(value).map_err(|e| bad(e.to_string()))?,
                "measure" => {
                    cfg.measure = DistortionMeasure::parse(value).map_err(|e| bad(e.to_string()))?
                }
                "steps" => cfg.steps = parse_scalar(line, key, value)?,
                "seed" => cfg.seed = parse_scalar(line, key, value)?,
                "seeds" => {
                    cfg.seeds = parse_list(line, key, value)?;
                    seeds_set = true;
                }
                "out_dir" => cfg.out_dir = value.to_string(),
                "jobs" => cfg.jobs = parse_scalar(line, key, value)?,
                "gamma" => cfg.gamma = parse_scalar(line, key, value)?,
                "kappa" => cfg.kappa = parse_scalar(line, key, value)?,
                "n_online" => cfg.n_online = parse_scalar(line, key, value)?,
                "n_target" => cfg.n_target = parse_scalar(line, key, value)?,
                "k_policy" => cfg.k_policy = parse_scalar(line, key, value)?,
                "normalize_loss" => cfg.normalize_loss = parse_bool(line, key, value)?,
                "embedding" => cfg.embedding = value.to_string(),
                "embedding_dim" => cfg.embedding_dim = parse_scalar(line, key, value)?,
                "nonlinearity" => cfg.nonlinearity = value.to_string(),
                "merge" => cfg.merge = value.to_string(),
                "psi_hidden" => cfg.psi_hidden = parse_list(line, key, value)?,
                "feature_dim" => cfg.feature_dim = parse_scalar(line, key, value)?,
                "buffer_capacity" => cfg.buffer_capacity = parse_scalar(line, key, value)?,
                "batch_size" => cfg.batch_size = parse_scalar(line, key, value)?,
                "warmup" => cfg.warmup = parse_scalar(line, key, value)?,
                "target_sync" => cfg.target_sync = parse_scalar(line, key, value)?,
                "train_period" => cfg.train_period = parse_scalar(line, key, value)?,
                "eval_period" => cfg.eval_period = parse_scalar(line, key, value)?,
                "eval_episodes" => cfg.eval_episodes = parse_scalar(line, key, value)?,
                "metrics_period" => cfg.metrics_period = parse_scalar(line, key, value)?,
                "risk_eval_steps" => cfg.risk_eval_steps = parse_scalar(line, key, value)?,
                "epsilon_start" => cfg.epsilon_start = parse_scalar(line, key, value)?,
                "epsilon_end" => cfg.epsilon_end = parse_scalar(line, key, value)?,
                "epsilon_decay_steps" => cfg.epsilon_decay_steps = parse_scalar(line, key, value)?,
                "lr" => cfg.lr = parse_scalar(line, key, value)?,
                "adam_beta1" => cfg.adam_beta1 = parse_scalar(line, key, value)?,
                "adam_beta2" => cfg.adam_beta2 = parse_scalar(line, key, value)?,
                "adam_epsilon" => cfg.adam_epsilon = parse_scalar(line, key, value)?,
                "eval_with_measure" => cfg.eval_with_measure = parse_bool(line, key, value)?,
                "sweep_n" => cfg.sweep_n = parse_list(line, key, value)?,
                "sweep_n_target" => cfg.sweep_n_target = parse_list(line, key, value)?,
                "measures" => {
                    cfg.measures = value
                        .split(',')
                        .map(|m| DistortionMeasure::parse(m).map_err(|e| bad(e.to_string())))
                        .collect::<std::result::Result<_, _>>()?;
                }
                _ => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: key.to_string(),
                    }
                    .into())
                }
            }
        }
        if !env_set {
            return Err(ConfigError::MissingKey { key: "env".into() }.into());
        }
        if !seeds_set {
            cfg.seeds = vec![cfg.seed];
        }
        if cfg.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds list is empty".into()).into());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture_for(1, 1)?;
        self.agent_config(self.seed)?;
        if self.jobs == 0 {
            return Err(ConfigError::Invalid("jobs must be at least 1".into()).into());
        }
        if self.steps == 0 {
            return Err(ConfigError::Invalid("steps must be at least 1".into()).into());
        }
        if self.sweep_n.is_empty() || self.sweep_n_target.is_empty() {
            return Err(ConfigError::Invalid("sweep axes must be non-empty".into()).into());
        }
        if self.measures.is_empty() {
            return Err(ConfigError::Invalid("measures list is empty".into()).into());
        }
        Ok(())
    }

    pub fn architecture_for(&self, state_dim: usize, action_count: usize) -> Result<ArchitectureSpec> {
        let embedding = match self.embedding.as_str() {
            "cosine" => Embedding::CosineBasis { n: self.embedding_dim },
            "mlp" => Embedding::LearnedMlp { n: self.embedding_dim },
            other => {
                return Err(ConfigError::Invalid(format!(
                    "unknown embedding `{other}` (expected cosine or mlp)"
                ))
                .into())
            }
        };
        let nonlinearity = match self.nonlinearity.as_str() {
            "relu" => Nonlinearity::Relu,
            "sigmoid" => Nonlinearity::Sigmoid,
            other => {
                return Err(ConfigError::Invalid(format!(
                    "unknown nonlinearity `{other}` (expected relu or sigmoid)"
                ))
                .into())
            }
        };
        let merge = match self.merge.as_str() {
            "hadamard" => MergeKind::Hadamard,
            "concatenate" => MergeKind::Concatenate,
            "residual" => MergeKind::Residual,
            other => {
                return Err(ConfigError::Invalid(format!(
                    "unknown merge `{other}` (expected hadamard, concatenate or residual)"
                ))
                .into())
            }
        };
        let spec = ArchitectureSpec {
            state_dim,
            action_count,
            psi_hidden: self.psi_hidden.clone(),
            feature_dim: self.feature_dim,
            embedding,
            nonlinearity,
            merge,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            n_online: self.n_online,
            n_target: self.n_target,
            k_policy: self.k_policy,
            kappa: self.kappa,
            gamma: self.gamma,
            policy_measure: self.measure,
            normalize_by_n: self.normalize_loss,
        }
    }

    pub fn agent_config(&self, seed: u64) -> Result<AgentConfig> {
        let cfg = AgentConfig {
            algorithm: self.algorithm,
            loss: self.loss_config(),
            epsilon: EpsilonSchedule {
                start: self.epsilon_start,
                end: self.epsilon_end,
                decay_steps: self.epsilon_decay_steps,
            },
            buffer_capacity: self.buffer_capacity,
            batch_size: self.batch_size,
            warmup: self.warmup,
            target_sync_period: self.target_sync,
            train_period: self.train_period,
            eval_period: self.eval_period,
            eval_episodes: self.eval_episodes,
            metrics_period: self.metrics_period,
            adam: AdamHyper {
                learning_rate: self.lr,
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                epsilon: self.adam_epsilon,
            },
            seed,
            eval_with_measure: self.eval_with_measure,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical `key = value` text of the fully resolved config.
    pub fn resolved_text(&self) -> String {
        format!("{self}")
    }
}

fn fmt_list<T: fmt::Display>(items: &[T]) -> String {
    if items.is_empty() {
        return "none".into();
    }
    items
        .iter()
        .map(T::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "env = {}", self.env)?;
        writeln!(f, "algorithm = {}", self.algorithm.as_str())?;
        writeln!(f, "measure = {}", self.measure)?;
        writeln!(f, "steps = {}", self.steps)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "seeds = {}", fmt_list(&self.seeds))?;
        writeln!(f, "out_dir = {}", self.out_dir)?;
        writeln!(f, "jobs = {}", self.jobs)?;
        writeln!(f, "gamma = {}", self.gamma)?;
        writeln!(f, "kappa = {}", self.kappa)?;
        writeln!(f, "n_online = {}", self.n_online)?;
        writeln!(f, "n_target = {}", self.n_target)?;
        writeln!(f, "k_policy = {}", self.k_policy)?;
        writeln!(f, "normalize_loss = {}", self.normalize_loss)?;
        writeln!(f, "embedding = {}", self.embedding)?;
        writeln!(f, "embedding_dim = {}", self.embedding_dim)?;
        writeln!(f, "nonlinearity = {}", self.nonlinearity)?;
        writeln!(f, "merge = {}", self.merge)?;
        writeln!(f, "psi_hidden = {}", fmt_list(&self.psi_hidden))?;
        writeln!(f, "feature_dim = {}", self.feature_dim)?;
        writeln!(f, "buffer_capacity = {}", self.buffer_capacity)?;
        writeln!(f, "batch_size = {}", self.batch_size)?;
        writeln!(f, "warmup = {}", self.warmup)?;
        writeln!(f, "target_sync = {}", self.target_sync)?;
        writeln!(f, "train_period = {}", self.train_period)?;
        writeln!(f, "eval_period = {}", self.eval_period)?;
        writeln!(f, "eval_episodes = {}", self.eval_episodes)?;
        writeln!(f, "metrics_period = {}", self.metrics_period)?;
        writeln!(f, "risk_eval_steps = {}", self.risk_eval_steps)?;
        writeln!(f, "epsilon_start = {}", self.epsilon_start)?;
        writeln!(f, "epsilon_end = {}", self.epsilon_end)?;
        writeln!(f, "epsilon_decay_steps = {}", self.epsilon_decay_steps)?;
        writeln!(f, "lr = {}", self.lr)?;
        writeln!(f, "adam_beta1 = {}", self.adam_beta1)?;
        writeln!(f, "adam_beta2 = {}", self.adam_beta2)?;
        writeln!(f, "adam_epsilon = {}", self.adam_epsilon)?;
        writeln!(f, "eval_with_measure = {}", self.eval_with_measure)?;
        writeln!(f, "sweep_n = {}", fmt_list(&self.sweep_n))?;
        writeln!(f, "sweep_n_target = {}", fmt_list(&self.sweep_n_target))?;
        writeln!(f, "measures = {}", fmt_list(&self.measures))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::parse("env = bandit:risky\n").unwrap();
        assert_eq!(cfg.env, "bandit:risky");
        assert_eq!(cfg.n_online, 8);
        assert_eq!(cfg.seeds, vec![1]);
    }

    #[test]
    fn unknown_key_names_line() {
        let err = ExperimentConfig::parse("env = bandit:risky\nbogus = 3\n").unwrap_err();
        let text = err.to_string();
        assert!(text.contains("line 2") && text.contains("bogus"), "{text}");
    }

    #[test]
    fn duplicate_key_rejected() {
        let err = ExperimentConfig::parse("env = a\nenv = b\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn malformed_line_rejected() {
        let err = ExperimentConfig::parse("env bandit\n").unwrap_err();
        assert!(err.to_string().contains("not a `key = value`"), "{err}");
    }

    #[test]
    fn missing_env_rejected() {
        let err = ExperimentConfig::parse("steps = 10\n").unwrap_err();
        assert!(err.to_string().contains("env"), "{err}");
    }

    #[test]
    fn lists_and_comments() {
        let text = "
# experiment
env = chain:L=5,p=1.0
seeds = 1, 2, 3
psi_hidden = none
measures = neutral, cvar:0.25
sweep_n = 1,8
";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
        assert!(cfg.psi_hidden.is_empty());
        assert_eq!(cfg.measures.len(), 2);
        assert_eq!(cfg.sweep_n, vec![1, 8]);
    }

    #[test]
    fn resolved_text_round_trips() {
        let text = "env = cliff:p=0.1\nkappa = 0\nmerge = residual\nseeds = 4,5\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        let echoed = cfg.resolved_text();
        let reparsed = ExperimentConfig::parse(&echoed).unwrap();
        assert_eq!(cfg, reparsed);
    }

    #[test]
    fn default_measure_list_parses_and_is_canonical() {
        let cfg = ExperimentConfig::parse("env = bandit:risky\n").unwrap();
        let names: Vec<String> = cfg.measures.iter().map(|m| m.to_string()).collect();
        assert_eq!(names, vec!["neutral", "cpw:0.71", "wang:1.5", "cvar:0.1", "cvar:0.25"]);
    }

    #[test]
    fn bad_values_name_key() {
        let err = ExperimentConfig::parse("env = a\nsteps = many\n").unwrap_err();
        assert!(err.to_string().contains("steps"), "{err}");
        let err = ExperimentConfig::parse("env = a\nmeasure = cvar:2\n").unwrap_err();
        assert!(err.to_string().contains("measure"), "{err}");
    }
}
