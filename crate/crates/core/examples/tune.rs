// scratch probe for acceptance tuning; not part of the deliverable
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use iqn_core::adam::{adam_step, AdamHyper, AdamState};
use iqn_core::agent::{run_training, AgentConfig, Algorithm, EpsilonSchedule, Transition};
use iqn_core::config::ExperimentConfig;
use iqn_core::env::{analytic_quantiles, parse_env, KnownBandit};
use iqn_core::harness::RunMeta;
use iqn_core::losses::{qr_loss, qr_midpoints, LossConfig};
use iqn_core::metrics::wasserstein1;
use iqn_core::networks::{iqn_forward, ArchitectureSpec, Embedding, MergeKind, Nonlinearity, QrNetwork};
use iqn_core::tensor::Tensor;

fn bandit_arch(state_dim: usize, actions: usize, d: usize, n: usize, hidden: Vec<usize>) -> ArchitectureSpec {
    ArchitectureSpec {
        state_dim,
        action_count: actions,
        psi_hidden: hidden,
        feature_dim: d,
        embedding: Embedding::CosineBasis { n },
        nonlinearity: Nonlinearity::Relu,
        merge: MergeKind::Hadamard,
    }
}

fn probe_criterion3() {
    println!("== criterion 3: bernoulli distribution recovery ==");
    let grid: Vec<f64> = (1..=19).map(|i| i as f64 * 0.05).collect();
    let bandit = KnownBandit::bernoulli();
    let analytic = analytic_quantiles(&bandit, 0, &grid).unwrap();
    for seed in [1u64, 2, 3] {
        let t0 = Instant::now();
        let cfg = AgentConfig {
            algorithm: Algorithm::Iqn,
            loss: LossConfig {
                n_online: 8,
                n_target: 8,
                k_policy: 8,
                kappa: 0.0,
                gamma: 1.0,
                ..LossConfig::default()
            },
            epsilon: EpsilonSchedule { start: 1.0, end: 0.05, decay_steps: 1000 },
            buffer_capacity: 10_000,
            batch_size: 16,
            warmup: 500,
            target_sync_period: 500,
            train_period: 1,
            eval_period: 10_000,
            eval_episodes: 2,
            metrics_period: 5_000,
            adam: AdamHyper::with_learning_rate(1e-3),
            seed,
            eval_with_measure: true,
        };
        let arch = bandit_arch(1, 1, 32, 64, vec![32]);
        let meta = RunMeta::new("c3", "bandit:bernoulli");
        let out = run_training(Box::new(KnownBandit::bernoulli()), arch, cfg, 50_000, &meta).unwrap();
        let net = match out.trainer.online() {
            iqn_core::agent::PolicyNet::Iqn(n) => n.clone(),
            _ => unreachable!(),
        };
        let z = iqn_forward(&net, &Tensor::matrix(1, 1, vec![1.0]).unwrap(), &grid).unwrap();
        let values: Vec<f64> = z.data().to_vec();
        let w1 = wasserstein1(&values, analytic.values()).unwrap();
        println!("  seed {seed}: w1 = {w1:.4}  ({:.1?})", t0.elapsed());
        let show: Vec<String> = values.iter().map(|v| format!("{v:.2}")).collect();
        println!("    learned: {}", show.join(" "));
    }
}

fn probe_criterion2() {
    println!("== criterion 2: QR exponential quantile recovery ==");
    let t0 = Instant::now();
    let spec = bandit_arch(1, 1, 16, 8, vec![]);
    let net_seed: u64 = std::env::args().nth(4).map(|s| s.parse().unwrap()).unwrap_or(42);
    let mut online = QrNetwork::init(spec.clone(), 8, net_seed).unwrap();
    let cfg = LossConfig {
        n_online: 8,
        n_target: 8,
        k_policy: 1,
        kappa: 0.0,
        gamma: 1.0,
        ..LossConfig::default()
    };
    let lr: f64 = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let batch_size: usize = std::env::args().nth(3).map(|s| s.parse().unwrap()).unwrap_or(8);
    let mut adam = AdamState::new(AdamHyper::with_learning_rate(lr));
    let seed: u64 = std::env::args().nth(4).map(|s| s.parse().unwrap()).unwrap_or(7);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for step in 0..100_000 {
        if step == 50_000 {
            adam.hyper.learning_rate = lr / 5.0;
        }
        let batch: Vec<Transition> = (0..batch_size)
            .map(|_| Transition {
                state: vec![1.0],
                action: 0,
                reward: -(1.0 - rng.random::<f64>()).ln(),
                next_state: vec![1.0],
                terminal: true,
            })
            .collect();
        let target = online.clone();
        let out = qr_loss(&online, &target, &batch, &cfg).unwrap();
        adam_step(online.params_mut(), &out.grads, &mut adam).unwrap();
    }
    let theta = iqn_core::networks::qr_forward(&online, &Tensor::matrix(1, 1, vec![1.0]).unwrap()).unwrap();
    let mid = qr_midpoints(8).unwrap();
    let mut worst = 0.0f64;
    for (i, &tau) in mid.iter().enumerate() {
        let expect = -(1.0f64 - tau).ln();
        let got = theta.data()[i];
        worst = worst.max((got - expect).abs());
        println!("  tau {tau:.4}: {got:.4} vs {expect:.4}");
    }
    println!("  max abs err {worst:.4}  ({:.1?})", t0.elapsed());
}

fn probe_criterion5_bandit() {
    println!("== criterion 5a: risky bandit arm choice ==");
    for measure in ["neutral", "cvar:0.1"] {
        for seed in [1u64, 2, 3, 4, 5] {
            let t0 = Instant::now();
            let text = format!(
                "
env = bandit:risky
steps = 25000
seed = {seed}
measure = {measure}
kappa = 0
gamma = 1.0
n_online = 8
n_target = 8
k_policy = 32
embedding_dim = 64
psi_hidden = 32
feature_dim = 32
buffer_capacity = 10000
batch_size = 16
warmup = 500
target_sync = 500
eval_period = 25000
eval_episodes = 2
metrics_period = 5000
epsilon_decay_steps = 8000
epsilon_end = 0.05
lr = 0.001
out_dir = /tmp/ignore
"
            );
            let cfg = ExperimentConfig::parse(&text).unwrap();
            let env = parse_env(&cfg.env).unwrap();
            let arch = cfg.architecture_for(env.state_dim(), env.action_count()).unwrap();
            let agent_cfg = cfg.agent_config(seed).unwrap();
            let meta = RunMeta::new("c5a", &env.name());
            let mut out = run_training(env, arch, agent_cfg, cfg.steps, &meta).unwrap();
            let stats = out.trainer.evaluate_episodes(20).unwrap();
            println!(
                "  {measure} seed {seed}: arm counts {:?} ({:.1?})",
                stats.action_counts,
                t0.elapsed()
            );
        }
    }
}

fn probe_criterion5_cliff() {
    println!("== criterion 5b: cliff fall rates ==");
    for measure in ["neutral", "cvar:0.25"] {
        let mut total_falls = 0u64;
        for seed in [1u64, 2, 3, 4, 5] {
            let t0 = Instant::now();
            let text = format!(
                "
env = cliff:p=0.1
steps = 20000
seed = {seed}
measure = {measure}
kappa = 1.0
gamma = 0.99
n_online = 4
n_target = 4
k_policy = 8
embedding_dim = 32
psi_hidden = none
feature_dim = 32
buffer_capacity = 10000
batch_size = 32
warmup = 500
target_sync = 300
eval_period = 20000
eval_episodes = 2
metrics_period = 5000
epsilon_decay_steps = 8000
epsilon_end = 0.05
lr = 0.001
out_dir = /tmp/ignore
"
            );
            let cfg = ExperimentConfig::parse(&text).unwrap();
            let env = parse_env(&cfg.env).unwrap();
            let arch = cfg.architecture_for(env.state_dim(), env.action_count()).unwrap();
            let agent_cfg = cfg.agent_config(seed).unwrap();
            let meta = RunMeta::new("c5b", &env.name());
            let mut out = run_training(env, arch, agent_cfg, cfg.steps, &meta).unwrap();
            let stats = out.trainer.evaluate_steps(10_000).unwrap();
            total_falls += stats.hazards;
            println!(
                "  {measure} seed {seed}: falls {} in {} steps, mean return {:.2} ({:.1?})",
                stats.hazards, stats.steps, stats.mean_return, t0.elapsed()
            );
        }
        println!("  {measure} TOTAL falls: {total_falls}");
    }
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    match which.as_str() {
        "c2" => probe_criterion2(),
        "c3" => probe_criterion3(),
        "c5a" => probe_criterion5_bandit(),
        "c5b" => probe_criterion5_cliff(),
        _ => {
            probe_criterion2();
            probe_criterion3();
        }
    }
}
