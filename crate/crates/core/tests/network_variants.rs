//! Architecture-variant coverage (embedding x nonlinearity x merge x n),
//! gradient fidelity per variant, and the sample-based policy estimates
//! against table-lookup doubles with known distorted expectations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use iqn_core::distortion::{
    distorted_expectation_exact, DistortionMeasure, ReturnQuantiles,
};
use iqn_core::grad_check::grad_check;
use iqn_core::networks::{
    iqn_forward, iqn_row_inputs, q_beta_estimate, q_beta_quadrature, ArchitectureSpec, Embedding,
    IqnNetwork, MergeKind, Nonlinearity, StateActionQuantiles,
};
use iqn_core::tensor::Tensor;

fn all_variants(n: usize) -> Vec<ArchitectureSpec> {
    let mut specs = Vec::new();
    for embedding in [Embedding::CosineBasis { n }, Embedding::LearnedMlp { n }] {
        for nonlinearity in [Nonlinearity::Relu, Nonlinearity::Sigmoid] {
            for merge in [MergeKind::Hadamard, MergeKind::Concatenate, MergeKind::Residual] {
                specs.push(ArchitectureSpec {
                    state_dim: 3,
                    action_count: 2,
                    psi_hidden: vec![6],
                    feature_dim: 6,
                    embedding,
                    nonlinearity,
                    merge,
                });
            }
        }
    }
    specs
}

#[test]
fn every_variant_constructs_runs_and_passes_grad_check() {
    let mut seed = 0u64;
    for n in [32usize, 64] {
        for spec in all_variants(n) {
            seed += 1;
            let net = IqnNetwork::init(spec.clone(), seed).unwrap();
            let states =
                Tensor::matrix(2, 3, vec![0.4, -0.2, 0.9, -0.6, 0.3, 0.1]).unwrap();
            let z = iqn_forward(&net, &states, &[0.12, 0.5, 0.88]).unwrap();
            assert_eq!(z.shape(), &[2, 3, 2]);
            assert!(z.is_finite());

            // scalar head for the finite-difference check
            let mut g = net.value_graph();
            let z_node = g.output_node("z").unwrap();
            let mean = g.reduce_mean(z_node);
            g.mark_output("mean_z", mean);
            let inputs = iqn_row_inputs(&spec, &states, &[0.31, 0.77]).unwrap();
            let report = grad_check(&g, &inputs, net.params(), "mean_z", 1e-5, 1e-4).unwrap();
            assert!(
                report.passed(),
                "variant {spec:?}: max rel error {}",
                report.max_rel_error
            );
        }
    }
}

/// Table-lookup double: a fixed return distribution per action, independent
/// of state and of the network stack.
struct TableQuantiles {
    arms: Vec<ReturnQuantiles>,
}

impl StateActionQuantiles for TableQuantiles {
    fn action_count(&self) -> usize {
        self.arms.len()
    }

    fn quantiles(&self, _state: &[f64], taus: &[f64]) -> iqn_core::Result<Vec<Vec<f64>>> {
        taus.iter()
            .map(|&t| self.arms.iter().map(|a| a.value_at(t)).collect())
            .collect()
    }
}

#[test]
fn q_beta_estimate_matches_exact_distorted_expectation() {
    let arm = ReturnQuantiles::new(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let table = TableQuantiles { arms: vec![arm.clone()] };
    let measure = DistortionMeasure::cvar(0.5).unwrap();
    let exact = distorted_expectation_exact(&arm, &measure).unwrap();
    assert!((exact - 0.5).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let est = q_beta_estimate(&table, &[1.0], &measure, 100_000, &mut rng).unwrap();
    assert!((est[0] - exact).abs() < 0.01, "estimate {}", est[0]);
}

#[test]
fn risk_sensitive_greedy_choice_on_known_bandit_distributions() {
    // arm 0: Dirac at 0.5; arm 1: Bernoulli paying 1 with p = 0.55.
    // CVaR(0.1) values are 0.5 vs 0.0, so the safe arm wins; the
    // risk-neutral mean ordering is reversed.
    let table = TableQuantiles {
        arms: vec![
            ReturnQuantiles::new(vec![0.5]).unwrap(),
            ReturnQuantiles::new(vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0,
                1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0])
            .unwrap(),
        ],
    };
    let cvar = DistortionMeasure::cvar(0.1).unwrap();
    let v = q_beta_quadrature(&table, &[1.0], &cvar, 64).unwrap();
    assert!(v[0] > v[1], "cvar values {v:?}");
    assert!((v[0] - 0.5).abs() < 1e-12 && v[1].abs() < 1e-12);
    // 40 midpoints align with the 20-atom grid, making quadrature exact
    let neutral = q_beta_quadrature(&table, &[1.0], &DistortionMeasure::identity(), 40).unwrap();
    assert!(neutral[1] > neutral[0], "neutral values {neutral:?}");
    assert!((neutral[1] - 0.55).abs() < 1e-9);
}

#[test]
fn identity_estimate_converges_to_risk_neutral_mean() {
    let spec = ArchitectureSpec {
        state_dim: 2,
        action_count: 3,
        psi_hidden: vec![8],
        feature_dim: 8,
        embedding: Embedding::CosineBasis { n: 16 },
        nonlinearity: Nonlinearity::Relu,
        merge: MergeKind::Hadamard,
    };
    let net = IqnNetwork::init(spec, 31).unwrap();
    let state = [0.7, -0.4];
    let measure = DistortionMeasure::identity();
    // dense midpoint quadrature as the reference mean
    let reference = q_beta_quadrature(&net, &state, &measure, 4096).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let small = q_beta_estimate(&net, &state, &measure, 100, &mut rng).unwrap();
    let large = q_beta_estimate(&net, &state, &measure, 100_000, &mut rng).unwrap();
    for a in 0..3 {
        let err_small = (small[a] - reference[a]).abs();
        let err_large = (large[a] - reference[a]).abs();
        assert!(err_large < 0.01, "action {a}: large-K error {err_large}");
        assert!(
            err_large < err_small + 1e-9,
            "action {a}: {err_large} vs {err_small}"
        );
    }
}

#[test]
fn crossing_diagnostic_counts_inversions() {
    let spec = ArchitectureSpec {
        state_dim: 2,
        action_count: 2,
        psi_hidden: vec![6],
        feature_dim: 6,
        embedding: Embedding::CosineBasis { n: 32 },
        nonlinearity: Nonlinearity::Relu,
        merge: MergeKind::Hadamard,
    };
    let net = IqnNetwork::init(spec, 17).unwrap();
    let grid: Vec<f64> = (0..=50).map(|i| i as f64 / 50.0).collect();
    // a freshly initialized network has no monotonicity constraint; the
    // diagnostic must simply count and never error
    let crossings = net.quantile_crossings(&[0.3, -0.8], &grid).unwrap();
    assert!(crossings <= 2 * 50);
}
