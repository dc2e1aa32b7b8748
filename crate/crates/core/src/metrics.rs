//! Score normalization and distribution-distance utilities.

use crate::{Error, Result};

/// Raw scores for one game: the agent under test, a reference human player,
/// and a random-play baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreTriple {
    pub agent: f64,
    pub human: f64,
    pub random: f64,
}

/// (agent - random) / (human - random).
pub fn human_normalized_score(t: &ScoreTriple) -> Result<f64> {
    if t.human == t.random {
        return Err(Error::invalid(
            "human and random scores are equal; normalization is degenerate",
        ));
    }
    Ok((t.agent - t.random) / (t.human - t.random))
}

/// Remaining gap to human performance: max(1 - score, 0), clipped above at 1
/// to avoid degeneracies when human < random.
pub fn human_gap(score: f64) -> f64 {
    (1.0 - score).clamp(0.0, 1.0)
}

/// Exact 1-Wasserstein distance between two equal-weight empirical measures
/// of the same size: the mean absolute difference of the sorted samples.
pub fn wasserstein1(samples_a: &[f64], samples_b: &[f64]) -> Result<f64> {
    if samples_a.len() != samples_b.len() {
        return Err(Error::invalid(format!(
            "sample sets must have equal length, got {} and {}",
            samples_a.len(),
            samples_b.len()
        )));
    }
    if samples_a.is_empty() {
        return Err(Error::invalid("sample sets must be non-empty"));
    }
    let mut a = samples_a.to_vec();
    let mut b = samples_b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let total: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
    Ok(total / a.len() as f64)
}
