//! Distortion risk measures and distorted expectations.
//!
//! A distortion risk measure is a non-decreasing map beta: [0,1] -> [0,1];
//! sampling tau through beta reweights which quantiles of a return
//! distribution the policy pays attention to. Identity is risk-neutral,
//! CVaR(eta) truncates to the worst eta-fraction of outcomes, Wang shifts
//! probability mass through the normal CDF, CPW is the inverse-S weighting
//! from cumulative prospect theory, and Pow is a one-parameter power family.
//! Norm(eta) averages eta uniform draws and exists only as a sampling
//! distribution; it has no pointwise map.

use rand::Rng;
use std::fmt;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistortionMeasure {
    Identity,
    Cpw { eta: f64 },
    Wang { eta: f64 },
    Pow { eta: f64 },
    Cvar { eta: f64 },
    Norm { eta: u32 },
}

impl DistortionMeasure {
    pub fn identity() -> Self {
        DistortionMeasure::Identity
    }

    pub fn cpw(eta: f64) -> Result<Self> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::invalid(format!("cpw requires eta > 0, got {eta}")));
        }
        Ok(DistortionMeasure::Cpw { eta })
    }

    pub fn wang(eta: f64) -> Result<Self> {
        if !eta.is_finite() {
            return Err(Error::invalid(format!("wang requires finite eta, got {eta}")));
        }
        Ok(DistortionMeasure::Wang { eta })
    }

    pub fn pow(eta: f64) -> Result<Self> {
        if !eta.is_finite() {
            return Err(Error::invalid(format!("pow requires finite eta, got {eta}")));
        }
        Ok(DistortionMeasure::Pow { eta })
    }

    pub fn cvar(eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::invalid(format!(
                "cvar requires eta in (0, 1], got {eta}"
            )));
        }
        Ok(DistortionMeasure::Cvar { eta })
    }

    pub fn norm(eta: f64) -> Result<Self> {
        if eta < 1.0 || eta.fract() != 0.0 || eta > u32::MAX as f64 {
            return Err(Error::invalid(format!(
                "norm requires integer eta >= 1, got {eta}"
            )));
        }
        Ok(DistortionMeasure::Norm { eta: eta as u32 })
    }

    pub fn is_pointwise(&self) -> bool {
        !matches!(self, DistortionMeasure::Norm { .. })
    }

    /// beta(tau) for pointwise measures. Norm has no pointwise map and errors.
    pub fn apply(&self, tau: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::invalid(format!("tau must lie in [0, 1], got {tau}")));
        }
        Ok(match *self {
            DistortionMeasure::Identity => tau,
            DistortionMeasure::Cpw { eta } => {
                let num = tau.powf(eta);
                let den = (tau.powf(eta) + (1.0 - tau).powf(eta)).powf(1.0 / eta);
                if den == 0.0 {
                    tau // only reachable in pathological underflow; endpoints map to themselves
                } else {
                    num / den
                }
            }
            DistortionMeasure::Wang { eta } => {
                // endpoints by continuity, avoiding the infinite quantile
                if tau == 0.0 {
                    0.0
                } else if tau == 1.0 {
                    1.0
                } else {
                    normal_cdf(normal_inv_cdf(tau)? + eta)
                }
            }
            DistortionMeasure::Pow { eta } => {
                let e = 1.0 / (1.0 + eta.abs());
                if eta >= 0.0 {
                    tau.powf(e)
                } else {
                    1.0 - (1.0 - tau).powf(e)
                }
            }
            DistortionMeasure::Cvar { eta } => eta * tau,
            DistortionMeasure::Norm { .. } => {
                return Err(Error::SamplingOnly(self.to_string()));
            }
        })
    }

    /// Draw one tau from the measure's sampling distribution: beta(U) for
    /// pointwise measures, the mean of eta uniforms for Norm.
    pub fn sample_tau(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            DistortionMeasure::Norm { eta } => {
                let mut acc = 0.0;
                for _ in 0..eta {
                    acc += rng.random::<f64>();
                }
                acc / eta as f64
            }
            _ => self
                .apply(rng.random::<f64>())
                .expect("pointwise apply on u in [0,1) cannot fail"),
        }
    }

    /// Generalized inverse weight function: the Lebesgue measure of
    /// {tau : beta(tau) <= u}, clamped to [0, 1]. Closed forms everywhere
    /// except CPW, which is inverted by bisection.
    fn inverse_weight(&self, u: f64) -> Result<f64> {
        let u = u.clamp(0.0, 1.0);
        Ok(match *self {
            DistortionMeasure::Identity => u,
            DistortionMeasure::Cvar { eta } => (u / eta).min(1.0),
            DistortionMeasure::Wang { eta } => {
                if u <= 0.0 {
                    0.0
                } else if u >= 1.0 {
                    1.0
                } else {
                    normal_cdf(normal_inv_cdf(u)? - eta)
                }
            }
            DistortionMeasure::Pow { eta } => {
                let e = 1.0 + eta.abs();
                if eta >= 0.0 {
                    u.powf(e)
                } else {
                    1.0 - (1.0 - u).powf(e)
                }
            }
            DistortionMeasure::Cpw { .. } => {
                if u <= 0.0 {
                    0.0
                } else if u >= 1.0 {
                    1.0
                } else {
                    // bisection on a continuous strictly increasing map
                    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
                    while hi - lo > 1e-12 {
                        let mid = 0.5 * (lo + hi);
                        if self.apply(mid)? <= u {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    0.5 * (lo + hi)
                }
            }
            DistortionMeasure::Norm { .. } => {
                return Err(Error::SamplingOnly(self.to_string()));
            }
        })
    }

    /// Parse the `name:eta` grammar: `neutral`, `cpw:0.71`, `wang:-0.75`,
    /// `pow:-2`, `cvar:0.1`, `norm:3`.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        let (name, eta) = match text.split_once(':') {
            None => (text, None),
            Some((n, e)) => {
                let eta: f64 = e.trim().parse().map_err(|_| {
                    Error::invalid(format!("bad eta `{e}` in measure `{text}`"))
                })?;
                (n.trim(), Some(eta))
            }
        };
        match (name, eta) {
            ("neutral" | "identity", None) => Ok(DistortionMeasure::Identity),
            ("neutral" | "identity", Some(_)) => {
                Err(Error::invalid("neutral takes no parameter"))
            }
            ("cpw", Some(eta)) => DistortionMeasure::cpw(eta),
            ("wang", Some(eta)) => DistortionMeasure::wang(eta),
            ("pow", Some(eta)) => DistortionMeasure::pow(eta),
            ("cvar", Some(eta)) => DistortionMeasure::cvar(eta),
            ("norm", Some(eta)) => DistortionMeasure::norm(eta),
            (n, None) if matches!(n, "cpw" | "wang" | "pow" | "cvar" | "norm") => {
                Err(Error::invalid(format!("measure `{n}` requires `{n}:eta`")))
            }
            _ => Err(Error::invalid(format!("unknown measure `{text}`"))),
        }
    }
}

impl fmt::Display for DistortionMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DistortionMeasure::Identity => write!(f, "neutral"),
            DistortionMeasure::Cpw { eta } => write!(f, "cpw:{eta}"),
            DistortionMeasure::Wang { eta } => write!(f, "wang:{eta}"),
            DistortionMeasure::Pow { eta } => write!(f, "pow:{eta}"),
            DistortionMeasure::Cvar { eta } => write!(f, "cvar:{eta}"),
            DistortionMeasure::Norm { eta } => write!(f, "norm:{eta}"),
        }
    }
}

/// A uniform mixture of N Diracs at non-decreasing locations; the step
/// quantile function F^{-1}(tau) = theta_i for tau in ((i-1)/N, i/N].
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnQuantiles {
    values: Vec<f64>,
}

impl ReturnQuantiles {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("return quantiles need at least one value"));
        }
        if values.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid("return quantiles must be non-decreasing"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "return quantiles".into(),
            });
        }
        Ok(ReturnQuantiles { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Step quantile function lookup.
    pub fn value_at(&self, tau: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::invalid(format!("tau must lie in [0, 1], got {tau}")));
        }
        let n = self.values.len();
        let idx = if tau <= 0.0 {
            0
        } else {
            ((tau * n as f64).ceil() as usize - 1).min(n - 1)
        };
        Ok(self.values[idx])
    }
}

/// Exact distorted expectation of a step quantile function:
/// sum_i theta_i * (w(i/N) - w((i-1)/N)), with w the measure of
/// {tau : beta(tau) <= u}. Equals E_{u~U}[F^{-1}(beta(u))] exactly.
pub fn distorted_expectation_exact(
    quantiles: &ReturnQuantiles,
    measure: &DistortionMeasure,
) -> Result<f64> {
    if !measure.is_pointwise() {
        return Err(Error::SamplingOnly(measure.to_string()));
    }
    let n = quantiles.len();
    let mut acc = 0.0;
    let mut prev = measure.inverse_weight(0.0)?;
    for (i, &theta) in quantiles.values().iter().enumerate() {
        let next = measure.inverse_weight((i + 1) as f64 / n as f64)?;
        acc += theta * (next - prev);
        prev = next;
    }
    Ok(acc)
}

/// Monte-Carlo distorted expectation of an arbitrary quantile function:
/// the sample mean of `quantile_fn(sample_tau())` over `samples` draws.
pub fn distorted_expectation_mc(
    quantile_fn: impl Fn(f64) -> f64,
    measure: &DistortionMeasure,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let mut acc = 0.0;
    for _ in 0..samples {
        acc += quantile_fn(measure.sample_tau(rng));
    }
    Ok(acc / samples as f64)
}

/// Standard normal CDF via the complementary error function; the symmetry
/// Phi(-z) = 1 - Phi(z) holds to floating-point exactness of erfc.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.3989422804014327;
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal inverse CDF: Acklam's rational approximation polished by
/// one Halley step against `normal_cdf`, giving absolute error well below
/// the 1e-8 contract across (0, 1).
pub fn normal_inv_cdf(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::invalid(format!(
            "normal_inv_cdf requires u strictly inside (0, 1), got {u}"
        )));
    }
    let z = acklam(u);
    // Halley refinement: one step takes ~1e-9 error to ~1e-15.
    let e = normal_cdf(z) - u;
    let d = normal_pdf(z);
    if d > 0.0 {
        let r = e / d;
        Ok(z - r / (1.0 + 0.5 * z * r))
    } else {
        Ok(z)
    }
}

fn acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.38357751867269e2,
        -3.0664798066147160e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996,
        3.754408661907416,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cvar_pointwise() {
        let m = DistortionMeasure::cvar(0.1).unwrap();
        assert!((m.apply(0.5).unwrap() - 0.05).abs() < 1e-15);
        assert_eq!(m.apply(0.0).unwrap(), 0.0);
        assert!((m.apply(1.0).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn wang_zero_eta_is_identity() {
        let m = DistortionMeasure::wang(0.0).unwrap();
        for &tau in &[0.0, 0.1, 0.37, 0.5, 0.93, 1.0] {
            assert!((m.apply(tau).unwrap() - tau).abs() < 1e-12, "tau {tau}");
        }
    }

    #[test]
    fn pow_zero_eta_is_identity() {
        let m = DistortionMeasure::pow(0.0).unwrap();
        for &tau in &[0.0, 0.2, 0.5, 0.8, 1.0] {
            assert!((m.apply(tau).unwrap() - tau).abs() < 1e-15);
        }
    }

    #[test]
    fn cpw_at_half() {
        // frozen from a 40-digit evaluation of the CPW formula
        let m = DistortionMeasure::cpw(0.71).unwrap();
        assert!((m.apply(0.5).unwrap() - 0.4605881808638373).abs() < 1e-12);
    }

    #[test]
    fn norm_has_no_pointwise_map() {
        let m = DistortionMeasure::norm(3.0).unwrap();
        assert!(matches!(m.apply(0.5), Err(Error::SamplingOnly(_))));
        assert!(matches!(
            distorted_expectation_exact(&ReturnQuantiles::new(vec![0.0, 1.0]).unwrap(), &m),
            Err(Error::SamplingOnly(_))
        ));
    }

    #[test]
    fn tau_out_of_range_errors() {
        let m = DistortionMeasure::identity();
        assert!(m.apply(-0.1).is_err());
        assert!(m.apply(1.1).is_err());
    }

    #[test]
    fn parameter_validation() {
        assert!(DistortionMeasure::cpw(0.0).is_err());
        assert!(DistortionMeasure::cvar(0.0).is_err());
        assert!(DistortionMeasure::cvar(1.5).is_err());
        assert!(DistortionMeasure::norm(2.5).is_err());
        assert!(DistortionMeasure::norm(0.0).is_err());
    }

    #[test]
    fn normal_cdf_fixed_points() {
        assert_eq!(normal_cdf(0.0), 0.5);
        // frozen from a 40-digit erfc evaluation
        assert!((normal_cdf(1.959964) - 0.9750000009035576).abs() < 1e-12);
        for &z in &[0.17, 1.3, 2.9, 4.6, 6.0] {
            assert!(
                (normal_cdf(-z) - (1.0 - normal_cdf(z))).abs() < 1e-15,
                "symmetry at {z}"
            );
        }
    }

    #[test]
    fn normal_inv_cdf_fixed_points() {
        assert_eq!(normal_inv_cdf(0.5).unwrap(), 0.0);
        assert!((normal_inv_cdf(0.975).unwrap() - 1.959963984540054).abs() < 1e-9);
        assert!(normal_inv_cdf(0.0).is_err());
        assert!(normal_inv_cdf(1.0).is_err());
        assert!(normal_inv_cdf(-0.2).is_err());
        let u = 0.3;
        assert!((normal_cdf(normal_inv_cdf(u).unwrap()) - u).abs() < 1e-9);
    }

    #[test]
    fn exact_expectation_identity_is_mean() {
        let q = ReturnQuantiles::new(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let v = distorted_expectation_exact(&q, &DistortionMeasure::identity()).unwrap();
        assert_eq!(v, 1.5);
    }

    #[test]
    fn exact_expectation_cvar() {
        let q = ReturnQuantiles::new(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let half = distorted_expectation_exact(&q, &DistortionMeasure::cvar(0.5).unwrap()).unwrap();
        assert!((half - 0.5).abs() < 1e-12);
        let quarter =
            distorted_expectation_exact(&q, &DistortionMeasure::cvar(0.25).unwrap()).unwrap();
        assert!(quarter.abs() < 1e-12);
    }

    #[test]
    fn unsorted_quantiles_rejected() {
        assert!(ReturnQuantiles::new(vec![1.0, 0.0]).is_err());
        assert!(ReturnQuantiles::new(vec![]).is_err());
    }

    #[test]
    fn mc_of_constant_function() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for m in [
            DistortionMeasure::identity(),
            DistortionMeasure::cvar(0.3).unwrap(),
            DistortionMeasure::norm(3.0).unwrap(),
        ] {
            let v = distorted_expectation_mc(|_| 0.5, &m, 100, &mut rng).unwrap();
            assert_eq!(v, 0.5);
        }
        assert!(distorted_expectation_mc(|_| 0.0, &DistortionMeasure::identity(), 0, &mut rng)
            .is_err());
    }

    #[test]
    fn step_lookup() {
        let q = ReturnQuantiles::new(vec![10.0, 20.0, 30.0, 40.0]).unwrap();
        assert_eq!(q.value_at(0.0).unwrap(), 10.0);
        assert_eq!(q.value_at(0.25).unwrap(), 10.0);
        assert_eq!(q.value_at(0.2500001).unwrap(), 20.0);
        assert_eq!(q.value_at(1.0).unwrap(), 40.0);
        assert!(q.value_at(1.5).is_err());
    }

    #[test]
    fn measure_grammar_round_trip() {
        for s in ["neutral", "cpw:0.71", "wang:-0.75", "wang:1.5", "pow:-2", "cvar:0.1", "norm:3"] {
            let m = DistortionMeasure::parse(s).unwrap();
            assert_eq!(m.to_string(), s, "canonical form of `{s}`");
            assert_eq!(DistortionMeasure::parse(&m.to_string()).unwrap(), m);
        }
        assert!(DistortionMeasure::parse("cvar").is_err());
        assert!(DistortionMeasure::parse("banana:1").is_err());
        assert!(DistortionMeasure::parse("cvar:oops").is_err());
    }
}
