//! Central-difference verification of reverse-mode gradients.
//!
//! For a scalar-output graph, every parameter component is perturbed by
//! `+/- step` and the symmetric difference quotient is compared against the
//! backward-pass gradient using the relative error
//! `|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)`.
//!
//! Finite differences are meaningless across a ReLU kink, so a component is
//! excluded (and counted) whenever either perturbed evaluation changes some
//! relu activation sign relative to the nominal pass, or the nominal pass
//! already sits exactly on a kink.

use crate::graph::Graph;
use crate::tensor::Tensor;
use crate::{Error, Result, TensorMap};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamCheck>,
    /// Largest relative error over all compared components.
    pub max_rel_error: f64,
    /// Components skipped because a finite difference straddled a kink.
    pub excluded: usize,
    /// Components whose relative error exceeded the tolerance.
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub compared: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone)]
pub struct Violation {
    pub param: String,
    pub component: usize,
    pub rel_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn grad_check(
    graph: &Graph,
    inputs: &TensorMap,
    params: &TensorMap,
    output: &str,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    if step <= 0.0 {
        return Err(Error::invalid(format!("step must be positive, got {step}")));
    }
    let nominal = graph.forward(inputs, params)?;
    let out_node = graph
        .output_node(output)
        .ok_or_else(|| Error::UnboundSlot { name: output.to_string() })?;
    let out_shape = nominal.value(out_node).shape().to_vec();
    if out_shape.iter().product::<usize>() != 1 {
        return Err(Error::NonScalarOutput { shape: out_shape });
    }
    let nominal_pattern = graph.relu_pattern(&nominal);
    let kink_at_zero = graph.has_kink_at_zero(&nominal);
    let grads = graph.backward(&nominal, output, &Tensor::scalar(1.0))?;

    let mut report = GradCheckReport {
        per_param: Vec::new(),
        max_rel_error: 0.0,
        excluded: 0,
        violations: Vec::new(),
    };

    for (name, value) in params {
        let g_ad = &grads[name];
        let mut check = ParamCheck {
            name: name.clone(),
            max_rel_error: 0.0,
            compared: 0,
            excluded: 0,
        };
        for c in 0..value.numel() {
            let eval_at = |delta: f64| -> Result<(f64, Vec<bool>)> {
                let mut perturbed = params.clone();
                let t = perturbed.get_mut(name).expect("param present");
                t.data_mut()[c] += delta;
                let eval = graph.forward(inputs, &perturbed)?;
                Ok((eval.value(out_node).item(), graph.relu_pattern(&eval)))
            };
            let (f_plus, pat_plus) = eval_at(step)?;
            let (f_minus, pat_minus) = eval_at(-step)?;
            if kink_at_zero || pat_plus != nominal_pattern || pat_minus != nominal_pattern {
                check.excluded += 1;
                continue;
            }
            let g_fd = (f_plus - f_minus) / (2.0 * step);
            let g = g_ad.data()[c];
            let rel = (g - g_fd).abs() / f64::max(1e-8, g.abs() + g_fd.abs());
            check.compared += 1;
            if rel > check.max_rel_error {
                check.max_rel_error = rel;
            }
            if rel > tolerance {
                report.violations.push(Violation {
                    param: name.clone(),
                    component: c,
                    rel_error: rel,
                });
            }
        }
        report.max_rel_error = report.max_rel_error.max(check.max_rel_error);
        report.excluded += check.excluded;
        report.per_param.push(check);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, t: Tensor) -> TensorMap {
        let mut m = TensorMap::new();
        m.insert(name.to_string(), t);
        m
    }

    #[test]
    fn linear_model_is_exact_up_to_rounding() {
        // y = w . x
        let mut g = Graph::new();
        let w = g.param("w");
        let x = g.input("x");
        let h = g.hadamard(w, x);
        let y = g.reduce_sum(h);
        g.mark_output("y", y);
        let inputs = one("x", Tensor::vector(vec![0.5, -1.25, 2.0]));
        let params = one("w", Tensor::vector(vec![0.3, 0.7, -0.2]));
        let report = grad_check(&g, &inputs, &params, "y", 1e-5, 1e-7).unwrap();
        assert!(report.passed(), "max rel error {}", report.max_rel_error);
        assert_eq!(report.excluded, 0);
    }

    #[test]
    fn rejects_non_scalar_output() {
        let mut g = Graph::new();
        let x = g.param("x");
        g.mark_output("y", x);
        let params = one("x", Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(
            grad_check(&g, &TensorMap::new(), &params, "y", 1e-5, 1e-4),
            Err(Error::NonScalarOutput { .. })
        ));
    }

    #[test]
    fn relu_at_zero_is_excluded() {
        let mut g = Graph::new();
        let x = g.param("x");
        let r = g.relu(x);
        let y = g.reduce_sum(r);
        g.mark_output("y", y);
        let params = one("x", Tensor::vector(vec![0.0]));
        let report = grad_check(&g, &TensorMap::new(), &params, "y", 1e-5, 1e-4).unwrap();
        assert!(report.passed());
        assert_eq!(report.excluded, 1);
        assert_eq!(report.per_param[0].compared, 0);
    }
}
