use super::model::{mse, Model};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a non-differentiable point
    /// (pool tie, ReLU at zero, power clamp) and were excluded.
    pub skipped: usize,
    /// Analytic and numeric values at the worst coordinate.
    pub worst: (f64, f64),
}

/// Central-difference check of the analytic MSE gradient over every parameter.
pub fn grad_check(model: &Model, input: &Tensor, target: &Tensor, epsilon: f64) -> Result<f64> {
    grad_check_report(model, input, target, epsilon).map(|r| r.max_rel_error)
}

pub fn grad_check_report(model: &Model, input: &Tensor, target: &Tensor, epsilon: f64) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let (y, cache) = model.forward(input)?;
    let (_, g) = mse(&y, target)?;
    let analytic: Vec<f64> = model
        .backward(&cache, &g)?
        .iter()
        .flat_map(|t| t.data.clone())
        .collect();
    let base_sig = model.kink_signature(&cache);

    let mut probe = model.clone();
    let eval = |m: &Model| -> Result<(f64, Vec<u64>)> {
        let (y, c) = m.forward(input)?;
        Ok((mse(&y, target)?.0, m.kink_signature(&c)))
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        worst: (0.0, 0.0),
    };
    let sizes: Vec<usize> = model.layers.iter().flat_map(|l| l.params()).map(Tensor::len).collect();
    let mut flat = 0;
    for (pi, &len) in sizes.iter().enumerate() {
        for i in 0..len {
            let orig = model.layers.iter().flat_map(|l| l.params()).nth(pi).unwrap().data[i];
            probe.params_mut()[pi].data[i] = orig + epsilon;
            let (fp, sp) = eval(&probe)?;
            probe.params_mut()[pi].data[i] = orig - epsilon;
            let (fm, sm) = eval(&probe)?;
            probe.params_mut()[pi].data[i] = orig;
            let a = analytic[flat];
            flat += 1;
            if sp != base_sig || sm != base_sig {
                report.skipped += 1;
                continue;
            }
            let n = (fp - fm) / (2.0 * epsilon);
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-12);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (a, n);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
