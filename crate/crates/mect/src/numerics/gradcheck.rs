//! Finite-difference gradient checking.
//!
//! The numeric side recomputes the loss with each parameter element nudged
//! by `±h` (central differences); the analytic side is one backward sweep.
//! The comparison is independent of the reverse-mode path by construction.

use std::fmt;

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Scale-floored relative error: absolute below magnitude 1, relative above.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1.0_f64.max(analytic.abs()).max(numeric.abs())
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checks: Vec<ParamCheck>,
    pub step: f64,
}

impl GradCheckReport {
    pub fn max_err(&self) -> f64 {
        self.checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_err() < tol
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "gradient check (central differences, h = {:.0e})", self.step)?;
        for c in &self.checks {
            writeln!(
                f,
                "  {:<28} max rel err {:.3e}  (elem {}: analytic {:+.6e}, numeric {:+.6e})",
                c.name, c.max_rel_err, c.worst_index, c.analytic, c.numeric
            )?;
        }
        write!(f, "  overall max rel err {:.3e}", self.max_err())
    }
}

/// Checks the analytic gradient of `loss_fn` with respect to every listed
/// leaf tensor. `loss_fn` must be deterministic (no dropout, no fresh RNG
/// draws) since it is re-evaluated `2 * numel` times per leaf.
pub fn check_tensors(
    loss_fn: impl Fn() -> Result<Tensor>,
    leaves: &[(String, Tensor)],
    step: f64,
) -> Result<GradCheckReport> {
    for (_, t) in leaves {
        t.zero_grad();
    }
    let loss = loss_fn()?;
    let base = loss.item()?;
    if !base.is_finite() {
        return Err(Error::Contract(format!("gradcheck: baseline loss is {base}")));
    }
    loss.backward()?;

    let analytic: Vec<Vec<f64>> =
        leaves.iter().map(|(_, t)| t.grad().unwrap_or_else(|| vec![0.0; t.numel()])).collect();

    let mut checks = Vec::with_capacity(leaves.len());
    for ((name, tensor), grad) in leaves.iter().zip(&analytic) {
        let mut worst = ParamCheck {
            name: name.clone(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: grad.first().copied().unwrap_or(0.0),
            numeric: 0.0,
        };
        for i in 0..tensor.numel() {
            let original = tensor.data()[i];
            if !original.is_finite() {
                // Pinned entries (e.g. -inf transition constraints) are not
                // probe-able and carry no gradient by construction.
                continue;
            }
            tensor.data_mut()[i] = original + step;
            let plus = loss_fn()?.item()?;
            tensor.data_mut()[i] = original - step;
            let minus = loss_fn()?.item()?;
            tensor.data_mut()[i] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Contract(format!(
                    "gradcheck: non-finite loss while probing parameter '{name}' element {i}"
                )));
            }
            let numeric = (plus - minus) / (2.0 * step);
            let err = rel_err(grad[i], numeric);
            if err > worst.max_rel_err {
                worst.max_rel_err = err;
                worst.worst_index = i;
                worst.analytic = grad[i];
                worst.numeric = numeric;
            }
        }
        checks.push(worst);
    }
    Ok(GradCheckReport { checks, step })
}
