//! Full-batch gradient descent with Armijo backtracking.
//!
//! Every fitted model in the crate (BT reward, pairwise preference model,
//! DPO policy) goes through [`minimize`]. The step size grows after each
//! accepted step and is halved until the sufficient-decrease condition holds,
//! so a single `step_size` works across problems of very different curvature.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::numeric::sup_norm;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimOpts {
    /// Initial step size.
    pub step_size: f64,
    pub max_iters: usize,
    /// Stop when the gradient sup-norm falls to or below this.
    pub tolerance: f64,
    /// L2 regularization strength; the anchor point depends on the model.
    pub l2_reg: f64,
}

impl Default for OptimOpts {
    fn default() -> Self {
        Self {
            step_size: 1.0,
            max_iters: 5000,
            tolerance: 1e-6,
            l2_reg: 1e-6,
        }
    }
}

impl OptimOpts {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(LabError::Config(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        if self.max_iters < 1 {
            return Err(LabError::Config("max_iters must be >= 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(LabError::Config(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if !(self.l2_reg >= 0.0 && self.l2_reg.is_finite()) {
            return Err(LabError::Config(format!(
                "l2_reg must be nonnegative, got {}",
                self.l2_reg
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimReport {
    pub iterations: usize,
    pub converged: bool,
    pub final_loss: f64,
    pub grad_sup_norm: f64,
}

const ARMIJO_C: f64 = 1e-4;
const STEP_GROWTH: f64 = 2.0;
const MAX_STEP: f64 = 1e8;
const MIN_STEP: f64 = 1e-16;
const TRACE_KEEP: usize = 64;

/// Minimizes `objective`, which returns `(loss, gradient)` at a point.
pub fn minimize<F>(objective: F, x0: Vec<f64>, opts: &OptimOpts) -> Result<(Vec<f64>, OptimReport)>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    opts.validate()?;
    let mut x = x0;
    let (mut loss, mut grad) = objective(&x);
    let mut trace = vec![loss];
    if !loss.is_finite() {
        return Err(LabError::Optimization {
            msg: "initial loss is not finite".into(),
            trace,
        });
    }
    let mut step = opts.step_size;
    let mut iterations = 0;
    let mut converged = sup_norm(&grad) <= opts.tolerance;

    while !converged && iterations < opts.max_iters {
        iterations += 1;
        let g2: f64 = grad.iter().map(|g| g * g).sum();
        let mut accepted = None;
        while step >= MIN_STEP {
            let cand: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi - step * gi).collect();
            let (cl, cg) = objective(&cand);
            if cl.is_finite() && cl <= loss - ARMIJO_C * step * g2 {
                accepted = Some((cand, cl, cg));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, cl, cg)) => {
                x = cand;
                loss = cl;
                grad = cg;
                push_trace(&mut trace, loss);
                step = (step * STEP_GROWTH).min(MAX_STEP);
                converged = sup_norm(&grad) <= opts.tolerance;
            }
            None => {
                if !grad.iter().all(|g| g.is_finite()) {
                    return Err(LabError::Optimization {
                        msg: "gradient is not finite".into(),
                        trace,
                    });
                }
                // No representable step decreases the loss: numerically stationary.
                break;
            }
        }
    }

    let report = OptimReport {
        iterations,
        converged,
        final_loss: loss,
        grad_sup_norm: sup_norm(&grad),
    };
    Ok((x, report))
}

fn push_trace(trace: &mut Vec<f64>, loss: f64) {
    if trace.len() == TRACE_KEEP {
        trace.remove(0);
    }
    trace.push(loss);
}
