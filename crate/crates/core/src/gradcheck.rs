//! Central-difference verification of analytic gradients.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// A scalar function of a parameter set with an analytic gradient.
pub trait Objective {
    fn value(&self, params: &ModelParams) -> Result<f64>;

    /// Value and gradient, the gradient shaped like `params`.
    fn value_and_gradient(&self, params: &ModelParams) -> Result<(f64, ModelParams)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_relative_error: f64,
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
    }

    /// Maximum relative error per parameter tensor, in report order.
    pub fn per_param(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = Vec::new();
        for e in &self.entries {
            match out.last_mut() {
                Some((name, m)) if *name == e.param => *m = m.max(e.relative_error),
                _ => out.push((e.param.clone(), e.relative_error)),
            }
        }
        out
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// Compares `objective`'s analytic gradient with `(f(θ+h) − f(θ−h)) / 2h`
/// for every scalar of every parameter.
pub fn grad_check<O: Objective + ?Sized>(objective: &O, params: &ModelParams, step: f64) -> Result<GradCheckReport> {
    if !step.is_finite() || step <= 0.0 {
        return Err(Error::contract("grad_check", "step must be positive and finite"));
    }
    let (base, analytic) = objective.value_and_gradient(params)?;
    if !base.is_finite() {
        return Err(Error::NonFinite {
            what: "objective value".into(),
        });
    }
    let mut report = GradCheckReport::default();
    let mut probe = params.clone();
    for param in params.iter() {
        let grad = analytic
            .get(&param.name)
            .ok_or_else(|| Error::contract("grad_check", alloc::format!("no gradient for {}", param.name)))?;
        for index in 0..param.value.numel() {
            let original = param.value.data()[index];
            let mut eval_at = |x: f64| -> Result<f64> {
                probe.get_mut(&param.name).expect("same names").data_mut()[index] = x;
                let v = objective.value(&probe)?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFinite {
                        what: alloc::format!("objective at {}[{index}]", param.name),
                    })
                }
            };
            let plus = eval_at(original + step)?;
            let minus = eval_at(original - step)?;
            eval_at(original)?;
            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.data()[index];
            let relative_error = relative_error(a, numeric);
            report.max_relative_error = report.max_relative_error.max(relative_error);
            report.entries.push(GradCheckEntry {
                param: param.name.clone(),
                index,
                analytic: a,
                numeric,
                relative_error,
            });
        }
    }
    Ok(report)
}
