//! Adadelta.
//!
//! Per entry, with decay `ρ` and conditioner `ε`:
//!
//! ```text
//! E[g²]  ← ρ E[g²] + (1 − ρ) g²
//! Δx     ← −(√(E[Δx²] + ε) / √(E[g²] + ε)) g
//! E[Δx²] ← ρ E[Δx²] + (1 − ρ) Δx²
//! x      ← x + Δx
//! ```

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Running averages for one tensor; both start at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Accumulators {
    pub sq_grad: Vec<f64>,
    pub sq_delta: Vec<f64>,
}

impl Accumulators {
    pub fn new(len: usize) -> Self {
        Accumulators {
            sq_grad: vec![0.0; len],
            sq_delta: vec![0.0; len],
        }
    }

    /// Applies one update to `x` in place.
    pub fn step(&mut self, x: &mut [f64], g: &[f64], rho: f64, eps: f64) {
        debug_assert_eq!(x.len(), g.len());
        for i in 0..x.len() {
            let gi = g[i];
            self.sq_grad[i] = rho * self.sq_grad[i] + (1.0 - rho) * gi * gi;
            let dx = -(libm::sqrt(self.sq_delta[i] + eps) / libm::sqrt(self.sq_grad[i] + eps)) * gi;
            self.sq_delta[i] = rho * self.sq_delta[i] + (1.0 - rho) * dx * dx;
            x[i] += dx;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdadeltaState {
    slots: Vec<(String, Accumulators)>,
}

impl AdadeltaState {
    pub fn new(params: &ModelParams) -> Self {
        AdadeltaState {
            slots: params
                .iter()
                .map(|p| (p.name.clone(), Accumulators::new(p.value.numel())))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Accumulators> {
        self.slots.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }
}

pub fn check_rho_eps(rho: f64, eps: f64) -> Result<()> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::config("adadelta_rho", format!("must lie in (0, 1), got {rho}")));
    }
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::config("adadelta_eps", format!("must be positive, got {eps}")));
    }
    Ok(())
}

/// One Adadelta update of every tensor in `params`. Nothing is modified
/// when any gradient is non-finite.
pub fn adadelta_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdadeltaState,
    rho: f64,
    eps: f64,
) -> Result<()> {
    check_rho_eps(rho, eps)?;
    if state.slots.len() != params.len() {
        return Err(Error::contract("adadelta_step", "state does not mirror params"));
    }
    for ((p, (slot_name, acc)), g) in params.iter().zip(&state.slots).zip(grads.iter()) {
        if p.name != *slot_name || g.name != p.name {
            return Err(Error::contract(
                "adadelta_step",
                format!("tensor order mismatch at {}", p.name),
            ));
        }
        if g.value.shape() != p.value.shape() || acc.sq_grad.len() != p.value.numel() {
            return Err(Error::Shape {
                op: "adadelta_step",
                left: p.value.shape().to_vec(),
                right: g.value.shape().to_vec(),
            });
        }
        if !g.value.is_finite() {
            return Err(Error::NonFinite {
                what: format!("gradient of {}", p.name),
            });
        }
    }
    if grads.len() != params.len() {
        return Err(Error::contract("adadelta_step", "gradient set does not mirror params"));
    }
    for ((p, (_, acc)), g) in params.iter_mut().zip(&mut state.slots).zip(grads.iter()) {
        acc.step(p.value.data_mut(), g.value.data(), rho, eps);
    }
    Ok(())
}
