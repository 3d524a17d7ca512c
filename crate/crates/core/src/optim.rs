//! AdaDelta parameter updates.
//!
//! ```text
//! E[g²]  = rho * E[g²]  + (1 - rho) * g²
//! dx     = -sqrt(E[dx²] + eps) / sqrt(E[g²] + eps) * g
//! E[dx²] = rho * E[dx²] + (1 - rho) * dx²
//! x     += dx
//! ```

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::tensor::Tensor;

pub const DEFAULT_RHO: f64 = 0.95;
pub const DEFAULT_EPS: f64 = 1e-6;

/// Per-parameter running averages, one slot per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaDeltaState {
    pub rho: f64,
    pub eps: f64,
    accum_grad_sq: Vec<Vec<f64>>,
    accum_update_sq: Vec<Vec<f64>>,
}

impl AdaDeltaState {
    /// Zero-initialized state for parameters of the given sizes.
    pub fn new(sizes: impl IntoIterator<Item = usize>, rho: f64, eps: f64) -> Self {
        let sizes: Vec<usize> = sizes.into_iter().collect();
        Self {
            rho,
            eps,
            accum_grad_sq: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            accum_update_sq: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        Self::new(params.into_iter().map(Tensor::len), DEFAULT_RHO, DEFAULT_EPS)
    }

    pub fn accum_grad_sq(&self) -> &[Vec<f64>] {
        &self.accum_grad_sq
    }

    pub fn accum_update_sq(&self) -> &[Vec<f64>] {
        &self.accum_update_sq
    }

    /// Applies one update in place. `grads[i]` belongs to `params[i]`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.accum_grad_sq.len() {
            return Err(invalid!(
                "adadelta: {} params, {} grads, {} state slots",
                params.len(),
                grads.len(),
                self.accum_grad_sq.len()
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.len() != self.accum_grad_sq[i].len() {
                return Err(invalid!(
                    "adadelta slot {}: param {:?}, grad {:?}, state {}",
                    i,
                    p.shape(),
                    g.shape(),
                    self.accum_grad_sq[i].len()
                ));
            }
        }
        let (rho, eps) = (self.rho, self.eps);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let eg = &mut self.accum_grad_sq[i];
            let ex = &mut self.accum_update_sq[i];
            for (((x, &gv), a), b) in p.data_mut().iter_mut().zip(g.data()).zip(eg).zip(ex) {
                *a = rho * *a + (1.0 - rho) * gv * gv;
                let dx = -(libm::sqrt(*b + eps) / libm::sqrt(*a + eps)) * gv;
                *b = rho * *b + (1.0 - rho) * dx * dx;
                *x += dx;
            }
        }
        Ok(())
    }
}
