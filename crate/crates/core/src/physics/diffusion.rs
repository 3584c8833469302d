//! Explicit diffusion as a single fused stencil.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{CoefficientMatrix, FusedKernel, PassThrough};
use crate::real::Real;
use crate::stencil::{combine, cross_correlate, identity_kernel, laplacian_kernel, StencilKernel};
use crate::tensor::{BoundaryPolicy, PaddedField};

/// Forward-Euler step of `df/dt = alpha * lap f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionProblem {
    pub alpha: f64,
    pub dt: f64,
    /// Grid spacing per axis.
    pub h: Vec<f64>,
    pub accuracy: u32,
    pub ndim: usize,
    #[serde(default)]
    pub boundary: BoundaryPolicy,
}

impl DiffusionProblem {
    pub fn new(ndim: usize, alpha: f64, dt: f64, h: f64, accuracy: u32) -> Result<Self> {
        let p = Self {
            alpha,
            dt,
            h: vec![h; ndim],
            accuracy,
            ndim,
            boundary: BoundaryPolicy::Periodic,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.ndim) {
            return Err(Error::Config(format!(
                "diffusion needs 1 to 3 dims, got {}",
                self.ndim
            )));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.dt >= 0.0) {
            return Err(Error::Config(format!(
                "dt must be non-negative, got {}",
                self.dt
            )));
        }
        if self.h.len() != self.ndim || self.h.iter().any(|&h| !(h > 0.0)) {
            return Err(Error::Config(format!(
                "need {} positive spacings, got {:?}",
                self.ndim, self.h
            )));
        }
        if ![2, 4, 6].contains(&self.accuracy) {
            return Err(Error::Config(format!(
                "accuracy must be 2, 4 or 6, got {}",
                self.accuracy
            )));
        }
        Ok(())
    }

    pub fn radius(&self) -> usize {
        self.accuracy as usize / 2
    }

    pub fn laplacian(&self) -> Result<StencilKernel> {
        laplacian_kernel(self.ndim, self.accuracy, &self.h)
    }
}

/// `identity + dt * alpha * laplacian` as one kernel.
pub fn diffusion_fused_kernel(p: &DiffusionProblem) -> Result<StencilKernel> {
    p.validate()?;
    combine(
        &[identity_kernel(p.ndim), p.laplacian()?],
        &[1.0, p.dt * p.alpha],
    )
}

/// One forward-Euler step by a single cross-correlation. The result's halo is zero.
pub fn diffusion_step<T: Real>(
    field: &PaddedField<T>,
    p: &DiffusionProblem,
) -> Result<PaddedField<T>> {
    cross_correlate(field, &diffusion_fused_kernel(p)?)
}

/// The fused diffusion kernel as a one-row engine kernel applied to each of `n_fields` fields.
pub fn diffusion_engine_kernel<T: Real>(
    p: &DiffusionProblem,
    n_fields: usize,
) -> Result<FusedKernel<T>> {
    let m = CoefficientMatrix::from_kernels(p.ndim, [("diffusion", diffusion_fused_kernel(p)?)])?;
    Ok(FusedKernel::new(m, Arc::new(PassThrough { row: 0 }), n_fields)?.prune())
}
