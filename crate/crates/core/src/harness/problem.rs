//! Building runnable problems from specs.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::exec::{Executor, TilePlan};
use crate::fusion::{CoefficientMatrix, FusedKernel, PassThrough, RowSpec};
use crate::harness::expr::ExprCombiner;
use crate::harness::spec::{periodic_spacing, ProblemKind, ProblemSpec, StencilDef};
use crate::physics::diffusion::{diffusion_engine_kernel, DiffusionProblem};
use crate::physics::mhd::{mhd_kernel, MHD_FIELDS};
use crate::physics::rk3::{rk3_step, rk3_substep};
use crate::real::Real;
use crate::stencil::{central_difference, identity_kernel, laplacian_kernel, StencilKernel};
use crate::tensor::{FieldSet, Shape};

/// Initialized fields plus the kernel that advances them.
#[derive(Debug, Clone)]
pub struct Problem<T: Real> {
    pub case: String,
    pub kind: ProblemKind,
    pub radius: usize,
    pub fields: FieldSet<T>,
    pub kernel: FusedKernel<T>,
    /// RK3 time step for MHD; `None` for single-pass problems.
    pub rk3_dt: Option<f64>,
}

/// Uniform box average of radius `r` in `ndim` dimensions.
pub fn box_kernel(ndim: usize, r: usize) -> Result<StencilKernel> {
    let offsets = crate::fusion::footprint_offsets(ndim, r);
    let c = 1.0 / offsets.len() as f64;
    StencilKernel::new(ndim, &offsets, &vec![c; offsets.len()])
}

fn custom_row(def: &StencilDef, ndim: usize) -> Result<StencilKernel> {
    match def {
        StencilDef::Identity { .. } => Ok(identity_kernel(ndim)),
        StencilDef::Taps {
            offsets, coeffs, ..
        } => {
            let mut o3 = Vec::with_capacity(offsets.len());
            for o in offsets {
                if o.len() > 3 {
                    return Err(Error::Config(format!(
                        "offset {o:?} has more than three components"
                    )));
                }
                let mut p = [0; 3];
                p[..o.len()].copy_from_slice(o);
                o3.push(p);
            }
            StencilKernel::new(ndim, &o3, coeffs)
                .map_err(|e| Error::Config(format!("{}: {e}", def.label())))
        }
        StencilDef::Derivative {
            order,
            axis,
            accuracy,
            spacing,
            ..
        } => central_difference(*order, *accuracy, *axis, *spacing, ndim)
            .map_err(|e| Error::Config(format!("{}: {e}", def.label()))),
        StencilDef::Laplacian {
            accuracy, spacing, ..
        } => laplacian_kernel(ndim, *accuracy, &[*spacing; 3])
            .map_err(|e| Error::Config(format!("{}: {e}", def.label()))),
    }
}

impl ProblemSpec {
    pub fn diffusion_problem(&self, shape: Shape) -> Result<DiffusionProblem> {
        let d = self.diffusion_section()?;
        let p = DiffusionProblem {
            alpha: d.alpha,
            dt: d.dt,
            h: d.spacing.clone().unwrap_or_else(|| vec![1.0; shape.ndim()]),
            accuracy: d.accuracy,
            ndim: shape.ndim(),
            boundary: self.problem.boundary,
        };
        p.validate()?;
        Ok(p)
    }

    /// The fused kernel of this problem; `radius` overrides the cross-correlation radius.
    pub fn kernel<T: Real>(&self, shape: Shape, radius: Option<usize>) -> Result<FusedKernel<T>> {
        let ndim = shape.ndim();
        match self.kind() {
            ProblemKind::CrossCorr => {
                let c = self.crosscorr_section()?;
                let r = radius.unwrap_or(c.radius);
                let m = CoefficientMatrix::from_kernels(ndim, [("box", box_kernel(ndim, r)?)])?;
                Ok(FusedKernel::new(m, Arc::new(PassThrough { row: 0 }), c.fields)?.prune())
            }
            ProblemKind::Diffusion => {
                diffusion_engine_kernel(&self.diffusion_problem(shape)?, self.n_fields())
            }
            ProblemKind::Mhd => {
                let m = self.mhd_section();
                let h = m.spacing.unwrap_or_else(|| periodic_spacing(shape));
                Ok(mhd_kernel(&m.params, m.accuracy, h)?.prune())
            }
            ProblemKind::Custom => {
                let c = self.custom_section()?;
                let rows = c
                    .stencils
                    .iter()
                    .map(|s| {
                        Ok(RowSpec {
                            label: s.label().to_string(),
                            kernel: custom_row(s, ndim)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let m = CoefficientMatrix::from_rows(ndim, None, rows)?;
                let phi = ExprCombiner::new(&c.phi, &c.params, m.n_rows(), c.phi.len())?;
                Ok(FusedKernel::new(m, Arc::new(phi), c.phi.len())?.prune())
            }
        }
    }

    /// Randomly initialized fields and the kernel, at the spec's domain.
    pub fn build<T: Real>(&self) -> Result<Problem<T>> {
        self.build_at(self.shape()?, None)
    }

    /// As [`ProblemSpec::build`] with an explicit shape and cross-correlation radius.
    pub fn build_at<T: Real>(&self, shape: Shape, radius: Option<usize>) -> Result<Problem<T>> {
        let kernel = self.kernel::<T>(shape, radius)?;
        let r = kernel.radius();
        let halo = self.problem.halo.unwrap_or(0).max(r);
        let names: Vec<String> = match self.kind() {
            ProblemKind::Mhd => MHD_FIELDS.iter().map(|s| s.to_string()).collect(),
            _ => (0..self.n_fields()).map(|j| format!("f{j}")).collect(),
        };
        let mut fields = FieldSet::new(&names, shape, halo, self.problem.boundary);
        let [lo, hi] = self.problem.init_range;
        fields.fill_random(lo, hi, self.problem.seed)?;
        fields.refresh_halo();
        Ok(Problem {
            case: self.case(),
            kind: self.kind(),
            radius: r,
            fields,
            kernel,
            rk3_dt: (self.kind() == ProblemKind::Mhd).then(|| self.mhd_section().dt),
        })
    }
}

/// Scratch for advancing a problem in place.
#[derive(Debug)]
pub struct Stepper<T: Real> {
    out: FieldSet<T>,
    w: FieldSet<T>,
    substep: usize,
}

impl<T: Real> Stepper<T> {
    pub fn new(p: &Problem<T>) -> Self {
        Self {
            out: p.fields.zeros_like(),
            w: p.fields.zeros_like(),
            substep: 0,
        }
    }

    /// Advance one full step (three substeps for MHD). Halos are refreshed.
    pub fn step(&mut self, exec: &Executor, p: &mut Problem<T>, plan: &TilePlan) -> Result<()> {
        match p.rk3_dt {
            Some(dt) => rk3_step(
                exec,
                &p.kernel,
                plan,
                &mut p.fields,
                &mut self.w,
                &mut self.out,
                dt,
            )?,
            None => {
                exec.fused_step_into(&p.fields, &p.kernel, plan, &mut self.out)?;
                std::mem::swap(&mut p.fields, &mut self.out);
            }
        }
        p.fields.refresh_halo();
        Ok(())
    }

    /// The unit of work that is timed: one kernel pass (one substep for MHD).
    /// The input halo must be current; it is not refreshed here.
    pub fn timed_unit(
        &mut self,
        exec: &Executor,
        p: &mut Problem<T>,
        plan: &TilePlan,
    ) -> Result<()> {
        match p.rk3_dt {
            Some(dt) => {
                let s = self.substep;
                self.substep = (s + 1) % 3;
                rk3_substep(
                    exec,
                    &p.kernel,
                    plan,
                    &mut p.fields,
                    &mut self.w,
                    &mut self.out,
                    s,
                    dt,
                )
            }
            None => exec
                .fused_step_into(&p.fields, &p.kernel, plan, &mut self.out)
                .map(|_| ()),
        }
    }
}
