//! Fused stencil computations.
//!
//! A set of linear stencils is laid out as the rows of a coefficient matrix
//! over a box footprint. Each output point gathers the footprint of every
//! input field, multiplies it by the matrix in one pass and hands the result
//! to a pointwise combiner. [`exec::Executor`] runs this over tiles with
//! either a direct or a streaming (ring-buffered) strategy, [`autotune`]
//! picks a tile plan, and [`physics`] provides diffusion and compressible
//! MHD on top.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autotune;
pub mod error;
pub mod exec;
pub mod fusion;
pub mod harness;
pub mod physics;
pub mod real;
pub mod stencil;
pub mod tensor;

pub use autotune::{
    enumerate_candidates, tune, tune_kernel, SearchSpace, Timer, TuneConfig, TuneResult,
};
pub use error::{Error, Result};
pub use exec::{
    partition_domain, streaming_buffer_elements, validate_plan, working_set_elements, BufferBudget,
    Executor, MacUnroll, Strategy, TilePlan,
};
pub use fusion::{operational_intensity, CoefficientMatrix, Combiner, FusedKernel, QView};
pub use harness::profile::{machine_balance, MachineProfile};
pub use harness::spec::{parse_problem_spec, ProblemKind, ProblemSpec};
pub use real::{DType, Real};
pub use stencil::{cross_correlate, StencilKernel};
pub use tensor::{BoundaryPolicy, FieldSet, PaddedField, Shape};

/// One fused step on a default executor (all cores).
pub fn fused_step<T: Real>(
    fields: &FieldSet<T>,
    kernel: &FusedKernel<T>,
    plan: &TilePlan,
) -> Result<FieldSet<T>> {
    Executor::new(0)?.fused_step(fields, kernel, plan)
}
