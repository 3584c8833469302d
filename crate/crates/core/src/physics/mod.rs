//! Built-in problems.

pub mod diffusion;
pub mod mhd;
pub mod rk3;

pub use diffusion::{
    diffusion_engine_kernel, diffusion_fused_kernel, diffusion_step, DiffusionProblem,
};
pub use mhd::{
    build_mhd_coefficient_matrix, mhd_kernel, mhd_phi, MhdCombiner, MhdParams, ViscousGrouping,
    MHD_FIELDS,
};
pub use rk3::{rk3_scalar, rk3_step, rk3_substep, rk3_update, RK3_ALPHA, RK3_BETA};
