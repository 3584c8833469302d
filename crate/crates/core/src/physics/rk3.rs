//! Williamson low-storage third-order Runge-Kutta (2N registers).

use crate::error::{Error, Result};
use crate::exec::{Executor, TilePlan};
use crate::fusion::FusedKernel;
use crate::real::Real;
use crate::tensor::FieldSet;

pub const RK3_ALPHA: [f64; 3] = [0.0, -5.0 / 9.0, -153.0 / 128.0];
pub const RK3_BETA: [f64; 3] = [1.0 / 3.0, 15.0 / 16.0, 8.0 / 15.0];

/// `w <- alpha_s w + dt rhs; state <- state + beta_s w` on the interior.
pub fn rk3_update<T: Real>(
    state: &mut FieldSet<T>,
    w: &mut FieldSet<T>,
    rhs: &FieldSet<T>,
    substep: usize,
    dt: f64,
) -> Result<()> {
    if substep > 2 {
        return Err(Error::Argument(format!("substep {substep} not in 0..3")));
    }
    if state.len() != w.len() || state.len() != rhs.len() {
        return Err(Error::Argument(
            "state, scratch and rhs differ in field count".into(),
        ));
    }
    let (alpha, beta, dt) = (
        T::from_f64_lossy(RK3_ALPHA[substep]),
        T::from_f64_lossy(RK3_BETA[substep]),
        T::from_f64_lossy(dt),
    );
    let [nx, ny, nz] = state.shape().dims();
    for j in 0..state.len() {
        let r = rhs.field(j);
        let wf = w.field_mut(j);
        for z in 0..nz {
            for y in 0..ny {
                let start = wf.padded_index(0, y, z);
                let rs = r.padded_index(0, y, z);
                let src = &r.data()[rs..rs + nx];
                for (wv, &rv) in wf.data_mut()[start..start + nx].iter_mut().zip(src) {
                    *wv = alpha * *wv + dt * rv;
                }
            }
        }
        let wf = w.field(j);
        let sf = state.field_mut(j);
        for z in 0..nz {
            for y in 0..ny {
                let start = sf.padded_index(0, y, z);
                let ws = wf.padded_index(0, y, z);
                let src = &wf.data()[ws..ws + nx];
                for (sv, &wv) in sf.data_mut()[start..start + nx].iter_mut().zip(src) {
                    *sv = *sv + beta * wv;
                }
            }
        }
    }
    Ok(())
}

/// One substep: evaluate the right-hand side with the fused kernel, then update.
/// The state's halo must be current.
#[allow(clippy::too_many_arguments)]
pub fn rk3_substep<T: Real>(
    exec: &Executor,
    kernel: &FusedKernel<T>,
    plan: &TilePlan,
    state: &mut FieldSet<T>,
    w: &mut FieldSet<T>,
    rhs: &mut FieldSet<T>,
    substep: usize,
    dt: f64,
) -> Result<()> {
    exec.fused_step_into(state, kernel, plan, rhs)?;
    rk3_update(state, w, rhs, substep, dt)
}

/// A full step of three substeps, refreshing the state's halo before each.
pub fn rk3_step<T: Real>(
    exec: &Executor,
    kernel: &FusedKernel<T>,
    plan: &TilePlan,
    state: &mut FieldSet<T>,
    w: &mut FieldSet<T>,
    rhs: &mut FieldSet<T>,
    dt: f64,
) -> Result<()> {
    for s in 0..3 {
        state.refresh_halo();
        rk3_substep(exec, kernel, plan, state, w, rhs, s, dt)?;
    }
    Ok(())
}

/// Integrate the scalar problem `dy/dt = f(y)` to `t_end` with fixed `dt`.
pub fn rk3_scalar(f: impl Fn(f64) -> f64, y0: f64, dt: f64, t_end: f64) -> f64 {
    let steps = (t_end / dt).round() as usize;
    let (mut y, mut w) = (y0, 0.0);
    for _ in 0..steps {
        for s in 0..3 {
            w = RK3_ALPHA[s] * w + dt * f(y);
            y += RK3_BETA[s] * w;
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coefficients_are_third_order() {
        let y1 = rk3_scalar(|y| y, 1.0, 1.0, 1.0);
        // one step on y' = y reproduces 1 + h + h^2/2 + h^3/6 exactly
        assert!((y1 - (1.0 + 1.0 + 0.5 + 1.0 / 6.0)).abs() < 1e-14, "{y1}");
    }

    #[test]
    fn convergence_ratio() {
        let exact = (-1.0f64).exp();
        let errs: Vec<f64> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&dt| (rk3_scalar(|y| -y, 1.0, dt, 1.0) - exact).abs())
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((6.5..=9.5).contains(&ratio), "{ratio}");
        }
    }

    #[test]
    fn zero_dt_keeps_state() {
        let y = rk3_scalar(|y| -y, 0.3, 0.0, 0.0);
        assert_eq!(y, 0.3);
    }
}
