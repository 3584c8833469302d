//! Compressible resistive MHD right-hand side as a fused kernel.
//!
//! State fields, in order: `lnrho, ux, uy, uz, ss, ax, ay, az` (log density,
//! velocity, specific entropy, magnetic vector potential). The linear stage
//! produces the value, the three first derivatives, the three pure second
//! derivatives and the three mixed second derivatives of every field; the
//! combiner assembles the continuity, momentum, entropy and induction
//! equations from them.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{CoefficientMatrix, Combiner, FusedKernel, QView, RowSpec};
use crate::real::Real;
use crate::stencil::{central_difference, identity_kernel, mixed_partial};

pub const MHD_FIELDS: [&str; 8] = ["lnrho", "ux", "uy", "uz", "ss", "ax", "ay", "az"];

pub const LNRHO: usize = 0;
pub const UX: usize = 1;
pub const SS: usize = 4;
pub const AX: usize = 5;

pub const ROW_VALUE: usize = 0;
/// First derivatives along x, y, z occupy rows `ROW_D1 + axis`.
pub const ROW_D1: usize = 1;
/// Pure second derivatives occupy rows `ROW_D2 + axis`.
pub const ROW_D2: usize = 4;
pub const ROW_DXY: usize = 7;
pub const ROW_DYZ: usize = 8;
pub const ROW_DXZ: usize = 9;
pub const MHD_ROWS: usize = 10;

/// Where the `2 S . grad ln rho` term sits relative to the viscosity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViscousGrouping {
    /// `nu (lap u + grad div u / 3 + 2 S . grad ln rho)`
    #[default]
    Standard,
    /// `nu (lap u + grad div u / 3) + 2 S . grad ln rho`
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MhdParams {
    pub nu: f64,
    pub zeta: f64,
    pub eta: f64,
    pub mu0: f64,
    pub cp: f64,
    pub cv: f64,
    pub gamma: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub heat: f64,
    pub cool: f64,
    pub cs0: f64,
    pub rho0: f64,
    #[serde(rename = "T0")]
    pub t0: f64,
    pub grouping: ViscousGrouping,
}

impl Default for MhdParams {
    fn default() -> Self {
        Self {
            nu: 5e-3,
            zeta: 0.0,
            eta: 5e-3,
            mu0: 1.0,
            cp: 1.0,
            cv: 0.6,
            gamma: 5.0 / 3.0,
            k: 1e-3,
            heat: 0.0,
            cool: 0.0,
            cs0: 1.0,
            rho0: 1.0,
            t0: 1.0,
            grouping: ViscousGrouping::Standard,
        }
    }
}

impl MhdParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu0 > 0.0) {
            return Err(Error::Config(format!(
                "mu0 must be positive, got {}",
                self.mu0
            )));
        }
        if !(self.cp > self.cv && self.cv > 0.0) {
            return Err(Error::Config(format!(
                "need cp > cv > 0, got cp {} cv {}",
                self.cp, self.cv
            )));
        }
        let ratio = self.cp / self.cv;
        if (self.gamma - ratio).abs() > 1e-12 * ratio {
            return Err(Error::Config(format!(
                "gamma {} differs from cp/cv = {ratio}",
                self.gamma
            )));
        }
        if !(self.cs0 > 0.0 && self.rho0 > 0.0 && self.t0 > 0.0) {
            return Err(Error::Config("cs0, rho0 and T0 must be positive".into()));
        }
        for (name, v) in [
            ("nu", self.nu),
            ("zeta", self.zeta),
            ("eta", self.eta),
            ("K", self.k),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Inviscid, non-resistive, non-conducting copy.
    pub fn ideal(&self) -> Self {
        Self {
            nu: 0.0,
            zeta: 0.0,
            eta: 0.0,
            k: 0.0,
            ..self.clone()
        }
    }
}

fn mixed_row(a: usize, b: usize) -> usize {
    match (a.min(b), a.max(b)) {
        (0, 1) => ROW_DXY,
        (1, 2) => ROW_DYZ,
        (0, 2) => ROW_DXZ,
        _ => ROW_D2 + a,
    }
}

/// The ten derivative rows on a 3-D grid with spacing `h` at the given accuracy.
pub fn build_mhd_coefficient_matrix(accuracy: u32, h: [f64; 3]) -> Result<CoefficientMatrix> {
    let mut rows = vec![RowSpec {
        label: "value".into(),
        kernel: identity_kernel(3),
    }];
    for (a, name) in ["d/dx", "d/dy", "d/dz"].iter().enumerate() {
        rows.push(RowSpec {
            label: (*name).into(),
            kernel: central_difference(1, accuracy, a, h[a], 3)?,
        });
    }
    for (a, name) in ["d2/dx2", "d2/dy2", "d2/dz2"].iter().enumerate() {
        rows.push(RowSpec {
            label: (*name).into(),
            kernel: central_difference(2, accuracy, a, h[a], 3)?,
        });
    }
    for (a, b, name) in [(0, 1, "d2/dxdy"), (1, 2, "d2/dydz"), (0, 2, "d2/dxdz")] {
        rows.push(RowSpec {
            label: name.into(),
            kernel: mixed_partial(a, b, accuracy, h[a], h[b], 3)?,
        });
    }
    CoefficientMatrix::from_rows(3, Some(accuracy as usize / 2), rows)
}

/// Time derivatives of the eight state fields from the linear-stage output.
pub fn mhd_phi<T: Real>(q: &QView<'_, T>, p: &MhdParams) -> [T; 8] {
    let c = |v: f64| T::from_f64_lossy(v);
    let g = |row: usize, f: usize| q.get(row, f);
    let d1 = |f: usize, a: usize| g(ROW_D1 + a, f);
    let d2 = |f: usize, a: usize, b: usize| g(mixed_row(a, b), f);
    let lap = |f: usize| g(ROW_D2, f) + g(ROW_D2 + 1, f) + g(ROW_D2 + 2, f);
    let dot = |a: [T; 3], b: [T; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let (half, third, two) = (c(0.5), c(1.0 / 3.0), c(2.0));

    let lnrho = g(ROW_VALUE, LNRHO);
    let u = [0, 1, 2].map(|i| g(ROW_VALUE, UX + i));
    let s = g(ROW_VALUE, SS);
    let grad_lnrho = [0, 1, 2].map(|a| d1(LNRHO, a));
    let grad_s = [0, 1, 2].map(|a| d1(SS, a));

    // du[i][j] = d u_i / d x_j
    let du = [0, 1, 2].map(|i| [0, 1, 2].map(|j| d1(UX + i, j)));
    let div_u = du[0][0] + du[1][1] + du[2][2];
    let grad_div_u = [0, 1, 2].map(|i| d2(UX, i, 0) + d2(UX + 1, i, 1) + d2(UX + 2, i, 2));
    let lap_u = [0, 1, 2].map(|i| lap(UX + i));
    let strain = [0, 1, 2].map(|i| {
        [0, 1, 2].map(|j| {
            let sym = half * (du[i][j] + du[j][i]);
            if i == j {
                sym - third * div_u
            } else {
                sym
            }
        })
    });

    // B = curl A, j = (grad div A - lap A) / mu0
    let da = [0, 1, 2].map(|i| [0, 1, 2].map(|j| d1(AX + i, j)));
    let b = [
        da[2][1] - da[1][2],
        da[0][2] - da[2][0],
        da[1][0] - da[0][1],
    ];
    let inv_mu0 = c(1.0 / p.mu0);
    let jc = [0, 1, 2]
        .map(|i| (d2(AX, i, 0) + d2(AX + 1, i, 1) + d2(AX + 2, i, 2) - lap(AX + i)) * inv_mu0);
    let lap_a = [0, 1, 2].map(|i| lap(AX + i));

    let gamma = c(p.gamma);
    let gm1 = c(p.gamma - 1.0);
    let inv_cp = c(1.0 / p.cp);
    let rho = lnrho.exp();
    let cs2 = c(p.cs0 * p.cs0) * (gamma * s * inv_cp + gm1 * (lnrho - c(p.rho0.ln()))).exp();
    let temp = c(p.t0 / (p.cs0 * p.cs0)) * cs2;

    let dlnrho = -dot(u, grad_lnrho) - div_u;

    let jxb = [
        jc[1] * b[2] - jc[2] * b[1],
        jc[2] * b[0] - jc[0] * b[2],
        jc[0] * b[1] - jc[1] * b[0],
    ];
    let (nu, zeta) = (c(p.nu), c(p.zeta));
    let du_dt = [0, 1, 2].map(|i| {
        let advect = dot(u, du[i]);
        let pressure = cs2 * (grad_s[i] * inv_cp + grad_lnrho[i]);
        let s_grad = two * dot(strain[i], grad_lnrho);
        let visc = match p.grouping {
            ViscousGrouping::Standard => nu * (lap_u[i] + third * grad_div_u[i] + s_grad),
            ViscousGrouping::Literal => nu * (lap_u[i] + third * grad_div_u[i]) + s_grad,
        };
        -advect - pressure + jxb[i] / rho + visc + zeta * grad_div_u[i]
    });

    let gs = c(p.gamma / p.cp);
    let grad_lnt = [0, 1, 2].map(|a| gs * grad_s[a] + gm1 * grad_lnrho[a]);
    let lap_lnt = gs * lap(SS) + gm1 * lap(LNRHO);
    let conduction = c(p.k) * temp * (lap_lnt + dot(grad_lnt, grad_lnt));
    let joule = c(p.eta * p.mu0) * dot(jc, jc);
    let s2 = strain
        .iter()
        .flat_map(|r| r.iter())
        .fold(T::zero(), |acc, &v| acc + v * v);
    let heating = c(p.heat) - c(p.cool)
        + conduction
        + joule
        + two * rho * nu * s2
        + zeta * rho * div_u * div_u;
    let ds = -dot(u, grad_s) + heating / (rho * temp);

    let uxb = [
        u[1] * b[2] - u[2] * b[1],
        u[2] * b[0] - u[0] * b[2],
        u[0] * b[1] - u[1] * b[0],
    ];
    let eta = c(p.eta);
    let da_dt = [0, 1, 2].map(|i| uxb[i] + eta * lap_a[i]);

    [
        dlnrho, du_dt[0], du_dt[1], du_dt[2], ds, da_dt[0], da_dt[1], da_dt[2],
    ]
}

/// Combiner wrapper around [`mhd_phi`].
#[derive(Debug, Clone, PartialEq)]
pub struct MhdCombiner {
    pub params: MhdParams,
}

impl<T: Real> Combiner<T> for MhdCombiner {
    fn name(&self) -> &str {
        "mhd"
    }

    fn uses(&self, _n_rows: usize, _n_fields: usize) -> Vec<(usize, usize)> {
        let mut used = Vec::new();
        let no_mixed = [
            ROW_VALUE,
            ROW_D1,
            ROW_D1 + 1,
            ROW_D1 + 2,
            ROW_D2,
            ROW_D2 + 1,
            ROW_D2 + 2,
        ];
        for f in [LNRHO, SS] {
            used.extend(no_mixed.iter().map(|&r| (r, f)));
        }
        for f in UX..UX + 3 {
            used.extend((0..MHD_ROWS).map(|r| (r, f)));
        }
        for f in AX..AX + 3 {
            used.extend((ROW_D1..MHD_ROWS).map(|r| (r, f)));
        }
        used
    }

    fn eval(&self, q: QView<'_, T>, _center: [usize; 3], out: &mut [T]) {
        out.copy_from_slice(&mhd_phi(&q, &self.params));
    }

    fn flops(&self) -> usize {
        180
    }
}

/// The MHD right-hand side as an engine kernel over the eight state fields.
pub fn mhd_kernel<T: Real>(
    params: &MhdParams,
    accuracy: u32,
    h: [f64; 3],
) -> Result<FusedKernel<T>> {
    params.validate()?;
    let m = build_mhd_coefficient_matrix(accuracy, h)?;
    FusedKernel::new(
        m,
        Arc::new(MhdCombiner {
            params: params.clone(),
        }),
        MHD_FIELDS.len(),
    )
}
