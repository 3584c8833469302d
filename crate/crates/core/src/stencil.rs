//! Stencil kernels as sparse offset/coefficient sets.
//!
//! Taps are kept sorted in footprint scan order (x fastest, then y, then z),
//! which is also the accumulation order used everywhere a kernel is applied.
//! Two code paths that apply the same kernel therefore agree bit for bit.

use std::collections::BTreeMap;

use num_rational::Ratio;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::PaddedField;

/// One stencil point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub offset: [i32; 3],
    pub coeff: f64,
}

/// Scan-order key: z slowest, x fastest.
fn scan_key(o: [i32; 3]) -> (i32, i32, i32) {
    (o[2], o[1], o[0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct StencilKernel {
    ndim: usize,
    taps: Vec<Tap>,
}

impl StencilKernel {
    /// Build a kernel from offsets and coefficients. Offsets must be unique and
    /// zero on axes `>= ndim`.
    pub fn new(ndim: usize, offsets: &[[i32; 3]], coeffs: &[f64]) -> Result<Self> {
        if !(1..=3).contains(&ndim) {
            return Err(Error::Argument(format!(
                "kernel dimensionality {ndim} not in 1..=3"
            )));
        }
        if offsets.len() != coeffs.len() {
            return Err(Error::Argument(format!(
                "{} offsets but {} coefficients",
                offsets.len(),
                coeffs.len()
            )));
        }
        let mut map = BTreeMap::new();
        for (&o, &c) in offsets.iter().zip(coeffs) {
            if o[ndim..].iter().any(|&x| x != 0) {
                return Err(Error::Argument(format!(
                    "offset {o:?} uses an axis beyond dimension {ndim}"
                )));
            }
            if map
                .insert(
                    scan_key(o),
                    Tap {
                        offset: o,
                        coeff: c,
                    },
                )
                .is_some()
            {
                return Err(Error::Argument(format!("duplicate offset {o:?}")));
            }
        }
        Ok(Self {
            ndim,
            taps: map.into_values().collect(),
        })
    }

    pub fn empty(ndim: usize) -> Self {
        Self {
            ndim,
            taps: Vec::new(),
        }
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    /// Taps in accumulation order.
    pub fn taps(&self) -> &[Tap] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Largest Chebyshev distance of any tap from the centre.
    pub fn radius(&self) -> Result<usize> {
        self.taps
            .iter()
            .map(|t| {
                t.offset
                    .iter()
                    .map(|x| x.unsigned_abs() as usize)
                    .max()
                    .unwrap_or(0)
            })
            .max()
            .ok_or_else(|| Error::Argument("radius of an empty kernel".into()))
    }

    /// Coefficient at `offset`, zero if absent.
    pub fn coeff(&self, offset: [i32; 3]) -> f64 {
        self.taps
            .iter()
            .find(|t| t.offset == offset)
            .map_or(0.0, |t| t.coeff)
    }

    pub fn coeff_sum(&self) -> f64 {
        self.taps.iter().map(|t| t.coeff).sum()
    }

    /// Same taps reinterpreted in a higher dimension.
    pub fn with_ndim(&self, ndim: usize) -> Result<Self> {
        if ndim < self.ndim || ndim > 3 {
            return Err(Error::Argument(format!(
                "cannot lift a {}-D kernel to {ndim}-D",
                self.ndim
            )));
        }
        Ok(Self {
            ndim,
            taps: self.taps.clone(),
        })
    }
}

/// The Iverson-bracket kernel `[j = 0]`.
pub fn identity_kernel(ndim: usize) -> StencilKernel {
    StencilKernel::new(ndim.clamp(1, 3), &[[0; 3]], &[1.0]).expect("valid identity")
}

type Rational = Ratio<i128>;

/// Exact 1-D central-difference weights for offsets `-r..=r`.
///
/// Solves the moment system `sum_j c_j j^q = deriv! [q = deriv]`, `q = 0..=2r`,
/// by fraction-exact Gauss-Jordan elimination.
pub fn central_weights(deriv: u32, accuracy: u32) -> Result<Vec<Rational>> {
    if !matches!(deriv, 1 | 2) {
        return Err(Error::Argument(format!(
            "unsupported derivative order {deriv}"
        )));
    }
    if !matches!(accuracy, 2 | 4 | 6) {
        return Err(Error::Argument(format!(
            "unsupported accuracy order {accuracy}"
        )));
    }
    let r = (accuracy / 2) as i128;
    let n = (2 * r + 1) as usize;
    let mut m: Vec<Vec<Rational>> = (0..n)
        .map(|q| {
            let mut row: Vec<Rational> = (-r..=r)
                .map(|j| Rational::from_integer(j.pow(q as u32)))
                .collect();
            let rhs = if q as u32 == deriv {
                (1..=deriv as i128).product()
            } else {
                0
            };
            row.push(Rational::from_integer(rhs));
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .find(|&r| m[r][col] != Rational::from_integer(0))
            .expect("Vandermonde system is nonsingular");
        m.swap(col, pivot);
        let p = m[col][col];
        for v in m[col].iter_mut() {
            *v /= p;
        }
        let pivot_row = m[col].clone();
        for (row, r) in m.iter_mut().enumerate() {
            if row != col {
                let factor = r[col];
                if factor != Rational::from_integer(0) {
                    for (v, &pv) in r.iter_mut().zip(&pivot_row) {
                        *v -= factor * pv;
                    }
                }
            }
        }
    }
    Ok(m.into_iter().map(|row| row[n]).collect())
}

fn rational_to_f64(q: Rational) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

fn axis_offset(axis: usize, j: i32) -> [i32; 3] {
    let mut o = [0; 3];
    o[axis] = j;
    o
}

/// Central-difference kernel for the `deriv`-th derivative along `axis`,
/// radius `accuracy / 2`, coefficients scaled by `h^-deriv`.
///
/// Zero weights (the centre of a first derivative) are kept out of the tap list.
pub fn central_difference(
    deriv: u32,
    accuracy: u32,
    axis: usize,
    h: f64,
    ndim: usize,
) -> Result<StencilKernel> {
    if axis >= ndim {
        return Err(Error::Argument(format!(
            "axis {axis} out of range for {ndim}-D"
        )));
    }
    if !(h > 0.0) {
        return Err(Error::Argument(format!(
            "grid spacing must be positive, got {h}"
        )));
    }
    let w = central_weights(deriv, accuracy)?;
    let r = (accuracy / 2) as i32;
    let scale = h.powi(deriv as i32);
    let (offsets, coeffs): (Vec<_>, Vec<_>) = (-r..=r)
        .zip(w)
        .filter(|(_, c)| *c.numer() != 0)
        .map(|(j, c)| (axis_offset(axis, j), rational_to_f64(c) / scale))
        .unzip();
    StencilKernel::new(ndim, &offsets, &coeffs)
}

/// Cross derivative `d^2 / (d a d b)` as the outer product of two first-derivative kernels.
pub fn mixed_partial(
    axis_a: usize,
    axis_b: usize,
    accuracy: u32,
    h_a: f64,
    h_b: f64,
    ndim: usize,
) -> Result<StencilKernel> {
    if axis_a == axis_b {
        return Err(Error::Argument(
            "mixed partial needs two distinct axes".into(),
        ));
    }
    if axis_a >= ndim || axis_b >= ndim {
        return Err(Error::Argument(format!(
            "axes ({axis_a}, {axis_b}) out of range for {ndim}-D"
        )));
    }
    if !(h_a > 0.0 && h_b > 0.0) {
        return Err(Error::Argument("grid spacing must be positive".into()));
    }
    let w = central_weights(1, accuracy)?;
    let r = (accuracy / 2) as i32;
    let mut offsets = Vec::new();
    let mut coeffs = Vec::new();
    for (ja, ca) in (-r..=r).zip(&w) {
        for (jb, cb) in (-r..=r).zip(&w) {
            let c = ca * cb;
            if *c.numer() == 0 {
                continue;
            }
            let mut o = [0; 3];
            o[axis_a] = ja;
            o[axis_b] = jb;
            offsets.push(o);
            coeffs.push(rational_to_f64(c) / (h_a * h_b));
        }
    }
    StencilKernel::new(ndim, &offsets, &coeffs)
}

/// Weighted sum of kernels: `sum_m w_m c_m` on the union of offsets.
///
/// Offsets whose combined coefficient is exactly zero are dropped.
pub fn combine(kernels: &[StencilKernel], weights: &[f64]) -> Result<StencilKernel> {
    if kernels.len() != weights.len() {
        return Err(Error::Argument(format!(
            "{} kernels but {} weights",
            kernels.len(),
            weights.len()
        )));
    }
    let Some(first) = kernels.first() else {
        return Err(Error::Argument("combine needs at least one kernel".into()));
    };
    let ndim = first.ndim();
    if kernels.iter().any(|k| k.ndim() != ndim) {
        return Err(Error::Argument("kernels differ in dimensionality".into()));
    }
    let mut acc: BTreeMap<(i32, i32, i32), ([i32; 3], f64)> = BTreeMap::new();
    for (k, &w) in kernels.iter().zip(weights) {
        for t in k.taps() {
            let e = acc.entry(scan_key(t.offset)).or_insert((t.offset, 0.0));
            e.1 += w * t.coeff;
        }
    }
    let (offsets, coeffs): (Vec<_>, Vec<_>) = acc.into_values().filter(|(_, c)| *c != 0.0).unzip();
    StencilKernel::new(ndim, &offsets, &coeffs)
}

/// Sum of per-axis second-derivative kernels.
pub fn laplacian_kernel(ndim: usize, accuracy: u32, h: &[f64]) -> Result<StencilKernel> {
    if !(1..=3).contains(&ndim) || h.len() < ndim {
        return Err(Error::Argument(format!(
            "laplacian needs 1..=3 dims and one spacing per axis (ndim {ndim}, {} spacings)",
            h.len()
        )));
    }
    let parts = (0..ndim)
        .map(|a| central_difference(2, accuracy, a, h[a], ndim))
        .collect::<Result<Vec<_>>>()?;
    combine(&parts, &vec![1.0; ndim])
}

fn check_halo<T: Real>(field: &PaddedField<T>, kernel: &StencilKernel) -> Result<()> {
    if kernel.ndim() > field.shape().ndim() {
        return Err(Error::Config(format!(
            "{}-D kernel applied to a {}-D field",
            kernel.ndim(),
            field.shape().ndim()
        )));
    }
    if let Ok(r) = kernel.radius() {
        if field.halo() < r {
            return Err(Error::Config(format!(
                "halo {} smaller than kernel radius {r}",
                field.halo()
            )));
        }
    }
    Ok(())
}

/// Cross-correlation at one interior point.
#[inline]
pub fn correlate_at<T: Real>(
    field: &PaddedField<T>,
    taps: &[(isize, T)],
    i: usize,
    j: usize,
    k: usize,
) -> T {
    let base = field.padded_index(i, j, k) as isize;
    let data = field.data();
    let mut acc = T::zero();
    for &(d, c) in taps {
        acc = acc + c * data[(base + d) as usize];
    }
    acc
}

/// Taps converted to storage-index deltas for `field` and to the working precision.
pub fn storage_taps<T: Real>(field: &PaddedField<T>, kernel: &StencilKernel) -> Vec<(isize, T)> {
    let [px, py, _] = field.padded_dims();
    kernel
        .taps()
        .iter()
        .map(|t| {
            let [x, y, z] = t.offset.map(|v| v as isize);
            (
                x + y * px as isize + z * (px * py) as isize,
                T::from_f64_lossy(t.coeff),
            )
        })
        .collect()
}

/// Shape-preserving direct cross-correlation `f'_i = sum_s c_s f_{i+s}`.
///
/// The input halo must be refreshed and at least as wide as the kernel radius.
/// The output halo is left zeroed.
pub fn cross_correlate<T: Real>(
    field: &PaddedField<T>,
    kernel: &StencilKernel,
) -> Result<PaddedField<T>> {
    check_halo(field, kernel)?;
    let taps = storage_taps(field, kernel);
    let shape = field.shape();
    let [nx, ny, _] = shape.dims();
    let mut interior = vec![T::zero(); shape.len()];
    interior
        .par_chunks_mut(nx * ny)
        .enumerate()
        .for_each(|(k, plane)| {
            for j in 0..ny {
                for i in 0..nx {
                    plane[i + j * nx] = correlate_at(field, &taps, i, j, k);
                }
            }
        });
    let mut out = field.zeros_like();
    for (idx, v) in interior.into_iter().enumerate() {
        let [i, j, k] = shape.coords(idx);
        out.set(i, j, k, v);
    }
    Ok(out)
}
