//! Padded scalar fields.
//!
//! A field stores its interior together with a halo of `r` cells on each side
//! of every active axis, in one allocation, in row-wise scan order (x fastest).
//! Halo cells hold the boundary value for the corresponding out-of-domain
//! index once [`PaddedField::refresh_halo`] has run.

use std::cell::Cell;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Interior extents of a field, up to three dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Shape {
    dims: [usize; 3],
    ndim: usize,
}

impl Shape {
    /// Build a shape from 1 to 3 positive extents.
    pub fn new(extents: &[usize]) -> Result<Self> {
        if extents.is_empty() || extents.len() > 3 {
            return Err(Error::Argument(format!(
                "shape must have 1 to 3 extents, got {}",
                extents.len()
            )));
        }
        if extents.contains(&0) {
            return Err(Error::Argument(format!(
                "shape extents must be positive: {extents:?}"
            )));
        }
        let mut dims = [1; 3];
        dims[..extents.len()].copy_from_slice(extents);
        Ok(Self {
            dims,
            ndim: extents.len(),
        })
    }

    pub fn d1(nx: usize) -> Self {
        Self::new(&[nx]).expect("positive extent")
    }

    pub fn d2(nx: usize, ny: usize) -> Self {
        Self::new(&[nx, ny]).expect("positive extents")
    }

    pub fn d3(nx: usize, ny: usize, nz: usize) -> Self {
        Self::new(&[nx, ny, nz]).expect("positive extents")
    }

    /// Extents `(n_x, n_y, n_z)`, missing trailing axes reported as 1.
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-wise scan index `i + j n_x + k n_x n_y`.
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> Result<usize> {
        let [nx, ny, nz] = self.dims;
        if i >= nx || j >= ny || k >= nz {
            return Err(Error::Index {
                i,
                j,
                k,
                shape: self.dims,
            });
        }
        Ok(i + j * nx + k * nx * ny)
    }

    /// Inverse of [`Shape::linear_index`].
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Shape::new(&v)
    }
}

impl From<Shape> for Vec<usize> {
    fn from(s: Shape) -> Self {
        s.dims[..s.ndim].to_vec()
    }
}

/// Free function form of [`Shape::linear_index`].
pub fn linear_index(i: usize, j: usize, k: usize, shape: &Shape) -> Result<usize> {
    shape.linear_index(i, j, k)
}

/// Boundary value function for out-of-domain indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryPolicy {
    Zero,
    Constant(f64),
    #[default]
    Periodic,
}

thread_local! {
    static HALO_REFRESHES: Cell<u64> = const { Cell::new(0) };
}

/// Number of halo refreshes performed on the calling thread so far.
pub fn halo_refresh_count() -> u64 {
    HALO_REFRESHES.with(|c| c.get())
}

/// A scalar field with an inline halo.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedField<T> {
    shape: Shape,
    halo: usize,
    policy: BoundaryPolicy,
    // halo width per axis: `halo` on active axes, 0 on the trailing unit axes
    pads: [usize; 3],
    padded: [usize; 3],
    data: Vec<T>,
}

impl<T: Real> PaddedField<T> {
    /// A zero-initialized field.
    pub fn new(shape: Shape, halo: usize, policy: BoundaryPolicy) -> Self {
        let mut pads = [0; 3];
        for p in pads.iter_mut().take(shape.ndim()) {
            *p = halo;
        }
        let dims = shape.dims();
        let padded = [
            dims[0] + 2 * pads[0],
            dims[1] + 2 * pads[1],
            dims[2] + 2 * pads[2],
        ];
        Self {
            shape,
            halo,
            policy,
            pads,
            padded,
            data: vec![T::zero(); padded.iter().product()],
        }
    }

    /// Build a field from interior values in scan order; the halo is refreshed.
    pub fn from_interior(
        shape: Shape,
        halo: usize,
        policy: BoundaryPolicy,
        values: &[T],
    ) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::Argument(format!(
                "expected {} interior values, got {}",
                shape.len(),
                values.len()
            )));
        }
        let mut f = Self::new(shape, halo, policy);
        for (idx, &v) in values.iter().enumerate() {
            let [i, j, k] = shape.coords(idx);
            let p = f.padded_index(i, j, k);
            f.data[p] = v;
        }
        f.refresh_halo();
        Ok(f)
    }

    /// Build a field by evaluating `f(i, j, k)` at every interior point.
    pub fn from_fn(
        shape: Shape,
        halo: usize,
        policy: BoundaryPolicy,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let values: Vec<T> = (0..shape.len())
            .map(|idx| {
                let [i, j, k] = shape.coords(idx);
                f(i, j, k)
            })
            .collect();
        Self::from_interior(shape, halo, policy, &values).expect("length matches shape")
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn halo(&self) -> usize {
        self.halo
    }

    pub fn policy(&self) -> BoundaryPolicy {
        self.policy
    }

    /// Halo width along each axis (zero on inactive axes).
    pub fn axis_halo(&self) -> [usize; 3] {
        self.pads
    }

    /// Extents of the padded array.
    pub fn padded_dims(&self) -> [usize; 3] {
        self.padded
    }

    /// The whole padded array, scan order.
    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Storage index of interior point `(i, j, k)`.
    #[inline]
    pub fn padded_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i + self.pads[0])
            + (j + self.pads[1]) * self.padded[0]
            + (k + self.pads[2]) * self.padded[0] * self.padded[1]
    }

    /// Storage index of a point given relative to the interior origin; may lie in the halo.
    #[inline]
    pub fn offset_index(&self, i: isize, j: isize, k: isize) -> usize {
        let x = (i + self.pads[0] as isize) as usize;
        let y = (j + self.pads[1] as isize) as usize;
        let z = (k + self.pads[2] as isize) as usize;
        x + y * self.padded[0] + z * self.padded[0] * self.padded[1]
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.padded_index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: T) {
        let p = self.padded_index(i, j, k);
        self.data[p] = v;
    }

    /// Value at a possibly out-of-domain coordinate, read from the padded array.
    pub fn get_padded(&self, i: isize, j: isize, k: isize) -> T {
        self.data[self.offset_index(i, j, k)]
    }

    /// Interior values in scan order.
    pub fn interior(&self) -> Vec<T> {
        let [nx, ny, nz] = self.shape.dims();
        let mut out = Vec::with_capacity(self.shape.len());
        for k in 0..nz {
            for j in 0..ny {
                let start = self.padded_index(0, j, k);
                out.extend_from_slice(&self.data[start..start + nx]);
            }
        }
        out
    }

    /// Boundary value for interior-relative coordinate `c` (at least one component out of domain).
    fn boundary_value(&self, c: [isize; 3]) -> T {
        match self.policy {
            BoundaryPolicy::Zero => T::zero(),
            BoundaryPolicy::Constant(v) => T::from_f64_lossy(v),
            BoundaryPolicy::Periodic => {
                let dims = self.shape.dims();
                let w = |a: usize| c[a].rem_euclid(dims[a] as isize) as usize;
                self.get(w(0), w(1), w(2))
            }
        }
    }

    /// Write the boundary value into every halo cell; the interior is untouched.
    pub fn refresh_halo(&mut self) {
        HALO_REFRESHES.with(|c| c.set(c.get() + 1));
        if self.halo == 0 {
            return;
        }
        let [px, py, pz] = self.padded;
        let [hx, hy, hz] = self.pads.map(|p| p as isize);
        let [nx, ny, nz] = self.shape.dims().map(|n| n as isize);
        for z in 0..pz {
            let k = z as isize - hz;
            for y in 0..py {
                let j = y as isize - hy;
                let row_inside = (0..ny).contains(&j) && (0..nz).contains(&k);
                for x in 0..px {
                    let i = x as isize - hx;
                    if row_inside && (0..nx).contains(&i) {
                        continue;
                    }
                    let v = self.boundary_value([i, j, k]);
                    self.data[x + y * px + z * px * py] = v;
                }
            }
        }
    }

    /// Fill the interior with uniform values in `[lo, hi]`, then refresh the halo.
    ///
    /// The generator is ChaCha8 keyed by `seed` with stream `stream`, so every
    /// field of a set gets an independent, reproducible sequence.
    pub fn fill_random(&mut self, lo: f64, hi: f64, seed: u64, stream: u64) -> Result<()> {
        if !(lo <= hi) {
            return Err(Error::Argument(format!(
                "random range requires lo <= hi, got [{lo}, {hi}]"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let dist = Uniform::new_inclusive(lo, hi);
        let [nx, ny, nz] = self.shape.dims();
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let v = dist.sample(&mut rng).clamp(lo, hi);
                    self.set(i, j, k, T::from_f64_lossy(v));
                }
            }
        }
        self.refresh_halo();
        Ok(())
    }

    /// A field with the same layout, zero-filled.
    pub fn zeros_like(&self) -> Self {
        Self::new(self.shape, self.halo, self.policy)
    }

    /// Interior maximum absolute value.
    pub fn max_abs(&self) -> T {
        self.interior()
            .into_iter()
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// Ordered collection of fields sharing shape, halo and precision.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSet<T> {
    fields: Vec<PaddedField<T>>,
    names: Vec<String>,
}

impl<T: Real> FieldSet<T> {
    /// Zero-initialized fields, one per name.
    pub fn new<S: AsRef<str>>(
        names: &[S],
        shape: Shape,
        halo: usize,
        policy: BoundaryPolicy,
    ) -> Self {
        Self {
            fields: names
                .iter()
                .map(|_| PaddedField::new(shape, halo, policy))
                .collect(),
            names: names.iter().map(|n| n.as_ref().to_string()).collect(),
        }
    }

    pub fn from_fields(fields: Vec<PaddedField<T>>, names: Vec<String>) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::Argument(
                "a field set needs at least one field".into(),
            ));
        }
        if names.len() != fields.len() {
            return Err(Error::Argument(format!(
                "{} names for {} fields",
                names.len(),
                fields.len()
            )));
        }
        let first = &fields[0];
        for f in &fields[1..] {
            if f.shape() != first.shape() || f.halo() != first.halo() {
                return Err(Error::Argument(
                    "all fields of a set must share shape and halo".into(),
                ));
            }
        }
        Ok(Self { fields, names })
    }

    pub fn single(field: PaddedField<T>, name: &str) -> Self {
        Self {
            fields: vec![field],
            names: vec![name.to_string()],
        }
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn shape(&self) -> Shape {
        self.fields[0].shape()
    }

    pub fn halo(&self) -> usize {
        self.fields[0].halo()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn fields(&self) -> &[PaddedField<T>] {
        &self.fields
    }

    pub fn field(&self, j: usize) -> &PaddedField<T> {
        &self.fields[j]
    }

    pub fn field_mut(&mut self, j: usize) -> &mut PaddedField<T> {
        &mut self.fields[j]
    }

    pub fn into_fields(self) -> Vec<PaddedField<T>> {
        self.fields
    }

    pub fn refresh_halo(&mut self) {
        for f in &mut self.fields {
            f.refresh_halo();
        }
    }

    /// Randomize every field; field `j` uses generator stream `j`.
    pub fn fill_random(&mut self, lo: f64, hi: f64, seed: u64) -> Result<()> {
        for (j, f) in self.fields.iter_mut().enumerate() {
            f.fill_random(lo, hi, seed, j as u64)?;
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            fields: self.fields.iter().map(|f| f.zeros_like()).collect(),
            names: self.names.clone(),
        }
    }
}
