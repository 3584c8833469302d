//! The gather / linear stage / combine pipeline.
//!
//! Every linear stencil stage of a problem is a row of a coefficient matrix
//! `A` (`n_s x n_k`) over a flattened `(2r+1)^d` footprint. At each point the
//! neighbourhoods of all `n_f` fields are gathered into `B` (`n_k x n_f`),
//! `Q = A B` is accumulated with `k` outermost, and per-field combiners turn
//! `Q` into the `n_f` outputs.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::real::{DType, Real};
use crate::stencil::StencilKernel;
use crate::tensor::FieldSet;

/// Offsets of the full `(2r+1)^d` box in scan order: x fastest, then y, then z.
pub fn footprint_offsets(ndim: usize, radius: usize) -> Vec<[i32; 3]> {
    let r = radius as i32;
    let span = |a: usize| if a < ndim { -r..=r } else { 0..=0 };
    let mut out = Vec::new();
    for z in span(2) {
        for y in span(1) {
            for x in span(0) {
                out.push([x, y, z]);
            }
        }
    }
    out
}

/// One row of the coefficient matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSpec {
    pub label: String,
    pub kernel: StencilKernel,
}

/// Dense `n_s x n_k` matrix of stencil coefficients over a box footprint.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    ndim: usize,
    radius: usize,
    rows: Vec<RowSpec>,
    offsets: Vec<[i32; 3]>,
    entries: Vec<f64>,
}

impl CoefficientMatrix {
    /// Lay out `rows` over the smallest box footprint containing all of them
    /// (or over `radius` when given and large enough).
    pub fn from_rows(ndim: usize, radius: Option<usize>, rows: Vec<RowSpec>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Argument(
                "coefficient matrix needs at least one row".into(),
            ));
        }
        let mut r = 0;
        for row in &rows {
            if row.kernel.ndim() > ndim {
                return Err(Error::Argument(format!(
                    "row '{}' is {}-D in a {ndim}-D matrix",
                    row.label,
                    row.kernel.ndim()
                )));
            }
            if let Ok(kr) = row.kernel.radius() {
                r = r.max(kr);
            }
        }
        if let Some(given) = radius {
            if given < r {
                return Err(Error::Config(format!(
                    "footprint radius {given} smaller than stencil radius {r}"
                )));
            }
            r = given;
        }
        let offsets = footprint_offsets(ndim, r);
        let n_k = offsets.len();
        let mut entries = vec![0.0; rows.len() * n_k];
        let rr = r as i32;
        let dims = |a: usize| if a < ndim { 2 * rr + 1 } else { 1 };
        for (i, row) in rows.iter().enumerate() {
            for t in row.kernel.taps() {
                let [x, y, z] = t.offset;
                let sx = if ndim > 0 { x + rr } else { 0 };
                let sy = if ndim > 1 { y + rr } else { 0 };
                let sz = if ndim > 2 { z + rr } else { 0 };
                let k = (sx + sy * dims(0) + sz * dims(0) * dims(1)) as usize;
                entries[i * n_k + k] = t.coeff;
            }
        }
        Ok(Self {
            ndim,
            radius: r,
            rows,
            offsets,
            entries,
        })
    }

    /// Convenience form of [`CoefficientMatrix::from_rows`].
    pub fn from_kernels<S: Into<String>>(
        ndim: usize,
        rows: impl IntoIterator<Item = (S, StencilKernel)>,
    ) -> Result<Self> {
        Self::from_rows(
            ndim,
            None,
            rows.into_iter()
                .map(|(l, k)| RowSpec {
                    label: l.into(),
                    kernel: k,
                })
                .collect(),
        )
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// `n_s`
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// `n_k`
    pub fn n_cols(&self) -> usize {
        self.offsets.len()
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.n_cols() + col]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn rows(&self) -> &[RowSpec] {
        &self.rows
    }

    pub fn row_label(&self, row: usize) -> &str {
        &self.rows[row].label
    }

    pub fn row_index(&self, label: &str) -> Option<usize> {
        self.rows.iter().position(|r| r.label == label)
    }

    /// Footprint offsets, one per column.
    pub fn offsets(&self) -> &[[i32; 3]] {
        &self.offsets
    }

    pub fn nonzeros(&self) -> usize {
        self.entries.iter().filter(|&&a| a != 0.0).count()
    }
}

/// `B`: the gathered `n_k x n_f` neighbourhood of one point, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GatheredBlock<T> {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<T>,
    pub center: [usize; 3],
}

impl<T: Real> GatheredBlock<T> {
    pub fn get(&self, row: usize, col: usize) -> T {
        self.entries[row * self.cols + col]
    }
}

/// Storage-index deltas of a footprint, valid for every field of `fields`.
pub(crate) fn footprint_deltas<T: Real>(fields: &FieldSet<T>, offsets: &[[i32; 3]]) -> Vec<isize> {
    let [px, py, _] = fields.field(0).padded_dims();
    offsets
        .iter()
        .map(|&[x, y, z]| x as isize + y as isize * px as isize + z as isize * (px * py) as isize)
        .collect()
}

/// Gather `B` around an interior `center` with footprint radius `r` in `ndim` dimensions.
pub fn gather<T: Real>(
    fields: &FieldSet<T>,
    center: [usize; 3],
    r: usize,
    ndim: usize,
) -> Result<GatheredBlock<T>> {
    let shape = fields.shape();
    shape.linear_index(center[0], center[1], center[2])?;
    if fields.halo() < r {
        return Err(Error::Config(format!(
            "halo {} smaller than gather radius {r}",
            fields.halo()
        )));
    }
    if ndim > shape.ndim() {
        return Err(Error::Config(format!(
            "{ndim}-D footprint on a {}-D field set",
            shape.ndim()
        )));
    }
    let offsets = footprint_offsets(ndim, r);
    let deltas = footprint_deltas(fields, &offsets);
    let n_f = fields.len();
    let base = fields
        .field(0)
        .padded_index(center[0], center[1], center[2]) as isize;
    let mut entries = vec![T::zero(); offsets.len() * n_f];
    for (k, &d) in deltas.iter().enumerate() {
        for (j, f) in fields.fields().iter().enumerate() {
            entries[k * n_f + j] = f.data()[(base + d) as usize];
        }
    }
    Ok(GatheredBlock {
        rows: offsets.len(),
        cols: n_f,
        entries,
        center,
    })
}

/// `Q = A B` in the loop order of the reference algorithm: `k` outermost, then
/// rows, then columns, with the column loop split into blocks of `col_block`.
///
/// `a` is dense row-major `n_s x n_k`.
pub fn linear_stage<T: Real>(
    a: &[T],
    n_s: usize,
    b: &GatheredBlock<T>,
    col_block: usize,
) -> Result<Vec<T>> {
    let n_k = b.rows;
    let n_f = b.cols;
    if a.len() != n_s * n_k {
        return Err(Error::Argument(format!(
            "A has {} entries, expected {n_s} x {n_k}",
            a.len()
        )));
    }
    let col_block = col_block.max(1);
    let mut q = vec![T::zero(); n_s * n_f];
    let mut c0 = 0;
    while c0 < n_f {
        let c1 = (c0 + col_block).min(n_f);
        for k in 0..n_k {
            for i in 0..n_s {
                let aik = a[i * n_k + k];
                for j in c0..c1 {
                    q[i * n_f + j] = q[i * n_f + j] + aik * b.entries[k * n_f + j];
                }
            }
        }
        c0 = c1;
    }
    Ok(q)
}

/// Read-only view of `Q` (`n_s x n_f`, row-major).
#[derive(Clone, Copy)]
pub struct QView<'a, T> {
    data: &'a [T],
    n_fields: usize,
}

impl<'a, T: Real> QView<'a, T> {
    pub fn new(data: &'a [T], n_fields: usize) -> Self {
        Self { data, n_fields }
    }

    #[inline]
    pub fn get(&self, row: usize, field: usize) -> T {
        self.data[row * self.n_fields + field]
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.n_fields
    }

    pub fn n_fields(&self) -> usize {
        self.n_fields
    }
}

/// The nonlinear stage: maps `Q` at one point to the `n_f` outputs.
pub trait Combiner<T: Real>: Send + Sync {
    fn name(&self) -> &str;

    /// `(row, field)` entries of `Q` this combiner reads.
    fn uses(&self, n_rows: usize, n_fields: usize) -> Vec<(usize, usize)>;

    fn eval(&self, q: QView<'_, T>, center: [usize; 3], out: &mut [T]);

    /// Floating-point operations per point, for intensity estimates.
    fn flops(&self) -> usize {
        0
    }
}

/// `out[j] = Q[row][j]`
#[derive(Debug, Clone, Copy)]
pub struct PassThrough {
    pub row: usize,
}

impl<T: Real> Combiner<T> for PassThrough {
    fn name(&self) -> &str {
        "pass-through"
    }

    fn uses(&self, _n_rows: usize, n_fields: usize) -> Vec<(usize, usize)> {
        (0..n_fields).map(|j| (self.row, j)).collect()
    }

    fn eval(&self, q: QView<'_, T>, _center: [usize; 3], out: &mut [T]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = q.get(self.row, j);
        }
    }
}

/// `out[j] = max_i Q[i][j]`; paired with identity-shifted rows this is a max filter.
#[derive(Debug, Clone, Copy, Default)]
pub struct MaxOverRows;

impl<T: Real> Combiner<T> for MaxOverRows {
    fn name(&self) -> &str {
        "max"
    }

    fn uses(&self, n_rows: usize, n_fields: usize) -> Vec<(usize, usize)> {
        (0..n_rows)
            .flat_map(|i| (0..n_fields).map(move |j| (i, j)))
            .collect()
    }

    fn eval(&self, q: QView<'_, T>, _center: [usize; 3], out: &mut [T]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = (0..q.n_rows())
                .map(|i| q.get(i, j))
                .fold(T::neg_infinity(), T::max);
        }
    }

    fn flops(&self) -> usize {
        0
    }
}

/// Coefficient matrix whose rows are unit kernels at every footprint offset.
pub fn shifted_identity_matrix(ndim: usize, radius: usize) -> Result<CoefficientMatrix> {
    let rows = footprint_offsets(ndim, radius)
        .into_iter()
        .map(|o| {
            Ok(RowSpec {
                label: format!("shift{o:?}"),
                kernel: StencilKernel::new(ndim, &[o], &[1.0])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CoefficientMatrix::from_rows(ndim, Some(radius), rows)
}

/// One multiply-accumulate instruction group: `q[row][j] += a * b[k][j]` for
/// every field `j` set in `mask`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MacOp<T> {
    pub k: u32,
    pub row: u32,
    pub a: T,
    pub mask: u64,
}

/// One multiply-accumulate with flat indices into a gathered block and into `Q`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Mac<T> {
    pub b: u32,
    pub q: u32,
    pub a: T,
}

/// Coefficient matrix + combiner, ready to execute.
#[derive(Clone)]
pub struct FusedKernel<T: Real> {
    matrix: Arc<CoefficientMatrix>,
    a: Arc<[T]>,
    combiner: Arc<dyn Combiner<T>>,
    n_fields: usize,
    used: Vec<u64>,
    pruned: bool,
    ops: Arc<[MacOp<T>]>,
}

impl<T: Real> fmt::Debug for FusedKernel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FusedKernel")
            .field("n_s", &self.n_rows())
            .field("n_k", &self.n_cols())
            .field("n_f", &self.n_fields)
            .field("combiner", &self.combiner.name())
            .field("pruned", &self.pruned)
            .field("macs", &self.mac_count())
            .finish()
    }
}

impl<T: Real> FusedKernel<T> {
    /// An unpruned kernel over `n_fields` fields.
    pub fn new(
        matrix: CoefficientMatrix,
        combiner: Arc<dyn Combiner<T>>,
        n_fields: usize,
    ) -> Result<Self> {
        if n_fields == 0 || n_fields > 64 {
            return Err(Error::Argument(format!(
                "field count {n_fields} not in 1..=64"
            )));
        }
        let n_s = matrix.n_rows();
        let mut used = vec![0u64; n_s];
        for (row, field) in combiner.uses(n_s, n_fields) {
            if row >= n_s || field >= n_fields {
                return Err(Error::Argument(format!(
                    "combiner '{}' reads Q[{row}][{field}] outside {n_s} x {n_fields}",
                    combiner.name()
                )));
            }
            used[row] |= 1 << field;
        }
        let a: Arc<[T]> = matrix
            .entries()
            .iter()
            .map(|&v| T::from_f64_lossy(v))
            .collect();
        let mut kernel = Self {
            matrix: Arc::new(matrix),
            a,
            combiner,
            n_fields,
            used,
            pruned: false,
            ops: Arc::from(Vec::new()),
        };
        kernel.ops = kernel.build_ops().into();
        Ok(kernel)
    }

    fn all_fields(&self) -> u64 {
        if self.n_fields == 64 {
            u64::MAX
        } else {
            (1u64 << self.n_fields) - 1
        }
    }

    fn build_ops(&self) -> Vec<MacOp<T>> {
        let n_s = self.n_rows();
        let n_k = self.n_cols();
        let mut ops = Vec::new();
        for k in 0..n_k {
            for i in 0..n_s {
                let a = self.a[i * n_k + k];
                let mask = if self.pruned {
                    if a == T::zero() {
                        continue;
                    }
                    self.used[i]
                } else {
                    self.all_fields()
                };
                if mask != 0 {
                    ops.push(MacOp {
                        k: k as u32,
                        row: i as u32,
                        a,
                        mask,
                    });
                }
            }
        }
        ops
    }

    /// Drop multiply-accumulates with a zero coefficient or whose `(row, field)`
    /// product is never read by the combiner. Outputs are unchanged.
    pub fn prune(mut self) -> Self {
        self.pruned = true;
        self.ops = self.build_ops().into();
        self
    }

    /// Footprint columns that some multiply-accumulate reads, ascending.
    pub fn live_columns(&self) -> Vec<usize> {
        if !self.pruned {
            return (0..self.n_cols()).collect();
        }
        let mut live = vec![false; self.n_cols()];
        for op in self.ops.iter() {
            live[op.k as usize] = true;
        }
        (0..self.n_cols()).filter(|&k| live[k]).collect()
    }

    pub fn is_pruned(&self) -> bool {
        self.pruned
    }

    pub fn matrix(&self) -> &CoefficientMatrix {
        &self.matrix
    }

    pub fn combiner(&self) -> &dyn Combiner<T> {
        self.combiner.as_ref()
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.n_rows()
    }

    pub fn n_cols(&self) -> usize {
        self.matrix.n_cols()
    }

    pub fn n_fields(&self) -> usize {
        self.n_fields
    }

    pub fn radius(&self) -> usize {
        self.matrix.radius()
    }

    pub fn ndim(&self) -> usize {
        self.matrix.ndim()
    }

    /// Fields bitmask of `Q` row `i` read by the combiner.
    pub fn used_mask(&self, row: usize) -> u64 {
        self.used[row]
    }

    /// Multiply-accumulates per point.
    pub fn mac_count(&self) -> usize {
        self.ops
            .iter()
            .map(|op| op.mask.count_ones() as usize)
            .sum()
    }

    /// The instruction list restricted to fields `cols`, one entry per
    /// multiply-accumulate, in replay order. Footprint column `k` is read from
    /// block row `slot[k]`.
    pub(crate) fn macs(&self, cols: Range<usize>, slot: &[u32]) -> Vec<Mac<T>> {
        let n_f = self.n_fields as u32;
        let mut out = Vec::new();
        for op in self.ops.iter() {
            for j in cols.clone() {
                if op.mask >> j & 1 == 1 {
                    out.push(Mac {
                        b: slot[op.k as usize] * n_f + j as u32,
                        q: op.row * n_f + j as u32,
                        a: op.a,
                    });
                }
            }
        }
        out
    }

    /// Replay a list from [`FusedKernel::macs`] over `points` blocks. Each
    /// `Q` entry sees its terms in the same order as [`FusedKernel::accumulate`].
    #[inline]
    pub(crate) fn replay(
        &self,
        macs: &[Mac<T>],
        b: &[T],
        b_len: usize,
        q: &mut [T],
        points: usize,
    ) {
        let q_len = self.n_rows() * self.n_fields;
        for (bp, qp) in b
            .chunks_exact(b_len)
            .zip(q.chunks_exact_mut(q_len))
            .take(points)
        {
            for m in macs {
                let qi = &mut qp[m.q as usize];
                *qi = *qi + m.a * bp[m.b as usize];
            }
        }
    }

    /// Accumulate `Q += A B` for `points` gathered blocks, restricted to field
    /// columns `cols`. `b` and `q` hold one block per point back to back.
    ///
    /// With `unrolled` the precomputed instruction list is replayed; otherwise
    /// the dense matrix is walked and tested entry by entry. Both visit
    /// `(k, i)` in the same order, so the sums are identical.
    #[inline]
    pub(crate) fn accumulate(
        &self,
        b: &[T],
        q: &mut [T],
        points: usize,
        cols: Range<usize>,
        unrolled: bool,
    ) {
        let n_f = self.n_fields;
        let n_k = self.n_cols();
        let n_s = self.n_rows();
        let b_len = n_k * n_f;
        let q_len = n_s * n_f;
        let col_mask = if cols.end - cols.start >= 64 {
            u64::MAX
        } else {
            ((1u64 << (cols.end - cols.start)) - 1) << cols.start
        };
        let mut apply = |k: usize, i: usize, a: T, mask: u64| {
            let mask = mask & col_mask;
            if mask == 0 {
                return;
            }
            for p in 0..points {
                let bk = &b[p * b_len + k * n_f..p * b_len + (k + 1) * n_f];
                let qi = &mut q[p * q_len + i * n_f..p * q_len + (i + 1) * n_f];
                let mut m = mask;
                while m != 0 {
                    let j = m.trailing_zeros() as usize;
                    qi[j] = qi[j] + a * bk[j];
                    m &= m - 1;
                }
            }
        };
        if unrolled {
            for op in self.ops.iter() {
                apply(op.k as usize, op.row as usize, op.a, op.mask);
            }
        } else {
            let all = self.all_fields();
            for k in 0..n_k {
                for i in 0..n_s {
                    let a = self.a[i * n_k + k];
                    if self.pruned {
                        if a == T::zero() {
                            continue;
                        }
                        apply(k, i, a, self.used[i]);
                    } else {
                        apply(k, i, a, all);
                    }
                }
            }
        }
    }

    /// Evaluate the full pipeline at one point from a gathered block.
    pub fn eval_block(&self, b: &GatheredBlock<T>, out: &mut [T]) -> Result<()> {
        if b.rows != self.n_cols() || b.cols != self.n_fields {
            return Err(Error::Argument(format!(
                "block is {} x {}, kernel expects {} x {}",
                b.rows,
                b.cols,
                self.n_cols(),
                self.n_fields
            )));
        }
        let mut q = vec![T::zero(); self.n_rows() * self.n_fields];
        self.accumulate(&b.entries, &mut q, 1, 0..self.n_fields, true);
        self.combiner
            .eval(QView::new(&q, self.n_fields), b.center, out);
        Ok(())
    }
}

/// FLOPs per byte of one ideal read and write of every field at a point.
pub fn operational_intensity<T: Real>(kernel: &FusedKernel<T>, dtype: DType) -> f64 {
    let flops = 2 * kernel.mac_count() + kernel.combiner().flops();
    let bytes = 2 * kernel.n_fields() * dtype.bytes();
    flops as f64 / bytes as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stencil::{central_difference, identity_kernel, StencilKernel};
    use crate::tensor::{BoundaryPolicy, PaddedField, Shape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn footprint_order_is_x_fastest() {
        let o = footprint_offsets(3, 1);
        assert_eq!(o.len(), 27);
        assert_eq!(o[0], [-1, -1, -1]);
        assert_eq!(o[1], [0, -1, -1]);
        assert_eq!(o[3], [-1, 0, -1]);
        assert_eq!(o[9], [-1, -1, 0]);
        assert_eq!(footprint_offsets(1, 0), vec![[0, 0, 0]]);
    }

    #[test]
    fn gather_examples() {
        let shape = Shape::d1(4);
        let f =
            PaddedField::<f64>::from_interior(shape, 1, BoundaryPolicy::Zero, &[1., 2., 3., 4.])
                .unwrap();
        let g =
            PaddedField::<f64>::from_interior(shape, 1, BoundaryPolicy::Zero, &[5., 6., 7., 8.])
                .unwrap();
        let set = FieldSet::from_fields(vec![f, g], vec!["f".into(), "g".into()]).unwrap();
        let b = gather(&set, [1, 0, 0], 1, 1).unwrap();
        assert_eq!((b.rows, b.cols), (3, 2));
        assert_eq!(b.entries, [1., 5., 2., 6., 3., 7.]);
        let b0 = gather(&set, [1, 0, 0], 0, 1).unwrap();
        assert_eq!(b0.entries, [2., 6.]);
        assert!(matches!(
            gather(&set, [4, 0, 0], 1, 1),
            Err(Error::Index { .. })
        ));
        assert!(matches!(
            gather(&set, [0, 0, 0], 2, 1),
            Err(Error::Config(_))
        ));

        let names: Vec<String> = (0..8).map(|i| format!("f{i}")).collect();
        let big = FieldSet::<f64>::new(&names, Shape::d3(4, 4, 4), 3, BoundaryPolicy::Periodic);
        let b = gather(&big, [0, 0, 0], 3, 3).unwrap();
        assert_eq!((b.rows, b.cols, b.entries.len()), (343, 8, 2744));
    }

    /// Independent reference: plain triple loop, `i, j` outer and `k` inner.
    fn naive_matmul(a: &[f64], n_s: usize, b: &[f64], n_k: usize, n_f: usize) -> Vec<f64> {
        let mut q = vec![0.0; n_s * n_f];
        for i in 0..n_s {
            for j in 0..n_f {
                let mut acc = 0.0;
                for k in 0..n_k {
                    acc += a[i * n_k + k] * b[k * n_f + j];
                }
                q[i * n_f + j] = acc;
            }
        }
        q
    }

    fn block(rows: usize, cols: usize, entries: Vec<f64>) -> GatheredBlock<f64> {
        GatheredBlock {
            rows,
            cols,
            entries,
            center: [0; 3],
        }
    }

    #[test]
    fn linear_stage_examples() {
        let b = block(2, 2, vec![5., 6., 7., 8.]);
        assert_eq!(
            linear_stage(&[1., 2., 3., 4.], 2, &b, 1).unwrap(),
            [19., 22., 43., 50.]
        );
        assert_eq!(
            linear_stage(&[1., 0., 0., 1.], 2, &b, 2).unwrap(),
            b.entries
        );
        assert!(linear_stage(&[1., 2., 3.], 2, &b, 1).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: Vec<f64> = (0..7 * 343).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = block(
            343,
            8,
            (0..343 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let oracle = naive_matmul(&a, 7, &b.entries, 343, 8);
        for cb in [1, 2, 4, 8] {
            let q = linear_stage(&a, 7, &b, cb).unwrap();
            for (x, y) in q.iter().zip(&oracle) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    fn two_row_kernel(pruned: bool) -> FusedKernel<f64> {
        // A = [[0, 1], [0, 0]] on a two-point footprint
        let m = CoefficientMatrix {
            ndim: 1,
            radius: 0,
            rows: vec![
                RowSpec {
                    label: "r0".into(),
                    kernel: identity_kernel(1),
                },
                RowSpec {
                    label: "r1".into(),
                    kernel: identity_kernel(1),
                },
            ],
            offsets: vec![[0, 0, 0], [1, 0, 0]],
            entries: vec![0.0, 1.0, 0.0, 0.0],
        };
        let k = FusedKernel::new(m, Arc::new(PassThrough { row: 0 }), 3).unwrap();
        if pruned {
            k.prune()
        } else {
            k
        }
    }

    #[test]
    fn prune_counts() {
        assert_eq!(two_row_kernel(false).mac_count(), 4 * 3);
        assert_eq!(two_row_kernel(true).mac_count(), 3);

        let lap = central_difference(2, 2, 0, 1.0, 1).unwrap();
        let m = CoefficientMatrix::from_kernels(1, [("lap", lap)]).unwrap();
        let dense =
            StencilKernel::new(1, &[[-1, 0, 0], [0, 0, 0], [1, 0, 0]], &[1.0, 2.0, 3.0]).unwrap();
        let md = CoefficientMatrix::from_kernels(1, [("g", dense)]).unwrap();
        let k: FusedKernel<f64> =
            FusedKernel::new(md, Arc::new(PassThrough { row: 0 }), 2).unwrap();
        let before = k.mac_count();
        assert_eq!(k.prune().mac_count(), before);
        assert_eq!(m.nonzeros(), 3);
    }

    #[test]
    fn pruned_and_unpruned_blocks_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = block(2, 3, (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let mut o1 = [0.0; 3];
        let mut o2 = [0.0; 3];
        two_row_kernel(false).eval_block(&b, &mut o1).unwrap();
        two_row_kernel(true).eval_block(&b, &mut o2).unwrap();
        assert_eq!(o1, o2);
        assert_eq!(o1, [b.get(1, 0), b.get(1, 1), b.get(1, 2)]);
    }

    #[test]
    fn combiner_out_of_range_is_rejected() {
        let m = CoefficientMatrix::from_kernels(1, [("id", identity_kernel(1))]).unwrap();
        let r = FusedKernel::<f64>::new(m, Arc::new(PassThrough { row: 1 }), 1);
        assert!(matches!(r, Err(Error::Argument(_))));
    }

    #[test]
    fn intensity_of_identity_copy() {
        let m = CoefficientMatrix::from_kernels(1, [("id", identity_kernel(1))]).unwrap();
        let k = FusedKernel::<f64>::new(m, Arc::new(PassThrough { row: 0 }), 1)
            .unwrap()
            .prune();
        assert_eq!(operational_intensity(&k, DType::Fp64), 0.125);
        assert_eq!(operational_intensity(&k, DType::Fp32), 0.25);

        let g = StencilKernel::new(1, &[[-1, 0, 0], [1, 0, 0]], &[1.0, 1.0]).unwrap();
        let m2 = CoefficientMatrix::from_kernels(1, [("g", g)]).unwrap();
        let k2 = FusedKernel::<f64>::new(m2, Arc::new(PassThrough { row: 0 }), 1)
            .unwrap()
            .prune();
        assert_eq!(k2.mac_count(), 2 * k.mac_count());
        assert_eq!(operational_intensity(&k2, DType::Fp64), 2.0 * 0.125);
    }
}
