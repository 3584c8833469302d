//! Tiled execution of fused kernels.
//!
//! Two strategies are provided. `Direct` walks each tile point by point and
//! reads neighbourhoods straight from the padded fields, leaving reuse to the
//! hardware caches. `Streaming` stages the tile's footprint in an explicit
//! per-worker buffer: a ring of `tau_z` planes of `(tau_x+2r)(tau_y+2r)`
//! elements plus one prefetch plane, advanced along z by swapping the freshly
//! filled prefetch plane into the oldest ring slot. Fields are staged
//! `columns_per_pass` at a time and `Q` is accumulated across passes.
//!
//! Both strategies accumulate `Q` in the same order, so their outputs agree
//! bit for bit with each other and with the unfused reference.

use std::collections::HashMap;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{footprint_deltas, footprint_offsets, FusedKernel, Mac, QView};
use crate::harness::profile::MachineProfile;
use crate::real::{DType, Real};
use crate::tensor::{FieldSet, PaddedField, Shape};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Direct,
    Streaming,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Direct => "direct",
            Strategy::Streaming => "streaming",
        }
    }
}

/// Whether the per-point multiply-accumulate loop runs from a precomputed,
/// straight-line instruction list or walks the dense matrix.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "lowercase")]
pub enum MacUnroll {
    #[default]
    Full,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TilePlan {
    pub tau: [usize; 3],
    #[serde(default)]
    pub strategy: Strategy,
    /// Outputs computed together per work item (element-wise unrolling).
    #[serde(default = "one")]
    pub outputs_per_item: usize,
    #[serde(default)]
    pub mac_unroll: MacUnroll,
    /// Fields staged together per pass (also the column block of `Q = A B`).
    #[serde(default = "four")]
    pub columns_per_pass: usize,
}

fn one() -> usize {
    1
}

fn four() -> usize {
    4
}

impl TilePlan {
    pub fn direct(tau: [usize; 3]) -> Self {
        Self {
            tau,
            strategy: Strategy::Direct,
            outputs_per_item: 1,
            mac_unroll: MacUnroll::Full,
            columns_per_pass: 4,
        }
    }

    pub fn streaming(tau: [usize; 3], columns_per_pass: usize) -> Self {
        Self {
            strategy: Strategy::Streaming,
            columns_per_pass,
            ..Self::direct(tau)
        }
    }

    /// Structural checks that do not depend on a budget or device.
    pub fn check(&self, n_fields: usize) -> Result<()> {
        if self.tau.contains(&0) {
            return Err(Error::Config(format!(
                "tile extents must be positive: {:?}",
                self.tau
            )));
        }
        if self.outputs_per_item == 0 {
            return Err(Error::Config("outputs_per_item must be at least 1".into()));
        }
        if self.columns_per_pass == 0 || self.columns_per_pass > n_fields {
            return Err(Error::Config(format!(
                "columns_per_pass {} not in 1..={n_fields}",
                self.columns_per_pass
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferBudget {
    pub max_tile_buffer_bytes: usize,
}

impl BufferBudget {
    pub fn new(bytes: usize) -> Result<Self> {
        if bytes == 0 {
            return Err(Error::Config("buffer budget must be positive".into()));
        }
        Ok(Self {
            max_tile_buffer_bytes: bytes,
        })
    }

    pub fn kib(kib: usize) -> Self {
        Self {
            max_tile_buffer_bytes: kib * 1024,
        }
    }

    pub fn from_profile(p: &MachineProfile) -> Self {
        Self {
            max_tile_buffer_bytes: p.buffer_bytes().max(1),
        }
    }
}

/// An axis-aligned block of interior points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tile {
    pub origin: [usize; 3],
    pub extent: [usize; 3],
}

impl Tile {
    pub fn len(&self) -> usize {
        self.extent.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Disjoint tiles covering the interior; edge tiles are clipped.
pub fn partition_domain(shape: Shape, tau: [usize; 3]) -> Vec<Tile> {
    let dims = shape.dims();
    let tau = tau.map(|t| t.max(1));
    let mut tiles = Vec::new();
    for z in (0..dims[2]).step_by(tau[2]) {
        for y in (0..dims[1]).step_by(tau[1]) {
            for x in (0..dims[0]).step_by(tau[0]) {
                let origin = [x, y, z];
                let extent = [0, 1, 2].map(|a| tau[a].min(dims[a] - origin[a]));
                tiles.push(Tile { origin, extent });
            }
        }
    }
    tiles
}

/// Elements of the whole halo-extended input block of a tile, all fields.
pub fn working_set_elements(tau: [usize; 3], r: usize, n_f: usize) -> usize {
    n_f * tau.iter().map(|t| t + 2 * r).product::<usize>()
}

/// `(ring block, prefetch plane)` element counts of the streaming buffer.
pub fn streaming_buffer_elements(
    tau: [usize; 3],
    r: usize,
    columns_per_pass: usize,
) -> (usize, usize) {
    let plane = (tau[0] + 2 * r) * (tau[1] + 2 * r);
    (columns_per_pass * plane * tau[2], columns_per_pass * plane)
}

/// Why a plan was turned down.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection(pub String);

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Device-derived pruning rule: `tau_x` a multiple of one cache line of elements.
pub fn tau_x_multiple(profile: &MachineProfile, dtype: DType) -> usize {
    (profile.cache_line_bytes / dtype.bytes()).max(1)
}

/// Accept or reject a plan for a kernel of the given shape.
///
/// Streaming plans must fit `(block + prefetch)` in the budget. With `strict`,
/// `tau_x` must be a multiple of `cache_line / dtype` and the tile volume a
/// multiple of the SIMD width.
pub fn validate_plan<T: Real>(
    plan: &TilePlan,
    kernel: &FusedKernel<T>,
    budget: &BufferBudget,
    profile: &MachineProfile,
    strict: bool,
) -> std::result::Result<(), Rejection> {
    plan.check(kernel.n_fields())
        .map_err(|e| Rejection(e.to_string()))?;
    if plan.strategy == Strategy::Streaming {
        let rad = axis_radii(kernel.ndim(), kernel.radius());
        let (block, prefetch) = streaming_elements_per_axis(plan.tau, rad, plan.columns_per_pass);
        let bytes = (block + prefetch) * T::DTYPE.bytes();
        if bytes > budget.max_tile_buffer_bytes {
            return Err(Rejection(format!(
                "streaming buffer {bytes} B ({:.1} KiB) exceeds budget {} B",
                bytes as f64 / 1024.0,
                budget.max_tile_buffer_bytes
            )));
        }
    }
    if strict {
        let m = tau_x_multiple(profile, T::DTYPE);
        if !plan.tau[0].is_multiple_of(m) {
            return Err(Rejection(format!(
                "tau_x {} is not a multiple of cache line / element size = {}/{} = {m}",
                plan.tau[0],
                profile.cache_line_bytes,
                T::DTYPE.bytes()
            )));
        }
        let volume: usize = plan.tau.iter().product();
        if !volume.is_multiple_of(profile.simd_width) {
            return Err(Rejection(format!(
                "tile volume {volume} is not a multiple of the SIMD width {}",
                profile.simd_width
            )));
        }
    }
    Ok(())
}

fn axis_radii(ndim: usize, r: usize) -> [usize; 3] {
    [0, 1, 2].map(|a| if a < ndim { r } else { 0 })
}

fn streaming_elements_per_axis(tau: [usize; 3], rad: [usize; 3], cpp: usize) -> (usize, usize) {
    let plane = (tau[0] + 2 * rad[0]) * (tau[1] + 2 * rad[1]);
    (cpp * plane * tau[2], cpp * plane)
}

/// Circular index over `slots` ring positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RingCursor {
    head: usize,
    slots: usize,
}

impl RingCursor {
    pub fn new(slots: usize) -> Self {
        Self {
            head: 0,
            slots: slots.max(1),
        }
    }

    /// Slot holding the oldest plane.
    pub fn head(&self) -> usize {
        self.head
    }

    pub fn rotate(&mut self) -> usize {
        let old = self.head;
        self.head = (self.head + 1) % self.slots;
        old
    }
}

/// Counters from a streaming run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamStats {
    /// Tiles processed through the ring buffer.
    pub tiles_streamed: usize,
    /// Tiles whose z window was too shallow and ran the direct path.
    pub tiles_direct: usize,
    /// Field-group passes over streamed tiles.
    pub passes: usize,
    /// Elements copied into ring or prefetch planes.
    pub elements_loaded: u64,
    /// Footprint elements `n_f (tx+2r)(ty+2r)(tz+2r)` summed over streamed tiles.
    pub footprint_elements: u64,
    /// Prefetch-plane swaps into the ring.
    pub rotations: u64,
    /// Loads of an element already loaded in the same tile pass (tracked runs only).
    pub duplicate_loads: u64,
}

impl StreamStats {
    fn merge(mut self, o: StreamStats) -> Self {
        self.tiles_streamed += o.tiles_streamed;
        self.tiles_direct += o.tiles_direct;
        self.passes += o.passes;
        self.elements_loaded += o.elements_loaded;
        self.footprint_elements += o.footprint_elements;
        self.rotations += o.rotations;
        self.duplicate_loads += o.duplicate_loads;
        self
    }
}

/// Runs fused kernels over tiles on a private worker pool.
pub struct Executor {
    pool: rayon::ThreadPool,
    strict: bool,
    track_loads: bool,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor")
            .field("workers", &self.pool.current_num_threads())
            .field("strict", &self.strict)
            .finish()
    }
}

struct Ctx<'a, T: Real> {
    kernel: &'a FusedKernel<T>,
    fields: Vec<&'a PaddedField<T>>,
    /// `(slot in a gathered block, column, delta)` for every column gathered.
    /// Unrolled plans gather only the columns the kernel reads, packed.
    gather: Vec<(usize, usize, isize)>,
    /// Field groups of one pass with their multiply-accumulate lists.
    groups: Vec<(Range<usize>, Vec<Mac<T>>)>,
    /// The same lists addressed straight into the fields, for direct tiles:
    /// `(field, storage delta, Q index, coefficient)`.
    reads: Vec<Vec<(usize, isize, usize, T)>>,
    offsets: Vec<[i32; 3]>,
    rad: [usize; 3],
    plan: &'a TilePlan,
    track: bool,
}

impl Executor {
    /// `workers == 0` uses one worker per available core.
    pub fn new(workers: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
        Ok(Self {
            pool,
            strict: false,
            track_loads: false,
        })
    }

    /// Fail on non-finite outputs.
    pub fn strict(mut self, on: bool) -> Self {
        self.strict = on;
        self
    }

    /// Record per-element load counts in streaming runs.
    pub fn track_loads(mut self, on: bool) -> Self {
        self.track_loads = on;
        self
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }

    /// `out[j][i] = phi_j(A B_i)` for every interior point, with the plan's strategy.
    pub fn fused_step<T: Real>(
        &self,
        fields: &FieldSet<T>,
        kernel: &FusedKernel<T>,
        plan: &TilePlan,
    ) -> Result<FieldSet<T>> {
        let mut out = fields.zeros_like();
        self.fused_step_into(fields, kernel, plan, &mut out)?;
        Ok(out)
    }

    /// Like [`Executor::fused_step`] but writes the interior of an existing set.
    /// Halo cells of `out` are not touched.
    pub fn fused_step_into<T: Real>(
        &self,
        fields: &FieldSet<T>,
        kernel: &FusedKernel<T>,
        plan: &TilePlan,
        out: &mut FieldSet<T>,
    ) -> Result<StreamStats> {
        let ctx = self.context(fields, kernel, plan)?;
        if out.len() != fields.len() || out.shape() != fields.shape() {
            return Err(Error::Config(
                "output set does not match input layout".into(),
            ));
        }
        let tiles = partition_domain(fields.shape(), plan.tau);
        let results: Vec<(Vec<T>, StreamStats)> = self.pool.install(|| {
            tiles
                .par_iter()
                .map(|t| match plan.strategy {
                    Strategy::Direct => (direct_tile(&ctx, t), StreamStats::default()),
                    Strategy::Streaming => streaming_tile(&ctx, t),
                })
                .collect()
        });
        let n_f = fields.len();
        let mut stats = StreamStats::default();
        for (tile, (values, s)) in tiles.iter().zip(results) {
            stats = stats.merge(s);
            let n = tile.len();
            for j in 0..n_f {
                let f = out.field_mut(j);
                let mut idx = 0;
                for z in 0..tile.extent[2] {
                    for y in 0..tile.extent[1] {
                        for x in 0..tile.extent[0] {
                            let [ox, oy, oz] = tile.origin;
                            f.set(ox + x, oy + y, oz + z, values[j * n + idx]);
                            idx += 1;
                        }
                    }
                }
            }
        }
        if self.strict {
            check_finite(out)?;
        }
        Ok(stats)
    }

    pub fn run_direct<T: Real>(
        &self,
        fields: &FieldSet<T>,
        kernel: &FusedKernel<T>,
        plan: &TilePlan,
    ) -> Result<FieldSet<T>> {
        if plan.strategy != Strategy::Direct {
            return Err(Error::Config("run_direct needs a Direct plan".into()));
        }
        self.fused_step(fields, kernel, plan)
    }

    pub fn run_streaming<T: Real>(
        &self,
        fields: &FieldSet<T>,
        kernel: &FusedKernel<T>,
        plan: &TilePlan,
    ) -> Result<FieldSet<T>> {
        Ok(self.run_streaming_with_stats(fields, kernel, plan)?.0)
    }

    pub fn run_streaming_with_stats<T: Real>(
        &self,
        fields: &FieldSet<T>,
        kernel: &FusedKernel<T>,
        plan: &TilePlan,
    ) -> Result<(FieldSet<T>, StreamStats)> {
        if plan.strategy != Strategy::Streaming {
            return Err(Error::Config("run_streaming needs a Streaming plan".into()));
        }
        let mut out = fields.zeros_like();
        let stats = self.fused_step_into(fields, kernel, plan, &mut out)?;
        Ok((out, stats))
    }

    fn context<'a, T: Real>(
        &self,
        fields: &'a FieldSet<T>,
        kernel: &'a FusedKernel<T>,
        plan: &'a TilePlan,
    ) -> Result<Ctx<'a, T>> {
        plan.check(kernel.n_fields())?;
        if fields.len() != kernel.n_fields() {
            return Err(Error::Config(format!(
                "kernel expects {} fields, got {}",
                kernel.n_fields(),
                fields.len()
            )));
        }
        if kernel.ndim() > fields.shape().ndim() {
            return Err(Error::Config(format!(
                "{}-D kernel on {}-D fields",
                kernel.ndim(),
                fields.shape().ndim()
            )));
        }
        if fields.halo() < kernel.radius() {
            return Err(Error::Config(format!(
                "halo {} smaller than kernel radius {}",
                fields.halo(),
                kernel.radius()
            )));
        }
        let offsets = footprint_offsets(kernel.ndim(), kernel.radius());
        let deltas = footprint_deltas(fields, &offsets);
        let cols: Vec<usize> = match plan.mac_unroll {
            MacUnroll::Full => kernel.live_columns(),
            MacUnroll::None => (0..kernel.n_cols()).collect(),
        };
        let mut slot = vec![0u32; kernel.n_cols()];
        for (c, &k) in cols.iter().enumerate() {
            slot[k] = c as u32;
        }
        let gather: Vec<(usize, usize, isize)> = cols
            .iter()
            .enumerate()
            .map(|(c, &k)| (c, k, deltas[k]))
            .collect();
        let groups: Vec<(Range<usize>, Vec<Mac<T>>)> =
            col_blocks(kernel.n_fields(), plan.columns_per_pass)
                .map(|g| {
                    let macs = kernel.macs(g.clone(), &slot);
                    (g, macs)
                })
                .collect();
        let n_f = kernel.n_fields();
        let reads = groups
            .iter()
            .map(|(_, macs)| {
                macs.iter()
                    .map(|m| {
                        let (c, j) = (m.b as usize / n_f, m.b as usize % n_f);
                        (j, gather[c].2, m.q as usize, m.a)
                    })
                    .collect()
            })
            .collect();
        Ok(Ctx {
            kernel,
            fields: fields.fields().iter().collect(),
            gather,
            groups,
            reads,
            offsets,
            rad: axis_radii(kernel.ndim(), kernel.radius()),
            plan,
            track: self.track_loads,
        })
    }
}

fn check_finite<T: Real>(out: &FieldSet<T>) -> Result<()> {
    let shape = out.shape();
    for idx in 0..shape.len() {
        let [i, j, k] = shape.coords(idx);
        for (field, f) in out.fields().iter().enumerate() {
            if !f.get(i, j, k).is_finite() {
                return Err(Error::Numeric { field, i, j, k });
            }
        }
    }
    Ok(())
}

/// Per-worker scratch for `m` points.
struct Scratch<T> {
    b: Vec<T>,
    q: Vec<T>,
    out: Vec<T>,
}

impl<T: Real> Scratch<T> {
    fn new(kernel: &FusedKernel<T>, b_len: usize, m: usize) -> Self {
        let n_f = kernel.n_fields();
        Self {
            b: vec![T::zero(); m * b_len],
            q: vec![T::zero(); m * kernel.n_rows() * n_f],
            out: vec![T::zero(); n_f],
        }
    }
}

fn col_blocks(n_f: usize, block: usize) -> impl Iterator<Item = Range<usize>> {
    (0..n_f)
        .step_by(block.max(1))
        .map(move |c| c..(c + block.max(1)).min(n_f))
}

/// Tile outputs, field-major: `values[j * tile.len() + point]`.
fn direct_tile<T: Real>(ctx: &Ctx<'_, T>, tile: &Tile) -> Vec<T> {
    let kernel = ctx.kernel;
    let n_f = kernel.n_fields();
    let b_len = ctx.gather.len() * n_f;
    let m = ctx.plan.outputs_per_item;
    let unrolled = ctx.plan.mac_unroll == MacUnroll::Full;
    let q_len = kernel.n_rows() * n_f;
    let n = tile.len();
    let mut values = vec![T::zero(); n * n_f];
    let mut s = Scratch::new(kernel, b_len, m);
    let [ox, oy, oz] = tile.origin;
    let [tx, ty, tz] = tile.extent;
    let data: Vec<&[T]> = ctx.fields.iter().map(|f| f.data()).collect();
    let mut idx = 0;
    for z in 0..tz {
        for y in 0..ty {
            let mut x = 0;
            while x < tx {
                let count = m.min(tx - x);
                s.q[..count * q_len].fill(T::zero());
                if unrolled {
                    // read the fields in place; the group loop keeps the pass order
                    for (p, q) in s.q.chunks_exact_mut(q_len).take(count).enumerate() {
                        let base = ctx.fields[0].padded_index(ox + x + p, oy + y, oz + z) as isize;
                        for reads in &ctx.reads {
                            for &(f, d, qi, a) in reads {
                                q[qi] = q[qi] + a * data[f][(base + d) as usize];
                            }
                        }
                    }
                } else {
                    for p in 0..count {
                        let base = ctx.fields[0].padded_index(ox + x + p, oy + y, oz + z) as isize;
                        let b = &mut s.b[p * b_len..(p + 1) * b_len];
                        for &(c, _, d) in &ctx.gather {
                            let at = (base + d) as usize;
                            for (j, f) in data.iter().enumerate() {
                                b[c * n_f + j] = f[at];
                            }
                        }
                    }
                    for (cols, _) in &ctx.groups {
                        kernel.accumulate(&s.b, &mut s.q, count, cols.clone(), false);
                    }
                }
                for p in 0..count {
                    let center = [ox + x + p, oy + y, oz + z];
                    kernel.combiner().eval(
                        QView::new(&s.q[p * q_len..(p + 1) * q_len], n_f),
                        center,
                        &mut s.out,
                    );
                    for j in 0..n_f {
                        values[j * n + idx] = s.out[j];
                    }
                    idx += 1;
                }
                x += count;
            }
        }
    }
    values
}

/// Ring of staged planes for one field group.
struct PlaneRing<T> {
    slots: Vec<Vec<T>>,
    prefetch: Vec<T>,
    cursor: RingCursor,
}

fn streaming_tile<T: Real>(ctx: &Ctx<'_, T>, tile: &Tile) -> (Vec<T>, StreamStats) {
    let [rx, ry, rz] = ctx.rad;
    let window = ctx.plan.tau[2];
    let mut stats = StreamStats::default();
    if window < 2 * rz + 1 {
        stats.tiles_direct = 1;
        return (direct_tile(ctx, tile), stats);
    }
    stats.tiles_streamed = 1;
    let kernel = ctx.kernel;
    let n_f = kernel.n_fields();
    let b_len = ctx.gather.len() * n_f;
    let q_len = kernel.n_rows() * n_f;
    let unrolled = ctx.plan.mac_unroll == MacUnroll::Full;
    let m = ctx.plan.outputs_per_item;
    let [ox, oy, oz] = tile.origin;
    let [tx, ty, tz] = tile.extent;
    let (sx, sy) = (tx + 2 * rx, ty + 2 * ry);
    let plane_len = sx * sy;
    let planes = tz + 2 * rz;
    let n = tile.len();
    stats.footprint_elements = (n_f * plane_len * planes) as u64;

    // (slot, in-plane offset from the window corner, plane) per gathered column
    let local: Vec<(usize, usize, usize)> = ctx
        .gather
        .iter()
        .map(|&(c, k, _)| {
            let [dx, dy, dz] = ctx.offsets[k];
            let within = (dx + rx as i32) as usize + (dy + ry as i32) as usize * sx;
            (c, within, (dz + rz as i32) as usize)
        })
        .collect();

    let mut qstore = vec![T::zero(); n * q_len];
    let mut b = vec![T::zero(); m * b_len];
    let mut seen: HashMap<(usize, usize), u32> = HashMap::new();

    for (group, macs) in &ctx.groups {
        let g = group.len();
        stats.passes += 1;
        let mut ring = PlaneRing {
            slots: vec![vec![T::zero(); g * plane_len]; window],
            prefetch: vec![T::zero(); g * plane_len],
            cursor: RingCursor::new(window),
        };
        if ctx.track {
            seen.clear();
        }
        let mut load = |p: usize, buf: &mut [T], stats: &mut StreamStats| {
            let z = oz as isize + p as isize - rz as isize;
            for (jj, j) in group.clone().enumerate() {
                let f = ctx.fields[j];
                for yy in 0..sy {
                    let y = oy as isize + yy as isize - ry as isize;
                    let start = f.offset_index(ox as isize - rx as isize, y, z);
                    let dst = &mut buf[jj * plane_len + yy * sx..jj * plane_len + (yy + 1) * sx];
                    dst.copy_from_slice(&f.data()[start..start + sx]);
                    if ctx.track {
                        for s in start..start + sx {
                            let c = seen.entry((j, s)).or_insert(0);
                            if *c > 0 {
                                stats.duplicate_loads += 1;
                            }
                            *c += 1;
                        }
                    }
                }
            }
            stats.elements_loaded += (g * plane_len) as u64;
        };

        let initial = window.min(planes);
        for p in 0..initial {
            load(p, &mut ring.slots[p % window], &mut stats);
        }
        let mut loaded = initial;

        for zl in 0..tz {
            while loaded <= zl + 2 * rz {
                load(loaded, &mut ring.prefetch, &mut stats);
                let slot = ring.cursor.rotate();
                debug_assert_eq!(slot, loaded % window);
                std::mem::swap(&mut ring.slots[slot], &mut ring.prefetch);
                stats.rotations += 1;
                loaded += 1;
            }
            let mut point = zl * ty * tx;
            for yl in 0..ty {
                let mut xl = 0;
                while xl < tx {
                    let count = m.min(tx - xl);
                    for p in 0..count {
                        let corner = xl + p + yl * sx;
                        let bp = &mut b[p * b_len..(p + 1) * b_len];
                        for &(c, within, dz) in &local {
                            let slot = &ring.slots[(zl + dz) % window];
                            for jj in 0..g {
                                bp[c * n_f + group.start + jj] =
                                    slot[jj * plane_len + corner + within];
                            }
                        }
                    }
                    let q = &mut qstore[point * q_len..(point + count) * q_len];
                    if unrolled {
                        kernel.replay(macs, &b, b_len, q, count);
                    } else {
                        kernel.accumulate(&b, q, count, group.clone(), false);
                    }
                    point += count;
                    xl += count;
                }
            }
        }
    }

    let mut values = vec![T::zero(); n * n_f];
    let mut out = vec![T::zero(); n_f];
    for idx in 0..n {
        let x = idx % tx;
        let y = (idx / tx) % ty;
        let z = idx / (tx * ty);
        kernel.combiner().eval(
            QView::new(&qstore[idx * q_len..(idx + 1) * q_len], n_f),
            [ox + x, oy + y, oz + z],
            &mut out,
        );
        for j in 0..n_f {
            values[j * n + idx] = out[j];
        }
    }
    (values, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{CoefficientMatrix, MaxOverRows, PassThrough};
    use crate::stencil::laplacian_kernel;
    use crate::tensor::BoundaryPolicy;
    use std::sync::Arc;

    #[test]
    fn partition_examples() {
        assert_eq!(partition_domain(Shape::d3(8, 8, 8), [8, 8, 8]).len(), 1);
        let t = partition_domain(Shape::d1(10), [8, 1, 1]);
        assert_eq!(t.iter().map(|t| t.extent[0]).collect::<Vec<_>>(), [8, 2]);

        let shape = Shape::d3(7, 5, 6);
        let tiles = partition_domain(shape, [3, 2, 4]);
        let mut hits = vec![0u8; shape.len()];
        for t in &tiles {
            for z in 0..t.extent[2] {
                for y in 0..t.extent[1] {
                    for x in 0..t.extent[0] {
                        let idx = shape
                            .linear_index(t.origin[0] + x, t.origin[1] + y, t.origin[2] + z)
                            .unwrap();
                        hits[idx] += 1;
                    }
                }
            }
        }
        assert!(hits.iter().all(|&h| h == 1));
        assert_eq!(tiles.iter().map(Tile::len).sum::<usize>(), shape.len());
    }

    #[test]
    fn working_set_and_buffer_sizes() {
        assert_eq!(working_set_elements([8, 8, 8], 3, 8), 21_952);
        assert_eq!(working_set_elements([8, 8, 8], 3, 1), 2_744);
        assert_eq!(working_set_elements([4, 2, 3], 0, 5), 5 * 24);
        assert_eq!(streaming_buffer_elements([8, 8, 8], 3, 4), (6272, 784));
        let (block, pre) = streaming_buffer_elements([5, 3, 1], 0, 2);
        assert_eq!(block, pre);
    }

    #[test]
    fn ring_cursor_wraps() {
        let mut c = RingCursor::new(8);
        for _ in 0..8 {
            c.rotate();
        }
        assert_eq!(c.head(), 0);
    }

    fn lap3d() -> FusedKernel<f64> {
        let k = laplacian_kernel(3, 6, &[1.0; 3]).unwrap();
        let m = CoefficientMatrix::from_kernels(3, [("lap", k)]).unwrap();
        FusedKernel::new(m, Arc::new(PassThrough { row: 0 }), 8)
            .unwrap()
            .prune()
    }

    #[test]
    fn validate_budget_and_strict_rules() {
        let k = lap3d();
        let a100 = MachineProfile::a100();
        let budget = BufferBudget::kib(64);
        let ok = TilePlan::streaming([8, 8, 8], 4);
        assert_eq!(validate_plan(&ok, &k, &budget, &a100, false), Ok(()));
        let big = TilePlan::streaming([8, 8, 8], 8);
        assert!(validate_plan(&big, &k, &budget, &a100, false).is_err());
        let direct = TilePlan {
            columns_per_pass: 8,
            ..TilePlan::direct([64, 64, 64])
        };
        assert_eq!(validate_plan(&direct, &k, &budget, &a100, false), Ok(()));
        let narrow = TilePlan::direct([4, 8, 8]);
        let err = validate_plan(&narrow, &k, &budget, &a100, true).unwrap_err();
        assert!(err.0.contains("64/8 = 8"), "{err}");
        assert_eq!(validate_plan(&narrow, &k, &budget, &a100, false), Ok(()));
        let bad = TilePlan {
            columns_per_pass: 9,
            ..TilePlan::direct([8, 8, 8])
        };
        assert!(validate_plan(&bad, &k, &budget, &a100, false).is_err());
    }

    fn random_set(shape: Shape, n_f: usize, halo: usize, seed: u64) -> FieldSet<f64> {
        let names: Vec<String> = (0..n_f).map(|j| format!("f{j}")).collect();
        let mut s = FieldSet::new(&names, shape, halo, BoundaryPolicy::Periodic);
        s.fill_random(-1.0, 1.0, seed).unwrap();
        s
    }

    #[test]
    fn strategies_agree_bitwise_and_stream_loads_once() {
        let shape = Shape::d3(13, 11, 17);
        let fields = random_set(shape, 8, 3, 5);
        let k = lap3d();
        let exec = Executor::new(3).unwrap().track_loads(true);
        let reference = exec
            .fused_step(&fields, &k, &TilePlan::direct([64, 64, 64]))
            .unwrap();
        for plan in [
            TilePlan::direct([8, 4, 2]),
            TilePlan {
                outputs_per_item: 4,
                mac_unroll: MacUnroll::None,
                ..TilePlan::direct([5, 3, 7])
            },
            TilePlan::streaming([8, 8, 8], 4),
            TilePlan::streaming([4, 4, 7], 8),
            TilePlan {
                outputs_per_item: 3,
                ..TilePlan::streaming([6, 5, 9], 3)
            },
        ] {
            let mut out = fields.zeros_like();
            let stats = exec.fused_step_into(&fields, &k, &plan, &mut out).unwrap();
            assert_eq!(out, reference, "{plan:?}");
            if plan.strategy == Strategy::Streaming {
                assert_eq!(stats.duplicate_loads, 0);
                assert_eq!(stats.elements_loaded, stats.footprint_elements);
                assert!(stats.tiles_streamed > 0);
            }
        }
    }

    #[test]
    fn shallow_window_falls_back_to_direct() {
        let shape = Shape::d3(8, 8, 8);
        let fields = random_set(shape, 8, 3, 9);
        let k = lap3d();
        let exec = Executor::new(1).unwrap();
        let (out, stats) = exec
            .run_streaming_with_stats(&fields, &k, &TilePlan::streaming([8, 8, 4], 4))
            .unwrap();
        assert_eq!(stats.tiles_streamed, 0);
        assert_eq!(stats.tiles_direct, 2);
        assert_eq!(
            out,
            exec.fused_step(&fields, &k, &TilePlan::direct([8, 8, 8]))
                .unwrap()
        );
    }

    #[test]
    fn guard_cells_stay_untouched() {
        let shape = Shape::d3(9, 6, 5);
        let fields = random_set(shape, 8, 3, 2);
        let k = lap3d();
        let exec = Executor::new(2).unwrap();
        for plan in [
            TilePlan::direct([4, 4, 4]),
            TilePlan::streaming([8, 2, 7], 2),
        ] {
            let mut out = fields.zeros_like();
            for f in 0..8 {
                out.field_mut(f).data_mut().fill(f64::NAN);
            }
            exec.fused_step_into(&fields, &k, &plan, &mut out).unwrap();
            for f in out.fields() {
                let interior = f.interior();
                assert!(interior.iter().all(|v| v.is_finite()));
                let nan = f.data().iter().filter(|v| v.is_nan()).count();
                assert_eq!(nan, f.data().len() - interior.len());
            }
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let shape = Shape::d3(12, 10, 9);
        let fields = random_set(shape, 8, 3, 4);
        let k = lap3d();
        let plan = TilePlan::streaming([4, 4, 7], 4);
        let one = Executor::new(1)
            .unwrap()
            .fused_step(&fields, &k, &plan)
            .unwrap();
        let four = Executor::new(4)
            .unwrap()
            .fused_step(&fields, &k, &plan)
            .unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn strict_mode_reports_first_non_finite() {
        let shape = Shape::d2(4, 3);
        let mut f = crate::tensor::PaddedField::<f64>::new(shape, 1, BoundaryPolicy::Zero);
        f.set(2, 1, 0, f64::INFINITY);
        f.refresh_halo();
        let fields = FieldSet::single(f, "f");
        let m = CoefficientMatrix::from_kernels(2, [("id", crate::stencil::identity_kernel(2))])
            .unwrap();
        let k = FusedKernel::new(m, Arc::new(PassThrough { row: 0 }), 1).unwrap();
        let plan = TilePlan {
            columns_per_pass: 1,
            ..TilePlan::direct([2, 2, 1])
        };
        let err = Executor::new(1)
            .unwrap()
            .strict(true)
            .fused_step(&fields, &k, &plan)
            .unwrap_err();
        assert_eq!(
            err,
            Error::Numeric {
                field: 0,
                i: 2,
                j: 1,
                k: 0
            }
        );
        assert!(Executor::new(1)
            .unwrap()
            .fused_step(&fields, &k, &plan)
            .is_ok());
    }

    #[test]
    fn wrong_strategy_or_field_count_is_a_config_error() {
        let fields = random_set(Shape::d3(4, 4, 4), 8, 3, 1);
        let k = lap3d();
        let exec = Executor::new(1).unwrap();
        assert!(exec
            .run_direct(&fields, &k, &TilePlan::streaming([8, 8, 8], 4))
            .is_err());
        assert!(exec
            .run_streaming(&fields, &k, &TilePlan::direct([8, 8, 8]))
            .is_err());
        let fewer = random_set(Shape::d3(4, 4, 4), 2, 3, 1);
        assert!(matches!(
            exec.fused_step(
                &fewer,
                &k,
                &TilePlan {
                    columns_per_pass: 2,
                    ..TilePlan::direct([4, 4, 4])
                }
            ),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn max_filter_matches_sliding_max() {
        let shape = Shape::d2(11, 9);
        let fields = random_set(shape, 1, 2, 8);
        let m = crate::fusion::shifted_identity_matrix(2, 2).unwrap();
        let k = FusedKernel::new(m, Arc::new(MaxOverRows), 1)
            .unwrap()
            .prune();
        let plan = TilePlan {
            columns_per_pass: 1,
            ..TilePlan::direct([4, 4, 1])
        };
        let out = Executor::new(2)
            .unwrap()
            .fused_step(&fields, &k, &plan)
            .unwrap();
        let f = fields.field(0);
        for j in 0..9 {
            for i in 0..11 {
                let mut best = f64::NEG_INFINITY;
                for dy in -2..=2isize {
                    for dx in -2..=2isize {
                        let x = (i as isize + dx).rem_euclid(11) as usize;
                        let y = (j as isize + dy).rem_euclid(9) as usize;
                        best = best.max(f.get(x, y, 0));
                    }
                }
                assert_eq!(out.field(0).get(i, j, 0), best);
            }
        }
    }
}
