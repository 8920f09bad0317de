//! Poisson point patterns on a disc and Matérn type-II thinning.
//!
//! A pattern is sampled on the disc of radius `radius + guard`; statistics
//! are read from the inner disc of radius `radius` only. With `guard ≥ d`
//! every inner point sees its complete killing neighbourhood, so its
//! retention decision is the one it would have in the infinite process.

use std::f64::consts::PI;
use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub center: Point,
    pub radius: f64,
    pub guard: f64,
}

impl Window {
    /// Disc window centred at the origin.
    pub fn new(radius: f64, guard: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!("window radius must be positive, got {radius}")));
        }
        if !(guard >= 0.0 && guard.is_finite()) {
            return Err(Error::InvalidParameter(format!("guard must be non-negative, got {guard}")));
        }
        Ok(Self { center: [0.0, 0.0], radius, guard })
    }

    pub fn sampling_radius(&self) -> f64 {
        self.radius + self.guard
    }

    pub fn sampling_area(&self) -> f64 {
        PI * self.sampling_radius().powi(2)
    }

    #[inline]
    pub fn in_observation(&self, p: Point) -> bool {
        dist2(p, self.center) <= self.radius * self.radius
    }

    #[inline]
    pub fn in_sampling_region(&self, p: Point) -> bool {
        dist2(p, self.center) <= self.sampling_radius().powi(2)
    }
}

#[inline]
fn dist2(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}


/// Intensity and cell side for [`NeighborGrid::sample_ppp`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowCounts {
    intensity: f64,
    cell: f64,
}

impl RowCounts {
    pub fn new(intensity: f64, cell: f64) -> Result<Self> {
        if !(intensity >= 0.0 && intensity.is_finite() && cell > 0.0 && cell.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "grid sampler needs finite intensity >= 0 and cell > 0, got {intensity}, {cell}"
            )));
        }
        Ok(Self { intensity, cell })
    }

    pub fn cell(&self) -> f64 {
        self.cell
    }
}

/// A finite point configuration with one uniform mark per point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointPattern {
    points: Vec<Point>,
    marks: Vec<f64>,
    window: Window,
}

impl PointPattern {
    pub fn new(points: Vec<Point>, marks: Vec<f64>, window: Window) -> Result<Self> {
        if points.len() != marks.len() {
            return Err(Error::MarkLengthMismatch { points: points.len(), marks: marks.len() });
        }
        if let Some(m) = marks.iter().find(|m| !(0.0..=1.0).contains(*m)) {
            return Err(Error::InvalidParameter(format!("mark {m} outside [0, 1]")));
        }
        if let Some(p) = points.iter().find(|p| !window.in_sampling_region(**p)) {
            return Err(Error::InvalidParameter(format!("point {p:?} outside the sampling region")));
        }
        Ok(Self { points, marks, window })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn marks(&self) -> &[f64] {
        &self.marks
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Same positions, different marks.
    pub fn with_marks(&self, marks: Vec<f64>) -> Result<Self> {
        Self::new(self.points.clone(), marks, self.window)
    }
}

/// Retention flags of a Matérn type-II thinning over a parent pattern. The
/// parent carries the marks that were used.
#[derive(Debug, Clone, PartialEq)]
pub struct ThinnedPattern {
    pub parent: PointPattern,
    pub retained: Vec<bool>,
}

impl ThinnedPattern {
    pub fn retained_points(&self) -> impl Iterator<Item = Point> + '_ {
        self.parent.points.iter().zip(&self.retained).filter(|(_, &k)| k).map(|(p, _)| *p)
    }

    pub fn retained_count(&self) -> usize {
        self.retained.iter().filter(|&&k| k).count()
    }
}

/// Two uniforms on [0, 1) with 32-bit resolution from one 64-bit draw.
#[inline]
pub(crate) fn unit_pair<R: Rng + ?Sized>(rng: &mut R) -> [f64; 2] {
    const SCALE: f64 = 1.0 / 4_294_967_296.0;
    let u = rng.next_u64();
    [(u >> 32) as f64 * SCALE, (u as u32) as f64 * SCALE]
}

/// Draw `count` points uniformly in the disc of radius `radius` around the
/// origin by rejection from the bounding square.
pub(crate) fn uniform_in_disc<R: Rng + ?Sized>(rng: &mut R, radius: f64, count: usize, out: &mut Vec<Point>) {
    out.clear();
    out.reserve(count);
    let r2 = radius * radius;
    while out.len() < count {
        let x = (2.0 * rng.random::<f64>() - 1.0) * radius;
        let y = (2.0 * rng.random::<f64>() - 1.0) * radius;
        if x * x + y * y <= r2 {
            out.push([x, y]);
        }
    }
}

pub(crate) fn poisson_count<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> Result<usize> {
    if mean == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(mean).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(dist.sample(rng) as usize)
}

/// Homogeneous Poisson process on the sampling disc of `window`, with
/// i.i.d. uniform marks.
pub fn sample_ppp<R: Rng + ?Sized>(intensity: f64, window: Window, rng: &mut R) -> Result<PointPattern> {
    if !(intensity >= 0.0 && intensity.is_finite()) {
        return Err(Error::InvalidParameter(format!("intensity must be non-negative, got {intensity}")));
    }
    let n = poisson_count(rng, intensity * window.sampling_area())?;
    let mut points = Vec::new();
    uniform_in_disc(rng, window.sampling_radius(), n, &mut points);
    for p in &mut points {
        p[0] += window.center[0];
        p[1] += window.center[1];
    }
    let marks = (0..n).map(|_| rng.random::<f64>()).collect();
    Ok(PointPattern { points, marks, window })
}

/// Uniform grid index over a point set, cell side at least the query
/// radius, so a radius query only touches the 3×3 block around a point.
#[derive(Debug, Default, Clone)]
pub struct NeighborGrid {
    origin: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    starts: Vec<u32>,
    order: Vec<u32>,
    sorted: Vec<Point>,
    cell_of: Vec<u32>,
    // Column and row of the cell of each sorted point.
    cells: Vec<[u32; 2]>,
    fill: Vec<u32>,
    scratch: Vec<Point>,
}

impl NeighborGrid {
    pub fn new(points: &[Point], radius: f64) -> Self {
        let mut g = Self::default();
        g.rebuild(points, radius);
        g
    }

    /// Sample a PPP on the disc of radius `radius` around the origin
    /// directly into a grid of square cells of side `counts.cell()`. Each
    /// row of cells gets its own Poisson count on the row's bounding
    /// rectangle, and the row is counting-sorted into cells, so the result
    /// is indexed without a global sort. Query radii up to the cell side are
    /// supported afterwards.
    pub fn sample_ppp<R: Rng + ?Sized>(&mut self, counts: &RowCounts, radius: f64, rng: &mut R) -> Result<()> {
        let cell = counts.cell;
        let side = ((2.0 * radius / cell).ceil() as usize).max(1);
        self.origin = [-radius, -radius];
        self.cell = cell;
        self.nx = side;
        self.ny = side;
        self.starts.clear();
        self.starts.resize(side * side + 1, 0);
        self.sorted.clear();
        self.cells.clear();
        let r2 = radius * radius;
        for cy in 0..side {
            let y0 = -radius + cy as f64 * cell;
            let y1 = y0 + cell;
            let near = if y0 > 0.0 { y0 } else if y1 < 0.0 { -y1 } else { 0.0 };
            let half = (r2 - near * near).max(0.0).sqrt();
            let n = poisson_count(rng, counts.intensity * 2.0 * half * cell)?;
            // Stage the row in `scratch`, then bucket it by column.
            self.cell_of.clear();
            self.scratch.clear();
            for _ in 0..n {
                let [u, v] = unit_pair(rng);
                let p = [half * (2.0 * u - 1.0), y0 + cell * v];
                if p[0] * p[0] + p[1] * p[1] <= r2 {
                    let cx = (((p[0] + radius) / cell) as usize).min(side - 1);
                    self.cell_of.push(cx as u32);
                    self.scratch.push(p);
                }
            }
            let row = cy * side;
            let base = self.sorted.len() as u32;
            self.fill.clear();
            self.fill.resize(side + 1, 0);
            for &cx in &self.cell_of {
                self.fill[cx as usize + 1] += 1;
            }
            for cx in 0..side {
                self.fill[cx + 1] += self.fill[cx];
                self.starts[row + cx + 1] = base + self.fill[cx + 1];
            }
            self.sorted.resize(self.sorted.len() + self.scratch.len(), [0.0; 2]);
            self.cells.resize(self.sorted.len(), [0; 2]);
            for (i, &cx) in self.cell_of.iter().enumerate() {
                let slot = &mut self.fill[cx as usize];
                let k = (base + *slot) as usize;
                self.sorted[k] = self.scratch[i];
                self.cells[k] = [cx, cy as u32];
                *slot += 1;
            }
        }
        self.order.clear();
        self.order.extend(0..self.sorted.len() as u32);
        Ok(())
    }

    /// Re-index `points`, reusing allocations.
    pub fn rebuild(&mut self, points: &[Point], radius: f64) {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in points {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        if points.is_empty() {
            lo = [0.0; 2];
            hi = [0.0; 2];
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(f64::MIN_POSITIVE);
        // About one point per cell at most, so tiny radii do not blow up the
        // table.
        let per_side = (points.len() as f64).sqrt().ceil().max(1.0);
        let cell = radius.max(span / per_side).max(f64::MIN_POSITIVE);
        self.origin = lo;
        self.cell = cell;
        self.nx = ((hi[0] - lo[0]) / cell) as usize + 1;
        self.ny = ((hi[1] - lo[1]) / cell) as usize + 1;
        let ncell = self.nx * self.ny;
        self.starts.clear();
        self.starts.resize(ncell + 1, 0);
        self.cell_of.clear();
        for p in points {
            let c = self.cell_index(*p);
            self.cell_of.push(c as u32);
            self.starts[c + 1] += 1;
        }
        for c in 0..ncell {
            self.starts[c + 1] += self.starts[c];
        }
        self.order.clear();
        self.order.resize(points.len(), 0);
        self.sorted.clear();
        self.sorted.resize(points.len(), [0.0; 2]);
        self.cells.clear();
        self.cells.resize(points.len(), [0; 2]);
        self.fill.clear();
        self.fill.extend_from_slice(&self.starts[..ncell]);
        for (i, p) in points.iter().enumerate() {
            let c = self.cell_of[i] as usize;
            let slot = self.fill[c] as usize;
            self.fill[c] += 1;
            self.order[slot] = i as u32;
            self.sorted[slot] = *p;
            self.cells[slot] = [(c % self.nx) as u32, (c / self.nx) as u32];
        }
    }

    #[inline]
    fn cell_coords(&self, p: Point) -> (usize, usize) {
        let cx = (((p[0] - self.origin[0]) / self.cell) as usize).min(self.nx - 1);
        let cy = (((p[1] - self.origin[1]) / self.cell) as usize).min(self.ny - 1);
        (cx, cy)
    }

    #[inline]
    fn cell_index(&self, p: Point) -> usize {
        let (cx, cy) = self.cell_coords(p);
        cy * self.nx + cx
    }

    /// Visit every indexed point other than `skip` within `radius` of `p`
    /// (boundary included). Returning `false` from `visit` stops the scan.
    #[inline]
    pub fn for_each_within<F: FnMut(usize) -> bool>(&self, p: Point, radius: f64, skip: usize, mut visit: F) {
        let r2 = radius * radius;
        let (cx, cy) = self.cell_coords(p);
        for y in cy.saturating_sub(1)..=(cy + 1).min(self.ny - 1) {
            let row = y * self.nx;
            let (x0, x1) = (cx.saturating_sub(1), (cx + 1).min(self.nx - 1));
            let (s, e) = (self.starts[row + x0] as usize, self.starts[row + x1 + 1] as usize);
            for slot in s..e {
                let j = self.order[slot] as usize;
                if j != skip && dist2(self.sorted[slot], p) <= r2 && !visit(j) {
                    return;
                }
            }
        }
    }

    /// Indexed points in cell order.
    pub fn sorted_points(&self) -> &[Point] {
        &self.sorted
    }

    /// Original index of each point in cell order.
    pub fn order(&self) -> &[u32] {
        &self.order
    }

    /// [`retention_flags_multi`] in cell order: `marks` and `flags` are
    /// indexed like [`sorted_points`](Self::sorted_points). Each close pair
    /// is visited once, from its earlier cell.
    pub fn retention_flags_sorted(&self, marks: &[f64], thinnings: usize, d: f64, flags: &mut Vec<bool>) {
        let k = thinnings;
        let n = self.sorted.len();
        debug_assert_eq!(marks.len(), n * k);
        flags.clear();
        flags.resize(n * k, true);
        if d <= 0.0 || n == 0 {
            return;
        }
        let d2 = d * d;
        match k {
            1 => self.sweep::<1>(marks.as_chunks().0, d2, flags.as_mut_slice().as_chunks_mut().0),
            2 => self.sweep::<2>(marks.as_chunks().0, d2, flags.as_mut_slice().as_chunks_mut().0),
            3 => self.sweep::<3>(marks.as_chunks().0, d2, flags.as_mut_slice().as_chunks_mut().0),
            4 => self.sweep::<4>(marks.as_chunks().0, d2, flags.as_mut_slice().as_chunks_mut().0),
            _ => {
                // Split the thinnings into single ones.
                let mut one = Vec::with_capacity(n);
                let mut flag = vec![true; n];
                for t in 0..k {
                    one.clear();
                    one.extend((0..n).map(|i| [marks[i * k + t]]));
                    flag.iter_mut().for_each(|f| *f = true);
                    self.sweep::<1>(&one, d2, flag.as_mut_slice().as_chunks_mut().0);
                    for i in 0..n {
                        flags[i * k + t] = flag[i];
                    }
                }
            }
        }
    }

    /// Each close pair is visited once: candidates are the rest of the
    /// point's cell, the next cell in the row and the three cells of the
    /// next row. The first two and the last three are contiguous in slot
    /// order.
    fn sweep<const K: usize>(&self, marks: &[[f64; K]], d2: f64, flags: &mut [[bool; K]]) {
        let pts = &self.sorted[..];
        // Branch-free: whether a candidate is within range is close to a
        // coin flip, which defeats the branch predictor.
        let visit = |a: usize, range: std::ops::Range<usize>, flags: &mut [[bool; K]]| {
            let (pa, ma) = (pts[a], marks[a]);
            let mut fa = flags[a];
            let (pb, mb, fb) = (&pts[range.clone()], &marks[range.clone()], &mut flags[range]);
            for ((pb, mb), fb) in pb.iter().zip(mb).zip(fb) {
                let close = dist2(pa, *pb) <= d2;
                for t in 0..K {
                    fb[t] &= !(close & (ma[t] < mb[t]));
                    fa[t] &= !(close & (mb[t] < ma[t]));
                }
            }
            flags[a] = fa;
        };
        // Driven by point rather than by cell: empty and sparse cells would
        // otherwise cost a mispredicted branch each.
        let nx = self.nx;
        for (a, &[cx, cy]) in self.cells.iter().enumerate() {
            let (cx, cy) = (cx as usize, cy as usize);
            let c = cy * nx + cx;
            let row_end = self.starts[c + 1 + usize::from(cx + 1 < nx)] as usize;
            visit(a, a + 1..row_end, flags);
            if cy + 1 < self.ny {
                let row = c + nx;
                let (x0, x1) = (row - usize::from(cx > 0), row + usize::from(cx + 1 < nx));
                visit(a, self.starts[x0] as usize..self.starts[x1 + 1] as usize, flags);
            }
        }
    }
}

/// Retention flags for `thinnings` simultaneous thinnings of the same
/// positions. `marks` is laid out point-major: the mark of point `i` in
/// thinning `t` is `marks[i * thinnings + t]`. Flags use the same layout.
/// `grid` must index `points`.
pub fn retention_flags_multi(
    grid: &NeighborGrid,
    points: &[Point],
    marks: &[f64],
    thinnings: usize,
    d: f64,
    flags: &mut Vec<bool>,
) {
    debug_assert_eq!(grid.order.len(), points.len());
    let k = thinnings;
    let mut sorted_marks = vec![0.0; marks.len()];
    for (slot, &i) in grid.order.iter().enumerate() {
        let i = i as usize;
        sorted_marks[slot * k..(slot + 1) * k].copy_from_slice(&marks[i * k..(i + 1) * k]);
    }
    let mut sorted_flags = Vec::new();
    grid.retention_flags_sorted(&sorted_marks, k, d, &mut sorted_flags);
    flags.clear();
    flags.resize(points.len() * k, true);
    for (slot, &i) in grid.order.iter().enumerate() {
        let i = i as usize;
        flags[i * k..(i + 1) * k].copy_from_slice(&sorted_flags[slot * k..(slot + 1) * k]);
    }
}

/// Matérn type-II thinning of `pattern` with the given marks: a point is
/// kept iff no other point within distance `hardcore_distance` carries a
/// strictly smaller mark. Equal marks kill neither point.
pub fn matern_thin(pattern: &PointPattern, hardcore_distance: f64, marks: &[f64]) -> Result<ThinnedPattern> {
    if !(hardcore_distance >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "hard-core distance must be non-negative, got {hardcore_distance}"
        )));
    }
    let parent = if marks == pattern.marks.as_slice() {
        pattern.clone()
    } else {
        pattern.with_marks(marks.to_vec())?
    };
    let grid = NeighborGrid::new(&parent.points, hardcore_distance);
    let mut retained = Vec::new();
    retention_flags_multi(&grid, &parent.points, &parent.marks, 1, hardcore_distance, &mut retained);
    Ok(ThinnedPattern { parent, retained })
}

/// Two independent thinnings of the same positions: the first uses the
/// pattern's own marks, the second a fresh uniform mark vector.
pub fn paired_thinnings<R: Rng + ?Sized>(
    pattern: &PointPattern,
    hardcore_distance: f64,
    rng: &mut R,
) -> Result<(ThinnedPattern, ThinnedPattern)> {
    let second: Vec<f64> = (0..pattern.len()).map(|_| rng.random::<f64>()).collect();
    let first = matern_thin(pattern, hardcore_distance, &pattern.marks)?;
    let second = matern_thin(pattern, hardcore_distance, &second)?;
    Ok((first, second))
}

/// Write `x y mark retained1 [retained2 ...]`, one point per line. All
/// thinnings must share the parent positions; the mark column is the first
/// thinning's.
pub fn write_pattern_dump<W: Write>(out: &mut W, thinnings: &[&ThinnedPattern]) -> io::Result<()> {
    let Some(first) = thinnings.first() else { return Ok(()) };
    for (i, p) in first.parent.points.iter().enumerate() {
        write!(out, "{} {} {}", p[0], p[1], first.parent.marks[i])?;
        for t in thinnings {
            write!(out, " {}", u8::from(t.retained[i]))?;
        }
        writeln!(out)?;
    }
    Ok(())
}
