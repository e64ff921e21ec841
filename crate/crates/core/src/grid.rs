//! Rectilinear grids, cell-centred fields and the sampling operators of the
//! Eulerian frame.
//!
//! Cells are addressed by `[i, j, k]` and stored x-fastest. Cell intervals are
//! half-open `[node_i, node_{i+1})` except the last cell on each axis, which is
//! closed on the right so every in-domain point maps to exactly one cell.

use std::ops::{Add, Mul};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type CellIndex = [usize; 3];

/// Axis-aligned grid with arbitrary strictly increasing node coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct RectilinearGrid {
    axes: [Vec<f64>; 3],
    centers: [Vec<f64>; 3],
}

impl RectilinearGrid {
    pub fn new(axes: [Vec<f64>; 3]) -> Result<Self> {
        for (a, nodes) in axes.iter().enumerate() {
            if nodes.len() < 2 {
                return Err(Error::InvalidGrid(format!(
                    "axis {a} needs at least one cell, got {} nodes",
                    nodes.len()
                )));
            }
            if nodes.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidGrid(format!("axis {a} has non-finite nodes")));
            }
            if nodes.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidGrid(format!(
                    "axis {a} nodes are not strictly increasing"
                )));
            }
        }
        let centers = std::array::from_fn(|a| {
            axes[a].windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
        });
        Ok(Self { axes, centers })
    }

    /// Uniform grid with `cells[a]` cells spanning `[min[a], max[a]]`.
    pub fn uniform(cells: [usize; 3], min: Vec3, max: Vec3) -> Result<Self> {
        let axes = std::array::from_fn(|a| {
            let n = cells[a];
            (0..=n)
                .map(|i| {
                    if i == n {
                        max[a]
                    } else {
                        min[a] + (max[a] - min[a]) * i as f64 / n as f64
                    }
                })
                .collect()
        });
        Self::new(axes)
    }

    /// Uniform grid over the unit cube.
    pub fn unit_cube(n: usize) -> Result<Self> {
        Self::uniform([n; 3], Vec3::zeros(), Vec3::repeat(1.0))
    }

    pub fn axis(&self, a: usize) -> &[f64] {
        &self.axes[a]
    }

    pub fn centers(&self, a: usize) -> &[f64] {
        &self.centers[a]
    }

    pub fn dims(&self) -> [usize; 3] {
        std::array::from_fn(|a| self.axes[a].len() - 1)
    }

    pub fn cell_count(&self) -> usize {
        self.dims().iter().product()
    }

    #[inline]
    pub fn flat_index(&self, c: CellIndex) -> usize {
        let [nx, ny, _] = self.dims();
        c[0] + nx * (c[1] + ny * c[2])
    }

    #[inline]
    pub fn cell_from_flat(&self, flat: usize) -> CellIndex {
        let [nx, ny, _] = self.dims();
        [flat % nx, (flat / nx) % ny, flat / (nx * ny)]
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        (
            Vec3::from_fn(|a, _| self.axes[a][0]),
            Vec3::from_fn(|a, _| *self.axes[a].last().unwrap()),
        )
    }

    pub fn cell_min(&self, c: CellIndex) -> Vec3 {
        Vec3::from_fn(|a, _| self.axes[a][c[a]])
    }

    pub fn cell_max(&self, c: CellIndex) -> Vec3 {
        Vec3::from_fn(|a, _| self.axes[a][c[a] + 1])
    }

    pub fn cell_center(&self, c: CellIndex) -> Vec3 {
        Vec3::from_fn(|a, _| self.centers[a][c[a]])
    }

    pub fn cell_size(&self, c: CellIndex) -> Vec3 {
        Vec3::from_fn(|a, _| self.axes[a][c[a] + 1] - self.axes[a][c[a]])
    }

    pub fn cell_volume(&self, c: CellIndex) -> f64 {
        self.cell_size(c).iter().product()
    }

    /// Smallest cell width over all axes.
    pub fn min_spacing(&self) -> f64 {
        self.axes
            .iter()
            .flat_map(|nodes| nodes.windows(2).map(|w| w[1] - w[0]))
            .fold(f64::INFINITY, f64::min)
    }

    fn locate_axis(&self, a: usize, v: f64) -> Option<usize> {
        let nodes = &self.axes[a];
        let n = nodes.len() - 1;
        if !(v >= nodes[0] && v <= nodes[n]) {
            return None;
        }
        if v == nodes[n] {
            return Some(n - 1);
        }
        Some(nodes.partition_point(|&node| node <= v) - 1)
    }

    /// Cell containing `x`, or `None` when `x` lies outside the domain.
    pub fn locate_cell(&self, x: &Vec3) -> Option<CellIndex> {
        Some([
            self.locate_axis(0, x[0])?,
            self.locate_axis(1, x[1])?,
            self.locate_axis(2, x[2])?,
        ])
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        self.locate_cell(x).is_some()
    }

    /// Cell containing `x` after clamping `x` into the domain.
    pub fn nearest_cell(&self, x: &Vec3) -> CellIndex {
        std::array::from_fn(|a| {
            let nodes = &self.axes[a];
            let v = x[a].clamp(nodes[0], *nodes.last().unwrap());
            self.locate_axis(a, v).unwrap_or(0)
        })
    }

    /// Interpolation stencil along one axis over the cell-centre lattice:
    /// `(lower index, upper index, weight of upper)`, clamped at the rim.
    #[inline]
    fn center_stencil(&self, a: usize, v: f64) -> (usize, usize, f64) {
        let c = &self.centers[a];
        let n = c.len();
        if n == 1 || v <= c[0] {
            return (0, 0, 0.0);
        }
        if v >= c[n - 1] {
            return (n - 1, n - 1, 0.0);
        }
        let i = c.partition_point(|&cv| cv <= v) - 1;
        let w = (v - c[i]) / (c[i + 1] - c[i]);
        (i, i + 1, w)
    }

    /// Trilinear interpolation of a cell-centred quantity at `x`.
    pub fn interpolate<T, F>(&self, x: &Vec3, mut value: F) -> T
    where
        T: Copy + Add<Output = T> + Mul<f64, Output = T>,
        F: FnMut(CellIndex) -> T,
    {
        let (i0, i1, wx) = self.center_stencil(0, x[0]);
        let (j0, j1, wy) = self.center_stencil(1, x[1]);
        let (k0, k1, wz) = self.center_stencil(2, x[2]);
        let lerp = |a: T, b: T, w: f64| -> T {
            if w == 0.0 {
                a
            } else {
                a * (1.0 - w) + b * w
            }
        };
        let mut plane = |k: usize| {
            let lo = lerp(value([i0, j0, k]), value([i1, j0, k]), wx);
            let hi = if wy == 0.0 {
                lo
            } else {
                lerp(value([i0, j1, k]), value([i1, j1, k]), wx)
            };
            lerp(lo, hi, wy)
        };
        let bottom = plane(k0);
        if wz == 0.0 {
            bottom
        } else {
            let top = plane(k1);
            lerp(bottom, top, wz)
        }
    }
}

/// A cell-centred field with `components` values per cell, stored
/// component-major: all of component 0 (x-fastest), then component 1, ...
#[derive(Clone, Debug)]
pub struct CellField {
    grid: Arc<RectilinearGrid>,
    components: usize,
    values: Vec<f64>,
}

impl CellField {
    pub fn new(grid: Arc<RectilinearGrid>, components: usize, values: Vec<f64>) -> Result<Self> {
        let expected = grid.cell_count() * components;
        if components == 0 || values.len() != expected {
            return Err(Error::InvalidField(format!(
                "expected {expected} values for {components} components, got {}",
                values.len()
            )));
        }
        Ok(Self {
            grid,
            components,
            values,
        })
    }

    pub fn zeros(grid: Arc<RectilinearGrid>, components: usize) -> Self {
        let n = grid.cell_count() * components;
        Self {
            grid,
            components,
            values: vec![0.0; n],
        }
    }

    pub fn grid(&self) -> &Arc<RectilinearGrid> {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn component(&self, comp: usize) -> &[f64] {
        let n = self.grid.cell_count();
        &self.values[comp * n..(comp + 1) * n]
    }

    #[inline]
    pub fn get(&self, flat: usize, comp: usize) -> f64 {
        self.values[comp * self.grid.cell_count() + flat]
    }
}

/// One stored simulation step: fraction field `f` and velocity `u`.
#[derive(Clone, Debug)]
pub struct TimeStep {
    pub time: f64,
    fraction: CellField,
    velocity: CellField,
}

impl TimeStep {
    pub fn new(time: f64, fraction: CellField, velocity: CellField) -> Result<Self> {
        if !time.is_finite() {
            return Err(Error::InvalidField("time stamp is not finite".into()));
        }
        if fraction.components != 1 || velocity.components != 3 {
            return Err(Error::InvalidField(format!(
                "expected 1 fraction and 3 velocity components, got {} and {}",
                fraction.components, velocity.components
            )));
        }
        if *fraction.grid != *velocity.grid {
            return Err(Error::InvalidField(
                "fraction and velocity live on different grids".into(),
            ));
        }
        if let Some(bad) = fraction.values.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(Error::InvalidField(format!(
                "fraction value {bad} outside [0, 1]"
            )));
        }
        if velocity.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidField("velocity has non-finite values".into()));
        }
        Ok(Self {
            time,
            fraction,
            velocity,
        })
    }

    pub fn grid(&self) -> &RectilinearGrid {
        &self.fraction.grid
    }

    pub fn grid_arc(&self) -> &Arc<RectilinearGrid> {
        &self.fraction.grid
    }

    pub fn fraction(&self) -> &CellField {
        &self.fraction
    }

    pub fn velocity(&self) -> &CellField {
        &self.velocity
    }

    /// Largest velocity magnitude over all cells.
    pub fn max_speed(&self) -> f64 {
        let n = self.grid().cell_count();
        (0..n)
            .map(|i| self.velocity_flat(i).norm())
            .fold(0.0, f64::max)
    }

    #[inline]
    pub fn fraction_flat(&self, flat: usize) -> f64 {
        self.fraction.values[flat]
    }

    #[inline]
    pub fn velocity_flat(&self, flat: usize) -> Vec3 {
        let n = self.grid().cell_count();
        let v = &self.velocity.values;
        Vec3::new(v[flat], v[n + flat], v[2 * n + flat])
    }
}

/// Read access to one time step's cell data.
///
/// Serial code reads [`TimeStep`] directly; partition workers read through a
/// [`WindowedStep`] that records any access outside their core + ghost cells.
pub trait StepAccess: Sync {
    fn grid(&self) -> &RectilinearGrid;
    fn time(&self) -> f64;
    fn fraction_at(&self, c: CellIndex) -> f64;
    fn velocity_at(&self, c: CellIndex) -> Vec3;
}

impl StepAccess for TimeStep {
    fn grid(&self) -> &RectilinearGrid {
        self.fraction.grid.as_ref()
    }

    fn time(&self) -> f64 {
        self.time
    }

    #[inline]
    fn fraction_at(&self, c: CellIndex) -> f64 {
        self.fraction_flat(StepAccess::grid(self).flat_index(c))
    }

    #[inline]
    fn velocity_at(&self, c: CellIndex) -> Vec3 {
        self.velocity_flat(StepAccess::grid(self).flat_index(c))
    }
}

/// Inclusive-exclusive box of cell indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CellBox {
    pub min: CellIndex,
    pub max: CellIndex,
}

impl CellBox {
    pub fn whole(grid: &RectilinearGrid) -> Self {
        Self {
            min: [0; 3],
            max: grid.dims(),
        }
    }

    #[inline]
    pub fn contains(&self, c: CellIndex) -> bool {
        (0..3).all(|a| c[a] >= self.min[a] && c[a] < self.max[a])
    }

    /// Box grown by `width` cells on every side, clipped to `dims`.
    pub fn expanded(&self, width: usize, dims: [usize; 3]) -> Self {
        Self {
            min: std::array::from_fn(|a| self.min[a].saturating_sub(width)),
            max: std::array::from_fn(|a| (self.max[a] + width).min(dims[a])),
        }
    }

    pub fn cell_count(&self) -> usize {
        (0..3).map(|a| self.max[a] - self.min[a]).product()
    }

    /// Cells of the box in x-fastest order.
    pub fn cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        (self.min[2]..self.max[2]).flat_map(move |k| {
            (self.min[1]..self.max[1])
                .flat_map(move |j| (self.min[0]..self.max[0]).map(move |i| [i, j, k]))
        })
    }
}

/// View of a time step restricted to a window of cells. Reads outside the
/// window still return the stored value but raise the shared violation flag.
pub struct WindowedStep<'a> {
    step: &'a TimeStep,
    window: CellBox,
    violation: &'a AtomicBool,
}

impl<'a> WindowedStep<'a> {
    pub fn new(step: &'a TimeStep, window: CellBox, violation: &'a AtomicBool) -> Self {
        Self {
            step,
            window,
            violation,
        }
    }

    #[inline]
    fn check(&self, c: CellIndex) {
        if !self.window.contains(c) {
            self.violation.store(true, Ordering::Relaxed);
        }
    }
}

impl StepAccess for WindowedStep<'_> {
    fn grid(&self) -> &RectilinearGrid {
        StepAccess::grid(self.step)
    }

    fn time(&self) -> f64 {
        self.step.time
    }

    #[inline]
    fn fraction_at(&self, c: CellIndex) -> f64 {
        self.check(c);
        self.step.fraction_at(c)
    }

    #[inline]
    fn velocity_at(&self, c: CellIndex) -> Vec3 {
        self.check(c);
        self.step.velocity_at(c)
    }
}

/// Time-ordered sequence of steps sharing one grid.
#[derive(Clone, Debug)]
pub struct TimeSeriesDataset {
    grid: Arc<RectilinearGrid>,
    steps: Vec<TimeStep>,
}

impl TimeSeriesDataset {
    pub fn new(grid: Arc<RectilinearGrid>, steps: Vec<TimeStep>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidDataset("dataset has no time steps".into()));
        }
        if let Some(s) = steps.iter().find(|s| **s.grid_arc() != *grid) {
            return Err(Error::InvalidDataset(format!(
                "step at t={} does not share the dataset grid",
                s.time
            )));
        }
        if steps.windows(2).any(|w| w[1].time <= w[0].time) {
            return Err(Error::InvalidDataset(
                "step times are not strictly increasing".into(),
            ));
        }
        Ok(Self { grid, steps })
    }

    pub fn grid(&self) -> &Arc<RectilinearGrid> {
        &self.grid
    }

    pub fn steps(&self) -> &[TimeStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Velocity at `x` with weight `alpha` on `to` (0 at `from`, 1 at `to`).
#[inline]
pub(crate) fn blend_velocity<A: StepAccess, B: StepAccess>(
    from: &A,
    to: &B,
    x: &Vec3,
    alpha: f64,
) -> Vec3 {
    let grid = from.grid();
    let ua: Vec3 = grid.interpolate(x, |c| from.velocity_at(c));
    if alpha == 0.0 {
        return ua;
    }
    let ub: Vec3 = grid.interpolate(x, |c| to.velocity_at(c));
    if alpha == 1.0 {
        return ub;
    }
    ua * (1.0 - alpha) + ub * alpha
}

/// Velocity at `(x, t)`: trilinear in space over cell centres, linear in time
/// between the two bracketing steps.
pub fn sample_velocity<A: StepAccess, B: StepAccess>(
    step_a: &A,
    step_b: &B,
    x: &Vec3,
    t: f64,
) -> Result<Vec3> {
    let (ta, tb) = (step_a.time(), step_b.time());
    if !(t >= ta && t <= tb) {
        return Err(Error::TimeOutOfRange {
            t,
            start: ta,
            end: tb,
        });
    }
    let alpha = if tb > ta { (t - ta) / (tb - ta) } else { 0.0 };
    Ok(blend_velocity(step_a, step_b, x, alpha))
}

/// Trilinearly interpolated fraction value at `x`.
pub fn sample_fraction<S: StepAccess + ?Sized>(step: &S, x: &Vec3) -> f64 {
    step.grid().interpolate(x, |c| step.fraction_at(c))
}

/// Gradient of the cell-centred fraction field at a cell centre.
///
/// Second-order central differences weighted for non-uniform spacing in the
/// interior, first-order one-sided differences on the domain boundary.
pub fn gradient_f<S: StepAccess + ?Sized>(step: &S, cell: CellIndex) -> Vec3 {
    let grid = step.grid();
    let dims = grid.dims();
    let f0 = step.fraction_at(cell);
    Vec3::from_fn(|a, _| {
        let n = dims[a];
        if n == 1 {
            return 0.0;
        }
        let centers = grid.centers(a);
        let i = cell[a];
        let mut lower = cell;
        let mut upper = cell;
        if i == 0 {
            upper[a] = 1;
            (step.fraction_at(upper) - f0) / (centers[1] - centers[0])
        } else if i == n - 1 {
            lower[a] = n - 2;
            (f0 - step.fraction_at(lower)) / (centers[n - 1] - centers[n - 2])
        } else {
            lower[a] = i - 1;
            upper[a] = i + 1;
            let hm = centers[i] - centers[i - 1];
            let hp = centers[i + 1] - centers[i];
            let fm = step.fraction_at(lower);
            let fp = step.fraction_at(upper);
            (hm * hm * fp - hp * hp * fm + (hp * hp - hm * hm) * f0) / (hm * hp * (hm + hp))
        }
    })
}
