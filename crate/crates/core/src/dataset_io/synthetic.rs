//! Analytic test datasets on the unit cube.
//!
//! Every scenario pairs a liquid body with a velocity field that transports
//! it. Translating scenarios sample their speed at the stored steps and
//! advance the body by the trapezoid rule over those samples, which is what
//! RK4 integrates when the field is blended linearly in time.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{CellField, RectilinearGrid, TimeSeriesDataset, TimeStep, Vec3};

/// Per-axis subsamples used to estimate a cell's liquid fraction.
pub const SUBSAMPLES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    /// One ball cut at `x = cut`; the halves move apart after `split_time`.
    SplitSphere,
    /// A ball orbiting the vertical axis through the domain centre.
    RigidRotation,
    /// Two overlapping balls cut at `x = cut` whose halves separate and
    /// rejoin `cycles` times.
    MergeThenSplit,
    /// A ball sheared by `u_x = rate * (y - 0.5)`.
    ShearStretch,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::SplitSphere,
        ScenarioKind::RigidRotation,
        ScenarioKind::MergeThenSplit,
        ScenarioKind::ShearStretch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::SplitSphere => "split-sphere",
            ScenarioKind::RigidRotation => "rigid-rotation",
            ScenarioKind::MergeThenSplit => "merge-then-split",
            ScenarioKind::ShearStretch => "shear-stretch",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
                Error::Scenario(format!("unknown scenario {s:?}, expected one of {names:?}"))
            })
    }
}

/// Parameters of an analytic dataset. `rate` is a translation speed for the
/// splitting scenarios, an angular velocity for rotation and a shear rate for
/// shear-stretch.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScenario {
    pub kind: ScenarioKind,
    pub cells: usize,
    pub steps: usize,
    pub duration: f64,
    pub center: Vec3,
    pub radius: f64,
    /// Centre distance of the two balls in merge-then-split.
    pub separation: f64,
    /// x coordinate of the cut plane.
    pub cut: f64,
    pub rate: f64,
    pub split_time: f64,
    pub cycles: f64,
}

impl SyntheticScenario {
    /// Default parameters for `kind` at the given resolution.
    pub fn preset(kind: ScenarioKind, cells: usize, steps: usize) -> Self {
        let base = Self {
            kind,
            cells,
            steps,
            duration: 1.0,
            center: Vec3::repeat(0.5),
            radius: 0.15,
            separation: 0.0,
            cut: 0.5,
            rate: 0.0,
            split_time: 0.0,
            cycles: 1.0,
        };
        match kind {
            ScenarioKind::SplitSphere => Self {
                split_time: 0.3,
                rate: 0.12 / 0.7,
                ..base
            },
            ScenarioKind::RigidRotation => Self {
                center: Vec3::new(0.7, 0.5, 0.5),
                radius: 0.12,
                rate: 2.0 * PI,
                ..base
            },
            ScenarioKind::MergeThenSplit => Self {
                radius: 0.12,
                separation: 0.12,
                cycles: 2.0,
                // peak half-offset rate * duration / (pi * cycles) = 0.1
                rate: 0.1 * PI * 2.0,
                ..base
            },
            ScenarioKind::ShearStretch => Self { rate: 0.5, ..base },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(m));
        if self.cells == 0 {
            return bad("cell count must be at least 1".into());
        }
        if self.steps < 2 {
            return bad(format!("step count must be at least 2, got {}", self.steps));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return bad(format!("radius must be positive, got {}", self.radius));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if self.kind == ScenarioKind::MergeThenSplit
            && !(self.separation >= 0.0 && self.separation < 2.0 * self.radius)
        {
            return bad("merge-then-split balls must overlap".into());
        }
        let finite = [self.rate, self.split_time, self.cycles, self.cut, self.separation]
            .iter()
            .chain(self.center.iter())
            .all(|v| v.is_finite());
        if !finite {
            return bad("non-finite parameter".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<RectilinearGrid> {
        RectilinearGrid::unit_cube(self.cells)
    }

    pub fn times(&self) -> Vec<f64> {
        let k = self.steps - 1;
        (0..self.steps)
            .map(|i| self.duration * i as f64 / k as f64)
            .collect()
    }

    /// Signed translation speed of the right half at time `t`.
    fn half_speed(&self, t: f64) -> f64 {
        match self.kind {
            ScenarioKind::SplitSphere if t >= self.split_time => self.rate,
            ScenarioKind::MergeThenSplit => {
                self.rate * (2.0 * PI * self.cycles * t / self.duration).sin()
            }
            _ => 0.0,
        }
    }

    /// Offset of each half from its initial position at every stored step.
    pub fn half_offsets(&self) -> Vec<f64> {
        let times = self.times();
        let mut out = Vec::with_capacity(times.len());
        let mut s = 0.0;
        out.push(s);
        for w in times.windows(2) {
            s += 0.5 * (self.half_speed(w[0]) + self.half_speed(w[1])) * (w[1] - w[0]);
            // the oscillating case returns to contact up to rounding
            s = s.max(0.0);
            out.push(s);
        }
        out
    }

    fn in_body(&self, p: &Vec3) -> bool {
        let r2 = self.radius * self.radius;
        match self.kind {
            ScenarioKind::MergeThenSplit => {
                let h = Vec3::new(0.5 * self.separation, 0.0, 0.0);
                (p - (self.center - h)).norm_squared() <= r2
                    || (p - (self.center + h)).norm_squared() <= r2
            }
            _ => (p - self.center).norm_squared() <= r2,
        }
    }

    fn body_bounds(&self) -> (Vec3, Vec3) {
        let ext = Vec3::new(self.radius + 0.5 * self.separation, self.radius, self.radius);
        (self.center - ext, self.center + ext)
    }

    fn rotation_center(&self) -> Vec3 {
        Vec3::new(0.5, 0.5, 0.0)
    }

    /// Whether `x` is liquid at step `k`. `offset` is `half_offsets()[k]`.
    fn liquid_at(&self, x: &Vec3, t: f64, offset: f64) -> bool {
        match self.kind {
            ScenarioKind::SplitSphere | ScenarioKind::MergeThenSplit => {
                let e = Vec3::new(offset, 0.0, 0.0);
                if x[0] - offset >= self.cut {
                    self.in_body(&(x - e))
                } else if x[0] + offset < self.cut {
                    self.in_body(&(x + e))
                } else {
                    false
                }
            }
            ScenarioKind::RigidRotation => {
                // rotate back to the initial frame
                let c = self.rotation_center();
                let (s, co) = (-self.rate * t).sin_cos();
                let (dx, dy) = (x[0] - c[0], x[1] - c[1]);
                let p = Vec3::new(c[0] + co * dx - s * dy, c[1] + s * dx + co * dy, x[2]);
                self.in_body(&p)
            }
            ScenarioKind::ShearStretch => {
                let p = Vec3::new(x[0] - self.rate * (x[1] - 0.5) * t, x[1], x[2]);
                self.in_body(&p)
            }
        }
    }

    fn liquid_bounds(&self, t: f64, offset: f64) -> (Vec3, Vec3) {
        let (mut lo, mut hi) = self.body_bounds();
        match self.kind {
            ScenarioKind::SplitSphere | ScenarioKind::MergeThenSplit => {
                lo[0] -= offset;
                hi[0] += offset;
            }
            ScenarioKind::RigidRotation => {
                let c = self.rotation_center();
                let reach = (self.center - Vec3::new(c[0], c[1], self.center[2])).norm()
                    + self.radius;
                lo = Vec3::new(c[0] - reach, c[1] - reach, lo[2]);
                hi = Vec3::new(c[0] + reach, c[1] + reach, hi[2]);
            }
            ScenarioKind::ShearStretch => {
                let dy = (lo[1] - 0.5).abs().max((hi[1] - 0.5).abs());
                let shift = (self.rate * dy * t).abs();
                lo[0] -= shift;
                hi[0] += shift;
            }
        }
        (lo, hi)
    }

    fn velocity(&self, x: &Vec3, t: f64) -> Vec3 {
        match self.kind {
            ScenarioKind::SplitSphere | ScenarioKind::MergeThenSplit => {
                let v = self.half_speed(t);
                let sign = if x[0] >= self.cut { 1.0 } else { -1.0 };
                Vec3::new(sign * v, 0.0, 0.0)
            }
            ScenarioKind::RigidRotation => {
                let c = self.rotation_center();
                Vec3::new(-self.rate * (x[1] - c[1]), self.rate * (x[0] - c[0]), 0.0)
            }
            ScenarioKind::ShearStretch => Vec3::new(self.rate * (x[1] - 0.5), 0.0, 0.0),
        }
    }

    /// Liquid fraction of every cell at step `k`, by regular subsampling.
    pub fn fraction_at(&self, grid: &RectilinearGrid, k: usize) -> Vec<f64> {
        let t = self.times()[k];
        let offset = self.half_offsets()[k];
        let (lo, hi) = self.liquid_bounds(t, offset);
        let n = SUBSAMPLES;
        let total = (n * n * n) as f64;
        (0..grid.cell_count())
            .into_par_iter()
            .map(|flat| {
                let c = grid.cell_from_flat(flat);
                let cmin = grid.cell_min(c);
                let cmax = grid.cell_max(c);
                if (0..3).any(|a| cmax[a] < lo[a] || cmin[a] > hi[a]) {
                    return 0.0;
                }
                let size = cmax - cmin;
                let mut inside = 0usize;
                for sz in 0..n {
                    for sy in 0..n {
                        for sx in 0..n {
                            let frac = Vec3::new(sx as f64, sy as f64, sz as f64)
                                .add_scalar(0.5)
                                / n as f64;
                            let p = cmin + size.component_mul(&frac);
                            inside += self.liquid_at(&p, t, offset) as usize;
                        }
                    }
                }
                inside as f64 / total
            })
            .collect()
    }
}

/// Build the dataset described by `s`.
pub fn generate_scenario(s: &SyntheticScenario) -> Result<TimeSeriesDataset> {
    s.validate()?;
    let grid = Arc::new(s.grid()?);
    let times = s.times();
    let n = grid.cell_count();
    let steps = times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let f = s.fraction_at(&grid, k);
            let mut u = vec![0.0; 3 * n];
            for flat in 0..n {
                let v = s.velocity(&grid.cell_center(grid.cell_from_flat(flat)), t);
                for a in 0..3 {
                    u[a * n + flat] = v[a];
                }
            }
            TimeStep::new(
                t,
                CellField::new(grid.clone(), 1, f)?,
                CellField::new(grid.clone(), 3, u)?,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    TimeSeriesDataset::new(grid, steps)
}
