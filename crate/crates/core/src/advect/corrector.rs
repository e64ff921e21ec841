//! Three-stage repositioning of particles that ended an interval in the
//! wrong phase.
//!
//! 1. Borrow the displacement of the nearest phase-consistent neighbour.
//! 2. Move towards the nearest cell that can hold liquid, up to its boundary.
//! 3. Project onto the interface patch along the direction of its
//!    attachment corner.

use std::collections::HashMap;

use crate::grid::{CellIndex, RectilinearGrid, StepAccess, Vec3};
use crate::plic::{cell_phase, is_liquid, project_to_patch, CellPhase};

use super::CorrectorMode;

/// Relative distance by which corrected points are pulled past a face or
/// patch plane, so the strict phase test and half-open cells accept them.
const INSET: f64 = 1e-9;

/// Positions of one particle around an interval, used by stage 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SnapshotRecord {
    pub key: u64,
    pub before: Vec3,
    pub after: Vec3,
    /// Phase validity after integration, before any correction.
    pub valid: bool,
}

/// Phase-consistent snapshot records bucketed by their cell at the start of
/// the interval.
#[derive(Clone, Debug, Default)]
pub struct NeighborIndex {
    dims: [usize; 3],
    buckets: HashMap<usize, Vec<SnapshotRecord>>,
}

impl NeighborIndex {
    pub fn build(grid: &RectilinearGrid, records: impl IntoIterator<Item = SnapshotRecord>) -> Self {
        let mut buckets: HashMap<usize, Vec<SnapshotRecord>> = HashMap::new();
        for r in records.into_iter().filter(|r| r.valid) {
            if let Some(c) = grid.locate_cell(&r.before) {
                buckets.entry(grid.flat_index(c)).or_default().push(r);
            }
        }
        Self {
            dims: grid.dims(),
            buckets,
        }
    }

    pub fn len(&self) -> usize {
        self.buckets.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    /// Nearest candidate to `x` by start position among the 3x3x3 cells
    /// around `cell`; ties go to the smaller key.
    pub fn nearest(&self, cell: CellIndex, x: &Vec3, exclude: u64) -> Option<&SnapshotRecord> {
        if self.buckets.is_empty() {
            return None;
        }
        let [nx, ny, nz] = self.dims;
        let range = |v: usize, n: usize| v.saturating_sub(1)..=(v + 1).min(n - 1);
        let mut best: Option<(f64, &SnapshotRecord)> = None;
        for k in range(cell[2], nz) {
            for j in range(cell[1], ny) {
                for i in range(cell[0], nx) {
                    let Some(bucket) = self.buckets.get(&(i + nx * (j + ny * k))) else {
                        continue;
                    };
                    for r in bucket.iter().filter(|r| r.key != exclude) {
                        let d = (r.before - x).norm_squared();
                        let better = match best {
                            None => true,
                            Some((bd, br)) => d < bd || (d == bd && r.key < br.key),
                        };
                        if better {
                            best = Some((d, r));
                        }
                    }
                }
            }
        }
        best.map(|(_, r)| r)
    }
}

/// Entry parameter in `[0, 1]` of the segment `p -> q` into the box
/// `[lo, hi]`, by the slab method. Zero when `p` is already inside.
pub fn segment_box_entry(p: &Vec3, q: &Vec3, lo: &Vec3, hi: &Vec3) -> Option<f64> {
    let d = q - p;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for a in 0..3 {
        if d[a] == 0.0 {
            if p[a] < lo[a] || p[a] > hi[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[a];
        let (mut ta, mut tb) = ((lo[a] - p[a]) * inv, (hi[a] - p[a]) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return None;
        }
    }
    Some(t0)
}

fn holds_liquid<S: StepAccess + ?Sized>(step: &S, cell: CellIndex, tau: f64) -> bool {
    step.fraction_at(cell) > tau && !matches!(cell_phase(step, cell, tau), CellPhase::Gas)
}

/// Nearest cell able to hold liquid, searched by growing Chebyshev rings
/// around the cell of `x` (or the nearest cell when `x` is outside). Within
/// the first non-empty ring the closest centre wins, ties by flat index.
pub fn nearest_valid_cell<S: StepAccess + ?Sized>(step: &S, x: &Vec3, tau: f64) -> Option<CellIndex> {
    let grid = step.grid();
    let dims = grid.dims();
    let c0 = grid.locate_cell(x).unwrap_or_else(|| grid.nearest_cell(x));
    let max_ring = *dims.iter().max().unwrap();
    for ring in 0..=max_ring {
        let lo: [usize; 3] = std::array::from_fn(|a| c0[a].saturating_sub(ring));
        let hi: [usize; 3] = std::array::from_fn(|a| (c0[a] + ring).min(dims[a] - 1));
        let mut best: Option<(f64, usize, CellIndex)> = None;
        for k in lo[2]..=hi[2] {
            for j in lo[1]..=hi[1] {
                for i in lo[0]..=hi[0] {
                    let c = [i, j, k];
                    let cheb = (0..3).map(|a| c[a].abs_diff(c0[a])).max().unwrap();
                    if cheb != ring || !holds_liquid(step, c, tau) {
                        continue;
                    }
                    let d = (grid.cell_center(c) - x).norm_squared();
                    let flat = grid.flat_index(c);
                    if best.is_none_or(|(bd, bf, _)| d < bd || (d == bd && flat < bf)) {
                        best = Some((d, flat, c));
                    }
                }
            }
        }
        if let Some((_, _, c)) = best {
            return Some(c);
        }
    }
    None
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorrectionOutcome {
    /// The particle now passes the phase test.
    Valid,
    /// The particle was moved but still fails the phase test.
    Invalid,
    /// No cell can hold liquid; the particle is dropped.
    Vanished,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correction {
    pub position: Vec3,
    /// Total displacement over all stages.
    pub eps: f64,
    pub outcome: CorrectionOutcome,
}

/// Move a point found on the boundary of `cell` a hair inside it.
fn enter_cell(grid: &RectilinearGrid, from: &Vec3, target: CellIndex) -> Vec3 {
    let (lo, hi) = (grid.cell_min(target), grid.cell_max(target));
    let center = grid.cell_center(target);
    let Some(t) = segment_box_entry(from, &center, &lo, &hi) else {
        return center;
    };
    for nudge in [0.0, INSET, 1e-6, 1e-3] {
        let x = from + (center - from) * (t + nudge).min(1.0);
        if grid.locate_cell(&x) == Some(target) {
            return x;
        }
    }
    center
}

/// Correct one particle that failed the phase test at the end of an
/// interval. `before` and `after` are its positions at the interval ends.
#[allow(clippy::too_many_arguments)]
pub fn correct_particle<A: StepAccess, B: StepAccess>(
    key: u64,
    before: &Vec3,
    after: &Vec3,
    from: &A,
    to: &B,
    neighbors: &NeighborIndex,
    mode: CorrectorMode,
    tau: f64,
) -> Correction {
    let grid = to.grid();
    let mut eps = 0.0;

    // stage 1: displacement of the nearest phase-consistent neighbour
    let mut x1 = *after;
    if mode == CorrectorMode::Full {
        let cell = from
            .grid()
            .locate_cell(before)
            .unwrap_or_else(|| from.grid().nearest_cell(before));
        if let Some(r) = neighbors.nearest(cell, before, key) {
            x1 = before + (r.after - r.before);
            eps += (x1 - after).norm();
        }
    }

    // stage 2: towards the nearest cell that can hold liquid
    let in_liquid_cell = grid
        .locate_cell(&x1)
        .is_some_and(|c| holds_liquid(to, c, tau));
    let x2 = if in_liquid_cell {
        x1
    } else {
        let Some(target) = nearest_valid_cell(to, &x1, tau) else {
            return Correction {
                position: x1,
                eps,
                outcome: CorrectionOutcome::Vanished,
            };
        };
        let x = enter_cell(grid, &x1, target);
        eps += (x - x1).norm();
        x
    };

    // stage 3: onto the patch, towards the attachment corner
    let mut x3 = x2;
    if let Some(cell) = grid.locate_cell(&x2) {
        if let CellPhase::Interface(patch) = cell_phase(to, cell, tau) {
            if !patch.contains(&x2) {
                if let Ok(on_plane) = project_to_patch(&patch, &x2) {
                    let mut s = 1.0 - INSET;
                    let mut x = patch.corner + (on_plane - patch.corner) * s;
                    for _ in 0..40 {
                        if is_liquid(to, &x, tau) {
                            break;
                        }
                        s *= 0.5;
                        x = patch.corner + (on_plane - patch.corner) * s;
                    }
                    x3 = x;
                    eps += (x3 - x2).norm();
                }
            }
        }
    }

    let outcome = if is_liquid(to, &x3, tau) {
        CorrectionOutcome::Valid
    } else {
        CorrectionOutcome::Invalid
    };
    Correction {
        position: x3,
        eps,
        outcome,
    }
}
