//! Piecewise linear interface reconstruction inside mixed cells.
//!
//! A patch is the plane `(x - a) . n = l` where `n` points from liquid to gas
//! (`n = -grad f / |grad f|`), `a` is the cell corner deepest in the liquid and
//! `l >= 0` is chosen so that the liquid side of the plane holds exactly the
//! cell's fraction `f`. A point is liquid when `(x - a) . n < l`.

use crate::error::{Error, Result};
use crate::grid::{gradient_f, CellIndex, StepAccess, Vec3};

/// Upper bound on bisection steps when solving for the plane offset.
pub const MAX_BISECTION_STEPS: usize = 60;

/// Normalised normal components below this are treated as zero by
/// [`truncated_volume`]; it bounds both the dropped-term error and the
/// cancellation error of the corner-sum formula well below 1e-4.
const NEGLIGIBLE_COMPONENT: f64 = 5e-5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlicPatch {
    pub cell: CellIndex,
    pub normal: Vec3,
    pub corner: Vec3,
    pub offset: f64,
}

impl PlicPatch {
    /// Signed projected distance of `x` from the attachment corner.
    #[inline]
    pub fn depth(&self, x: &Vec3) -> f64 {
        (x - self.corner).dot(&self.normal)
    }

    #[inline]
    pub fn contains(&self, x: &Vec3) -> bool {
        self.depth(x) < self.offset
    }
}

/// Phase classification of a single cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CellPhase {
    Gas,
    Liquid,
    Interface(PlicPatch),
}

impl CellPhase {
    /// Whether `x` (assumed inside the cell) lies in the liquid phase.
    #[inline]
    pub fn contains(&self, x: &Vec3) -> bool {
        match self {
            CellPhase::Gas => false,
            CellPhase::Liquid => true,
            CellPhase::Interface(p) => p.contains(x),
        }
    }
}

/// Volume fraction of the axis-aligned box `[cell_min, cell_min + cell_size]`
/// lying on the side `(x - a) . n <= l` of the plane.
pub fn truncated_volume(cell_min: &Vec3, cell_size: &Vec3, n: &Vec3, a: &Vec3, l: f64) -> f64 {
    // Re-anchor at the corner with the smallest projection; relative to it
    // every box point has non-negative projected distance.
    let low = Vec3::from_fn(|i, _| {
        if n[i] >= 0.0 {
            cell_min[i]
        } else {
            cell_min[i] + cell_size[i]
        }
    });
    let shifted = l - (low - a).dot(n);
    let m = [
        n[0].abs() * cell_size[0],
        n[1].abs() * cell_size[1],
        n[2].abs() * cell_size[2],
    ];
    unit_cube_fraction(m, shifted)
}

/// Fraction of the unit cube with `m . y <= alpha`, all `m >= 0`.
fn unit_cube_fraction(m: [f64; 3], alpha: f64) -> f64 {
    let total = m[0] + m[1] + m[2];
    if !(total > 0.0) {
        return if alpha >= 0.0 { 1.0 } else { 0.0 };
    }
    if alpha <= 0.0 {
        return 0.0;
    }
    if alpha >= total {
        return 1.0;
    }
    let alpha = alpha / total;
    let mut ms: Vec<f64> = m
        .iter()
        .map(|v| v / total)
        .filter(|v| *v >= NEGLIGIBLE_COMPONENT)
        .collect();
    // renormalise after dropping negligible terms
    let kept: f64 = ms.iter().sum();
    ms.iter_mut().for_each(|v| *v /= kept);
    let alpha = alpha / kept;

    let pos = |x: f64| x.max(0.0);
    let v = match ms.as_slice() {
        [m1] => alpha / m1,
        [m1, m2] => {
            let s = pos(alpha).powi(2) - pos(alpha - m1).powi(2) - pos(alpha - m2).powi(2)
                + pos(alpha - m1 - m2).powi(2);
            s / (2.0 * m1 * m2)
        }
        [m1, m2, m3] => {
            let s = pos(alpha).powi(3) - pos(alpha - m1).powi(3) - pos(alpha - m2).powi(3)
                - pos(alpha - m3).powi(3)
                + pos(alpha - m1 - m2).powi(3)
                + pos(alpha - m1 - m3).powi(3)
                + pos(alpha - m2 - m3).powi(3)
                - pos(alpha - m1 - m2 - m3).powi(3);
            s / (6.0 * m1 * m2 * m3)
        }
        _ => unreachable!("at least one normal component survives normalisation"),
    };
    v.clamp(0.0, 1.0)
}

/// Cell corner with the smallest projection onto `n`; ties go to the lowest
/// corner index (bit 0 = x, bit 1 = y, bit 2 = z).
pub fn attachment_corner(cell_min: &Vec3, cell_size: &Vec3, n: &Vec3) -> Vec3 {
    let mut best = *cell_min;
    let mut best_proj = best.dot(n);
    for k in 1..8 {
        let corner = Vec3::from_fn(|a, _| cell_min[a] + cell_size[a] * ((k >> a) & 1) as f64);
        let proj = corner.dot(n);
        if proj < best_proj {
            best = corner;
            best_proj = proj;
        }
    }
    best
}

/// Plane offset `l` such that the liquid side holds `fraction` of the cell.
pub fn solve_offset(cell_min: &Vec3, cell_size: &Vec3, n: &Vec3, a: &Vec3, fraction: f64) -> f64 {
    let extent: f64 = (0..3).map(|i| n[i].abs() * cell_size[i]).sum();
    let (mut lo, mut hi) = (0.0, extent);
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if truncated_volume(cell_min, cell_size, n, a, mid) < fraction {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Reconstruct the interface patch of a mixed cell from the local gradient.
pub fn reconstruct_patch<S: StepAccess + ?Sized>(step: &S, cell: CellIndex) -> Result<PlicPatch> {
    let f = step.fraction_at(cell);
    let grad = gradient_f(step, cell);
    let norm = grad.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::DegenerateNormal { cell });
    }
    let normal = -grad / norm;
    let grid = step.grid();
    let (cmin, size) = (grid.cell_min(cell), grid.cell_size(cell));
    let corner = attachment_corner(&cmin, &size, &normal);
    let offset = solve_offset(&cmin, &size, &normal, &corner, f);
    Ok(PlicPatch {
        cell,
        normal,
        corner,
        offset,
    })
}

/// Classify a cell. Cells with `f <= tau` are gas, `f >= 1` liquid, and mixed
/// cells carry their patch. When the gradient vanishes in a mixed cell the
/// whole cell counts as liquid iff `f > 0.5`.
pub fn cell_phase<S: StepAccess + ?Sized>(step: &S, cell: CellIndex, tau: f64) -> CellPhase {
    let f = step.fraction_at(cell);
    if f <= tau {
        CellPhase::Gas
    } else if f >= 1.0 {
        CellPhase::Liquid
    } else {
        match reconstruct_patch(step, cell) {
            Ok(p) => CellPhase::Interface(p),
            Err(_) if f > 0.5 => CellPhase::Liquid,
            Err(_) => CellPhase::Gas,
        }
    }
}

/// Phase test for a point; points outside the domain are never liquid.
pub fn is_liquid<S: StepAccess + ?Sized>(step: &S, x: &Vec3, tau: f64) -> bool {
    match step.grid().locate_cell(x) {
        Some(cell) => cell_phase(step, cell, tau).contains(x),
        None => false,
    }
}

/// Move `x` along the segment towards the attachment corner until it meets
/// the patch plane.
pub fn project_to_patch(patch: &PlicPatch, x: &Vec3) -> Result<Vec3> {
    let depth = patch.depth(x);
    if !(depth > 0.0) || depth < patch.offset * (1.0 - 1e-12) - 1e-300 {
        return Err(Error::NotOutsidePatch);
    }
    if depth == patch.offset {
        return Ok(*x);
    }
    let s = patch.offset / depth;
    Ok(patch.corner + (x - patch.corner) * s)
}
