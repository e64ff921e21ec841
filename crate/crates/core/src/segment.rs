//! Particle labels, volumetric contributions and split detection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::advect::{decode_key, seeds_per_cell, Particle};
use crate::grid::{gradient_f, sample_fraction, RectilinearGrid, StepAccess, Vec3};
use crate::labeling::{LabelField, BACKGROUND};

/// Longest walk, in cells, from an unlabeled cell along the fraction gradient.
pub const GRADIENT_WALK_CELLS: usize = 8;

/// Label of every particle at one time, in particle (key) order.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedLabeling {
    pub time: f64,
    pub keys: Vec<u64>,
    pub labels: Vec<i32>,
}

impl SeedLabeling {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Build from unordered `(key, label)` pairs.
    pub fn from_pairs(time: f64, mut pairs: Vec<(u64, i32)>) -> Self {
        pairs.sort_unstable_by_key(|p| p.0);
        let (keys, labels) = pairs.into_iter().unzip();
        Self { time, keys, labels }
    }
}

/// Feature label at `x`: the label of the containing cell, or for an
/// unlabeled cell where the interpolated fraction still exceeds `tau`, the
/// first labeled cell met walking up the fraction gradient.
pub fn label_at<S: StepAccess + ?Sized>(labels: &LabelField, step: &S, x: &Vec3, tau: f64) -> i32 {
    let grid = step.grid();
    let Some(cell) = grid.locate_cell(x) else {
        return BACKGROUND;
    };
    let l = labels.get(cell);
    if l >= 0 || sample_fraction(step, x) <= tau {
        return l;
    }
    let g = gradient_f(step, cell);
    let norm = g.norm();
    if !(norm > 0.0) {
        return BACKGROUND;
    }
    let dir = g / norm;
    let mut p = *x;
    let mut c = cell;
    for _ in 0..GRADIENT_WALK_CELLS {
        let h = grid.cell_size(c).min();
        p += dir * h;
        match grid.locate_cell(&p) {
            Some(next) => {
                c = next;
                let l = labels.get(c);
                if l >= 0 {
                    return l;
                }
            }
            None => break,
        }
    }
    BACKGROUND
}

/// Labels of the given particles; dead particles get `-1`.
pub fn assign_labels<S: StepAccess + ?Sized>(
    particles: &[Particle],
    labels: &LabelField,
    step: &S,
    tau: f64,
) -> Vec<i32> {
    particles
        .par_iter()
        .map(|p| {
            if p.alive {
                label_at(labels, step, &p.position, tau)
            } else {
                BACKGROUND
            }
        })
        .collect()
}

/// [`assign_labels`] wrapped into a [`SeedLabeling`].
pub fn seed_labeling<S: StepAccess + ?Sized>(
    particles: &[Particle],
    labels: &LabelField,
    step: &S,
    tau: f64,
) -> SeedLabeling {
    SeedLabeling {
        time: step.time(),
        keys: particles.iter().map(|p| p.key).collect(),
        labels: assign_labels(particles, labels, step, tau),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContributionRow {
    pub initial: i32,
    pub target: i32,
    pub count: usize,
    pub volume: f64,
}

/// Seeds and volume flowing from each initial feature into each final one.
#[derive(Clone, Debug, PartialEq)]
pub struct ContributionTable {
    pub rows: Vec<ContributionRow>,
}

impl ContributionTable {
    /// Group seeds by `(initial label, final label)`. Each seed stands for
    /// an equal share of its seed cell's volume.
    pub fn build(
        initial: &SeedLabeling,
        last: &SeedLabeling,
        grid: &RectilinearGrid,
        refinement: u32,
    ) -> Self {
        assert_eq!(initial.keys, last.keys, "labelings of different particle sets");
        let nc = seeds_per_cell(refinement) as f64;
        let volumes: Vec<f64> = initial
            .keys
            .par_iter()
            .map(|&k| grid.cell_volume(decode_key(grid, refinement, k).0) / nc)
            .collect();
        // sequential in key order so the sums are reproducible
        let mut acc: BTreeMap<(i32, i32), (usize, f64)> = BTreeMap::new();
        for ((&i, &j), v) in initial.labels.iter().zip(&last.labels).zip(&volumes) {
            let e = acc.entry((i, j)).or_insert((0, 0.0));
            e.0 += 1;
            e.1 += v;
        }
        Self {
            rows: acc
                .into_iter()
                .map(|((initial, target), (count, volume))| ContributionRow {
                    initial,
                    target,
                    count,
                    volume,
                })
                .collect(),
        }
    }

    pub fn row(&self, initial: i32, target: i32) -> Option<&ContributionRow> {
        self.rows
            .iter()
            .find(|r| r.initial == initial && r.target == target)
    }

    /// Seed count per initial feature summed over all targets.
    pub fn seeds_from(&self, initial: i32) -> usize {
        self.rows
            .iter()
            .filter(|r| r.initial == initial)
            .map(|r| r.count)
            .sum()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("i\tj\tcount\tvolume\n");
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", r.initial, r.target, r.count, r.volume);
        }
        s
    }
}

/// A group of seeds that shared one segment at `t_k` but carry several
/// labels at `t_{k+1}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitEvent {
    pub initial: i32,
    pub previous: i32,
    /// Distinct valid labels at `t_{k+1}`, ascending.
    pub next: Vec<i32>,
}

/// Report every `(initial label, label at t_k)` group whose seeds carry at
/// least two distinct valid labels at `t_{k+1}`.
pub fn detect_splits(
    initial: &SeedLabeling,
    prev: &SeedLabeling,
    next: &SeedLabeling,
) -> Vec<SplitEvent> {
    assert_eq!(prev.keys, next.keys, "labelings of different particle sets");
    let mut groups: BTreeMap<(i32, i32), BTreeSet<i32>> = BTreeMap::new();
    for ((&i, &p), &n) in initial.labels.iter().zip(&prev.labels).zip(&next.labels) {
        if p < 0 {
            continue;
        }
        let e = groups.entry((i, p)).or_default();
        if n >= 0 {
            e.insert(n);
        }
    }
    groups
        .into_iter()
        .filter(|(_, s)| s.len() >= 2)
        .map(|((initial, previous), s)| SplitEvent {
            initial,
            previous,
            next: s.into_iter().collect(),
        })
        .collect()
}
