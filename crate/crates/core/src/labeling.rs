//! Connected components of the `f > tau` cell mask under face connectivity,
//! computed serially or per partition with a union-find merge.
//!
//! Labels are dense and ordered by the smallest flat index of each component,
//! so both variants produce identical arrays.

use std::collections::VecDeque;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{CellBox, CellIndex, RectilinearGrid, TimeStep};

pub const BACKGROUND: i32 = -1;

/// Per-cell feature id, `-1` for background.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelField {
    grid: Arc<RectilinearGrid>,
    labels: Vec<i32>,
    count: usize,
}

impl LabelField {
    pub fn new(grid: Arc<RectilinearGrid>, labels: Vec<i32>, count: usize) -> Result<Self> {
        if labels.len() != grid.cell_count() {
            return Err(Error::InvalidField(format!(
                "label array has {} entries for {} cells",
                labels.len(),
                grid.cell_count()
            )));
        }
        Ok(Self { grid, labels, count })
    }

    pub fn grid(&self) -> &Arc<RectilinearGrid> {
        &self.grid
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    /// Number of components.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn get(&self, c: CellIndex) -> i32 {
        self.labels[self.grid.flat_index(c)]
    }

    /// Number of cells carrying each label.
    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.count];
        for &l in &self.labels {
            if l >= 0 {
                out[l as usize] += 1;
            }
        }
        out
    }
}

fn mask_of(step: &TimeStep, tau: f64) -> Vec<bool> {
    step.fraction().values().par_iter().map(|&f| f > tau).collect()
}

#[inline]
fn face_neighbors(c: CellIndex, bx: &CellBox) -> impl Iterator<Item = CellIndex> + '_ {
    (0..6).filter_map(move |n| {
        let a = n / 2;
        let mut d = c;
        if n % 2 == 0 {
            if d[a] == bx.min[a] {
                return None;
            }
            d[a] -= 1;
        } else {
            if d[a] + 1 >= bx.max[a] {
                return None;
            }
            d[a] += 1;
        }
        Some(d)
    })
}

/// Breadth-first labeling of `mask` restricted to `bx`. Returns box-local
/// labels (x-fastest over the box) in order of first discovery, which is the
/// order of each component's smallest box-local index.
fn label_box(mask: &[bool], dims: [usize; 3], bx: &CellBox) -> (Vec<i32>, usize) {
    let ext: [usize; 3] = std::array::from_fn(|a| bx.max[a] - bx.min[a]);
    let local = |c: CellIndex| (c[0] - bx.min[0]) + ext[0] * ((c[1] - bx.min[1]) + ext[1] * (c[2] - bx.min[2]));
    let global = |c: CellIndex| c[0] + dims[0] * (c[1] + dims[1] * c[2]);
    let mut labels = vec![BACKGROUND; bx.cell_count()];
    let mut next = 0i32;
    let mut queue = VecDeque::new();
    for c in bx.cells() {
        if !mask[global(c)] || labels[local(c)] != BACKGROUND {
            continue;
        }
        labels[local(c)] = next;
        queue.push_back(c);
        while let Some(p) = queue.pop_front() {
            for q in face_neighbors(p, bx) {
                let lq = local(q);
                if mask[global(q)] && labels[lq] == BACKGROUND {
                    labels[lq] = next;
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }
    (labels, next as usize)
}

/// Serial flood-fill labeling.
pub fn label_features(step: &TimeStep, tau: f64) -> LabelField {
    let grid = step.grid_arc().clone();
    let mask = mask_of(step, tau);
    label_mask(grid, &mask)
}

/// Label an explicit cell mask.
pub fn label_mask(grid: Arc<RectilinearGrid>, mask: &[bool]) -> LabelField {
    let dims = grid.dims();
    let (labels, count) = label_box(mask, dims, &CellBox::whole(&grid));
    LabelField { grid, labels, count }
}

/// Disjoint-set forest with path halving and union by smaller root, so the
/// representative of a set is always its smallest element.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Tiling of the grid into `counts[0] x counts[1] x counts[2]` blocks with a
/// ghost halo of `ghost` cells around each block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionLayout {
    counts: [usize; 3],
    dims: [usize; 3],
    ghost: usize,
    splits: [Vec<usize>; 3],
}

impl PartitionLayout {
    pub fn new(dims: [usize; 3], counts: [usize; 3], ghost: usize) -> Result<Self> {
        for a in 0..3 {
            if counts[a] == 0 || counts[a] > dims[a] {
                return Err(Error::InvalidConfig(format!(
                    "axis {a}: {} partitions for {} cells",
                    counts[a], dims[a]
                )));
            }
        }
        if ghost < 2 {
            return Err(Error::InvalidConfig(format!(
                "ghost width must be at least 2, got {ghost}"
            )));
        }
        // near-equal blocks, the first `dims % counts` one cell larger
        let splits = std::array::from_fn(|a| {
            let (n, p) = (dims[a], counts[a]);
            let mut edges = Vec::with_capacity(p + 1);
            let mut acc = 0;
            edges.push(0);
            for i in 0..p {
                acc += n / p + usize::from(i < n % p);
                edges.push(acc);
            }
            edges
        });
        Ok(Self { counts, dims, ghost, splits })
    }

    /// Single partition covering the grid.
    pub fn single(dims: [usize; 3], ghost: usize) -> Result<Self> {
        Self::new(dims, [1, 1, 1], ghost)
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn ghost(&self) -> usize {
        self.ghost
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn coords(&self, p: usize) -> [usize; 3] {
        let [px, py, _] = self.counts;
        [p % px, (p / px) % py, p / (px * py)]
    }

    /// Core cells of partition `p`.
    pub fn core(&self, p: usize) -> CellBox {
        let q = self.coords(p);
        CellBox {
            min: std::array::from_fn(|a| self.splits[a][q[a]]),
            max: std::array::from_fn(|a| self.splits[a][q[a] + 1]),
        }
    }

    /// Core plus ghost halo of partition `p`, clipped to the grid.
    pub fn halo(&self, p: usize) -> CellBox {
        self.core(p).expanded(self.ghost, self.dims)
    }

    /// Partition whose core contains `c`.
    pub fn owner(&self, c: CellIndex) -> usize {
        let q: [usize; 3] =
            std::array::from_fn(|a| self.splits[a].partition_point(|&e| e <= c[a]) - 1);
        q[0] + self.counts[0] * (q[1] + self.counts[1] * q[2])
    }

    /// Partitions whose core shares a face, edge or corner with `p`'s core.
    pub fn neighbors(&self, p: usize) -> Vec<usize> {
        let q = self.coords(p);
        let mut out = Vec::new();
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let r = [q[0] as i64 + dx, q[1] as i64 + dy, q[2] as i64 + dz];
                    if (dx, dy, dz) == (0, 0, 0)
                        || (0..3).any(|a| r[a] < 0 || r[a] >= self.counts[a] as i64)
                    {
                        continue;
                    }
                    out.push(
                        r[0] as usize
                            + self.counts[0] * (r[1] as usize + self.counts[1] * r[2] as usize),
                    );
                }
            }
        }
        out
    }
}

/// Labels of one partition's core, numbered locally.
#[derive(Clone, Debug)]
pub struct LocalLabels {
    pub partition: usize,
    pub core: CellBox,
    pub labels: Vec<i32>,
    pub count: usize,
    /// Smallest global flat index of each local component.
    pub min_flat: Vec<usize>,
}

impl LocalLabels {
    pub fn get(&self, c: CellIndex) -> i32 {
        let b = &self.core;
        let ex = b.max[0] - b.min[0];
        let ey = b.max[1] - b.min[1];
        self.labels[(c[0] - b.min[0]) + ex * ((c[1] - b.min[1]) + ey * (c[2] - b.min[2]))]
    }
}

/// Label the core of partition `p` without looking at other partitions.
pub fn label_partition(mask: &[bool], layout: &PartitionLayout, p: usize) -> LocalLabels {
    let core = layout.core(p);
    let dims = layout.dims();
    let (labels, count) = label_box(mask, dims, &core);
    let mut min_flat = vec![usize::MAX; count];
    for (c, &l) in core.cells().zip(&labels) {
        if l >= 0 {
            let flat = c[0] + dims[0] * (c[1] + dims[1] * c[2]);
            let m = &mut min_flat[l as usize];
            *m = (*m).min(flat);
        }
    }
    LocalLabels {
        partition: p,
        core,
        labels,
        count,
        min_flat,
    }
}

/// A pair of local components, `(partition, local label)`, that touch across
/// a partition face.
pub type Equivalence = ((usize, i32), (usize, i32));

/// Equivalences across the upper faces of partition `p`'s core. Reads only
/// `p`'s labels and the adjacent layer of its upper neighbours, which
/// `local` must resolve.
pub fn boundary_equivalences<'a>(
    layout: &PartitionLayout,
    p: usize,
    local: impl Fn(usize) -> &'a LocalLabels,
) -> Vec<Equivalence> {
    let core = layout.core(p);
    let dims = layout.dims();
    let mut out = Vec::new();
    for a in 0..3 {
        if core.max[a] >= dims[a] {
            continue;
        }
        let mut face = core;
        face.min[a] = core.max[a] - 1;
        for c in face.cells() {
            let mut d = c;
            d[a] += 1;
            let lc = local(p).get(c);
            if lc < 0 {
                continue;
            }
            let q = layout.owner(d);
            let ld = local(q).get(d);
            if ld >= 0 {
                out.push(((p, lc), (q, ld)));
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Resolve local labels into canonical global labels. `min_flat[p]` lists,
/// per local component of partition `p`, its smallest global flat index.
/// Returns, per partition, the map from local to global label, plus the
/// global component count.
pub fn merge_local_labels(
    min_flat: &[&[usize]],
    equivalences: &[Equivalence],
) -> (Vec<Vec<i32>>, usize) {
    let mut offsets = Vec::with_capacity(min_flat.len() + 1);
    offsets.push(0usize);
    for l in min_flat {
        offsets.push(offsets.last().unwrap() + l.len());
    }
    let total = *offsets.last().unwrap();
    let mut uf = UnionFind::new(total);
    for &((p, a), (q, b)) in equivalences {
        uf.union(offsets[p] + a as usize, offsets[q] + b as usize);
    }
    let mut root_min = vec![usize::MAX; total];
    for (p, l) in min_flat.iter().enumerate() {
        for (i, &m) in l.iter().enumerate() {
            let r = uf.find(offsets[p] + i);
            root_min[r] = root_min[r].min(m);
        }
    }
    let mut roots: Vec<usize> = (0..total).filter(|&i| uf.find(i) == i).collect();
    roots.sort_unstable_by_key(|&r| root_min[r]);
    let mut dense = vec![BACKGROUND; total];
    for (g, &r) in roots.iter().enumerate() {
        dense[r] = g as i32;
    }
    let maps = min_flat
        .iter()
        .enumerate()
        .map(|(p, l)| {
            (0..l.len())
                .map(|i| dense[uf.find(offsets[p] + i)])
                .collect()
        })
        .collect();
    (maps, roots.len())
}

/// Partitioned labeling: independent local passes, a face-equivalence merge
/// and a parallel relabel.
pub fn label_features_partitioned(step: &TimeStep, tau: f64, layout: &PartitionLayout) -> LabelField {
    let grid = step.grid_arc().clone();
    let mask = mask_of(step, tau);
    label_mask_partitioned(grid, &mask, layout)
}

pub fn label_mask_partitioned(
    grid: Arc<RectilinearGrid>,
    mask: &[bool],
    layout: &PartitionLayout,
) -> LabelField {
    let locals: Vec<LocalLabels> = (0..layout.len())
        .into_par_iter()
        .map(|p| label_partition(mask, layout, p))
        .collect();
    let equivalences: Vec<Equivalence> = (0..layout.len())
        .flat_map(|p| boundary_equivalences(layout, p, |q| &locals[q]))
        .collect();
    let min_flat: Vec<&[usize]> = locals.iter().map(|l| l.min_flat.as_slice()).collect();
    let (maps, count) = merge_local_labels(&min_flat, &equivalences);
    let labels = (0..grid.cell_count())
        .into_par_iter()
        .map(|flat| {
            let c = grid.cell_from_flat(flat);
            let p = layout.owner(c);
            let l = locals[p].get(c);
            if l < 0 {
                BACKGROUND
            } else {
                maps[p][l as usize]
            }
        })
        .collect();
    LabelField { grid, labels, count }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::CellField;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn grid(n: [usize; 3]) -> Arc<RectilinearGrid> {
        Arc::new(
            RectilinearGrid::uniform(n, crate::grid::Vec3::zeros(), crate::grid::Vec3::repeat(1.0))
                .unwrap(),
        )
    }

    fn step_from_mask(g: &Arc<RectilinearGrid>, mask: &[bool]) -> TimeStep {
        let f = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        TimeStep::new(
            0.0,
            CellField::new(g.clone(), 1, f).unwrap(),
            CellField::zeros(g.clone(), 3),
        )
        .unwrap()
    }

    /// Independent oracle: union every face-adjacent pair of set cells, then
    /// number roots by their smallest member.
    fn union_find_oracle(dims: [usize; 3], mask: &[bool]) -> (Vec<i32>, usize) {
        let n = mask.len();
        let mut uf = UnionFind::new(n);
        let idx = |i: usize, j: usize, k: usize| i + dims[0] * (j + dims[1] * k);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let a = idx(i, j, k);
                    if !mask[a] {
                        continue;
                    }
                    if i + 1 < dims[0] && mask[idx(i + 1, j, k)] {
                        uf.union(a, idx(i + 1, j, k));
                    }
                    if j + 1 < dims[1] && mask[idx(i, j + 1, k)] {
                        uf.union(a, idx(i, j + 1, k));
                    }
                    if k + 1 < dims[2] && mask[idx(i, j, k + 1)] {
                        uf.union(a, idx(i, j, k + 1));
                    }
                }
            }
        }
        // roots are smallest members, so scanning in order numbers canonically
        let mut dense = vec![-1i32; n];
        let mut count = 0;
        let mut out = vec![-1i32; n];
        for i in 0..n {
            if mask[i] {
                let r = uf.find(i);
                if dense[r] < 0 {
                    dense[r] = count;
                    count += 1;
                }
                out[i] = dense[r];
            }
        }
        (out, count as usize)
    }

    fn random_mask(rng: &mut StdRng, n: usize, p: f64) -> Vec<bool> {
        (0..n).map(|_| rng.random_bool(p)).collect()
    }

    #[test]
    fn empty_mask_has_no_components() {
        let g = grid([4, 4, 4]);
        let lf = label_features(&step_from_mask(&g, &[false; 64]), 0.0);
        assert_eq!(lf.count(), 0);
        assert!(lf.labels().iter().all(|&l| l == BACKGROUND));
    }

    #[test]
    fn two_separate_blobs_get_two_labels() {
        let g = grid([6, 6, 6]);
        let mut mask = vec![false; 216];
        for c in [[1, 1, 1], [1, 2, 1], [4, 4, 4], [4, 4, 3]] {
            mask[g.flat_index(c)] = true;
        }
        let lf = label_features(&step_from_mask(&g, &mask), 0.0);
        assert_eq!(lf.count(), 2);
        assert_eq!(lf.get([1, 1, 1]), 0);
        assert_eq!(lf.get([1, 2, 1]), 0);
        assert_eq!(lf.get([4, 4, 3]), 1);
        assert_eq!(lf.sizes(), vec![2, 2]);
    }

    #[test]
    fn diagonal_contact_does_not_connect() {
        let g = grid([2, 2, 1]);
        let mask = [true, false, false, true];
        let lf = label_features(&step_from_mask(&g, &mask), 0.0);
        assert_eq!(lf.count(), 2);
    }

    #[test]
    fn threshold_is_strict() {
        let g = grid([3, 1, 1]);
        let s = TimeStep::new(
            0.0,
            CellField::new(g.clone(), 1, vec![0.3, 0.2, 0.5]).unwrap(),
            CellField::zeros(g.clone(), 3),
        )
        .unwrap();
        let lf = label_features(&s, 0.3);
        assert_eq!(lf.labels(), &[-1, -1, 0]);
    }

    #[test]
    fn random_masks_match_union_find_oracle() {
        let mut rng = StdRng::seed_from_u64(11);
        let dims = [32, 32, 32];
        let g = grid(dims);
        for p in [0.2, 0.3, 0.5] {
            let mask = random_mask(&mut rng, g.cell_count(), p);
            let lf = label_mask(g.clone(), &mask);
            let (oracle, count) = union_find_oracle(dims, &mask);
            assert_eq!(lf.count(), count);
            assert_eq!(lf.labels(), &oracle[..]);
        }
    }

    #[test]
    fn single_partition_equals_serial() {
        let mut rng = StdRng::seed_from_u64(3);
        let g = grid([10, 7, 5]);
        let mask = random_mask(&mut rng, g.cell_count(), 0.4);
        let layout = PartitionLayout::single(g.dims(), 2).unwrap();
        assert_eq!(label_mask_partitioned(g.clone(), &mask, &layout), label_mask(g, &mask));
    }

    #[test]
    fn cross_spanning_four_partitions_merges() {
        let g = grid([8, 8, 2]);
        let mut mask = vec![false; g.cell_count()];
        for i in 0..8 {
            mask[g.flat_index([i, 4, 0])] = true;
            mask[g.flat_index([3, i, 1])] = true;
        }
        mask[g.flat_index([3, 4, 0])] = true;
        let layout = PartitionLayout::new(g.dims(), [2, 2, 1], 2).unwrap();
        let part = label_mask_partitioned(g.clone(), &mask, &layout);
        assert_eq!(part.count(), 1);
        assert_eq!(part, label_mask(g, &mask));
    }

    #[test]
    fn layout_tiles_grid_exactly() {
        let layout = PartitionLayout::new([7, 5, 3], [3, 2, 2], 2).unwrap();
        let mut owners = vec![0usize; 7 * 5 * 3];
        for p in 0..layout.len() {
            for c in layout.core(p).cells() {
                owners[c[0] + 7 * (c[1] + 5 * c[2])] += 1;
                assert_eq!(layout.owner(c), p);
            }
            let h = layout.halo(p);
            assert!((0..3).all(|a| h.max[a] <= layout.dims()[a]));
        }
        assert!(owners.iter().all(|&o| o == 1));
        assert!(PartitionLayout::new([4, 4, 4], [5, 1, 1], 2).is_err());
        assert!(PartitionLayout::new([4, 4, 4], [1, 1, 1], 1).is_err());
        assert_eq!(layout.neighbors(0).len(), 7);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn partitioned_matches_serial(seed in any::<u64>(),
                                      nx in 2usize..12, ny in 2usize..12, nz in 2usize..12,
                                      px in 1usize..4, py in 1usize..4, pz in 1usize..4,
                                      p in 0.1f64..0.7) {
            let g = grid([nx, ny, nz]);
            let mut rng = StdRng::seed_from_u64(seed);
            let mask = random_mask(&mut rng, g.cell_count(), p);
            let layout = PartitionLayout::new(g.dims(), [px.min(nx), py.min(ny), pz.min(nz)], 2).unwrap();
            prop_assert_eq!(label_mask_partitioned(g.clone(), &mask, &layout), label_mask(g, &mask));
        }
    }
}
