//! Marching cubes on binary node lattices.
//!
//! The case table is derived at startup from one rule: on a face whose two
//! inside corners are diagonal, the inside corners are kept apart. Since the
//! rule depends only on a face's own corners, neighbouring cubes agree on
//! every shared face and the extracted surface is closed. Vertices sit at
//! edge midpoints and are shared through a global edge key.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::grid::{RectilinearGrid, Vec3};

/// Corner `m` of the unit cube has offset `(m & 1, m >> 1 & 1, m >> 2 & 1)`.
#[inline]
fn corner_offset(m: usize) -> [usize; 3] {
    [m & 1, (m >> 1) & 1, (m >> 2) & 1]
}

/// The twelve cube edges as `(lower corner, axis)`.
pub(crate) const EDGES: [(usize, usize); 12] = [
    (0, 0),
    (2, 0),
    (4, 0),
    (6, 0),
    (0, 1),
    (1, 1),
    (4, 1),
    (5, 1),
    (0, 2),
    (1, 2),
    (2, 2),
    (3, 2),
];

fn edge_between(a: usize, b: usize) -> usize {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let axis = (hi - lo).trailing_zeros() as usize;
    EDGES
        .iter()
        .position(|&e| e == (lo, axis))
        .expect("corners are not adjacent")
}

/// Faces `(axis, side)` containing edge `e`.
fn edge_faces(e: usize) -> [(usize, usize); 2] {
    let (c, axis) = EDGES[e];
    let o = corner_offset(c);
    let others = [(axis + 1) % 3, (axis + 2) % 3];
    [(others[0], o[others[0]]), (others[1], o[others[1]])]
}

/// Corners of face `(axis, side)` counter-clockwise seen from outside.
fn face_corners(axis: usize, side: usize) -> [usize; 4] {
    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
    let at = |a: usize, b: usize| (side << axis) | (a << u) | (b << v);
    if side == 1 {
        [at(0, 0), at(1, 0), at(1, 1), at(0, 1)]
    } else {
        [at(0, 0), at(0, 1), at(1, 1), at(1, 0)]
    }
}

/// One triangle of a case: edge vertices, or `None` for the loop centre.
pub(crate) type CaseTriangle = [Option<usize>; 3];

#[derive(Debug)]
pub(crate) struct CaseTable {
    /// Per configuration, the loops as edge lists and their triangles. Each
    /// triangle's centre vertex, if any, belongs to loop `tri.0`.
    pub cases: Vec<Vec<(usize, CaseTriangle)>>,
    pub loops: Vec<Vec<Vec<usize>>>,
}

fn build_case(config: usize) -> (Vec<Vec<usize>>, Vec<(usize, CaseTriangle)>) {
    let inside = |m: usize| config >> m & 1 == 1;
    // directed face segments, inside on the left seen from outside
    let mut next_of: HashMap<usize, usize> = HashMap::new();
    for axis in 0..3 {
        for side in 0..2 {
            let c = face_corners(axis, side);
            for k in 0..4 {
                let (a, b) = (c[k], c[(k + 1) % 4]);
                if !(inside(a) && !inside(b)) {
                    continue;
                }
                // walk back over the inside run ending at `a` to its entry edge
                let mut j = k;
                while inside(c[(j + 3) % 4]) {
                    j = (j + 3) % 4;
                    if j == k {
                        break;
                    }
                }
                let entry = edge_between(c[(j + 3) % 4], c[j]);
                next_of.insert(edge_between(a, b), entry);
            }
        }
    }
    let mut loops = Vec::new();
    let mut starts: Vec<usize> = next_of.keys().copied().collect();
    starts.sort_unstable();
    let mut used = [false; 12];
    for s in starts {
        if used[s] {
            continue;
        }
        let mut lp = vec![s];
        used[s] = true;
        let mut e = next_of[&s];
        while e != s {
            used[e] = true;
            lp.push(e);
            e = next_of[&e];
        }
        loops.push(lp);
    }

    let shares_face = |a: usize, b: usize| {
        let (fa, fb) = (edge_faces(a), edge_faces(b));
        fa.iter().any(|f| fb.contains(f))
    };
    let mut tris = Vec::new();
    for (li, lp) in loops.iter().enumerate() {
        let n = lp.len();
        if n == 3 {
            tris.push((li, [Some(lp[0]), Some(lp[1]), Some(lp[2])]));
            continue;
        }
        // a fan apex whose diagonals never run along a cube face keeps every
        // diagonal private to this cube
        let apex = (0..n).find(|&a| {
            (2..n - 1).all(|d| !shares_face(lp[a], lp[(a + d) % n]))
        });
        match apex {
            Some(a) => {
                for d in 1..n - 1 {
                    tris.push((li, [Some(lp[a]), Some(lp[(a + d) % n]), Some(lp[(a + d + 1) % n])]));
                }
            }
            None => {
                for k in 0..n {
                    tris.push((li, [None, Some(lp[k]), Some(lp[(k + 1) % n])]));
                }
            }
        }
    }
    (loops, tris)
}

fn edge_midpoint_unit(e: usize) -> Vec3 {
    let (c, axis) = EDGES[e];
    let o = corner_offset(c);
    let mut p = Vec3::new(o[0] as f64, o[1] as f64, o[2] as f64);
    p[axis] += 0.5;
    p
}

pub(crate) fn case_table() -> &'static CaseTable {
    static TABLE: OnceLock<CaseTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut cases = Vec::with_capacity(256);
        let mut loops = Vec::with_capacity(256);
        for config in 0..256 {
            let (l, t) = build_case(config);
            loops.push(l);
            cases.push(t);
        }
        // orient so normals point from inside to outside, judged on the
        // single-corner case
        let [_, a, b] = cases[1][0].1.map(|e| e.unwrap());
        let c = cases[1][0].1[0].unwrap();
        let (pa, pb, pc) = (edge_midpoint_unit(c), edge_midpoint_unit(a), edge_midpoint_unit(b));
        let normal = (pb - pa).cross(&(pc - pa));
        if normal.dot(&(pa + pb + pc)) < 0.0 {
            for case in cases.iter_mut() {
                for t in case.iter_mut() {
                    t.1.swap(1, 2);
                }
            }
        }
        CaseTable { cases, loops }
    })
}

/// Node classification on an indicator lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeValue {
    Outside,
    Inside,
    /// Outer or foreign node; geometry touching it is dropped.
    Invalid,
}

/// Coordinate of seed-lattice index `l` along axis `a` at refinement `r`.
/// Indices beyond the grid continue with the spacing of the edge cell.
pub fn lattice_coord(grid: &RectilinearGrid, r: u32, a: usize, l: i64) -> f64 {
    let nodes = grid.axis(a);
    let n = (nodes.len() - 1) as i64;
    let ns = 1i64 << r;
    let (cell, sub) = if l < 0 {
        (0, l)
    } else if l >= n * ns {
        (n - 1, l - (n - 1) * ns)
    } else {
        (l / ns, l % ns)
    };
    let c = cell as usize;
    nodes[c] + (sub as f64 + 0.5) * (nodes[c + 1] - nodes[c]) / ns as f64
}

/// Box of seed-lattice nodes with a value per node.
#[derive(Clone, Debug)]
pub struct IndicatorGrid {
    /// Lattice index of the first node on each axis.
    pub origin: [i64; 3],
    pub dims: [usize; 3],
    pub values: Vec<NodeValue>,
    pub coords: [Vec<f64>; 3],
}

impl IndicatorGrid {
    /// Lattice box covering `nodes` plus `pad` nodes on every side, all set
    /// to `fill`.
    pub fn covering(
        grid: &RectilinearGrid,
        r: u32,
        nodes: impl IntoIterator<Item = [i64; 3]>,
        pad: i64,
        fill: NodeValue,
    ) -> Option<Self> {
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        let mut any = false;
        for n in nodes {
            any = true;
            for a in 0..3 {
                lo[a] = lo[a].min(n[a]);
                hi[a] = hi[a].max(n[a]);
            }
        }
        if !any {
            return None;
        }
        let origin: [i64; 3] = std::array::from_fn(|a| lo[a] - pad);
        let dims: [usize; 3] = std::array::from_fn(|a| (hi[a] - lo[a] + 1 + 2 * pad) as usize);
        let coords = std::array::from_fn(|a| {
            (0..dims[a] as i64)
                .map(|i| lattice_coord(grid, r, a, origin[a] + i))
                .collect()
        });
        Some(Self {
            origin,
            dims,
            values: vec![fill; dims.iter().product()],
            coords,
        })
    }

    #[inline]
    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn set(&mut self, node: [i64; 3], v: NodeValue) {
        let l: [usize; 3] = std::array::from_fn(|a| (node[a] - self.origin[a]) as usize);
        let i = self.index(l[0], l[1], l[2]);
        self.values[i] = v;
    }

    pub fn get(&self, l: [usize; 3]) -> NodeValue {
        self.values[self.index(l[0], l[1], l[2])]
    }

    pub fn position(&self, l: [usize; 3]) -> Vec3 {
        Vec3::new(self.coords[0][l[0]], self.coords[1][l[1]], self.coords[2][l[2]])
    }
}

/// Raw marching-cubes output: positions, triangles and, per triangle,
/// whether any of its edge vertices touches an invalid node.
pub(crate) struct McOutput {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub touches_invalid: Vec<bool>,
}

/// Extract the boundary between `Inside` nodes and all others.
pub(crate) fn march(ind: &IndicatorGrid) -> McOutput {
    let table = case_table();
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut invalid_vertex: Vec<bool> = Vec::new();
    let mut edge_vertex: HashMap<([usize; 3], usize), u32> = HashMap::new();
    let mut triangles = Vec::new();
    let mut touches_invalid = Vec::new();
    let [nx, ny, nz] = ind.dims;
    for k in 0..nz.saturating_sub(1) {
        for j in 0..ny.saturating_sub(1) {
            for i in 0..nx.saturating_sub(1) {
                let base = [i, j, k];
                let node = |m: usize| {
                    let o = corner_offset(m);
                    [base[0] + o[0], base[1] + o[1], base[2] + o[2]]
                };
                let mut config = 0usize;
                for m in 0..8 {
                    if ind.get(node(m)) == NodeValue::Inside {
                        config |= 1 << m;
                    }
                }
                if config == 0 || config == 255 {
                    continue;
                }
                let loops = &table.loops[config];
                let mut eid = [u32::MAX; 12];
                for lp in loops {
                    for &e in lp {
                        let (c, axis) = EDGES[e];
                        let lo = node(c);
                        eid[e] = *edge_vertex.entry((lo, axis)).or_insert_with(|| {
                            let mut hi = lo;
                            hi[axis] += 1;
                            vertices.push((ind.position(lo) + ind.position(hi)) * 0.5);
                            invalid_vertex.push(
                                ind.get(lo) == NodeValue::Invalid
                                    || ind.get(hi) == NodeValue::Invalid,
                            );
                            (vertices.len() - 1) as u32
                        });
                    }
                }
                let mut centres: Vec<Option<u32>> = vec![None; loops.len()];
                for &(li, tri) in &table.cases[config] {
                    let mut out = [0u32; 3];
                    let mut bad = false;
                    for (slot, v) in out.iter_mut().zip(tri) {
                        *slot = match v {
                            Some(e) => {
                                bad |= invalid_vertex[eid[e] as usize];
                                eid[e]
                            }
                            None => *centres[li].get_or_insert_with(|| {
                                let lp = &loops[li];
                                let c = lp.iter().map(|&e| vertices[eid[e] as usize]).sum::<Vec3>()
                                    / lp.len() as f64;
                                vertices.push(c);
                                invalid_vertex.push(false);
                                (vertices.len() - 1) as u32
                            }),
                        };
                    }
                    triangles.push(out);
                    touches_invalid.push(bad);
                }
            }
        }
    }
    McOutput {
        vertices,
        triangles,
        touches_invalid,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_case_forms_closed_loops() {
        let t = case_table();
        for config in 0..256usize {
            let crossing = EDGES
                .iter()
                .filter(|&&(c, a)| (config >> c & 1) != (config >> (c | 1 << a) & 1))
                .count();
            let in_loops: usize = t.loops[config].iter().map(Vec::len).sum();
            assert_eq!(crossing, in_loops, "config {config}");
            assert!(t.loops[config].iter().all(|l| l.len() >= 3));
        }
        assert!(t.cases[0].is_empty() && t.cases[255].is_empty());
        assert_eq!(t.cases[1].len(), 1);
    }

    #[test]
    fn complementary_face_rule_separates_diagonal_corners() {
        // corners 0 and 3 share the z = 0 face diagonally
        let t = case_table();
        assert_eq!(t.loops[0b1001].len(), 2);
        // corners 0 and 7 are opposite: two separate corner triangles
        assert_eq!(t.loops[0b1000_0001].len(), 2);
    }

    #[test]
    fn single_corner_normal_points_outward() {
        let t = case_table();
        let tri = t.cases[1][0].1.map(|e| edge_midpoint_unit(e.unwrap()));
        let n = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
        assert!(n.dot(&(tri[0] + tri[1] + tri[2])) > 0.0);
    }

    #[test]
    fn lattice_coords_extend_past_domain() {
        let g = RectilinearGrid::new([vec![0.0, 1.0, 3.0], vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(lattice_coord(&g, 1, 0, 0), 0.25);
        assert_eq!(lattice_coord(&g, 1, 0, 2), 1.5);
        assert_eq!(lattice_coord(&g, 1, 0, 3), 2.5);
        assert_eq!(lattice_coord(&g, 1, 0, -1), -0.25);
        assert_eq!(lattice_coord(&g, 1, 0, 4), 3.5);
        assert_eq!(lattice_coord(&g, 0, 0, 2), 4.0);
    }
}
