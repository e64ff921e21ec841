//! Triangle meshes for separation boundaries and separation surfaces.
//!
//! Both are extracted from indicator lattices whose nodes are the seed
//! positions. Boundaries enclose every seed of one contribution; separation
//! surfaces run between two groups of seeds that parted during one interval.

mod marching;
mod obj;

pub use marching::{lattice_coord, IndicatorGrid, NodeValue};
pub use obj::{export_meshes, obj_text, read_obj, write_obj, MeshManifestEntry, MESH_MANIFEST};

use std::collections::HashMap;
use std::fmt;

use crate::grid::{RectilinearGrid, Vec3};
use crate::labeling::UnionFind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MeshKind {
    /// Closed surface around one volumetric contribution.
    Boundary,
    /// Open, time-stamped surface between two parted seed groups.
    Separation,
}

impl MeshKind {
    pub fn name(self) -> &'static str {
        match self {
            MeshKind::Boundary => "boundary",
            MeshKind::Separation => "separation",
        }
    }
}

impl fmt::Display for MeshKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Indexed triangle mesh with its provenance in the analysis.
///
/// `labels` holds `[initial, final]` for boundaries and
/// `[initial, previous, j1, j2]` for separation surfaces.
#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    pub kind: MeshKind,
    pub labels: Vec<i32>,
    pub timestamp: Option<f64>,
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn empty(kind: MeshKind, labels: Vec<i32>, timestamp: Option<f64>) -> Self {
        Self {
            kind,
            labels,
            timestamp,
            vertices: Vec::new(),
            triangles: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Number of triangles on each undirected edge.
    pub fn edge_incidence(&self) -> HashMap<(u32, u32), usize> {
        let mut m = HashMap::with_capacity(self.triangles.len() * 3 / 2);
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *m.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        m
    }

    /// Every edge borders exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        !self.is_empty() && self.edge_incidence().values().all(|&c| c == 2)
    }

    /// Every edge borders one or two triangles and at least one borders one.
    pub fn is_open_manifold(&self) -> bool {
        let inc = self.edge_incidence();
        !self.is_empty() && inc.values().all(|&c| c <= 2) && inc.values().any(|&c| c == 1)
    }

    pub fn boundary_edge_count(&self) -> usize {
        self.edge_incidence().values().filter(|&&c| c == 1).count()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_incidence().len() as i64
            + self.triangles.len() as i64
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i as usize]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Component id per triangle (triangles sharing an edge are connected)
    /// and the component count.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let mut uf = UnionFind::new(self.triangles.len());
        let mut first: HashMap<(u32, u32), usize> = HashMap::new();
        for (i, t) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                match first.entry((a.min(b), a.max(b))) {
                    std::collections::hash_map::Entry::Occupied(e) => uf.union(*e.get(), i),
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert(i);
                    }
                }
            }
        }
        let mut ids = HashMap::new();
        let comp: Vec<usize> = (0..self.triangles.len())
            .map(|i| {
                let r = uf.find(i);
                let n = ids.len();
                *ids.entry(r).or_insert(n)
            })
            .collect();
        (comp, ids.len())
    }

    /// Drop unreferenced vertices and renumber.
    fn compact(&mut self) {
        let mut map = vec![u32::MAX; self.vertices.len()];
        let mut verts = Vec::new();
        for t in self.triangles.iter_mut() {
            for v in t.iter_mut() {
                let m = &mut map[*v as usize];
                if *m == u32::MAX {
                    *m = verts.len() as u32;
                    verts.push(self.vertices[*v as usize]);
                }
                *v = *m;
            }
        }
        self.vertices = verts;
    }

    fn drop_degenerate(&mut self) {
        let keep: Vec<bool> = (0..self.triangles.len())
            .map(|t| self.triangle_area(t) > 0.0)
            .collect();
        let mut it = keep.iter();
        self.triangles.retain(|_| *it.next().unwrap());
        self.compact();
    }
}

/// Closed surface around the lattice nodes `nodes` (seed-lattice indices at
/// refinement `r`). Empty when `nodes` is empty.
pub fn extract_boundary(
    grid: &RectilinearGrid,
    r: u32,
    nodes: &[[i64; 3]],
    initial: i32,
    label: i32,
) -> TriangleMesh {
    let mut mesh = TriangleMesh::empty(MeshKind::Boundary, vec![initial, label], None);
    let Some(mut ind) =
        IndicatorGrid::covering(grid, r, nodes.iter().copied(), 1, NodeValue::Outside)
    else {
        return mesh;
    };
    for &n in nodes {
        ind.set(n, NodeValue::Inside);
    }
    let out = marching::march(&ind);
    mesh.vertices = out.vertices;
    mesh.triangles = out.triangles;
    mesh.drop_degenerate();
    mesh
}

/// Open surface between the `plus` and `minus` node sets. Every other node
/// of the covering box is invalid, and triangles touching an edge with an
/// invalid end are discarded.
#[allow(clippy::too_many_arguments)]
pub fn extract_separation_surface(
    grid: &RectilinearGrid,
    r: u32,
    plus: &[[i64; 3]],
    minus: &[[i64; 3]],
    group: (i32, i32),
    pair: (i32, i32),
    timestamp: f64,
) -> TriangleMesh {
    let labels = vec![group.0, group.1, pair.0, pair.1];
    let mut mesh = TriangleMesh::empty(MeshKind::Separation, labels, Some(timestamp));
    if plus.is_empty() || minus.is_empty() {
        return mesh;
    }
    let all = plus.iter().chain(minus).copied();
    let mut ind = IndicatorGrid::covering(grid, r, all, 1, NodeValue::Invalid)
        .expect("non-empty node sets");
    for &n in plus {
        ind.set(n, NodeValue::Inside);
    }
    for &n in minus {
        ind.set(n, NodeValue::Outside);
    }
    let out = marching::march(&ind);
    mesh.vertices = out.vertices;
    mesh.triangles = out
        .triangles
        .into_iter()
        .zip(out.touches_invalid)
        .filter(|(_, bad)| !bad)
        .map(|(t, _)| t)
        .collect();
    mesh.drop_degenerate();
    mesh
}

/// Umbrella-operator Laplacian smoothing. Vertices on open boundary edges
/// stay fixed, connectivity is untouched.
pub fn smooth_mesh(mesh: &TriangleMesh, iterations: usize, lambda: f64) -> TriangleMesh {
    let mut out = mesh.clone();
    if iterations == 0 || mesh.is_empty() {
        return out;
    }
    let n = mesh.vertices.len();
    let inc = mesh.edge_incidence();
    let mut fixed = vec![false; n];
    let mut neighbors: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut edges: Vec<_> = inc.into_iter().collect();
    edges.sort_unstable();
    for ((a, b), c) in edges {
        neighbors[a as usize].push(b);
        neighbors[b as usize].push(a);
        if c == 1 {
            fixed[a as usize] = true;
            fixed[b as usize] = true;
        }
    }
    let mut pos = mesh.vertices.clone();
    let mut next = pos.clone();
    for _ in 0..iterations {
        for i in 0..n {
            if fixed[i] || neighbors[i].is_empty() {
                next[i] = pos[i];
                continue;
            }
            let avg = neighbors[i].iter().map(|&j| pos[j as usize]).sum::<Vec3>()
                / neighbors[i].len() as f64;
            next[i] = pos[i] + (avg - pos[i]) * lambda;
        }
        std::mem::swap(&mut pos, &mut next);
    }
    out.vertices = pos;
    out
}

/// Remove connected components with fewer than `min_triangles` triangles.
pub fn filter_small_components(mesh: &TriangleMesh, min_triangles: usize) -> TriangleMesh {
    let mut out = mesh.clone();
    if min_triangles == 0 {
        return out;
    }
    let (comp, count) = mesh.components();
    let mut sizes = vec![0usize; count];
    for &c in &comp {
        sizes[c] += 1;
    }
    out.triangles = mesh
        .triangles
        .iter()
        .zip(&comp)
        .filter(|(_, &c)| sizes[c] >= min_triangles)
        .map(|(t, _)| *t)
        .collect();
    out.compact();
    out
}

/// Ray direction for inside tests, skewed so rays from lattice points miss
/// mesh vertices and edges.
const RAY: [f64; 3] = [0.872_303_4, 0.391_542_7, 0.293_144_1];

/// Parity ray-casting test of whether `p` lies inside a closed mesh.
pub fn point_in_mesh(mesh: &TriangleMesh, p: &Vec3) -> bool {
    let d = Vec3::new(RAY[0], RAY[1], RAY[2]);
    let mut crossings = 0usize;
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| mesh.vertices[i as usize]);
        // Moller-Trumbore
        let e1 = b - a;
        let e2 = c - a;
        let h = d.cross(&e2);
        let det = e1.dot(&h);
        if det.abs() < 1e-300 {
            continue;
        }
        let inv = 1.0 / det;
        let s = p - a;
        let u = s.dot(&h) * inv;
        if !(0.0..=1.0).contains(&u) {
            continue;
        }
        let q = s.cross(&e1);
        let v = d.dot(&q) * inv;
        if v < 0.0 || u + v > 1.0 {
            continue;
        }
        if e2.dot(&q) * inv > 0.0 {
            crossings += 1;
        }
    }
    crossings % 2 == 1
}
