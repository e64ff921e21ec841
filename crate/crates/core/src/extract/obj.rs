//! Plain-text OBJ export and the mesh manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{MeshKind, TriangleMesh};
use crate::error::{Error, Result};
use crate::grid::Vec3;

/// File name of the manifest written next to the exported meshes.
pub const MESH_MANIFEST: &str = "meshes.tsv";

const MANIFEST_HEADER: &str = "file\tkind\tlabels\ttimestamp";

/// One manifest line.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshManifestEntry {
    pub file: String,
    pub kind: MeshKind,
    pub labels: Vec<i32>,
    pub timestamp: Option<f64>,
}

impl MeshManifestEntry {
    fn render(&self) -> String {
        let labels: Vec<String> = self.labels.iter().map(i32::to_string).collect();
        let ts = self.timestamp.map_or_else(|| "-".to_string(), |t| t.to_string());
        format!("{}\t{}\t{}\t{}", self.file, self.kind, labels.join(","), ts)
    }

    fn parse(line: &str, path: &Path, lineno: usize) -> Result<Self> {
        let bad = |detail: String| Error::Manifest {
            path: path.to_path_buf(),
            line: lineno,
            detail,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        let [file, kind, labels, ts] = cols[..] else {
            return Err(bad(format!("expected 4 columns, found {}", cols.len())));
        };
        let kind = match kind {
            "boundary" => MeshKind::Boundary,
            "separation" => MeshKind::Separation,
            other => return Err(bad(format!("unknown mesh kind '{other}'"))),
        };
        let labels = labels
            .split(',')
            .map(|s| s.parse::<i32>().map_err(|e| bad(format!("label '{s}': {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let timestamp = match ts {
            "-" => None,
            s => Some(s.parse::<f64>().map_err(|e| bad(format!("timestamp '{s}': {e}")))?),
        };
        Ok(Self {
            file: file.to_string(),
            kind,
            labels,
            timestamp,
        })
    }

    /// Read a manifest written by [`export_meshes`].
    pub fn read_all(path: &Path) -> Result<Vec<Self>> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_HEADER) {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                line: 1,
                detail: "missing mesh manifest header".into(),
            });
        }
        lines
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| Self::parse(l, path, i + 2))
            .collect()
    }
}

pub fn obj_text(mesh: &TriangleMesh) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 48 + mesh.triangles.len() * 24);
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s
}

pub fn write_obj(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    fs::write(path, obj_text(mesh)).map_err(|e| Error::io(path, e))
}

/// Vertices and triangles of an OBJ file holding only `v` and `f` records.
pub fn read_obj(path: &Path) -> Result<(Vec<Vec3>, Vec<[u32; 3]>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, detail: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        detail,
    };
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| bad(i + 1, format!("vertex: {e}")))?;
                if c.len() != 3 {
                    return Err(bad(i + 1, "vertex needs 3 coordinates".into()));
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let c: Vec<u32> = it
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| bad(i + 1, format!("face: {e}")))?;
                if c.len() != 3 || c.iter().any(|&k| k == 0 || k as usize > vertices.len()) {
                    return Err(bad(i + 1, "face needs 3 valid 1-based indices".into()));
                }
                triangles.push([c[0] - 1, c[1] - 1, c[2] - 1]);
            }
            None => {}
            Some(other) => return Err(bad(i + 1, format!("unsupported record '{other}'"))),
        }
    }
    Ok((vertices, triangles))
}

fn file_name(index: usize, mesh: &TriangleMesh) -> String {
    let labels: Vec<String> = mesh.labels.iter().map(i32::to_string).collect();
    format!("{index:04}_{}_{}.obj", mesh.kind, labels.join("_"))
}

/// Write one OBJ per mesh into `dir` plus the manifest; returns the
/// manifest path.
pub fn export_meshes(meshes: &[TriangleMesh], dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = format!("{MANIFEST_HEADER}\n");
    for (i, m) in meshes.iter().enumerate() {
        let name = file_name(i, m);
        write_obj(m, &dir.join(&name))?;
        let entry = MeshManifestEntry {
            file: name,
            kind: m.kind,
            labels: m.labels.clone(),
            timestamp: m.timestamp,
        };
        manifest.push_str(&entry.render());
        manifest.push('\n');
    }
    let path = dir.join(MESH_MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> TriangleMesh {
        TriangleMesh {
            kind: MeshKind::Separation,
            labels: vec![0, 0, 0, 1],
            timestamp: Some(0.25),
            vertices: vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            triangles: vec![[0, 1, 2]],
        }
    }

    #[test]
    fn empty_list_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = export_meshes(&[], dir.path()).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), format!("{MANIFEST_HEADER}\n"));
        assert!(MeshManifestEntry::read_all(&p).unwrap().is_empty());
    }

    #[test]
    fn single_triangle_obj() {
        let text = obj_text(&triangle());
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 3);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 1);
        assert!(text.contains("f 1 2 3"));
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = triangle();
        b.kind = MeshKind::Boundary;
        b.labels = vec![2, -1];
        b.timestamp = None;
        let meshes = vec![triangle(), b];
        let p = export_meshes(&meshes, dir.path()).unwrap();
        let entries = MeshManifestEntry::read_all(&p).unwrap();
        assert_eq!(entries.len(), 2);
        for (e, m) in entries.iter().zip(&meshes) {
            assert_eq!(e.kind, m.kind);
            assert_eq!(e.labels, m.labels);
            assert_eq!(e.timestamp, m.timestamp);
            let (v, t) = read_obj(&dir.path().join(&e.file)).unwrap();
            assert_eq!(v, m.vertices);
            assert_eq!(t, m.triangles);
        }
    }

    #[test]
    fn bad_face_index_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.obj");
        fs::write(&p, "v 0 0 0\nf 1 2 3\n").unwrap();
        assert!(read_obj(&p).is_err());
        let missing = dir.path().join("nope.obj");
        assert!(matches!(read_obj(&missing), Err(Error::Io { .. })));
    }
}
