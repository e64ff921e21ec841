//! On-disk dataset format and synthetic dataset generation.
//!
//! A dataset directory holds one grid file, one binary file per time step and
//! a text manifest tying them together. All binary values are little-endian.
//!
//! Step file: `"FSEP0001"`, `u32 d`, `u32 nx, ny, nz`, `f64 time`, then the
//! fraction field as `nx*ny*nz` f64 values (x-fastest), then `d` velocity
//! component arrays of the same layout.
//!
//! Grid file: `"FSEPGRID"`, `u32 d`, then per axis a `u32` node count
//! followed by that many f64 node coordinates.
//!
//! Manifest: a header line `FSEP-MANIFEST<TAB>1<TAB><grid file>` followed by
//! one `time<TAB>step file` line per step. Paths are relative to the manifest.

mod synthetic;

pub use synthetic::{generate_scenario, ScenarioKind, SyntheticScenario};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{CellField, RectilinearGrid, TimeSeriesDataset, TimeStep};

pub const STEP_MAGIC: &[u8; 8] = b"FSEP0001";
pub const GRID_MAGIC: &[u8; 8] = b"FSEPGRID";
pub const MANIFEST_TAG: &str = "FSEP-MANIFEST";
pub const MANIFEST_VERSION: u32 = 1;

const DIMENSION: u32 = 3;
const STEP_HEADER_BYTES: usize = 8 + 4 * 4 + 8;

/// Little-endian cursor over a byte buffer that reports truncation against
/// the expected total size.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self { bytes, pos: 0, path }
    }

    fn take(&mut self, n: usize, expected_total: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                expected: expected_total.max(self.pos + n),
                found: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn magic(&mut self, expected: &[u8; 8]) -> Result<()> {
        let found = self.take(8, 8)?;
        if found != expected {
            return Err(Error::MagicMismatch {
                path: self.path.to_path_buf(),
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(())
    }

    fn u32(&mut self, expected_total: usize) -> Result<u32> {
        let b = self.take(4, expected_total)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self, expected_total: usize) -> Result<f64> {
        let b = self.take(8, expected_total)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64_array(&mut self, n: usize, expected_total: usize) -> Result<Vec<f64>> {
        let b = self.take(8 * n, expected_total)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_timestep(step: &TimeStep) -> Vec<u8> {
    let dims = step.grid().dims();
    let n = step.grid().cell_count();
    let mut out = Vec::with_capacity(STEP_HEADER_BYTES + 8 * 4 * n);
    out.extend_from_slice(STEP_MAGIC);
    out.extend_from_slice(&DIMENSION.to_le_bytes());
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&step.time.to_le_bytes());
    for v in step.fraction().values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in step.velocity().values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_timestep(bytes: &[u8], grid: &Arc<RectilinearGrid>, path: &Path) -> Result<TimeStep> {
    let mut r = Reader::new(bytes, path);
    r.magic(STEP_MAGIC)?;
    let d = r.u32(STEP_HEADER_BYTES)?;
    if d != DIMENSION {
        return Err(Error::DimensionMismatch {
            path: path.to_path_buf(),
            detail: format!("dimension {d} unsupported, expected {DIMENSION}"),
        });
    }
    let mut dims = [0usize; 3];
    for slot in dims.iter_mut() {
        *slot = r.u32(STEP_HEADER_BYTES)? as usize;
    }
    if dims != grid.dims() {
        return Err(Error::DimensionMismatch {
            path: path.to_path_buf(),
            detail: format!("step has {dims:?} cells, grid has {:?}", grid.dims()),
        });
    }
    let n = grid.cell_count();
    let total = STEP_HEADER_BYTES + 8 * n * (1 + d as usize);
    let time = r.f64(total)?;
    let f = r.f64_array(n, total)?;
    let u = r.f64_array(3 * n, total)?;
    if r.pos != bytes.len() {
        return Err(Error::DimensionMismatch {
            path: path.to_path_buf(),
            detail: format!("{} trailing bytes after payload", bytes.len() - r.pos),
        });
    }
    let fraction = CellField::new(grid.clone(), 1, f)?;
    let velocity = CellField::new(grid.clone(), 3, u)?;
    TimeStep::new(time, fraction, velocity)
}

pub fn write_timestep(step: &TimeStep, path: &Path) -> Result<()> {
    write_file(path, &encode_timestep(step))
}

pub fn read_timestep(path: &Path, grid: &Arc<RectilinearGrid>) -> Result<TimeStep> {
    let bytes = read_file(path)?;
    decode_timestep(&bytes, grid, path)
}

pub fn write_grid(grid: &RectilinearGrid, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(GRID_MAGIC);
    out.extend_from_slice(&DIMENSION.to_le_bytes());
    for a in 0..3 {
        let nodes = grid.axis(a);
        out.extend_from_slice(&(nodes.len() as u32).to_le_bytes());
        for v in nodes {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_file(path, &out)
}

pub fn read_grid(path: &Path) -> Result<RectilinearGrid> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(&bytes, path);
    r.magic(GRID_MAGIC)?;
    let d = r.u32(12)?;
    if d != DIMENSION {
        return Err(Error::DimensionMismatch {
            path: path.to_path_buf(),
            detail: format!("dimension {d} unsupported, expected {DIMENSION}"),
        });
    }
    let mut axes: [Vec<f64>; 3] = Default::default();
    for axis in axes.iter_mut() {
        let count = r.u32(r.pos + 4)? as usize;
        *axis = r.f64_array(count, r.pos + 8 * count)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::DimensionMismatch {
            path: path.to_path_buf(),
            detail: format!("{} trailing bytes after axes", bytes.len() - r.pos),
        });
    }
    RectilinearGrid::new(axes)
}

/// Parsed manifest. Paths are stored as written, relative to `base`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub version: u32,
    pub base: PathBuf,
    pub grid_file: PathBuf,
    pub steps: Vec<(f64, PathBuf)>,
}

impl DatasetManifest {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, detail: String| Error::Manifest {
            path: path.to_path_buf(),
            line,
            detail,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
            .filter(|(_, l)| !l.trim().is_empty());

        let (hline, header) = lines.next().ok_or_else(|| err(1, "empty manifest".into()))?;
        let fields: Vec<&str> = header.split('\t').collect();
        if fields.len() != 3 || fields[0] != MANIFEST_TAG {
            return Err(err(
                hline,
                format!("expected header `{MANIFEST_TAG}<TAB>version<TAB>grid file`"),
            ));
        }
        let version: u32 = fields[1]
            .parse()
            .map_err(|_| err(hline, format!("bad version {:?}", fields[1])))?;
        if version != MANIFEST_VERSION {
            return Err(err(hline, format!("unsupported manifest version {version}")));
        }
        let grid_file = PathBuf::from(fields[2]);

        let mut steps: Vec<(f64, PathBuf)> = Vec::new();
        for (no, line) in lines {
            let (t, p) = line
                .split_once('\t')
                .ok_or_else(|| err(no, "expected `time<TAB>path`".into()))?;
            let time: f64 = t
                .trim()
                .parse()
                .map_err(|_| err(no, format!("bad time {t:?}")))?;
            if !time.is_finite() {
                return Err(err(no, format!("non-finite time {t:?}")));
            }
            if let Some((prev, _)) = steps.last() {
                if time <= *prev {
                    return Err(err(no, format!("time {time} does not increase")));
                }
            }
            steps.push((time, PathBuf::from(p)));
        }
        if steps.is_empty() {
            return Err(err(hline, "manifest lists no steps".into()));
        }
        Ok(Self {
            version,
            base: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            grid_file,
            steps,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "{MANIFEST_TAG}\t{}\t{}\n",
            self.version,
            self.grid_file.display()
        );
        for (t, p) in &self.steps {
            // `{}` on f64 prints the shortest round-tripping representation
            let _ = writeln!(s, "{t}\t{}", p.display());
        }
        s
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }
}

/// Load every step listed in a manifest. Steps are read concurrently.
pub fn load_dataset(manifest_path: &Path) -> Result<TimeSeriesDataset> {
    let manifest = DatasetManifest::read(manifest_path)?;
    let grid_path = manifest.resolve(&manifest.grid_file);
    let grid = Arc::new(read_grid(&grid_path)?);
    let steps = manifest
        .steps
        .par_iter()
        .map(|(time, p)| {
            let path = manifest.resolve(p);
            let step = read_timestep(&path, &grid)?;
            if step.time != *time {
                return Err(Error::InvalidDataset(format!(
                    "{}: stored time {} differs from manifest time {time}",
                    path.display(),
                    step.time
                )));
            }
            Ok(step)
        })
        .collect::<Result<Vec<_>>>()?;
    TimeSeriesDataset::new(grid, steps)
}

/// Write a dataset as `grid.bin`, `step_NNNN.bin` and `manifest.txt` into
/// `dir`, returning the manifest path.
pub fn write_dataset(dataset: &TimeSeriesDataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_grid(dataset.grid(), &dir.join("grid.bin"))?;
    let steps: Vec<(f64, PathBuf)> = dataset
        .steps()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.time, PathBuf::from(format!("step_{i:04}.bin"))))
        .collect();
    dataset
        .steps()
        .par_iter()
        .zip(steps.par_iter())
        .try_for_each(|(step, (_, name))| write_timestep(step, &dir.join(name)))?;
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        base: dir.to_path_buf(),
        grid_file: PathBuf::from("grid.bin"),
        steps,
    };
    let path = dir.join("manifest.txt");
    write_file(&path, manifest.render().as_bytes())?;
    Ok(path)
}
