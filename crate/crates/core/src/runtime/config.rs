//! Line-oriented `key = value` pipeline configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::advect::{AdvectionConfig, Direction};
use crate::error::{Error, Result};

/// Default ghost width in cells; covers one cell of interpolation stencil
/// plus the neighbour lookups of the corrector.
pub const DEFAULT_GHOST_WIDTH: usize = 3;

/// How exported meshes are post-processed.
#[derive(Clone, Debug, PartialEq)]
pub struct ExportOptions {
    pub smooth_iterations: usize,
    pub smooth_lambda: f64,
    /// Components with fewer triangles are dropped; 0 keeps everything.
    pub min_component_triangles: usize,
}

impl Default for ExportOptions {
    fn default() -> Self {
        Self {
            smooth_iterations: 10,
            smooth_lambda: 0.5,
            min_component_triangles: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub dataset: PathBuf,
    /// Index of the seeding step.
    pub t0: usize,
    /// Index of the final step; below `t0` for backward runs.
    pub tf: usize,
    pub tau: f64,
    pub advection: AdvectionConfig,
    /// Partition counts per axis; `None` runs serially.
    pub partitions: Option<[usize; 3]>,
    pub ghost_width: usize,
    pub output: PathBuf,
    pub export: ExportOptions,
}

impl PipelineConfig {
    pub fn new(dataset: impl Into<PathBuf>, output: impl Into<PathBuf>, t0: usize, tf: usize) -> Self {
        let advection = AdvectionConfig {
            direction: if tf < t0 {
                Direction::Backward
            } else {
                Direction::Forward
            },
            ..Default::default()
        };
        Self {
            dataset: dataset.into(),
            t0,
            tf,
            tau: 0.0,
            advection,
            partitions: None,
            ghost_width: DEFAULT_GHOST_WIDTH,
            output: output.into(),
            export: ExportOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.advection.validate()?;
        if !(self.tau.is_finite() && (0.0..1.0).contains(&self.tau)) {
            return Err(Error::InvalidConfig(format!("tau {} not in [0, 1)", self.tau)));
        }
        if let Some(p) = self.partitions {
            if p.contains(&0) {
                return Err(Error::InvalidConfig("partition counts must be positive".into()));
            }
        }
        if self.ghost_width < 2 {
            return Err(Error::InvalidConfig("ghost width must be at least 2".into()));
        }
        let expected = if self.tf < self.t0 {
            Direction::Backward
        } else {
            Direction::Forward
        };
        if self.advection.direction != expected {
            return Err(Error::InvalidConfig(
                "advection direction disagrees with the order of t0 and tf".into(),
            ));
        }
        if !(self.export.smooth_lambda.is_finite() && (0.0..=1.0).contains(&self.export.smooth_lambda)) {
            return Err(Error::InvalidConfig("smooth_lambda must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Parse configuration text. Relative paths resolve against `base`.
    pub fn parse(text: &str, path: &Path, base: &Path) -> Result<Self> {
        let err = |line: usize, detail: String| Error::Config {
            path: path.to_path_buf(),
            line,
            detail,
        };
        let mut dataset = None;
        let mut output = None;
        let mut t0 = None;
        let mut tf = None;
        let mut cfg = PipelineConfig::new("", "", 0, 0);
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(err(lineno, format!("expected 'key = value', found '{line}'")));
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(err(lineno, format!("duplicate key '{key}'")));
            }
            fn num<T: FromStr>(v: &str, key: &str) -> std::result::Result<T, String>
            where
                T::Err: std::fmt::Display,
            {
                v.parse().map_err(|e| format!("{key}: {e}"))
            }
            let res: std::result::Result<(), String> = (|| {
                match key {
                    "dataset" => dataset = Some(base.join(value)),
                    "output" => output = Some(base.join(value)),
                    "t0" => t0 = Some(num(value, key)?),
                    "tf" => tf = Some(num(value, key)?),
                    "tau" => cfg.tau = num(value, key)?,
                    "refinement" => cfg.advection.refinement = num(value, key)?,
                    "substeps" => cfg.advection.substeps = num(value, key)?,
                    "corrector" => cfg.advection.corrector = num(value, key)?,
                    "trail_stride" => cfg.advection.trail_stride = num(value, key)?,
                    "partitions" => cfg.partitions = parse_partitions(value)?,
                    "ghost_width" => cfg.ghost_width = num(value, key)?,
                    "smooth_iterations" => cfg.export.smooth_iterations = num(value, key)?,
                    "smooth_lambda" => cfg.export.smooth_lambda = num(value, key)?,
                    "min_component_triangles" => {
                        cfg.export.min_component_triangles = num(value, key)?
                    }
                    other => return Err(format!("unknown key '{other}'")),
                }
                Ok(())
            })();
            res.map_err(|d| err(lineno, d))?;
        }
        let missing = |k: &str| err(0, format!("missing required key '{k}'"));
        cfg.dataset = dataset.ok_or_else(|| missing("dataset"))?;
        cfg.output = output.ok_or_else(|| missing("output"))?;
        cfg.t0 = t0.ok_or_else(|| missing("t0"))?;
        cfg.tf = tf.ok_or_else(|| missing("tf"))?;
        cfg.advection.direction = if cfg.tf < cfg.t0 {
            Direction::Backward
        } else {
            Direction::Forward
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            line: 0,
            detail: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, path, base)
    }

    /// Configuration text that [`PipelineConfig::parse`] reads back unchanged
    /// (paths are written as given).
    pub fn render(&self) -> String {
        let mut s = String::new();
        let a = &self.advection;
        let parts = self
            .partitions
            .map_or("none".to_string(), |p| format!("{}x{}x{}", p[0], p[1], p[2]));
        let _ = writeln!(s, "dataset = {}", self.dataset.display());
        let _ = writeln!(s, "output = {}", self.output.display());
        let _ = writeln!(s, "t0 = {}", self.t0);
        let _ = writeln!(s, "tf = {}", self.tf);
        let _ = writeln!(s, "tau = {}", self.tau);
        let _ = writeln!(s, "refinement = {}", a.refinement);
        let _ = writeln!(s, "substeps = {}", a.substeps);
        let _ = writeln!(s, "corrector = {}", a.corrector);
        let _ = writeln!(s, "trail_stride = {}", a.trail_stride);
        let _ = writeln!(s, "partitions = {parts}");
        let _ = writeln!(s, "ghost_width = {}", self.ghost_width);
        let _ = writeln!(s, "smooth_iterations = {}", self.export.smooth_iterations);
        let _ = writeln!(s, "smooth_lambda = {}", self.export.smooth_lambda);
        let _ = writeln!(s, "min_component_triangles = {}", self.export.min_component_triangles);
        s
    }
}

fn parse_partitions(v: &str) -> std::result::Result<Option<[usize; 3]>, String> {
    if v == "none" {
        return Ok(None);
    }
    let parts: Vec<&str> = v.split('x').collect();
    let [a, b, c] = parts[..] else {
        return Err(format!("partitions: expected 'none' or AxBxC, found '{v}'"));
    };
    let p = |s: &str| {
        s.parse::<usize>()
            .map_err(|e| format!("partitions: '{s}': {e}"))
    };
    Ok(Some([p(a)?, p(b)?, p(c)?]))
}
