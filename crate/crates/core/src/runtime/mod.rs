//! Pipeline orchestration: seed, advance interval by interval while tracking
//! splits, then build the contribution table and the boundary meshes.
//!
//! Serial and partitioned runs share the driver below; only the particle
//! engine differs, and both produce identical labelings and tables.

mod config;
mod partition;
mod report;

pub use config::{ExportOptions, PipelineConfig, DEFAULT_GHOST_WIDTH};
pub use partition::{Envelope, Message, PartitionedParticles, Traffic, COORDINATOR};
pub use report::{IntervalReport, RunReport, REPORT_FILE};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use log::{debug, info};
use rayon::prelude::*;

use crate::advect::{
    accumulated_displacement_field, advance_interval, record_trail, seed_lattice_index,
    seed_particles, AdvectionConfig, IntervalStats, ParticleSet,
};
use crate::dataset_io::load_dataset;
use crate::error::{Error, Result};
use crate::extract::{
    export_meshes, extract_boundary, extract_separation_surface, filter_small_components,
    smooth_mesh, TriangleMesh,
};
use crate::grid::{RectilinearGrid, TimeSeriesDataset, TimeStep};
use crate::labeling::{label_features, LabelField, PartitionLayout};
use crate::segment::{detect_splits, seed_labeling, ContributionTable, SeedLabeling, SplitEvent};

/// Everything a run produces, before export.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: RunReport,
    /// Seed labels at every visited step, starting with `t0`.
    pub labelings: Vec<SeedLabeling>,
    /// Split events with the index of the interval they happened in.
    pub splits: Vec<(usize, SplitEvent)>,
    pub table: ContributionTable,
    /// Unsmoothed boundary meshes, one per contribution with a valid target.
    pub boundaries: Vec<TriangleMesh>,
    /// Unsmoothed separation surfaces in interval order.
    pub separations: Vec<TriangleMesh>,
    pub particles: ParticleSet,
}

impl RunOutput {
    pub fn initial(&self) -> &SeedLabeling {
        &self.labelings[0]
    }

    pub fn last(&self) -> &SeedLabeling {
        self.labelings.last().unwrap()
    }
}

enum Engine {
    Serial(ParticleSet),
    Partitioned(Box<PartitionedParticles>),
}

impl Engine {
    fn label(&mut self, step: &TimeStep, tau: f64) -> Result<Arc<LabelField>> {
        match self {
            Engine::Serial(_) => Ok(Arc::new(label_features(step, tau))),
            Engine::Partitioned(pp) => pp.label(step, tau),
        }
    }

    fn assign(&mut self, labels: &LabelField, step: &TimeStep, tau: f64) -> SeedLabeling {
        match self {
            Engine::Serial(set) => seed_labeling(&set.particles, labels, step, tau),
            Engine::Partitioned(pp) => pp.assign(labels, step, tau),
        }
    }

    fn advance(
        &mut self,
        from: &TimeStep,
        to: &TimeStep,
        cfg: &AdvectionConfig,
        tau: f64,
    ) -> Result<(IntervalStats, Traffic)> {
        match self {
            Engine::Serial(set) => Ok((advance_interval(set, from, to, cfg, tau), Traffic::default())),
            Engine::Partitioned(pp) => {
                let stats = pp.advance(from, to, cfg, tau)?;
                Ok((stats, pp.last_traffic))
            }
        }
    }

    fn record_trail(&mut self, time: f64) {
        match self {
            Engine::Serial(set) => record_trail(&mut set.particles, time),
            Engine::Partitioned(pp) => pp.record_trail(time),
        }
    }

    fn into_particles(self) -> ParticleSet {
        match self {
            Engine::Serial(set) => set,
            Engine::Partitioned(pp) => pp.gather(),
        }
    }
}

/// Smallest ghost width, in cells, that covers the largest per-interval
/// displacement plus one cell of interpolation stencil.
pub fn required_ghost_width(dataset: &TimeSeriesDataset, indices: &[usize]) -> usize {
    let h = dataset.grid().min_spacing();
    let steps = dataset.steps();
    indices
        .windows(2)
        .map(|w| {
            let (a, b) = (&steps[w[0]], &steps[w[1]]);
            let reach = a.max_speed().max(b.max_speed()) * (b.time - a.time).abs();
            (reach / h).ceil() as usize + 1
        })
        .max()
        .unwrap_or(1)
}

fn step_indices(config: &PipelineConfig, len: usize) -> Result<Vec<usize>> {
    for (name, v) in [("t0", config.t0), ("tf", config.tf)] {
        if v >= len {
            return Err(Error::InvalidConfig(format!(
                "{name} = {v} but the dataset has {len} steps"
            )));
        }
    }
    Ok(if config.tf >= config.t0 {
        (config.t0..=config.tf).collect()
    } else {
        (config.tf..=config.t0).rev().collect()
    })
}

fn lattice_nodes(grid: &RectilinearGrid, r: u32, keys: impl Iterator<Item = u64>) -> Vec<[i64; 3]> {
    keys.map(|k| seed_lattice_index(grid, r, k).map(|v| v as i64))
        .collect()
}

/// Separation surfaces for one split event, one per pair of target labels.
fn separation_meshes(
    grid: &RectilinearGrid,
    r: u32,
    initial: &SeedLabeling,
    prev: &SeedLabeling,
    next: &SeedLabeling,
    event: &SplitEvent,
) -> Vec<TriangleMesh> {
    let mut by_label: BTreeMap<i32, Vec<u64>> = BTreeMap::new();
    for (k, ((&i, &p), &n)) in initial
        .labels
        .iter()
        .zip(&prev.labels)
        .zip(&next.labels)
        .enumerate()
    {
        if i == event.initial && p == event.previous && n >= 0 {
            by_label.entry(n).or_default().push(next.keys[k]);
        }
    }
    let mut out = Vec::new();
    for (a, &j1) in event.next.iter().enumerate() {
        for &j2 in &event.next[a + 1..] {
            let plus = lattice_nodes(grid, r, by_label[&j1].iter().copied());
            let minus = lattice_nodes(grid, r, by_label[&j2].iter().copied());
            out.push(extract_separation_surface(
                grid,
                r,
                &plus,
                &minus,
                (event.initial, event.previous),
                (j1, j2),
                next.time,
            ));
        }
    }
    out
}

/// Run the analysis on an in-memory dataset.
pub fn analyze(dataset: &TimeSeriesDataset, config: &PipelineConfig) -> Result<RunOutput> {
    config.validate()?;
    let indices = step_indices(config, dataset.len())?;
    let steps = dataset.steps();
    let grid = dataset.grid();
    let tau = config.tau;
    let cfg = &config.advection;
    let r = cfg.refinement;

    let mut engine = match config.partitions {
        None => Engine::Serial(ParticleSet {
            refinement: r,
            particles: Vec::new(),
        }),
        Some(counts) => {
            let need = required_ghost_width(dataset, &indices);
            if config.ghost_width < need {
                return Err(Error::GhostWidth {
                    have: config.ghost_width,
                    need,
                    detail: "largest per-interval displacement exceeds the halo".into(),
                });
            }
            let layout = PartitionLayout::new(grid.dims(), counts, config.ghost_width)?;
            Engine::Partitioned(Box::new(PartitionedParticles::new(layout, need)))
        }
    };

    let step0 = &steps[indices[0]];
    match &mut engine {
        Engine::Serial(set) => *set = seed_particles(step0, r, tau),
        Engine::Partitioned(pp) => pp.seed(step0, r, tau)?,
    }
    engine.record_trail(step0.time);
    let labels0 = engine.label(step0, tau)?;
    let initial = engine.assign(&labels0, step0, tau);
    info!(
        "seeded {} particles in {} features at t = {}",
        initial.len(),
        labels0.count(),
        step0.time
    );

    let mut labelings = vec![initial];
    let mut splits = Vec::new();
    let mut separations = Vec::new();
    let mut intervals = Vec::new();
    let last_interval = indices.len().saturating_sub(1);
    for (k, w) in indices.windows(2).enumerate() {
        let started = Instant::now();
        let (from, to) = (&steps[w[0]], &steps[w[1]]);
        let (stats, traffic) = engine.advance(from, to, cfg, tau)?;
        if (k + 1) % cfg.trail_stride == 0 || k + 1 == last_interval {
            engine.record_trail(to.time);
        }
        let labels = engine.label(to, tau)?;
        let next = engine.assign(&labels, to, tau);
        let events = detect_splits(&labelings[0], labelings.last().unwrap(), &next);
        let prev = labelings.last().unwrap();
        let meshes: Vec<TriangleMesh> = events
            .par_iter()
            .flat_map_iter(|e| separation_meshes(grid, r, &labelings[0], prev, &next, e))
            .collect();
        let alive = stats.advected - stats.exited - stats.vanished;
        debug!(
            "interval {k}: t {} -> {}, {} splits, {} inconsistent, {} corrected",
            from.time,
            to.time,
            events.len(),
            stats.inconsistent,
            stats.corrected
        );
        intervals.push(IntervalReport {
            index: k,
            from_time: from.time,
            to_time: to.time,
            seconds: started.elapsed().as_secs_f64(),
            alive,
            stats,
            features: labels.count(),
            splits: events.len(),
            separation_meshes: meshes.len(),
            messages: traffic.messages,
            handoffs: traffic.handoffs,
        });
        splits.extend(events.into_iter().map(|e| (k, e)));
        separations.extend(meshes);
        labelings.push(next);
    }

    let particles = engine.into_particles();
    let started = Instant::now();
    let initial = &labelings[0];
    let last = labelings.last().unwrap();
    let table = ContributionTable::build(initial, last, grid, r);
    let mut groups: BTreeMap<(i32, i32), Vec<u64>> = BTreeMap::new();
    for ((&key, &i), &j) in initial.keys.iter().zip(&initial.labels).zip(&last.labels) {
        if i >= 0 && j >= 0 {
            groups.entry((i, j)).or_default().push(key);
        }
    }
    let groups: Vec<_> = groups.into_iter().collect();
    let boundaries: Vec<TriangleMesh> = groups
        .par_iter()
        .map(|((i, j), keys)| {
            let nodes = lattice_nodes(grid, r, keys.iter().copied());
            extract_boundary(grid, r, &nodes, *i, *j)
        })
        .collect();
    let boundary_seconds = started.elapsed().as_secs_f64();

    let eps: Vec<f64> = particles.particles.iter().map(|p| p.eps).collect();
    let n = eps.len().max(1) as f64;
    let report = RunReport {
        mode: match config.partitions {
            None => "serial".into(),
            Some(p) => format!("partitioned {}x{}x{}", p[0], p[1], p[2]),
        },
        particles: particles.len(),
        alive: particles.alive_count(),
        initial_features: labels0.count(),
        final_features: intervals.last().map_or(labels0.count(), |i| i.features),
        boundary_seconds,
        max_eps: eps.iter().copied().fold(0.0, f64::max),
        mean_eps: eps.iter().sum::<f64>() / n,
        corrected_fraction: eps.iter().filter(|&&e| e > 0.0).count() as f64 / n,
        boundary_meshes: boundaries.len(),
        separation_meshes: separations.len(),
        intervals,
    };
    Ok(RunOutput {
        report,
        labelings,
        splits,
        table,
        boundaries,
        separations,
        particles,
    })
}

/// Write every artifact of a run into `dir`.
pub fn write_artifacts(out: &RunOutput, export: &ExportOptions, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("table.tsv", out.table.to_tsv())?;
    write(REPORT_FILE, out.report.to_tsv())?;

    let mut s = String::from("key");
    for l in &out.labelings {
        let _ = write!(s, "\t{}", l.time);
    }
    s.push('\n');
    for (row, &key) in out.initial().keys.iter().enumerate() {
        let _ = write!(s, "{key}");
        for l in &out.labelings {
            let _ = write!(s, "\t{}", l.labels[row]);
        }
        s.push('\n');
    }
    write("labels.tsv", s)?;

    let mut s = String::from("key\tx\ty\tz\teps\n");
    for (p, (x, e)) in out
        .particles
        .particles
        .iter()
        .zip(accumulated_displacement_field(&out.particles))
    {
        let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}", p.key, x[0], x[1], x[2], e);
    }
    write("displacement.tsv", s)?;

    let mut s = String::from("key\ttime\tx\ty\tz\n");
    for p in &out.particles.particles {
        for (t, x) in &p.trail {
            let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}", p.key, t, x[0], x[1], x[2]);
        }
    }
    write("trails.tsv", s)?;

    let meshes: Vec<TriangleMesh> = out
        .separations
        .par_iter()
        .chain(out.boundaries.par_iter())
        .map(|m| {
            let m = smooth_mesh(m, export.smooth_iterations, export.smooth_lambda);
            filter_small_components(&m, export.min_component_triangles)
        })
        .collect();
    export_meshes(&meshes, &dir.join("meshes"))?;
    Ok(())
}

/// Load the dataset named by `config`, analyse it and export all artifacts.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunReport> {
    let dataset = load_dataset(&config.dataset)?;
    let out = analyze(&dataset, config)?;
    write_artifacts(&out, &config.export, &config.output)?;
    Ok(out.report)
}
