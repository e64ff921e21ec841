//! Acceptance suite: one PASS/FAIL line per criterion.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use fsep::advect::{
    count_inconsistent, integrate_position, seed_lattice_index, seed_particles, CorrectorMode,
};
use fsep::dataset_io::{generate_scenario, ScenarioKind, SyntheticScenario};
use fsep::extract::{lattice_coord, point_in_mesh, smooth_mesh, MeshKind, TriangleMesh};
use fsep::grid::CellField;
use fsep::labeling::{label_mask, label_mask_partitioned, PartitionLayout, UnionFind};
use fsep::plic::{reconstruct_patch, truncated_volume};
use fsep::runtime::{analyze, required_ghost_width, PipelineConfig, RunOutput, DEFAULT_GHOST_WIDTH};
use fsep::{RectilinearGrid, TimeSeriesDataset, TimeStep, Vec3};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

fn run(ds: &TimeSeriesDataset, t0: usize, tf: usize, r: u32, f: impl FnOnce(&mut PipelineConfig)) -> RunOutput {
    let mut c = PipelineConfig::new("-", "-", t0, tf);
    c.advection.refinement = r;
    f(&mut c);
    analyze(ds, &c).expect("pipeline run")
}

fn seed_position(grid: &RectilinearGrid, r: u32, key: u64) -> Vec3 {
    let l = seed_lattice_index(grid, r, key);
    Vec3::from_fn(|a, _| lattice_coord(grid, r, a, l[a] as i64))
}

// 1

fn count_below(n: &Vec3, a: &Vec3, l: f64, cmin: &Vec3, res: usize) -> f64 {
    let mut inside = 0usize;
    for k in 0..res {
        for j in 0..res {
            for i in 0..res {
                let p = cmin + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) / res as f64;
                inside += ((p - a).dot(n) <= l) as usize;
            }
        }
    }
    inside as f64 / (res * res * res) as f64
}

fn plic_volume_consistency() -> Outcome {
    let g = Arc::new(RectilinearGrid::uniform([3, 3, 3], Vec3::zeros(), Vec3::repeat(3.0)).unwrap());
    let mut rng = StdRng::seed_from_u64(20240601);
    let mut worst_solve = 0.0f64;
    // (error at 64^3, error at 256^3) of every pair over the bound
    let mut over = Vec::new();
    let mut worst_count = 0.0f64;
    let cmin = Vec3::repeat(1.0);
    let size = Vec3::repeat(1.0);
    for _ in 0..1000 {
        let f: f64 = rng.random_range(1e-3..1.0 - 1e-3);
        let n = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
        // neighbours whose central difference points along -n
        let mut fv = vec![0.5; 27];
        fv[13] = f;
        for a in 0..3 {
            let stride = [1, 3, 9][a];
            fv[13 + stride] = 0.5 - 0.25 * n[a];
            fv[13 - stride] = 0.5 + 0.25 * n[a];
        }
        let step = TimeStep::new(
            0.0,
            CellField::new(g.clone(), 1, fv).unwrap(),
            CellField::zeros(g.clone(), 3),
        )
        .unwrap();
        let patch = reconstruct_patch(&step, [1, 1, 1]).map_err(|e| e.to_string())?;
        ensure!((patch.normal - n).norm() < 1e-9, "normal {:?} differs from {n:?}", patch.normal);
        let v = truncated_volume(&cmin, &size, &patch.normal, &patch.corner, patch.offset);
        worst_solve = worst_solve.max((v - f).abs());
        let e = (v - count_below(&patch.normal, &patch.corner, patch.offset, &cmin, 64)).abs();
        worst_count = worst_count.max(e);
        if e > 2e-4 {
            let fine = (v - count_below(&patch.normal, &patch.corner, patch.offset, &cmin, 256)).abs();
            over.push((e, fine));
        }
    }
    ensure!(worst_solve <= 1e-6, "max |V(l) - f| = {worst_solve:e}");
    if !over.is_empty() {
        let fine = over.iter().map(|o| o.1).fold(0.0, f64::max);
        return Err(format!(
            "{} of 1000 pairs differ from the 64^3 count by more than 2e-4 (max {worst_count:.2e}); \
             the same pairs agree with a 256^3 count within {fine:.1e}, so the excess is \
             discretisation error of the 64^3 oracle",
            over.len()
        ));
    }
    Ok(format!("max |V-f| = {worst_solve:.1e}, max |V-count| = {worst_count:.1e}"))
}

// 2

fn seed_count_law() -> Outcome {
    let g = Arc::new(RectilinearGrid::unit_cube(8).unwrap());
    let step = TimeStep::new(
        0.0,
        CellField::new(g.clone(), 1, vec![1.0; 512]).unwrap(),
        CellField::zeros(g, 3),
    )
    .unwrap();
    let mut counts = Vec::new();
    for r in 0..=2u32 {
        let n = seed_particles(&step, r, 0.0).len();
        ensure!(n == 512 * 8usize.pow(r), "r = {r}: {n} seeds");
        counts.push(n);
    }
    Ok(format!("seeds {counts:?}"))
}

// 3

fn rk4_order() -> Outcome {
    let mut s = SyntheticScenario::preset(ScenarioKind::RigidRotation, 32, 5);
    s.center = Vec3::new(0.75, 0.5, 0.5);
    s.radius = 0.1;
    let ds = generate_scenario(&s).map_err(|e| e.to_string())?;
    let x0 = Vec3::new(0.75, 0.5, 0.5);
    let error = |substeps: usize| {
        let mut x = x0;
        for w in ds.steps().windows(2) {
            x = integrate_position(x, &w[0], &w[1], substeps).expect("stays inside");
        }
        // one full turn returns to the start
        (x - x0).norm()
    };
    let e: Vec<f64> = [2, 4, 8, 16].iter().map(|&n| error(n)).collect();
    let orders: Vec<f64> = e.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    for &p in &orders {
        ensure!((3.5..=4.5).contains(&p), "orders {orders:.3?}, errors {e:?}");
    }
    Ok(format!("orders {orders:.3?}"))
}

// 4

fn union_find_components(mask: &[bool], n: usize) -> usize {
    let mut uf = UnionFind::new(mask.len());
    let idx = |x: usize, y: usize, z: usize| x + n * (y + n * z);
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let i = idx(x, y, z);
                if !mask[i] {
                    continue;
                }
                if x + 1 < n && mask[idx(x + 1, y, z)] {
                    uf.union(i, idx(x + 1, y, z));
                }
                if y + 1 < n && mask[idx(x, y + 1, z)] {
                    uf.union(i, idx(x, y + 1, z));
                }
                if z + 1 < n && mask[idx(x, y, z + 1)] {
                    uf.union(i, idx(x, y, z + 1));
                }
            }
        }
    }
    (0..mask.len()).filter(|&i| mask[i] && uf.find(i) == i).count()
}

fn ccl_parity() -> Outcome {
    let n = 32;
    let g = Arc::new(RectilinearGrid::unit_cube(n).unwrap());
    let layout = PartitionLayout::new([n; 3], [2, 2, 2], 2).unwrap();
    let mut rng = StdRng::seed_from_u64(4);
    let mut total = 0;
    for _ in 0..100 {
        let p = rng.random_range(0.2..0.6);
        let mask: Vec<bool> = (0..n * n * n).map(|_| rng.random_bool(p)).collect();
        let serial = label_mask(g.clone(), &mask);
        let part = label_mask_partitioned(g.clone(), &mask, &layout);
        ensure!(serial == part, "partitioned labels differ at density {p}");
        let oracle = union_find_components(&mask, n);
        ensure!(serial.count() == oracle, "{} components, oracle {oracle}", serial.count());
        total += oracle;
    }
    Ok(format!("100 masks, {total} components in total"))
}

// 5

struct SplitSphere {
    ds: TimeSeriesDataset,
    out: RunOutput,
    oracle_time: Option<f64>,
}

fn split_sphere_run() -> SplitSphere {
    let s = SyntheticScenario::preset(ScenarioKind::SplitSphere, 64, 20);
    let ds = generate_scenario(&s).unwrap();
    let out = run(&ds, 0, ds.len() - 1, 1, |_| {});
    let oracle_time = ds.steps().iter().find_map(|st| {
        let mask: Vec<bool> = (0..ds.grid().cell_count()).map(|i| st.fraction_flat(i) > 0.0).collect();
        (label_mask(ds.grid().clone(), &mask).count() >= 2).then_some(st.time)
    });
    SplitSphere { ds, out, oracle_time }
}

fn split_sphere_end_to_end(r: &SplitSphere) -> Outcome {
    let out = &r.out;
    let h = 1.0 / 64.0;
    ensure!(out.report.final_features == 2, "{} final features", out.report.final_features);
    let total = out.initial().len();
    for j in [0, 1] {
        let c = out.table.row(0, j).map_or(0, |row| row.count);
        let dev = (c as f64 - total as f64 / 2.0).abs() / (total as f64 / 2.0);
        ensure!(dev <= 0.02, "row 0->{j}: {c} of {total} seeds");
    }
    ensure!(out.boundaries.len() == 2, "{} boundary meshes", out.boundaries.len());
    ensure!(out.boundaries.iter().all(TriangleMesh::is_watertight), "boundary not watertight");
    let near_plane: Vec<&TriangleMesh> = out
        .separations
        .iter()
        .filter(|m| !m.is_empty() && m.vertices.iter().all(|v| (v[0] - 0.5).abs() <= h))
        .collect();
    ensure!(!near_plane.is_empty(), "no separation surface within one cell of the plane");
    let oracle = r.oracle_time.ok_or("halves never disconnect")?;
    let stamps: BTreeSet<u64> = out.separations.iter().map(|m| m.timestamp.unwrap().to_bits()).collect();
    let first = out
        .separations
        .iter()
        .map(|m| m.timestamp.unwrap())
        .fold(f64::INFINITY, f64::min);
    ensure!(first == oracle, "first separation at t = {first}, oracle t = {oracle}");
    ensure!(stamps.len() == 1, "separation surfaces at {} distinct times", stamps.len());
    let _ = &r.ds;
    Ok(format!(
        "{total} seeds, rows {} / {}, {} S meshes at t = {first:.4}",
        out.table.row(0, 0).unwrap().count,
        out.table.row(0, 1).unwrap().count,
        out.separations.len()
    ))
}

// 6

fn zero_interval(r: &SplitSphere) -> Result<(String, RunOutput), String> {
    let last = r.ds.len() - 1;
    let out = run(&r.ds, last, last, 1, |_| {});
    ensure!(out.separations.is_empty(), "{} separation surfaces", out.separations.len());
    ensure!(
        out.table.rows.iter().all(|row| row.initial == row.target),
        "off-diagonal contribution"
    );
    ensure!(
        out.boundaries.len() == out.report.initial_features,
        "{} boundaries for {} features",
        out.boundaries.len(),
        out.report.initial_features
    );
    let init = out.initial();
    for b in &out.boundaries {
        ensure!(b.labels[0] == b.labels[1], "boundary between {:?}", b.labels);
        for (&k, &l) in init.keys.iter().zip(&init.labels) {
            let inside = point_in_mesh(b, &seed_position(r.ds.grid(), 1, k));
            ensure!(inside == (l == b.labels[0]), "seed {k} misclassified by boundary {:?}", b.labels);
        }
    }
    Ok((format!("{} features, {} seeds enclosed", out.boundaries.len(), init.len()), out))
}

// 7

fn corrector_efficacy() -> Outcome {
    let mut s = SyntheticScenario::preset(ScenarioKind::SplitSphere, 64, 3);
    // grid-aligned translation: 4 cells per interval
    s.split_time = 0.0;
    s.rate = 4.0 / 64.0 / 0.5;
    let ds = generate_scenario(&s).map_err(|e| e.to_string())?;
    let last = ds.steps().last().unwrap();
    let h = 1.0 / 64.0;
    let with = |mode: CorrectorMode| run(&ds, 0, ds.len() - 1, 1, |c| c.advection.corrector = mode);
    let off = with(CorrectorMode::Off);
    let full = with(CorrectorMode::Full);
    let s23 = with(CorrectorMode::Stages23);
    let bad_off = count_inconsistent(&off.particles.particles, last, 0.0);
    let bad_full = count_inconsistent(&full.particles.particles, last, 0.0);
    let bad_s23 = count_inconsistent(&s23.particles.particles, last, 0.0);
    ensure!(bad_off > 0, "corrector off leaves no inconsistent particle");
    ensure!(bad_full == 0, "full corrector leaves {bad_full} inconsistent");
    ensure!(bad_s23 == 0, "stages 2-3 leave {bad_s23} inconsistent");
    let far = full
        .particles
        .particles
        .iter()
        .filter(|p| p.eps > 0.0 && (p.seed[0] - 0.5).abs() > 2.0 * h)
        .count();
    ensure!(far == 0, "{far} particles seeded beyond two cells of the plane were moved");
    ensure!(full.particles.particles.iter().any(|p| p.eps > 0.0), "full corrector never moved a particle");
    let sum = |o: &RunOutput| o.particles.particles.iter().map(|p| p.eps).sum::<f64>();
    let (e_full, e_s23) = (sum(&full), sum(&s23));
    Ok(format!(
        "off: {bad_off} inconsistent; total eps full {e_full:.4e}, stages-2-3 {e_s23:.4e} ({})",
        if e_s23 > e_full { "stages-2-3 larger" } else { "stages-2-3 not larger" }
    ))
}

// 8

struct MergeSplit {
    ds: TimeSeriesDataset,
    tf: usize,
    out: RunOutput,
}

fn merge_split_run() -> MergeSplit {
    let s = SyntheticScenario::preset(ScenarioKind::MergeThenSplit, 48, 33);
    let ds = generate_scenario(&s).unwrap();
    // the halves part and return to contact after half the duration
    let tf = (ds.len() - 1) / 2;
    let out = run(&ds, 0, tf, 1, |_| {});
    MergeSplit { ds, tf, out }
}

fn merge_then_split(m: &MergeSplit) -> Outcome {
    let out = &m.out;
    let first_split = out.splits.first().map(|(k, _)| *k).ok_or("no split detected")?;
    ensure!(out.report.initial_features == 1, "{} initial features", out.report.initial_features);
    let most = out.report.intervals.iter().map(|i| i.features).max().unwrap_or(0);
    ensure!(most >= 2, "never more than one feature");
    ensure!(out.report.final_features == 1, "{} features at tf", out.report.final_features);
    let merged = out.table.rows.iter().filter(|r| r.target >= 0).all(|r| r.initial == 0 && r.target == 0);
    ensure!(merged, "table rows {:?}", out.table.rows);
    let s = out
        .separations
        .iter()
        .filter(|mesh| !mesh.is_empty())
        .count();
    ensure!(s >= 1, "no separation surface for the intermediate split");
    let split_time = m.ds.steps()[first_split + 1].time;
    Ok(format!(
        "split at t = {split_time:.4}, re-merged at t = {:.4}, {s} S meshes",
        m.ds.steps()[m.tf].time
    ))
}

// 9

fn mode_equivalence(a: &SplitSphere, b: &MergeSplit) -> Outcome {
    let mut msgs = Vec::new();
    for (name, ds, tf, serial) in [
        ("split-sphere", &a.ds, a.ds.len() - 1, &a.out),
        ("merge-then-split", &b.ds, b.tf, &b.out),
    ] {
        let idx: Vec<usize> = (0..=tf).collect();
        let ghost = required_ghost_width(ds, &idx).max(DEFAULT_GHOST_WIDTH);
        for parts in [[3, 1, 1], [2, 2, 2]] {
            let p = run(ds, 0, tf, 1, |c| {
                c.partitions = Some(parts);
                c.ghost_width = ghost;
            });
            ensure!(p.labelings == serial.labelings, "{name} {parts:?}: seed labelings differ");
            ensure!(p.table == serial.table, "{name} {parts:?}: tables differ");
            let handoffs: usize = p.report.intervals.iter().map(|i| i.handoffs).sum();
            msgs.push(format!("{name} {}x{}x{}: {handoffs} handoffs", parts[0], parts[1], parts[2]));
        }
    }
    Ok(msgs.join(", "))
}

// 10

fn mesh_topology(meshes: &[&TriangleMesh]) -> Outcome {
    let (mut b, mut s) = (0, 0);
    for m in meshes {
        if m.is_empty() {
            continue;
        }
        match m.kind {
            MeshKind::Boundary => {
                ensure!(m.is_watertight(), "boundary {:?} not watertight", m.labels);
                b += 1;
            }
            MeshKind::Separation => {
                ensure!(m.is_open_manifold(), "separation {:?} not an open manifold", m.labels);
                s += 1;
            }
        }
        let sm = smooth_mesh(m, 10, 0.5);
        ensure!(
            sm.triangles == m.triangles && sm.vertices.len() == m.vertices.len(),
            "smoothing changed the connectivity of {:?}",
            m.labels
        );
    }
    ensure!(b > 0 && s > 0, "{b} boundaries and {s} separation surfaces checked");
    Ok(format!("{b} boundary and {s} separation meshes"))
}

fn report(n: usize, title: &str, started: Instant, outcome: &Outcome, failures: &mut usize) {
    let secs = started.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => println!("PASS {n:>2} {title}: {detail} [{secs:.1}s]"),
        Err(why) => {
            *failures += 1;
            println!("FAIL {n:>2} {title}: {why} [{secs:.1}s]");
        }
    }
}

fn main() -> ExitCode {
    let mut failures = 0;
    let t = Instant::now();
    report(1, "PLIC volume consistency", t, &plic_volume_consistency(), &mut failures);
    let t = Instant::now();
    report(2, "seed count law", t, &seed_count_law(), &mut failures);
    let t = Instant::now();
    report(3, "RK4 convergence order", t, &rk4_order(), &mut failures);
    let t = Instant::now();
    report(4, "partitioned labeling parity", t, &ccl_parity(), &mut failures);

    let t = Instant::now();
    let sphere = split_sphere_run();
    report(5, "split sphere end to end", t, &split_sphere_end_to_end(&sphere), &mut failures);

    let t = Instant::now();
    let zero = zero_interval(&sphere);
    let zero_outcome = zero.as_ref().map(|(s, _)| s.clone()).map_err(Clone::clone);
    report(6, "zero-length interval", t, &zero_outcome, &mut failures);

    let t = Instant::now();
    report(7, "corrector efficacy", t, &corrector_efficacy(), &mut failures);

    let t = Instant::now();
    let merge = merge_split_run();
    report(8, "merge then split", t, &merge_then_split(&merge), &mut failures);

    let t = Instant::now();
    report(9, "serial and partitioned equivalence", t, &mode_equivalence(&sphere, &merge), &mut failures);

    let t = Instant::now();
    let mut meshes: Vec<&TriangleMesh> = Vec::new();
    for o in [Some(&sphere.out), Some(&merge.out), zero.as_ref().ok().map(|(_, o)| o)]
        .into_iter()
        .flatten()
    {
        meshes.extend(o.boundaries.iter().chain(&o.separations));
    }
    report(10, "mesh topology", t, &mesh_topology(&meshes), &mut failures);

    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
