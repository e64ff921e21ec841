//! In-process partition workers exchanging typed messages in lock-step.
//!
//! Each worker owns the particles whose current cell lies in its core and
//! only reads field data inside its halo. Everything that crosses a
//! partition boundary travels as a [`Message`]; the coordinator role
//! (label merging, gathering seed labels) is played by worker 0.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rayon::prelude::*;

use crate::advect::{
    correct_particles, integrate_particles, phase_validity, record_trail, seed_particles_in,
    AdvectionConfig, CorrectorMode, IntervalStats, NeighborIndex, Particle, ParticleSet,
    SnapshotRecord,
};
use crate::error::{Error, Result};
use crate::grid::{CellBox, StepAccess, TimeStep, Vec3, WindowedStep};
use crate::labeling::{
    boundary_equivalences, label_partition, merge_local_labels, Equivalence, LabelField,
    LocalLabels, PartitionLayout, BACKGROUND,
};
use crate::segment::{label_at, SeedLabeling};

pub const COORDINATOR: usize = 0;

#[derive(Clone, Debug)]
pub enum Message {
    /// Particles whose position moved into the receiver's core.
    Handoff(Vec<Particle>),
    /// Phase-valid start/end positions near the receiver's core, for
    /// neighbour displacement lookups.
    Snapshot(Vec<SnapshotRecord>),
    /// Local component labels of the sender's core.
    Labels(Arc<LocalLabels>),
    /// Face equivalences found by the sender plus the smallest flat index of
    /// each of its local components.
    Equivalences {
        min_flat: Vec<usize>,
        pairs: Vec<Equivalence>,
    },
    /// Local-to-global label map for the receiver.
    LabelMap(Vec<i32>),
    /// Global labels of the sender's core.
    CoreLabels { core: CellBox, labels: Vec<i32> },
    /// Assembled global label field.
    LabelField(Arc<LabelField>),
    /// `(particle key, owner, label)` triples.
    LabelTriples(Vec<(u64, usize, i32)>),
}

#[derive(Clone, Debug)]
pub struct Envelope {
    pub from: usize,
    pub to: usize,
    pub message: Message,
}

/// Message traffic of one exchange round.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Traffic {
    pub messages: usize,
    pub handoffs: usize,
}

/// Sort outgoing envelopes into per-receiver inboxes, ordered by sender.
fn deliver(outgoing: Vec<Envelope>, workers: usize, traffic: &mut Traffic) -> Vec<Vec<Envelope>> {
    let mut inboxes: Vec<Vec<Envelope>> = (0..workers).map(|_| Vec::new()).collect();
    for e in outgoing {
        traffic.messages += 1;
        if let Message::Handoff(ps) = &e.message {
            traffic.handoffs += ps.len();
        }
        inboxes[e.to].push(e);
    }
    for inbox in &mut inboxes {
        inbox.sort_by_key(|e| e.from);
    }
    inboxes
}

#[derive(Debug)]
struct Worker {
    id: usize,
    core: CellBox,
    halo: CellBox,
    particles: Vec<Particle>,
    // per-interval scratch
    before: Vec<Vec3>,
    valid: Vec<bool>,
    stats: IntervalStats,
}

impl Worker {
    fn violation(&self, flag: &AtomicBool, what: &str, have: usize, need: usize) -> Result<()> {
        if flag.load(Ordering::Relaxed) {
            return Err(Error::GhostWidth {
                have,
                need: need.max(have + 1),
                detail: format!("partition {} read outside its halo during {what}", self.id),
            });
        }
        Ok(())
    }
}

/// Partitioned particle state.
#[derive(Debug)]
pub struct PartitionedParticles {
    layout: PartitionLayout,
    workers: Vec<Worker>,
    refinement: u32,
    /// Lower bound on the ghost width the data needs, for diagnostics.
    need: usize,
    pub last_traffic: Traffic,
}

impl PartitionedParticles {
    pub fn new(layout: PartitionLayout, need: usize) -> Self {
        let workers = (0..layout.len())
            .map(|p| Worker {
                id: p,
                core: layout.core(p),
                halo: layout.halo(p),
                particles: Vec::new(),
                before: Vec::new(),
                valid: Vec::new(),
                stats: IntervalStats::default(),
            })
            .collect();
        Self {
            layout,
            workers,
            refinement: 0,
            need,
            last_traffic: Traffic::default(),
        }
    }

    pub fn layout(&self) -> &PartitionLayout {
        &self.layout
    }

    /// Particle count per worker.
    pub fn owned_counts(&self) -> Vec<usize> {
        self.workers.iter().map(|w| w.particles.len()).collect()
    }

    /// Alive particles each sit in the core of the worker holding them.
    pub fn ownership_consistent(&self, step: &TimeStep) -> bool {
        let grid = step.grid();
        self.workers.iter().all(|w| {
            w.particles
                .iter()
                .filter(|p| p.alive)
                .all(|p| grid.locate_cell(&p.position).is_some_and(|c| w.core.contains(c)))
        })
    }

    pub fn seed(&mut self, step: &TimeStep, r: u32, tau: f64) -> Result<()> {
        self.refinement = r;
        let have = self.layout.ghost();
        let need = self.need;
        self.workers.par_iter_mut().try_for_each(|w| {
            let flag = AtomicBool::new(false);
            let view = WindowedStep::new(step, w.halo, &flag);
            w.particles = seed_particles_in(&view, r, tau, &w.core).particles;
            w.violation(&flag, "seeding", have, need)
        })
    }

    pub fn record_trail(&mut self, time: f64) {
        for w in &mut self.workers {
            record_trail(&mut w.particles, time);
        }
    }

    /// One interval: integrate, exchange snapshots, correct, hand off.
    pub fn advance(
        &mut self,
        from: &TimeStep,
        to: &TimeStep,
        config: &AdvectionConfig,
        tau: f64,
    ) -> Result<IntervalStats> {
        let layout = &self.layout;
        let dims = layout.dims();
        let have = layout.ghost();
        let need = self.need;
        let n = self.workers.len();
        let mut traffic = Traffic::default();
        let flags: Vec<AtomicBool> = (0..n).map(|_| AtomicBool::new(false)).collect();

        // integrate and publish phase-valid snapshots to neighbours
        let outgoing: Vec<Envelope> = self
            .workers
            .par_iter_mut()
            .flat_map_iter(|w| {
                let wf = WindowedStep::new(from, w.halo, &flags[w.id]);
                let wt = WindowedStep::new(to, w.halo, &flags[w.id]);
                let advected = w.particles.iter().filter(|p| p.alive).count();
                w.before = integrate_particles(&mut w.particles, &wf, &wt, config.substeps);
                let alive = w.particles.iter().filter(|p| p.alive).count();
                w.valid = phase_validity(&w.particles, &wt, tau);
                let inconsistent = w
                    .particles
                    .iter()
                    .zip(&w.valid)
                    .filter(|(p, v)| p.alive && !**v)
                    .count();
                w.stats = IntervalStats {
                    advected,
                    exited: advected - alive,
                    inconsistent,
                    ..Default::default()
                };
                let mut out = Vec::new();
                if config.corrector == CorrectorMode::Full {
                    let grid = from.grid();
                    for q in layout.neighbors(w.id) {
                        let reach = layout.core(q).expanded(1, dims);
                        let records: Vec<SnapshotRecord> = w
                            .particles
                            .iter()
                            .zip(&w.before)
                            .zip(&w.valid)
                            .filter(|((_, b), &v)| v && grid.locate_cell(b).is_some_and(|c| reach.contains(c)))
                            .map(|((p, b), _)| SnapshotRecord {
                                key: p.key,
                                before: *b,
                                after: p.position,
                                valid: true,
                            })
                            .collect();
                        if !records.is_empty() {
                            out.push(Envelope {
                                from: w.id,
                                to: q,
                                message: Message::Snapshot(records),
                            });
                        }
                    }
                }
                out
            })
            .collect();
        let inboxes = deliver(outgoing, n, &mut traffic);

        // correct, then hand particles to their new owners
        let outgoing: Vec<Envelope> = self
            .workers
            .par_iter_mut()
            .zip(inboxes)
            .flat_map_iter(|(w, inbox)| {
                let wf = WindowedStep::new(from, w.halo, &flags[w.id]);
                let wt = WindowedStep::new(to, w.halo, &flags[w.id]);
                if config.corrector == CorrectorMode::Off {
                    w.stats.remaining = w.stats.inconsistent;
                } else {
                    let own = w
                        .particles
                        .iter()
                        .zip(&w.before)
                        .zip(&w.valid)
                        .map(|((p, b), &v)| SnapshotRecord {
                            key: p.key,
                            before: *b,
                            after: p.position,
                            valid: v,
                        });
                    let received = inbox.into_iter().flat_map(|e| match e.message {
                        Message::Snapshot(r) => r,
                        _ => Vec::new(),
                    });
                    let index = NeighborIndex::build(from.grid(), own.chain(received).collect::<Vec<_>>());
                    let c = correct_particles(
                        &mut w.particles,
                        &w.before,
                        &w.valid,
                        &wf,
                        &wt,
                        &index,
                        config.corrector,
                        tau,
                    );
                    w.stats.corrected = c.corrected;
                    w.stats.remaining = c.remaining;
                    w.stats.vanished = c.vanished;
                }
                let grid = to.grid();
                let mut leaving: HashMap<usize, Vec<Particle>> = HashMap::new();
                let mut staying = Vec::with_capacity(w.particles.len());
                for p in w.particles.drain(..) {
                    let owner = if p.alive {
                        grid.locate_cell(&p.position).map(|c| layout.owner(c))
                    } else {
                        None
                    };
                    match owner {
                        Some(q) if q != w.id => leaving.entry(q).or_default().push(p),
                        _ => staying.push(p),
                    }
                }
                w.particles = staying;
                let mut out: Vec<Envelope> = leaving
                    .into_iter()
                    .map(|(q, ps)| Envelope {
                        from: w.id,
                        to: q,
                        message: Message::Handoff(ps),
                    })
                    .collect();
                out.sort_by_key(|e| e.to);
                out
            })
            .collect();
        for (w, f) in self.workers.iter().zip(&flags) {
            w.violation(f, "advection", have, need)?;
        }
        let inboxes = deliver(outgoing, n, &mut traffic);
        for (w, inbox) in self.workers.iter_mut().zip(inboxes) {
            for e in inbox {
                if let Message::Handoff(ps) = e.message {
                    w.particles.extend(ps);
                }
            }
            w.particles.sort_unstable_by_key(|p| p.key);
        }
        self.last_traffic = traffic;
        Ok(self
            .workers
            .iter()
            .fold(IntervalStats::default(), |acc, w| acc.merge(w.stats)))
    }

    /// Partitioned connected-component labeling of `step`.
    pub fn label(&mut self, step: &TimeStep, tau: f64) -> Result<Arc<LabelField>> {
        let layout = &self.layout;
        let grid = step.grid_arc().clone();
        let n = self.workers.len();
        let mut traffic = Traffic::default();

        // local labeling of each core
        let locals: Vec<Arc<LocalLabels>> = self
            .workers
            .par_iter()
            .map(|w| {
                let mut mask = vec![false; grid.cell_count()];
                for c in w.core.cells() {
                    mask[grid.flat_index(c)] = step.fraction_at(c) > tau;
                }
                Arc::new(label_partition(&mask, layout, w.id))
            })
            .collect();
        let outgoing: Vec<Envelope> = (0..n)
            .flat_map(|p| {
                let l = &locals[p];
                layout.neighbors(p).into_iter().map(move |q| Envelope {
                    from: p,
                    to: q,
                    message: Message::Labels(l.clone()),
                })
            })
            .collect();
        let inboxes = deliver(outgoing, n, &mut traffic);

        // face equivalences, sent to the coordinator
        let outgoing: Vec<Envelope> = inboxes
            .into_par_iter()
            .enumerate()
            .map(|(p, inbox)| {
                let mut received: HashMap<usize, Arc<LocalLabels>> = HashMap::new();
                for e in inbox {
                    if let Message::Labels(l) = e.message {
                        received.insert(e.from, l);
                    }
                }
                let own = &locals[p];
                let pairs = boundary_equivalences(layout, p, |q| {
                    if q == p {
                        own.as_ref()
                    } else {
                        received[&q].as_ref()
                    }
                });
                Envelope {
                    from: p,
                    to: COORDINATOR,
                    message: Message::Equivalences {
                        min_flat: own.min_flat.clone(),
                        pairs,
                    },
                }
            })
            .collect();
        let mut inboxes = deliver(outgoing, n, &mut traffic);

        // coordinator merges and returns label maps
        let mut min_flat = vec![Vec::new(); n];
        let mut pairs = Vec::new();
        for e in inboxes.swap_remove(COORDINATOR) {
            if let Message::Equivalences { min_flat: m, pairs: ps } = e.message {
                min_flat[e.from] = m;
                pairs.extend(ps);
            }
        }
        let slices: Vec<&[usize]> = min_flat.iter().map(Vec::as_slice).collect();
        let (maps, count) = merge_local_labels(&slices, &pairs);
        let outgoing: Vec<Envelope> = maps
            .into_iter()
            .enumerate()
            .map(|(p, m)| Envelope {
                from: COORDINATOR,
                to: p,
                message: Message::LabelMap(m),
            })
            .collect();
        let inboxes = deliver(outgoing, n, &mut traffic);

        // workers relabel their cores and send them to the coordinator
        let outgoing: Vec<Envelope> = inboxes
            .into_par_iter()
            .enumerate()
            .map(|(p, inbox)| {
                let map = inbox
                    .into_iter()
                    .find_map(|e| match e.message {
                        Message::LabelMap(m) => Some(m),
                        _ => None,
                    })
                    .unwrap_or_default();
                let l = &locals[p];
                let labels = l
                    .labels
                    .iter()
                    .map(|&x| if x < 0 { BACKGROUND } else { map[x as usize] })
                    .collect();
                Envelope {
                    from: p,
                    to: COORDINATOR,
                    message: Message::CoreLabels { core: l.core, labels },
                }
            })
            .collect();
        let mut inboxes = deliver(outgoing, n, &mut traffic);
        let mut labels = vec![BACKGROUND; grid.cell_count()];
        for e in inboxes.swap_remove(COORDINATOR) {
            if let Message::CoreLabels { core, labels: part } = e.message {
                for (c, l) in core.cells().zip(part) {
                    labels[grid.flat_index(c)] = l;
                }
            }
        }
        let field = Arc::new(LabelField::new(grid, labels, count)?);

        // broadcast
        let outgoing = (0..n)
            .map(|p| Envelope {
                from: COORDINATOR,
                to: p,
                message: Message::LabelField(field.clone()),
            })
            .collect();
        deliver(outgoing, n, &mut traffic);
        self.last_traffic.messages += traffic.messages;
        Ok(field)
    }

    /// Each worker labels its own particles; the coordinator gathers the
    /// `(key, owner, label)` triples.
    pub fn assign(&mut self, labels: &LabelField, step: &TimeStep, tau: f64) -> SeedLabeling {
        let n = self.workers.len();
        let outgoing: Vec<Envelope> = self
            .workers
            .par_iter()
            .map(|w| {
                let triples = w
                    .particles
                    .iter()
                    .map(|p| {
                        let l = if p.alive {
                            label_at(labels, step, &p.position, tau)
                        } else {
                            BACKGROUND
                        };
                        (p.key, w.id, l)
                    })
                    .collect();
                Envelope {
                    from: w.id,
                    to: COORDINATOR,
                    message: Message::LabelTriples(triples),
                }
            })
            .collect();
        let mut traffic = Traffic::default();
        let mut inboxes = deliver(outgoing, n, &mut traffic);
        self.last_traffic.messages += traffic.messages;
        let pairs = inboxes
            .swap_remove(COORDINATOR)
            .into_iter()
            .flat_map(|e| match e.message {
                Message::LabelTriples(t) => t,
                _ => Vec::new(),
            })
            .map(|(k, _, l)| (k, l))
            .collect();
        SeedLabeling::from_pairs(step.time, pairs)
    }

    /// Gather every particle, in key order.
    pub fn gather(&self) -> ParticleSet {
        let mut particles: Vec<Particle> = self
            .workers
            .iter()
            .flat_map(|w| w.particles.iter().cloned())
            .collect();
        particles.sort_unstable_by_key(|p| p.key);
        ParticleSet {
            refinement: self.refinement,
            particles,
        }
    }
}
