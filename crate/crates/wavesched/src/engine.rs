//! Discrete-event simulation of one decoding run.
//!
//! Time advances from one CTU completion (or migration delay expiry) to the
//! next. Cores are shared fairly between the threads executing on them, so
//! on every occupancy change the remaining work of in-flight CTUs is simply
//! drained at the new per-thread rate.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{compute_metrics, MetricsError, SimReport};
use crate::grid::{CtuCoord, GridDims, GridError, Phase, TaskId, WppGraph};
use crate::platform::{CoreId, Platform, PlatformError};
use crate::policy::{
    initial_assignment, MigrationDecision, PolicyError, PolicyKind, PolicySpec, RowAction,
    SchedState, ThreadId,
};
use crate::workload::{CostModel, WorkloadError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Platform(#[from] PlatformError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("workload is empty")]
    NoFrames,
    #[error("frame {frame} cost model is {found}, expected {expected}")]
    DimsMismatch { frame: usize, expected: GridDims, found: GridDims },
    #[error("deadlock at t={time_s}s in frame {frame}: nothing runnable, blocked tasks {blocked:?}")]
    Deadlock { frame: usize, time_s: f64, blocked: Vec<TaskId> },
    #[error("sweep needs at least one {0}")]
    EmptySweep(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub platform: Platform,
    pub policy: PolicySpec,
    /// One cost model per frame.
    pub workload: Vec<CostModel>,
    pub dims: GridDims,
    /// Column lead of the upper-row reconstruction dependency.
    pub wpp_lead: usize,
    pub simd: bool,
}

impl SimConfig {
    pub fn frames(&self) -> usize {
        self.workload.len()
    }

    pub fn graph(&self) -> Result<WppGraph, GridError> {
        WppGraph::with_lead(self.dims, self.wpp_lead)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.platform.validate()?;
        self.policy.validate(&self.platform)?;
        self.graph()?;
        if self.workload.is_empty() {
            return Err(SimError::NoFrames);
        }
        for (frame, m) in self.workload.iter().enumerate() {
            if m.dims != self.dims {
                return Err(SimError::DimsMismatch { frame, expected: self.dims, found: m.dims });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MigrationCause {
    /// Guarded promotion after a reconstructed CTU.
    CtuCheck,
    /// Thread moved to a LITTLE core to start a new row.
    RowSwap,
    /// Unbound thread placed at the frame barrier.
    Barrier,
    /// Filter-stage promotion to an idle big core.
    FilterCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    CtuStart,
    CtuComplete,
    RowComplete,
    BarrierReached,
    /// `core` of the event is the destination.
    Migration {
        from: Option<CoreId>,
        overhead_s: f64,
        cause: MigrationCause,
        rank: Option<usize>,
        idle_big: Option<usize>,
    },
    FrameComplete,
    ThreadIdle,
    ThreadResume,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time_s: f64,
    pub frame: usize,
    pub kind: EventKind,
    pub thread: Option<ThreadId>,
    pub core: Option<CoreId>,
    pub task: Option<TaskId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTrace {
    pub frames: usize,
    pub simd: bool,
    pub core_count: usize,
    pub threads: usize,
    pub rows: usize,
    pub big_cores: Vec<CoreId>,
    pub events: Vec<SimEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Work {
    Recon(CtuCoord),
    Filter(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Status {
    Idle,
    /// Has a next CTU; may be waiting on dependencies.
    Ready(Work),
    Migrating { until: f64, next: Option<Work> },
    Running { work: Work, remaining: f64 },
}

/// Filter-stage dependency counts shared by every frame.
struct FilterGraph {
    successors: Vec<Vec<usize>>,
    indegree: Vec<u32>,
}

impl FilterGraph {
    fn new(graph: &WppGraph) -> Result<Self, GridError> {
        let n = graph.dims.ctu_count();
        let mut successors = vec![Vec::new(); 3 * n];
        let mut indegree = vec![0u32; 3 * n];
        for p in Phase::FILTERS {
            for c in graph.dims.coords() {
                let idx = filter_index(graph.dims, p, c);
                for dep in graph.filter_deps(TaskId::new(0, p, c))? {
                    successors[filter_index(graph.dims, dep.phase, dep.coord)].push(idx);
                    indegree[idx] += 1;
                }
            }
        }
        Ok(Self { successors, indegree })
    }
}

/// Filter tasks are numbered in (phase, row, col) order, which is also the
/// dispatch order of the shared pool.
fn filter_index(dims: GridDims, phase: Phase, c: CtuCoord) -> usize {
    (phase.index() - 1) * dims.ctu_count() + dims.linear(c)
}

fn filter_task(dims: GridDims, frame: usize, idx: usize) -> TaskId {
    let n = dims.ctu_count();
    TaskId::new(frame, Phase::FILTERS[idx / n], dims.coord(idx % n))
}

/// Completions closer than this (relative to the clock) are simultaneous.
pub(crate) const TIME_TOL: f64 = 1e-12;

struct Engine<'a> {
    cfg: &'a SimConfig,
    graph: WppGraph,
    filters: FilterGraph,
    now: f64,
    events: Vec<SimEvent>,
    frame: usize,
    state: SchedState,
    status: Vec<Status>,
    idle_flag: Vec<bool>,
    recon_done: Vec<bool>,
    recon_count: usize,
    filter_done: usize,
    indegree: Vec<u32>,
    ready_filters: BTreeSet<usize>,
}

pub fn simulate(cfg: &SimConfig) -> Result<(EventTrace, SimReport), SimError> {
    let trace = run_trace(cfg)?;
    let report = compute_metrics(&trace, &cfg.platform)?;
    Ok((trace, report.labelled(cfg)))
}

/// Runs the simulation and returns the raw event trace.
pub fn run_trace(cfg: &SimConfig) -> Result<EventTrace, SimError> {
    cfg.validate()?;
    let graph = cfg.graph()?;
    let filters = FilterGraph::new(&graph)?;
    let state = initial_assignment(&cfg.policy, &cfg.platform, cfg.dims.rows)?;
    let n = cfg.dims.ctu_count();
    let mut engine = Engine {
        cfg,
        graph,
        now: 0.0,
        events: Vec::with_capacity(cfg.frames() * n * 8),
        frame: 0,
        status: vec![Status::Idle; cfg.policy.threads],
        idle_flag: vec![false; cfg.policy.threads],
        recon_done: vec![false; n],
        recon_count: 0,
        filter_done: 0,
        indegree: filters.indegree.clone(),
        ready_filters: BTreeSet::new(),
        filters,
        state,
    };
    for frame in 0..cfg.frames() {
        engine.run_frame(frame)?;
    }
    Ok(EventTrace {
        frames: cfg.frames(),
        simd: cfg.simd,
        core_count: cfg.platform.core_count(),
        threads: cfg.policy.threads,
        rows: cfg.dims.rows,
        big_cores: cfg.platform.big_cores().collect(),
        events: engine.events,
    })
}

impl Engine<'_> {
    fn dims(&self) -> GridDims {
        self.cfg.dims
    }

    fn costs(&self) -> &CostModel {
        &self.cfg.workload[self.frame]
    }

    fn emit(&mut self, kind: EventKind, thread: Option<ThreadId>, core: Option<CoreId>, task: Option<TaskId>) {
        self.events.push(SimEvent { time_s: self.now, frame: self.frame, kind, thread, core, task });
    }

    fn reset_frame(&mut self, frame: usize) -> Result<(), SimError> {
        self.frame = frame;
        self.state = initial_assignment(&self.cfg.policy, &self.cfg.platform, self.dims().rows)?;
        self.recon_done.iter_mut().for_each(|d| *d = false);
        self.recon_count = 0;
        self.filter_done = 0;
        self.indegree.clone_from(&self.filters.indegree);
        self.ready_filters.clear();
        for t in 0..self.status.len() {
            self.idle_flag[t] = false;
            self.status[t] = match self.state.threads[t].row {
                Some(row) => Status::Ready(Work::Recon(CtuCoord::new(row, 0))),
                None => Status::Idle,
            };
        }
        Ok(())
    }

    fn task_of(&self, work: Work) -> TaskId {
        match work {
            Work::Recon(c) => TaskId::new(self.frame, Phase::Recon, c),
            Work::Filter(idx) => filter_task(self.dims(), self.frame, idx),
        }
    }

    fn running_on(&self, core: CoreId) -> usize {
        self.status
            .iter()
            .enumerate()
            .filter(|(t, s)| {
                matches!(s, Status::Running { .. }) && self.state.threads[*t].core == Some(core)
            })
            .count()
    }

    fn core_busy(&self) -> Vec<bool> {
        let mut busy = vec![false; self.cfg.platform.core_count()];
        for (t, s) in self.status.iter().enumerate() {
            if matches!(s, Status::Running { .. } | Status::Migrating { .. }) {
                if let Some(c) = self.state.threads[t].core {
                    busy[c] = true;
                }
            }
        }
        busy
    }

    fn recon_ready(&self, c: CtuCoord) -> bool {
        self.graph
            .recon_deps(c)
            .expect("coordinate inside grid")
            .iter()
            .all(|d| self.recon_done[self.dims().linear(*d)])
    }

    fn start(&mut self, t: ThreadId, work: Work) {
        let core = self.state.threads[t].core.expect("running thread is bound");
        let (phase, coord) = match work {
            Work::Recon(c) => (Phase::Recon, c),
            Work::Filter(idx) => {
                let task = filter_task(self.dims(), self.frame, idx);
                (task.phase, task.coord)
            }
        };
        let mut remaining = self.costs().effective_task_cost(phase, coord, self.cfg.simd);
        let penalty = self.cfg.platform.switch_penalty_s;
        if penalty > 0.0 && self.running_on(core) > 0 {
            remaining += penalty * self.cfg.platform.core_type(core).speed_wu_per_s;
        }
        if std::mem::take(&mut self.idle_flag[t]) {
            self.emit(EventKind::ThreadResume, Some(t), Some(core), None);
        }
        let task = self.task_of(work);
        self.emit(EventKind::CtuStart, Some(t), Some(core), Some(task));
        self.status[t] = Status::Running { work, remaining };
    }

    fn mark_idle(&mut self, t: ThreadId) {
        if !self.idle_flag[t] {
            self.idle_flag[t] = true;
            let core = self.state.threads[t].core;
            self.emit(EventKind::ThreadIdle, Some(t), core, None);
        }
    }

    /// Starts every CTU whose dependencies are met, then feeds idle threads
    /// from the filter pool.
    fn dispatch(&mut self) {
        for t in 0..self.status.len() {
            if let Status::Ready(Work::Recon(c)) = self.status[t] {
                if self.recon_ready(c) {
                    self.start(t, Work::Recon(c));
                } else {
                    self.mark_idle(t);
                }
            }
        }
        if !self.state.filter_stage {
            return;
        }
        while let Some(&idx) = self.ready_filters.iter().next() {
            let busy = self.core_busy();
            let pick = (0..self.status.len())
                .filter(|&t| self.status[t] == Status::Idle)
                .filter_map(|t| self.state.threads[t].core.map(|c| (t, c)))
                .min_by_key(|&(t, c)| (busy[c], !self.state.is_big(c), t));
            let Some((t, _)) = pick else { break };
            self.ready_filters.remove(&idx);
            self.start(t, Work::Filter(idx));
        }
        for t in 0..self.status.len() {
            if self.status[t] == Status::Idle {
                self.mark_idle(t);
            }
        }
    }

    fn blocked_tasks(&self) -> Vec<TaskId> {
        let mut blocked: Vec<TaskId> = self
            .status
            .iter()
            .filter_map(|s| match s {
                Status::Ready(w) => Some(self.task_of(*w)),
                _ => None,
            })
            .collect();
        if !self.state.filter_stage {
            for row in self.state.next_row..self.dims().rows {
                blocked.push(TaskId::recon(self.frame, row, 0));
            }
        }
        blocked
    }

    fn frame_done(&self) -> bool {
        self.filter_done == 3 * self.dims().ctu_count()
    }

    fn run_frame(&mut self, frame: usize) -> Result<(), SimError> {
        self.reset_frame(frame)?;
        loop {
            self.dispatch();
            if self.frame_done() {
                self.emit(EventKind::FrameComplete, None, None, None);
                return Ok(());
            }
            let rates = self.rates();
            let mut next = f64::INFINITY;
            for (t, s) in self.status.iter().enumerate() {
                match s {
                    Status::Running { remaining, .. } => next = next.min(self.now + remaining / rates[t]),
                    Status::Migrating { until, .. } => next = next.min(*until),
                    _ => {}
                }
            }
            if !next.is_finite() {
                return Err(SimError::Deadlock {
                    frame,
                    time_s: self.now,
                    blocked: self.blocked_tasks(),
                });
            }
            let dt = next - self.now;
            let tol = TIME_TOL * next.abs().max(1.0);
            let mut expired = Vec::new();
            let mut finished = Vec::new();
            for t in 0..self.status.len() {
                match &mut self.status[t] {
                    Status::Running { work, remaining } => {
                        let finish = self.now + *remaining / rates[t];
                        if finish <= next + tol {
                            *remaining = 0.0;
                            finished.push((t, *work));
                        } else {
                            *remaining -= rates[t] * dt;
                        }
                    }
                    Status::Migrating { until, .. } if *until <= next + tol => expired.push(t),
                    _ => {}
                }
            }
            self.now = next;
            for t in expired {
                if let Status::Migrating { next: work, .. } = self.status[t] {
                    self.status[t] = work.map_or(Status::Idle, Status::Ready);
                }
            }
            let dims = self.dims();
            let key = |&(t, w): &(ThreadId, Work), core: CoreId| match w {
                Work::Recon(c) => (c.row, c.col, 0, core, t),
                Work::Filter(idx) => {
                    let task = filter_task(dims, 0, idx);
                    (task.coord.row, task.coord.col, task.phase.index(), core, t)
                }
            };
            finished.sort_by_key(|f| key(f, self.state.threads[f.0].core.unwrap_or(usize::MAX)));
            for (t, work) in finished {
                match work {
                    Work::Recon(c) => self.complete_recon(t, c)?,
                    Work::Filter(idx) => self.complete_filter(t, idx),
                }
            }
        }
    }

    /// Per-thread execution rate (work units per second) under fair sharing.
    fn rates(&self) -> Vec<f64> {
        let mut per_core: BTreeMap<CoreId, usize> = BTreeMap::new();
        for (t, s) in self.status.iter().enumerate() {
            if matches!(s, Status::Running { .. }) {
                *per_core.entry(self.state.threads[t].core.expect("bound")).or_default() += 1;
            }
        }
        self.status
            .iter()
            .enumerate()
            .map(|(t, s)| match s {
                Status::Running { .. } => {
                    let core = self.state.threads[t].core.expect("bound");
                    self.cfg.platform.core_type(core).speed_wu_per_s / per_core[&core] as f64
                }
                _ => 0.0,
            })
            .collect()
    }

    fn migrate(&mut self, t: ThreadId, d: MigrationDecision, cause: MigrationCause, next: Option<Work>) {
        let from = self.state.threads[t].core;
        let handoff = self.state.apply_migration(t, d.to);
        self.begin_migration(t, from, d.to, cause, d.rank, Some(d.idle_big), next);
        if let Some(h) = handoff {
            let from = self.state.threads[h.thread].last_core;
            let next = Some(Work::Recon(CtuCoord::new(h.row, 0)));
            self.begin_migration(h.thread, from, h.core, MigrationCause::RowSwap, None, None, next);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn begin_migration(
        &mut self,
        t: ThreadId,
        from: Option<CoreId>,
        to: CoreId,
        cause: MigrationCause,
        rank: Option<usize>,
        idle_big: Option<usize>,
        next: Option<Work>,
    ) {
        let overhead_s = self.cfg.policy.migration_overhead_s;
        let task = next.map(|w| self.task_of(w));
        self.emit(
            EventKind::Migration { from, overhead_s, cause, rank, idle_big },
            Some(t),
            Some(to),
            task,
        );
        self.status[t] = if overhead_s > 0.0 {
            Status::Migrating { until: self.now + overhead_s, next }
        } else {
            next.map_or(Status::Idle, Status::Ready)
        };
    }

    fn complete_recon(&mut self, t: ThreadId, c: CtuCoord) -> Result<(), SimError> {
        let dims = self.dims();
        let core = self.state.threads[t].core;
        let task = TaskId::new(self.frame, Phase::Recon, c);
        self.recon_done[dims.linear(c)] = true;
        self.recon_count += 1;
        self.emit(EventKind::CtuComplete, Some(t), core, Some(task));
        if c.col + 1 < dims.cols {
            let next = Work::Recon(CtuCoord::new(c.row, c.col + 1));
            self.status[t] = Status::Ready(next);
            if let Some(d) = self.state.on_recon_ctu_complete(t, c) {
                self.migrate(t, d, MigrationCause::CtuCheck, Some(next));
            }
        } else {
            self.emit(EventKind::RowComplete, Some(t), core, Some(task));
            match self.state.on_row_complete(t) {
                RowAction::TakeRow { row, bind_to: None } => {
                    let start = CtuCoord::new(row, 0);
                    self.status[t] = Status::Ready(Work::Recon(start));
                    if let Some(d) = self.state.on_recon_ctu_complete(t, start) {
                        self.migrate(t, d, MigrationCause::CtuCheck, Some(Work::Recon(start)));
                    }
                }
                RowAction::TakeRow { row, bind_to: Some(to) } => {
                    let next = Some(Work::Recon(CtuCoord::new(row, 0)));
                    self.begin_migration(t, core, to, MigrationCause::RowSwap, None, None, next);
                }
                RowAction::WaitForCore | RowAction::Release | RowAction::Idle => {
                    self.status[t] = Status::Idle;
                    self.mark_idle(t);
                }
            }
        }
        if self.recon_count == dims.ctu_count() {
            self.emit(EventKind::BarrierReached, None, None, None);
            for (thread, to) in self.state.filter_stage_start()? {
                let from = self.state.threads[thread].last_core;
                self.begin_migration(thread, from, to, MigrationCause::Barrier, None, None, None);
            }
            for (idx, &deg) in self.indegree.iter().enumerate() {
                if deg == 0 {
                    self.ready_filters.insert(idx);
                }
            }
        }
        Ok(())
    }

    fn complete_filter(&mut self, t: ThreadId, idx: usize) {
        let core = self.state.threads[t].core;
        let task = filter_task(self.dims(), self.frame, idx);
        self.filter_done += 1;
        self.emit(EventKind::CtuComplete, Some(t), core, Some(task));
        for k in 0..self.filters.successors[idx].len() {
            let succ = self.filters.successors[idx][k];
            self.indegree[succ] -= 1;
            if self.indegree[succ] == 0 {
                self.ready_filters.insert(succ);
            }
        }
        self.status[t] = Status::Idle;
        if self.state.kind == PolicyKind::CriticalityAware {
            let busy = self.core_busy();
            if let Some(d) = self.state.on_filter_ctu_complete(t, &busy) {
                self.migrate(t, d, MigrationCause::FilterCheck, None);
            }
        }
    }
}

/// Key of one sweep cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SweepKey {
    pub policy: PolicyKind,
    pub threads: usize,
    pub simd: bool,
}

#[derive(Debug)]
pub struct SweepCell {
    pub key: SweepKey,
    pub result: Result<SimReport, SimError>,
}

/// Simulates the Cartesian product of policies, thread counts and SIMD
/// settings. Cells are independent; a failing cell does not stop the sweep.
pub fn run_sweep(
    base: &SimConfig,
    thread_counts: &[usize],
    policies: &[PolicyKind],
    simd: &[bool],
) -> Result<Vec<SweepCell>, SimError> {
    if thread_counts.is_empty() {
        return Err(SimError::EmptySweep("thread count"));
    }
    if policies.is_empty() {
        return Err(SimError::EmptySweep("policy"));
    }
    if simd.is_empty() {
        return Err(SimError::EmptySweep("SIMD setting"));
    }
    let mut keys = Vec::new();
    for &policy in policies {
        for &threads in thread_counts {
            for &simd in simd {
                keys.push(SweepKey { policy, threads, simd });
            }
        }
    }
    Ok(keys
        .into_par_iter()
        .map(|key| {
            let mut cfg = base.clone();
            cfg.policy = PolicySpec { kind: key.policy, threads: key.threads, ..base.policy.clone() };
            cfg.simd = key.simd;
            let result = simulate(&cfg).map(|(_, r)| r);
            SweepCell { key, result }
        })
        .collect())
}
