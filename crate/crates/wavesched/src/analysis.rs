//! Metrics, the time-stepped reference simulator and comparison against
//! the published measurements.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EventKind, EventTrace, SimConfig, SimError, SweepKey, TIME_TOL};
use crate::grid::{CtuCoord, Dep, GridDims, Phase, TaskId};
use crate::platform::{instantaneous_power, CoreId, CoreState, Platform, PlatformError};
use crate::policy::{initial_assignment, PolicyKind, RowAction, SchedState, ThreadId};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("trace is truncated: {0}")]
    Truncated(&'static str),
    #[error("trace has {found} cores but the platform has {expected}")]
    CoreCount { expected: usize, found: usize },
    #[error(transparent)]
    Platform(#[from] PlatformError),
    #[error("missing values for: {}", .0.join(", "))]
    MissingKeys(Vec<String>),
    #[error("targets line {line}: {reason}")]
    TargetParse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    pub time_s: f64,
    pub power_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub policy: Option<PolicyKind>,
    pub threads: usize,
    pub simd: bool,
    pub frames: usize,
    pub wall_time_s: f64,
    pub fps: f64,
    /// Exact integral of board power over the run.
    pub energy_j: f64,
    pub epf_j: f64,
    pub avg_power_w: f64,
    /// Mean of the power samples times wall time.
    pub sampled_energy_j: f64,
    pub power_samples: Vec<PowerSample>,
    pub migrations: usize,
    pub core_utilization: Vec<f64>,
    /// Seconds each core spent executing CTUs or migration overhead.
    pub core_busy_s: Vec<f64>,
}

impl SimReport {
    pub(crate) fn labelled(mut self, cfg: &SimConfig) -> Self {
        self.policy = Some(cfg.policy.kind);
        self.threads = cfg.policy.threads;
        self.simd = cfg.simd;
        self
    }

    pub const CSV_HEADER: &'static str = "policy,threads,simd,frames,wall_time_s,fps,energy_j,epf_j,avg_power_w,sampled_energy_j,migrations,mean_utilization";

    /// One CSV row matching [`SimReport::CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        let util = if self.core_utilization.is_empty() {
            0.0
        } else {
            self.core_utilization.iter().sum::<f64>() / self.core_utilization.len() as f64
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.policy.map_or("-", |p| p.cli_name()),
            self.threads,
            if self.simd { "on" } else { "off" },
            self.frames,
            self.wall_time_s,
            self.fps,
            self.energy_j,
            self.epf_j,
            self.avg_power_w,
            self.sampled_energy_j,
            self.migrations,
            util,
        )
    }
}

/// Energy of holding `states` for `secs` seconds.
pub fn integrate_constant(platform: &Platform, states: &[CoreState], secs: f64) -> Result<f64, PlatformError> {
    Ok(instantaneous_power(platform, states)? * secs)
}

/// Derives FPS, energy, power samples and utilization from a complete trace.
///
/// A core is active while it executes at least one CTU or absorbs a
/// migration delay; threads blocked on dependencies leave it idle.
pub fn compute_metrics(trace: &EventTrace, platform: &Platform) -> Result<SimReport, MetricsError> {
    let n = platform.core_count();
    if trace.core_count != n {
        return Err(MetricsError::CoreCount { expected: n, found: trace.core_count });
    }
    let completed = trace.events.iter().filter(|e| e.kind == EventKind::FrameComplete).count();
    if trace.frames == 0 || completed != trace.frames {
        return Err(MetricsError::Truncated("missing FrameComplete events"));
    }
    let wall = match trace.events.last() {
        Some(e) if e.kind == EventKind::FrameComplete => e.time_s,
        _ => return Err(MetricsError::Truncated("last event is not FrameComplete")),
    };
    if !(wall > 0.0) {
        return Err(MetricsError::Truncated("zero wall time"));
    }

    // (time, core, +1/-1) activity deltas.
    let mut deltas: Vec<(f64, CoreId, i32)> = Vec::new();
    let mut migrations = 0;
    for e in &trace.events {
        match &e.kind {
            EventKind::CtuStart => deltas.push((e.time_s, core_of(e.core)?, 1)),
            EventKind::CtuComplete => deltas.push((e.time_s, core_of(e.core)?, -1)),
            EventKind::Migration { overhead_s, .. } => {
                migrations += 1;
                if *overhead_s > 0.0 {
                    let c = core_of(e.core)?;
                    deltas.push((e.time_s, c, 1));
                    deltas.push(((e.time_s + overhead_s).min(wall), c, -1));
                }
            }
            _ => {}
        }
    }
    deltas.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));

    let active = if trace.simd { CoreState::ActiveSimd } else { CoreState::Active };
    let mut load = vec![0i32; n];
    let mut busy = vec![0.0; n];
    // Piecewise-constant power: (start, power) segments.
    let mut segments: Vec<(f64, f64)> = Vec::new();
    let mut energy = 0.0;
    let mut t = 0.0;
    let mut i = 0;
    loop {
        let states: Vec<CoreState> =
            load.iter().map(|&l| if l > 0 { active } else { CoreState::Idle }).collect();
        let power = instantaneous_power(platform, &states)?;
        let next = deltas.get(i).map_or(wall, |d| d.0.min(wall));
        if next > t {
            energy += power * (next - t);
            for (c, &l) in load.iter().enumerate() {
                if l > 0 {
                    busy[c] += next - t;
                }
            }
            segments.push((t, power));
            t = next;
        }
        if i >= deltas.len() {
            break;
        }
        while i < deltas.len() && deltas[i].0 <= t {
            load[deltas[i].1] += deltas[i].2;
            i += 1;
        }
        if t >= wall && i >= deltas.len() {
            break;
        }
    }
    if segments.is_empty() {
        return Err(MetricsError::Truncated("no activity"));
    }

    let power_samples = sample_power(&segments, wall, platform.sample_interval_s);
    let mean = power_samples.iter().map(|s| s.power_w).sum::<f64>() / power_samples.len() as f64;
    let frames = trace.frames as f64;
    Ok(SimReport {
        policy: None,
        threads: trace.threads,
        simd: trace.simd,
        frames: trace.frames,
        wall_time_s: wall,
        fps: frames / wall,
        energy_j: energy,
        epf_j: energy / frames,
        avg_power_w: energy / wall,
        sampled_energy_j: mean * wall,
        power_samples,
        migrations,
        core_utilization: busy.iter().map(|b| (b / wall).min(1.0)).collect(),
        core_busy_s: busy,
    })
}

fn core_of(core: Option<CoreId>) -> Result<CoreId, MetricsError> {
    core.ok_or(MetricsError::Truncated("execution event without a core"))
}

/// Samples the power curve at the midpoint of every sampling window.
fn sample_power(segments: &[(f64, f64)], wall: f64, interval: f64) -> Vec<PowerSample> {
    let at = |time: f64| {
        let idx = segments.partition_point(|s| s.0 <= time).saturating_sub(1);
        segments[idx].1
    };
    let mut samples = Vec::new();
    let mut k = 0usize;
    loop {
        let time = (k as f64 + 0.5) * interval;
        if time >= wall {
            break;
        }
        samples.push(PowerSample { time_s: time, power_w: at(time) });
        k += 1;
    }
    if samples.is_empty() {
        samples.push(PowerSample { time_s: wall / 2.0, power_w: at(wall / 2.0) });
    }
    samples
}

/// Makespan of an R×C uniform grid with unlimited identical cores and no
/// filter work, for the default dependency lead.
pub fn analytic_wavefront_makespan(dims: GridDims, t_ctu: f64) -> f64 {
    analytic_wavefront_makespan_with_lead(dims, t_ctu, crate::grid::WppGraph::DEFAULT_LEAD)
}

/// Each row starts `min(lead, C-1) + 1` CTU times after the one above it.
pub fn analytic_wavefront_makespan_with_lead(dims: GridDims, t_ctu: f64, lead: usize) -> f64 {
    let stagger = lead.min(dims.cols.saturating_sub(1)) + 1;
    (dims.cols + stagger * dims.rows.saturating_sub(1)) as f64 * t_ctu
}

/// Result of the time-stepped reference run.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRun {
    pub makespan_s: f64,
    pub completions: BTreeMap<TaskId, f64>,
}

/// Largest instance the time-stepped reference accepts.
pub const REFERENCE_MAX_TASKS: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq)]
enum RefThread {
    Free,
    Next(Phase, CtuCoord),
    Moving { until: f64, then: Option<CtuCoord> },
    Busy { phase: Phase, coord: CtuCoord, left: f64 },
}

/// Re-simulates `cfg` with a fixed time step, shortened only to land exactly
/// on the next completion or migration expiry.
///
/// Readiness is re-derived from the dependency graph and a completion map at
/// every step instead of the engine's incremental bookkeeping; it shares the
/// graph and policy modules with the engine.
pub fn reference_simulate(cfg: &SimConfig) -> Result<ReferenceRun, SimError> {
    cfg.validate()?;
    let dims = cfg.dims;
    let graph = cfg.graph()?;
    if 4 * dims.ctu_count() * cfg.frames() > REFERENCE_MAX_TASKS {
        return Err(SimError::Metrics(MetricsError::Truncated("instance too large for the reference")));
    }
    let max_speed = cfg
        .platform
        .clusters
        .iter()
        .map(|c| c.core_type.speed_wu_per_s)
        .fold(0.0, f64::max);
    let mut min_cost = f64::INFINITY;
    for m in &cfg.workload {
        for p in Phase::ALL {
            for c in dims.coords() {
                let cost = m.effective_task_cost(p, c, cfg.simd);
                if cost > 0.0 {
                    min_cost = min_cost.min(cost);
                }
            }
        }
    }
    let step = min_cost / max_speed / 1000.0;
    if !(step > 0.0) || !step.is_finite() {
        return Err(SimError::Metrics(MetricsError::Truncated("step underflow")));
    }
    let overhead = cfg.policy.migration_overhead_s;
    let ca = cfg.policy.kind == PolicyKind::CriticalityAware;
    let mut done: BTreeMap<TaskId, f64> = BTreeMap::new();
    let mut now = 0.0f64;

    for frame in 0..cfg.frames() {
        let costs = &cfg.workload[frame];
        let mut sched: SchedState = initial_assignment(&cfg.policy, &cfg.platform, dims.rows)?;
        let mut th: Vec<RefThread> = sched
            .threads
            .iter()
            .map(|s| s.row.map_or(RefThread::Free, |r| RefThread::Next(Phase::Recon, CtuCoord::new(r, 0))))
            .collect();
        let mut taken: BTreeSet<TaskId> = BTreeSet::new();
        let total = 4 * dims.ctu_count();
        let mut finished = 0;

        let move_to = |th: &mut Vec<RefThread>, t: ThreadId, now: f64, then: Option<CtuCoord>| {
            th[t] = if overhead > 0.0 {
                RefThread::Moving { until: now + overhead, then }
            } else {
                then.map_or(RefThread::Free, |c| RefThread::Next(Phase::Recon, c))
            };
        };

        while finished < total {
            // Dispatch.
            let satisfied = |task: TaskId, done: &BTreeMap<TaskId, f64>| {
                graph.predecessors(task).expect("task in grid").iter().all(|d| match d {
                    Dep::Task(p) => done.contains_key(p),
                    Dep::Barrier(_) => dims.coords().all(|c| done.contains_key(&TaskId::recon(frame, c.row, c.col))),
                })
            };
            let mut started: Vec<(ThreadId, Phase, CtuCoord)> = Vec::new();
            for t in 0..th.len() {
                if let RefThread::Next(p, c) = th[t] {
                    if satisfied(TaskId::new(frame, p, c), &done) {
                        started.push((t, p, c));
                    }
                }
            }
            for &(t, p, c) in &started {
                th[t] = start_ref(cfg, &sched, &th, t, p, c, costs);
            }
            if sched.filter_stage {
                loop {
                    let next_task = Phase::FILTERS
                        .into_iter()
                        .flat_map(|p| dims.coords().map(move |c| TaskId::new(frame, p, c)))
                        .find(|task| !taken.contains(task) && satisfied(*task, &done));
                    let Some(task) = next_task else { break };
                    let pick = (0..th.len())
                        .filter(|&t| th[t] == RefThread::Free)
                        .filter_map(|t| sched.threads[t].core.map(|c| (t, c)))
                        .min_by_key(|&(t, c)| (core_in_use(&sched, &th, c), !sched.is_big(c), t));
                    let Some((t, _)) = pick else { break };
                    taken.insert(task);
                    th[t] = start_ref(cfg, &sched, &th, t, task.phase, task.coord, costs);
                }
            }

            // Step.
            let rates = ref_rates(cfg, &sched, &th);
            let mut dt = step;
            let mut any = false;
            for (t, s) in th.iter().enumerate() {
                match *s {
                    RefThread::Busy { left, .. } => {
                        dt = dt.min(left / rates[t]);
                        any = true;
                    }
                    RefThread::Moving { until, .. } => {
                        dt = dt.min(until - now);
                        any = true;
                    }
                    _ => {}
                }
            }
            if !any {
                let blocked = th
                    .iter()
                    .filter_map(|s| match s {
                        RefThread::Next(p, c) => Some(TaskId::new(frame, *p, *c)),
                        _ => None,
                    })
                    .collect();
                return Err(SimError::Deadlock { frame, time_s: now, blocked });
            }
            let dt = dt.max(0.0);
            let t_next = now + dt;
            let tol = TIME_TOL * t_next.abs().max(1.0);
            let mut expired = Vec::new();
            let mut completions = Vec::new();
            for t in 0..th.len() {
                match &mut th[t] {
                    RefThread::Busy { phase, coord, left } => {
                        if *left <= rates[t] * (dt + tol) {
                            *left = 0.0;
                            completions.push((t, *phase, *coord));
                        } else {
                            *left -= rates[t] * dt;
                        }
                    }
                    RefThread::Moving { until, .. } if *until <= t_next + tol => expired.push(t),
                    _ => {}
                }
            }
            now = t_next;
            for t in expired {
                if let RefThread::Moving { then, .. } = th[t] {
                    th[t] = then.map_or(RefThread::Free, |c| RefThread::Next(Phase::Recon, c));
                }
            }
            completions.sort_by_key(|&(t, p, c)| (c.row, c.col, p.index(), sched.threads[t].core, t));

            for (t, phase, coord) in completions {
                done.insert(TaskId::new(frame, phase, coord), now);
                finished += 1;
                if phase.is_filter() {
                    th[t] = RefThread::Free;
                    if ca {
                        let in_use: Vec<bool> =
                            (0..cfg.platform.core_count()).map(|c| core_in_use(&sched, &th, c)).collect();
                        if let Some(d) = sched.on_filter_ctu_complete(t, &in_use) {
                            sched.apply_migration(t, d.to);
                            move_to(&mut th, t, now, None);
                        }
                    }
                    continue;
                }
                let mut next = None;
                if coord.col + 1 < dims.cols {
                    next = Some(CtuCoord::new(coord.row, coord.col + 1));
                } else {
                    match sched.on_row_complete(t) {
                        RowAction::TakeRow { row, bind_to: None } => next = Some(CtuCoord::new(row, 0)),
                        RowAction::TakeRow { row, bind_to: Some(_) } => {
                            move_to(&mut th, t, now, Some(CtuCoord::new(row, 0)));
                        }
                        _ => th[t] = RefThread::Free,
                    }
                }
                if let Some(c) = next {
                    th[t] = RefThread::Next(Phase::Recon, c);
                    if let Some(d) = sched.on_recon_ctu_complete(t, c) {
                        if let Some(h) = sched.apply_migration(t, d.to) {
                            move_to(&mut th, h.thread, now, Some(CtuCoord::new(h.row, 0)));
                        }
                        move_to(&mut th, t, now, Some(c));
                    }
                }
                let recon_left = dims.coords().any(|c| !done.contains_key(&TaskId::recon(frame, c.row, c.col)));
                if !recon_left && !sched.filter_stage {
                    for (b, _) in sched.filter_stage_start()? {
                        move_to(&mut th, b, now, None);
                    }
                }
            }
        }
    }
    Ok(ReferenceRun { makespan_s: now, completions: done })
}

fn core_in_use(sched: &SchedState, th: &[RefThread], core: CoreId) -> bool {
    th.iter().enumerate().any(|(t, s)| {
        matches!(s, RefThread::Busy { .. } | RefThread::Moving { .. }) && sched.threads[t].core == Some(core)
    })
}

fn start_ref(
    cfg: &SimConfig,
    sched: &SchedState,
    th: &[RefThread],
    t: ThreadId,
    phase: Phase,
    coord: CtuCoord,
    costs: &crate::workload::CostModel,
) -> RefThread {
    let core = sched.threads[t].core.expect("bound thread");
    let mut left = costs.effective_task_cost(phase, coord, cfg.simd);
    let sharing = th
        .iter()
        .enumerate()
        .any(|(o, s)| matches!(s, RefThread::Busy { .. }) && sched.threads[o].core == Some(core));
    if cfg.platform.switch_penalty_s > 0.0 && sharing {
        left += cfg.platform.switch_penalty_s * cfg.platform.core_type(core).speed_wu_per_s;
    }
    RefThread::Busy { phase, coord, left }
}

fn ref_rates(cfg: &SimConfig, sched: &SchedState, th: &[RefThread]) -> Vec<f64> {
    let mut sharing = vec![0usize; cfg.platform.core_count()];
    for (t, s) in th.iter().enumerate() {
        if let (RefThread::Busy { .. }, Some(c)) = (s, sched.threads[t].core) {
            sharing[c] += 1;
        }
    }
    th.iter()
        .enumerate()
        .map(|(t, s)| match (s, sched.threads[t].core) {
            (RefThread::Busy { .. }, Some(c)) => cfg.platform.core_type(c).speed_wu_per_s / sharing[c] as f64,
            _ => 0.0,
        })
        .collect()
}

/// What a target row measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    Fps,
    Epf,
    /// Rounded throughput quoted in prose.
    FpsQuote,
    /// Rounded board power quoted in prose (W).
    PowerQuote,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Fps => "fps",
            Metric::Epf => "epf",
            Metric::FpsQuote => "fps_quote",
            Metric::PowerQuote => "power_quote",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub metric: Metric,
    pub policy: PolicyKind,
    pub threads: usize,
    pub simd: bool,
    pub value: f64,
}

impl Target {
    pub fn key(&self) -> SweepKey {
        SweepKey { policy: self.policy, threads: self.threads, simd: self.simd }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeasuredTargets {
    pub targets: Vec<Target>,
}

/// Reference measurements shipped with the crate.
pub const EMBEDDED_TARGETS: &str = include_str!("../data/targets.csv");

impl MeasuredTargets {
    pub fn embedded() -> Self {
        parse_targets(EMBEDDED_TARGETS).expect("embedded targets parse")
    }

    pub fn get(&self, metric: Metric, policy: PolicyKind, threads: usize, simd: bool) -> Option<f64> {
        self.targets
            .iter()
            .find(|t| t.metric == metric && t.policy == policy && t.threads == threads && t.simd == simd)
            .map(|t| t.value)
    }

    pub fn table(&self, metric: Metric) -> impl Iterator<Item = &Target> {
        self.targets.iter().filter(move |t| t.metric == metric)
    }
}

/// Parses `metric,policy,threads,simd,value` lines; `#` starts a comment.
pub fn parse_targets(text: &str) -> Result<MeasuredTargets, MetricsError> {
    let mut targets: Vec<Target> = Vec::new();
    let mut header_seen = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| MetricsError::TargetParse { line: line_no, reason };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if !header_seen && fields.first() == Some(&"metric") {
            if fields != ["metric", "policy", "threads", "simd", "value"] {
                return Err(err(format!("unexpected header {line:?}")));
            }
            header_seen = true;
            continue;
        }
        let [metric, policy, threads, simd, value] = fields[..] else {
            return Err(err(format!("expected 5 fields, got {}", fields.len())));
        };
        let metric = match metric {
            "fps" => Metric::Fps,
            "epf" => Metric::Epf,
            "fps_quote" => Metric::FpsQuote,
            "power_quote" => Metric::PowerQuote,
            other => return Err(err(format!("unknown metric {other:?}"))),
        };
        let policy: PolicyKind = policy.parse().map_err(|e| err(format!("{e}")))?;
        let threads: usize = threads.parse().map_err(|_| err(format!("bad thread count {threads:?}")))?;
        if threads == 0 {
            return Err(err("thread count must be positive".into()));
        }
        let simd = match simd {
            "on" => true,
            "off" => false,
            other => return Err(err(format!("simd must be on|off, got {other:?}"))),
        };
        let value: f64 = value.parse().map_err(|_| err(format!("bad value {value:?}")))?;
        if !value.is_finite() || value <= 0.0 {
            return Err(err(format!("value must be positive, got {value}")));
        }
        let t = Target { metric, policy, threads, simd, value };
        if targets.iter().any(|o| o.metric == metric && o.key() == t.key()) {
            return Err(err("duplicate target".into()));
        }
        targets.push(t);
    }
    Ok(MeasuredTargets { targets })
}

/// One column of the FPS/EPF tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableColumn {
    pub label: &'static str,
    pub policy: PolicyKind,
    pub simd: bool,
}

pub const TABLE_COLUMNS: [TableColumn; 4] = [
    TableColumn { label: "Unmodified", policy: PolicyKind::BigOnlyOs, simd: false },
    TableColumn { label: "A15+A7", policy: PolicyKind::StaticPinned, simd: false },
    TableColumn { label: "Affinity", policy: PolicyKind::CriticalityAware, simd: false },
    TableColumn { label: "Affinity+NEON", policy: PolicyKind::CriticalityAware, simd: true },
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationRow {
    pub metric: Metric,
    pub threads: usize,
    pub column: String,
    pub sim: f64,
    /// Percent change against the Unmodified column at the same thread count.
    pub sim_vs_base_pct: f64,
    pub measured: f64,
    pub measured_vs_base_pct: f64,
    /// Percent deviation of the simulated value from the measured value.
    pub sim_vs_measured_pct: f64,
}

pub fn pct(value: f64, base: f64) -> f64 {
    (value / base - 1.0) * 100.0
}

fn report_metric(r: &SimReport, m: Metric) -> f64 {
    match m {
        Metric::Fps | Metric::FpsQuote => r.fps,
        Metric::Epf => r.epf_j,
        Metric::PowerQuote => r.avg_power_w,
    }
}

/// Builds the FPS and EPF tables side by side with the measured values,
/// including the "% vs Unmodified" columns. All missing keys are reported
/// together.
pub fn compare_to_paper(
    reports: &BTreeMap<SweepKey, SimReport>,
    targets: &MeasuredTargets,
) -> Result<Vec<DeviationRow>, MetricsError> {
    let mut threads: Vec<usize> = targets.table(Metric::Fps).map(|t| t.threads).collect();
    threads.sort_unstable();
    threads.dedup();
    let mut missing = Vec::new();
    let mut rows = Vec::new();
    for metric in [Metric::Fps, Metric::Epf] {
        for &n in &threads {
            let lookup = |col: &TableColumn, missing: &mut Vec<String>| {
                let key = SweepKey { policy: col.policy, threads: n, simd: col.simd };
                let sim = reports.get(&key).map(|r| report_metric(r, metric));
                let measured = targets.get(metric, col.policy, n, col.simd);
                let name = format!("{}/{}/{}/simd-{}", metric.name(), col.policy, n, if col.simd { "on" } else { "off" });
                if sim.is_none() {
                    missing.push(format!("report {name}"));
                }
                if measured.is_none() {
                    missing.push(format!("target {name}"));
                }
                sim.zip(measured)
            };
            let base = lookup(&TABLE_COLUMNS[0], &mut missing);
            for col in &TABLE_COLUMNS {
                let cell = if col == &TABLE_COLUMNS[0] { base } else { lookup(col, &mut missing) };
                if let (Some((sim, measured)), Some((sim_base, measured_base))) = (cell, base) {
                    rows.push(DeviationRow {
                        metric,
                        threads: n,
                        column: col.label.to_string(),
                        sim,
                        sim_vs_base_pct: pct(sim, sim_base),
                        measured,
                        measured_vs_base_pct: pct(measured, measured_base),
                        sim_vs_measured_pct: pct(sim, measured),
                    });
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(MetricsError::MissingKeys(missing));
    }
    Ok(rows)
}

/// Renders deviation rows as CSV.
pub fn deviation_csv(rows: &[DeviationRow]) -> String {
    let mut out = String::from("metric,threads,column,sim,sim_vs_unmodified_pct,measured,measured_vs_unmodified_pct,sim_vs_measured_pct\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.2},{},{:.2},{:.2}",
            r.metric.name(),
            r.threads,
            r.column,
            r.sim,
            r.sim_vs_base_pct,
            r.measured,
            r.measured_vs_base_pct,
            r.sim_vs_measured_pct
        );
    }
    out
}
