//! Post-hoc trace checks and random configuration builders shared by the
//! integration tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wavesched::engine::{EventKind, EventTrace, MigrationCause, SimConfig};
use wavesched::grid::{Dep, GridDims, Phase, TaskId};
use wavesched::platform::Platform;
use wavesched::policy::{PolicyKind, PolicySpec};
use wavesched::workload::{CostModel, FilterParams, SimdParams};

/// Every task starts after all of its predecessors completed.
pub fn check_dependencies(cfg: &SimConfig, trace: &EventTrace) -> Result<(), String> {
    let graph = cfg.graph().unwrap();
    let mut done: HashMap<TaskId, f64> = HashMap::new();
    let mut recon_done: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    let n = cfg.dims.ctu_count();
    for e in &trace.events {
        match e.kind {
            EventKind::CtuComplete => {
                let task = e.task.unwrap();
                if done.insert(task, e.time_s).is_some() {
                    return Err(format!("{task} completed twice"));
                }
                if task.phase == Phase::Recon {
                    let entry = recon_done.entry(task.frame).or_insert((0, 0.0));
                    entry.0 += 1;
                    entry.1 = entry.1.max(e.time_s);
                }
            }
            EventKind::CtuStart => {
                let task = e.task.unwrap();
                for dep in graph.predecessors(task).unwrap() {
                    match dep {
                        Dep::Task(p) => match done.get(&p) {
                            Some(&t) if t <= e.time_s => {}
                            _ => return Err(format!("{task} started at {} before {p}", e.time_s)),
                        },
                        Dep::Barrier(b) => match recon_done.get(&b.frame) {
                            Some(&(count, t)) if count == n && t <= e.time_s => {}
                            _ => return Err(format!("{task} started before the barrier")),
                        },
                    }
                }
            }
            _ => {}
        }
    }
    let expected = 4 * n * cfg.frames();
    if done.len() != expected {
        return Err(format!("{} tasks completed, expected {expected}", done.len()));
    }
    Ok(())
}

/// Per core, the time with at least one CTU in flight times the core speed
/// equals the work of the CTUs executed there.
pub fn check_work_conservation(cfg: &SimConfig, trace: &EventTrace) -> Result<(), String> {
    let cores = cfg.platform.core_count();
    let mut running = vec![0usize; cores];
    let mut since = vec![0.0; cores];
    let mut busy = vec![0.0; cores];
    let mut work = vec![0.0; cores];
    for e in &trace.events {
        let (delta, core) = match e.kind {
            EventKind::CtuStart => (1i64, e.core.unwrap()),
            EventKind::CtuComplete => {
                let task = e.task.unwrap();
                let c = e.core.unwrap();
                work[c] += cfg.workload[task.frame].effective_task_cost(task.phase, task.coord, cfg.simd);
                (-1, c)
            }
            _ => continue,
        };
        if running[core] > 0 {
            busy[core] += e.time_s - since[core];
        }
        since[core] = e.time_s;
        running[core] = (running[core] as i64 + delta) as usize;
    }
    for c in 0..cores {
        let speed = cfg.platform.core_type(c).speed_wu_per_s;
        let expect = work[c] / speed;
        if (busy[c] - expect).abs() > 1e-9 * expect.max(1e-12) {
            return Err(format!("core {c}: busy {} vs work/speed {expect}", busy[c]));
        }
    }
    Ok(())
}

/// Policy-specific checks on bindings and migrations.
pub fn check_policy(cfg: &SimConfig, trace: &EventTrace) -> Result<(), String> {
    let big = cfg.platform.big_cores();
    let is_big = |c: usize| big.contains(&c);
    let kind = cfg.policy.kind;
    let rows = cfg.dims.rows;
    let last_col = cfg.dims.cols - 1;
    let bottom = rows - big.len().min(rows);
    // (frame, row) -> core that started the row
    let mut row_start: HashMap<(usize, usize), usize> = HashMap::new();
    let mut in_filter_stage = vec![false; cfg.frames()];
    for e in &trace.events {
        match &e.kind {
            EventKind::BarrierReached => in_filter_stage[e.frame] = true,
            EventKind::CtuStart => {
                let core = e.core.unwrap();
                match kind {
                    PolicyKind::BigOnlyOs if !is_big(core) => return Err(format!("big-only run used core {core}")),
                    PolicyKind::LittleOnly if is_big(core) => return Err(format!("LITTLE-only run used core {core}")),
                    _ => {}
                }
                let task = e.task.unwrap();
                if task.phase == Phase::Recon && task.coord.col == 0 {
                    row_start.insert((task.frame, task.coord.row), core);
                }
            }
            EventKind::CtuComplete => {
                let task = e.task.unwrap();
                if kind == PolicyKind::CriticalityAware
                    && task.phase == Phase::Recon
                    && task.coord.col == last_col
                    && task.coord.row >= bottom
                {
                    let start = row_start[&(task.frame, task.coord.row)];
                    if is_big(start) && !is_big(e.core.unwrap()) {
                        return Err(format!("bottom row {} demoted to core {:?}", task.coord.row, e.core));
                    }
                }
            }
            EventKind::Migration { from, cause, rank, idle_big, .. } => {
                let to = e.core.unwrap();
                match kind {
                    PolicyKind::StaticPinned | PolicyKind::BigOnlyOs | PolicyKind::LittleOnly => {
                        return Err(format!("{kind} emitted a migration"));
                    }
                    PolicyKind::CriticalityAware => {}
                }
                match cause {
                    MigrationCause::CtuCheck => {
                        let (Some(rank), Some(idle)) = (rank, idle_big) else {
                            return Err("guarded migration without rank".into());
                        };
                        if idle < rank {
                            return Err(format!("rank {rank} migrated with only {idle} idle big cores"));
                        }
                        if !is_big(to) || from.is_some_and(is_big) {
                            return Err(format!("guarded migration {from:?} -> {to} is not LITTLE -> big"));
                        }
                        if in_filter_stage[e.frame] {
                            return Err("reconstruction check during the filter stage".into());
                        }
                    }
                    MigrationCause::RowSwap => {
                        // A big -> LITTLE move only ever starts a fresh row.
                        match e.task {
                            Some(t) if t.phase == Phase::Recon && t.coord.col == 0 => {}
                            other => return Err(format!("row swap without a new row: {other:?}")),
                        }
                        if is_big(to) {
                            return Err("row swap onto a big core".into());
                        }
                    }
                    MigrationCause::FilterCheck => {
                        if !is_big(to) || from.is_some_and(is_big) {
                            return Err("filter migration is not LITTLE -> big".into());
                        }
                    }
                    MigrationCause::Barrier => {}
                }
            }
            _ => {}
        }
    }
    Ok(())
}

pub fn check_all(cfg: &SimConfig, trace: &EventTrace) -> Result<(), String> {
    check_dependencies(cfg, trace)?;
    check_work_conservation(cfg, trace)?;
    check_policy(cfg, trace)
}

/// Random small configuration; `max_cores` bounds the platform size.
pub fn random_config(rng: &mut ChaCha8Rng, max_rows: usize, max_cols: usize, max_cores: usize) -> SimConfig {
    loop {
        let dims = GridDims::new(rng.random_range(1..=max_rows), rng.random_range(1..=max_cols)).unwrap();
        let nb = rng.random_range(1..=max_cores.min(4));
        let nl = rng.random_range(0..=(max_cores - nb).min(4));
        let mut platform = Platform::with_counts(nb, nl);
        if nl > 0 {
            let ratio = rng.random_range(1.2..3.0);
            platform.clusters[1].core_type.speed_wu_per_s = platform.clusters[0].core_type.speed_wu_per_s / ratio;
        }
        let kind = PolicyKind::ALL[rng.random_range(0..4)];
        let threads = match kind {
            PolicyKind::StaticPinned | PolicyKind::CriticalityAware => rng.random_range(1..=nb + nl),
            _ => rng.random_range(1..=nb + nl + 2),
        };
        let overhead = if rng.random_bool(0.5) { 0.0 } else { 100e-6 };
        let policy = PolicySpec::new(kind, threads).with_overhead(overhead);
        if policy.validate(&platform).is_err() {
            continue;
        }
        let frames = rng.random_range(1..=2);
        let filter = FilterParams { fraction: [0.0, 0.15, 0.3][rng.random_range(0..3)], ..FilterParams::default() };
        let sigma: f64 = rng.random_range(0.0..1.0);
        let workload = (0..frames)
            .map(|_| {
                let costs = (0..dims.ctu_count())
                    .map(|_| {
                        let z: f64 = rng.random_range(-2.0..2.0);
                        0.2 * (sigma * z).exp()
                    })
                    .collect();
                CostModel::new(dims, costs, filter, SimdParams::default()).unwrap()
            })
            .collect();
        return SimConfig {
            platform,
            policy,
            workload,
            dims,
            wpp_lead: 1,
            simd: rng.random_bool(0.3),
        };
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Unlimited-core makespan by direct recurrence over the reconstruction
/// dependencies (uniform cost `t`).
pub fn recurrence_makespan(dims: GridDims, lead: usize, t: f64) -> f64 {
    let (r, c) = (dims.rows, dims.cols);
    let mut finish = vec![vec![0.0f64; c]; r];
    for i in 0..r {
        for j in 0..c {
            let left = if j > 0 { finish[i][j - 1] } else { 0.0 };
            let up = if i > 0 { finish[i - 1][(j + lead).min(c - 1)] } else { 0.0 };
            finish[i][j] = left.max(up) + t;
        }
    }
    finish[r - 1][c - 1]
}
