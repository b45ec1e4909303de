//! Thread-to-core binding policies.
//!
//! A policy is a deterministic state machine. The engine owns a
//! [`SchedState`] and consults it at CTU and row completions and at the
//! frame barrier; the policy answers with bindings and migrations.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::CtuCoord;
use crate::platform::{CoreId, Platform};

pub type ThreadId = usize;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("{policy} supports at most {capacity} threads on this platform (requested {requested})")]
    Capacity { policy: PolicyKind, capacity: usize, requested: usize },
    #[error("at least one thread is required")]
    NoThreads,
    #[error("{policy} needs a {cluster} cluster")]
    MissingCluster { policy: PolicyKind, cluster: &'static str },
    #[error("migration overhead must be non-negative (got {0})")]
    NegativeOverhead(f64),
    #[error("unknown policy {0:?}; expected big-os, little, static or affinity")]
    Unknown(String),
    #[error("filter stage occupancy: {big} threads on big and {little} on LITTLE, expected {want_big} and {want_little}")]
    Occupancy { big: usize, little: usize, want_big: usize, want_little: usize },
    #[error("filter stage started with row {row} still owned by thread {thread}")]
    RowsInFlight { thread: ThreadId, row: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    /// OS default: every thread on the big cluster, round-robin.
    #[serde(rename = "big-os")]
    BigOnlyOs,
    /// Every thread on the LITTLE cluster, round-robin.
    #[serde(rename = "little")]
    LittleOnly,
    /// Big cores first, then LITTLE cores; bindings never change.
    #[serde(rename = "static")]
    StaticPinned,
    /// Keeps the highest-priority rows on big cores through migration.
    #[serde(rename = "affinity")]
    CriticalityAware,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::BigOnlyOs,
        PolicyKind::LittleOnly,
        PolicyKind::StaticPinned,
        PolicyKind::CriticalityAware,
    ];

    pub fn cli_name(self) -> &'static str {
        match self {
            PolicyKind::BigOnlyOs => "big-os",
            PolicyKind::LittleOnly => "little",
            PolicyKind::StaticPinned => "static",
            PolicyKind::CriticalityAware => "affinity",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.cli_name() == s.trim())
            .ok_or_else(|| PolicyError::Unknown(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub threads: usize,
    /// Delay before a migrated thread starts its next CTU.
    pub migration_overhead_s: f64,
}

impl PolicySpec {
    pub const DEFAULT_MIGRATION_OVERHEAD_S: f64 = 100e-6;

    pub fn new(kind: PolicyKind, threads: usize) -> Self {
        Self { kind, threads, migration_overhead_s: Self::DEFAULT_MIGRATION_OVERHEAD_S }
    }

    pub fn with_overhead(mut self, seconds: f64) -> Self {
        self.migration_overhead_s = seconds;
        self
    }

    pub fn validate(&self, platform: &Platform) -> Result<(), PolicyError> {
        if self.threads == 0 {
            return Err(PolicyError::NoThreads);
        }
        if !(self.migration_overhead_s >= 0.0) {
            return Err(PolicyError::NegativeOverhead(self.migration_overhead_s));
        }
        let big = platform.big_cores().len();
        let little = platform.little_cores().len();
        match self.kind {
            PolicyKind::BigOnlyOs if big == 0 => {
                Err(PolicyError::MissingCluster { policy: self.kind, cluster: "big" })
            }
            PolicyKind::LittleOnly if little == 0 => {
                Err(PolicyError::MissingCluster { policy: self.kind, cluster: "LITTLE" })
            }
            PolicyKind::StaticPinned | PolicyKind::CriticalityAware
                if self.threads > big + little =>
            {
                Err(PolicyError::Capacity {
                    policy: self.kind,
                    capacity: big + little,
                    requested: self.threads,
                })
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ThreadSlot {
    pub core: Option<CoreId>,
    /// Reconstruction row currently owned.
    pub row: Option<usize>,
    /// Core the thread was last bound to (for migration records).
    pub last_core: Option<CoreId>,
}

/// Outcome of a guarded migration check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MigrationDecision {
    pub to: CoreId,
    /// Priority rank of the migrating row among LITTLE-resident rows
    /// (reconstruction stage only).
    pub rank: Option<usize>,
    /// Idle big cores observed by the check.
    pub idle_big: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowAction {
    /// Start `row`; `bind_to` is set when the thread moves to a new core.
    TakeRow { row: usize, bind_to: Option<CoreId> },
    /// Core released; waiting for a LITTLE core to be vacated.
    WaitForCore,
    /// Core released; nothing left to reconstruct.
    Release,
    /// Stays bound with nothing to reconstruct.
    Idle,
}

/// A waiting thread bound to a freshly vacated LITTLE core.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Handoff {
    pub thread: ThreadId,
    pub core: CoreId,
    pub row: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedState {
    pub kind: PolicyKind,
    pub rows: usize,
    pub big: Vec<CoreId>,
    pub little: Vec<CoreId>,
    pub threads: Vec<ThreadSlot>,
    /// Next row the row queue will hand out.
    pub next_row: usize,
    /// Threads that released a big core and wait for a LITTLE one.
    pub waiting: VecDeque<ThreadId>,
    pub filter_stage: bool,
}

/// Binds threads for the start of a frame and hands out rows `0..threads`.
pub fn initial_assignment(
    spec: &PolicySpec,
    platform: &Platform,
    rows: usize,
) -> Result<SchedState, PolicyError> {
    spec.validate(platform)?;
    let big: Vec<CoreId> = platform.big_cores().collect();
    let little: Vec<CoreId> = platform.little_cores().collect();
    let n = spec.threads;
    let threads = (0..n)
        .map(|t| {
            let core = match spec.kind {
                PolicyKind::BigOnlyOs => big[t % big.len()],
                PolicyKind::LittleOnly => little[t % little.len()],
                PolicyKind::StaticPinned | PolicyKind::CriticalityAware => {
                    if t < big.len() {
                        big[t]
                    } else {
                        little[t - big.len()]
                    }
                }
            };
            let row = (t < rows).then_some(t);
            ThreadSlot { core: Some(core), row, last_core: Some(core) }
        })
        .collect();
    Ok(SchedState {
        kind: spec.kind,
        rows,
        big,
        little,
        threads,
        next_row: n.min(rows),
        waiting: VecDeque::new(),
        filter_stage: false,
    })
}

impl SchedState {
    pub fn is_big(&self, core: CoreId) -> bool {
        self.big.contains(&core)
    }

    pub fn is_little(&self, core: CoreId) -> bool {
        self.little.contains(&core)
    }

    pub fn thread_count(&self) -> usize {
        self.threads.len()
    }

    pub fn threads_on(&self, core: CoreId) -> impl Iterator<Item = ThreadId> + '_ {
        self.threads
            .iter()
            .enumerate()
            .filter(move |(_, s)| s.core == Some(core))
            .map(|(t, _)| t)
    }

    fn unbound_big(&self) -> impl Iterator<Item = CoreId> + '_ {
        self.big.iter().copied().filter(|&c| self.threads_on(c).next().is_none())
    }

    fn unbound_little(&self) -> impl Iterator<Item = CoreId> + '_ {
        self.little.iter().copied().filter(|&c| self.threads_on(c).next().is_none())
    }

    fn on_little(&self, t: ThreadId) -> bool {
        self.threads[t].core.is_some_and(|c| self.is_little(c))
    }

    fn on_big(&self, t: ThreadId) -> bool {
        self.threads[t].core.is_some_and(|c| self.is_big(c))
    }

    /// True when some LITTLE-bound thread is reconstructing a row.
    pub fn little_rows_in_flight(&self) -> bool {
        (0..self.threads.len()).any(|t| self.on_little(t) && self.threads[t].row.is_some())
    }

    /// Rank (1 = smallest row index) of `t`'s row among LITTLE-resident rows.
    pub fn little_rank(&self, t: ThreadId) -> Option<usize> {
        let row = self.threads[t].row?;
        if !self.on_little(t) {
            return None;
        }
        let ahead = (0..self.threads.len())
            .filter(|&o| o != t && self.on_little(o))
            .filter_map(|o| self.threads[o].row)
            .filter(|&r| r < row)
            .count();
        Some(ahead + 1)
    }

    /// Guarded migration check run by a LITTLE thread after each
    /// reconstructed CTU: the rank-`k` LITTLE row moves to the
    /// lowest-numbered unbound big core only when at least `k` big cores
    /// are unbound.
    pub fn on_recon_ctu_complete(&self, t: ThreadId, coord: CtuCoord) -> Option<MigrationDecision> {
        if self.kind != PolicyKind::CriticalityAware || self.filter_stage {
            return None;
        }
        debug_assert_eq!(self.threads[t].row, Some(coord.row));
        let rank = self.little_rank(t)?;
        let idle_big = self.unbound_big().count();
        if idle_big >= rank {
            let to = self.unbound_big().next()?;
            Some(MigrationDecision { to, rank: Some(rank), idle_big })
        } else {
            None
        }
    }

    /// Rebinds `t` to `core`. A LITTLE core left empty is handed to the
    /// first waiting thread.
    pub fn apply_migration(&mut self, t: ThreadId, core: CoreId) -> Option<Handoff> {
        let from = self.threads[t].core;
        self.bind(t, core);
        match from {
            Some(c) if self.is_little(c) && !self.filter_stage => self.serve_waiting(c),
            _ => None,
        }
    }

    fn bind(&mut self, t: ThreadId, core: CoreId) {
        let slot = &mut self.threads[t];
        if let Some(c) = slot.core {
            slot.last_core = Some(c);
        }
        slot.core = Some(core);
    }

    fn release(&mut self, t: ThreadId) {
        let slot = &mut self.threads[t];
        if let Some(c) = slot.core.take() {
            slot.last_core = Some(c);
        }
    }

    fn take_row(&mut self, t: ThreadId) -> Option<usize> {
        if self.next_row >= self.rows {
            return None;
        }
        let row = self.next_row;
        self.next_row += 1;
        self.threads[t].row = Some(row);
        if self.next_row >= self.rows {
            // Nothing left for waiting threads; they stay unbound.
            self.waiting.clear();
        }
        Some(row)
    }

    fn serve_waiting(&mut self, core: CoreId) -> Option<Handoff> {
        if self.threads_on(core).next().is_some() {
            return None;
        }
        let t = self.waiting.pop_front()?;
        self.bind(t, core);
        let row = self.take_row(t).expect("waiting threads imply unassigned rows");
        Some(Handoff { thread: t, core, row })
    }

    /// Called when `t` has reconstructed the last CTU of its row.
    pub fn on_row_complete(&mut self, t: ThreadId) -> RowAction {
        let finished = self.threads[t].row.take().expect("row completion without a row");
        let rows_left = self.next_row < self.rows;
        if self.kind != PolicyKind::CriticalityAware {
            return match self.take_row(t) {
                Some(row) => RowAction::TakeRow { row, bind_to: None },
                None => RowAction::Idle,
            };
        }
        if self.on_big(t) {
            let little_busy = self.little_rows_in_flight();
            if rows_left {
                if !little_busy {
                    let row = self.take_row(t).expect("rows left");
                    return RowAction::TakeRow { row, bind_to: None };
                }
                self.release(t);
                let free = self.unbound_little().next();
                if let Some(core) = free {
                    self.bind(t, core);
                    let row = self.take_row(t).expect("rows left");
                    RowAction::TakeRow { row, bind_to: Some(core) }
                } else {
                    self.waiting.push_back(t);
                    RowAction::WaitForCore
                }
            } else {
                let bottom = finished + self.big.len().min(self.rows) >= self.rows;
                if !bottom && little_busy {
                    self.release(t);
                    RowAction::Release
                } else {
                    RowAction::Idle
                }
            }
        } else {
            match self.take_row(t) {
                Some(row) => RowAction::TakeRow { row, bind_to: None },
                None => {
                    self.release(t);
                    RowAction::Release
                }
            }
        }
    }

    /// Barrier reached: binds every unbound thread (big cores first) and
    /// checks the big/LITTLE occupancy. Returns the new bindings.
    pub fn filter_stage_start(&mut self) -> Result<Vec<(ThreadId, CoreId)>, PolicyError> {
        if let Some((thread, row)) =
            self.threads.iter().enumerate().find_map(|(t, s)| s.row.map(|r| (t, r)))
        {
            return Err(PolicyError::RowsInFlight { thread, row });
        }
        self.filter_stage = true;
        self.waiting.clear();
        let mut bindings = Vec::new();
        for t in 0..self.threads.len() {
            if self.threads[t].core.is_some() {
                continue;
            }
            let core = self
                .unbound_big()
                .next()
                .or_else(|| self.unbound_little().next())
                .expect("thread count never exceeds core count for pinned policies");
            self.bind(t, core);
            bindings.push((t, core));
        }
        if self.kind == PolicyKind::CriticalityAware {
            let big = (0..self.threads.len()).filter(|&t| self.on_big(t)).count();
            let little = (0..self.threads.len()).filter(|&t| self.on_little(t)).count();
            let want_big = self.threads.len().min(self.big.len());
            let want_little = self.threads.len() - want_big;
            if big != want_big || little != want_little {
                return Err(PolicyError::Occupancy { big, little, want_big, want_little });
            }
        }
        Ok(bindings)
    }

    /// Filter-stage check by a LITTLE thread after each filtered CTU: move
    /// to the lowest-numbered big core that is not executing anything.
    pub fn on_filter_ctu_complete(&self, t: ThreadId, core_busy: &[bool]) -> Option<MigrationDecision> {
        if self.kind != PolicyKind::CriticalityAware || !self.filter_stage || !self.on_little(t) {
            return None;
        }
        let idle: Vec<CoreId> = self.big.iter().copied().filter(|&c| !core_busy[c]).collect();
        idle.first().map(|&to| MigrationDecision { to, rank: None, idle_big: idle.len() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ca(n: usize) -> SchedState {
        initial_assignment(&PolicySpec::new(PolicyKind::CriticalityAware, n), &Platform::default(), 17)
            .unwrap()
    }

    #[test]
    fn criticality_initial_mapping() {
        let s = ca(8);
        let names: Vec<_> = Platform::default().cores().into_iter().map(|c| c.name).collect();
        for t in 0..8 {
            assert_eq!(s.threads[t].row, Some(t));
            let core = s.threads[t].core.unwrap();
            let expect = if t < 4 { format!("big.{}", "ABCD".as_bytes()[t] as char) } else {
                format!("LITTLE.{}", "ABCD".as_bytes()[t - 4] as char)
            };
            assert_eq!(names[core], expect);
        }
        assert_eq!(s.next_row, 8);
    }

    #[test]
    fn big_only_oversubscribes_round_robin() {
        let p = Platform::default();
        let s = initial_assignment(&PolicySpec::new(PolicyKind::BigOnlyOs, 5), &p, 17).unwrap();
        assert_eq!(s.threads_on(0).count(), 2);
        assert!((1..4).all(|c| s.threads_on(c).count() == 1));
        assert!(s.threads.iter().all(|t| p.is_big(t.core.unwrap())));
    }

    #[test]
    fn static_four_matches_big_only_four() {
        let p = Platform::default();
        let a = initial_assignment(&PolicySpec::new(PolicyKind::StaticPinned, 4), &p, 17).unwrap();
        let b = initial_assignment(&PolicySpec::new(PolicyKind::BigOnlyOs, 4), &p, 17).unwrap();
        assert_eq!(a.threads, b.threads);
    }

    #[test]
    fn capacity_is_enforced() {
        let p = Platform::default();
        for kind in [PolicyKind::StaticPinned, PolicyKind::CriticalityAware] {
            let err = initial_assignment(&PolicySpec::new(kind, 9), &p, 17).unwrap_err();
            assert!(matches!(err, PolicyError::Capacity { capacity: 8, requested: 9, .. }));
        }
        assert!(initial_assignment(&PolicySpec::new(PolicyKind::BigOnlyOs, 12), &p, 17).is_ok());
        let err = initial_assignment(
            &PolicySpec::new(PolicyKind::LittleOnly, 2),
            &Platform::homogeneous(4, 1.0),
            4,
        )
        .unwrap_err();
        assert!(matches!(err, PolicyError::MissingCluster { .. }));
        assert!(initial_assignment(&PolicySpec::new(PolicyKind::BigOnlyOs, 0), &p, 4).is_err());
    }

    #[test]
    fn rank_guard_examples() {
        // T1 (row 0) finished on big.A and waits; big.A is the only idle big core.
        let mut s = ca(8);
        assert_eq!(s.on_row_complete(0), RowAction::WaitForCore);
        // T5 (thread 4, rank 1) migrates.
        let d = s.on_recon_ctu_complete(4, CtuCoord::new(4, 3)).unwrap();
        assert_eq!((d.to, d.rank, d.idle_big), (0, Some(1), 1));
        // T6 (thread 5, rank 2) does not.
        assert_eq!(s.on_recon_ctu_complete(5, CtuCoord::new(5, 1)), None);

        // Three idle big cores: T7 (rank 3) may go.
        let mut s = ca(8);
        for t in 0..3 {
            assert_eq!(s.on_row_complete(t), RowAction::WaitForCore);
        }
        let d = s.on_recon_ctu_complete(6, CtuCoord::new(6, 0)).unwrap();
        assert_eq!((d.to, d.rank, d.idle_big), (0, Some(3), 3));
        assert_eq!(s.on_recon_ctu_complete(7, CtuCoord::new(7, 0)), None);
    }

    #[test]
    fn swap_hands_vacated_little_core_to_waiting_thread() {
        let mut s = ca(8);
        assert_eq!(s.on_row_complete(0), RowAction::WaitForCore);
        let d = s.on_recon_ctu_complete(4, CtuCoord::new(4, 2)).unwrap();
        let handoff = s.apply_migration(4, d.to).unwrap();
        assert_eq!(handoff, Handoff { thread: 0, core: 4, row: 8 });
        assert_eq!(s.threads[4].core, Some(0));
        assert_eq!(s.threads[0].core, Some(4));
        assert_eq!(s.threads[0].last_core, Some(0));
    }

    #[test]
    fn bottom_rows_are_not_demoted() {
        let mut s = ca(8);
        s.next_row = 17;
        s.threads[0].row = Some(16);
        assert_eq!(s.on_row_complete(0), RowAction::Idle);
        assert_eq!(s.threads[0].core, Some(0));
    }

    #[test]
    fn non_bottom_row_releases_big_core_when_little_rows_remain() {
        let mut s = ca(8);
        s.next_row = 17;
        s.threads[0].row = Some(10);
        assert_eq!(s.on_row_complete(0), RowAction::Release);
        assert_eq!(s.threads[0].core, None);
    }

    #[test]
    fn criticality_with_four_threads_never_leaves_big() {
        let mut s = ca(4);
        assert_eq!(s.on_row_complete(0), RowAction::TakeRow { row: 4, bind_to: None });
        assert_eq!(s.threads[0].core, Some(0));
    }

    #[test]
    fn criticality_with_five_threads_uses_free_little_core() {
        let mut s = ca(5);
        assert_eq!(s.on_row_complete(0), RowAction::TakeRow { row: 5, bind_to: Some(5) });
    }

    #[test]
    fn static_little_thread_keeps_its_core() {
        let mut s = initial_assignment(
            &PolicySpec::new(PolicyKind::StaticPinned, 8),
            &Platform::default(),
            17,
        )
        .unwrap();
        assert_eq!(s.on_row_complete(6), RowAction::TakeRow { row: 8, bind_to: None });
        assert_eq!(s.threads[6].core, Some(6));
        s.next_row = 17;
        assert_eq!(s.on_row_complete(7), RowAction::Idle);
    }

    #[test]
    fn filter_stage_occupancy() {
        let mut s = ca(8);
        for t in 0..8 {
            s.threads[t].row = None;
        }
        s.threads[1].core = None;
        s.threads[2].core = None;
        s.threads[5].core = Some(1);
        s.threads[6].core = Some(2);
        // Cores 5 and 6 are now free; threads 1 and 2 land there.
        let bindings = s.filter_stage_start().unwrap();
        assert_eq!(bindings, vec![(1, 5), (2, 6)]);

        let mut s = ca(4);
        s.threads.iter_mut().for_each(|t| t.row = None);
        assert!(s.filter_stage_start().unwrap().is_empty());

        let mut s = ca(8);
        assert!(matches!(s.filter_stage_start(), Err(PolicyError::RowsInFlight { .. })));
    }

    #[test]
    fn filter_stage_migration_examples() {
        let mut s = ca(8);
        s.threads.iter_mut().for_each(|t| t.row = None);
        s.filter_stage_start().unwrap();
        let mut busy = vec![true; 8];
        busy[1] = false;
        let d = s.on_filter_ctu_complete(4, &busy).unwrap();
        assert_eq!(d.to, 1);
        assert_eq!(s.on_filter_ctu_complete(4, &[true; 8]), None);
        let mut busy = vec![false; 8];
        busy[0] = true;
        assert_eq!(s.on_filter_ctu_complete(0, &busy), None);
    }

    #[test]
    fn policy_names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.cli_name().parse::<PolicyKind>().unwrap(), k);
        }
        assert!("cfs".parse::<PolicyKind>().is_err());
    }
}
