//! CTU grid and the per-frame task graph.
//!
//! A frame is a `rows x cols` grid of CTUs. Every CTU contributes four task
//! units: one reconstruction task and three in-loop filter passes. The
//! reconstruction tasks form the wavefront; the filter passes only start once
//! the whole frame has been reconstructed (the frame barrier).

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GridError {
    #[error("grid dimensions must be at least 1x1 (got {rows}x{cols})")]
    EmptyGrid { rows: usize, cols: usize },
    #[error("CTU {coord} lies outside the {dims} grid")]
    OutOfBounds { coord: CtuCoord, dims: GridDims },
    #[error("{0} is a reconstruction task; use recon_deps")]
    NotAFilterTask(TaskId),
    #[error("upper dependency lead must be at least 1")]
    InvalidLead,
    #[error("progress set is not dependency-closed: {task} completed before {missing}")]
    NotClosed { task: TaskId, missing: String },
    #[error("invalid grid specification {0:?}; expected RxC")]
    Parse(String),
}

/// Extent of the CTU grid of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridDims {
    pub rows: usize,
    pub cols: usize,
}

impl GridDims {
    /// 1920x1080 with 64x64 CTUs.
    pub const HD_1080P: GridDims = GridDims { rows: 17, cols: 30 };

    pub fn new(rows: usize, cols: usize) -> Result<Self, GridError> {
        if rows == 0 || cols == 0 {
            return Err(GridError::EmptyGrid { rows, cols });
        }
        Ok(Self { rows, cols })
    }

    pub fn ctu_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn contains(&self, coord: CtuCoord) -> bool {
        coord.row < self.rows && coord.col < self.cols
    }

    pub fn check(&self, coord: CtuCoord) -> Result<(), GridError> {
        if self.contains(coord) {
            Ok(())
        } else {
            Err(GridError::OutOfBounds { coord, dims: *self })
        }
    }

    /// Row-major position of a CTU.
    pub fn linear(&self, coord: CtuCoord) -> usize {
        coord.row * self.cols + coord.col
    }

    pub fn coord(&self, linear: usize) -> CtuCoord {
        CtuCoord::new(linear / self.cols, linear % self.cols)
    }

    pub fn coords(&self) -> impl Iterator<Item = CtuCoord> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| CtuCoord::new(r, c)))
    }
}

impl Default for GridDims {
    fn default() -> Self {
        Self::HD_1080P
    }
}

impl fmt::Display for GridDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl std::str::FromStr for GridDims {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (r, c) = s
            .trim()
            .split_once(['x', 'X'])
            .ok_or_else(|| GridError::Parse(s.to_string()))?;
        let rows = r.trim().parse().map_err(|_| GridError::Parse(s.to_string()))?;
        let cols = c.trim().parse().map_err(|_| GridError::Parse(s.to_string()))?;
        GridDims::new(rows, cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CtuCoord {
    pub row: usize,
    pub col: usize,
}

impl CtuCoord {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for CtuCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

/// Processing stage of a task unit. The declaration order is the dispatch
/// order of the filter pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Recon,
    HFilter,
    VFilter,
    Sao,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Recon, Phase::HFilter, Phase::VFilter, Phase::Sao];
    pub const FILTERS: [Phase; 3] = [Phase::HFilter, Phase::VFilter, Phase::Sao];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_filter(self) -> bool {
        self != Phase::Recon
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskId {
    pub frame: usize,
    pub phase: Phase,
    pub coord: CtuCoord,
}

impl TaskId {
    pub const fn new(frame: usize, phase: Phase, coord: CtuCoord) -> Self {
        Self { frame, phase, coord }
    }

    pub const fn recon(frame: usize, row: usize, col: usize) -> Self {
        Self::new(frame, Phase::Recon, CtuCoord::new(row, col))
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}{}@f{}", self.phase, self.coord, self.frame)
    }
}

/// Satisfied once every reconstruction task of `frame` has completed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameBarrier {
    pub frame: usize,
}

pub fn frame_barrier(frame: usize) -> FrameBarrier {
    FrameBarrier { frame }
}

impl FrameBarrier {
    pub fn is_satisfied(&self, progress: &BTreeSet<TaskId>, dims: GridDims) -> bool {
        dims.coords()
            .all(|c| progress.contains(&TaskId::new(self.frame, Phase::Recon, c)))
    }
}

/// A predecessor of a task: another task or the frame barrier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dep {
    Task(TaskId),
    Barrier(FrameBarrier),
}

/// Dependency rules of the wavefront task graph.
///
/// `upper_lead` is how far to the right of a CTU the upper-row dependency
/// sits: CTU `(i, j)` waits for `(i-1, min(j + upper_lead, cols-1))`.
/// A lead of 1 gives the two-CTU lag between consecutive rows; a lead of 2
/// gives a three-CTU lag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WppGraph {
    pub dims: GridDims,
    pub upper_lead: usize,
}

impl WppGraph {
    pub const DEFAULT_LEAD: usize = 1;

    pub fn new(dims: GridDims) -> Self {
        Self { dims, upper_lead: Self::DEFAULT_LEAD }
    }

    pub fn with_lead(dims: GridDims, upper_lead: usize) -> Result<Self, GridError> {
        if upper_lead == 0 {
            return Err(GridError::InvalidLead);
        }
        Ok(Self { dims, upper_lead })
    }

    /// Reconstruction predecessors of a CTU, left neighbour first.
    pub fn recon_deps(&self, coord: CtuCoord) -> Result<Vec<CtuCoord>, GridError> {
        self.dims.check(coord)?;
        let mut deps = Vec::with_capacity(2);
        if coord.col > 0 {
            deps.push(CtuCoord::new(coord.row, coord.col - 1));
        }
        if coord.row > 0 {
            let col = (coord.col + self.upper_lead).min(self.dims.cols - 1);
            deps.push(CtuCoord::new(coord.row - 1, col));
        }
        Ok(deps)
    }

    /// Task predecessors of a filter task (the frame barrier is not listed;
    /// see [`WppGraph::predecessors`]).
    pub fn filter_deps(&self, task: TaskId) -> Result<Vec<TaskId>, GridError> {
        let c = task.coord;
        self.dims.check(c)?;
        let (same, prev) = match task.phase {
            Phase::Recon => return Err(GridError::NotAFilterTask(task)),
            Phase::HFilter => (Phase::HFilter, None),
            Phase::VFilter => (Phase::VFilter, Some(Phase::HFilter)),
            Phase::Sao => (Phase::Sao, Some(Phase::VFilter)),
        };
        let mut deps = Vec::with_capacity(4);
        if c.col > 0 {
            deps.push(TaskId::new(task.frame, same, CtuCoord::new(c.row, c.col - 1)));
        }
        if let Some(prev) = prev {
            deps.push(TaskId::new(task.frame, prev, c));
            if c.col + 1 < self.dims.cols {
                deps.push(TaskId::new(task.frame, prev, CtuCoord::new(c.row, c.col + 1)));
            }
            if c.row + 1 < self.dims.rows {
                deps.push(TaskId::new(task.frame, prev, CtuCoord::new(c.row + 1, c.col)));
            }
        }
        Ok(deps)
    }

    /// All predecessors of a task, including the frame barrier for filters.
    pub fn predecessors(&self, task: TaskId) -> Result<Vec<Dep>, GridError> {
        if task.phase == Phase::Recon {
            Ok(self
                .recon_deps(task.coord)?
                .into_iter()
                .map(|c| Dep::Task(TaskId::new(task.frame, Phase::Recon, c)))
                .collect())
        } else {
            let mut deps: Vec<Dep> = self.filter_deps(task)?.into_iter().map(Dep::Task).collect();
            deps.push(Dep::Barrier(frame_barrier(task.frame)));
            Ok(deps)
        }
    }

    /// Every task unit of a frame, in (phase, row, col) order.
    pub fn frame_tasks(&self, frame: usize) -> impl Iterator<Item = TaskId> + '_ {
        Phase::ALL
            .into_iter()
            .flat_map(move |p| self.dims.coords().map(move |c| TaskId::new(frame, p, c)))
    }

    fn satisfied(&self, dep: &Dep, progress: &BTreeSet<TaskId>) -> bool {
        match dep {
            Dep::Task(t) => progress.contains(t),
            Dep::Barrier(b) => b.is_satisfied(progress, self.dims),
        }
    }

    /// Tasks of `frame` that are not completed and whose predecessors are.
    pub fn ready_tasks(
        &self,
        progress: &BTreeSet<TaskId>,
        frame: usize,
    ) -> Result<BTreeSet<TaskId>, GridError> {
        for &done in progress.iter().filter(|t| t.frame == frame) {
            for dep in self.predecessors(done)? {
                if !self.satisfied(&dep, progress) {
                    let missing = match dep {
                        Dep::Task(t) => t.to_string(),
                        Dep::Barrier(b) => format!("barrier of frame {}", b.frame),
                    };
                    return Err(GridError::NotClosed { task: done, missing });
                }
            }
        }
        let mut ready = BTreeSet::new();
        for task in self.frame_tasks(frame) {
            if progress.contains(&task) {
                continue;
            }
            if self.predecessors(task)?.iter().all(|d| self.satisfied(d, progress)) {
                ready.insert(task);
            }
        }
        Ok(ready)
    }

    /// Largest set of mutually independent reconstruction tasks.
    ///
    /// Two CTUs in rows `a < b` are unordered only when the lower one is more
    /// than `upper_lead` columns per row step to the left of the upper one,
    /// and the chain does not hit the clamped right edge.
    pub fn max_wavefront_width(&self) -> usize {
        let per_row = self.upper_lead + 1;
        ((self.dims.cols - 1) / per_row + 1).min(self.dims.rows)
    }
}

/// `recon_deps` under the default two-CTU lag.
pub fn recon_deps(coord: CtuCoord, dims: GridDims) -> Result<Vec<CtuCoord>, GridError> {
    WppGraph::new(dims).recon_deps(coord)
}

/// `filter_deps` for a grid; the rule does not depend on the lead.
pub fn filter_deps(task: TaskId, dims: GridDims) -> Result<Vec<TaskId>, GridError> {
    WppGraph::new(dims).filter_deps(task)
}
