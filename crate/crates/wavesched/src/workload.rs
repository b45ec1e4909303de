//! Per-CTU work amounts.
//!
//! Reconstruction costs come from a synthetic generator or a trace file.
//! Filter passes are charged as a fixed fraction of the frame's total work,
//! distributed over CTUs in proportion to their reconstruction cost.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CtuCoord, GridDims, Phase};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("mean work per CTU must be positive (got {0})")]
    NonPositiveMean(f64),
    #[error("sigma must be non-negative (got {0})")]
    NegativeSigma(f64),
    #[error("frame count must be at least 1")]
    NoFrames,
    #[error("unknown workload kind {0:?}; expected uniform, lognormal or trace:PATH")]
    UnknownKind(String),
    #[error("invalid cost parameter {name}: {reason}")]
    InvalidParam { name: &'static str, reason: String },
    #[error("trace line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("trace line {line}: duplicate cell (frame {frame}, row {row}, col {col})")]
    Duplicate { line: usize, frame: usize, row: usize, col: usize },
    #[error("trace is missing cell (frame {frame}, row {row}, col {col})")]
    MissingCell { frame: usize, row: usize, col: usize },
    #[error("trace dimensions {found} do not match the configured grid {expected}")]
    DimensionMismatch { expected: GridDims, found: GridDims },
    #[error("trace covers {found} frames but {expected} were requested")]
    FrameMismatch { expected: usize, found: usize },
    #[error("trace is empty")]
    EmptyTrace,
    #[error("reading trace {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// How much of the frame's work the filter passes take.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    /// Fraction of total frame work spent in the three filter passes.
    pub fraction: f64,
    /// Share of `fraction` taken by (horizontal, vertical, SAO).
    pub split: [f64; 3],
}

impl Default for FilterParams {
    fn default() -> Self {
        Self { fraction: 0.15, split: [0.3, 0.3, 0.4] }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if !(0.0..1.0).contains(&self.fraction) {
            return Err(invalid("filter_fraction", format!("{} not in [0,1)", self.fraction)));
        }
        if self.split.iter().any(|s| !(*s >= 0.0)) {
            return Err(invalid("filter_split", format!("{:?} has negative share", self.split)));
        }
        let sum: f64 = self.split.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(invalid("filter_split", format!("{:?} sums to {sum}, not 1", self.split)));
        }
        Ok(())
    }
}

/// Vectorization model: a fraction of every kernel runs `speedup` times
/// faster when SIMD is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimdParams {
    pub vector_fraction: f64,
    pub vector_speedup: f64,
}

impl Default for SimdParams {
    // Fitted: the serial cost factor (1 - v) + v / S equals 7.963 / 9.844.
    fn default() -> Self {
        let factor = 7.963 / 9.844;
        Self { vector_fraction: 0.58, vector_speedup: 0.58 / (factor - 0.42) }
    }
}

impl SimdParams {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if !(0.0..=1.0).contains(&self.vector_fraction) {
            return Err(invalid("vector_fraction", format!("{} not in [0,1]", self.vector_fraction)));
        }
        if !(self.vector_speedup >= 1.0) {
            return Err(invalid("vector_speedup", format!("{} < 1", self.vector_speedup)));
        }
        Ok(())
    }

    /// Multiplier applied to every cost when SIMD is on.
    pub fn factor(&self) -> f64 {
        (1.0 - self.vector_fraction) + self.vector_fraction / self.vector_speedup
    }

    /// Speedup `S` that yields the requested cost factor for this `v`.
    pub fn solve_speedup(vector_fraction: f64, factor: f64) -> Result<f64, WorkloadError> {
        let denom = factor - (1.0 - vector_fraction);
        if !(denom > 0.0) || factor > 1.0 {
            return Err(invalid(
                "vector_fraction",
                format!("factor {factor} unreachable with vector fraction {vector_fraction}"),
            ));
        }
        Ok(vector_fraction / denom)
    }
}

fn invalid(name: &'static str, reason: String) -> WorkloadError {
    WorkloadError::InvalidParam { name, reason }
}

/// Cost of a kernel after vectorization.
pub fn effective_cost(cost: f64, simd_on: bool, vector_fraction: f64, speedup: f64) -> f64 {
    if simd_on {
        cost * ((1.0 - vector_fraction) + vector_fraction / speedup)
    } else {
        cost
    }
}

/// Work amounts of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub dims: GridDims,
    /// Row-major reconstruction cost per CTU, in work units.
    pub recon: Vec<f64>,
    pub filter: FilterParams,
    pub simd: SimdParams,
}

impl CostModel {
    pub fn new(
        dims: GridDims,
        recon: Vec<f64>,
        filter: FilterParams,
        simd: SimdParams,
    ) -> Result<Self, WorkloadError> {
        if recon.len() != dims.ctu_count() {
            return Err(WorkloadError::DimensionMismatch {
                expected: dims,
                found: GridDims { rows: recon.len() / dims.cols.max(1), cols: dims.cols },
            });
        }
        if let Some((i, v)) = recon.iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
            let c = dims.coord(i);
            return Err(invalid("recon", format!("cost {v} at {c} is not positive")));
        }
        filter.validate()?;
        simd.validate()?;
        Ok(Self { dims, recon, filter, simd })
    }

    pub fn recon_cost(&self, coord: CtuCoord) -> f64 {
        self.recon[self.dims.linear(coord)]
    }

    /// Raw (non-vectorized) cost of one task unit.
    pub fn task_cost(&self, phase: Phase, coord: CtuCoord) -> f64 {
        let recon = self.recon_cost(coord);
        let f = &self.filter;
        match phase {
            Phase::Recon => recon,
            p => {
                let share = f.split[p.index() - 1];
                recon * share * f.fraction / (1.0 - f.fraction)
            }
        }
    }

    pub fn effective_task_cost(&self, phase: Phase, coord: CtuCoord, simd_on: bool) -> f64 {
        effective_cost(
            self.task_cost(phase, coord),
            simd_on,
            self.simd.vector_fraction,
            self.simd.vector_speedup,
        )
    }

    /// Raw work of the whole frame, filters included.
    pub fn total_work(&self) -> f64 {
        let recon: f64 = self.recon.iter().sum();
        recon / (1.0 - self.filter.fraction)
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.recon[row * self.dims.cols..(row + 1) * self.dims.cols]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum WorkloadKind {
    Uniform,
    Lognormal,
    Trace(PathBuf),
}

impl std::str::FromStr for WorkloadKind {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "uniform" => Ok(Self::Uniform),
            "lognormal" => Ok(Self::Lognormal),
            other => match other.strip_prefix("trace:") {
                Some(path) if !path.is_empty() => Ok(Self::Trace(PathBuf::from(path))),
                _ => Err(WorkloadError::UnknownKind(other.to_string())),
            },
        }
    }
}

impl std::fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Uniform => f.write_str("uniform"),
            Self::Lognormal => f.write_str("lognormal"),
            Self::Trace(p) => write!(f, "trace:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub mean_wu: f64,
    pub sigma: f64,
    pub seed: u64,
    pub filter: FilterParams,
    pub simd: SimdParams,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            kind: WorkloadKind::Lognormal,
            mean_wu: 0.208_959_155_059_686_2,
            sigma: 0.8,
            seed: 7,
            filter: FilterParams::default(),
            simd: SimdParams::default(),
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if !(self.mean_wu > 0.0) || !self.mean_wu.is_finite() {
            return Err(WorkloadError::NonPositiveMean(self.mean_wu));
        }
        if !(self.sigma >= 0.0) {
            return Err(WorkloadError::NegativeSigma(self.sigma));
        }
        self.filter.validate()?;
        self.simd.validate()
    }
}

/// Builds one cost model per frame.
///
/// Lognormal entries are `mean * exp(sigma * z - sigma^2 / 2)` with standard
/// normal `z`, so every entry scales linearly with `mean_wu` for a fixed seed.
pub fn generate(
    spec: &WorkloadSpec,
    dims: GridDims,
    frames: usize,
) -> Result<Vec<CostModel>, WorkloadError> {
    spec.validate()?;
    if frames == 0 {
        return Err(WorkloadError::NoFrames);
    }
    let n = dims.ctu_count();
    let matrices: Vec<Vec<f64>> = match &spec.kind {
        WorkloadKind::Uniform => vec![vec![spec.mean_wu; n]; frames],
        WorkloadKind::Lognormal => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            let shift = spec.sigma * spec.sigma / 2.0;
            (0..frames)
                .map(|_| {
                    (0..n)
                        .map(|_| {
                            let z: f64 = normal.sample(&mut rng);
                            spec.mean_wu * (spec.sigma * z - shift).exp()
                        })
                        .collect()
                })
                .collect()
        }
        WorkloadKind::Trace(path) => {
            let trace = load_trace(path)?;
            if trace.dims != dims {
                return Err(WorkloadError::DimensionMismatch { expected: dims, found: trace.dims });
            }
            if trace.frames.len() != frames {
                return Err(WorkloadError::FrameMismatch {
                    expected: frames,
                    found: trace.frames.len(),
                });
            }
            trace.frames
        }
    };
    matrices
        .into_iter()
        .map(|m| CostModel::new(dims, m, spec.filter, spec.simd))
        .collect()
}

/// Reconstruction costs read from a trace file.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceData {
    pub dims: GridDims,
    /// One row-major matrix per frame.
    pub frames: Vec<Vec<f64>>,
}

impl TraceData {
    pub fn into_cost_models(
        self,
        filter: FilterParams,
        simd: SimdParams,
    ) -> Result<Vec<CostModel>, WorkloadError> {
        let dims = self.dims;
        self.frames
            .into_iter()
            .map(|m| CostModel::new(dims, m, filter, simd))
            .collect()
    }
}

pub fn load_trace(path: &Path) -> Result<TraceData, WorkloadError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| WorkloadError::Io { path: path.to_path_buf(), source })?;
    parse_trace(&text)
}

/// Parses `frame,row,col,work_units` records. Blank lines and `#` comments
/// are skipped, as is a leading header line starting with `frame`.
pub fn parse_trace(text: &str) -> Result<TraceData, WorkloadError> {
    let mut cells: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    let mut seen_record = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if !seen_record && content.to_ascii_lowercase().starts_with("frame") {
            seen_record = true;
            continue;
        }
        seen_record = true;
        let fields: Vec<&str> = content.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(WorkloadError::Parse {
                line,
                reason: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let index = |i: usize, name: &str| -> Result<usize, WorkloadError> {
            fields[i].parse::<usize>().map_err(|_| WorkloadError::Parse {
                line,
                reason: format!("invalid {name} {:?}", fields[i]),
            })
        };
        let (frame, row, col) = (index(0, "frame")?, index(1, "row")?, index(2, "col")?);
        let wu: f64 = fields[3].parse().map_err(|_| WorkloadError::Parse {
            line,
            reason: format!("invalid work_units {:?}", fields[3]),
        })?;
        if !(wu > 0.0) || !wu.is_finite() {
            return Err(WorkloadError::Parse {
                line,
                reason: format!("work_units must be positive (got {})", fields[3]),
            });
        }
        if cells.insert((frame, row, col), wu).is_some() {
            return Err(WorkloadError::Duplicate { line, frame, row, col });
        }
    }
    if cells.is_empty() {
        return Err(WorkloadError::EmptyTrace);
    }
    let frames = cells.keys().map(|k| k.0).max().unwrap_or(0) + 1;
    let rows = cells.keys().map(|k| k.1).max().unwrap_or(0) + 1;
    let cols = cells.keys().map(|k| k.2).max().unwrap_or(0) + 1;
    let dims = GridDims { rows, cols };
    let expected = frames
        .checked_mul(rows)
        .and_then(|n| n.checked_mul(cols))
        .unwrap_or(usize::MAX);
    if cells.len() != expected {
        // Report the first absent cell in (frame, row, col) order.
        for f in 0..frames {
            for r in 0..rows {
                for c in 0..cols {
                    if !cells.contains_key(&(f, r, c)) {
                        return Err(WorkloadError::MissingCell { frame: f, row: r, col: c });
                    }
                }
            }
        }
    }
    let mut out = vec![Vec::with_capacity(rows * cols); frames];
    for ((f, _, _), wu) in cells {
        out[f].push(wu);
    }
    Ok(TraceData { dims, frames: out })
}

/// Serializes reconstruction costs in the trace format.
pub fn write_trace(models: &[CostModel]) -> String {
    let mut out = String::from("frame,row,col,work_units\n");
    for (f, m) in models.iter().enumerate() {
        for coord in m.dims.coords() {
            let _ = writeln!(out, "{f},{},{},{}", coord.row, coord.col, m.recon_cost(coord));
        }
    }
    out
}
