//! Scenario files: `key = value` lines, `#` comments.
//!
//! A scenario names everything needed to build a [`SimConfig`]: platform,
//! policy, workload generator, grid and frame count. Platform files use the
//! same syntax restricted to platform keys.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{SimConfig, SimError};
use crate::grid::{GridDims, WppGraph};
use crate::platform::Platform;
use crate::policy::{PolicyKind, PolicySpec};
use crate::workload::{generate, WorkloadError, WorkloadKind, WorkloadSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: {key}: {reason}")]
    Value { line: usize, key: String, reason: String },
    #[error("{key}: {reason}")]
    Invalid { key: String, reason: String },
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub platform: Platform,
    pub policy: PolicySpec,
    pub workload: WorkloadSpec,
    pub frames: usize,
    pub dims: GridDims,
    pub wpp_lead: usize,
    pub simd: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            platform: Platform::default(),
            policy: PolicySpec::new(PolicyKind::CriticalityAware, 8),
            workload: WorkloadSpec::default(),
            frames: 20,
            dims: GridDims::HD_1080P,
            wpp_lead: WppGraph::DEFAULT_LEAD,
            simd: false,
        }
    }
}

impl Scenario {
    /// Generates the per-frame cost models and validates the result.
    pub fn build(&self) -> Result<SimConfig, ConfigError> {
        let workload = generate(&self.workload, self.dims, self.frames)?;
        let cfg = SimConfig {
            platform: self.platform.clone(),
            policy: self.policy.clone(),
            workload,
            dims: self.dims,
            wpp_lead: self.wpp_lead,
            simd: self.simd,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> Result<String, ConfigError> {
        let mut out = String::new();
        let w = &self.workload;
        let kv = |out: &mut String, k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv(&mut out, "policy", &self.policy.kind);
        kv(&mut out, "threads", &self.policy.threads);
        kv(&mut out, "migration_overhead_s", &self.policy.migration_overhead_s);
        kv(&mut out, "frames", &self.frames);
        kv(&mut out, "grid", &self.dims);
        kv(&mut out, "wpp_lead", &self.wpp_lead);
        kv(&mut out, "simd", &on_off(self.simd));
        kv(&mut out, "workload", &w.kind);
        kv(&mut out, "mean_wu", &w.mean_wu);
        kv(&mut out, "sigma", &w.sigma);
        kv(&mut out, "seed", &w.seed);
        kv(&mut out, "filter.fraction", &w.filter.fraction);
        let split = w.filter.split.map(|s| s.to_string()).join(",");
        kv(&mut out, "filter.split", &split);
        kv(&mut out, "simd.vector_fraction", &w.simd.vector_fraction);
        kv(&mut out, "simd.vector_speedup", &w.simd.vector_speedup);
        out.push_str(&platform_to_text(&self.platform)?);
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        write_atomic(path, self.to_text()?.as_bytes())
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })
    }
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })
}

pub fn platform_to_text(p: &Platform) -> Result<String, ConfigError> {
    if p.clusters.len() > 2 || p.clusters.is_empty() {
        return Err(ConfigError::Invalid {
            key: "clusters".into(),
            reason: format!("files describe one or two clusters, got {}", p.clusters.len()),
        });
    }
    let mut out = String::from("# speeds and powers: fitted to reference measurements, re-derive with `wavesched calibrate`\n");
    let _ = writeln!(out, "base_power_w = {}", p.base_power_w);
    let _ = writeln!(out, "sample_interval_s = {}", p.sample_interval_s);
    let _ = writeln!(out, "switch_penalty_s = {}", p.switch_penalty_s);
    for (prefix, cluster) in ["big", "little"].iter().zip(&p.clusters) {
        let t = &cluster.core_type;
        let _ = writeln!(out, "{prefix}.count = {}", cluster.count);
        let _ = writeln!(out, "{prefix}.name = {}", t.name);
        let _ = writeln!(out, "{prefix}.freq_ghz = {}", t.freq_ghz);
        let _ = writeln!(out, "{prefix}.speed_wu_per_s = {}", t.speed_wu_per_s);
        let _ = writeln!(out, "{prefix}.active_power_w = {}", t.active_power_w);
        let _ = writeln!(out, "{prefix}.idle_power_w = {}", t.idle_power_w);
        let _ = writeln!(out, "{prefix}.simd_power_factor = {}", t.simd_power_factor);
    }
    if p.clusters.len() == 1 {
        out.push_str("little.count = 0\n");
    }
    Ok(out)
}

/// One `key = value` entry with its line number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Splits text into entries. Keys must be unique.
pub fn parse_kv(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut entries: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or(ConfigError::Syntax { line })?;
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(ConfigError::Syntax { line });
        }
        if entries.iter().any(|e| e.key == key) {
            return Err(ConfigError::Duplicate { line, key: key.into() });
        }
        entries.push(Entry { line, key: key.into(), value: value.trim().into() });
    }
    Ok(entries)
}

fn value_err(e: &Entry, reason: impl std::fmt::Display) -> ConfigError {
    ConfigError::Value { line: e.line, key: e.key.clone(), reason: reason.to_string() }
}

fn num<T: std::str::FromStr>(e: &Entry) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    e.value.parse().map_err(|err| value_err(e, err))
}

fn switch(e: &Entry) -> Result<bool, ConfigError> {
    match e.value.as_str() {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        _ => Err(value_err(e, "expected on|off")),
    }
}

/// Applies one platform key. Returns false when the key is not a platform key.
fn apply_platform_key(p: &mut Platform, e: &Entry, little_count: &mut Option<usize>) -> Result<bool, ConfigError> {
    match e.key.as_str() {
        "base_power_w" => p.base_power_w = num(e)?,
        "sample_interval_s" => p.sample_interval_s = num(e)?,
        "switch_penalty_s" => p.switch_penalty_s = num(e)?,
        "speed_ratio" => {} // applied after all other keys
        key => {
            let Some((prefix, field)) = key.split_once('.') else { return Ok(false) };
            let idx = match prefix {
                "big" => 0,
                "little" => 1,
                _ => return Ok(false),
            };
            if idx == 1 && p.clusters.len() < 2 {
                p.clusters.push(Platform::default().clusters[1].clone());
            }
            if field == "count" {
                let n: usize = num(e)?;
                if idx == 1 {
                    *little_count = Some(n);
                } else if n == 0 {
                    return Err(value_err(e, "big cluster needs at least one core"));
                }
                p.clusters[idx].count = n.max(1);
                return Ok(true);
            }
            let t = &mut p.clusters[idx].core_type;
            match field {
                "name" => t.name = e.value.clone(),
                "freq_ghz" => t.freq_ghz = num(e)?,
                "speed_wu_per_s" => t.speed_wu_per_s = num(e)?,
                "active_power_w" => t.active_power_w = num(e)?,
                "idle_power_w" => t.idle_power_w = num(e)?,
                "simd_power_factor" => t.simd_power_factor = num(e)?,
                _ => return Ok(false),
            }
        }
    }
    Ok(true)
}

fn finish_platform(mut p: Platform, entries: &[Entry], little_count: Option<usize>) -> Result<Platform, ConfigError> {
    if let Some(e) = entries.iter().find(|e| e.key == "speed_ratio") {
        let ratio: f64 = num(e)?;
        if !(ratio > 1.0) || !ratio.is_finite() {
            return Err(value_err(e, "big:LITTLE speed ratio must exceed 1"));
        }
        if let Some(s) = entries.iter().find(|s| s.key == "little.speed_wu_per_s") {
            return Err(value_err(s, "conflicts with speed_ratio"));
        }
        p.clusters[1].core_type.speed_wu_per_s = p.clusters[0].core_type.speed_wu_per_s / ratio;
    }
    if little_count == Some(0) {
        p.clusters.truncate(1);
    }
    p.validate().map_err(|err| match err {
        crate::platform::PlatformError::Invalid { key, reason } => ConfigError::Invalid { key, reason },
        other => ConfigError::Invalid { key: "platform".into(), reason: other.to_string() },
    })?;
    Ok(p)
}

/// Parses a platform file on top of the default board.
pub fn parse_platform(text: &str) -> Result<Platform, ConfigError> {
    let entries = parse_kv(text)?;
    let mut p = Platform::default();
    let mut little_count = None;
    for e in &entries {
        if !apply_platform_key(&mut p, e, &mut little_count)? {
            return Err(ConfigError::UnknownKey { line: e.line, key: e.key.clone() });
        }
    }
    finish_platform(p, &entries, little_count)
}

pub fn load_platform(path: &Path) -> Result<Platform, ConfigError> {
    parse_platform(&read(path)?)
}

/// Parses a scenario on top of `base`; keys absent from the text keep their
/// base values.
pub fn parse_scenario(text: &str, base: &Scenario) -> Result<Scenario, ConfigError> {
    let entries = parse_kv(text)?;
    let mut s = base.clone();
    let mut little_count = None;
    for e in &entries {
        let w = &mut s.workload;
        match e.key.as_str() {
            "policy" => s.policy.kind = e.value.parse().map_err(|err| value_err(e, err))?,
            "threads" => s.policy.threads = num(e)?,
            "migration_overhead_s" => s.policy.migration_overhead_s = num(e)?,
            "frames" => s.frames = num(e)?,
            "grid" => s.dims = e.value.parse().map_err(|err| value_err(e, err))?,
            "wpp_lead" => s.wpp_lead = num(e)?,
            "simd" => s.simd = switch(e)?,
            "workload" => w.kind = e.value.parse::<WorkloadKind>().map_err(|err| value_err(e, err))?,
            "mean_wu" => w.mean_wu = num(e)?,
            "sigma" => w.sigma = num(e)?,
            "seed" => w.seed = num(e)?,
            "filter.fraction" => w.filter.fraction = num(e)?,
            "filter.split" => {
                let parts: Vec<f64> = e
                    .value
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|err| value_err(e, err))?;
                w.filter.split = parts.try_into().map_err(|_| value_err(e, "expected three shares"))?;
            }
            "simd.vector_fraction" => w.simd.vector_fraction = num(e)?,
            "simd.vector_speedup" => w.simd.vector_speedup = num(e)?,
            _ => {
                if !apply_platform_key(&mut s.platform, e, &mut little_count)? {
                    return Err(ConfigError::UnknownKey { line: e.line, key: e.key.clone() });
                }
            }
        }
    }
    s.platform = finish_platform(s.platform, &entries, little_count)?;
    s.workload.validate()?;
    if s.frames == 0 {
        return Err(ConfigError::Invalid { key: "frames".into(), reason: "must be positive".into() });
    }
    WppGraph::with_lead(s.dims, s.wpp_lead)
        .map_err(|err| ConfigError::Invalid { key: "wpp_lead".into(), reason: err.to_string() })?;
    s.policy
        .validate(&s.platform)
        .map_err(|err| ConfigError::Invalid { key: "threads".into(), reason: err.to_string() })?;
    Ok(s)
}

pub fn load_scenario(path: &Path, base: &Scenario) -> Result<Scenario, ConfigError> {
    parse_scenario(&read(path)?, base)
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })
}

/// Loads a scenario file and builds its simulation config.
pub fn load_config(path: &Path) -> Result<SimConfig, ConfigError> {
    load_scenario(path, &Scenario::default())?.build()
}
