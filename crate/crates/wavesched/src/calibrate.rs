//! Fits platform and workload parameters to the reference measurements.
//!
//! Energy of a run is linear in the power parameters:
//!
//! ```text
//! E = B0 * T + db * busy_big + dl * busy_little
//! ```
//!
//! where `B0` is the board power with every core idle and `db`, `dl` are the
//! active-minus-idle powers of one core. Only these three combinations are
//! identifiable from throughput/energy data, so per-core idle powers are
//! taken from the input platform and the base power absorbs the rest.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{Metric, MeasuredTargets, SimReport};
use crate::config::{ConfigError, Scenario};
use crate::engine::{run_sweep, SimError, SweepKey};
use crate::policy::{PolicyKind, PolicySpec};

#[derive(Debug, Error)]
pub enum CalibrateError {
    #[error("missing target {0}")]
    MissingTarget(String),
    #[error("calibration run {key:?} failed: {source}")]
    Run { key: SweepKey, source: SimError },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("platform needs a big and a LITTLE cluster")]
    NotAsymmetric,
    #[error("{0}")]
    Degenerate(String),
}

/// One fitted quantity next to its target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub name: String,
    pub target: f64,
    pub fitted: f64,
}

impl FitRow {
    pub fn rel_error(&self) -> f64 {
        self.fitted / self.target - 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub speed_ratio: f64,
    pub mean_wu: f64,
    /// Board power with every core idle.
    pub idle_board_w: f64,
    pub big_dynamic_w: f64,
    pub little_dynamic_w: f64,
    pub simd_power_factor: f64,
    /// Input scenario with the fitted values applied.
    pub scenario: Scenario,
    pub fit: Vec<FitRow>,
}

/// Per-frame time and busy seconds of one run.
#[derive(Debug, Clone, Copy)]
struct Usage {
    t: f64,
    big: f64,
    little: f64,
}

impl Usage {
    fn of(r: &SimReport, big_cores: usize) -> Self {
        let f = r.frames as f64;
        let big: f64 = r.core_busy_s[..big_cores].iter().sum();
        let little: f64 = r.core_busy_s[big_cores..].iter().sum();
        Self { t: r.wall_time_s / f, big: big / f, little: little / f }
    }
}

fn key(policy: PolicyKind, threads: usize, simd: bool) -> SweepKey {
    SweepKey { policy, threads, simd }
}

fn target(t: &MeasuredTargets, m: Metric, p: PolicyKind, n: usize, simd: bool) -> Result<f64, CalibrateError> {
    t.get(m, p, n, simd).ok_or_else(|| {
        CalibrateError::MissingTarget(format!("{}/{}/{}/simd-{}", m.name(), p, n, if simd { "on" } else { "off" }))
    })
}

fn sweep(
    scenario: &Scenario,
    keys: &[SweepKey],
) -> Result<BTreeMap<SweepKey, SimReport>, CalibrateError> {
    let base = scenario.build()?;
    let mut out = BTreeMap::new();
    // run_sweep takes a product; group by (policy, simd).
    let mut groups: BTreeMap<(PolicyKind, bool), Vec<usize>> = BTreeMap::new();
    for k in keys {
        groups.entry((k.policy, k.simd)).or_default().push(k.threads);
    }
    for ((policy, simd), threads) in groups {
        for cell in run_sweep(&base, &threads, &[policy], &[simd])? {
            let report = cell.result.map_err(|source| CalibrateError::Run { key: cell.key, source })?;
            out.insert(cell.key, report);
        }
    }
    Ok(out)
}

/// Calibrates `scenario` (its policy fields are ignored) against `targets`.
pub fn calibrate(scenario: &Scenario, targets: &MeasuredTargets) -> Result<Calibration, CalibrateError> {
    use PolicyKind::*;
    let mut s = scenario.clone();
    if s.platform.clusters.len() != 2 {
        return Err(CalibrateError::NotAsymmetric);
    }
    s.policy = PolicySpec { kind: BigOnlyOs, threads: 1, ..scenario.policy.clone() };
    s.simd = false;

    // Speed ratio from the 4-thread static run against the LITTLE-only quote.
    let ratio = target(targets, Metric::Fps, StaticPinned, 4, false)?
        / target(targets, Metric::FpsQuote, LittleOnly, 4, false)?;
    let big_speed = s.platform.clusters[0].core_type.speed_wu_per_s;
    s.platform.clusters[1].core_type.speed_wu_per_s = big_speed / ratio;

    // Serial wall time is linear in the mean CTU cost.
    let fps1 = target(targets, Metric::Fps, BigOnlyOs, 1, false)?;
    let serial = sweep(&s, &[key(BigOnlyOs, 1, false)])?;
    let fps0 = serial[&key(BigOnlyOs, 1, false)].fps;
    s.workload.mean_wu *= fps0 / fps1;

    let mut keys = vec![key(BigOnlyOs, 1, false), key(BigOnlyOs, 4, false), key(LittleOnly, 4, false)];
    for n in 5..=8 {
        keys.push(key(StaticPinned, n, false));
    }
    for n in 1..=8 {
        keys.push(key(CriticalityAware, n, false));
        keys.push(key(CriticalityAware, n, true));
    }
    let reports = sweep(&s, &keys)?;
    let nb = s.platform.clusters[0].count;
    let usage = |k: SweepKey| Usage::of(&reports[&k], nb);

    // Board idle power and big dynamic power: exact from the 1- and
    // 4-thread big-only energies.
    let u1 = usage(key(BigOnlyOs, 1, false));
    let u4 = usage(key(BigOnlyOs, 4, false));
    let e1 = target(targets, Metric::Epf, BigOnlyOs, 1, false)?;
    let e4 = target(targets, Metric::Epf, BigOnlyOs, 4, false)?;
    let det = u1.t * u4.big - u4.t * u1.big;
    if det.abs() < 1e-15 {
        return Err(CalibrateError::Degenerate("1- and 4-thread runs have the same shape".into()));
    }
    let b0 = (e1 * u4.big - e4 * u1.big) / det;
    let db = (u1.t * e4 - u4.t * e1) / det;

    // LITTLE dynamic power: least squares on relative residuals over the
    // LITTLE-only power quote and the mixed-cluster energy rows.
    let mut rows: Vec<(String, f64, f64, f64)> = Vec::new(); // name, target, a, b: fitted = a + dl*b
    let ul = usage(key(LittleOnly, 4, false));
    rows.push((
        "power_quote/little/4".into(),
        target(targets, Metric::PowerQuote, LittleOnly, 4, false)?,
        b0 + db * ul.big / ul.t,
        ul.little / ul.t,
    ));
    for policy in [StaticPinned, CriticalityAware] {
        for n in 5..=8 {
            let u = usage(key(policy, n, false));
            rows.push((
                format!("epf/{policy}/{n}"),
                target(targets, Metric::Epf, policy, n, false)?,
                b0 * u.t + db * u.big,
                u.little,
            ));
        }
    }
    let (num, den) = rows.iter().fold((0.0, 0.0), |(num, den), (_, y, a, b)| {
        (num + (1.0 - a / y) * (b / y), den + (b / y) * (b / y))
    });
    let dl = (num / den).max(0.0);

    let big = s.platform.clusters[0].core_type.clone();
    let little = s.platform.clusters[1].core_type.clone();
    let nl = s.platform.clusters[1].count;
    let base = b0 - nb as f64 * big.idle_power_w - nl as f64 * little.idle_power_w;
    if base < 0.0 {
        return Err(CalibrateError::Degenerate(format!(
            "idle board power {b0:.4} W is below the summed core idle powers"
        )));
    }
    let ab = big.idle_power_w + db;
    let al = little.idle_power_w + dl;

    // SIMD power factor: least squares on the on/off energy ratios.
    let (mut num, mut den) = (0.0, 0.0);
    let mut simd_rows = Vec::new();
    for n in 1..=8 {
        let off = usage(key(CriticalityAware, n, false));
        let on = usage(key(CriticalityAware, n, true));
        let e_off = b0 * off.t + db * off.big + dl * off.little;
        let c0 = b0 * on.t - big.idle_power_w * on.big - little.idle_power_w * on.little;
        let c1 = ab * on.big + al * on.little;
        let r = target(targets, Metric::Epf, CriticalityAware, n, true)?
            / target(targets, Metric::Epf, CriticalityAware, n, false)?;
        num += (r - c0 / e_off) * (c1 / e_off);
        den += (c1 / e_off) * (c1 / e_off);
        simd_rows.push((n, r, c0, c1, e_off));
    }
    let f = num / den;

    let p = &mut s.platform;
    p.base_power_w = base;
    p.clusters[0].core_type.active_power_w = ab;
    p.clusters[1].core_type.active_power_w = al;
    p.clusters[0].core_type.simd_power_factor = f;
    p.clusters[1].core_type.simd_power_factor = f;
    p.validate().map_err(|e| CalibrateError::Degenerate(e.to_string()))?;

    let mut fit = vec![
        FitRow { name: "fps/big-os/1".into(), target: fps1, fitted: reports[&key(BigOnlyOs, 1, false)].fps },
        FitRow { name: "epf/big-os/1".into(), target: e1, fitted: b0 * u1.t + db * u1.big },
        FitRow { name: "epf/big-os/4".into(), target: e4, fitted: b0 * u4.t + db * u4.big },
    ];
    fit.extend(rows.into_iter().map(|(name, y, a, b)| FitRow { name, target: y, fitted: a + dl * b }));
    fit.extend(simd_rows.into_iter().map(|(n, r, c0, c1, e_off)| FitRow {
        name: format!("epf_ratio/affinity/{n}/simd"),
        target: r,
        fitted: (c0 + f * c1) / e_off,
    }));
    s.policy = scenario.policy.clone();
    s.simd = scenario.simd;
    Ok(Calibration {
        speed_ratio: ratio,
        mean_wu: s.workload.mean_wu,
        idle_board_w: b0,
        big_dynamic_w: db,
        little_dynamic_w: dl,
        simd_power_factor: f,
        scenario: s,
        fit,
    })
}
