//! Asymmetric machine description and its power model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlatformError {
    #[error("{key}: {reason}")]
    Invalid { key: String, reason: String },
    #[error("platform has no cores")]
    NoCores,
    #[error("a core needs at least one resident thread")]
    NoResidentThreads,
    #[error("expected {expected} core states, got {found}")]
    StateCount { expected: usize, found: usize },
}

fn invalid(key: impl Into<String>, reason: impl Into<String>) -> PlatformError {
    PlatformError::Invalid { key: key.into(), reason: reason.into() }
}

pub type CoreId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreType {
    pub name: String,
    pub freq_ghz: f64,
    /// Work units retired per second by one fully loaded core.
    pub speed_wu_per_s: f64,
    pub active_power_w: f64,
    pub idle_power_w: f64,
    /// Multiplier on `active_power_w` while running vectorized kernels.
    pub simd_power_factor: f64,
}

impl CoreType {
    pub fn validate(&self, prefix: &str) -> Result<(), PlatformError> {
        if !(self.speed_wu_per_s > 0.0) || !self.speed_wu_per_s.is_finite() {
            return Err(invalid(format!("{prefix}.speed_wu_per_s"), "must be positive"));
        }
        if !(self.idle_power_w >= 0.0) {
            return Err(invalid(format!("{prefix}.idle_power_w"), "must be non-negative"));
        }
        if !(self.active_power_w >= self.idle_power_w) {
            return Err(invalid(format!("{prefix}.active_power_w"), "must be >= idle_power_w"));
        }
        if !(self.simd_power_factor > 0.0) {
            return Err(invalid(format!("{prefix}.simd_power_factor"), "must be positive"));
        }
        if self.active_power_w * self.simd_power_factor < self.idle_power_w {
            return Err(invalid(
                format!("{prefix}.simd_power_factor"),
                "vectorized active power would fall below idle power",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub core_type: CoreType,
    pub count: usize,
}

/// A machine made of clusters of identical cores.
///
/// Cluster 0 is the fast ("big") cluster and cluster 1, when present, the
/// slow ("LITTLE") one. Core ids are assigned cluster by cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Platform {
    pub clusters: Vec<Cluster>,
    /// Board and memory power drawn regardless of core activity.
    pub base_power_w: f64,
    pub sample_interval_s: f64,
    /// Extra work charged when a CTU starts on a core already running
    /// another thread, expressed in seconds of that core's time.
    pub switch_penalty_s: f64,
}

/// Exynos-5422-like board: four fast and four slow cores.
///
/// Speeds and powers are fitted by `calibrate` against the reference
/// measurements (FPS/EPF tables and the per-cluster wattage quotes);
/// big speed is normalized to 1000 wu/s.
impl Default for Platform {
    fn default() -> Self {
        let ratio = 2.243_069_306_930_693;
        Self {
            clusters: vec![
                Cluster {
                    core_type: CoreType {
                        name: "Cortex-A15".into(),
                        freq_ghz: 2.0,
                        speed_wu_per_s: 1000.0,
                        active_power_w: 1.939_347_721_420_360_7,
                        idle_power_w: 0.10,
                        simd_power_factor: 0.995_990_175_420_420_9,
                    },
                    count: 4,
                },
                Cluster {
                    core_type: CoreType {
                        name: "Cortex-A7".into(),
                        freq_ghz: 1.4,
                        speed_wu_per_s: 1000.0 / ratio,
                        active_power_w: 0.302_834_876_079_890_96,
                        idle_power_w: 0.05,
                        simd_power_factor: 0.995_990_175_420_420_9,
                    },
                    count: 4,
                },
            ],
            base_power_w: 0.164_553_278_579_628_04,
            sample_interval_s: 0.250,
            switch_penalty_s: 0.0,
        }
    }
}

/// Power state of one core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CoreState {
    Idle,
    Active,
    ActiveSimd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoreInfo {
    pub id: CoreId,
    pub cluster: usize,
    pub name: String,
}

impl Platform {
    /// One cluster of `count` identical cores (for analytic tests).
    pub fn homogeneous(count: usize, speed_wu_per_s: f64) -> Self {
        let mut p = Self::default();
        p.clusters.truncate(1);
        p.clusters[0].count = count;
        p.clusters[0].core_type.speed_wu_per_s = speed_wu_per_s;
        p
    }

    /// Big and LITTLE clusters with the given core counts.
    pub fn with_counts(big: usize, little: usize) -> Self {
        let mut p = Self::default();
        p.clusters[0].count = big;
        p.clusters[1].count = little;
        p.clusters.retain(|c| c.count > 0);
        p
    }

    pub fn validate(&self) -> Result<(), PlatformError> {
        if self.core_count() == 0 {
            return Err(PlatformError::NoCores);
        }
        for (i, c) in self.clusters.iter().enumerate() {
            c.core_type.validate(cluster_key(i))?;
        }
        if let [big, little, ..] = self.clusters.as_slice() {
            if !(big.core_type.speed_wu_per_s > little.core_type.speed_wu_per_s) {
                return Err(invalid("speed_ratio", "big:LITTLE speed ratio must exceed 1"));
            }
        }
        if !(self.base_power_w >= 0.0) {
            return Err(invalid("base_power_w", "must be non-negative"));
        }
        if !(self.sample_interval_s > 0.0) {
            return Err(invalid("sample_interval_s", "must be positive"));
        }
        if !(self.switch_penalty_s >= 0.0) {
            return Err(invalid("switch_penalty_s", "must be non-negative"));
        }
        Ok(())
    }

    pub fn core_count(&self) -> usize {
        self.clusters.iter().map(|c| c.count).sum()
    }

    /// Cores of one cluster, in id order.
    pub fn cluster_cores(&self, cluster: usize) -> std::ops::Range<CoreId> {
        let start: usize = self.clusters.iter().take(cluster).map(|c| c.count).sum();
        let len = self.clusters.get(cluster).map_or(0, |c| c.count);
        start..start + len
    }

    pub fn big_cores(&self) -> std::ops::Range<CoreId> {
        self.cluster_cores(0)
    }

    pub fn little_cores(&self) -> std::ops::Range<CoreId> {
        self.cluster_cores(1)
    }

    pub fn cluster_of(&self, core: CoreId) -> usize {
        let mut start = 0;
        for (i, c) in self.clusters.iter().enumerate() {
            if core < start + c.count {
                return i;
            }
            start += c.count;
        }
        panic!("core {core} out of range");
    }

    pub fn core_type(&self, core: CoreId) -> &CoreType {
        &self.clusters[self.cluster_of(core)].core_type
    }

    pub fn is_big(&self, core: CoreId) -> bool {
        self.cluster_of(core) == 0
    }

    pub fn cores(&self) -> Vec<CoreInfo> {
        let mut out = Vec::with_capacity(self.core_count());
        for (ci, c) in self.clusters.iter().enumerate() {
            for k in 0..c.count {
                let label = match ci {
                    0 => "big".to_string(),
                    1 => "LITTLE".to_string(),
                    n => format!("cluster{n}"),
                };
                let suffix = if k < 26 {
                    char::from(b'A' + k as u8).to_string()
                } else {
                    k.to_string()
                };
                out.push(CoreInfo { id: out.len(), cluster: ci, name: format!("{label}.{suffix}") });
            }
        }
        out
    }

    /// big:LITTLE speed ratio, if there is a LITTLE cluster.
    pub fn speed_ratio(&self) -> Option<f64> {
        match self.clusters.as_slice() {
            [big, little, ..] => {
                Some(big.core_type.speed_wu_per_s / little.core_type.speed_wu_per_s)
            }
            _ => None,
        }
    }
}

pub(crate) fn cluster_key(index: usize) -> &'static str {
    match index {
        0 => "big",
        1 => "little",
        _ => "cluster",
    }
}

/// Per-thread speed on a core shared fairly by `resident_threads` threads.
pub fn effective_speed(core: &CoreType, resident_threads: usize) -> Result<f64, PlatformError> {
    if resident_threads == 0 {
        return Err(PlatformError::NoResidentThreads);
    }
    Ok(core.speed_wu_per_s / resident_threads as f64)
}

/// Total board power for one state per core.
pub fn instantaneous_power(platform: &Platform, states: &[CoreState]) -> Result<f64, PlatformError> {
    let n = platform.core_count();
    if states.len() != n {
        return Err(PlatformError::StateCount { expected: n, found: states.len() });
    }
    let mut power = platform.base_power_w;
    let mut core = 0;
    for cluster in &platform.clusters {
        let t = &cluster.core_type;
        for state in &states[core..core + cluster.count] {
            power += match state {
                CoreState::Idle => t.idle_power_w,
                CoreState::Active => t.active_power_w,
                CoreState::ActiveSimd => t.active_power_w * t.simd_power_factor,
            };
        }
        core += cluster.count;
    }
    Ok(power)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// The reference parameter set used by the power examples.
    fn reference() -> Platform {
        let mut p = Platform::default();
        p.base_power_w = 1.0;
        let big = &mut p.clusters[0].core_type;
        big.active_power_w = 1.10;
        big.idle_power_w = 0.10;
        big.simd_power_factor = 0.93;
        let little = &mut p.clusters[1].core_type;
        little.active_power_w = 0.28;
        little.idle_power_w = 0.05;
        p
    }

    #[test]
    fn speed_examples() {
        let p = Platform::default();
        let big = &p.clusters[0].core_type;
        assert_eq!(effective_speed(big, 1).unwrap(), 1000.0);
        assert_eq!(effective_speed(big, 2).unwrap(), 500.0);
        assert_eq!(effective_speed(big, 0), Err(PlatformError::NoResidentThreads));
        let mut little = p.clusters[1].core_type.clone();
        little.speed_wu_per_s = 1000.0 / 2.24;
        assert!((effective_speed(&little, 1).unwrap() - 446.4).abs() < 0.05);
    }

    #[test]
    fn power_examples() {
        use CoreState::*;
        let p = reference();
        let all_idle = instantaneous_power(&p, &[Idle; 8]).unwrap();
        assert!((all_idle - 1.6).abs() < 1e-12);

        let big_busy = [Active, Active, Active, Active, Idle, Idle, Idle, Idle];
        let w = instantaneous_power(&p, &big_busy).unwrap();
        assert!((w - 5.6).abs() < 1e-12);
        assert!((w - 5.5).abs() / 5.5 < 0.10);

        let little_busy = [Idle, Idle, Idle, Idle, Active, Active, Active, Active];
        let w = instantaneous_power(&p, &little_busy).unwrap();
        let cluster_term = 4.0 * 0.28;
        assert!((w - (1.0 + 0.4 + cluster_term)).abs() < 1e-12);
        assert!((cluster_term - 1.5).abs() / 1.5 < 0.30);

        assert!(matches!(
            instantaneous_power(&p, &[Idle; 7]),
            Err(PlatformError::StateCount { expected: 8, found: 7 })
        ));
    }

    #[test]
    fn simd_state_scales_active_power() {
        let p = reference();
        let mut states = [CoreState::Idle; 8];
        states[0] = CoreState::ActiveSimd;
        let w = instantaneous_power(&p, &states).unwrap();
        assert!((w - (1.6 - 0.10 + 1.10 * 0.93)).abs() < 1e-12);
    }

    #[test]
    fn validation_names_keys() {
        let mut p = Platform::default();
        p.clusters[1].core_type.speed_wu_per_s = 2000.0;
        let err = p.validate().unwrap_err();
        assert!(err.to_string().starts_with("speed_ratio"), "{err}");

        let mut p = Platform::default();
        p.clusters[0].core_type.active_power_w = 0.01;
        assert!(p.validate().unwrap_err().to_string().starts_with("big.active_power_w"));
        assert!(Platform::with_counts(0, 0).validate().is_err());
    }

    #[test]
    fn core_layout() {
        let p = Platform::default();
        let names: Vec<_> = p.cores().into_iter().map(|c| c.name).collect();
        assert_eq!(names[0], "big.A");
        assert_eq!(names[4], "LITTLE.A");
        assert_eq!(names[7], "LITTLE.D");
        assert_eq!(p.big_cores(), 0..4);
        assert_eq!(p.little_cores(), 4..8);
        assert!(p.is_big(3) && !p.is_big(4));
        assert_eq!(Platform::homogeneous(17, 1.0).core_count(), 17);
        assert_eq!(Platform::homogeneous(3, 1.0).little_cores(), 3..3);
    }

    fn state() -> impl Strategy<Value = CoreState> {
        prop_oneof![Just(CoreState::Idle), Just(CoreState::Active), Just(CoreState::ActiveSimd)]
    }

    proptest! {
        #[test]
        fn activating_a_core_never_lowers_power(
            states in proptest::collection::vec(state(), 8),
            core in 0usize..8,
            simd in any::<bool>(),
        ) {
            let p = Platform::default();
            let mut before = states.clone();
            before[core] = CoreState::Idle;
            let mut after = states;
            after[core] = if simd { CoreState::ActiveSimd } else { CoreState::Active };
            let lo = instantaneous_power(&p, &before).unwrap();
            let hi = instantaneous_power(&p, &after).unwrap();
            prop_assert!(hi >= lo);
        }

        #[test]
        fn constant_state_energy_is_power_times_time(
            states in proptest::collection::vec(state(), 8),
            secs in 0.0f64..100.0,
        ) {
            let p = Platform::default();
            let w = instantaneous_power(&p, &states).unwrap();
            let energy = crate::analysis::integrate_constant(&p, &states, secs).unwrap();
            prop_assert_eq!(energy, w * secs);
        }
    }
}
