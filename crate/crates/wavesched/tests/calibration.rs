use wavesched::analysis::{Metric, MeasuredTargets};
use wavesched::calibrate::calibrate;
use wavesched::config::Scenario;
use wavesched::platform::Platform;
use wavesched::policy::PolicyKind;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(1e-12)
}

#[test]
fn shipped_defaults_are_the_calibration_fixed_point() {
    let s = Scenario::default();
    let cal = calibrate(&s, &MeasuredTargets::embedded()).unwrap();
    let (got, want) = (&cal.scenario.platform, &s.platform);
    for (g, w) in got.clusters.iter().zip(&want.clusters) {
        let (g, w) = (&g.core_type, &w.core_type);
        assert!(close(g.speed_wu_per_s, w.speed_wu_per_s, 1e-9));
        assert!(close(g.active_power_w, w.active_power_w, 1e-9), "{} vs {}", g.active_power_w, w.active_power_w);
        assert!(close(g.simd_power_factor, w.simd_power_factor, 1e-9));
    }
    assert!(close(got.base_power_w, want.base_power_w, 1e-9));
    assert!(close(cal.mean_wu, s.workload.mean_wu, 1e-9));
}

#[test]
fn anchors_are_hit_exactly() {
    let targets = MeasuredTargets::embedded();
    let cal = calibrate(&Scenario::default(), &targets).unwrap();
    let want = targets.get(Metric::Fps, PolicyKind::StaticPinned, 4, false).unwrap()
        / targets.get(Metric::FpsQuote, PolicyKind::LittleOnly, 4, false).unwrap();
    assert!(close(cal.speed_ratio, want, 1e-12));
    let ratio = cal.scenario.platform.speed_ratio().unwrap();
    assert!(close(ratio, want, 1e-12));
    for name in ["fps/big-os/1", "epf/big-os/1", "epf/big-os/4"] {
        let row = cal.fit.iter().find(|r| r.name == name).unwrap();
        assert!(row.rel_error().abs() < 1e-9, "{name}: {}", row.rel_error());
    }
    // Least-squares rows stay within a loose band.
    for row in &cal.fit {
        assert!(row.rel_error().abs() < 0.10, "{}: {:+.3}", row.name, row.rel_error());
    }
}

#[test]
fn calibration_starts_from_any_reasonable_platform() {
    let mut s = Scenario::default();
    s.platform = Platform::with_counts(4, 4);
    s.platform.clusters[1].core_type.speed_wu_per_s = 300.0;
    s.workload.mean_wu = 0.5;
    let cal = calibrate(&s, &MeasuredTargets::embedded()).unwrap();
    assert!(close(cal.mean_wu, Scenario::default().workload.mean_wu, 1e-9));
    assert!(close(cal.speed_ratio, Scenario::default().platform.speed_ratio().unwrap(), 1e-12));
}

#[test]
fn homogeneous_platform_is_rejected() {
    let mut s = Scenario::default();
    s.platform = Platform::homogeneous(4, 1000.0);
    assert!(calibrate(&s, &MeasuredTargets::embedded()).is_err());
}
