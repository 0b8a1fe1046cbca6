mod common;

use billiard_spectrum::spectrum::build_spectrum;
use common::{primitive_lengths, s3, shooting_sweep};

#[test]
fn sweep_finds_nothing_missing_on_reference_scene() {
    let vs = s3();
    let spec = build_spectrum(&vs, 14.0).unwrap();
    let built = primitive_lengths(&spec.entries);
    let swept = shooting_sweep(&vs, 14.0, 360);
    for (config, tau) in &swept {
        let Some(&b) = built.get(config) else {
            panic!("{config} (period {tau}) found by shooting but missing from the spectrum");
        };
        assert!((b - tau).abs() < 1e-8, "{config}: {b} vs {tau}");
    }
    assert_eq!(swept.len(), 5);
    assert_eq!(built.len(), 5);
}

#[test]
fn sweep_agrees_on_four_disks() {
    let vs = common::rhombus();
    let t = 16.0;
    let spec = build_spectrum(&vs, t).unwrap();
    let built = primitive_lengths(&spec.entries);
    let swept = shooting_sweep(&vs, t, 180);
    for (config, tau) in &swept {
        let b = built.get(config).unwrap_or_else(|| panic!("{config} ({tau}) missing"));
        assert!((b - tau).abs() < 1e-8);
    }
    assert_eq!(swept.len(), built.len(), "{swept:?} vs {built:?}");
    assert!(built.len() >= 10);
}
