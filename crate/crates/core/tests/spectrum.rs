mod common;

use approx::assert_abs_diff_eq;
use billiard_spectrum::spectrum::{
    build_spectrum, certified_k_max, IsolatedCountParams, IsolationReading, LengthSpectrum, ParityFilter, SpectrumError,
};
use billiard_spectrum::symbolic::{enumerate_configurations, Configuration};
use common::planted_entry;
use proptest::prelude::*;
use std::sync::OnceLock;

fn s3_spectrum() -> &'static LengthSpectrum {
    static SPEC: OnceLock<LengthSpectrum> = OnceLock::new();
    SPEC.get_or_init(|| build_spectrum(&common::s3(), 30.0).unwrap())
}

#[test]
fn reference_counts() {
    let spec = s3_spectrum();
    for (x, n) in [(7.9, 0), (8.0, 3), (14.0, 5), (20.0, 8), (25.0, 20), (30.0, 41)] {
        assert_eq!(spec.count_primitive(x, ParityFilter::All).unwrap(), n, "x={x}");
    }
    assert_eq!(spec.count_primitive(30.0, ParityFilter::Even).unwrap(), 15);
    assert_eq!(spec.count_primitive(30.0, ParityFilter::Odd).unwrap(), 26);
    assert!(spec.complete);
    assert_eq!(spec.k_max, certified_k_max(&common::s3(), 30.0));
    assert!(matches!(
        spec.count_primitive(31.0, ParityFilter::All),
        Err(SpectrumError::BeyondCutoff { .. })
    ));
}

#[test]
fn iterates_are_listed_with_their_weights() {
    let spec = s3_spectrum();
    let edge = Configuration::parse("1-2").unwrap();
    let reps: Vec<_> = spec.entries.iter().filter(|e| e.config == edge).collect();
    assert_eq!(reps.len(), 3);
    for (n, e) in reps.iter().enumerate() {
        assert_eq!(e.repetition, n + 1);
        assert_abs_diff_eq!(e.tau, 8.0 * (n + 1) as f64, epsilon = 1e-9);
        assert_abs_diff_eq!(e.tau_primitive, 8.0, epsilon = 1e-9);
    }
    // |det(Id - P^2)| = |2 - tr(P^2)| with tr(P^2) = 98^2 - 2.
    assert_abs_diff_eq!(reps[1].weight, 1.0 / (98f64 * 98.0 - 4.0).sqrt(), epsilon = 1e-15);
    assert_eq!(spec.count_iterated(30.0).unwrap(), (0, 5));
}

#[test]
fn truncation_matches_a_smaller_build() {
    let small = build_spectrum(&common::s3(), 20.0).unwrap();
    let cut = s3_spectrum().truncated(20.0).unwrap();
    assert_eq!(small.entries.len(), cut.entries.len());
    for (a, b) in small.entries.iter().zip(&cut.entries) {
        assert_eq!(a.config, b.config);
        assert_eq!(a.repetition, b.repetition);
        assert_abs_diff_eq!(a.tau, b.tau, epsilon = 1e-12);
    }
}

#[test]
fn relabelled_words_have_equal_lengths() {
    let spec = s3_spectrum();
    let perms = [[0, 1, 2], [1, 2, 0], [2, 0, 1], [0, 2, 1], [2, 1, 0], [1, 0, 2]];
    for rec in &spec.orbits {
        for p in perms {
            let word: Vec<usize> = rec.orbit.config.word().iter().map(|&l| p[l]).collect();
            let image = spec.orbit(&Configuration::new(word).unwrap()).unwrap();
            assert_abs_diff_eq!(image.orbit.tau_primitive, rec.orbit.tau_primitive, epsilon = 1e-9);
        }
    }
    assert!(spec.check_exp_separation(0.5).is_empty());
}

#[test]
fn iterated_counts_stay_below_primitive_counts() {
    let spec = s3_spectrum();
    let mut q = 8.0;
    while q <= 30.0 {
        let prim = spec.count_primitive(q, ParityFilter::All).unwrap();
        if prim >= 10 {
            let (odd, even) = spec.count_iterated(q).unwrap();
            assert!(odd + even < prim, "q={q}");
        }
        q += 0.25;
    }
}

/// Lengths with `n x_n = e^(h x_n)` exactly, so `log(N(x) x) = h x`.
fn planted_exponential(h: f64, n: usize) -> LengthSpectrum {
    let words = enumerate_configurations(4, 6).unwrap();
    let entries = (1..=n)
        .map(|j| {
            let mut x = 10.0;
            for _ in 0..200 {
                x = (j as f64 * x).ln() / h;
            }
            let w = words[j - 1].to_string();
            planted_entry(&w, x, 1.0)
        })
        .collect();
    LengthSpectrum::from_entries(1.0, 200.0, entries)
}

#[test]
fn entropy_fit_recovers_planted_rate() {
    let spec = planted_exponential(0.5, 120);
    let top = spec.entries.last().unwrap().tau;
    let fit = spec.fit_entropy_window(0.5 * top, top).unwrap();
    assert_abs_diff_eq!(fit.h, 0.5, epsilon = 1e-9);
    assert!(fit.r_squared > 1.0 - 1e-12);
    assert!(fit.band.0 <= 0.5 && 0.5 <= fit.band.1);
    let few = planted_exponential(0.5, 20);
    assert!(matches!(
        few.fit_entropy(),
        Err(SpectrumError::InsufficientData { need: 50, got: 20 })
    ));
}

#[test]
fn exponential_separation_flags_close_lengths() {
    let spec = LengthSpectrum::from_entries(
        2.0,
        20.0,
        vec![
            planted_entry("1-2", 10.0, 0.1),
            planted_entry("1-3", 10.0 + 1e-4, 0.1),
            planted_entry("2-3", 12.0, 0.1),
        ],
    );
    let v = spec.check_exp_separation(0.5);
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].first.to_string(), "1-2");
    assert!(spec.check_exp_separation(2.0).is_empty());
}

#[test]
fn isolation_readings_differ_on_even_neighbours() {
    let spec = LengthSpectrum::from_entries(
        2.0,
        20.0,
        vec![
            planted_entry("1-2", 10.0, 0.1),
            planted_entry("1-3", 10.0 + 1e-6, 0.1),
            planted_entry("1-2-3", 14.0, 0.1),
            planted_entry("1-4", 14.0 + 1e-6, 0.1),
        ],
    );
    let params = |q: f64, reading| IsolatedCountParams {
        delta: 0.1,
        rho: 0.5,
        c0: 5.0,
        q,
        h: 0.5,
        reading,
    };
    let strict = spec
        .check_isolated_even_count(&params(10.2, IsolationReading::Strict))
        .unwrap();
    assert_eq!(strict.count, 0);
    let odd_only = spec
        .check_isolated_even_count(&params(10.2, IsolationReading::OddOnly))
        .unwrap();
    assert_eq!(odd_only.count, 2);
    // An odd period next to an even one blocks it under either reading.
    let near_odd = spec
        .check_isolated_even_count(&params(14.2, IsolationReading::OddOnly))
        .unwrap();
    assert_eq!(near_odd.count, 0);
    assert!(spec
        .check_isolated_even_count(&params(19.5, IsolationReading::Strict))
        .is_err());
}

#[test]
fn iterated_bounds_use_the_closed_forms() {
    let spec = s3_spectrum();
    let (h, q, eps) = (0.4, 24.0, 0.1);
    let r = spec.check_iterated_bounds(q, h, eps, 32.0).unwrap();
    let odd_core = 3.0 * (h * q / 3.0).exp() / (2.0 * h * q);
    let even_core = 2.0 * (h * q / 2.0).exp() / (h * q);
    assert_abs_diff_eq!(r.odd_upper, 1.1 * odd_core, epsilon = 1e-12);
    assert_abs_diff_eq!(r.even_lower, 0.9 * even_core, epsilon = 1e-12);
    assert_eq!((r.n_odd, r.n_even), spec.count_iterated(q).unwrap());
    assert!(r.pre_asymptotic);
}

#[test]
fn parity_imbalance_on_planted_windows() {
    let spec = LengthSpectrum::from_entries(
        2.0,
        20.0,
        vec![
            planted_entry("1-2", 9.0, 0.1),
            planted_entry("1-3", 9.5, 0.1),
            planted_entry("1-2-3", 11.0, 0.1),
            planted_entry("1-3-2", 12.0, 0.1),
        ],
    );
    assert_abs_diff_eq!(spec.parity_imbalance(0.0, 10.0).unwrap(), 1.0);
    assert_abs_diff_eq!(spec.parity_imbalance(0.0, 20.0).unwrap(), 0.0);
    assert!(spec.parity_imbalance(15.0, 20.0).is_none());
}

proptest! {
    #[test]
    fn counting_is_monotone(a in 8.0f64..30.0, b in 8.0f64..30.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let spec = s3_spectrum();
        for f in [ParityFilter::All, ParityFilter::Even, ParityFilter::Odd] {
            prop_assert!(spec.count_primitive(lo, f).unwrap() <= spec.count_primitive(hi, f).unwrap());
        }
        let even = spec.count_primitive(hi, ParityFilter::Even).unwrap();
        let odd = spec.count_primitive(hi, ParityFilter::Odd).unwrap();
        prop_assert_eq!(even + odd, spec.count_primitive(hi, ParityFilter::All).unwrap());
        let (o1, e1) = spec.count_iterated(lo).unwrap();
        let (o2, e2) = spec.count_iterated(hi).unwrap();
        prop_assert!(o1 <= o2 && e1 <= e2);
    }
}
