use std::collections::BTreeSet;

use billiard_spectrum::symbolic::{
    canonical_rotation, enumerate_configurations, enumerate_configurations_capped, is_primitive, parity,
    primitive_count, Configuration, Parity, SymbolicError,
};
use proptest::prelude::*;

/// Every word of length `k` over `r` letters, by counting in base `r`.
fn all_words(r: usize, k: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..r.pow(k as u32)).map(move |mut n| {
        let mut w = vec![0; k];
        for slot in w.iter_mut() {
            *slot = n % r;
            n /= r;
        }
        w
    })
}

fn brute_force(r: usize, k: usize) -> BTreeSet<Vec<usize>> {
    all_words(r, k)
        .filter_map(|w| Configuration::new(w).ok())
        .map(|c| c.word().to_vec())
        .collect()
}

#[test]
fn counts_match_brute_force() {
    for r in 3..=4 {
        let k_top = if r == 3 { 10 } else { 8 };
        for k in 2..=k_top {
            assert_eq!(primitive_count(r, k), brute_force(r, k).len() as u128, "r={r} k={k}");
        }
    }
}

#[test]
fn known_small_counts() {
    // Three letters: the three edges, the two orientations of the triangle.
    assert_eq!(primitive_count(3, 2), 3);
    assert_eq!(primitive_count(3, 3), 2);
    assert_eq!(primitive_count(3, 4), 3);
    assert_eq!(primitive_count(3, 5), 6);
    assert_eq!(primitive_count(3, 6), 9);
}

#[test]
fn enumeration_matches_brute_force() {
    let listed = enumerate_configurations(3, 8).unwrap();
    let expected: Vec<Vec<usize>> = (2..=8).flat_map(|k| brute_force(3, k)).collect();
    let got: Vec<Vec<usize>> = listed.iter().map(|c| c.word().to_vec()).collect();
    assert_eq!(got, expected);
    let sorted = {
        let mut s = listed.clone();
        s.sort();
        s
    };
    assert_eq!(sorted, listed);
}

#[test]
fn enumeration_rejects_bad_arguments() {
    assert_eq!(
        enumerate_configurations(2, 5).unwrap_err(),
        SymbolicError::AlphabetTooSmall(2)
    );
    assert_eq!(
        enumerate_configurations(3, 1).unwrap_err(),
        SymbolicError::LengthTooSmall(1)
    );
    assert!(matches!(
        enumerate_configurations_capped(3, 12, 100),
        Err(SymbolicError::Capacity { cap: 100, .. })
    ));
}

#[test]
fn parse_and_display() {
    let c = Configuration::parse("2-3-1").unwrap();
    assert_eq!(c.word(), &[0, 1, 2]);
    assert_eq!(c.to_string(), "1-2-3");
    assert!(Configuration::parse("1-1-2").is_err());
    assert!(Configuration::parse("1-2-1-2").is_err());
    assert!(Configuration::parse("x").is_err());
    assert!(Configuration::parse("1-2").unwrap().is_self_reverse());
    assert!(!Configuration::parse("1-2-3").unwrap().is_self_reverse());
}

#[test]
fn iterate_parity() {
    let tri = Configuration::parse("1-2-3").unwrap();
    assert_eq!(parity(&tri, 1), Parity::Odd);
    assert_eq!(parity(&tri, 2), Parity::Even);
    assert_eq!(parity(&tri, 3), Parity::Odd);
    let edge = Configuration::parse("1-2").unwrap();
    assert!((1..6).all(|n| parity(&edge, n) == Parity::Even));
}

fn admissible_word() -> impl Strategy<Value = Vec<usize>> {
    (2usize..6, prop::collection::vec(0usize..5, 2..12)).prop_filter_map("admissible", |(r, raw)| {
        let w: Vec<usize> = raw.into_iter().map(|x| x % r).collect();
        Configuration::new(w.clone()).ok().map(|_| w)
    })
}

proptest! {
    #[test]
    fn canonical_rotation_is_idempotent_and_rotation_invariant(w in admissible_word(), shift in 0usize..12) {
        let c = canonical_rotation(&w);
        prop_assert_eq!(canonical_rotation(&c), c.clone());
        let k = w.len();
        let rotated: Vec<usize> = (0..k).map(|i| w[(i + shift) % k]).collect();
        prop_assert_eq!(canonical_rotation(&rotated), c.clone());
        prop_assert!(c <= w);
    }

    #[test]
    fn reversal_is_an_involution(w in admissible_word()) {
        let c = Configuration::new(w).unwrap();
        prop_assert_eq!(c.reversed().reversed(), c.clone());
        prop_assert_eq!(c.reversed().len(), c.len());
        prop_assert_eq!(c.reversed().parity(), c.parity());
    }

    #[test]
    fn powers_are_not_primitive(w in admissible_word(), n in 2usize..4) {
        let power: Vec<usize> = w.iter().cycle().take(w.len() * n).copied().collect();
        prop_assert!(!is_primitive(&power));
        prop_assert!(Configuration::new(power).is_err());
    }

    #[test]
    fn display_round_trips(w in admissible_word()) {
        let c = Configuration::new(w).unwrap();
        prop_assert_eq!(Configuration::parse(&c.to_string()).unwrap(), c);
    }
}
