//! Cyclic words over the obstacle alphabet.
//!
//! A periodic ray is coded by the cyclic sequence of obstacles it hits. Words
//! are stored 0-based in their least rotation; the textual form is 1-based
//! and dash-joined (`1-2-1-3`), which is also the key used in every CSV file.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CONFIGURATION_CAP: u128 = 5_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SymbolicError {
    #[error("alphabet needs at least 3 letters, got {0}")]
    AlphabetTooSmall(usize),
    #[error("maximal word length must be at least 2, got {0}")]
    LengthTooSmall(usize),
    #[error("word {0:?} is not cyclically admissible")]
    NotAdmissible(Vec<usize>),
    #[error("word {0:?} is a power of a shorter word")]
    NotPrimitive(Vec<usize>),
    #[error("{count} configurations requested, cap is {cap}")]
    Capacity { count: u128, cap: u128 },
    #[error("cannot parse configuration token {0:?}")]
    Parse(String),
}

/// Reflection parity of a (possibly iterated) periodic ray.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn from_reflections(m: usize) -> Self {
        if m.is_multiple_of(2) {
            Parity::Even
        } else {
            Parity::Odd
        }
    }

    /// `(-1)^m`.
    pub fn sign(self) -> f64 {
        match self {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Parity::Even => 1,
            Parity::Odd => -1,
        }
    }

    pub fn from_i8(v: i8) -> Option<Self> {
        match v {
            1 => Some(Parity::Even),
            -1 => Some(Parity::Odd),
            _ => None,
        }
    }
}

/// A primitive, cyclically admissible word in canonical (least) rotation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Configuration {
    word: Vec<usize>,
}

impl Configuration {
    /// Validates and canonicalizes a 0-based word.
    pub fn new(word: Vec<usize>) -> Result<Self, SymbolicError> {
        if !is_cyclically_admissible(&word) {
            return Err(SymbolicError::NotAdmissible(word));
        }
        if !is_primitive(&word) {
            return Err(SymbolicError::NotPrimitive(word));
        }
        Ok(Self {
            word: canonical_rotation(&word),
        })
    }

    /// Parses the 1-based dash-joined form, e.g. `"1-2-3"`.
    pub fn parse(token: &str) -> Result<Self, SymbolicError> {
        let word = parse_word(token)?;
        Self::new(word)
    }

    pub fn word(&self) -> &[usize] {
        &self.word
    }

    /// Number of reflections per period.
    pub fn len(&self) -> usize {
        self.word.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word.is_empty()
    }

    pub fn parity(&self) -> Parity {
        Parity::from_reflections(self.word.len())
    }

    /// The same ray traversed backwards.
    pub fn reversed(&self) -> Self {
        let mut w = self.word.clone();
        w.reverse();
        Self {
            word: canonical_rotation(&w),
        }
    }

    /// True when the reversed ray is the same oriented ray.
    pub fn is_self_reverse(&self) -> bool {
        self.reversed() == *self
    }

    /// Largest letter + 1.
    pub fn alphabet_bound(&self) -> usize {
        self.word.iter().copied().max().map_or(0, |m| m + 1)
    }
}

impl PartialOrd for Configuration {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Shorter words first, then lexicographic.
impl Ord for Configuration {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.word
            .len()
            .cmp(&other.word.len())
            .then_with(|| self.word.cmp(&other.word))
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, letter) in self.word.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{}", letter + 1)?;
        }
        Ok(())
    }
}

impl FromStr for Configuration {
    type Err = SymbolicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

/// Parses a 1-based dash-joined token into a raw 0-based word.
pub fn parse_word(token: &str) -> Result<Vec<usize>, SymbolicError> {
    token
        .trim()
        .split('-')
        .map(|t| match t.parse::<usize>() {
            Ok(v) if v >= 1 => Ok(v - 1),
            _ => Err(SymbolicError::Parse(token.to_string())),
        })
        .collect()
}

/// Consecutive letters differ, cyclically, and the word has length >= 2.
pub fn is_cyclically_admissible(word: &[usize]) -> bool {
    let k = word.len();
    k >= 2 && (0..k).all(|i| word[i] != word[(i + 1) % k])
}

/// True iff the word is not a power of a strictly shorter word.
pub fn is_primitive(word: &[usize]) -> bool {
    let k = word.len();
    (1..k)
        .filter(|p| k.is_multiple_of(*p))
        .all(|p| (0..k).any(|i| word[i] != word[(i + p) % k]))
}

/// Least rotation of the word.
pub fn canonical_rotation(word: &[usize]) -> Vec<usize> {
    let k = word.len();
    let best = (0..k)
        .min_by(|&a, &b| (0..k).map(|i| word[(a + i) % k]).cmp((0..k).map(|i| word[(b + i) % k])))
        .unwrap_or(0);
    (0..k).map(|i| word[(best + i) % k]).collect()
}

/// Reflection parity `(-1)^(n k)` of the `n`-fold iterate.
pub fn parity(config: &Configuration, repetition: usize) -> Parity {
    Parity::from_reflections(repetition * config.len())
}

fn mobius(mut n: usize) -> i128 {
    let mut result = 1i128;
    let mut p = 2;
    while p * p <= n {
        if n.is_multiple_of(p) {
            n /= p;
            if n.is_multiple_of(p) {
                return 0;
            }
            result = -result;
        }
        p += 1;
    }
    if n > 1 {
        result = -result;
    }
    result
}

/// Number of primitive admissible cyclic words of length `k` over `r`
/// letters (each counted once up to rotation).
pub fn primitive_count(r: usize, k: usize) -> u128 {
    if k < 2 || r < 2 {
        return 0;
    }
    // tr(A^n) for A = J - I of size r.
    let trace = |n: usize| -> i128 {
        let base = (r as i128 - 1).pow(n as u32);
        let alt = if n.is_multiple_of(2) {
            r as i128 - 1
        } else {
            -(r as i128 - 1)
        };
        base + alt
    };
    let total: i128 = (1..=k)
        .filter(|d| k.is_multiple_of(*d))
        .map(|d| mobius(d) * trace(k / d))
        .sum();
    (total / k as i128) as u128
}

/// All primitive admissible words of length `2..=k_max` over `r` letters,
/// ordered by length and then lexicographically.
pub fn enumerate_configurations(r: usize, k_max: usize) -> Result<Vec<Configuration>, SymbolicError> {
    enumerate_configurations_capped(r, k_max, DEFAULT_CONFIGURATION_CAP)
}

pub fn enumerate_configurations_capped(r: usize, k_max: usize, cap: u128) -> Result<Vec<Configuration>, SymbolicError> {
    if r < 3 {
        return Err(SymbolicError::AlphabetTooSmall(r));
    }
    if k_max < 2 {
        return Err(SymbolicError::LengthTooSmall(k_max));
    }
    let mut count: u128 = 0;
    for k in 2..=k_max {
        count = count.saturating_add(primitive_count(r, k));
        if count > cap {
            return Err(SymbolicError::Capacity { count, cap });
        }
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut word = Vec::with_capacity(k_max);
    for k in 2..=k_max {
        for first in 0..r {
            word.clear();
            word.push(first);
            extend_words(r, k, &mut word, &mut out);
        }
    }
    Ok(out)
}

// Least rotations start with their smallest letter, so every later letter
// is >= the first one.
fn extend_words(r: usize, k: usize, word: &mut Vec<usize>, out: &mut Vec<Configuration>) {
    if word.len() == k {
        if word[k - 1] != word[0] && is_primitive(word) && canonical_rotation(word) == *word {
            out.push(Configuration { word: word.clone() });
        }
        return;
    }
    let first = word[0];
    let last = *word.last().expect("non-empty");
    for letter in first..r {
        if letter != last {
            word.push(letter);
            extend_words(r, k, word, out);
            word.pop();
        }
    }
}
