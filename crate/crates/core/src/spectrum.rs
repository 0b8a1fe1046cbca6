//! Length spectrum up to a cutoff, with iterates, and the counting functions
//! built on it.

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{GeometryError, ValidatedScene};
use crate::linearization::{poincare_map, LinearizationError, OrbitLinearization};
use crate::orbit::{solve_orbit, OrbitError, PeriodicOrbit};
use crate::symbolic::{
    canonical_rotation, is_primitive, Configuration, Parity, SymbolicError, DEFAULT_CONFIGURATION_CAP,
};

/// Relative tolerance for "equal length" and for cutoff comparisons.
pub const LENGTH_TOL: f64 = 1e-10;

/// `a <= b` up to [`LENGTH_TOL`].
pub fn le_tol(a: f64, b: f64) -> bool {
    a <= b + LENGTH_TOL * b.abs().max(1.0)
}

/// Lengths equal up to [`LENGTH_TOL`] (relative).
pub fn same_length(a: f64, b: f64) -> bool {
    (a - b).abs() <= LENGTH_TOL * a.abs().max(b.abs()).max(1.0)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectrumError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
    #[error(transparent)]
    Orbit(#[from] OrbitError),
    #[error("{config}: {source}")]
    Linearization { config: String, source: LinearizationError },
    #[error("argument {x} exceeds the certified cutoff {t_max}")]
    BeyondCutoff { x: f64, t_max: f64 },
    #[error("need at least {need} primitive entries, got {got}")]
    InsufficientData { need: usize, got: usize },
    #[error("precondition {name} violated: {detail}")]
    Precondition { name: &'static str, detail: String },
}

fn precondition(name: &'static str, detail: impl Into<String>) -> SpectrumError {
    SpectrumError::Precondition {
        name,
        detail: detail.into(),
    }
}

/// One period of the spectrum: a primitive orbit or one of its iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumEntry {
    pub config: Configuration,
    pub repetition: usize,
    pub tau: f64,
    pub tau_primitive: f64,
    pub parity: Parity,
    /// `|det(Id - P^n)|^(-1/2)`.
    pub weight: f64,
}

impl SpectrumEntry {
    pub fn is_primitive(&self) -> bool {
        self.repetition == 1
    }
}

/// A solved primitive orbit together with its linearization.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitRecord {
    pub orbit: PeriodicOrbit,
    pub linearization: OrbitLinearization,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LengthSpectrum {
    pub scene: Option<ValidatedScene>,
    pub d0: f64,
    pub t_max: f64,
    pub k_max: usize,
    /// Every primitive orbit with period `<= t_max` and every iterate within
    /// the cutoff is present.
    pub complete: bool,
    /// Sorted by `(tau, config, repetition)`.
    pub entries: Vec<SpectrumEntry>,
    /// Primitive orbits in configuration order; empty for planted spectra.
    pub orbits: Vec<OrbitRecord>,
}

/// Which primitive orbits a counter looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParityFilter {
    All,
    Even,
    Odd,
}

impl ParityFilter {
    fn accepts(self, p: Parity) -> bool {
        match self {
            ParityFilter::All => true,
            ParityFilter::Even => p == Parity::Even,
            ParityFilter::Odd => p == Parity::Odd,
        }
    }
}

/// Entry classes for [`LengthSpectrum::interval_count`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalClass {
    /// Primitive, even number of reflections.
    PrimitiveEven,
    /// Primitive, odd number of reflections.
    PrimitiveOdd,
    /// Odd iterates (`n >= 3`) of odd primitive orbits.
    OddIterated,
}

/// Which other periods an orbit must stay away from to count as isolated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IsolationReading {
    /// Every other period within the cutoff, primitive or iterated.
    Strict,
    /// Only periods with an odd number of reflections.
    #[default]
    OddOnly,
}

/// Every primitive admissible word over `r` letters whose sum of consecutive
/// gaps (a lower bound for the period) is within `t_max`.
pub fn candidate_configurations(
    vs: &ValidatedScene,
    t_max: f64,
    k_max: usize,
    cap: u128,
) -> Result<Vec<Configuration>, SpectrumError> {
    let scene = vs.scene();
    let r = scene.len();
    let gaps: Vec<Vec<f64>> = (0..r)
        .map(|i| (0..r).map(|j| if i == j { 0.0 } else { scene.gap(i, j) }).collect())
        .collect();
    let min_gap = scene.min_gap();
    let mut out = Vec::new();
    let mut word = Vec::with_capacity(k_max);
    for k in 2..=k_max {
        for first in 0..r {
            word.clear();
            word.push(first);
            let mut ctx = Dfs {
                r,
                k,
                gaps: &gaps,
                min_gap,
                t_max,
                cap,
                out: &mut out,
            };
            ctx.extend(&mut word, 0.0)?;
        }
    }
    Ok(out)
}

struct Dfs<'a> {
    r: usize,
    k: usize,
    gaps: &'a [Vec<f64>],
    min_gap: f64,
    t_max: f64,
    cap: u128,
    out: &'a mut Vec<Configuration>,
}

impl Dfs<'_> {
    fn extend(&mut self, word: &mut Vec<usize>, partial: f64) -> Result<(), SpectrumError> {
        let last = *word.last().expect("non-empty");
        if word.len() == self.k {
            let first = word[0];
            if last == first || !le_tol(partial + self.gaps[last][first], self.t_max) {
                return Ok(());
            }
            if is_primitive(word) && canonical_rotation(word) == *word {
                if self.out.len() as u128 >= self.cap {
                    return Err(SymbolicError::Capacity {
                        count: self.out.len() as u128 + 1,
                        cap: self.cap,
                    }
                    .into());
                }
                self.out.push(Configuration::new(word.clone())?);
            }
            return Ok(());
        }
        let remaining_edges = (self.k - word.len()) as f64;
        for letter in word[0]..self.r {
            if letter == last {
                continue;
            }
            let next = partial + self.gaps[last][letter];
            if !le_tol(next + remaining_edges * self.min_gap, self.t_max) {
                continue;
            }
            word.push(letter);
            self.extend(word, next)?;
            word.pop();
        }
        Ok(())
    }
}

/// Reflection count up to which words are enumerated: every segment is at
/// least the minimal gap long, so `ceil(t_max / min_gap)` covers all rays.
pub fn certified_k_max(vs: &ValidatedScene, t_max: f64) -> usize {
    let min_gap = vs.scene().min_gap();
    (t_max / min_gap).ceil().max(0.0) as usize
}

/// Every periodic ray with period `<= t_max`, iterates included.
pub fn build_spectrum(vs: &ValidatedScene, t_max: f64) -> Result<LengthSpectrum, SpectrumError> {
    build_spectrum_capped(vs, t_max, DEFAULT_CONFIGURATION_CAP)
}

pub fn build_spectrum_capped(vs: &ValidatedScene, t_max: f64, cap: u128) -> Result<LengthSpectrum, SpectrumError> {
    if !(t_max.is_finite() && t_max >= 0.0) {
        return Err(precondition("t_max", format!("{t_max} is not a finite length")));
    }
    let k_max = certified_k_max(vs, t_max);
    let configs = if k_max >= 2 {
        candidate_configurations(vs, t_max, k_max, cap)?
    } else {
        Vec::new()
    };
    let solved: Vec<Result<OrbitRecord, SpectrumError>> = configs
        .par_iter()
        .map(|c| {
            let orbit = solve_orbit(vs, c)?;
            let linearization = poincare_map(vs.scene(), &orbit);
            if linearization.is_degenerate() {
                return Err(SpectrumError::Linearization {
                    config: c.to_string(),
                    source: LinearizationError::Degenerate {
                        config: c.to_string(),
                        trace: linearization.trace,
                    },
                });
            }
            Ok(OrbitRecord { orbit, linearization })
        })
        .collect();
    let mut orbits = Vec::new();
    for r in solved {
        let rec = r?;
        if le_tol(rec.orbit.tau_primitive, t_max) {
            orbits.push(rec);
        }
    }
    Ok(LengthSpectrum::from_orbits(vs.clone(), t_max, k_max, orbits))
}

/// Entries generated by one primitive orbit.
pub fn entries_for(rec: &OrbitRecord, t_max: f64) -> Vec<SpectrumEntry> {
    let tau = rec.orbit.tau_primitive;
    let k = rec.orbit.k();
    let mut out = Vec::new();
    let mut n = 1;
    while le_tol(n as f64 * tau, t_max) {
        out.push(SpectrumEntry {
            config: rec.orbit.config.clone(),
            repetition: n,
            tau: n as f64 * tau,
            tau_primitive: tau,
            parity: Parity::from_reflections(n * k),
            weight: rec.linearization.weight(n),
        });
        n += 1;
    }
    out
}

pub fn sort_entries(entries: &mut [SpectrumEntry]) {
    entries.sort_by(|a, b| {
        a.tau
            .total_cmp(&b.tau)
            .then_with(|| a.config.cmp(&b.config))
            .then(a.repetition.cmp(&b.repetition))
    });
}

impl LengthSpectrum {
    /// Assembles a complete spectrum from solved primitive orbits.
    pub fn from_orbits(scene: ValidatedScene, t_max: f64, k_max: usize, mut orbits: Vec<OrbitRecord>) -> Self {
        orbits.sort_by(|a, b| a.orbit.config.cmp(&b.orbit.config));
        let mut entries: Vec<SpectrumEntry> = orbits.iter().flat_map(|rec| entries_for(rec, t_max)).collect();
        sort_entries(&mut entries);
        Self {
            d0: scene.constants().d0,
            scene: Some(scene),
            t_max,
            k_max,
            complete: true,
            entries,
            orbits,
        }
    }

    /// A spectrum from given entries, without a scene or orbit data. Used to
    /// plant synthetic length sets.
    pub fn from_entries(d0: f64, t_max: f64, mut entries: Vec<SpectrumEntry>) -> Self {
        sort_entries(&mut entries);
        Self {
            scene: None,
            d0,
            t_max,
            k_max: entries.iter().map(|e| e.config.len()).max().unwrap_or(0),
            complete: true,
            entries,
            orbits: Vec::new(),
        }
    }

    pub fn primitives(&self) -> impl Iterator<Item = &SpectrumEntry> {
        self.entries.iter().filter(|e| e.is_primitive())
    }

    pub fn primitive_count_total(&self) -> usize {
        self.primitives().count()
    }

    /// Restriction to periods `<= t`; `t` must not exceed the cutoff.
    pub fn truncated(&self, t: f64) -> Result<Self, SpectrumError> {
        self.check_cutoff(t)?;
        let mut out = self.clone();
        out.t_max = t;
        out.entries.retain(|e| le_tol(e.tau, t));
        out.orbits.retain(|r| le_tol(r.orbit.tau_primitive, t));
        if let Some(vs) = &self.scene {
            out.k_max = certified_k_max(vs, t);
        }
        Ok(out)
    }

    pub fn orbit(&self, config: &Configuration) -> Option<&OrbitRecord> {
        self.orbits
            .binary_search_by(|r| r.orbit.config.cmp(config))
            .ok()
            .map(|i| &self.orbits[i])
    }

    fn check_cutoff(&self, x: f64) -> Result<(), SpectrumError> {
        if le_tol(x, self.t_max) {
            Ok(())
        } else {
            Err(SpectrumError::BeyondCutoff { x, t_max: self.t_max })
        }
    }

    /// Number of primitive orbits with period `<= x`.
    pub fn count_primitive(&self, x: f64, filter: ParityFilter) -> Result<usize, SpectrumError> {
        self.check_cutoff(x)?;
        Ok(self
            .primitives()
            .filter(|e| le_tol(e.tau, x) && filter.accepts(e.parity))
            .count())
    }

    /// `(N_odd(q), N_even(q))`: odd iterates `(2j+1)`, `j >= 1`, of odd
    /// primitive orbits, and even iterates `2j`, `j >= 1`, of all primitive
    /// orbits, each counted once per repetition index.
    pub fn count_iterated(&self, q: f64) -> Result<(usize, usize), SpectrumError> {
        self.check_cutoff(q)?;
        let mut odd = 0;
        let mut even = 0;
        for e in self.primitives() {
            let mut n = 2;
            while le_tol(n as f64 * e.tau, q) {
                if n % 2 == 0 {
                    even += 1;
                } else if e.parity == Parity::Odd {
                    odd += 1;
                }
                n += 1;
            }
        }
        Ok((odd, even))
    }

    /// Entries of `class` with `q - rho < tau <= q`.
    pub fn interval_count(&self, q: f64, rho: f64, class: IntervalClass, h: f64) -> Result<usize, SpectrumError> {
        check_rho(rho, h)?;
        self.check_cutoff(q)?;
        Ok(self
            .entries
            .iter()
            .filter(|e| {
                le_tol(e.tau, q)
                    && !le_tol(e.tau, q - rho)
                    && match class {
                        IntervalClass::PrimitiveEven => e.is_primitive() && e.parity == Parity::Even,
                        IntervalClass::PrimitiveOdd => e.is_primitive() && e.parity == Parity::Odd,
                        IntervalClass::OddIterated => {
                            e.repetition >= 3 && e.repetition % 2 == 1 && e.parity == Parity::Odd
                        }
                    }
            })
            .count())
    }

    /// Pairs of distinct primitive lengths closer than `e^(-nu max)`.
    pub fn check_exp_separation(&self, nu: f64) -> Vec<SeparationViolation> {
        let prims: Vec<&SpectrumEntry> = self.primitives().collect();
        let mut out = Vec::new();
        for (i, a) in prims.iter().enumerate() {
            let reach = (-nu * a.tau).exp();
            for b in &prims[i + 1..] {
                if b.tau - a.tau >= reach {
                    break;
                }
                if same_length(a.tau, b.tau) {
                    continue;
                }
                let gap = b.tau - a.tau;
                if gap < (-nu * a.tau.max(b.tau)).exp() {
                    out.push(SeparationViolation {
                        first: a.config.clone(),
                        second: b.config.clone(),
                        tau_first: a.tau,
                        tau_second: b.tau,
                        gap,
                    });
                }
            }
        }
        out
    }

    /// Counts even primitive orbits in `(q - rho, q]` whose period is
    /// `e^(-delta max)`-isolated and compares with `c0 rho e^(hq/3) / (8q)`.
    pub fn check_isolated_even_count(
        &self,
        params: &IsolatedCountParams,
    ) -> Result<IsolatedCountReport, SpectrumError> {
        let IsolatedCountParams {
            delta,
            rho,
            c0,
            q,
            h,
            reading,
        } = *params;
        check_rho(rho, h)?;
        if !(c0 > 5.0 - h * rho / 3.0) {
            return Err(precondition(
                "c0",
                format!("c0 = {c0} must exceed 5 - h rho / 3 = {}", 5.0 - h * rho / 3.0),
            ));
        }
        if !le_tol(q, self.t_max - 1.0) {
            return Err(precondition(
                "q",
                format!("q = {q} must be at most t_max - 1 = {}", self.t_max - 1.0),
            ));
        }
        if !(delta > 0.0) {
            return Err(precondition("delta", format!("delta = {delta} must be positive")));
        }
        let mut witnesses = Vec::new();
        for e in self.primitives() {
            if !(le_tol(e.tau, q) && !le_tol(e.tau, q - rho) && e.parity == Parity::Even) {
                continue;
            }
            let isolated = self.entries.iter().all(|o| {
                if o.config == e.config && o.repetition == 1 {
                    return true;
                }
                if reading == IsolationReading::OddOnly && o.parity != Parity::Odd {
                    return true;
                }
                (e.tau - o.tau).abs() >= (-delta * e.tau.max(o.tau)).exp()
            });
            if isolated {
                witnesses.push(e.config.clone());
            }
        }
        let required = c0 * rho * (h * q / 3.0).exp() / (8.0 * q);
        Ok(IsolatedCountReport {
            count: witnesses.len(),
            required,
            satisfied: witnesses.len() as f64 >= required,
            witnesses,
        })
    }

    /// Evaluates both sides of the iterated-ray bounds at `q`.
    pub fn check_iterated_bounds(
        &self,
        q: f64,
        h: f64,
        epsilon: f64,
        b_epsilon: f64,
    ) -> Result<IteratedBoundsReport, SpectrumError> {
        let (n_odd, n_even) = self.count_iterated(q)?;
        let odd_core = 3.0 * (h * q / 3.0).exp() / (2.0 * h * q);
        let even_core = 2.0 * (h * q / 2.0).exp() / (h * q);
        let odd_lower = (1.0 - epsilon) * odd_core;
        let odd_upper = (1.0 + epsilon) * odd_core;
        let even_lower = (1.0 - epsilon) * even_core;
        let even_upper = (1.0 + epsilon) * even_core;
        let nf = |n: usize| n as f64;
        Ok(IteratedBoundsReport {
            q,
            n_odd,
            n_even,
            odd_lower,
            odd_upper,
            even_lower,
            even_upper,
            odd_lower_holds: odd_lower < nf(n_odd),
            odd_upper_holds: nf(n_odd) <= odd_upper,
            even_lower_holds: even_lower < nf(n_even),
            even_upper_holds: nf(n_even) <= even_upper,
            pre_asymptotic: q < b_epsilon,
        })
    }

    /// Least-squares slope of `log(N(x) x)` against `x` over the top half of
    /// the cutoff, with a jackknife band.
    pub fn fit_entropy(&self) -> Result<EntropyFit, SpectrumError> {
        self.fit_entropy_window(0.5 * self.t_max, self.t_max)
    }

    /// [`fit_entropy`](Self::fit_entropy) restricted to `lo <= x <= hi`.
    pub fn fit_entropy_window(&self, lo: f64, hi: f64) -> Result<EntropyFit, SpectrumError> {
        let got = self.primitive_count_total();
        if got < MIN_ENTROPY_PRIMITIVES {
            return Err(SpectrumError::InsufficientData {
                need: MIN_ENTROPY_PRIMITIVES,
                got,
            });
        }
        self.check_cutoff(hi)?;
        let pts = self.counting_points(lo, hi);
        if pts.len() < 2 * JACKKNIFE_BLOCKS {
            return Err(SpectrumError::InsufficientData {
                need: 2 * JACKKNIFE_BLOCKS,
                got: pts.len(),
            });
        }
        let (h, intercept, r_squared) = linear_fit(&pts);
        let block = pts.len().div_ceil(JACKKNIFE_BLOCKS);
        let partial: Vec<f64> = (0..JACKKNIFE_BLOCKS)
            .map(|b| {
                let kept: Vec<(f64, f64)> = pts
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i / block != b)
                    .map(|(_, p)| *p)
                    .collect();
                linear_fit(&kept).0
            })
            .collect();
        let g = JACKKNIFE_BLOCKS as f64;
        let mean = partial.iter().sum::<f64>() / g;
        let var = (g - 1.0) / g * partial.iter().map(|p| (p - mean).powi(2)).sum::<f64>();
        let half_width = 2.0 * var.sqrt();
        Ok(EntropyFit {
            h,
            intercept,
            r_squared,
            band: (h - half_width, h + half_width),
            window: (lo, hi),
            points: pts.len(),
        })
    }

    /// `(x, log(N(x) x))` at every distinct primitive length in `[lo, hi]`.
    fn counting_points(&self, lo: f64, hi: f64) -> Vec<(f64, f64)> {
        let lengths: Vec<f64> = self.primitives().map(|e| e.tau).collect();
        let mut pts = Vec::new();
        let mut i = 0;
        while i < lengths.len() {
            let mut j = i + 1;
            while j < lengths.len() && same_length(lengths[i], lengths[j]) {
                j += 1;
            }
            let x = lengths[j - 1];
            if x >= lo && le_tol(x, hi) {
                pts.push((x, (j as f64 * x).ln()));
            }
            i = j;
        }
        pts
    }

    /// `|#even - #odd| / #all` for primitive orbits with period in `(lo, hi]`.
    pub fn parity_imbalance(&self, lo: f64, hi: f64) -> Option<f64> {
        let mut even = 0usize;
        let mut odd = 0usize;
        for e in self.primitives() {
            if le_tol(e.tau, hi) && !le_tol(e.tau, lo) {
                match e.parity {
                    Parity::Even => even += 1,
                    Parity::Odd => odd += 1,
                }
            }
        }
        let total = even + odd;
        (total > 0).then(|| even.abs_diff(odd) as f64 / total as f64)
    }
}

fn check_rho(rho: f64, h: f64) -> Result<(), SpectrumError> {
    let limit = if h > 0.0 { 1f64.min(1.0 / h) } else { 1.0 };
    if rho > 0.0 && rho < limit {
        Ok(())
    } else {
        Err(precondition("rho", format!("rho = {rho} must lie in (0, {limit})")))
    }
}

pub const MIN_ENTROPY_PRIMITIVES: usize = 50;
const JACKKNIFE_BLOCKS: usize = 5;

/// Ordinary least squares `y = a x + b`; returns `(a, b, R^2)`.
fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let a = sxy / sxx;
    let b = my - a * mx;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - a * p.0 - b).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    (a, b, r2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationViolation {
    pub first: Configuration,
    pub second: Configuration,
    pub tau_first: f64,
    pub tau_second: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsolatedCountParams {
    pub delta: f64,
    pub rho: f64,
    pub c0: f64,
    pub q: f64,
    pub h: f64,
    pub reading: IsolationReading,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsolatedCountReport {
    pub count: usize,
    pub required: f64,
    pub satisfied: bool,
    pub witnesses: Vec<Configuration>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IteratedBoundsReport {
    pub q: f64,
    pub n_odd: usize,
    pub n_even: usize,
    pub odd_lower: f64,
    pub odd_upper: f64,
    pub even_lower: f64,
    pub even_upper: f64,
    pub odd_lower_holds: bool,
    pub odd_upper_holds: bool,
    pub even_lower_holds: bool,
    pub even_upper_holds: bool,
    /// `q` is below the threshold from which the bounds are claimed.
    pub pre_asymptotic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyFit {
    pub h: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub band: (f64, f64),
    pub window: (f64, f64),
    pub points: usize,
}
