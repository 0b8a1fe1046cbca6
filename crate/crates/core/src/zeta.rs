//! Bump-window pairings with the signed period distribution, lower-bound
//! window search, and truncated Dirichlet series.
//!
//! The distribution is purely atomic, `Σ (-1)^m τ♯ w δ(t - τ)`, so every
//! pairing is an exact finite sum over the spectrum entries inside the
//! window support.

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::spectrum::{le_tol, IsolationReading, LengthSpectrum, SpectrumEntry};
use crate::symbolic::{Configuration, Parity};

/// Windows narrower than this are rejected.
pub const MIN_WINDOW_WIDTH: f64 = 1e-300;
/// Largest exponent `δ ℓ` a window may use.
pub const MAX_WINDOW_EXPONENT: f64 = 500.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ZetaError {
    #[error("window support reaches {upper}, beyond the certified cutoff {t_max}")]
    SupportBeyondCutoff { upper: f64, t_max: f64 },
    #[error("cutoff {t} exceeds the spectrum cutoff {t_max}")]
    BeyondCutoff { t: f64, t_max: f64 },
    #[error("no isolated even orbit in the interval ending at {q}")]
    NoWitness { q: f64 },
    #[error("grid point {q} lies below d0 = {d0}")]
    BelowD0 { q: f64, d0: f64 },
    #[error("window at {ell} is too narrow to represent (delta * ell = {exponent})")]
    WindowTooNarrow { ell: f64, exponent: f64 },
    #[error("precondition {name} violated: {detail}")]
    Precondition { name: &'static str, detail: String },
}

fn smooth_step(x: f64) -> f64 {
    if x > 0.0 {
        (-1.0 / x).exp()
    } else {
        0.0
    }
}

/// Smooth even bump: 1 on `[-1/2, 1/2]`, 0 outside `(-1, 1)`.
pub fn bump(t: f64) -> f64 {
    let a = t.abs();
    if a <= 0.5 {
        return 1.0;
    }
    if a >= 1.0 {
        return 0.0;
    }
    let up = smooth_step(2.0 - 2.0 * a);
    let down = smooth_step(2.0 * a - 1.0);
    up / (up + down)
}

/// `t -> bump(m (t - ell))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpWindow {
    pub ell: f64,
    pub m: f64,
}

impl BumpWindow {
    pub fn new(ell: f64, m: f64) -> Self {
        Self { ell, m }
    }

    pub fn support(&self) -> (f64, f64) {
        (self.ell - 1.0 / self.m, self.ell + 1.0 / self.m)
    }

    pub fn eval(&self, t: f64) -> f64 {
        bump(self.m * (t - self.ell))
    }
}

/// Signed weight `(-1)^m τ♯ |det(Id - P^n)|^(-1/2)` of one entry.
pub fn signed_amplitude(e: &SpectrumEntry) -> f64 {
    e.parity.sign() * e.tau_primitive * e.weight
}

/// Pairing of the period distribution with a window: an exact finite sum.
pub fn pair_fd(spec: &LengthSpectrum, window: &BumpWindow) -> Result<f64, ZetaError> {
    let (lo, hi) = window.support();
    if !le_tol(hi, spec.t_max) {
        return Err(ZetaError::SupportBeyondCutoff {
            upper: hi,
            t_max: spec.t_max,
        });
    }
    Ok(entries_in(spec, lo, hi)
        .map(|e| signed_amplitude(e) * window.eval(e.tau))
        .sum())
}

// Entries with lo < tau < hi.
fn entries_in(spec: &LengthSpectrum, lo: f64, hi: f64) -> impl Iterator<Item = &SpectrumEntry> {
    let start = spec.entries.partition_point(|e| e.tau <= lo);
    spec.entries[start..].iter().take_while(move |e| e.tau < hi)
}

/// One window of a lower-bound certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct LbWindow {
    pub q: f64,
    pub witness: Configuration,
    pub window: BumpWindow,
    pub pairing: f64,
    /// `d0 e^(-μ2 ℓ / 2)`.
    pub bound: f64,
    /// `pairing / bound`.
    pub margin: f64,
}

/// Windows around isolated even orbits where the pairing stays above the
/// exponential lower bound. A finite certificate covers only the lengths
/// reached by the data; the bound is claimed along sequences `ℓ → ∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct LbCertificate {
    pub windows: Vec<LbWindow>,
    pub delta: f64,
    pub rho: f64,
    pub reading: IsolationReading,
    /// Exponent of the lower bound, `μ2 / 2`.
    pub alpha0: f64,
    /// Constant of the lower bound, `d0`.
    pub c1: f64,
}

pub struct LbSearchParams<'a> {
    pub delta: f64,
    pub rho: f64,
    pub q_grid: &'a [f64],
    /// Upper envelope rate of `log|det(Id - P)| / τ`.
    pub mu2: f64,
    pub reading: IsolationReading,
}

/// For every grid point `q`, looks for an even primitive orbit with period in
/// `(q - ρ, q]` whose window `m = e^(δℓ)` contains no disqualifying period,
/// and checks the pairing against `d0 e^(-μ2 ℓ / 2)`.
pub fn lb_search(spec: &LengthSpectrum, params: &LbSearchParams<'_>) -> Result<LbCertificate, ZetaError> {
    let LbSearchParams {
        delta,
        rho,
        q_grid,
        mu2,
        reading,
    } = *params;
    if !(delta > 0.0) {
        return Err(ZetaError::Precondition {
            name: "delta",
            detail: format!("delta = {delta} must be positive"),
        });
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(ZetaError::Precondition {
            name: "rho",
            detail: format!("rho = {rho} must lie in (0, 1)"),
        });
    }
    for &q in q_grid {
        if q < spec.d0 {
            return Err(ZetaError::BelowD0 { q, d0: spec.d0 });
        }
        if !le_tol(q, spec.t_max) {
            return Err(ZetaError::BeyondCutoff {
                t: q,
                t_max: spec.t_max,
            });
        }
    }
    let found: Vec<Result<LbWindow, ZetaError>> = q_grid
        .par_iter()
        .map(|&q| search_one(spec, q, delta, rho, mu2, reading))
        .collect();
    let windows = found.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(LbCertificate {
        windows,
        delta,
        rho,
        reading,
        alpha0: mu2 / 2.0,
        c1: spec.d0,
    })
}

fn search_one(
    spec: &LengthSpectrum,
    q: f64,
    delta: f64,
    rho: f64,
    mu2: f64,
    reading: IsolationReading,
) -> Result<LbWindow, ZetaError> {
    let mut last_err = ZetaError::NoWitness { q };
    for cand in spec.primitives() {
        if !(le_tol(cand.tau, q) && !le_tol(cand.tau, q - rho) && cand.parity == Parity::Even) {
            continue;
        }
        let ell = cand.tau;
        let exponent = delta * ell;
        if exponent > MAX_WINDOW_EXPONENT {
            last_err = ZetaError::WindowTooNarrow { ell, exponent };
            continue;
        }
        let m = exponent.exp().max(1.0 / spec.d0).max(1.0);
        if m > (2.0 * exponent).exp() || 2.0 / m < MIN_WINDOW_WIDTH {
            last_err = ZetaError::WindowTooNarrow { ell, exponent };
            continue;
        }
        let window = BumpWindow::new(ell, m);
        let (lo, hi) = window.support();
        if !le_tol(hi, spec.t_max) {
            last_err = ZetaError::SupportBeyondCutoff {
                upper: hi,
                t_max: spec.t_max,
            };
            continue;
        }
        // The window support contains the isolation interval of half-width
        // e^(-δq), so checking the support is the stronger test.
        let blocked = entries_in(spec, lo, hi).any(|e| {
            let itself = e.config == cand.config && e.repetition == 1;
            !itself
                && match reading {
                    IsolationReading::OddOnly => e.parity == Parity::Odd,
                    IsolationReading::Strict => true,
                }
        });
        if blocked {
            continue;
        }
        let pairing = pair_fd(spec, &window)?;
        let bound = spec.d0 * (-mu2 * ell / 2.0).exp();
        if pairing >= bound {
            return Ok(LbWindow {
                q,
                witness: cand.config.clone(),
                window,
                pairing,
                bound,
                margin: pairing / bound,
            });
        }
    }
    Err(last_err)
}

/// `Σ_{τ <= t} (-1)^m τ♯ e^(-sτ) |det(Id - P^n)|^(-1/2)`.
pub fn eta_d(spec: &LengthSpectrum, s: Complex64, t: f64) -> Result<Complex64, ZetaError> {
    let (value, shift) = eta_d_scaled(spec, s, t)?;
    Ok(value * (-s.re * shift).exp())
}

/// Same sum multiplied by `e^(Re s · τ0)`, `τ0` the smallest period in it,
/// so that large `Re s` does not underflow. Returns `(scaled sum, τ0)`.
pub fn eta_d_scaled(spec: &LengthSpectrum, s: Complex64, t: f64) -> Result<(Complex64, f64), ZetaError> {
    if !le_tol(t, spec.t_max) {
        return Err(ZetaError::BeyondCutoff { t, t_max: spec.t_max });
    }
    let mut terms = spec.entries.iter().take_while(|e| le_tol(e.tau, t)).peekable();
    let Some(tau0) = terms.peek().map(|e| e.tau) else {
        return Ok((Complex64::new(0.0, 0.0), 0.0));
    };
    let sum = terms
        .map(|e| signed_amplitude(e) * (-s * e.tau + s.re * tau0).exp())
        .sum();
    Ok((sum, tau0))
}

/// Estimate of the tail `Σ_{τ > T}` of the series from fitted constants:
/// counting `N(x) ≈ A e^(hx) / x`, weights `<= C1^(-1/2) e^(-μ1 τ / 2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailModel {
    pub h: f64,
    pub c1: f64,
    pub mu1: f64,
    pub amplitude: f64,
}

impl TailModel {
    /// `h A C1^(-1/2) e^(-aT) / a` with `a = Re s + μ1/2 - h`; infinite when
    /// the series is not summable at this `Re s`.
    pub fn tail_bound(&self, re_s: f64, t: f64) -> f64 {
        let a = re_s + self.mu1 / 2.0 - self.h;
        if a <= 0.0 {
            return f64::INFINITY;
        }
        self.h * self.amplitude / self.c1.sqrt() * (-a * t).exp() / a
    }

    /// Real part above which the series converges under the model.
    pub fn abscissa(&self) -> f64 {
        self.h - self.mu1 / 2.0
    }
}
