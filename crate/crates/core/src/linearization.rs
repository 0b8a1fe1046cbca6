//! Linearized Poincaré map along a periodic ray and the zeta weights.
//!
//! Transverse coordinates are `(y, y')`: offset along the left normal of the
//! direction of motion and the angle of the direction. A free flight of
//! length `t` acts by `[[1, t], [0, 1]]`. A reflection with curvature `κ`
//! and incidence `φ` acts by `-[[1, 0], [2κ/cos φ, 1]]`; the sign comes from
//! the mirror reversing the left normal, so an orbit with `k` reflections
//! carries the factor `(-1)^k`.

use nalgebra::Matrix2;
use thiserror::Error;

use crate::geometry::{ConvexBoundary, Scene};
use crate::orbit::PeriodicOrbit;
use crate::precision::DoubleDouble;

/// `|tr P| - 2` at or below this is treated as parabolic.
pub const DEGENERACY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearizationError {
    #[error("orbit {config} is not hyperbolic (trace {trace})")]
    Degenerate { config: String, trace: f64 },
    #[error("need at least {need} orbits to fit determinant bounds, got {got}")]
    InsufficientData { need: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitLinearization {
    pub monodromy: Matrix2<f64>,
    pub trace: f64,
    /// `|det(Id - P)|` of the primitive orbit.
    pub det_id_minus_p: f64,
}

impl OrbitLinearization {
    pub fn from_monodromy(monodromy: Matrix2<f64>) -> Self {
        let trace = monodromy.trace();
        Self {
            monodromy,
            trace,
            det_id_minus_p: (2.0 - trace).abs(),
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.trace.abs() - 2.0 <= DEGENERACY_TOL
    }

    /// Expanding eigenvalue (`|λ| > 1`, same sign as the trace).
    pub fn eigenvalue(&self) -> f64 {
        let t = self.trace;
        let disc = (t * t - 4.0).max(0.0).sqrt();
        0.5 * (t + t.signum() * disc)
    }

    /// `log |det(Id - P^n)|`, without forming `P^n`.
    pub fn log_det_iterate(&self, n: usize) -> f64 {
        assert!(n >= 1, "iterate index starts at 1");
        if n == 1 {
            return self.det_id_minus_p.ln();
        }
        // |det(Id - P^n)| = |λ|^n (1 - λ^-n)^2
        let lam = self.eigenvalue();
        let inv_pow = lam.powi(-(n as i32));
        n as f64 * lam.abs().ln() + 2.0 * (-inv_pow).ln_1p()
    }

    /// Zeta weight `|det(Id - P^n)|^(-1/2)` of the `n`-fold iterate.
    pub fn weight(&self, n: usize) -> f64 {
        (-0.5 * self.log_det_iterate(n)).exp()
    }
}

/// Free-flight transfer matrix.
pub fn flight_matrix(t: f64) -> Matrix2<f64> {
    Matrix2::new(1.0, t, 0.0, 1.0)
}

/// Reflection transfer matrix without the orientation sign.
pub fn reflection_matrix(curvature: f64, cos_incidence: f64) -> Matrix2<f64> {
    Matrix2::new(1.0, 0.0, 2.0 * curvature / cos_incidence, 1.0)
}

/// Monodromy taking the section just after reflection `start` once around.
pub fn monodromy_from(scene: &Scene, orbit: &PeriodicOrbit, start: usize) -> Matrix2<f64> {
    let k = orbit.k();
    let cosines = orbit.incidence_cosines(scene);
    let mut p = Matrix2::identity();
    for step in 0..k {
        let j = (start + step) % k;
        let next = (j + 1) % k;
        let o = scene.obstacle(orbit.obstacle_at(next));
        let kappa = o.curvature(orbit.params[next]);
        p = -reflection_matrix(kappa, cosines[next]) * flight_matrix(orbit.segment_length(j)) * p;
    }
    p
}

/// `det P` of the monodromy from the first section, with the product of
/// transfer matrices carried in double-double arithmetic. Forming `P` in f64
/// cancels about `|P|^2 ε` in the determinant, which swamps it for long words.
pub fn monodromy_determinant(scene: &Scene, orbit: &PeriodicOrbit) -> f64 {
    type M = [[DoubleDouble; 2]; 2];
    let mul = |a: &M, b: &M| -> M {
        let mut out = [[DoubleDouble::ZERO; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        out
    };
    let lift = |m: Matrix2<f64>| -> M {
        [
            [m[(0, 0)].into(), m[(0, 1)].into()],
            [m[(1, 0)].into(), m[(1, 1)].into()],
        ]
    };
    let k = orbit.k();
    let cosines = orbit.incidence_cosines(scene);
    let mut p: M = [
        [DoubleDouble::ONE, DoubleDouble::ZERO],
        [DoubleDouble::ZERO, DoubleDouble::ONE],
    ];
    for j in 0..k {
        let next = (j + 1) % k;
        let kappa = scene.obstacle(orbit.obstacle_at(next)).curvature(orbit.params[next]);
        let step = -reflection_matrix(kappa, cosines[next]) * flight_matrix(orbit.segment_length(j));
        p = mul(&lift(step), &p);
    }
    (p[0][0] * p[1][1] - p[0][1] * p[1][0]).to_f64()
}

/// Linearized Poincaré map on the section just after the first reflection.
pub fn poincare_map(scene: &Scene, orbit: &PeriodicOrbit) -> OrbitLinearization {
    OrbitLinearization::from_monodromy(monodromy_from(scene, orbit, 0))
}

/// Weight of the `n`-fold iterate; parabolic orbits are rejected.
pub fn zeta_weight(lin: &OrbitLinearization, n: usize) -> Result<f64, LinearizationError> {
    if lin.is_degenerate() {
        return Err(LinearizationError::Degenerate {
            config: String::new(),
            trace: lin.trace,
        });
    }
    Ok(lin.weight(n))
}

/// Constants with `C1 e^(μ1 τ) <= |det(Id - P)| <= e^(μ2 τ)` on a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetBoundsFit {
    pub c1: f64,
    pub mu1: f64,
    pub mu2: f64,
}

impl DetBoundsFit {
    /// True when the point `(tau, log|det|)` lies inside the envelope.
    pub fn certifies(&self, tau: f64, log_det: f64) -> bool {
        let slack = 1e-12 * log_det.abs().max(1.0);
        log_det >= self.c1.ln() + self.mu1 * tau - slack && log_det <= self.mu2 * tau + slack
    }
}

pub const DEFAULT_MIN_FIT_ORBITS: usize = 10;

/// Fits the exponential envelope to `(tau, log|det(Id - P)|)` samples.
///
/// `mu2` is the largest log-det per unit length plus `1e-6`. `mu1` is the
/// slope of the lower convex hull edge above the median period, and `C1`
/// the largest constant that keeps every sample above `C1 e^(μ1 τ)`.
pub fn fit_det_bounds(samples: &[(f64, f64)], min_samples: usize) -> Result<DetBoundsFit, LinearizationError> {
    let need = min_samples.max(1);
    if samples.len() < need {
        return Err(LinearizationError::InsufficientData {
            need,
            got: samples.len(),
        });
    }
    let mu2 = samples.iter().map(|&(t, l)| l / t).fold(f64::NEG_INFINITY, f64::max) + 1e-6;

    let mut pts: Vec<(f64, f64)> = samples.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for p in pts.iter().copied() {
        if hull.last().is_some_and(|q| q.0 == p.0) {
            continue; // same period: the smaller log-det came first
        }
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            if (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0) <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    let median = pts[pts.len() / 2].0;
    let edge_slope = hull
        .windows(2)
        .find(|w| w[1].0 >= median)
        .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0));
    let min_rate = samples.iter().map(|&(t, l)| l / t).fold(f64::INFINITY, f64::min);
    let mut mu1 = match edge_slope {
        Some(s) if s > 0.0 && s < mu2 => s,
        _ => min_rate,
    };
    if !(mu1 > 0.0) || mu1 >= mu2 {
        mu1 = 0.5 * mu2;
    }
    let log_c1 = samples.iter().map(|&(t, l)| l - mu1 * t).fold(f64::INFINITY, f64::min);
    Ok(DetBoundsFit {
        c1: log_c1.exp(),
        mu1,
        mu2,
    })
}
