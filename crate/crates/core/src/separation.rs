//! Phase-space separation of distinct periodic rays.
//!
//! Distances are measured in the product metric on position and unit
//! direction. Orbits are sampled along their open segments; two samples are
//! compared only when the straight segment joining them avoids the obstacle
//! interiors.

use nalgebra::Matrix2;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{point_segment_distance, ConvexBoundary, Scene, ValidatedScene, Vec2};
use crate::linearization::{flight_matrix, reflection_matrix};
use crate::orbit::{transverse_jacobian_fd, PeriodicOrbit, ShootError};
use crate::spectrum::{le_tol, LengthSpectrum, OrbitRecord};
use crate::symbolic::Configuration;

/// Step of the one-step finite-difference differential.
pub const FD_STEP: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeparationError {
    #[error("phase distance needs two distinct orbits, got {0} twice")]
    SameOrbit(String),
    #[error("sampling step {step} exceeds d0 / 100 = {limit}")]
    StepTooLarge { step: f64, limit: f64 },
    #[error("alpha grid is empty")]
    EmptyAlphaGrid,
    #[error("spectrum carries no orbit data")]
    NoOrbitData,
    #[error("cutoff {t} exceeds the spectrum cutoff {t_max}")]
    BeyondCutoff { t: f64, t_max: f64 },
    #[error("shooting failed while differentiating orbit {config}: {source}")]
    Shoot { config: String, source: ShootError },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConstants {
    /// Largest norm of the one-step differential of the billiard map.
    pub a0: f64,
    /// `2 ln(A0) / d0`.
    pub beta: f64,
    /// Prefactor in `||dφ_t|| <= C0 e^(βt)`, at least 1.
    pub c0: f64,
    /// `min(η0 / (2 C0), d0 / (4 C0))`.
    pub eps0: f64,
}

impl FlowConstants {
    /// Derives `beta` and `eps0` from the measured `A0` and `C0`.
    pub fn new(a0: f64, c0: f64, d0: f64, eta0: f64) -> Self {
        let c0 = c0.max(1.0);
        Self {
            a0,
            beta: 2.0 * a0.ln() / d0,
            c0,
            eps0: (eta0 / (2.0 * c0)).min(d0 / (4.0 * c0)),
        }
    }

    /// `eps0 e^(-β (1 + d2) T)`.
    pub fn radius(&self, d2: f64, t: f64) -> f64 {
        self.eps0 * (-self.beta * (1.0 + d2) * t).exp()
    }
}

/// Largest singular value.
pub fn operator_norm(m: &Matrix2<f64>) -> f64 {
    let a = m.transpose() * m;
    let tr = a.trace();
    let det = a.determinant();
    (0.5 * (tr + (tr * tr - 4.0 * det).max(0.0).sqrt())).sqrt()
}

/// One-step transfer matrix from the section after reflection `j` to the
/// section after reflection `j + 1`.
pub fn step_transfer(scene: &Scene, orbit: &PeriodicOrbit, j: usize) -> Matrix2<f64> {
    let next = (j + 1) % orbit.k();
    let cosines = orbit.incidence_cosines(scene);
    let kappa = scene.obstacle(orbit.obstacle_at(next)).curvature(orbit.params[next]);
    reflection_matrix(kappa, cosines[next]) * flight_matrix(orbit.segment_length(j))
}

/// Largest one-step transfer-matrix norm over all stored reflections.
pub fn max_transfer_norm(vs: &ValidatedScene, orbits: &[OrbitRecord]) -> f64 {
    orbits
        .iter()
        .flat_map(|r| (0..r.orbit.k()).map(move |j| operator_norm(&step_transfer(vs.scene(), &r.orbit, j))))
        .fold(0.0, f64::max)
}

/// Norm of the one-step differential at reflection `j`, by central finite
/// differences on the shooting oracle.
pub fn one_step_norm_fd(scene: &Scene, orbit: &PeriodicOrbit, j: usize) -> Result<f64, SeparationError> {
    let next = (j + 1) % orbit.k();
    transverse_jacobian_fd(scene, orbit.outgoing(j), orbit.outgoing(next), 1, FD_STEP)
        .map(|m| operator_norm(&m))
        .map_err(|source| SeparationError::Shoot {
            config: orbit.config.to_string(),
            source,
        })
}

/// Measures `A0` and `C0` over the stored orbits of `spec`.
pub fn estimate_flow_constants(vs: &ValidatedScene, spec: &LengthSpectrum) -> Result<FlowConstants, SeparationError> {
    let scene = vs.scene();
    let consts = vs.constants();
    if spec.orbits.is_empty() {
        return Err(SeparationError::NoOrbitData);
    }
    let norms: Vec<Result<f64, SeparationError>> = spec
        .orbits
        .par_iter()
        .flat_map_iter(|r| (0..r.orbit.k()).map(move |j| one_step_norm_fd(scene, &r.orbit, j)))
        .collect();
    let mut a0: f64 = 1.0;
    for n in norms {
        a0 = a0.max(n?);
    }
    let beta = 2.0 * a0.ln() / consts.d0;
    let c0 = spec
        .orbits
        .iter()
        .map(|r| growth_prefactor(scene, &r.orbit, beta))
        .fold(1.0, f64::max);
    Ok(FlowConstants::new(a0, c0, consts.d0, consts.eta0))
}

// max over one period of ||dφ_t|| e^(-βt), sampled just before and just
// after every reflection.
fn growth_prefactor(scene: &Scene, orbit: &PeriodicOrbit, beta: f64) -> f64 {
    let k = orbit.k();
    let cosines = orbit.incidence_cosines(scene);
    let mut m = Matrix2::identity();
    let mut t = 0.0;
    let mut best: f64 = 1.0;
    for j in 0..k {
        let len = orbit.segment_length(j);
        m = flight_matrix(len) * m;
        t += len;
        best = best.max(operator_norm(&m) * (-beta * t).exp());
        let next = (j + 1) % k;
        let kappa = scene.obstacle(orbit.obstacle_at(next)).curvature(orbit.params[next]);
        m = reflection_matrix(kappa, cosines[next]) * m;
        best = best.max(operator_norm(&m) * (-beta * t).exp());
    }
    best
}

struct Segment {
    a: Vec2,
    b: Vec2,
    dir: Vec2,
    len: f64,
}

fn segments(orbit: &PeriodicOrbit) -> Vec<Segment> {
    (0..orbit.k())
        .map(|j| {
            let (a, b) = orbit.segment(j);
            let len = (b - a).norm();
            Segment {
                a,
                b,
                dir: (b - a) / len,
                len,
            }
        })
        .collect()
}

// Sample positions on the open segment, spaced by `step`.
fn samples(seg: &Segment, step: f64) -> Vec<Vec2> {
    let n = (seg.len / step).ceil().max(1.0) as usize;
    let h = seg.len / n as f64;
    (0..n).map(|i| seg.a + (i as f64 + 0.5) * h * seg.dir).collect()
}

fn segment_segment_distance(s: &Segment, t: &Segment) -> f64 {
    let cross = |u: Vec2, v: Vec2| u.x * v.y - u.y * v.x;
    let d1 = s.b - s.a;
    let d2 = t.b - t.a;
    let denom = cross(d1, d2);
    if denom != 0.0 {
        let w = t.a - s.a;
        let u = cross(w, d2) / denom;
        let v = cross(w, d1) / denom;
        if (0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v) {
            return 0.0;
        }
    }
    point_segment_distance(s.a, t.a, t.b)
        .min(point_segment_distance(s.b, t.a, t.b))
        .min(point_segment_distance(t.a, s.a, s.b))
        .min(point_segment_distance(t.b, s.a, s.b))
}

fn linearly_connected(scene: &Scene, p: Vec2, q: Vec2) -> bool {
    scene
        .obstacles
        .iter()
        .all(|o| point_segment_distance(o.c(), p, q) >= o.radius)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseDistance {
    /// Minimum over sampled, linearly connected pairs.
    pub raw: f64,
    /// `raw - step`: a lower bound for the unsampled minimum.
    pub corrected: f64,
}

/// Smallest product-metric distance between samples of two distinct orbits.
pub fn phase_distance(
    scene: &Scene,
    d0: f64,
    a: &PeriodicOrbit,
    b: &PeriodicOrbit,
    step: f64,
) -> Result<PhaseDistance, SeparationError> {
    if a.config == b.config {
        return Err(SeparationError::SameOrbit(a.config.to_string()));
    }
    if !(step > 0.0 && step <= d0 / 100.0) {
        return Err(SeparationError::StepTooLarge {
            step,
            limit: d0 / 100.0,
        });
    }
    let sa = segments(a);
    let sb = segments(b);
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, s) in sa.iter().enumerate() {
        for (j, t) in sb.iter().enumerate() {
            let dv = (s.dir - t.dir).norm_squared();
            let dp = segment_segment_distance(s, t);
            pairs.push((dp * dp + dv, i, j));
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut best = f64::INFINITY;
    for (lower, i, j) in pairs {
        if lower >= best {
            break;
        }
        let s = &sa[i];
        let t = &sb[j];
        let dv = (s.dir - t.dir).norm_squared();
        let ps = samples(s, step);
        let pt = samples(t, step);
        for p in &ps {
            for q in &pt {
                let d = (p - q).norm_squared() + dv;
                if d < best && linearly_connected(scene, *p, *q) {
                    best = d;
                }
            }
        }
    }
    let raw = best.sqrt();
    Ok(PhaseDistance {
        raw,
        corrected: (raw - step).max(0.0),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationReport {
    pub t: f64,
    pub orbits: usize,
    /// Lower-bound-corrected minimum over pairs; infinite when vacuous.
    pub min_pair_distance: f64,
    pub raw_min_pair_distance: f64,
    /// `eps0 e^(-β (1 + d2) T)`.
    pub bound: f64,
    /// `min_pair_distance / bound`.
    pub margin: f64,
    /// Disjoint neighbourhoods need `min_pair_distance >= 2 bound`.
    pub passed: bool,
    pub witness: Option<(Configuration, Configuration)>,
    pub sampling_step: f64,
}

fn orbits_up_to(spec: &LengthSpectrum, t: f64) -> Result<Vec<&PeriodicOrbit>, SeparationError> {
    if !le_tol(t, spec.t_max) {
        return Err(SeparationError::BeyondCutoff { t, t_max: spec.t_max });
    }
    if spec.orbits.is_empty() && !spec.entries.is_empty() {
        return Err(SeparationError::NoOrbitData);
    }
    Ok(spec
        .orbits
        .iter()
        .map(|r| &r.orbit)
        .filter(|o| le_tol(o.tau_primitive, t))
        .collect())
}

fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

/// Checks that orbits with period `<= t` keep their phase-space
/// neighbourhoods of radius `eps0 e^(-β(1+d2)t)` disjoint.
pub fn check_phase_separation(
    vs: &ValidatedScene,
    spec: &LengthSpectrum,
    t: f64,
    constants: &FlowConstants,
    step: Option<f64>,
) -> Result<SeparationReport, SeparationError> {
    let consts = vs.constants();
    let step = step.unwrap_or(consts.d0 / 1000.0);
    let orbits = orbits_up_to(spec, t)?;
    let dists: Vec<Result<(PhaseDistance, usize, usize), SeparationError>> = all_pairs(orbits.len())
        .into_par_iter()
        .map(|(i, j)| phase_distance(vs.scene(), consts.d0, orbits[i], orbits[j], step).map(|d| (d, i, j)))
        .collect();
    let mut best: Option<(PhaseDistance, usize, usize)> = None;
    for d in dists {
        let d = d?;
        if best.as_ref().is_none_or(|b| d.0.corrected < b.0.corrected) {
            best = Some(d);
        }
    }
    let bound = constants.radius(consts.d2, t);
    let (min, raw, witness) = match best {
        Some((d, i, j)) => (
            d.corrected,
            d.raw,
            Some((orbits[i].config.clone(), orbits[j].config.clone())),
        ),
        None => (f64::INFINITY, f64::INFINITY, None),
    };
    Ok(SeparationReport {
        t,
        orbits: orbits.len(),
        min_pair_distance: min,
        raw_min_pair_distance: raw,
        bound,
        margin: min / bound,
        passed: min >= 2.0 * bound,
        witness,
        sampling_step: step,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionGapReport {
    pub t: f64,
    pub position_tol: f64,
    /// Number of sample pairs with positions within tolerance.
    pub compared: usize,
    /// Smallest `|v1 - v2|` among compared pairs; `None` when vacuous.
    pub min_gap: Option<f64>,
    pub bound: f64,
    pub passed: bool,
    pub witness: Option<(Configuration, Configuration)>,
}

impl DirectionGapReport {
    pub fn is_vacuous(&self) -> bool {
        self.compared == 0
    }
}

// Segment samples plus each reflection point with its outgoing direction.
fn direction_samples(orbit: &PeriodicOrbit, step: f64) -> Vec<(Vec2, Vec2)> {
    let mut out = Vec::new();
    for s in segments(orbit) {
        out.push((s.a, s.dir));
        out.extend(samples(&s, step).into_iter().map(|p| (p, s.dir)));
    }
    out
}

/// Smallest direction difference between distinct orbits at sample points
/// whose positions lie within `position_tol`.
pub fn direction_gap(
    vs: &ValidatedScene,
    spec: &LengthSpectrum,
    t: f64,
    position_tol: f64,
    constants: &FlowConstants,
) -> Result<DirectionGapReport, SeparationError> {
    let consts = vs.constants();
    let step = consts.d0 / 1000.0;
    let orbits = orbits_up_to(spec, t)?;
    let sampled: Vec<Vec<(Vec2, Vec2)>> = orbits.iter().map(|o| direction_samples(o, step)).collect();
    let segs: Vec<Vec<Segment>> = orbits.iter().map(|o| segments(o)).collect();
    let results: Vec<(usize, Option<f64>, usize, usize)> = all_pairs(orbits.len())
        .into_par_iter()
        .map(|(i, j)| {
            let near = segs[i]
                .iter()
                .any(|s| segs[j].iter().any(|u| segment_segment_distance(s, u) <= position_tol));
            if !near {
                return (0, None, i, j);
            }
            let mut compared = 0;
            let mut gap: Option<f64> = None;
            for (p, v) in &sampled[i] {
                for (q, w) in &sampled[j] {
                    if (p - q).norm() <= position_tol {
                        compared += 1;
                        let g = (v - w).norm();
                        gap = Some(gap.map_or(g, |x| x.min(g)));
                    }
                }
            }
            (compared, gap, i, j)
        })
        .collect();
    let mut compared = 0;
    let mut best: Option<(f64, usize, usize)> = None;
    for (c, g, i, j) in results {
        compared += c;
        if let Some(g) = g {
            if best.is_none_or(|b| g < b.0) {
                best = Some((g, i, j));
            }
        }
    }
    let bound = constants.radius(consts.d2, t);
    Ok(DirectionGapReport {
        t,
        position_tol,
        compared,
        min_gap: best.map(|b| b.0),
        bound,
        passed: best.is_none_or(|b| b.0 > bound),
        witness: best.map(|(_, i, j)| (orbits[i].config.clone(), orbits[j].config.clone())),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub alpha: f64,
    pub radius: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionProbeReport {
    pub t: f64,
    pub rows: Vec<ProbeRow>,
    /// Smallest grid `alpha` that passes.
    pub min_alpha: Option<f64>,
    /// Smallest distance between reflection points of different orbits.
    pub min_gap: f64,
    pub critical: Option<(Configuration, Configuration)>,
}

/// For each `alpha`, checks that no other orbit with period `<= t` reflects
/// within `e^(-alpha t)` of a reflection point of a given orbit. An orbit's
/// own time reversal reflects at the same points and is not counted as
/// another orbit.
pub fn probe_reflection_isolation(
    spec: &LengthSpectrum,
    t: f64,
    alpha_grid: &[f64],
) -> Result<ReflectionProbeReport, SeparationError> {
    if alpha_grid.is_empty() {
        return Err(SeparationError::EmptyAlphaGrid);
    }
    let orbits = orbits_up_to(spec, t)?;
    let mut min_gap = f64::INFINITY;
    let mut critical = None;
    for (i, j) in all_pairs(orbits.len()) {
        let (a, b) = (orbits[i], orbits[j]);
        if a.config.reversed() == b.config {
            continue;
        }
        for (ka, p) in a.points.iter().enumerate() {
            for (kb, q) in b.points.iter().enumerate() {
                if a.obstacle_at(ka) != b.obstacle_at(kb) {
                    continue;
                }
                let d = (p - q).norm();
                if d < min_gap {
                    min_gap = d;
                    critical = Some((a.config.clone(), b.config.clone()));
                }
            }
        }
    }
    let rows: Vec<ProbeRow> = alpha_grid
        .iter()
        .map(|&alpha| {
            let radius = (-alpha * t).exp();
            ProbeRow {
                alpha,
                radius,
                passed: radius < min_gap,
            }
        })
        .collect();
    let min_alpha = rows
        .iter()
        .filter(|r| r.passed)
        .map(|r| r.alpha)
        .fold(None, |m: Option<f64>, a| Some(m.map_or(a, |x| x.min(a))));
    Ok(ReflectionProbeReport {
        t,
        rows,
        min_alpha,
        min_gap,
        critical,
    })
}
