//! Periodic rays: solver, shooting oracle and independent validation.
//!
//! A configuration `(i_1, ..., i_k)` is turned into its periodic ray by
//! minimizing the perimeter of the closed polygon with one vertex on each
//! listed obstacle. Stationarity of the perimeter is exactly the reflection
//! law, and for dispersing scenes without eclipses the minimizer is unique.

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{ConvexBoundary, Scene, ValidatedScene, Vec2, SEPARATION_TOL};
use crate::precision::{DoubleDouble, Real, V2};
use crate::symbolic::Configuration;

/// `|<v, n>|` below this at an impact is a grazing event.
pub const GRAZING_TOL: f64 = 1e-10;
/// Bound on reflection and closure residuals of a solved orbit.
pub const RESIDUAL_TOL: f64 = 1e-9;
/// Bound on the extended-precision round trip through the shooting oracle.
pub const ROUNDTRIP_TOL: f64 = 1e-8;

const MIN_FLIGHT: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrbitError {
    #[error("solver did not converge for {config} (gradient {gradient:e})")]
    NonConvergence { config: String, gradient: f64 },
    #[error("orbit {config} violates {invariant}")]
    ValidationFailure { config: String, invariant: String },
    #[error("configuration {config} uses obstacle {letter} but the scene has {r}")]
    LetterOutOfRange { config: String, letter: usize, r: usize },
    #[error("expected {expected} parameters, got {got}")]
    ParameterCount { expected: usize, got: usize },
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum ShootError {
    #[error("grazing impact at step {step}")]
    Grazing { step: usize },
    #[error("ray escapes at step {step}")]
    Escape { step: usize },
    #[error("start point lies inside obstacle {obstacle}")]
    StartInside { obstacle: usize },
}

/// A point of the unit tangent bundle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    pub position: Vec2,
    pub direction: Vec2,
}

impl PhasePoint {
    /// Normalizes `direction`.
    pub fn new(position: Vec2, direction: Vec2) -> Self {
        Self {
            position,
            direction: direction.normalize(),
        }
    }

    /// Product-metric distance: Euclidean on positions and on directions.
    pub fn distance(&self, other: &PhasePoint) -> f64 {
        ((self.position - other.position).norm_squared() + (self.direction - other.direction).norm_squared()).sqrt()
    }
}

/// One reflection reported by [`shoot`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounce {
    pub obstacle: usize,
    /// Impact point with the reflected (outgoing) direction.
    pub state: PhasePoint,
    /// Free-flight length since the previous state.
    pub flight: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub gradient_tol: f64,
    pub coordinate_sweeps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tol: 1e-12,
            coordinate_sweeps: 3,
        }
    }
}

/// The periodic ray of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicOrbit {
    pub config: Configuration,
    /// Boundary angle of each reflection point, one per letter.
    pub params: Vec<f64>,
    pub points: Vec<Vec2>,
    pub tau_primitive: f64,
    pub residual_reflection: f64,
    pub residual_closure: f64,
    /// Smallest distance from a segment to an obstacle it does not end on.
    pub clearance: f64,
    pub gradient_norm: f64,
    pub min_hessian_eigenvalue: f64,
}

impl PeriodicOrbit {
    /// Rebuilds an orbit from boundary angles and recomputes every derived
    /// field. No invariant is enforced here.
    pub fn from_params(scene: &Scene, config: Configuration, params: Vec<f64>) -> Result<Self, OrbitError> {
        check_letters(scene, &config)?;
        if params.len() != config.len() {
            return Err(OrbitError::ParameterCount {
                expected: config.len(),
                got: params.len(),
            });
        }
        let word = config.word();
        let points: Vec<Vec2> = word
            .iter()
            .zip(&params)
            .map(|(&i, &t)| scene.obstacle(i).boundary_point(t))
            .collect();
        let (tau, grad, hess) = length_derivatives(scene, word, &params);
        let min_eig = SymmetricEigen::new(hess).eigenvalues.min();
        let mut orbit = Self {
            config,
            params,
            points,
            tau_primitive: tau,
            residual_reflection: 0.0,
            residual_closure: 0.0,
            clearance: 0.0,
            gradient_norm: grad.amax(),
            min_hessian_eigenvalue: min_eig,
        };
        orbit.residual_reflection = orbit.reflection_residual(scene);
        orbit.residual_closure = orbit.closure_residual(scene);
        orbit.clearance = orbit.segment_clearance(scene);
        Ok(orbit)
    }

    /// Number of reflections per period.
    pub fn k(&self) -> usize {
        self.points.len()
    }

    /// Segment leaving reflection `j`.
    pub fn segment(&self, j: usize) -> (Vec2, Vec2) {
        let k = self.k();
        (self.points[j], self.points[(j + 1) % k])
    }

    pub fn segment_length(&self, j: usize) -> f64 {
        let (a, b) = self.segment(j);
        (b - a).norm()
    }

    /// Outgoing phase point at reflection `j`.
    pub fn outgoing(&self, j: usize) -> PhasePoint {
        let (a, b) = self.segment(j);
        PhasePoint::new(a, b - a)
    }

    /// Obstacle hit at reflection `j`.
    pub fn obstacle_at(&self, j: usize) -> usize {
        self.config.word()[j]
    }

    /// Cosine of the incidence angle (from the normal) at each reflection.
    pub fn incidence_cosines(&self, scene: &Scene) -> Vec<f64> {
        (0..self.k())
            .map(|j| {
                let n = outward_normal(scene, self.obstacle_at(j), self.points[j]);
                self.outgoing(j).direction.dot(&n)
            })
            .collect()
    }

    fn reflection_residual(&self, scene: &Scene) -> f64 {
        let k = self.k();
        (0..k)
            .map(|j| {
                let n = outward_normal(scene, self.obstacle_at(j), self.points[j]);
                let back = (self.points[(j + k - 1) % k] - self.points[j]).normalize();
                let out = self.outgoing(j).direction;
                let a_back = cross(n, back).atan2(n.dot(&back));
                let a_out = cross(n, out).atan2(n.dot(&out));
                (a_back + a_out).abs()
            })
            .fold(0.0, f64::max)
    }

    // Follow the reflected incoming ray from each vertex to the next obstacle
    // and compare with the next vertex.
    fn closure_residual(&self, scene: &Scene) -> f64 {
        let k = self.k();
        (0..k)
            .map(|j| {
                let n = outward_normal(scene, self.obstacle_at(j), self.points[j]);
                let incoming = (self.points[j] - self.points[(j + k - 1) % k]).normalize();
                let reflected = incoming - 2.0 * incoming.dot(&n) * n;
                let next = (j + 1) % k;
                let target = scene.obstacle(self.obstacle_at(next));
                let w = self.points[j] - target.c();
                let b = w.dot(&reflected);
                let disc = b * b - (w.norm_squared() - target.radius * target.radius);
                if disc < 0.0 {
                    return f64::INFINITY;
                }
                let t = -b - disc.sqrt();
                (self.points[j] + t * reflected - self.points[next]).norm()
            })
            .fold(0.0, f64::max)
    }

    fn segment_clearance(&self, scene: &Scene) -> f64 {
        let k = self.k();
        let mut best = f64::INFINITY;
        for j in 0..k {
            let (a, b) = self.segment(j);
            let ends = [self.obstacle_at(j), self.obstacle_at((j + 1) % k)];
            for (m, o) in scene.obstacles.iter().enumerate() {
                if !ends.contains(&m) {
                    best = best.min(o.segment_distance(a, b));
                }
            }
        }
        best
    }
}

#[inline]
pub(crate) fn cross(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

#[inline]
pub(crate) fn outward_normal(scene: &Scene, obstacle: usize, p: Vec2) -> Vec2 {
    (p - scene.obstacle(obstacle).c()).normalize()
}

fn check_letters(scene: &Scene, config: &Configuration) -> Result<(), OrbitError> {
    let r = scene.len();
    match config.word().iter().find(|&&i| i >= r) {
        Some(&letter) => Err(OrbitError::LetterOutOfRange {
            config: config.to_string(),
            letter,
            r,
        }),
        None => Ok(()),
    }
}

/// Perimeter of the closed polygon with vertices on the listed obstacles at
/// the given boundary angles, with its gradient and Hessian.
pub fn length_derivatives(scene: &Scene, word: &[usize], theta: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
    let k = word.len();
    let mut total = 0.0;
    let mut g = DVector::zeros(k);
    let mut h = DMatrix::zeros(k, k);
    let pts: Vec<Vec2> = (0..k)
        .map(|j| scene.obstacle(word[j]).boundary_point(theta[j]))
        .collect();
    let tan: Vec<Vec2> = (0..k)
        .map(|j| scene.obstacle(word[j]).boundary_tangent(theta[j]))
        .collect();
    // second derivative of the boundary point
    let acc: Vec<Vec2> = (0..k).map(|j| scene.obstacle(word[j]).c() - pts[j]).collect();
    for a in 0..k {
        let b = (a + 1) % k;
        let s = pts[a] - pts[b];
        let len = s.norm();
        total += len;
        let u = s / len;
        let proj = |x: Vec2, y: Vec2| (x.dot(&y) - x.dot(&u) * y.dot(&u)) / len;
        g[a] += u.dot(&tan[a]);
        g[b] -= u.dot(&tan[b]);
        h[(a, a)] += proj(tan[a], tan[a]) + u.dot(&acc[a]);
        h[(b, b)] += proj(tan[b], tan[b]) - u.dot(&acc[b]);
        let off = -proj(tan[a], tan[b]);
        h[(a, b)] += off;
        h[(b, a)] += off;
    }
    (total, g, h)
}

fn length_and_gradient(scene: &Scene, word: &[usize], theta: &[f64]) -> (f64, f64) {
    let (l, g, _) = length_derivatives(scene, word, theta);
    (l, g.amax())
}

/// Boundary angles facing the midpoint of the two neighbouring centers.
pub fn warm_start(scene: &Scene, config: &Configuration) -> Vec<f64> {
    let w = config.word();
    let k = w.len();
    (0..k)
        .map(|j| {
            let c = scene.obstacle(w[j]).c();
            let target = 0.5 * (scene.obstacle(w[(j + k - 1) % k]).c() + scene.obstacle(w[(j + 1) % k]).c());
            let d = target - c;
            d.y.atan2(d.x)
        })
        .collect()
}

/// Solves for the periodic ray of `config` and checks every orbit invariant.
pub fn solve_orbit(vs: &ValidatedScene, config: &Configuration) -> Result<PeriodicOrbit, OrbitError> {
    check_letters(vs.scene(), config)?;
    let start = warm_start(vs.scene(), config);
    solve_orbit_from(vs, config, &start, &SolverOptions::default())
}

/// Like [`solve_orbit`], starting from the given boundary angles.
pub fn solve_orbit_from(
    vs: &ValidatedScene,
    config: &Configuration,
    initial: &[f64],
    options: &SolverOptions,
) -> Result<PeriodicOrbit, OrbitError> {
    let scene = vs.scene();
    check_letters(scene, config)?;
    if initial.len() != config.len() {
        return Err(OrbitError::ParameterCount {
            expected: config.len(),
            got: initial.len(),
        });
    }
    let word = config.word();
    let k = word.len();
    let mut theta = initial.to_vec();

    for _ in 0..options.coordinate_sweeps {
        for j in 0..k {
            let (_, g, h) = length_derivatives(scene, word, &theta);
            if h[(j, j)] > 0.0 {
                theta[j] -= (g[j] / h[(j, j)]).clamp(-0.5, 0.5);
            } else {
                theta[j] -= 0.1 * g[j].signum();
            }
        }
    }

    let mut lambda = 0.0f64;
    let mut converged = false;
    let mut gnorm = f64::INFINITY;
    for _ in 0..options.max_iterations {
        let (len, g, h) = length_derivatives(scene, word, &theta);
        gnorm = g.amax();
        if gnorm <= options.gradient_tol {
            converged = true;
            break;
        }
        let scale = h.diagonal().amax().max(1.0);
        let mut accepted = false;
        while lambda <= 1e12 * scale {
            let mut damped = h.clone();
            for i in 0..k {
                damped[(i, i)] += lambda;
            }
            let Some(chol) = damped.cholesky() else {
                lambda = (lambda * 10.0).max(1e-8 * scale);
                continue;
            };
            let step = -chol.solve(&g);
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect();
            let (trial_len, trial_g) = length_and_gradient(scene, word, &trial);
            let decrease = len - trial_len;
            let sufficient = decrease >= 1e-4 * g.dot(&step).abs();
            // Near the minimum length differences drown in rounding; judge
            // progress by the gradient instead.
            let polishing = gnorm < 1e-6 && trial_g < gnorm && decrease >= -1e-12 * len;
            if trial_len.is_finite() && (sufficient || polishing) {
                theta = trial;
                lambda = if lambda < 1e-10 { 0.0 } else { lambda / 10.0 };
                accepted = true;
                break;
            }
            lambda = (lambda * 10.0).max(1e-8 * scale);
        }
        if !accepted {
            break;
        }
    }
    if !converged {
        return Err(OrbitError::NonConvergence {
            config: config.to_string(),
            gradient: gnorm,
        });
    }
    for t in theta.iter_mut() {
        *t = t.sin().atan2(t.cos());
    }
    let orbit = PeriodicOrbit::from_params(scene, config.clone(), theta)?;
    check_invariants(vs, &orbit)?;
    Ok(orbit)
}

fn check_invariants(vs: &ValidatedScene, orbit: &PeriodicOrbit) -> Result<(), OrbitError> {
    let c = vs.constants();
    let fail = |what: &str| {
        Err(OrbitError::ValidationFailure {
            config: orbit.config.to_string(),
            invariant: what.to_string(),
        })
    };
    if orbit.tau_primitive < c.d0 * (1.0 - 1e-12) {
        return fail("period >= d0");
    }
    if !(orbit.residual_reflection <= RESIDUAL_TOL) {
        return fail("reflection residual");
    }
    if !(orbit.residual_closure <= RESIDUAL_TOL) {
        return fail("closure residual");
    }
    if !(orbit.clearance > SEPARATION_TOL * c.d1) {
        return fail("positive clearance");
    }
    // <v_out, inward normal> = -cos(incidence) must stay below cos(psi0).
    let cos_psi0 = c.psi0.cos();
    if orbit
        .incidence_cosines(vs.scene())
        .iter()
        .any(|&ci| -ci > cos_psi0 + RESIDUAL_TOL)
    {
        return fail("outgoing cone");
    }
    if !(orbit.min_hessian_eigenvalue > 0.0) {
        return fail("positive definite Hessian");
    }
    Ok(())
}

/// Solves `config` from `starts` random initializations and returns the
/// spread (max - min) of the periods found.
pub fn multistart_spread(
    vs: &ValidatedScene,
    config: &Configuration,
    starts: usize,
    seed: u64,
) -> Result<f64, OrbitError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = warm_start(vs.scene(), config);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for _ in 0..starts {
        let init: Vec<f64> = base.iter().map(|t| t + rng.gen_range(-1.2..1.2)).collect();
        let orbit = solve_orbit_from(vs, config, &init, &SolverOptions::default())?;
        lo = lo.min(orbit.tau_primitive);
        hi = hi.max(orbit.tau_primitive);
    }
    Ok(hi - lo)
}

struct GenericBounce<T> {
    obstacle: usize,
    position: V2<T>,
    direction: V2<T>,
    flight: T,
}

fn shoot_generic<T: Real>(
    scene: &Scene,
    mut p: V2<T>,
    mut v: V2<T>,
    n_bounces: usize,
) -> Result<Vec<GenericBounce<T>>, ShootError> {
    let mut out = Vec::with_capacity(n_bounces);
    for (m, o) in scene.obstacles.iter().enumerate() {
        let w = p - V2::lift(o.center[0], o.center[1]);
        if (w.dot(w) - T::lift(o.radius * o.radius)).lower() < -1e-9 * o.radius * o.radius {
            return Err(ShootError::StartInside { obstacle: m });
        }
    }
    for step in 0..n_bounces {
        let mut best: Option<(f64, T, usize, bool)> = None;
        for (m, o) in scene.obstacles.iter().enumerate() {
            let c = V2::lift(o.center[0], o.center[1]);
            let w = p - c;
            let b = w.dot(v);
            let cc = w.dot(w) - T::lift(o.radius * o.radius);
            let disc = b * b - cc;
            let disc_f = disc.lower();
            let graze_band = (GRAZING_TOL * o.radius).powi(2);
            let (t, grazing) = if disc_f >= 0.0 {
                let sq = disc.sqrt();
                ((-b) - sq, sq.lower() / o.radius < GRAZING_TOL)
            } else if disc_f > -graze_band {
                (-b, true)
            } else {
                continue;
            };
            let tf = t.lower();
            if tf > MIN_FLIGHT && best.as_ref().is_none_or(|bst| tf < bst.0) {
                best = Some((tf, t, m, grazing));
            }
        }
        let Some((_, t, m, grazing)) = best else {
            return Err(ShootError::Escape { step });
        };
        if grazing {
            return Err(ShootError::Grazing { step });
        }
        let o = scene.obstacle(m);
        let q = p + v.scale(t);
        let n = (q - V2::lift(o.center[0], o.center[1])).scale(T::lift(1.0 / o.radius));
        let vn = v.dot(n);
        v = (v - n.scale(vn + vn)).normalized();
        p = q;
        out.push(GenericBounce {
            obstacle: m,
            position: p,
            direction: v,
            flight: t,
        });
    }
    Ok(out)
}

/// Iterates the billiard ball map from `start` for `n_bounces` reflections.
///
/// Each step casts the ray against every disk, takes the first impact and
/// reflects the direction. Escape and grazing end the trajectory with an
/// error naming the step.
pub fn shoot(scene: &Scene, start: PhasePoint, n_bounces: usize) -> Result<Vec<Bounce>, ShootError> {
    let p = V2::<f64>::lift(start.position.x, start.position.y);
    let v = V2::<f64>::lift(start.direction.x, start.direction.y).normalized();
    Ok(shoot_generic(scene, p, v, n_bounces)?
        .into_iter()
        .map(|b| Bounce {
            obstacle: b.obstacle,
            state: PhasePoint {
                position: Vec2::new(b.position.x, b.position.y),
                direction: Vec2::new(b.direction.x, b.direction.y),
            },
            flight: b.flight,
        })
        .collect())
}

/// Extended-precision phase point.
pub type PhasePointDd = (V2<DoubleDouble>, V2<DoubleDouble>);

/// [`shoot`] carried out in double-double arithmetic.
pub fn shoot_extended(
    scene: &Scene,
    start: PhasePointDd,
    n_bounces: usize,
) -> Result<Vec<(usize, PhasePointDd)>, ShootError> {
    Ok(shoot_generic(scene, start.0, start.1.normalized(), n_bounces)?
        .into_iter()
        .map(|b| (b.obstacle, (b.position, b.direction)))
        .collect())
}

/// Reflection points of `orbit` refined in double-double arithmetic.
///
/// Newton steps use the double-double gradient of the perimeter and the
/// `f64` Hessian; each boundary point is rotated about its center by the
/// (tiny) correction angle.
pub fn polish_extended(scene: &Scene, orbit: &PeriodicOrbit) -> Vec<V2<DoubleDouble>> {
    type Dd = DoubleDouble;
    let word = orbit.config.word();
    let k = word.len();
    let centers: Vec<V2<Dd>> = word
        .iter()
        .map(|&i| V2::lift(scene.obstacle(i).center[0], scene.obstacle(i).center[1]))
        .collect();
    let radii: Vec<Dd> = word.iter().map(|&i| Dd::from_f64(scene.obstacle(i).radius)).collect();
    let mut units: Vec<V2<Dd>> = orbit
        .params
        .iter()
        .map(|t| V2::lift(t.cos(), t.sin()).normalized())
        .collect();
    let points = |units: &[V2<Dd>]| -> Vec<V2<Dd>> { (0..k).map(|j| centers[j] + units[j].scale(radii[j])).collect() };
    for _ in 0..3 {
        let pts = points(&units);
        let grad: Vec<f64> = (0..k)
            .map(|j| {
                let tangent = units[j].perp().scale(radii[j]);
                let to_next = (pts[j] - pts[(j + 1) % k]).normalized();
                let to_prev = (pts[j] - pts[(j + k - 1) % k]).normalized();
                (tangent.dot(to_next) + tangent.dot(to_prev)).lower()
            })
            .collect();
        let theta: Vec<f64> = units.iter().map(|u| u.y.lower().atan2(u.x.lower())).collect();
        let (_, _, h) = length_derivatives(scene, word, &theta);
        let Some(chol) = h.cholesky() else { break };
        let step = chol.solve(&DVector::from_vec(grad));
        for j in 0..k {
            let d = -step[j];
            let d2 = d * d;
            let c = Dd::from_f64(1.0) - Dd::from_f64(d2 / 2.0) + Dd::from_f64(d2 * d2 / 24.0);
            let s = Dd::from_f64(d) * (Dd::from_f64(1.0) - Dd::from_f64(d2 / 6.0) + Dd::from_f64(d2 * d2 / 120.0));
            let u = units[j];
            units[j] = V2::new(u.x * c - u.y * s, u.x * s + u.y * c).normalized();
        }
    }
    points(&units)
}

/// Independent re-check of a solved orbit.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitReport {
    /// Largest `| |x - c| - r |` over reflection points.
    pub boundary_defect: f64,
    /// Largest `|R(v_in) - v_out|` over reflections.
    pub reflection_defect: f64,
    pub clearance: f64,
    /// Smallest `cos(psi0) - <v_out, inward normal>`; negative means outside the cone.
    pub cone_margin: f64,
    /// Largest move of a reflection point under extended-precision polishing.
    pub polish_shift: f64,
    /// Worst k-bounce round trip from any reflection, in extended precision.
    pub roundtrip_deviation: f64,
    /// Same round trip in plain `f64`, for reference.
    pub roundtrip_deviation_f64: f64,
    pub failures: Vec<String>,
}

impl OrbitReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Re-derives the orbit from its parameters with formulas independent of the
/// solver and round-trips every reflection through the shooting oracle.
pub fn validate_orbit(vs: &ValidatedScene, orbit: &PeriodicOrbit) -> OrbitReport {
    let scene = vs.scene();
    let consts = vs.constants();
    let word = orbit.config.word();
    let k = word.len();
    let mut failures = Vec::new();
    if word.iter().any(|&i| i >= scene.len()) || orbit.params.len() != k {
        return OrbitReport {
            boundary_defect: f64::INFINITY,
            reflection_defect: f64::INFINITY,
            clearance: f64::NEG_INFINITY,
            cone_margin: f64::NEG_INFINITY,
            polish_shift: f64::INFINITY,
            roundtrip_deviation: f64::INFINITY,
            roundtrip_deviation_f64: f64::INFINITY,
            failures: vec!["configuration does not fit the scene".into()],
        };
    }
    let pts: Vec<Vec2> = orbit
        .params
        .iter()
        .zip(word)
        .map(|(t, &i)| {
            let o = scene.obstacle(i);
            o.c() + o.radius * Vec2::new(t.cos(), t.sin())
        })
        .collect();
    let boundary_defect = orbit
        .points
        .iter()
        .zip(word)
        .map(|(p, &i)| scene.obstacle(i).signed_distance(*p).abs())
        .fold(0.0, f64::max);

    let mut reflection_defect = 0.0f64;
    let mut cone_margin = f64::INFINITY;
    let cos_psi0 = consts.psi0.cos();
    for j in 0..k {
        let o = scene.obstacle(word[j]);
        let inward = (o.c() - pts[j]) / o.radius;
        let v_in = (pts[j] - pts[(j + k - 1) % k]).normalize();
        let v_out = (pts[(j + 1) % k] - pts[j]).normalize();
        let mirrored = v_in - 2.0 * v_in.dot(&inward) * inward;
        reflection_defect = reflection_defect.max((mirrored - v_out).norm());
        cone_margin = cone_margin.min(cos_psi0 - v_out.dot(&inward));
    }

    let mut clearance = f64::INFINITY;
    for j in 0..k {
        let a = pts[j];
        let b = pts[(j + 1) % k];
        let len = (b - a).norm();
        let d = (b - a) / len;
        for (m, o) in scene.obstacles.iter().enumerate() {
            if m == word[j] || m == word[(j + 1) % k] {
                continue;
            }
            // minimize |a + t d - c|^2 over t in [0, len]
            let w = o.c() - a;
            let t = w.dot(&d).clamp(0.0, len);
            let q = w.norm_squared() - 2.0 * t * w.dot(&d) + t * t;
            clearance = clearance.min(q.max(0.0).sqrt() - o.radius);
        }
    }

    let polished = polish_extended(scene, orbit);
    let polish_shift = polished
        .iter()
        .zip(&pts)
        .map(|(q, p)| {
            let (x, y) = q.lower();
            (Vec2::new(x, y) - p).norm()
        })
        .fold(0.0, f64::max);

    let mut roundtrip = 0.0f64;
    let mut roundtrip_f64 = 0.0f64;
    for j in 0..k {
        let p = polished[j];
        let v = (polished[(j + 1) % k] - p).normalized();
        let dev = match shoot_extended(scene, (p, v), k) {
            Ok(path) => {
                let visited_ok = path
                    .iter()
                    .enumerate()
                    .all(|(m, (obst, _))| *obst == word[(j + 1 + m) % k]);
                let (_, (q, w)) = path[k - 1];
                let dp = (q - p).norm().lower();
                let dv = (w - v).norm().lower();
                if visited_ok {
                    dp.max(dv)
                } else {
                    f64::INFINITY
                }
            }
            Err(_) => f64::INFINITY,
        };
        roundtrip = roundtrip.max(dev);
        let start = PhasePoint::new(pts[j], pts[(j + 1) % k] - pts[j]);
        let dev64 = match shoot(scene, start, k) {
            Ok(path) => path[k - 1].state.distance(&start),
            Err(_) => f64::INFINITY,
        };
        roundtrip_f64 = roundtrip_f64.max(dev64);
    }

    if !(boundary_defect <= RESIDUAL_TOL) {
        failures.push(format!("boundary defect {boundary_defect:e}"));
    }
    if !(reflection_defect <= RESIDUAL_TOL) {
        failures.push(format!("reflection defect {reflection_defect:e}"));
    }
    if !(clearance > SEPARATION_TOL * consts.d1) {
        failures.push(format!("clearance {clearance:e}"));
    }
    if !(cone_margin >= -RESIDUAL_TOL) {
        failures.push(format!("outgoing cone margin {cone_margin:e}"));
    }
    if !(polish_shift <= RESIDUAL_TOL) {
        failures.push(format!("polish shift {polish_shift:e}"));
    }
    if !(roundtrip <= ROUNDTRIP_TOL) {
        failures.push(format!("round trip {roundtrip:e}"));
    }
    OrbitReport {
        boundary_defect,
        reflection_defect,
        clearance,
        cone_margin,
        polish_shift,
        roundtrip_deviation: roundtrip,
        roundtrip_deviation_f64: roundtrip_f64,
        failures,
    }
}

/// Finite-difference Jacobian of the transverse flow map from the section
/// through `from` to the section through `to`, following `bounces`
/// reflections.
///
/// Transverse coordinates are the offset along the left normal of the
/// reference direction and the signed rotation of the direction. Central
/// differences with step `h` in both coordinates.
pub fn transverse_jacobian_fd(
    scene: &Scene,
    from: PhasePoint,
    to: PhasePoint,
    bounces: usize,
    h: f64,
) -> Result<Matrix2<f64>, ShootError> {
    let v0 = from.direction;
    let perp0 = Vec2::new(-v0.y, v0.x);
    let to_perp = Vec2::new(-to.direction.y, to.direction.x);
    // Start the perturbed ray a little way down the first segment so it is
    // never inside the obstacle it leaves.
    let lead = {
        let path = shoot(scene, from, 1)?;
        0.5 * path[0].flight
    };
    let image = |a: f64, b: f64| -> Result<[f64; 2], ShootError> {
        let (s, c) = b.sin_cos();
        let v = Vec2::new(c * v0.x - s * v0.y, s * v0.x + c * v0.y);
        let p = from.position + a * perp0 + lead * v;
        let path = shoot(scene, PhasePoint::new(p, v), bounces)?;
        let end = path[bounces - 1].state;
        let w = end.direction;
        let lambda = -(end.position - to.position).dot(&to.direction) / w.dot(&to.direction);
        let q = end.position + lambda * w;
        let y = (q - to.position).dot(&to_perp);
        let angle = cross(to.direction, w).atan2(to.direction.dot(&w));
        Ok([y, angle])
    };
    let ap = image(h, 0.0)?;
    let am = image(-h, 0.0)?;
    let bp = image(0.0, h)?;
    let bm = image(0.0, -h)?;
    Ok(Matrix2::new(
        (ap[0] - am[0]) / (2.0 * h),
        (bp[0] - bm[0]) / (2.0 * h),
        (ap[1] - am[1]) / (2.0 * h),
        (bp[1] - bm[1]) / (2.0 * h),
    ))
}
