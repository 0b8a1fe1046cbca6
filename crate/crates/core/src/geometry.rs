//! Obstacles, scenes and the scene constants used by every later stage.
//!
//! Obstacles are disks in the plane. Everything that later modules need from
//! an obstacle goes through [`ConvexBoundary`], so other strictly convex
//! shapes can be slotted in without touching the solvers.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec2 = Vector2<f64>;

/// Relative tolerance (in units of `d1`) for "strictly positive distance".
pub const SEPARATION_TOL: f64 = 1e-9;

const PSI0_SAMPLES: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("a scene needs at least 3 obstacles, got {0}")]
    TooFewObstacles(usize),
    #[error("obstacle {index} has invalid radius {radius}")]
    InvalidRadius { index: usize, radius: f64 },
    #[error("obstacle {index} has a non-finite center")]
    InvalidCenter { index: usize },
    #[error("obstacles {0} and {1} overlap or touch")]
    OverlappingObstacles(usize, usize),
    #[error("obstacle {2} meets the convex hull of obstacles {0} and {1}")]
    EclipseViolation(usize, usize, usize),
    #[error("obstacle index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("hull subset is empty")]
    EmptySubset,
    #[error("obstacle {0} is part of the hull subset")]
    TargetInSubset(usize),
}

/// Boundary of a compact strictly convex obstacle, parametrized by angle.
pub trait ConvexBoundary {
    fn boundary_point(&self, theta: f64) -> Vec2;
    /// Derivative of [`boundary_point`](Self::boundary_point) with respect to `theta`.
    fn boundary_tangent(&self, theta: f64) -> Vec2;
    /// Unit normal at the boundary point, pointing into the obstacle.
    fn inward_normal(&self, theta: f64) -> Vec2;
    fn curvature(&self, theta: f64) -> f64;
    /// Support function `max_{x in obstacle} <x, u>` for a unit vector `u`.
    fn support(&self, u: Vec2) -> f64;
}

/// A closed disk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Obstacle {
    pub fn new(x: f64, y: f64, radius: f64) -> Self {
        Self { center: [x, y], radius }
    }

    #[inline]
    pub fn c(&self) -> Vec2 {
        Vec2::new(self.center[0], self.center[1])
    }

    /// Boundary angle of a point (not necessarily on the boundary).
    pub fn angle_of(&self, p: Vec2) -> f64 {
        let d = p - self.c();
        d.y.atan2(d.x)
    }

    /// Signed distance from `p` to the disk (negative inside).
    pub fn signed_distance(&self, p: Vec2) -> f64 {
        (p - self.c()).norm() - self.radius
    }

    /// Distance from the closed segment `[a, b]` to the disk, clamped at zero.
    pub fn segment_distance(&self, a: Vec2, b: Vec2) -> f64 {
        (point_segment_distance(self.c(), a, b) - self.radius).max(0.0)
    }

    /// Gap between two disks, `|c_i - c_j| - r_i - r_j`.
    pub fn gap(&self, other: &Obstacle) -> f64 {
        (self.c() - other.c()).norm() - self.radius - other.radius
    }
}

impl ConvexBoundary for Obstacle {
    #[inline]
    fn boundary_point(&self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        self.c() + self.radius * Vec2::new(c, s)
    }

    #[inline]
    fn boundary_tangent(&self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        self.radius * Vec2::new(-s, c)
    }

    #[inline]
    fn inward_normal(&self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(-c, -s)
    }

    #[inline]
    fn curvature(&self, _theta: f64) -> f64 {
        1.0 / self.radius
    }

    #[inline]
    fn support(&self, u: Vec2) -> f64 {
        self.c().dot(&u) + self.radius
    }
}

/// A collection of obstacles with a label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub label: String,
    #[serde(rename = "obstacle")]
    pub obstacles: Vec<Obstacle>,
}

impl Scene {
    pub fn new(label: impl Into<String>, obstacles: Vec<Obstacle>) -> Self {
        Self {
            label: label.into(),
            obstacles,
        }
    }

    /// Three disks of radius `radius` on the vertices of an equilateral
    /// triangle of side `side`, labelled `S3(side,radius)`.
    pub fn equilateral(side: f64, radius: f64) -> Self {
        let h = side * 3f64.sqrt() / 2.0;
        Self::new(
            format!("S3({side},{radius})"),
            vec![
                Obstacle::new(0.0, 0.0, radius),
                Obstacle::new(side, 0.0, radius),
                Obstacle::new(side / 2.0, h, radius),
            ],
        )
    }

    pub fn len(&self) -> usize {
        self.obstacles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obstacles.is_empty()
    }

    pub fn obstacle(&self, i: usize) -> &Obstacle {
        &self.obstacles[i]
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }

    /// Applies `x -> rot(angle) x + shift` to every center.
    pub fn rigid_motion(&self, angle: f64, shift: Vec2) -> Self {
        let (s, c) = angle.sin_cos();
        let obstacles = self
            .obstacles
            .iter()
            .map(|o| {
                let p = o.c();
                let q = Vec2::new(c * p.x - s * p.y, s * p.x + c * p.y) + shift;
                Obstacle::new(q.x, q.y, o.radius)
            })
            .collect();
        Self::new(self.label.clone(), obstacles)
    }

    pub fn gap(&self, i: usize, j: usize) -> f64 {
        self.obstacles[i].gap(&self.obstacles[j])
    }

    /// Smallest pairwise gap between distinct obstacles.
    pub fn min_gap(&self) -> f64 {
        self.pairs().map(|(i, j)| self.gap(i, j)).fold(f64::INFINITY, f64::min)
    }

    fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let r = self.len();
        (0..r).flat_map(move |i| ((i + 1)..r).map(move |j| (i, j)))
    }
}

/// Constants derived from a valid scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConstants {
    /// Twice the smallest pairwise gap; a lower bound for every period.
    pub d0: f64,
    /// Largest pairwise gap.
    pub d1: f64,
    /// `2 d1 / d0`.
    pub d2: f64,
    /// Smallest distance from an obstacle to the hull of all the others.
    pub eta0: f64,
    /// Lower bound on the angle between an outgoing segment and the inward
    /// normal over every admissible reflection, in `(pi/2, pi)`.
    pub psi0: f64,
}

impl SceneConstants {
    pub fn csv_header() -> &'static str {
        "label,d0,d1,d2,eta0,psi0"
    }

    pub fn csv_row(&self, label: &str) -> String {
        format!(
            "{},{},{},{},{},{}",
            label, self.d0, self.d1, self.d2, self.eta0, self.psi0
        )
    }
}

/// A scene that passed [`validate_scene`], together with its constants.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedScene {
    scene: Scene,
    constants: SceneConstants,
}

impl ValidatedScene {
    pub fn new(scene: Scene) -> Result<Self, GeometryError> {
        let constants = validate_scene(&scene)?;
        Ok(Self { scene, constants })
    }

    /// Pairs a scene with constants without re-checking either.
    pub fn from_parts_unchecked(scene: Scene, constants: SceneConstants) -> Self {
        Self { scene, constants }
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn constants(&self) -> &SceneConstants {
        &self.constants
    }

    pub fn obstacle(&self, i: usize) -> &Obstacle {
        self.scene.obstacle(i)
    }

    pub fn len(&self) -> usize {
        self.scene.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scene.is_empty()
    }
}

/// Checks the scene and computes its constants.
///
/// Fails on fewer than three obstacles, bad radii, overlapping obstacles, or
/// an obstacle meeting the convex hull of two others.
pub fn validate_scene(scene: &Scene) -> Result<SceneConstants, GeometryError> {
    let r = scene.len();
    if r < 3 {
        return Err(GeometryError::TooFewObstacles(r));
    }
    for (index, o) in scene.obstacles.iter().enumerate() {
        if !(o.radius.is_finite() && o.radius > 0.0) {
            return Err(GeometryError::InvalidRadius {
                index,
                radius: o.radius,
            });
        }
        if !(o.center[0].is_finite() && o.center[1].is_finite()) {
            return Err(GeometryError::InvalidCenter { index });
        }
    }
    let mut min_gap = f64::INFINITY;
    let mut max_gap = 0.0f64;
    for (i, j) in scene.pairs() {
        let g = scene.gap(i, j);
        if g <= 0.0 {
            return Err(GeometryError::OverlappingObstacles(i, j));
        }
        min_gap = min_gap.min(g);
        max_gap = max_gap.max(g);
    }
    let tol = SEPARATION_TOL * max_gap;
    for k in 0..r {
        for (i, j) in scene.pairs() {
            if i == k || j == k {
                continue;
            }
            if hull_distance(scene, &[i, j], k)? <= tol {
                return Err(GeometryError::EclipseViolation(i, j, k));
            }
        }
    }
    let mut eta0 = f64::INFINITY;
    for k in 0..r {
        let rest: Vec<usize> = (0..r).filter(|&j| j != k).collect();
        eta0 = eta0.min(hull_distance(scene, &rest, k)?);
    }
    let d0 = 2.0 * min_gap;
    Ok(SceneConstants {
        d0,
        d1: max_gap,
        d2: 2.0 * max_gap / d0,
        eta0,
        psi0: PI - max_reflection_angle(scene),
    })
}

/// Euclidean distance from obstacle `k` to the convex hull of the obstacles
/// listed in `subset`.
///
/// Uses `dist(p, K) = max_{|u|=1} min_i (<p - c_i, u> - r_i)` for the hull
/// `K` of the disks; the maximum sits either at the peak of one term or at a
/// crossing of two terms, and both candidate sets are enumerated in closed
/// form.
pub fn hull_distance(scene: &Scene, subset: &[usize], k: usize) -> Result<f64, GeometryError> {
    let r = scene.len();
    if k >= r {
        return Err(GeometryError::IndexOutOfRange(k));
    }
    if subset.is_empty() {
        return Err(GeometryError::EmptySubset);
    }
    for &i in subset {
        if i >= r {
            return Err(GeometryError::IndexOutOfRange(i));
        }
        if i == k {
            return Err(GeometryError::TargetInSubset(k));
        }
    }
    let p = scene.obstacle(k).c();
    let disks: Vec<&Obstacle> = subset.iter().map(|&i| scene.obstacle(i)).collect();
    let value = |u: Vec2| {
        disks
            .iter()
            .map(|d| (p - d.c()).dot(&u) - d.radius)
            .fold(f64::INFINITY, f64::min)
    };
    let mut best = f64::NEG_INFINITY;
    for d in &disks {
        let w = p - d.c();
        let n = w.norm();
        if n > 0.0 {
            best = best.max(value(w / n));
        }
    }
    for (a, da) in disks.iter().enumerate() {
        for db in disks.iter().skip(a + 1) {
            // <c_b - c_a, u> = r_a - r_b
            let w = db.c() - da.c();
            let n = w.norm();
            let ratio = (da.radius - db.radius) / n;
            if n == 0.0 || ratio.abs() > 1.0 {
                continue;
            }
            let base = w.y.atan2(w.x);
            let spread = ratio.acos();
            for phi in [base + spread, base - spread] {
                best = best.max(value(Vec2::new(phi.cos(), phi.sin())));
            }
        }
    }
    Ok((best - scene.obstacle(k).radius).max(0.0))
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + t * ab)).norm()
}

fn wrap_angle(a: f64) -> f64 {
    let mut x = a % (2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    } else if x <= -PI {
        x += 2.0 * PI;
    }
    x
}

/// Largest reflection angle (measured from the outward normal) available at
/// the boundary point of obstacle `j` with angle `theta`.
///
/// From the boundary point each other obstacle subtends a cone bounded by its
/// two tangent lines. A reflection with angle `a` needs both `a` and `-a` to
/// fall in the union of these cones; the result is the largest such `|a|`, or
/// `None` when no reflection is possible there.
pub fn max_reflection_angle_at(scene: &Scene, j: usize, theta: f64) -> Option<f64> {
    let o = scene.obstacle(j);
    let y = o.boundary_point(theta);
    let mut cones: Vec<(f64, f64)> = Vec::with_capacity(scene.len());
    for (m, other) in scene.obstacles.iter().enumerate() {
        if m == j {
            continue;
        }
        let w = other.c() - y;
        let dist = w.norm();
        let half = (other.radius / dist).min(1.0).asin();
        let rel = wrap_angle(w.y.atan2(w.x) - theta);
        let lo = (rel - half).max(-FRAC_PI_2);
        let hi = (rel + half).min(FRAC_PI_2);
        if lo <= hi {
            cones.push((lo, hi));
        }
    }
    let mut best: Option<f64> = None;
    for &(lo, hi) in &cones {
        for &(lo2, hi2) in &cones {
            // I ∩ (-I')
            let a = lo.max(-hi2);
            let b = hi.min(-lo2);
            if a <= b {
                let v = a.abs().max(b.abs());
                best = Some(best.map_or(v, |x: f64| x.max(v)));
            }
        }
    }
    best
}

fn max_reflection_angle(scene: &Scene) -> f64 {
    let mut best = 0.0f64;
    for j in 0..scene.len() {
        // Anchor the sweep at the direction of the nearest neighbour so the
        // sampling grid moves with the scene under rigid motions.
        let cj = scene.obstacle(j).c();
        let anchor = (0..scene.len())
            .filter(|&m| m != j)
            .min_by(|&a, &b| scene.gap(j, a).total_cmp(&scene.gap(j, b)))
            .map(|m| {
                let w = scene.obstacle(m).c() - cj;
                w.y.atan2(w.x)
            })
            .unwrap_or(0.0);
        let f = |t: f64| max_reflection_angle_at(scene, j, t).unwrap_or(f64::NEG_INFINITY);
        let step = 2.0 * PI / PSI0_SAMPLES as f64;
        let samples: Vec<f64> = (0..PSI0_SAMPLES).map(|i| f(anchor + i as f64 * step)).collect();
        for i in 0..PSI0_SAMPLES {
            let prev = samples[(i + PSI0_SAMPLES - 1) % PSI0_SAMPLES];
            let next = samples[(i + 1) % PSI0_SAMPLES];
            let here = samples[i];
            if here.is_finite() && here >= prev && here >= next {
                let t = anchor + i as f64 * step;
                best = best.max(golden_max(&f, t - step, t + step));
            }
        }
    }
    best
}

/// Golden-section search for a maximum of `f` on `[a, b]`.
fn golden_max(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut best = f1.max(f2).max(f(a)).max(f(b));
    while b - a > 1e-15 * (1.0 + a.abs()) {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
        best = best.max(f1).max(f2);
    }
    best
}
