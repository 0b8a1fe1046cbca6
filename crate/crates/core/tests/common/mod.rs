//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI, TAU};

use billiard_spectrum::geometry::{Obstacle, Scene, ValidatedScene, Vec2};
use billiard_spectrum::orbit::{shoot, PhasePoint, ShootError};
use billiard_spectrum::spectrum::SpectrumEntry;
use billiard_spectrum::symbolic::{Configuration, Parity};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub fn s3() -> ValidatedScene {
    ValidatedScene::new(Scene::equilateral(6.0, 1.0)).expect("reference scene is valid")
}

/// Four unit disks on a rhombus; the two diagonal 2-bounce rays and the
/// 4-bounce ray around it reflect at the same point of disk 2.
pub fn rhombus() -> ValidatedScene {
    ValidatedScene::new(Scene::new(
        "rhombus",
        vec![
            Obstacle::new(0.0, 0.0, 1.0),
            Obstacle::new(8.0, 0.0, 1.0),
            Obstacle::new(4.0, 4.0, 1.0),
            Obstacle::new(4.0, -4.0, 1.0),
        ],
    ))
    .expect("rhombus scene is valid")
}

/// Random scenes of 3 or 4 disks, centers in `[0, 8]^2`, radii in
/// `[0.6, 1.4]`, pairwise gaps at least 1.2, non-eclipse enforced by
/// rejection.
pub fn fleet(seed: u64, n: usize) -> Vec<ValidatedScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let count = rng.gen_range(3..=4);
        let obstacles: Vec<Obstacle> = (0..count)
            .map(|_| {
                Obstacle::new(
                    rng.gen_range(0.0..8.0),
                    rng.gen_range(0.0..8.0),
                    rng.gen_range(0.6..1.4),
                )
            })
            .collect();
        let scene = Scene::new(format!("fleet-{seed}-{}", out.len()), obstacles);
        if scene.min_gap() < 1.2 {
            continue;
        }
        if let Ok(vs) = ValidatedScene::new(scene) {
            out.push(vs);
        }
    }
    out
}

/// Finite-difference step balancing truncation against rounding for a map
/// whose derivatives scale like `trace`.
pub fn adaptive_step(trace: f64) -> f64 {
    (1e-16 / (trace * trace)).cbrt().min(1e-6)
}

/// Primitive entries keyed by configuration.
pub fn primitive_lengths(entries: &[SpectrumEntry]) -> BTreeMap<Configuration, f64> {
    entries
        .iter()
        .filter(|e| e.repetition == 1)
        .map(|e| (e.config.clone(), e.tau))
        .collect()
}

/// Builds spectrum entries with unit linearization weight for planted
/// length lists.
pub fn planted_entry(word: &str, tau: f64, weight: f64) -> SpectrumEntry {
    let config = Configuration::parse(word).expect("planted word is valid");
    let parity = config.parity();
    SpectrumEntry {
        config,
        repetition: 1,
        tau,
        tau_primitive: tau,
        parity,
        weight,
    }
}

pub fn parity_of(k: usize) -> Parity {
    Parity::from_reflections(k)
}

// ---------------------------------------------------------------------------
// Brute-force shooting sweep
// ---------------------------------------------------------------------------

/// What `k` reflections from a launch state look like: the obstacles hit,
/// or, for a ray that escapes or grazes first, the obstacles hit before and
/// which side of the last ray each obstacle center lies on. The side pattern
/// separates the escape regions on either side of a thin strip of rays that
/// do hit the next obstacle.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Itinerary {
    Full(Vec<usize>),
    Cut(Vec<usize>, u8, Vec<bool>),
}

struct Launch<'a> {
    scene: &'a Scene,
    obstacle: usize,
    k: usize,
}

impl Launch<'_> {
    fn state(&self, theta: f64, phi: f64) -> PhasePoint {
        let o = self.scene.obstacle(self.obstacle);
        let n = Vec2::new(theta.cos(), theta.sin());
        let p = o.c() + n * o.radius;
        let (s, c) = phi.sin_cos();
        PhasePoint::new(p, Vec2::new(c * n.x - s * n.y, s * n.x + c * n.y))
    }

    fn itinerary(&self, theta: f64, phi: f64) -> Itinerary {
        let start = self.state(theta, phi);
        match shoot(self.scene, start, self.k) {
            Ok(b) => Itinerary::Full(b.iter().map(|b| b.obstacle).collect()),
            Err(e) => {
                let (step, tag) = match e {
                    ShootError::Escape { step } => (step, 0),
                    ShootError::Grazing { step } => (step, 1),
                    ShootError::StartInside { .. } => (0, 2),
                };
                let before = shoot(self.scene, start, step).unwrap_or_default();
                let last = before.last().map_or(start, |b| b.state);
                let sides = self
                    .scene
                    .obstacles
                    .iter()
                    .map(|o| {
                        let w = o.c() - last.position;
                        last.direction.x * w.y - last.direction.y * w.x > 0.0
                    })
                    .collect();
                Itinerary::Cut(before.iter().map(|b| b.obstacle).collect(), tag, sides)
            }
        }
    }

    /// Final boundary angle and outgoing angle after `k` reflections, plus the
    /// travelled length.
    fn end(&self, theta: f64, phi: f64) -> Option<(f64, f64, f64)> {
        let b = shoot(self.scene, self.state(theta, phi), self.k).ok()?;
        let last = b.last()?;
        if last.obstacle != self.obstacle {
            return None;
        }
        let o = self.scene.obstacle(self.obstacle);
        let r = last.state.position - o.c();
        let theta_end = r.y.atan2(r.x);
        let n = r / r.norm();
        let v = last.state.direction;
        let phi_end = (n.x * v.y - n.y * v.x).atan2(n.dot(&v));
        Some((theta_end, phi_end, b.iter().map(|b| b.flight).sum()))
    }

    /// Runs of constant itinerary over the outgoing angle at fixed `theta`,
    /// located by bisecting every change between neighbouring samples.
    fn runs(&self, theta: f64) -> Vec<(Vec<usize>, f64, f64)> {
        const SAMPLES: usize = 256;
        let lo = -FRAC_PI_2 + 1e-9;
        let hi = FRAC_PI_2 - 1e-9;
        let mut pts: Vec<(f64, Itinerary)> = Vec::new();
        let grid: Vec<f64> = (0..=SAMPLES)
            .map(|i| lo + (hi - lo) * i as f64 / SAMPLES as f64)
            .collect();
        let mut prev = (grid[0], self.itinerary(theta, grid[0]));
        pts.push(prev.clone());
        for &phi in &grid[1..] {
            let cur = (phi, self.itinerary(theta, phi));
            self.refine(theta, &prev, &cur, &mut pts, 0);
            pts.push(cur.clone());
            prev = cur;
        }
        let mut out: Vec<(Vec<usize>, f64, f64)> = Vec::new();
        for (phi, it) in pts {
            let Itinerary::Full(word) = it else { continue };
            match out.last_mut() {
                Some((w, _, end)) if *w == word => *end = phi,
                _ => out.push((word, phi, phi)),
            }
        }
        out
    }

    fn refine(
        &self,
        theta: f64,
        a: &(f64, Itinerary),
        b: &(f64, Itinerary),
        pts: &mut Vec<(f64, Itinerary)>,
        depth: u32,
    ) {
        if a.1 == b.1 || depth > 50 || b.0 - a.0 < 1e-14 {
            return;
        }
        let mid = 0.5 * (a.0 + b.0);
        let m = (mid, self.itinerary(theta, mid));
        self.refine(theta, a, &m, pts, depth + 1);
        pts.push(m.clone());
        self.refine(theta, &m, b, pts, depth + 1);
    }

    /// For each full itinerary returning to the launch obstacle, the outgoing
    /// angle whose ray lands back at `theta`, with the direction mismatch
    /// there and the travelled length.
    fn closing(&self, theta: f64) -> BTreeMap<Vec<usize>, (f64, f64, f64)> {
        let mut out = BTreeMap::new();
        for (word, lo, hi) in self.runs(theta) {
            if word.last() != Some(&self.obstacle) {
                continue;
            }
            let f = |phi: f64| self.end(theta, phi).map(|(t, _, _)| wrap(t - theta));
            let n = 32;
            let mut root = None;
            let mut prev: Option<(f64, f64)> = None;
            for i in 0..=n {
                let phi = lo + (hi - lo) * i as f64 / n as f64;
                let Some(v) = f(phi) else { continue };
                if let Some((pa, va)) = prev {
                    if va.signum() != v.signum() && (va - v).abs() < PI {
                        root = bisect(&|p| f(p).unwrap_or(f64::NAN), pa, phi, va);
                        break;
                    }
                }
                prev = Some((phi, v));
            }
            let Some(phi) = root else { continue };
            if let Some((t, phi_end, len)) = self.end(theta, phi) {
                if wrap(t - theta).abs() < 1e-9 {
                    out.insert(word, (phi, wrap(phi_end - phi), len));
                }
            }
        }
        out
    }
}

fn wrap(a: f64) -> f64 {
    let mut x = a % TAU;
    if x > PI {
        x -= TAU;
    } else if x < -PI {
        x += TAU;
    }
    x
}

fn bisect(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, mut fa: f64) -> Option<f64> {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm.is_nan() {
            return None;
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

/// Every periodic ray of period `<= t_max` found by sweeping launch states
/// with the shooting map alone.
///
/// For a launch angle `theta` on obstacle `i`, the fan of outgoing angles is
/// split into runs of equal `k`-step itinerary; inside a run, the outgoing
/// angle that returns the ray to `theta` is found by bisection. A periodic
/// ray is a sign change in `theta` of the remaining direction mismatch.
pub fn shooting_sweep(vs: &ValidatedScene, t_max: f64, theta_samples: usize) -> BTreeMap<Configuration, f64> {
    let scene = vs.scene();
    let k_max = (t_max / scene.min_gap()).floor() as usize;
    let mut found = BTreeMap::new();
    for obstacle in 0..scene.len() {
        for k in 2..=k_max {
            let launch = Launch { scene, obstacle, k };
            let thetas: Vec<f64> = (0..=theta_samples)
                .map(|i| TAU * i as f64 / theta_samples as f64)
                .collect();
            let scans: Vec<_> = thetas.par_iter().map(|&t| launch.closing(t)).collect();
            for w in 0..theta_samples {
                for (word, &(_, ga, _)) in &scans[w] {
                    let Some(&(_, gb, _)) = scans[w + 1].get(word) else {
                        continue;
                    };
                    if ga.signum() == gb.signum() {
                        continue;
                    }
                    let g = |t: f64| launch.closing(t).get(word).map_or(f64::NAN, |v| v.1);
                    let Some(theta) = bisect(&g, thetas[w], thetas[w + 1], ga) else {
                        continue;
                    };
                    let Some(&(_, mismatch, len)) = launch.closing(theta).get(word) else {
                        continue;
                    };
                    if mismatch.abs() > 1e-8 || len > t_max + 1e-9 {
                        continue;
                    }
                    if let Ok(config) = Configuration::new(word.clone()) {
                        found.insert(config, len);
                    }
                }
            }
        }
    }
    found
}
