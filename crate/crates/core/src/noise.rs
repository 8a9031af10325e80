//! Observation noise and independent thinning.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::PointPattern;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Gaussian localization error.
    Displacement,
    /// Missed detections by distance-dependent thinning.
    HardcoreThinning,
}

/// How the random exclusion radius of [`hardcore_thin`] is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffRadius {
    /// `|N(0, δ²)|`.
    #[default]
    Univariate,
    /// Euclidean norm of a planar `N(0, δ² I)` draw.
    PlanarNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Dimensionless magnitude.
    pub c: f64,
    /// Grid spacing the magnitude is measured in.
    pub dx: f64,
    #[serde(default)]
    pub cutoff: CutoffRadius,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, c: f64, dx: f64) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) || !(dx > 0.0 && dx.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise needs c >= 0 and dx > 0, got c={c}, dx={dx}"
            )));
        }
        Ok(Self {
            kind,
            c,
            dx,
            cutoff: CutoffRadius::Univariate,
        })
    }

    pub fn with_cutoff(mut self, cutoff: CutoffRadius) -> Self {
        self.cutoff = cutoff;
        self
    }

    /// Noise standard deviation `δ = c·Δx`.
    pub fn delta(&self) -> f64 {
        self.c * self.dx
    }

    /// Applies the noise described by `kind`.
    pub fn apply<R: Rng + ?Sized>(&self, pattern: &PointPattern, rng: &mut R) -> PointPattern {
        match self.kind {
            NoiseKind::Displacement => displace(pattern, self, rng),
            NoiseKind::HardcoreThinning => hardcore_thin(pattern, self, rng),
        }
    }
}

/// Moves every point by an independent `N(0, δ² I)` offset; points that
/// leave the window are dropped.
pub fn displace<R: Rng + ?Sized>(
    pattern: &PointPattern,
    spec: &NoiseSpec,
    rng: &mut R,
) -> PointPattern {
    let delta = spec.delta();
    if delta == 0.0 {
        return pattern.clone();
    }
    let window = *pattern.window();
    let points = pattern
        .points()
        .iter()
        .filter_map(|p| {
            let ex: f64 = StandardNormal.sample(rng);
            let ey: f64 = StandardNormal.sample(rng);
            let q = [p[0] + delta * ex, p[1] + delta * ey];
            window.contains(q[0], q[1]).then_some(q)
        })
        .collect();
    PointPattern::from_trusted(points, window)
}

/// Visits points in a uniformly random order and keeps a point only if no
/// previously kept point lies within its random cutoff radius.
pub fn hardcore_thin<R: Rng + ?Sized>(
    pattern: &PointPattern,
    spec: &NoiseSpec,
    rng: &mut R,
) -> PointPattern {
    let delta = spec.delta();
    if delta == 0.0 {
        return pattern.clone();
    }
    let mut order: Vec<usize> = (0..pattern.len()).collect();
    order.shuffle(rng);
    let pts = pattern.points();
    let mut kept: Vec<usize> = Vec::with_capacity(pts.len());
    for i in order {
        let r = match spec.cutoff {
            CutoffRadius::Univariate => {
                let z: f64 = StandardNormal.sample(rng);
                delta * z.abs()
            }
            CutoffRadius::PlanarNorm => {
                let a: f64 = StandardNormal.sample(rng);
                let b: f64 = StandardNormal.sample(rng);
                delta * a.hypot(b)
            }
        };
        let r2 = r * r;
        let [x, y] = pts[i];
        let blocked = kept.iter().any(|&j| {
            let [u, v] = pts[j];
            (u - x).powi(2) + (v - y).powi(2) < r2
        });
        if !blocked {
            kept.push(i);
        }
    }
    // Restore input order so the output does not depend on the visit order.
    kept.sort_unstable();
    PointPattern::from_trusted(kept.into_iter().map(|i| pts[i]).collect(), *pattern.window())
}

/// Independent thinning: each point is retained with probability `p_thin`.
pub fn p_thin<R: Rng + ?Sized>(
    pattern: &PointPattern,
    p_thin: f64,
    rng: &mut R,
) -> Result<PointPattern> {
    if !(p_thin > 0.0 && p_thin <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "retention probability must lie in (0, 1], got {p_thin}"
        )));
    }
    if p_thin == 1.0 {
        return Ok(pattern.clone());
    }
    let points = pattern
        .points()
        .iter()
        .copied()
        .filter(|_| rng.random::<f64>() < p_thin)
        .collect();
    Ok(PointPattern::from_trusted(points, *pattern.window()))
}
