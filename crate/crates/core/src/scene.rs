//! Source configurations and their normalized moments.
//!
//! A scene is a set of point emitters with relative weights `gamma_j`
//! (summing to one) and a mean image-plane photon number `epsilon`
//! (attenuation folded in). Normalized moments
//! `M_k = (sum_j gamma_j (x_j - X)^k)^{1/k}` carry length units; odd
//! moments with a negative radicand are stored as magnitude plus sign.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub dimension: u8,
    /// positions; `y` is all zeros for 1D scenes
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub gamma: Vec<f64>,
    pub epsilon: f64,
}

impl Scene {
    /// 1D scene from `(position, weight)` pairs; weights are normalized.
    pub fn line(points: &[(f64, f64)], epsilon: f64) -> Result<Scene> {
        if points.is_empty() {
            return Err(Error::EmptyScene);
        }
        let total: f64 = points.iter().map(|p| p.1).sum();
        if total <= 0.0 || points.iter().any(|p| p.1 < 0.0) {
            return Err(Error::InvalidInput("weights must be >= 0 with positive sum".into()));
        }
        if epsilon <= 0.0 {
            return Err(Error::InvalidInput("epsilon must be positive".into()));
        }
        Ok(Scene {
            dimension: 1,
            x: points.iter().map(|p| p.0).collect(),
            y: vec![0.0; points.len()],
            gamma: points.iter().map(|p| p.1 / total).collect(),
            epsilon,
        })
    }

    /// 2D scene from `(x, y, weight)` triples.
    pub fn plane(points: &[(f64, f64, f64)], epsilon: f64) -> Result<Scene> {
        if points.is_empty() {
            return Err(Error::EmptyScene);
        }
        let total: f64 = points.iter().map(|p| p.2).sum();
        if total <= 0.0 || points.iter().any(|p| p.2 < 0.0) {
            return Err(Error::InvalidInput("weights must be >= 0 with positive sum".into()));
        }
        if epsilon <= 0.0 {
            return Err(Error::InvalidInput("epsilon must be positive".into()));
        }
        Ok(Scene {
            dimension: 2,
            x: points.iter().map(|p| p.0).collect(),
            y: points.iter().map(|p| p.1).collect(),
            gamma: points.iter().map(|p| p.2 / total).collect(),
            epsilon,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn centroid(&self) -> (f64, f64) {
        let cx = self.gamma.iter().zip(&self.x).map(|(g, x)| g * x).sum();
        let cy = self.gamma.iter().zip(&self.y).map(|(g, y)| g * y).sum();
        (cx, cy)
    }

    /// Image size: maximum pairwise distance.
    pub fn size(&self) -> f64 {
        let mut s = 0.0f64;
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                let dx = self.x[i] - self.x[j];
                let dy = self.y[i] - self.y[j];
                s = s.max((dx * dx + dy * dy).sqrt());
            }
        }
        s
    }

    /// Signed moment radicand `sum_j gamma_j (x_j - cx)^k (y_j - cy)^l`
    /// about an arbitrary reference point.
    pub fn raw_moment_about(&self, k: usize, l: usize, cx: f64, cy: f64) -> f64 {
        self.gamma
            .iter()
            .zip(self.x.iter().zip(&self.y))
            .map(|(g, (x, y))| g * (x - cx).powi(k as i32) * (y - cy).powi(l as i32))
            .sum()
    }

    /// Rescales positions about the centroid so the size becomes `s`.
    /// Every normalized moment scales exactly by `s / s0`.
    pub fn scaled_to(&self, s: f64) -> Result<Scene> {
        let s0 = self.size();
        if s0 == 0.0 {
            return Err(Error::ZeroSizeShape);
        }
        if s <= 0.0 {
            return Err(Error::InvalidInput("target size must be positive".into()));
        }
        let (cx, cy) = self.centroid();
        let f = s / s0;
        let mut out = self.clone();
        for x in &mut out.x {
            *x = cx + (*x - cx) * f;
        }
        for y in &mut out.y {
            *y = cy + (*y - cy) * f;
        }
        Ok(out)
    }
}

/// Magnitude-and-sign representation of a normalized moment: the
/// radicand `m = sum gamma dx^k dy^l`, the magnitude `|m|^{1/(k+l)}`, and
/// the sign of the radicand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moment {
    pub magnitude: f64,
    pub sign: i8,
}

impl Moment {
    pub fn from_radicand(m: f64, order: usize) -> Moment {
        let sign = if m > 0.0 {
            1
        } else if m < 0.0 {
            -1
        } else {
            0
        };
        Moment {
            magnitude: m.abs().powf(1.0 / order as f64),
            sign,
        }
    }

    /// Signed radicand `sign * magnitude^order`.
    pub fn radicand(&self, order: usize) -> f64 {
        self.sign as f64 * self.magnitude.powi(order as i32)
    }
}

/// Centroid, size, and normalized moments of a 1D scene.
#[derive(Debug, Clone, Serialize)]
pub struct MomentVector {
    pub centroid: f64,
    pub size: f64,
    /// `moments[k]` is `M_k`; indices 0 and 1 are held at the trivial
    /// values (1 and 0 about the true centroid).
    pub moments: Vec<Moment>,
}

impl MomentVector {
    pub fn magnitude(&self, k: usize) -> f64 {
        self.moments[k].magnitude
    }

    pub fn radicand(&self, k: usize) -> f64 {
        self.moments[k].radicand(k)
    }
}

/// Normalized 1D moments up to `kmax` about the scene centroid.
pub fn moments(scene: &Scene, kmax: usize) -> Result<MomentVector> {
    if scene.is_empty() {
        return Err(Error::EmptyScene);
    }
    let (cx, _) = scene.centroid();
    moments_about(scene, kmax, cx)
}

/// Normalized 1D moments about an arbitrary reference point (used by the
/// centroid pre-estimation scheme, where `M_1 != 0`).
pub fn moments_about(scene: &Scene, kmax: usize, reference: f64) -> Result<MomentVector> {
    if scene.is_empty() {
        return Err(Error::EmptyScene);
    }
    if kmax < 1 {
        return Err(Error::InvalidInput("kmax must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(kmax + 1);
    for k in 0..=kmax {
        let m = scene.raw_moment_about(k, 0, reference, 0.0);
        out.push(Moment::from_radicand(m, k.max(1)));
    }
    Ok(MomentVector {
        centroid: reference,
        size: scene.size(),
        moments: out,
    })
}

/// Normalized 2D moments `M_{kl}` up to total order `kmax`.
#[derive(Debug, Clone, Serialize)]
pub struct MomentVector2d {
    pub centroid: (f64, f64),
    pub size: f64,
    /// `moments[k][l]` for `k + l <= kmax`.
    pub moments: Vec<Vec<Moment>>,
}

impl MomentVector2d {
    pub fn magnitude(&self, k: usize, l: usize) -> f64 {
        self.moments[k][l].magnitude
    }

    pub fn radicand(&self, k: usize, l: usize) -> f64 {
        self.moments[k][l].radicand(k + l)
    }
}

pub fn moments_2d(scene: &Scene, kmax: usize) -> Result<MomentVector2d> {
    if scene.is_empty() {
        return Err(Error::EmptyScene);
    }
    let (cx, cy) = scene.centroid();
    let mut rows = Vec::with_capacity(kmax + 1);
    for k in 0..=kmax {
        let mut row = Vec::new();
        for l in 0..=(kmax - k) {
            let m = scene.raw_moment_about(k, l, cx, cy);
            row.push(Moment::from_radicand(m, (k + l).max(1)));
        }
        rows.push(row);
    }
    Ok(MomentVector2d {
        centroid: (cx, cy),
        size: scene.size(),
        moments: rows,
    })
}

/// Second-moment parametrizations of a 2D scene: standard deviations and
/// correlation `(X, Y, beta)`, and principal axes `(Lambda1, Lambda2, theta)`.
#[derive(Debug, Clone, Serialize)]
pub struct SecondMomentParams {
    pub x_dev: f64,
    pub y_dev: f64,
    pub beta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Rotation angle of the major axis; `None` when the covariance is
    /// isotropic and the angle is undefined.
    pub theta: Option<f64>,
    /// Covariance matrix [[M20^2, M11^2], [M11^2, M02^2]].
    pub covariance: [[f64; 2]; 2],
}

pub fn second_moment_params_2d(scene: &Scene) -> Result<SecondMomentParams> {
    if scene.dimension != 2 {
        return Err(Error::InvalidInput("second_moment_params_2d needs a 2D scene".into()));
    }
    let (cx, cy) = scene.centroid();
    let c11 = scene.raw_moment_about(2, 0, cx, cy);
    let c22 = scene.raw_moment_about(0, 2, cx, cy);
    let c12 = scene.raw_moment_about(1, 1, cx, cy);
    if c11 <= 0.0 || c22 <= 0.0 {
        return Err(Error::DegenerateCovariance(format!(
            "zero spread along an axis (M20^2 = {c11:.3e}, M02^2 = {c22:.3e}); beta undefined"
        )));
    }
    let x_dev = c11.sqrt();
    let y_dev = c22.sqrt();
    let beta = c12 / (x_dev * y_dev);

    // principal axes of [[c11, c12], [c12, c22]]
    let tr = c11 + c22;
    let det = c11 * c22 - c12 * c12;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let l1sq = tr / 2.0 + disc;
    let l2sq = (tr / 2.0 - disc).max(0.0);
    let theta = if disc <= 1e-14 * tr {
        None
    } else {
        Some(0.5 * (2.0 * c12).atan2(c11 - c22))
    };

    Ok(SecondMomentParams {
        x_dev,
        y_dev,
        beta,
        lambda1: l1sq.sqrt(),
        lambda2: l2sq.sqrt(),
        theta,
        covariance: [[c11, c12], [c12, c22]],
    })
}
