//! Slippage analysis of oriented point sets.
//!
//! A rigid motion `(r, t)` displaces a surface point `v` with normal `n`
//! along the normal by `r·(v×n) + t·n` to first order. Accumulating the
//! outer products of `[v×n; n]` gives a 6×6 covariance whose small
//! eigenvalues correspond to slippable motions.

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::eigen::symmetric_eigen;
use crate::error::{Error, Result};
use crate::geom::{OrientedCloud, OrientedPoint, RigidTransform, Twist, Vec3};

/// Measure threshold above which a point set counts as stable.
pub const STABLE_THRESHOLD: f64 = 0.5;
/// `λ₁ ≤ RANK_EPS·λ₆` is treated as rank deficient (measure 0).
pub const RANK_EPS: f64 = 1e-9;
/// Default eigenvalue ratio below which a direction is slippable.
pub const DEFAULT_SLIP_CUT: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityCovariance {
    pub matrix: Matrix6<f64>,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    /// Ascending.
    pub eigenvalues: [f64; 6],
    /// Unit twists, one per eigenvalue.
    pub eigenvectors: [Twist; 6],
    pub measure: f64,
    pub stable: bool,
}

/// `Σ ((R v + t)·n)²`.
pub fn point_to_plane_energy(t: &RigidTransform, cloud: &OrientedCloud) -> Result<f64> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(cloud
        .points
        .iter()
        .map(|p| t.apply(&p.position).dot(&p.normal).powi(2))
        .sum())
}

/// `v·n + r·(v×n) + t·n`; its square is the per-point term of the
/// linearized point-to-plane energy.
pub fn linearized_residual(x: &Twist, p: &OrientedPoint) -> f64 {
    let v = &p.position;
    let n = &p.normal;
    v.dot(n) + x.r.dot(&v.cross(n)) + x.t.dot(n)
}

/// Neumaier-compensated accumulator.
#[derive(Default, Clone, Copy)]
struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

fn lexicographic(a: &OrientedPoint, b: &OrientedPoint) -> std::cmp::Ordering {
    a.position
        .iter()
        .chain(a.normal.iter())
        .zip(b.position.iter().chain(b.normal.iter()))
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Centers the positions at their centroid and scales them so the RMS
/// radius is 1. Returns the transformed points, centroid and scale.
pub fn normalize_points(points: &[OrientedPoint]) -> (Vec<OrientedPoint>, Vec3, f64) {
    let n = points.len().max(1) as f64;
    let mut c = [Compensated::default(); 3];
    for p in points {
        for (acc, x) in c.iter_mut().zip(p.position.iter()) {
            acc.add(*x);
        }
    }
    let centroid = Vec3::new(c[0].value(), c[1].value(), c[2].value()) / n;
    let mut r2 = Compensated::default();
    for p in points {
        r2.add((p.position - centroid).norm_squared());
    }
    let rms = (r2.value() / n).sqrt();
    let scale = if rms > 0.0 { 1.0 / rms } else { 1.0 };
    let out = points
        .iter()
        .map(|p| OrientedPoint {
            position: (p.position - centroid) * scale,
            normal: p.normal,
        })
        .collect();
    (out, centroid, scale)
}

/// `C = Σ [v×n; n][v×n; n]ᵀ`, accumulated in lexicographic point order so
/// the result does not depend on the input ordering.
pub fn accumulate_covariance(cloud: &OrientedCloud, normalize: bool) -> Result<StabilityCovariance> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut pts = cloud.points.clone();
    pts.sort_by(lexicographic);
    if normalize {
        pts = normalize_points(&pts).0;
    }

    let mut acc = [Compensated::default(); 21];
    for p in &pts {
        let u = p.position.cross(&p.normal);
        let w = [u.x, u.y, u.z, p.normal.x, p.normal.y, p.normal.z];
        let mut k = 0;
        for i in 0..6 {
            for j in i..6 {
                acc[k].add(w[i] * w[j]);
                k += 1;
            }
        }
    }
    let mut m = Matrix6::zeros();
    let mut k = 0;
    for i in 0..6 {
        for j in i..6 {
            m[(i, j)] = acc[k].value();
            m[(j, i)] = m[(i, j)];
            k += 1;
        }
    }
    Ok(StabilityCovariance {
        matrix: m,
        sample_count: pts.len(),
    })
}

/// `[1 + e^{0.05(λ₆/λ₁ − 200)}]⁻¹`, zero when `λ₁` is numerically zero.
pub fn stability_measure(lambda_min: f64, lambda_max: f64) -> f64 {
    if !(lambda_max > 0.0) || lambda_min <= RANK_EPS * lambda_max {
        return 0.0;
    }
    let ratio = lambda_max / lambda_min;
    1.0 / (1.0 + (0.05 * (ratio - 200.0)).exp())
}

/// Natural log of [`stability_measure`], finite wherever the measure is
/// positive even after the measure itself underflows (ratio ≳ 1.4e4).
pub fn log_stability_measure(lambda_min: f64, lambda_max: f64) -> f64 {
    if !(lambda_max > 0.0) || lambda_min <= RANK_EPS * lambda_max {
        return f64::NEG_INFINITY;
    }
    let x = 0.05 * (lambda_max / lambda_min - 200.0);
    // −softplus(x), split to avoid overflow
    if x > 0.0 {
        -(x + (-x).exp().ln_1p())
    } else {
        -x.exp().ln_1p()
    }
}

pub fn eigen_analysis(c: &StabilityCovariance) -> Result<StabilityReport> {
    let eig = symmetric_eigen(&c.matrix)?;
    let mut eigenvalues = [0.0; 6];
    let mut eigenvectors = [Twist::default(); 6];
    for i in 0..6 {
        eigenvalues[i] = eig.values[i];
        eigenvectors[i] = Twist::from_vector(&eig.vector(i));
    }
    let measure = stability_measure(eigenvalues[0].max(0.0), eigenvalues[5]);
    Ok(StabilityReport {
        eigenvalues,
        eigenvectors,
        measure,
        stable: measure > STABLE_THRESHOLD,
    })
}

/// Covariance plus eigen-analysis in one call.
pub fn analyze(cloud: &OrientedCloud, normalize: bool) -> Result<StabilityReport> {
    eigen_analysis(&accumulate_covariance(cloud, normalize)?)
}

/// Eigen-directions whose eigenvalue is at most `ratio_cut·λ₆`.
pub fn slippable_motions(report: &StabilityReport, ratio_cut: f64) -> Vec<Twist> {
    let cut = ratio_cut * report.eigenvalues[5].max(0.0);
    report
        .eigenvalues
        .iter()
        .zip(report.eigenvectors.iter())
        .filter(|(l, _)| **l <= cut)
        .map(|(_, v)| *v)
        .collect()
}

#[derive(Serialize, Deserialize)]
struct ReportRepr {
    eigenvalues: [f64; 6],
    measure: f64,
    stable: bool,
    slippable: Vec<[[f64; 3]; 2]>,
    eigenvectors: [[f64; 6]; 6],
}

fn twist_pair(t: &Twist) -> [[f64; 3]; 2] {
    [[t.r.x, t.r.y, t.r.z], [t.t.x, t.t.y, t.t.z]]
}

impl Serialize for StabilityReport {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut eigenvectors = [[0.0; 6]; 6];
        for (dst, v) in eigenvectors.iter_mut().zip(self.eigenvectors.iter()) {
            dst.copy_from_slice(v.to_vector().as_slice());
        }
        ReportRepr {
            eigenvalues: self.eigenvalues,
            measure: self.measure,
            stable: self.stable,
            slippable: slippable_motions(self, DEFAULT_SLIP_CUT)
                .iter()
                .map(twist_pair)
                .collect(),
            eigenvectors,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for StabilityReport {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = ReportRepr::deserialize(d)?;
        let mut eigenvectors = [Twist::default(); 6];
        for (dst, v) in eigenvectors.iter_mut().zip(r.eigenvectors.iter()) {
            *dst = Twist::from_vector(&Vector6::from_row_slice(v));
        }
        Ok(StabilityReport {
            eigenvalues: r.eigenvalues,
            eigenvectors,
            measure: r.measure,
            stable: r.stable,
        })
    }
}
