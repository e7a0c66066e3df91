//! Pose-error metrics, a z-buffer depth rasterizer and the depth raster
//! file format.
//!
//! Depth images use the pinhole model with the camera looking along +z,
//! x to the right and y down; pixel `(u, v)` has its center at integer
//! coordinates, so it sees the ray through `((u − cx)/fx, (v − cy)/fy, 1)`.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{rotation_geodesic_deg, RigidTransform, Vec3};
use crate::mesh::TriangleMesh;
use crate::symmetry::{closest_symmetric_pose, symmetric_rotation_error_deg, SymmetryKind, SymmetrySpec};
use crate::template::TemplateModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Pixel coordinates of a camera-frame point.
    pub fn project(&self, p: &Vec3) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Camera-frame point at pixel `(u, v)` with depth `z`.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    /// Row-major depth, 0 where empty.
    pub values: Vec<f32>,
    pub intrinsics: Intrinsics,
}

impl DepthImage {
    pub fn empty(width: usize, height: usize, intrinsics: Intrinsics) -> Self {
        DepthImage {
            width,
            height,
            values: vec![0.0; width * height],
            intrinsics,
        }
    }

    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.values[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, z: f32) {
        self.values[v * self.width + u] = z;
    }

    pub fn covered(&self) -> usize {
        self.values.iter().filter(|z| **z > 0.0).count()
    }

    fn same_camera(&self, other: &DepthImage) -> bool {
        self.width == other.width && self.height == other.height && self.intrinsics == other.intrinsics
    }
}

pub const DEPTH_MAGIC: &[u8; 4] = b"DPTH";

/// Writes `"DPTH"`, `u32` width, `u32` height, a reserved zero `u32`, then
/// the values as little-endian `f32`, row-major.
pub fn write_depth(path: &Path, img: &DepthImage) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 4 * img.values.len());
    buf.extend_from_slice(DEPTH_MAGIC);
    buf.extend_from_slice(&(img.width as u32).to_le_bytes());
    buf.extend_from_slice(&(img.height as u32).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for v in &img.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

/// Reads a raster written by [`write_depth`]; intrinsics are supplied by
/// the caller.
pub fn read_depth(path: &Path, intrinsics: Intrinsics) -> Result<DepthImage> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    if buf.len() < 16 || &buf[0..4] != DEPTH_MAGIC {
        return Err(Error::data(path, "not a DPTH raster"));
    }
    let word = |i: usize| u32::from_le_bytes(buf[i..i + 4].try_into().unwrap()) as usize;
    let (width, height) = (word(4), word(8));
    if buf.len() != 16 + 4 * width * height {
        return Err(Error::data(
            path,
            format!("expected {} bytes of depth", 4 * width * height),
        ));
    }
    let values: Vec<f32> = buf[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::data(path, "depth values must be finite and non-negative"));
    }
    Ok(DepthImage {
        width,
        height,
        values,
        intrinsics,
    })
}

/// Rasterizes `mesh` posed by `pose` into `target`, keeping the nearest
/// surface per pixel; at equal depth the first writer wins. `on_write` is
/// called with the pixel index whenever a pixel is (over)written.
pub fn rasterize_into(
    mesh: &TriangleMesh,
    pose: &RigidTransform,
    target: &mut DepthImage,
    mut on_write: impl FnMut(usize),
) {
    let k = target.intrinsics;
    let (w, h) = (target.width as i64, target.height as i64);
    let cam: Vec<Vec3> = mesh.vertices.iter().map(|v| pose.apply(v)).collect();
    for t in &mesh.triangles {
        let p = [cam[t[0]], cam[t[1]], cam[t[2]]];
        if p.iter().any(|q| q.z <= 1e-9) {
            continue;
        }
        let s: Vec<(f64, f64)> = p.iter().map(|q| k.project(q)).collect();
        let area = (s[1].0 - s[0].0) * (s[2].1 - s[0].1) - (s[2].0 - s[0].0) * (s[1].1 - s[0].1);
        if area.abs() < 1e-12 {
            continue;
        }
        let umin = s.iter().map(|x| x.0).fold(f64::INFINITY, f64::min).ceil().max(0.0) as i64;
        let umax = (s.iter().map(|x| x.0).fold(f64::NEG_INFINITY, f64::max).floor() as i64).min(w - 1);
        let vmin = s.iter().map(|x| x.1).fold(f64::INFINITY, f64::min).ceil().max(0.0) as i64;
        let vmax = (s.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max).floor() as i64).min(h - 1);
        let inv_z = [1.0 / p[0].z, 1.0 / p[1].z, 1.0 / p[2].z];
        for v in vmin..=vmax {
            for u in umin..=umax {
                let (x, y) = (u as f64, v as f64);
                let w0 = ((s[1].0 - x) * (s[2].1 - y) - (s[2].0 - x) * (s[1].1 - y)) / area;
                let w1 = ((s[2].0 - x) * (s[0].1 - y) - (s[0].0 - x) * (s[2].1 - y)) / area;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                // perspective-correct: 1/z is affine in screen space
                let z = 1.0 / (w0 * inv_z[0] + w1 * inv_z[1] + w2 * inv_z[2]);
                let idx = v as usize * target.width + u as usize;
                let cur = target.values[idx];
                let zf = z as f32;
                if cur == 0.0 || zf < cur {
                    target.values[idx] = zf;
                    on_write(idx);
                }
            }
        }
    }
}

/// Depth image of `mesh` posed by `pose`.
pub fn render_depth(
    mesh: &TriangleMesh,
    pose: &RigidTransform,
    intrinsics: Intrinsics,
    width: usize,
    height: usize,
) -> DepthImage {
    let mut img = DepthImage::empty(width, height, intrinsics);
    rasterize_into(mesh, pose, &mut img, |_| {});
    img
}

/// Mean distance from each posed sample to the closest sample under `gt`.
pub fn adi(t: &RigidTransform, gt: &RigidTransform, model: &TemplateModel) -> f64 {
    // distances are rigid-invariant, so search in the canonical frame
    let rel = gt.inverse().compose(t);
    let pts = &model.surface_samples.points;
    pts.iter()
        .map(|p| model.nearest_sample(&rel.apply(&p.position)).1)
        .sum::<f64>()
        / pts.len() as f64
}

/// Mean distance between corresponding posed samples.
pub fn add(t: &RigidTransform, gt: &RigidTransform, model: &TemplateModel) -> f64 {
    let pts = &model.surface_samples.points;
    pts.iter()
        .map(|p| (t.apply(&p.position) - gt.apply(&p.position)).norm())
        .sum::<f64>()
        / pts.len() as f64
}

/// Visibility under the BOP18 rule: rendered, observed, and not behind the
/// observation by more than `delta`.
fn visible(rendered: f32, observed: f32, delta: f64) -> bool {
    rendered > 0.0 && observed > 0.0 && (rendered as f64 - observed as f64) <= delta
}

/// Visible surface discrepancy between the model rendered at `t` and at
/// `gt`, judged against `observed`. Pixels visible in exactly one render,
/// or whose depths differ by `tau` or more, count as errors; the result is
/// their fraction of the visible union (1 when the union is empty).
pub fn vsd(
    t: &RigidTransform,
    gt: &RigidTransform,
    model: &TemplateModel,
    observed: &DepthImage,
    tau: f64,
    delta: f64,
) -> f64 {
    let est = render_depth(&model.mesh, t, observed.intrinsics, observed.width, observed.height);
    let truth = render_depth(&model.mesh, gt, observed.intrinsics, observed.width, observed.height);
    vsd_from_renders(&est, &truth, observed, tau, delta).expect("renders share the observation's camera")
}

/// [`vsd`] on pre-rendered depth images.
pub fn vsd_from_renders(
    est: &DepthImage,
    truth: &DepthImage,
    observed: &DepthImage,
    tau: f64,
    delta: f64,
) -> Result<f64> {
    if !est.same_camera(observed) || !truth.same_camera(observed) {
        return Err(Error::IntrinsicsMismatch);
    }
    let mut union = 0usize;
    let mut bad = 0usize;
    for i in 0..observed.values.len() {
        let o = observed.values[i];
        let ve = visible(est.values[i], o, delta);
        let vg = visible(truth.values[i], o, delta);
        if ve || vg {
            union += 1;
            if !(ve && vg) || (est.values[i] as f64 - truth.values[i] as f64).abs() >= tau {
                bad += 1;
            }
        }
    }
    Ok(if union == 0 { 1.0 } else { bad as f64 / union as f64 })
}

/// Thresholds for the pass/fail flags of a [`MetricReport`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricThresholds {
    /// ADI threshold as a fraction of the diameter.
    pub adi_frac: f64,
    pub vsd_max: f64,
    pub vsd_tau: f64,
    pub vsd_delta: f64,
    pub rot_deg: f64,
    pub trans: f64,
    pub iou: f64,
    pub iou_samples: usize,
    pub seed: u64,
}

impl Default for MetricThresholds {
    fn default() -> Self {
        Self {
            adi_frac: 0.1,
            vsd_max: 0.3,
            vsd_tau: 0.02,
            vsd_delta: 0.015,
            rot_deg: 10.0,
            trans: 0.10,
            iou: 0.25,
            iou_samples: 200_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub adi: f64,
    pub add: f64,
    pub vsd: Option<f64>,
    pub r_err_deg: f64,
    pub t_err: f64,
    pub iou_value: f64,
    pub adi_pass: bool,
    pub vsd_pass: bool,
    pub deg10cm10: bool,
    pub iou25: bool,
}

/// Rotation and translation error modulo the symmetry: the translation is
/// compared for the symmetric variant of `t` closest in rotation to `gt`.
pub fn pose_errors(t: &RigidTransform, gt: &RigidTransform, spec: &SymmetrySpec) -> (f64, f64) {
    let r_err = symmetric_rotation_error_deg(t, gt, spec);
    let aligned = closest_symmetric_pose(t, gt, spec);
    let t_err = (aligned.translation() - gt.translation()).norm();
    debug_assert!(spec.kind == SymmetryKind::Continuous || (rotation_geodesic_deg(&aligned, gt) - r_err).abs() < 1e-6);
    (r_err, t_err)
}

/// `10°10cm` decision: strictly below both thresholds.
pub fn deg_cm_pass(r_err_deg: f64, t_err: f64, th: &MetricThresholds) -> bool {
    r_err_deg < th.rot_deg && t_err < th.trans
}

/// Monte-Carlo IoU of the canonical bounding box posed by `a` and by `b`.
pub fn box_iou(aabb: &(Vec3, Vec3), a: &RigidTransform, b: &RigidTransform, samples: usize, seed: u64) -> f64 {
    let (lo, hi) = aabb;
    let ext = hi - lo;
    let volume = ext.x * ext.y * ext.z;
    if volume <= 0.0 || samples == 0 {
        return 0.0;
    }
    let rel = b.inverse().compose(a);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = 1e-12 * ext.max();
    let mut inside = 0usize;
    for _ in 0..samples {
        let p = lo
            + Vec3::new(
                rng.random::<f64>() * ext.x,
                rng.random::<f64>() * ext.y,
                rng.random::<f64>() * ext.z,
            );
        let q = rel.apply(&p);
        if (0..3).all(|k| q[k] >= lo[k] - tol && q[k] <= hi[k] + tol) {
            inside += 1;
        }
    }
    let inter = volume * inside as f64 / samples as f64;
    inter / (2.0 * volume - inter)
}

/// All metrics of one estimate. `observed` enables VSD.
pub fn classify(
    t: &RigidTransform,
    gt: &RigidTransform,
    model: &TemplateModel,
    observed: Option<&DepthImage>,
    th: &MetricThresholds,
) -> MetricReport {
    let adi_v = adi(t, gt, model);
    let add_v = add(t, gt, model);
    let vsd_v = observed.map(|o| vsd(t, gt, model, o, th.vsd_tau, th.vsd_delta));
    let (r_err, t_err) = pose_errors(t, gt, &model.symmetry);
    let iou_value = box_iou(&model.aabb, t, gt, th.iou_samples, th.seed);
    MetricReport {
        adi: adi_v,
        add: add_v,
        vsd: vsd_v,
        r_err_deg: r_err,
        t_err,
        iou_value,
        adi_pass: adi_v < th.adi_frac * model.diameter,
        vsd_pass: vsd_v.is_some_and(|v| v < th.vsd_max),
        deg10cm10: deg_cm_pass(r_err, t_err, th),
        iou25: iou_value > th.iou,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecallMetric {
    Adi,
    Vsd,
    Deg10Cm10,
    Iou25,
}

impl RecallMetric {
    pub fn passes(&self, r: &MetricReport) -> bool {
        match self {
            RecallMetric::Adi => r.adi_pass,
            RecallMetric::Vsd => r.vsd_pass,
            RecallMetric::Deg10Cm10 => r.deg10cm10,
            RecallMetric::Iou25 => r.iou25,
        }
    }
}

/// Fraction of reports passing `metric`.
pub fn recall(reports: &[MetricReport], metric: RecallMetric) -> Result<f64> {
    if reports.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(reports.iter().filter(|r| metric.passes(r)).count() as f64 / reports.len() as f64)
}

pub const METRICS_CSV_HEADER: &str = "object_id,adi,add,vsd,r_err,t_err,adi_pass,vsd_pass,deg10cm10,iou25";

/// One CSV row; VSD is empty when unavailable.
pub fn metrics_csv_row(object_id: &str, r: &MetricReport) -> String {
    format!(
        "{},{:.9},{:.9},{},{:.6},{:.9},{},{},{},{}",
        object_id,
        r.adi,
        r.add,
        r.vsd.map(|v| format!("{v:.6}")).unwrap_or_default(),
        r.r_err_deg,
        r.t_err,
        r.adi_pass as u8,
        r.vsd_pass as u8,
        r.deg10cm10 as u8,
        r.iou25 as u8
    )
}
