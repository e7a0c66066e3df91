//! C ABI over the slipstab library.
//!
//! Objects cross the boundary as opaque handles created by `*_new`
//! functions and released by the matching `*_free`. Every fallible call
//! returns a [`SlipstabStatus`]; on failure a message for the calling
//! thread is available from [`slipstab_last_error`]. Panics never unwind
//! into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use slipstab::geom::{FrameTag, OrientedCloud, OrientedPoint, RigidTransform, Vec3};
use slipstab::metrics::{add, adi, DepthImage, Intrinsics};
use slipstab::pipeline::{estimate_pose, PipelineConfig};
use slipstab::stability::{analyze, slippable_motions, DEFAULT_SLIP_CUT};
use slipstab::synth::unproject;
use slipstab::template::{make_primitive, PrimitiveSpec, TemplateModel};
use slipstab::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlipstabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    EmptyInput = 3,
    Degenerate = 4,
    NoConvergence = 5,
    Config = 6,
    Io = 7,
    Internal = 8,
}

impl From<&Error> for SlipstabStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::EmptyCloud | Error::EmptyMask | Error::EmptySet | Error::EmptyHypothesisSet => {
                SlipstabStatus::EmptyInput
            }
            Error::DegenerateCollinear
            | Error::DegenerateArc { .. }
            | Error::DegenerateObservation
            | Error::SingularNormalEquations { .. }
            | Error::AllZeroWeights => SlipstabStatus::Degenerate,
            Error::NoConvergence(_) | Error::NumericalFailure { .. } => SlipstabStatus::NoConvergence,
            Error::Config(_) => SlipstabStatus::Config,
            Error::Io { .. } | Error::Data { .. } => SlipstabStatus::Io,
            Error::InvalidDimensions(_)
            | Error::InvalidSymmetry(_)
            | Error::LengthMismatch(..)
            | Error::NonFinite(..)
            | Error::IntrinsicsMismatch => SlipstabStatus::InvalidArgument,
        }
    }
}

/// Primitive template families.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlipstabPrimitive {
    /// params: size x, y, z
    Box = 0,
    /// params: radius, height
    Cylinder = 1,
    /// params: base x, y, z, top x, y, z, offset x, y
    BoxCluster = 2,
    /// params: bottom radius, top radius, height
    Revolution = 3,
}

/// Opaque oriented point cloud.
pub struct SlipstabCloud(OrientedCloud);

/// Opaque template model.
pub struct SlipstabTemplate(TemplateModel);

/// Opaque pipeline configuration.
pub struct SlipstabConfig(PipelineConfig);

/// Rigid pose: unit quaternion `q = (w, x, y, z)` and translation `t`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlipstabPose {
    pub q: [f64; 4],
    pub t: [f64; 3],
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlipstabStability {
    /// Ascending.
    pub eigenvalues: [f64; 6],
    pub measure: f64,
    pub stable: bool,
    pub slippable: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlipstabEstimate {
    pub pose: SlipstabPose,
    pub residual: f64,
    /// True when no stable-group hypothesis verified.
    pub fallback: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: SlipstabStatus, msg: &str) -> SlipstabStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> SlipstabStatus) -> SlipstabStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(SlipstabStatus::Internal, "internal panic"),
    }
}

fn from_lib(e: Error) -> SlipstabStatus {
    fail(SlipstabStatus::from(&e), &e.to_string())
}

impl From<&RigidTransform> for SlipstabPose {
    fn from(t: &RigidTransform) -> Self {
        let v = t.translation();
        SlipstabPose {
            q: t.wxyz(),
            t: [v.x, v.y, v.z],
        }
    }
}

impl SlipstabPose {
    fn to_transform(self) -> Option<RigidTransform> {
        let norm = self.q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 1e-12) || self.t.iter().any(|c| !c.is_finite()) {
            return None;
        }
        Some(RigidTransform::from_wxyz(self.q, self.t))
    }
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn slipstab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn slipstab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a cloud from `n` positions and `n` normals, each packed as
/// `x, y, z` triples.
///
/// # Safety
/// `positions` and `normals` must point to `3 * n` readable doubles and
/// `out` to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn slipstab_cloud_new(
    positions: *const f64,
    normals: *const f64,
    n: usize,
    out: *mut *mut SlipstabCloud,
) -> SlipstabStatus {
    guard(|| {
        if positions.is_null() || normals.is_null() || out.is_null() {
            return fail(SlipstabStatus::NullPointer, "null argument");
        }
        if n == 0 {
            return fail(SlipstabStatus::EmptyInput, "cloud has no points");
        }
        let p = std::slice::from_raw_parts(positions, 3 * n);
        let q = std::slice::from_raw_parts(normals, 3 * n);
        if p.iter().chain(q).any(|c| !c.is_finite()) {
            return fail(SlipstabStatus::InvalidArgument, "non-finite coordinate");
        }
        let mut points = Vec::with_capacity(n);
        for i in 0..n {
            let nrm = Vec3::new(q[3 * i], q[3 * i + 1], q[3 * i + 2]);
            let len = nrm.norm();
            if len < 1e-12 {
                return fail(SlipstabStatus::InvalidArgument, "zero-length normal");
            }
            points.push(OrientedPoint::new(
                Vec3::new(p[3 * i], p[3 * i + 1], p[3 * i + 2]),
                nrm / len,
            ));
        }
        *out = Box::into_raw(Box::new(SlipstabCloud(OrientedCloud::new(points, FrameTag::Camera))));
        SlipstabStatus::Ok
    })
}

/// Number of points, 0 for a null handle.
///
/// # Safety
/// `cloud` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn slipstab_cloud_len(cloud: *const SlipstabCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.0.len())
}

/// # Safety
/// `cloud` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn slipstab_cloud_free(cloud: *mut SlipstabCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Unprojects the pixels of a row-major depth image. `mask` may be null to
/// use every pixel with positive depth; otherwise nonzero entries select
/// pixels. Normals come from `k` nearest neighbours.
///
/// # Safety
/// `depth` (and `mask` when non-null) must hold `width * height` entries;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slipstab_cloud_from_depth(
    depth: *const f32,
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    mask: *const u8,
    k: u32,
    out: *mut *mut SlipstabCloud,
) -> SlipstabStatus {
    guard(|| {
        if depth.is_null() || out.is_null() {
            return fail(SlipstabStatus::NullPointer, "null argument");
        }
        if !(fx > 0.0 && fy > 0.0 && cx.is_finite() && cy.is_finite()) {
            return fail(SlipstabStatus::InvalidArgument, "invalid intrinsics");
        }
        let len = width as usize * height as usize;
        let values = std::slice::from_raw_parts(depth, len).to_vec();
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return fail(SlipstabStatus::InvalidArgument, "depth must be finite and non-negative");
        }
        let selected: Vec<usize> = if mask.is_null() {
            (0..len).collect()
        } else {
            let m = std::slice::from_raw_parts(mask, len);
            (0..len).filter(|&i| m[i] != 0).collect()
        };
        let intrinsics = Intrinsics { fx, fy, cx, cy };
        let img = DepthImage {
            width: width as usize,
            height: height as usize,
            values,
            intrinsics,
        };
        match unproject(&img, &selected, &intrinsics, k.max(3) as usize) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(SlipstabCloud(c)));
                SlipstabStatus::Ok
            }
            Err(e) => from_lib(e),
        }
    })
}

/// Slippage analysis of a cloud.
///
/// # Safety
/// `cloud` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn slipstab_analyze(
    cloud: *const SlipstabCloud,
    normalize: bool,
    out: *mut SlipstabStability,
) -> SlipstabStatus {
    guard(|| {
        let (Some(c), false) = (cloud.as_ref(), out.is_null()) else {
            return fail(SlipstabStatus::NullPointer, "null argument");
        };
        match analyze(&c.0, normalize) {
            Ok(r) => {
                *out = SlipstabStability {
                    eigenvalues: r.eigenvalues,
                    measure: r.measure,
                    stable: r.stable,
                    slippable: slippable_motions(&r, DEFAULT_SLIP_CUT).len() as u32,
                };
                SlipstabStatus::Ok
            }
            Err(e) => from_lib(e),
        }
    })
}

/// Builds a primitive template; see [`SlipstabPrimitive`] for the
/// parameter layout.
///
/// # Safety
/// `params` must hold `n_params` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slipstab_template_new(
    kind: SlipstabPrimitive,
    params: *const f64,
    n_params: usize,
    out: *mut *mut SlipstabTemplate,
) -> SlipstabStatus {
    guard(|| {
        if params.is_null() || out.is_null() {
            return fail(SlipstabStatus::NullPointer, "null argument");
        }
        let p = std::slice::from_raw_parts(params, n_params);
        let need = match kind {
            SlipstabPrimitive::Box => 3,
            SlipstabPrimitive::Cylinder => 2,
            SlipstabPrimitive::BoxCluster => 8,
            SlipstabPrimitive::Revolution => 3,
        };
        if p.len() != need {
            return fail(
                SlipstabStatus::InvalidArgument,
                &format!("expected {need} parameters, got {}", p.len()),
            );
        }
        let spec = match kind {
            SlipstabPrimitive::Box => PrimitiveSpec::Box {
                size: [p[0], p[1], p[2]],
            },
            SlipstabPrimitive::Cylinder => PrimitiveSpec::Cylinder {
                radius: p[0],
                height: p[1],
            },
            SlipstabPrimitive::BoxCluster => PrimitiveSpec::BoxCluster {
                base: [p[0], p[1], p[2]],
                top: [p[3], p[4], p[5]],
                offset: [p[6], p[7]],
            },
            SlipstabPrimitive::Revolution => PrimitiveSpec::Revolution {
                bottom_radius: p[0],
                top_radius: p[1],
                height: p[2],
            },
        };
        match make_primitive(&spec) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(SlipstabTemplate(m)));
                SlipstabStatus::Ok
            }
            Err(e) => from_lib(e),
        }
    })
}

/// Template diameter, NaN for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn slipstab_template_diameter(model: *const SlipstabTemplate) -> f64 {
    model.as_ref().map_or(f64::NAN, |m| m.0.diameter)
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn slipstab_template_free(model: *mut SlipstabTemplate) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Parses a JSON configuration; null `json` yields the defaults.
///
/// # Safety
/// `json` must be null or a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slipstab_config_new(json: *const c_char, out: *mut *mut SlipstabConfig) -> SlipstabStatus {
    guard(|| {
        if out.is_null() {
            return fail(SlipstabStatus::NullPointer, "null argument");
        }
        let cfg = if json.is_null() {
            PipelineConfig::default()
        } else {
            let Ok(text) = CStr::from_ptr(json).to_str() else {
                return fail(SlipstabStatus::Config, "configuration is not UTF-8");
            };
            match PipelineConfig::from_json(text) {
                Ok(c) => c,
                Err(e) => return from_lib(e),
            }
        };
        *out = Box::into_raw(Box::new(SlipstabConfig(cfg)));
        SlipstabStatus::Ok
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn slipstab_config_free(cfg: *mut SlipstabConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Estimates the pose of `model` in the camera-frame `cloud`. A null
/// `cfg` uses the default configuration.
///
/// # Safety
/// `cloud` and `model` must be live handles, `cfg` null or live, `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn slipstab_estimate_pose(
    cloud: *const SlipstabCloud,
    model: *const SlipstabTemplate,
    cfg: *const SlipstabConfig,
    out: *mut SlipstabEstimate,
) -> SlipstabStatus {
    guard(|| {
        let (Some(c), Some(m), false) = (cloud.as_ref(), model.as_ref(), out.is_null()) else {
            return fail(SlipstabStatus::NullPointer, "null argument");
        };
        let default;
        let cfg = match cfg.as_ref() {
            Some(c) => &c.0,
            None => {
                default = PipelineConfig::default();
                &default
            }
        };
        match estimate_pose(&c.0, &m.0, cfg) {
            Ok(e) => {
                *out = SlipstabEstimate {
                    pose: SlipstabPose::from(&e.pose),
                    residual: e.residual,
                    fallback: e.fallback(),
                };
                SlipstabStatus::Ok
            }
            Err(e) => from_lib(e),
        }
    })
}

unsafe fn pose_metric(
    est: *const SlipstabPose,
    gt: *const SlipstabPose,
    model: *const SlipstabTemplate,
    out: *mut f64,
    f: fn(&RigidTransform, &RigidTransform, &TemplateModel) -> f64,
) -> SlipstabStatus {
    guard(|| {
        let (Some(e), Some(g), Some(m), false) = (est.as_ref(), gt.as_ref(), model.as_ref(), out.is_null()) else {
            return fail(SlipstabStatus::NullPointer, "null argument");
        };
        let (Some(e), Some(g)) = (e.to_transform(), g.to_transform()) else {
            return fail(
                SlipstabStatus::InvalidArgument,
                "pose is not finite or has a zero quaternion",
            );
        };
        *out = f(&e, &g, &m.0);
        SlipstabStatus::Ok
    })
}

/// Mean closest-point distance between the model posed by `est` and `gt`.
///
/// # Safety
/// Pointers must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn slipstab_adi(
    est: *const SlipstabPose,
    gt: *const SlipstabPose,
    model: *const SlipstabTemplate,
    out: *mut f64,
) -> SlipstabStatus {
    pose_metric(est, gt, model, out, adi)
}

/// Mean corresponding-point distance between the model posed by `est`
/// and `gt`.
///
/// # Safety
/// Pointers must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn slipstab_add(
    est: *const SlipstabPose,
    gt: *const SlipstabPose,
    model: *const SlipstabTemplate,
    out: *mut f64,
) -> SlipstabStatus {
    pose_metric(est, gt, model, out, add)
}
