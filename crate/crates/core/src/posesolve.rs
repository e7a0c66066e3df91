//! Stability-driven pose estimation against a template: pose losses,
//! group alignment by Gauss–Newton, correspondence search with
//! verification, point-to-plane refinement and weighted pose fusion.
//!
//! Poses map canonical coordinates to the camera frame. The solvers work
//! on the inverse pose `Q = P⁻¹` with left updates `Q ← exp(x)∘Q`, so every
//! residual is a function of the observed point carried into the canonical
//! frame, `z = Q y`, and its Jacobian with respect to the twist `x = (r, t)`
//! is `[z × g, g]` where `g` is the residual's gradient at `z`.

use nalgebra::{Matrix3, Matrix6, UnitQuaternion, Vector6};
use serde::{Deserialize, Serialize};

use crate::eigen::symmetric_eigen;
use crate::error::{Error, Result};
use crate::geom::{twist_to_transform, weighted_rotation_mean, OrientedCloud, RigidTransform, Twist, Vec3};
use crate::groups::{group_weight, StableGroup};
use crate::patches::{point_to_axis_distance, CylindricalPatch, Patch, PatchKind, PlanarPatch};
pub use crate::template::TemplateModel;

/// Points per patch used by the patch losses and the group solver.
pub const PATCH_LOSS_POINTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    pub max_iterations: usize,
    pub step_tol: f64,
    /// Smallest admissible `λmin/λmax` of the normal equations.
    pub singular_ratio: f64,
    /// Pairwise direction tolerance for correspondence pruning, degrees.
    pub angle_tol_deg: f64,
    /// Relative tolerance on radii and parallel-plane spacings.
    pub rel_tol: f64,
    /// Acceptance threshold on the verification rms, relative to diameter.
    pub accept_rms: f64,
    /// Truncation of per-point verification distance, relative to diameter.
    pub verify_cap: f64,
    pub verify_points: usize,
    pub refine_iterations: usize,
    /// Correspondence cutoff of the refinement, relative to diameter.
    pub refine_cutoff: f64,
    pub refine_points: usize,
    /// Minimum cosine between observed and model normals in refinement.
    pub normal_agreement: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            step_tol: 1e-10,
            singular_ratio: 1e-10,
            angle_tol_deg: 10.0,
            rel_tol: 0.1,
            accept_rms: 0.02,
            verify_cap: 0.1,
            verify_points: 400,
            refine_iterations: 20,
            refine_cutoff: 0.05,
            refine_points: 1000,
            normal_agreement: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseHypothesis {
    pub pose: RigidTransform,
    /// Verification rms distance from observed points to the posed model.
    pub residual: f64,
    pub source_group: StableGroup,
    /// (observed patch id, canonical patch id) per group member.
    pub correspondence: [(usize, usize); 3],
}

/// Evenly spaced deterministic subsample of `0..n`, at most `k` entries.
pub fn stride_indices(n: usize, k: usize) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    (0..k).map(|i| i * n / k).collect()
}

/// `Σ_j ‖T x_j − gt x_j‖` over the template samples.
pub fn group_pose_loss(t: &RigidTransform, gt: &RigidTransform, model: &TemplateModel) -> f64 {
    model
        .surface_samples
        .points
        .iter()
        .map(|p| (t.apply(&p.position) - gt.apply(&p.position)).norm())
        .sum()
}

/// `Σ_j |(T⁻¹x_j − gt⁻¹c)·(gt_R⁻¹ n)|` over up to 100 patch points, where
/// `x_j`, `c`, `n` are the observed points, center and normal.
pub fn planar_patch_loss(t: &RigidTransform, patch: &PlanarPatch, gt: &RigidTransform) -> f64 {
    let ti = t.inverse();
    let gi = gt.inverse();
    let c = gi.apply(&patch.center);
    let n = gi.rotate(&patch.normal);
    stride_indices(patch.points.len(), PATCH_LOSS_POINTS)
        .into_iter()
        .map(|j| (ti.apply(&patch.points.points[j].position) - c).dot(&n).abs())
        .sum()
}

/// `Σ_j |d(T⁻¹x_j, gt⁻¹φ) − r|` over up to 100 patch points.
pub fn cylindrical_patch_loss(t: &RigidTransform, patch: &CylindricalPatch, gt: &RigidTransform) -> f64 {
    let ti = t.inverse();
    let gi = gt.inverse();
    let p = gi.apply(&patch.axis_point);
    let a = gi.rotate(&patch.axis_dir);
    stride_indices(patch.points.len(), PATCH_LOSS_POINTS)
        .into_iter()
        .map(|j| (point_to_axis_distance(&ti.apply(&patch.points.points[j].position), &p, &a) - patch.radius).abs())
        .sum()
}

pub fn patch_loss(t: &RigidTransform, patch: &Patch, gt: &RigidTransform) -> f64 {
    match patch {
        Patch::Planar(p) => planar_patch_loss(t, p, gt),
        Patch::Cylindrical(c) => cylindrical_patch_loss(t, c, gt),
    }
}

/// Per group: the dense-point loss plus the losses of its three patches.
pub fn asym_objective(
    t: &RigidTransform,
    groups: &[StableGroup],
    patches: &[Patch],
    gt: &RigidTransform,
    model: &TemplateModel,
) -> f64 {
    groups
        .iter()
        .map(|g| {
            group_pose_loss(t, gt, model) + g.patch_ids.iter().map(|&i| patch_loss(t, &patches[i], gt)).sum::<f64>()
        })
        .sum()
}

/// A canonical surface model a residual is measured against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SurfaceModel {
    /// `n·z = offset`.
    Plane {
        normal: Vec3,
        offset: f64,
    },
    Cylinder {
        point: Vec3,
        dir: Vec3,
        radius: f64,
    },
}

impl SurfaceModel {
    pub fn of(patch: &Patch) -> SurfaceModel {
        match patch {
            Patch::Planar(p) => SurfaceModel::Plane {
                normal: p.normal,
                offset: p.offset,
            },
            Patch::Cylindrical(c) => SurfaceModel::Cylinder {
                point: c.axis_point,
                dir: c.axis_dir,
                radius: c.radius,
            },
        }
    }

    /// Residual at canonical point `z` and its spatial gradient.
    pub fn residual(&self, z: &Vec3) -> (f64, Vec3) {
        match *self {
            SurfaceModel::Plane { normal, offset } => (normal.dot(z) - offset, normal),
            SurfaceModel::Cylinder { point, dir, radius } => {
                let d = z - point;
                let w = d - dir * dir.dot(&d);
                let len = w.norm();
                let g = if len > 0.0 { w / len } else { Vec3::zeros() };
                (len - radius, g)
            }
        }
    }
}

/// Residual of observed point `y` under inverse pose `q`, and its Jacobian
/// with respect to the left twist update of `q`.
pub fn residual_and_jacobian(q: &RigidTransform, y: &Vec3, model: &SurfaceModel) -> (f64, Vector6<f64>) {
    let z = q.apply(y);
    let (r, g) = model.residual(&z);
    let jr = z.cross(&g);
    (r, Vector6::new(jr.x, jr.y, jr.z, g.x, g.y, g.z))
}

struct Normal6 {
    a: Matrix6<f64>,
    b: Vector6<f64>,
    cost: f64,
}

fn normal_equations(q: &RigidTransform, terms: &[(Vec3, SurfaceModel)]) -> Normal6 {
    let mut a = Matrix6::zeros();
    let mut b = Vector6::zeros();
    let mut cost = 0.0;
    for (y, m) in terms {
        let (r, j) = residual_and_jacobian(q, y, m);
        a += j * j.transpose();
        b += j * r;
        cost += r * r;
    }
    Normal6 { a, b, cost }
}

fn cost_of(q: &RigidTransform, terms: &[(Vec3, SurfaceModel)]) -> f64 {
    terms.iter().map(|(y, m)| m.residual(&q.apply(y)).0.powi(2)).sum()
}

/// Gauss–Newton on the inverse pose over fixed point/model pairs.
fn gauss_newton(
    q0: RigidTransform,
    terms: &[(Vec3, SurfaceModel)],
    params: &SolverParams,
) -> Result<(RigidTransform, f64)> {
    let mut q = q0;
    let mut last_step = f64::INFINITY;
    for _ in 0..params.max_iterations {
        let ne = normal_equations(&q, terms);
        let eig = symmetric_eigen(&ne.a)?;
        let (lmin, lmax) = (eig.values[0], eig.values[5]);
        if !(lmax > 0.0) || lmin <= params.singular_ratio * lmax {
            return Err(Error::SingularNormalEquations {
                condition: if lmin > 0.0 { lmax / lmin } else { f64::INFINITY },
            });
        }
        let mut x = Vector6::zeros();
        for i in 0..6 {
            let v = eig.vector(i);
            x -= v * (v.dot(&ne.b) / eig.values[i]);
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let cand = twist_to_transform(&Twist::from_vector(&(x * step))).compose(&q);
            if cost_of(&cand, terms) <= ne.cost {
                q = cand;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        last_step = x.norm() * step;
        if !accepted || last_step < params.step_tol {
            return Ok((q, cost_of(&q, terms)));
        }
    }
    if last_step > 1e-6 {
        return Err(Error::NoConvergence("group alignment"));
    }
    Ok((q, cost_of(&q, terms)))
}

/// Direction a patch pins down: plane normal or cylinder axis.
fn direction(p: &Patch) -> Vec3 {
    match p {
        Patch::Planar(p) => p.normal,
        Patch::Cylindrical(c) => c.axis_dir,
    }
}

/// Rotation `R` minimizing `Σ w‖R uᵢ − vᵢ‖²`.
fn kabsch(pairs: &[(Vec3, Vec3)]) -> UnitQuaternion<f64> {
    let mut h = Matrix3::zeros();
    for (u, v) in pairs {
        h += v * u.transpose();
    }
    let svd = h.svd(true, true);
    let (uu, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = (uu * vt).determinant().signum();
    let r = uu * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * vt;
    UnitQuaternion::from_matrix(&r)
}

/// Least-squares translation given the rotation, from plane offsets and
/// axis lines.
fn initial_translation(rot: &UnitQuaternion<f64>, pairs: &[(&Patch, &Patch)]) -> Vec3 {
    let mut a = Matrix3::zeros();
    let mut b = Vec3::zeros();
    for (obs, can) in pairs {
        match (obs, can) {
            (Patch::Planar(o), Patch::Planar(c)) => {
                let n = o.normal;
                let rhs = n.dot(&o.center) - n.dot(&(rot * c.center));
                a += n * n.transpose();
                b += n * rhs;
            }
            (Patch::Cylindrical(o), Patch::Cylindrical(c)) => {
                let p = Matrix3::identity() - o.axis_dir * o.axis_dir.transpose();
                a += p;
                b += p * (o.axis_point - rot * c.axis_point);
            }
            _ => {}
        }
    }
    let e = match symmetric_eigen(&a) {
        Ok(e) => e,
        Err(_) => return Vec3::zeros(),
    };
    let mut t = Vec3::zeros();
    for i in 0..3 {
        if e.values[i] > 1e-9 * e.values[2].max(1e-300) {
            let v = e.vector(i);
            t += v * (v.dot(&b) / e.values[i]);
        }
    }
    t
}

fn correspondence_terms(pairs: &[(&Patch, &Patch)]) -> Vec<(Vec3, SurfaceModel)> {
    let mut terms = Vec::new();
    for (obs, can) in pairs {
        let m = SurfaceModel::of(can);
        let pts = &obs.points().points;
        for j in stride_indices(pts.len(), PATCH_LOSS_POINTS) {
            terms.push((pts[j].position, m));
        }
    }
    terms
}

/// Pose aligning observed patches to their canonical counterparts.
///
/// Initialized by matching plane normals and cylinder axes (both axis
/// signs are tried), then Gauss–Newton on the summed squared
/// point-to-plane and point-to-axis residuals of up to 100 points per
/// observed patch.
pub fn solve_group_alignment(pairs: &[(&Patch, &Patch)], params: &SolverParams) -> Result<RigidTransform> {
    solve_group_alignment_with_cost(pairs, params).map(|(p, _)| p)
}

/// [`solve_group_alignment`] also returning the final squared residual sum.
pub fn solve_group_alignment_with_cost(
    pairs: &[(&Patch, &Patch)],
    params: &SolverParams,
) -> Result<(RigidTransform, f64)> {
    if pairs.is_empty() {
        return Err(Error::SingularNormalEquations {
            condition: f64::INFINITY,
        });
    }
    let cyl: Vec<usize> = (0..pairs.len())
        .filter(|&i| pairs[i].0.kind() == PatchKind::Cylindrical)
        .collect();
    let terms = correspondence_terms(pairs);
    let mut best: Option<(RigidTransform, f64)> = None;
    let mut last_err = None;
    for signs in 0..(1usize << cyl.len()) {
        let dirs: Vec<(Vec3, Vec3)> = pairs
            .iter()
            .enumerate()
            .map(|(i, (o, c))| {
                let flip = cyl
                    .iter()
                    .position(|&k| k == i)
                    .is_some_and(|bit| signs >> bit & 1 == 1);
                let u = if flip { -direction(c) } else { direction(c) };
                (u, direction(o))
            })
            .collect();
        let rot = kabsch(&dirs);
        let t = initial_translation(&rot, pairs);
        let p0 = RigidTransform::new(rot, t);
        match gauss_newton(p0.inverse(), &terms, params) {
            Ok((q, cost)) => {
                if best.as_ref().is_none_or(|b| cost < b.1) {
                    best = Some((q.inverse(), cost));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or(Error::NoConvergence("group alignment")))
}

/// Truncated rms distance from observed points (subsampled) to the
/// template surface posed by `pose`.
pub fn verification_residual(
    pose: &RigidTransform,
    cloud: &OrientedCloud,
    model: &TemplateModel,
    params: &SolverParams,
) -> f64 {
    verification_on(
        pose,
        cloud,
        model,
        params,
        &stride_indices(cloud.len(), params.verify_points),
    )
}

fn verification_on(
    pose: &RigidTransform,
    cloud: &OrientedCloud,
    model: &TemplateModel,
    params: &SolverParams,
    idx: &[usize],
) -> f64 {
    if idx.is_empty() {
        return f64::INFINITY;
    }
    let q = pose.inverse();
    let cap = params.verify_cap * model.diameter;
    let s: f64 = idx
        .iter()
        .map(|&i| {
            model
                .closest_surface_point(&q.apply(&cloud.points[i].position))
                .distance
                .min(cap)
                .powi(2)
        })
        .sum();
    (s / idx.len() as f64).sqrt()
}

fn angle_between(a: &Vec3, b: &Vec3, undirected: bool) -> f64 {
    let c = a.dot(b);
    let c = if undirected { c.abs() } else { c };
    c.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Whether `(obs_i, obs_j)` and `(can_i, can_j)` agree in relative
/// direction and, for parallel planes, in spacing.
fn pair_compatible(oi: &Patch, oj: &Patch, ci: &Patch, cj: &Patch, params: &SolverParams, diameter: f64) -> bool {
    let undirected = oi.kind() == PatchKind::Cylindrical || oj.kind() == PatchKind::Cylindrical;
    let ao = angle_between(&direction(oi), &direction(oj), undirected);
    let ac = angle_between(&direction(ci), &direction(cj), undirected);
    if (ao - ac).abs() > params.angle_tol_deg {
        return false;
    }
    if let (Patch::Planar(a), Patch::Planar(b), Patch::Planar(ca), Patch::Planar(cb)) = (oi, oj, ci, cj) {
        if ao < params.angle_tol_deg {
            let gap_o = (b.center - a.center).dot(&a.normal);
            let sc = (cb.center - ca.center).dot(&ca.normal);
            if (gap_o - sc).abs() > params.rel_tol * sc.abs() + 0.02 * diameter {
                return false;
            }
        }
    }
    true
}

fn unary_compatible(obs: &Patch, can: &Patch, params: &SolverParams) -> bool {
    match (obs, can) {
        (Patch::Planar(o), Patch::Planar(c)) => o.area_estimate <= (1.0 + 2.0 * params.rel_tol) * c.area_estimate,
        (Patch::Cylindrical(o), Patch::Cylindrical(c)) => (o.radius - c.radius).abs() <= params.rel_tol * c.radius,
        _ => false,
    }
}

fn handedness(dirs: [Vec3; 3]) -> f64 {
    dirs[0].cross(&dirs[1]).dot(&dirs[2])
}

/// Canonical-patch assignments for a group that pass descriptor pruning.
pub fn candidate_assignments(
    group: &StableGroup,
    observed: &[Patch],
    model: &TemplateModel,
    params: &SolverParams,
) -> Vec<[usize; 3]> {
    let can = &model.canonical_patches;
    let ids = group.patch_ids;
    let obs = [&observed[ids[0]], &observed[ids[1]], &observed[ids[2]]];
    let options: Vec<Vec<usize>> = obs
        .iter()
        .map(|o| {
            (0..can.len())
                .filter(|&c| unary_compatible(o, &can[c], params))
                .collect()
        })
        .collect();
    let all_planar = obs.iter().all(|o| o.kind() == PatchKind::Planar);
    let h_obs = handedness([direction(obs[0]), direction(obs[1]), direction(obs[2])]);
    let mut out = Vec::new();
    for &a in &options[0] {
        for &b in &options[1] {
            if b == a || !pair_compatible(obs[0], obs[1], &can[a], &can[b], params, model.diameter) {
                continue;
            }
            for &c in &options[2] {
                if c == a || c == b {
                    continue;
                }
                if !pair_compatible(obs[0], obs[2], &can[a], &can[c], params, model.diameter)
                    || !pair_compatible(obs[1], obs[2], &can[b], &can[c], params, model.diameter)
                {
                    continue;
                }
                if all_planar {
                    let h_can = handedness([direction(&can[a]), direction(&can[b]), direction(&can[c])]);
                    if h_obs.abs() > 0.1 && h_can.abs() > 0.1 && h_obs.signum() != h_can.signum() {
                        continue;
                    }
                }
                out.push([a, b, c]);
            }
        }
    }
    out
}

/// Searches canonical assignments for a stable group, solves each and
/// keeps the one whose posed template best explains the observed cloud.
/// Returns `None` when no assignment verifies below the acceptance rms.
pub fn hypothesize_and_verify(
    group: &StableGroup,
    observed: &[Patch],
    cloud: &OrientedCloud,
    model: &TemplateModel,
    params: &SolverParams,
) -> Option<PoseHypothesis> {
    let accept = params.accept_rms * model.diameter;
    let quick = stride_indices(cloud.len(), 48);
    let full = stride_indices(cloud.len(), params.verify_points);
    let mut best: Option<PoseHypothesis> = None;
    for assign in candidate_assignments(group, observed, model, params) {
        let pairs: Vec<(&Patch, &Patch)> = (0..3)
            .map(|k| (&observed[group.patch_ids[k]], &model.canonical_patches[assign[k]]))
            .collect();
        let Ok(pose) = solve_group_alignment(&pairs, params) else {
            continue;
        };
        if verification_on(&pose, cloud, model, params, &quick) > 3.0 * accept {
            continue;
        }
        let residual = verification_on(&pose, cloud, model, params, &full);
        if residual <= accept && best.as_ref().is_none_or(|b| residual < b.residual) {
            best = Some(PoseHypothesis {
                pose,
                residual,
                source_group: group.clone(),
                correspondence: [
                    (group.patch_ids[0], assign[0]),
                    (group.patch_ids[1], assign[1]),
                    (group.patch_ids[2], assign[2]),
                ],
            });
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub pose: RigidTransform,
    /// Rms of the inlier point-to-plane residuals at the final pose.
    pub rms: f64,
    pub iterations: usize,
}

struct IcpState {
    cost: f64,
    a: Matrix6<f64>,
    b: Vector6<f64>,
    inliers: usize,
    sq: f64,
}

fn icp_state(
    q: &RigidTransform,
    cloud: &OrientedCloud,
    idx: &[usize],
    model: &TemplateModel,
    params: &SolverParams,
) -> IcpState {
    let cutoff = params.refine_cutoff * model.diameter;
    let mut st = IcpState {
        cost: 0.0,
        a: Matrix6::zeros(),
        b: Vector6::zeros(),
        inliers: 0,
        sq: 0.0,
    };
    for &i in idx {
        let p = &cloud.points[i];
        let z = q.apply(&p.position);
        let hit = model.closest_surface_point(&z);
        if hit.distance > cutoff || q.rotate(&p.normal).dot(&hit.normal) < params.normal_agreement {
            st.cost += cutoff * cutoff;
            continue;
        }
        let r = hit.normal.dot(&(z - hit.point));
        let jr = z.cross(&hit.normal);
        let j = Vector6::new(jr.x, jr.y, jr.z, hit.normal.x, hit.normal.y, hit.normal.z);
        st.a += j * j.transpose();
        st.b += j * r;
        st.cost += hit.distance * hit.distance;
        st.sq += r * r;
        st.inliers += 1;
    }
    st
}

/// Point-to-plane ICP from `init` against the template surface. The
/// truncated cost never increases; directions the data cannot constrain
/// are left untouched.
pub fn refine_pose(
    init: &RigidTransform,
    cloud: &OrientedCloud,
    model: &TemplateModel,
    params: &SolverParams,
) -> Result<Refinement> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !init.is_finite() {
        return Err(Error::NoConvergence("refinement started from a non-finite pose"));
    }
    let idx = stride_indices(cloud.len(), params.refine_points);
    let mut q = init.inverse();
    let mut st = icp_state(&q, cloud, &idx, model, params);
    let mut iterations = 0;
    for it in 0..params.refine_iterations {
        iterations = it + 1;
        if st.inliers < 6 {
            break;
        }
        let eig = symmetric_eigen(&st.a)?;
        let lmax = eig.values[5];
        let mut x = Vector6::zeros();
        for i in 0..6 {
            if eig.values[i] > 1e-6 * lmax {
                let v = eig.vector(i);
                x -= v * (v.dot(&st.b) / eig.values[i]);
            }
        }
        if x.norm() < params.step_tol {
            break;
        }
        let mut step = 1.0;
        let mut next = None;
        for _ in 0..6 {
            let cand = twist_to_transform(&Twist::from_vector(&(x * step))).compose(&q);
            let cs = icp_state(&cand, cloud, &idx, model, params);
            if cs.cost < st.cost {
                next = Some((cand, cs));
                break;
            }
            step *= 0.5;
        }
        match next {
            Some((cand, cs)) => {
                let gain = st.cost - cs.cost;
                q = cand;
                st = cs;
                if gain <= 1e-12 * st.cost.max(1e-300) {
                    break;
                }
            }
            None => break,
        }
    }
    if !q.is_finite() {
        return Err(Error::NoConvergence("refinement diverged"));
    }
    let rms = if st.inliers > 0 {
        (st.sq / st.inliers as f64).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(Refinement {
        pose: q.inverse(),
        rms,
        iterations,
    })
}

/// Weighted fusion: arithmetic mean of translations and eigenvector mean
/// of rotations, both weighted by `weights`.
pub fn fuse_poses(poses: &[RigidTransform], weights: &[f64]) -> Result<RigidTransform> {
    if poses.is_empty() {
        return Err(Error::EmptyHypothesisSet);
    }
    if poses.len() != weights.len() {
        return Err(Error::LengthMismatch(poses.len(), weights.len()));
    }
    let entries: Vec<(UnitQuaternion<f64>, f64)> =
        poses.iter().zip(weights).map(|(p, &w)| (*p.rotation(), w)).collect();
    let rotation = weighted_rotation_mean(&entries)?;
    let total: f64 = weights.iter().filter(|w| **w > 0.0).sum();
    let translation = poses
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .fold(Vec3::zeros(), |acc, (p, &w)| acc + p.translation() * w)
        / total;
    // exact pass-through when all contributing poses coincide
    let contributing: Vec<&RigidTransform> = poses
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(p, _)| p)
        .collect();
    if contributing.iter().all(|p| *p == contributing[0]) {
        return Ok(*contributing[0]);
    }
    Ok(RigidTransform::new(rotation, translation))
}

/// Fuses hypotheses with their groups' stability weights.
pub fn fuse_group_poses(hyps: &[PoseHypothesis]) -> Result<RigidTransform> {
    let poses: Vec<RigidTransform> = hyps.iter().map(|h| h.pose).collect();
    let weights: Vec<f64> = hyps.iter().map(|h| group_weight(&h.source_group)).collect();
    fuse_poses(&poses, &weights)
}
