//! Object symmetries, optimal assignment between pose sets, and rotation
//! axes of surfaces of revolution.

use nalgebra::{DMatrix, Matrix3, UnitQuaternion, Vector2};
use serde::{Deserialize, Serialize};

use crate::eigen::symmetric_eigen;
use crate::error::{Error, Result};
use crate::geom::{rotation_geodesic_deg, OrientedCloud, OrientedPoint, RigidTransform, Vec3};
use crate::groups::StableGroup;
use crate::patches::{point_to_axis_distance, Patch};
use crate::posesolve::{asym_objective, group_pose_loss};
use crate::stability::accumulate_covariance;
use crate::template::TemplateModel;

/// Number of sampled angles about a continuous symmetry axis.
pub const AXIS_ANGLE_SAMPLES: usize = 16;

/// Tolerance, relative to the diameter, for accepting a declared symmetry.
pub const SYMMETRY_TOL: f64 = 1e-3;

/// A rotation axis: a point on it and a unit direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub c: Vec3,
    pub a: Vec3,
}

impl Axis {
    pub fn new(c: Vec3, a: Vec3) -> Self {
        Axis { c, a: a.normalize() }
    }

    pub fn transformed(&self, t: &RigidTransform) -> Axis {
        Axis {
            c: t.apply(&self.c),
            a: t.rotate(&self.a),
        }
    }

    /// Rotation by `theta` about this axis.
    pub fn rotation(&self, theta: f64) -> RigidTransform {
        RigidTransform::about_line(&self.c, &self.a, theta)
    }

    /// Distance from `p` to the axis line.
    pub fn distance(&self, p: &Vec3) -> f64 {
        point_to_axis_distance(p, &self.c, &self.a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymmetryKind {
    None,
    Discrete,
    Continuous,
}

/// Proper rigid self-maps of a template. `transforms` excludes the
/// identity; for the continuous kind it holds the extra discrete factors
/// (e.g. a top/bottom flip) combined with rotations about `axis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetrySpec {
    pub kind: SymmetryKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transforms: Vec<RigidTransform>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<Axis>,
}

impl SymmetrySpec {
    pub fn none() -> Self {
        SymmetrySpec {
            kind: SymmetryKind::None,
            transforms: Vec::new(),
            axis: None,
        }
    }

    pub fn discrete(transforms: Vec<RigidTransform>) -> Self {
        SymmetrySpec {
            kind: if transforms.is_empty() {
                SymmetryKind::None
            } else {
                SymmetryKind::Discrete
            },
            transforms,
            axis: None,
        }
    }

    pub fn continuous(axis: Axis, flips: Vec<RigidTransform>) -> Self {
        SymmetrySpec {
            kind: SymmetryKind::Continuous,
            transforms: flips,
            axis: Some(axis),
        }
    }

    /// Discrete part including the identity, identity first.
    pub fn discrete_set(&self) -> Vec<RigidTransform> {
        std::iter::once(RigidTransform::identity())
            .chain(self.transforms.iter().copied())
            .collect()
    }

    /// The full sampled set: the discrete set, and for continuous specs
    /// its product with the rotations by `κπ/8`, `κ = 1..16`.
    pub fn elements(&self) -> Vec<RigidTransform> {
        let discrete = self.discrete_set();
        match (self.kind, self.axis) {
            (SymmetryKind::Continuous, Some(axis)) => {
                let mut out = Vec::with_capacity(discrete.len() * AXIS_ANGLE_SAMPLES);
                for k in 1..=AXIS_ANGLE_SAMPLES {
                    let rot = axis.rotation(k as f64 * std::f64::consts::PI / 8.0);
                    out.extend(discrete.iter().map(|s| rot.compose(s)));
                }
                out
            }
            _ => discrete,
        }
    }

    /// Whether some discrete factor reverses the axis direction.
    pub fn flips_axis(&self) -> bool {
        match self.axis {
            Some(axis) => self.transforms.iter().any(|s| s.rotate(&axis.a).dot(&axis.a) < -0.5),
            None => false,
        }
    }

    /// Checks that every declared map is a proper symmetry of `model` and
    /// that the discrete set is closed under composition.
    pub fn validate(&self, model: &TemplateModel) -> Result<()> {
        let tol = SYMMETRY_TOL * model.diameter;
        if self.kind == SymmetryKind::Continuous && self.axis.is_none() {
            return Err(Error::InvalidSymmetry("continuous symmetry requires an axis".into()));
        }
        if self.kind == SymmetryKind::None && (!self.transforms.is_empty() || self.axis.is_some()) {
            return Err(Error::InvalidSymmetry("kind none carries no transforms".into()));
        }
        let mut maps = self.transforms.clone();
        if let Some(axis) = self.axis {
            maps.extend((1..AXIS_ANGLE_SAMPLES).map(|k| axis.rotation(k as f64 * std::f64::consts::PI / 8.0)));
        }
        for (i, s) in maps.iter().enumerate() {
            if !s.is_finite() {
                return Err(Error::InvalidSymmetry(format!("transform {i} is not finite")));
            }
            let worst = model
                .surface_samples
                .points
                .iter()
                .map(|p| model.exact_surface_distance(&s.apply(&p.position)))
                .fold(0.0, f64::max);
            if worst >= tol {
                return Err(Error::InvalidSymmetry(format!(
                    "transform {i} moves samples {worst:.3e} off the surface"
                )));
            }
        }
        let set = self.discrete_set();
        for a in &set {
            for b in &set {
                let ab = a.compose(b);
                let closed = set.iter().any(|c| {
                    rotation_geodesic_deg(&ab, c) < 1e-6
                        && (ab.translation() - c.translation()).norm() < 1e-6 * model.diameter
                });
                if !closed {
                    return Err(Error::InvalidSymmetry(
                        "discrete set is not closed under composition".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// `B[m][k] = Σ_j ‖T_m x_j − T_k x_j‖` over the template samples.
pub fn benefit_matrix(pred: &[RigidTransform], gt: &[RigidTransform], model: &TemplateModel) -> Result<DMatrix<f64>> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch(pred.len(), gt.len()));
    }
    Ok(DMatrix::from_fn(pred.len(), gt.len(), |m, k| {
        group_pose_loss(&pred[m], &gt[k], model)
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentResult {
    /// `permutation[m]` is the column assigned to row `m`.
    pub permutation: Vec<usize>,
    pub total_cost: f64,
}

/// Minimum-cost perfect matching on a square matrix (Hungarian method with
/// potentials, O(n³)).
pub fn optimal_assignment(cost: &DMatrix<f64>) -> Result<AssignmentResult> {
    let n = cost.nrows();
    if cost.ncols() != n {
        return Err(Error::LengthMismatch(cost.nrows(), cost.ncols()));
    }
    for r in 0..n {
        for c in 0..n {
            if !cost[(r, c)].is_finite() {
                return Err(Error::NonFinite(r, c));
            }
        }
    }
    // 1-based arrays; column 0 is a virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut permutation = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            permutation[p[j] - 1] = j - 1;
        }
    }
    let total_cost = permutation.iter().enumerate().map(|(r, &c)| cost[(r, c)]).sum();
    Ok(AssignmentResult {
        permutation,
        total_cost,
    })
}

/// `min_S group_pose_loss(T∘S, gt)` over the symmetry set.
pub fn symmetry_aware_error(
    t: &RigidTransform,
    gt: &RigidTransform,
    spec: &SymmetrySpec,
    model: &TemplateModel,
) -> f64 {
    spec.elements()
        .iter()
        .map(|s| group_pose_loss(&t.compose(s), gt, model))
        .fold(f64::INFINITY, f64::min)
}

/// Symmetry element `S` whose `T∘S` is rotationally closest to `reference`.
pub fn closest_symmetric_pose(t: &RigidTransform, reference: &RigidTransform, spec: &SymmetrySpec) -> RigidTransform {
    match (spec.kind, spec.axis) {
        (SymmetryKind::Continuous, Some(axis)) => {
            let mut best = *t;
            let mut best_err = f64::INFINITY;
            for s in spec.discrete_set() {
                let ts = t.compose(&s);
                // T∘S∘Rot(θ, axis) = Rot(θ, T·axis)∘T∘S; choose θ aligning rotations
                let world_axis = axis.transformed(&ts);
                let rel = reference.rotation() * ts.rotation().inverse();
                let theta = twist_angle(&rel, &world_axis.a);
                let candidate = world_axis.rotation(theta).compose(&ts);
                let err = rotation_geodesic_deg(&candidate, reference);
                if err < best_err {
                    best_err = err;
                    best = candidate;
                }
            }
            best
        }
        _ => spec
            .discrete_set()
            .iter()
            .map(|s| t.compose(s))
            .min_by(|a, b| rotation_geodesic_deg(a, reference).total_cmp(&rotation_geodesic_deg(b, reference)))
            .unwrap_or(*t),
    }
}

/// Angle of the twist component of `q` about unit axis `a`
/// (swing-twist decomposition).
fn twist_angle(q: &UnitQuaternion<f64>, a: &Vec3) -> f64 {
    let v = q.imag();
    let proj = a.dot(&v);
    2.0 * proj.atan2(q.w)
}

/// Rotation error in degrees modulo the symmetry. For continuous specs it
/// is the angle between the posed axes, folded when a flip is declared.
pub fn symmetric_rotation_error_deg(t: &RigidTransform, gt: &RigidTransform, spec: &SymmetrySpec) -> f64 {
    match (spec.kind, spec.axis) {
        (SymmetryKind::Continuous, Some(axis)) => {
            let a = t.rotate(&axis.a);
            let b = gt.rotate(&axis.a);
            let ang = a.dot(&b).clamp(-1.0, 1.0).acos().to_degrees();
            if spec.flips_axis() {
                ang.min(180.0 - ang)
            } else {
                ang
            }
        }
        _ => spec
            .discrete_set()
            .iter()
            .map(|s| rotation_geodesic_deg(&t.compose(s), gt))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Sum over the discrete symmetry set of the asymmetric objective, each
/// symmetric prediction paired with a symmetric ground truth by optimal
/// assignment on the benefit matrix.
pub fn dsym_objective(
    t: &RigidTransform,
    spec: &SymmetrySpec,
    gt: &RigidTransform,
    model: &TemplateModel,
    groups: &[StableGroup],
    patches: &[Patch],
) -> Result<f64> {
    let set = spec.discrete_set();
    let pred: Vec<RigidTransform> = set.iter().map(|s| t.compose(s)).collect();
    let truth: Vec<RigidTransform> = set.iter().map(|s| gt.compose(s)).collect();
    let b = benefit_matrix(&pred, &truth, model)?;
    let assignment = optimal_assignment(&b)?;
    Ok(assignment
        .permutation
        .iter()
        .enumerate()
        .map(|(m, &k)| asym_objective(&pred[m], groups, patches, &truth[k], model))
        .sum())
}

/// Mean over `θ ∈ {κπ/8}` of the summed sample displacement between
/// rotating by `θ` about the predicted and about the true axis.
pub fn rotation_axis_loss(pred: &Axis, gt: &Axis, model: &TemplateModel) -> f64 {
    let mut total = 0.0;
    for k in 1..=AXIS_ANGLE_SAMPLES {
        let theta = k as f64 * std::f64::consts::PI / 8.0;
        let tp = pred.rotation(theta);
        let tg = gt.rotation(theta);
        total += model
            .surface_samples
            .points
            .iter()
            .map(|p| (tp.apply(&p.position) - tg.apply(&p.position)).norm())
            .sum::<f64>();
    }
    total / AXIS_ANGLE_SAMPLES as f64
}

/// Rotation by `γ` about direction `a`, translated to `c`:
/// `q = (cos γ/2, sin γ/2 · a)`, `t = c`.
pub fn pose_from_axis(c: &Vec3, a: &Vec3, gamma: f64) -> RigidTransform {
    let a = a.normalize();
    let (s, w) = (gamma / 2.0).sin_cos();
    RigidTransform::from_wxyz([w, s * a.x, s * a.y, s * a.z], [c.x, c.y, c.z])
}

/// Minimal rotation taking `from` onto `to` (both unit).
pub fn rotation_between(from: &Vec3, to: &Vec3) -> UnitQuaternion<f64> {
    UnitQuaternion::rotation_between(from, to).unwrap_or_else(|| {
        // antiparallel: half turn about any perpendicular
        let perp = if from.x.abs() < 0.9 {
            from.cross(&Vec3::x())
        } else {
            from.cross(&Vec3::y())
        };
        UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(perp), std::f64::consts::PI)
    })
}

/// Eigen-ratio below which the second rotational stiffness is treated as
/// zero, i.e. more than one axis explains the observation.
const AXIS_DEGENERACY: f64 = 1e-2;

fn perp_basis(a: &Vec3) -> (Vec3, Vec3) {
    let helper = if a.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = a.cross(&helper).normalize();
    (u, a.cross(&u))
}

/// Sum over height bins of the variance of point-to-axis distance.
fn binned_radius_spread(points: &[Vec3], axis: &Axis, bins: usize) -> f64 {
    let hs: Vec<f64> = points.iter().map(|p| (p - axis.c).dot(&axis.a)).collect();
    let (lo, hi) = hs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    let width = ((hi - lo) / bins as f64).max(1e-12);
    let mut sum = vec![0.0; bins];
    let mut sq = vec![0.0; bins];
    let mut cnt = vec![0usize; bins];
    for (p, h) in points.iter().zip(&hs) {
        let b = (((h - lo) / width) as usize).min(bins - 1);
        let r = axis.distance(p);
        sum[b] += r;
        sq[b] += r * r;
        cnt[b] += 1;
    }
    (0..bins)
        .filter(|&b| cnt[b] > 1)
        .map(|b| sq[b] - sum[b] * sum[b] / cnt[b] as f64)
        .sum()
}

/// Estimates the rotation axis of an observed surface of revolution.
///
/// The axis direction `a` spans the rotational null space of the slippage
/// covariance once translations are eliminated (Schur complement); the
/// matching translation gives a point on the axis. The line is then
/// polished by compass search on the per-height-bin spread of
/// point-to-axis distances, using only points whose normals are not
/// parallel to the axis. The returned center is the observed centroid
/// projected onto the axis.
pub fn estimate_rotation_axis(cloud: &OrientedCloud, model: &TemplateModel) -> Result<Axis> {
    if model.symmetry.kind != SymmetryKind::Continuous {
        return Err(Error::InvalidSymmetry("template has no continuous symmetry".into()));
    }
    if cloud.len() < 6 {
        return Err(Error::DegenerateObservation);
    }
    let centroid = cloud.centroid().ok_or(Error::EmptyCloud)?;
    let scale = (cloud
        .points
        .iter()
        .map(|p| (p.position - centroid).norm_squared())
        .sum::<f64>()
        / cloud.len() as f64)
        .sqrt();
    if scale <= 0.0 {
        return Err(Error::DegenerateObservation);
    }
    let local: Vec<OrientedPoint> = cloud
        .points
        .iter()
        .map(|p| OrientedPoint {
            position: (p.position - centroid) / scale,
            normal: p.normal,
        })
        .collect();
    let cov = accumulate_covariance(&OrientedCloud::new(local.clone(), cloud.frame), false)?.matrix;
    let crr: Matrix3<f64> = cov.fixed_view::<3, 3>(0, 0).into_owned();
    let crt: Matrix3<f64> = cov.fixed_view::<3, 3>(0, 3).into_owned();
    let ctt: Matrix3<f64> = cov.fixed_view::<3, 3>(3, 3).into_owned();
    let et = symmetric_eigen(&ctt)?;
    let mut ctt_pinv = Matrix3::zeros();
    for i in 0..3 {
        if et.values[i] > 1e-9 * et.values[2] {
            let v = et.vector(i);
            ctt_pinv += v * v.transpose() / et.values[i];
        }
    }
    let schur = crr - crt * ctt_pinv * crt.transpose();
    let es = symmetric_eigen(&schur)?;
    let reference = cov.trace() / 6.0;
    if es.values[1] <= AXIS_DEGENERACY * reference {
        return Err(Error::DegenerateObservation);
    }
    let a = es.vector(0).normalize();
    let t = -(ctt_pinv * crt.transpose() * a);
    let c_local = a.cross(&t);
    let mut axis = Axis::new(centroid + c_local * scale, a);

    let side: Vec<Vec3> = cloud
        .points
        .iter()
        .filter(|p| p.normal.dot(&axis.a).abs() < 0.9)
        .map(|p| p.position)
        .collect();
    if side.len() >= 6 {
        let bins = (side.len() / 20).clamp(4, 32);
        let eval = |ax: &Axis| binned_radius_spread(&side, ax, bins);
        let mut best = eval(&axis);
        let mut step = 0.05;
        while step > 1e-7 {
            let mut improved = false;
            let (u, w) = perp_basis(&axis.a);
            let moves = [
                (Vector2::new(step, 0.0), Vector2::zeros()),
                (Vector2::new(-step, 0.0), Vector2::zeros()),
                (Vector2::new(0.0, step), Vector2::zeros()),
                (Vector2::new(0.0, -step), Vector2::zeros()),
                (Vector2::zeros(), Vector2::new(step, 0.0)),
                (Vector2::zeros(), Vector2::new(-step, 0.0)),
                (Vector2::zeros(), Vector2::new(0.0, step)),
                (Vector2::zeros(), Vector2::new(0.0, -step)),
            ];
            for (da, dc) in moves {
                let cand = Axis::new(axis.c + (u * dc.x + w * dc.y) * scale, axis.a + u * da.x + w * da.y);
                let v = eval(&cand);
                if v < best {
                    best = v;
                    axis = cand;
                    improved = true;
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
    }
    let c = axis.c + axis.a * (centroid - axis.c).dot(&axis.a);
    Ok(Axis::new(c, axis.a))
}
