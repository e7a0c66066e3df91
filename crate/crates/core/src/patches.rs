//! Planar and cylindrical patch extraction.
//!
//! Segmentation is region growing over a k-NN graph: seeds are visited in
//! order of increasing local surface variation, neighbours join when their
//! normals agree within a tolerance, and only low-curvature members keep
//! growing the frontier. Each grown region is then labelled by the first
//! model (plane, then cylinder) that explains it within tolerance.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector5};
use serde::{Deserialize, Serialize};

use crate::eigen::symmetric_eigen;
use crate::error::{Error, Result};
use crate::geom::{OrientedCloud, OrientedPoint, RigidTransform, Vec3};
use crate::spatial::PointIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatchKind {
    Planar,
    Cylindrical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanarPatch {
    pub points: OrientedCloud,
    /// Indices of `points` in the segmented source cloud.
    pub indices: Vec<usize>,
    pub center: Vec3,
    pub normal: Vec3,
    /// Plane is `normal·x = offset`.
    pub offset: f64,
    pub area_estimate: f64,
    pub rms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CylindricalPatch {
    pub points: OrientedCloud,
    pub indices: Vec<usize>,
    pub axis_point: Vec3,
    pub axis_dir: Vec3,
    pub radius: f64,
    /// Angular extent covered around the axis, radians.
    pub arc_extent: f64,
    pub rms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Patch {
    Planar(PlanarPatch),
    Cylindrical(CylindricalPatch),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchDescriptor {
    pub kind: PatchKind,
    pub point_count: usize,
    pub area_or_arc: f64,
    pub radius: f64,
}

impl Patch {
    pub fn kind(&self) -> PatchKind {
        match self {
            Patch::Planar(_) => PatchKind::Planar,
            Patch::Cylindrical(_) => PatchKind::Cylindrical,
        }
    }

    pub fn points(&self) -> &OrientedCloud {
        match self {
            Patch::Planar(p) => &p.points,
            Patch::Cylindrical(c) => &c.points,
        }
    }

    pub fn indices(&self) -> &[usize] {
        match self {
            Patch::Planar(p) => &p.indices,
            Patch::Cylindrical(c) => &c.indices,
        }
    }

    /// Mean member position.
    pub fn centroid(&self) -> Vec3 {
        match self {
            Patch::Planar(p) => p.center,
            Patch::Cylindrical(c) => c.points.centroid().unwrap_or(c.axis_point),
        }
    }

    pub fn descriptor(&self) -> PatchDescriptor {
        match self {
            Patch::Planar(p) => PatchDescriptor {
                kind: PatchKind::Planar,
                point_count: p.points.len(),
                area_or_arc: p.area_estimate,
                radius: 0.0,
            },
            Patch::Cylindrical(c) => PatchDescriptor {
                kind: PatchKind::Cylindrical,
                point_count: c.points.len(),
                area_or_arc: c.arc_extent,
                radius: c.radius,
            },
        }
    }

    /// Model residual of a point: signed plane distance, or radial error.
    pub fn model_distance(&self, x: &Vec3) -> f64 {
        match self {
            Patch::Planar(p) => p.normal.dot(x) - p.offset,
            Patch::Cylindrical(c) => point_to_axis_distance(x, &c.axis_point, &c.axis_dir) - c.radius,
        }
    }

    pub fn transformed(&self, t: &RigidTransform) -> Patch {
        match self {
            Patch::Planar(p) => {
                let normal = t.rotate(&p.normal);
                let center = t.apply(&p.center);
                Patch::Planar(PlanarPatch {
                    points: p.points.transformed(t),
                    indices: p.indices.clone(),
                    center,
                    normal,
                    offset: normal.dot(&center),
                    area_estimate: p.area_estimate,
                    rms: p.rms,
                })
            }
            Patch::Cylindrical(c) => Patch::Cylindrical(CylindricalPatch {
                points: c.points.transformed(t),
                indices: c.indices.clone(),
                axis_point: t.apply(&c.axis_point),
                axis_dir: t.rotate(&c.axis_dir),
                radius: c.radius,
                arc_extent: c.arc_extent,
                rms: c.rms,
            }),
        }
    }
}

/// `‖(x − p) × d‖` for a unit direction `d`.
pub fn point_to_axis_distance(x: &Vec3, axis_point: &Vec3, axis_dir: &Vec3) -> f64 {
    (x - axis_point).cross(axis_dir).norm()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFit {
    pub normal: Vec3,
    pub offset: f64,
    pub rms: f64,
    pub centroid: Vec3,
}

impl PlaneFit {
    /// Flips the plane so its normal faces `viewpoint`.
    pub fn facing(mut self, viewpoint: &Vec3) -> Self {
        if self.normal.dot(&(viewpoint - self.centroid)) < 0.0 {
            self.normal = -self.normal;
            self.offset = -self.offset;
        }
        self
    }

    fn agreeing_with(mut self, dir: &Vec3) -> Self {
        if self.normal.dot(dir) < 0.0 {
            self.normal = -self.normal;
            self.offset = -self.offset;
        }
        self
    }
}

/// Total least squares plane through `points`. The normal sign is chosen
/// so that `offset ≥ 0` (ties broken by the eigenvector convention).
pub fn fit_plane(points: &[Vec3]) -> Result<PlaneFit> {
    if points.len() < 3 {
        return Err(Error::DegenerateCollinear);
    }
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = symmetric_eigen(&cov)?;
    if eig.values[1] <= 1e-12 * eig.values[2].max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateCollinear);
    }
    let mut normal = eig.vector(0).normalize();
    let mut offset = normal.dot(&centroid);
    if offset < -1e-12 {
        normal = -normal;
        offset = -offset;
    }
    let rms = (points.iter().map(|p| (normal.dot(p) - offset).powi(2)).sum::<f64>() / n).sqrt();
    Ok(PlaneFit {
        normal,
        offset,
        rms,
        centroid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CylinderFit {
    pub axis_point: Vec3,
    pub axis_dir: Vec3,
    pub radius: f64,
    pub rms: f64,
    pub arc_extent: f64,
}

pub const MIN_CYLINDER_ARC_DEG: f64 = 20.0;

fn orthonormal_basis(a: &Vec3) -> (Vec3, Vec3) {
    let helper = if a.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = a.cross(&helper).normalize();
    let e2 = a.cross(&e1);
    (e1, e2)
}

fn canonical_direction(mut a: Vec3) -> Vec3 {
    let (i, _) = a.iter().enumerate().fold(
        (0, 0.0_f64),
        |(bi, bv), (i, x)| {
            if x.abs() > bv + 1e-12 {
                (i, x.abs())
            } else {
                (bi, bv)
            }
        },
    );
    if a[i] < 0.0 {
        a = -a;
    }
    a
}

/// Angular coverage of a set of angles: 2π minus the largest gap.
fn angular_extent(mut angles: Vec<f64>) -> f64 {
    if angles.len() < 2 {
        return 0.0;
    }
    angles.sort_by(f64::total_cmp);
    let mut gap = angles[0] + std::f64::consts::TAU - angles[angles.len() - 1];
    for w in angles.windows(2) {
        gap = gap.max(w[1] - w[0]);
    }
    std::f64::consts::TAU - gap
}

fn arc_about(points: &[Vec3], c: &Vec3, a: &Vec3) -> f64 {
    let (e1, e2) = orthonormal_basis(a);
    angular_extent(
        points
            .iter()
            .map(|p| {
                let w = p - c;
                w.dot(&e2).atan2(w.dot(&e1))
            })
            .collect(),
    )
}

fn cylinder_residuals(points: &[Vec3], c: &Vec3, a: &Vec3, r: f64) -> f64 {
    points
        .iter()
        .map(|p| (point_to_axis_distance(p, c, a) - r).powi(2))
        .sum::<f64>()
}

/// Least-squares cylinder through oriented samples. The axis direction is
/// seeded from the normals (which are perpendicular to it), the axis point
/// from the intersection of the projected normal lines, then refined by
/// damped Gauss–Newton on `d(x, axis) − r`.
pub fn fit_cylinder(points: &[OrientedPoint]) -> Result<CylinderFit> {
    if points.len() < 6 {
        return Err(Error::DegenerateArc { arc_deg: 0.0 });
    }
    let n = points.len() as f64;
    let pos: Vec<Vec3> = points.iter().map(|p| p.position).collect();
    let centroid = pos.iter().fold(Vec3::zeros(), |a, p| a + p) / n;

    let mut ncov = Matrix3::zeros();
    for p in points {
        ncov += p.normal * p.normal.transpose();
    }
    let eig = symmetric_eigen(&(ncov / n))?;
    let mut a = eig.vector(0).normalize();
    let (e1, e2) = orthonormal_basis(&a);

    let normal_arc = angular_extent(
        points
            .iter()
            .map(|p| p.normal.dot(&e2).atan2(p.normal.dot(&e1)))
            .collect(),
    );
    if normal_arc.to_degrees() < MIN_CYLINDER_ARC_DEG {
        return Err(Error::DegenerateArc {
            arc_deg: normal_arc.to_degrees(),
        });
    }

    // point closest (in the cross-section) to all normal lines
    let mut lhs = Matrix2::zeros();
    let mut rhs = Vector2::zeros();
    for p in points {
        let q = Vector2::new((p.position - centroid).dot(&e1), (p.position - centroid).dot(&e2));
        let m = Vector2::new(p.normal.dot(&e1), p.normal.dot(&e2));
        let mn = m.norm();
        if mn < 1e-9 {
            continue;
        }
        let m = m / mn;
        let proj = Matrix2::identity() - m * m.transpose();
        lhs += proj;
        rhs += proj * q;
    }
    let c2 = lhs.lu().solve(&rhs).ok_or(Error::DegenerateArc {
        arc_deg: normal_arc.to_degrees(),
    })?;
    let mut c = centroid + e1 * c2.x + e2 * c2.y;
    let mut r = pos.iter().map(|p| point_to_axis_distance(p, &c, &a)).sum::<f64>() / n;

    let mut cost = cylinder_residuals(&pos, &c, &a, r);
    let mut lambda = 1e-6;
    let mut converged = false;
    for _ in 0..60 {
        let (e1, e2) = orthonormal_basis(&a);
        let mut jtj = nalgebra::Matrix5::<f64>::zeros();
        let mut jtr = Vector5::<f64>::zeros();
        for p in &pos {
            let w = p - c;
            let wp = w - a * w.dot(&a);
            let d = wp.norm();
            if d < 1e-15 {
                continue;
            }
            let u = wp / d;
            let wa = w.dot(&a);
            let j = Vector5::new(-wa * u.dot(&e1), -wa * u.dot(&e2), -u.dot(&e1), -u.dot(&e2), -1.0);
            let res = d - r;
            jtj += j * j.transpose();
            jtr += j * res;
        }
        let mut improved = false;
        for _ in 0..10 {
            let damped = jtj + nalgebra::Matrix5::from_diagonal(&jtj.diagonal()) * lambda;
            let Some(step) = damped.cholesky().map(|ch| -ch.solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let a_new = (a + e1 * step[0] + e2 * step[1]).normalize();
            let c_new = c + e1 * step[2] + e2 * step[3];
            let r_new = r + step[4];
            let cost_new = cylinder_residuals(&pos, &c_new, &a_new, r_new);
            if cost_new.is_finite() && cost_new <= cost {
                let small = step.norm() < 1e-12 * (1.0 + r.abs());
                a = a_new;
                c = c_new;
                r = r_new;
                let rel = (cost - cost_new) / cost.max(f64::MIN_POSITIVE);
                cost = cost_new;
                lambda = (lambda * 0.1).max(1e-12);
                improved = true;
                if small || rel < 1e-14 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved || converged {
            converged = true;
            break;
        }
    }
    if !converged || !r.is_finite() || r <= 0.0 {
        return Err(Error::NoConvergence("cylinder fit"));
    }

    let a = canonical_direction(a);
    // axis point nearest to the sample centroid
    let c = c + a * (centroid - c).dot(&a);
    Ok(CylinderFit {
        axis_point: c,
        axis_dir: a,
        radius: r,
        rms: (cost / n).sqrt(),
        arc_extent: arc_about(&pos, &c, &a),
    })
}

/// Region-growing parameters. All lengths are in scene units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationParams {
    pub k: usize,
    pub normal_angle_tol_deg: f64,
    pub dist_tol: f64,
    pub cyl_dist_tol: f64,
    pub min_points: usize,
    /// Points with surface variation above this do not extend the frontier.
    pub curvature_max: f64,
    /// Neighbours farther than this are not connected.
    pub max_edge: f64,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            k: 12,
            normal_angle_tol_deg: 12.0,
            dist_tol: 0.005,
            cyl_dist_tol: 0.005,
            min_points: 80,
            curvature_max: 0.02,
            max_edge: 0.05,
        }
    }
}

fn surface_variation(pts: &[Vec3]) -> f64 {
    let n = pts.len() as f64;
    let c = pts.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p - c;
        cov += d * d.transpose();
    }
    match symmetric_eigen(&cov) {
        Ok(e) => {
            let s = e.values.sum();
            if s > 0.0 {
                e.values[0].max(0.0) / s
            } else {
                0.0
            }
        }
        Err(_) => 1.0,
    }
}

/// Area of the convex hull of the points projected on the plane.
fn projected_hull_area(points: &[Vec3], normal: &Vec3) -> f64 {
    let (e1, e2) = orthonormal_basis(normal);
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.dot(&e1), p.dot(&e2))).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return 0.0;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    let mut area = 0.0;
    for i in 0..hull.len() {
        let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
        area += a.0 * b.1 - b.0 * a.1;
    }
    0.5 * area.abs()
}

/// Builds a planar patch from member indices, trimming members outside
/// `tol` and refitting. Returns `None` when fewer than `min_points` remain.
pub fn planar_patch_from(cloud: &OrientedCloud, indices: &[usize], tol: f64, min_points: usize) -> Option<PlanarPatch> {
    let mut members: Vec<usize> = indices.to_vec();
    let mut fit = None;
    for _ in 0..3 {
        if members.len() < min_points.max(3) {
            return None;
        }
        let pos: Vec<Vec3> = members.iter().map(|&i| cloud.points[i].position).collect();
        let f = fit_plane(&pos).ok()?;
        let keep: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&i| (f.normal.dot(&cloud.points[i].position) - f.offset).abs() <= tol)
            .collect();
        let stable = keep.len() == members.len();
        members = keep;
        fit = Some(f);
        if stable {
            break;
        }
    }
    let f = fit?;
    members.retain(|&i| (f.normal.dot(&cloud.points[i].position) - f.offset).abs() <= tol);
    if members.len() < min_points.max(3) {
        return None;
    }
    members.sort_unstable();
    let pts = cloud.select(&members);
    let mean_normal = pts.points.iter().fold(Vec3::zeros(), |a, p| a + p.normal);
    let f = f.agreeing_with(&mean_normal);
    let pos: Vec<Vec3> = pts.positions().copied().collect();
    let center = pts.centroid()?;
    let rms = (pos.iter().map(|p| (f.normal.dot(p) - f.offset).powi(2)).sum::<f64>() / pos.len() as f64).sqrt();
    Some(PlanarPatch {
        area_estimate: projected_hull_area(&pos, &f.normal),
        points: pts,
        indices: members,
        center,
        normal: f.normal,
        offset: f.offset,
        rms,
    })
}

/// Cylindrical counterpart of [`planar_patch_from`].
pub fn cylindrical_patch_from(
    cloud: &OrientedCloud,
    indices: &[usize],
    tol: f64,
    min_points: usize,
) -> Option<CylindricalPatch> {
    let mut members: Vec<usize> = indices.to_vec();
    let mut fit = None;
    for _ in 0..3 {
        if members.len() < min_points.max(6) {
            return None;
        }
        let pts: Vec<OrientedPoint> = members.iter().map(|&i| cloud.points[i]).collect();
        let f = fit_cylinder(&pts).ok()?;
        let keep: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&i| {
                (point_to_axis_distance(&cloud.points[i].position, &f.axis_point, &f.axis_dir) - f.radius).abs() <= tol
            })
            .collect();
        let stable = keep.len() == members.len();
        members = keep;
        fit = Some(f);
        if stable {
            break;
        }
    }
    let f = fit?;
    members.retain(|&i| {
        (point_to_axis_distance(&cloud.points[i].position, &f.axis_point, &f.axis_dir) - f.radius).abs() <= tol
    });
    if members.len() < min_points.max(6) {
        return None;
    }
    members.sort_unstable();
    let pts = cloud.select(&members);
    let pos: Vec<Vec3> = pts.positions().copied().collect();
    let rms = (cylinder_residuals(&pos, &f.axis_point, &f.axis_dir, f.radius) / pos.len() as f64).sqrt();
    Some(CylindricalPatch {
        arc_extent: arc_about(&pos, &f.axis_point, &f.axis_dir),
        points: pts,
        indices: members,
        axis_point: f.axis_point,
        axis_dir: f.axis_dir,
        radius: f.radius,
        rms,
    })
}

/// Neighbour lists, local surface variation and the index for a cloud.
struct Neighbourhood {
    knn: Vec<Vec<usize>>,
    curvature: Vec<f64>,
}

fn neighbourhood(cloud: &OrientedCloud, params: &SegmentationParams) -> Neighbourhood {
    let pos: Vec<Vec3> = cloud.positions().copied().collect();
    let index = PointIndex::new(&pos);
    let mut knn = Vec::with_capacity(pos.len());
    let mut curvature = Vec::with_capacity(pos.len());
    for p in &pos {
        let nn = index.knn(p, params.k + 1);
        let local: Vec<Vec3> = nn.iter().map(|(i, _)| pos[*i]).collect();
        curvature.push(if local.len() >= 3 {
            surface_variation(&local)
        } else {
            1.0
        });
        knn.push(
            nn.into_iter()
                .filter(|(_, d)| *d <= params.max_edge)
                .map(|(i, _)| i)
                .collect(),
        );
    }
    Neighbourhood { knn, curvature }
}

/// Grows a smooth region from `seed` over unassigned points.
fn grow_smooth(
    seed: usize,
    cloud: &OrientedCloud,
    nb: &Neighbourhood,
    assigned: &[bool],
    params: &SegmentationParams,
) -> Vec<usize> {
    let cos_tol = params.normal_angle_tol_deg.to_radians().cos();
    let mut in_region = vec![false; cloud.len()];
    let mut region = vec![seed];
    in_region[seed] = true;
    let mut queue = std::collections::VecDeque::from([seed]);
    while let Some(cur) = queue.pop_front() {
        let ncur = cloud.points[cur].normal;
        for &j in &nb.knn[cur] {
            if assigned[j] || in_region[j] {
                continue;
            }
            if ncur.dot(&cloud.points[j].normal) >= cos_tol {
                in_region[j] = true;
                region.push(j);
                if nb.curvature[j] <= params.curvature_max {
                    queue.push_back(j);
                }
            }
        }
    }
    region
}

/// Grows a region constrained to the plane through `seed`'s neighbourhood.
fn grow_plane(
    seed: usize,
    cloud: &OrientedCloud,
    nb: &Neighbourhood,
    assigned: &[bool],
    params: &SegmentationParams,
) -> Vec<usize> {
    let cos_tol = params.normal_angle_tol_deg.to_radians().cos();
    let mut normal = cloud.points[seed].normal;
    let mut offset = normal.dot(&cloud.points[seed].position);
    let mut in_region = vec![false; cloud.len()];
    let mut region = vec![seed];
    in_region[seed] = true;
    let mut queue = std::collections::VecDeque::from([seed]);
    let mut next_refit = 16;
    while let Some(cur) = queue.pop_front() {
        for &j in &nb.knn[cur] {
            if assigned[j] || in_region[j] {
                continue;
            }
            let p = &cloud.points[j];
            if normal.dot(&p.normal) >= cos_tol && (normal.dot(&p.position) - offset).abs() <= params.dist_tol {
                in_region[j] = true;
                region.push(j);
                queue.push_back(j);
            }
        }
        if region.len() >= next_refit {
            let pos: Vec<Vec3> = region.iter().map(|&i| cloud.points[i].position).collect();
            if let Ok(f) = fit_plane(&pos) {
                let f = f.agreeing_with(&normal);
                normal = f.normal;
                offset = f.offset;
            }
            next_refit *= 2;
        }
    }
    region
}

/// Segments `cloud` into disjoint planar and cylindrical patches.
pub fn segment_patches(cloud: &OrientedCloud, params: &SegmentationParams) -> Vec<Patch> {
    if cloud.len() < params.min_points.max(3) {
        return Vec::new();
    }
    let nb = neighbourhood(cloud, params);
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.sort_by(|&a, &b| nb.curvature[a].total_cmp(&nb.curvature[b]).then(a.cmp(&b)));

    let mut assigned = vec![false; cloud.len()];
    let mut tried = vec![false; cloud.len()];
    let mut patches = Vec::new();
    for &seed in &order {
        if assigned[seed] || tried[seed] || nb.curvature[seed] > params.curvature_max {
            continue;
        }
        let region = grow_smooth(seed, cloud, &nb, &assigned, params);
        for &i in &region {
            tried[i] = true;
        }
        if region.len() < params.min_points {
            continue;
        }
        let patch = classify_region(cloud, &region, params).or_else(|| {
            let plane = grow_plane(seed, cloud, &nb, &assigned, params);
            planar_patch_from(cloud, &plane, params.dist_tol, params.min_points).map(Patch::Planar)
        });
        if let Some(p) = patch {
            for &i in p.indices() {
                assigned[i] = true;
            }
            // released members may seed later regions
            for &i in &region {
                if !assigned[i] {
                    tried[i] = false;
                }
            }
            tried[seed] = true;
            patches.push(p);
        }
    }
    patches
}

fn classify_region(cloud: &OrientedCloud, region: &[usize], params: &SegmentationParams) -> Option<Patch> {
    let pos: Vec<Vec3> = region.iter().map(|&i| cloud.points[i].position).collect();
    let plane = fit_plane(&pos).ok()?;
    if plane.rms <= params.dist_tol {
        return planar_patch_from(cloud, region, params.dist_tol, params.min_points).map(Patch::Planar);
    }
    if plane.rms > 2.0 * params.dist_tol {
        let pts: Vec<OrientedPoint> = region.iter().map(|&i| cloud.points[i]).collect();
        if let Ok(cyl) = fit_cylinder(&pts) {
            if cyl.rms <= params.cyl_dist_tol {
                return cylindrical_patch_from(cloud, region, params.cyl_dist_tol, params.min_points)
                    .map(Patch::Cylindrical);
            }
        }
    }
    None
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum PatchRepr {
    Planar {
        normal: [f64; 3],
        offset: f64,
        center: [f64; 3],
        area: f64,
        rms: f64,
        indices: Vec<usize>,
    },
    Cylindrical {
        axis_point: [f64; 3],
        axis_dir: [f64; 3],
        radius: f64,
        arc_extent: f64,
        rms: f64,
        indices: Vec<usize>,
    },
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// JSON form with member indices into the source cloud.
pub fn patch_to_json(p: &Patch) -> serde_json::Value {
    let repr = match p {
        Patch::Planar(p) => PatchRepr::Planar {
            normal: arr(&p.normal),
            offset: p.offset,
            center: arr(&p.center),
            area: p.area_estimate,
            rms: p.rms,
            indices: p.indices.clone(),
        },
        Patch::Cylindrical(c) => PatchRepr::Cylindrical {
            axis_point: arr(&c.axis_point),
            axis_dir: arr(&c.axis_dir),
            radius: c.radius,
            arc_extent: c.arc_extent,
            rms: c.rms,
            indices: c.indices.clone(),
        },
    };
    serde_json::to_value(repr).expect("patch serializes")
}

/// Rebuilds a patch from its JSON form and the source cloud. Stored model
/// parameters are kept; member points are looked up by index.
pub fn patch_from_json(v: &serde_json::Value, cloud: &OrientedCloud) -> std::result::Result<Patch, String> {
    let repr: PatchRepr = serde_json::from_value(v.clone()).map_err(|e| e.to_string())?;
    let check = |idx: &[usize]| {
        idx.iter().find(|&&i| i >= cloud.len()).map_or(Ok(()), |i| {
            Err(format!("patch index {i} out of range ({} points)", cloud.len()))
        })
    };
    Ok(match repr {
        PatchRepr::Planar {
            normal,
            offset,
            center,
            area,
            rms,
            indices,
        } => {
            check(&indices)?;
            Patch::Planar(PlanarPatch {
                points: cloud.select(&indices),
                indices,
                center: center.into(),
                normal: Vec3::from(normal).normalize(),
                offset,
                area_estimate: area,
                rms,
            })
        }
        PatchRepr::Cylindrical {
            axis_point,
            axis_dir,
            radius,
            arc_extent,
            rms,
            indices,
        } => {
            check(&indices)?;
            Patch::Cylindrical(CylindricalPatch {
                points: cloud.select(&indices),
                indices,
                axis_point: axis_point.into(),
                axis_dir: Vec3::from(axis_dir).normalize(),
                radius,
                arc_extent,
                rms,
            })
        }
    })
}
