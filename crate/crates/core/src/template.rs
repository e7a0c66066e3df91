//! Canonical-pose object templates built from procedural primitives.
//!
//! Every primitive is centered at the origin of its axis-aligned bounding
//! box and shrunk, if needed, so that box fits inside the unit cube.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{FrameTag, OrientedCloud, OrientedPoint, RigidTransform, Vec3};
use crate::mesh::{closest_point_on_triangle, point_triangle_distance, sample_surface, SurfaceSample, TriangleMesh};
use crate::patches::{CylindricalPatch, Patch, PlanarPatch};
use crate::spatial::PointIndex;
use crate::symmetry::{Axis, SymmetrySpec};

pub const TEMPLATE_SAMPLES: usize = 500;
pub const PATCH_SAMPLES: usize = 100;
pub const DENSE_SAMPLES: usize = 20_000;
pub const MESH_SEGMENTS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    Box,
    Cylinder,
    BoxCluster,
    Revolution,
}

/// Primitive shape parameters, before normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrimitiveSpec {
    Box {
        size: [f64; 3],
    },
    Cylinder {
        radius: f64,
        height: f64,
    },
    /// A smaller box resting on top of a base box. `offset` is the
    /// xy-displacement of the top box's center from the base's center.
    BoxCluster {
        base: [f64; 3],
        top: [f64; 3],
        offset: [f64; 2],
    },
    Revolution {
        bottom_radius: f64,
        top_radius: f64,
        height: f64,
    },
}

impl PrimitiveSpec {
    pub fn kind(&self) -> PrimitiveKind {
        match self {
            PrimitiveSpec::Box { .. } => PrimitiveKind::Box,
            PrimitiveSpec::Cylinder { .. } => PrimitiveKind::Cylinder,
            PrimitiveSpec::BoxCluster { .. } => PrimitiveKind::BoxCluster,
            PrimitiveSpec::Revolution { .. } => PrimitiveKind::Revolution,
        }
    }

    /// Default instance of each kind.
    pub fn default_for(kind: PrimitiveKind) -> PrimitiveSpec {
        match kind {
            PrimitiveKind::Box => PrimitiveSpec::Box { size: [1.0, 0.7, 0.4] },
            PrimitiveKind::Cylinder => PrimitiveSpec::Cylinder {
                radius: 0.3,
                height: 0.8,
            },
            PrimitiveKind::BoxCluster => PrimitiveSpec::BoxCluster {
                base: [1.0, 0.6, 0.35],
                top: [0.4, 0.3, 0.35],
                offset: [0.25, 0.1],
            },
            PrimitiveKind::Revolution => PrimitiveSpec::Revolution {
                bottom_radius: 0.4,
                top_radius: 0.2,
                height: 0.8,
            },
        }
    }
}

/// A canonical-pose object model.
#[derive(Debug, Clone)]
pub struct TemplateModel {
    pub spec: PrimitiveSpec,
    pub mesh: TriangleMesh,
    pub surface_samples: OrientedCloud,
    pub canonical_patches: Vec<Patch>,
    pub diameter: f64,
    pub symmetry: SymmetrySpec,
    /// Canonical axis-aligned bounding box (min, max).
    pub aabb: (Vec3, Vec3),
    dense: Vec<SurfaceSample>,
    dense_index: PointIndex,
    sample_index: PointIndex,
    face_normals: Vec<Vec3>,
    /// Triangles sharing an edge, by vertex position.
    edge_neighbours: Vec<Vec<usize>>,
}

fn edge_neighbours(mesh: &TriangleMesh) -> Vec<Vec<usize>> {
    use std::collections::HashMap;
    let key = |v: &Vec3| {
        [
            (v.x * 1e9).round() as i64,
            (v.y * 1e9).round() as i64,
            (v.z * 1e9).round() as i64,
        ]
    };
    let mut edges: HashMap<([i64; 3], [i64; 3]), Vec<usize>> = HashMap::new();
    for (ti, t) in mesh.triangles.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (key(&mesh.vertices[t[k]]), key(&mesh.vertices[t[(k + 1) % 3]]));
            let e = if a <= b { (a, b) } else { (b, a) };
            edges.entry(e).or_default().push(ti);
        }
    }
    let mut out = vec![Vec::new(); mesh.triangles.len()];
    for tris in edges.values() {
        for &a in tris {
            for &b in tris {
                if a != b && !out[a].contains(&b) {
                    out[a].push(b);
                }
            }
        }
    }
    for n in &mut out {
        n.sort_unstable();
    }
    out
}

/// Closest surface point found by [`TemplateModel::closest_surface_point`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceHit {
    pub point: Vec3,
    pub normal: Vec3,
    pub distance: f64,
}

fn positive(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite() && *v > 0.0) {
        Ok(())
    } else {
        Err(Error::InvalidDimensions(format!(
            "dimensions must be positive and finite: {values:?}"
        )))
    }
}

fn planar(points: Vec<OrientedPoint>, center: Vec3, normal: Vec3, area: f64) -> Patch {
    Patch::Planar(PlanarPatch {
        indices: (0..points.len()).collect(),
        points: OrientedCloud::new(points, FrameTag::Canonical),
        center,
        normal,
        offset: normal.dot(&center),
        area_estimate: area,
        rms: 0.0,
    })
}

fn face_samples(mesh: &TriangleMesh, label: usize, seed: u64, reject: &dyn Fn(&Vec3) -> bool) -> Vec<OrientedPoint> {
    let mut sub = TriangleMesh::default();
    for (i, l) in mesh.labels.iter().enumerate() {
        if *l == Some(label) {
            let t = mesh.triangles[i];
            let base = sub.vertices.len();
            sub.vertices.extend(t.iter().map(|&v| mesh.vertices[v]));
            sub.triangles.push([base, base + 1, base + 2]);
            sub.labels.push(Some(label));
        }
    }
    sample_surface(&sub, PATCH_SAMPLES, seed, reject)
        .into_iter()
        .map(|s| s.point)
        .collect()
}

fn box_patches(
    mesh: &TriangleMesh,
    center: Vec3,
    size: Vec3,
    first: usize,
    reject: &dyn Fn(&Vec3) -> bool,
) -> Vec<Patch> {
    (0..6)
        .map(|f| {
            let axis = f / 2;
            let sign = if f % 2 == 0 { 1.0 } else { -1.0 };
            let n = Vec3::ith(axis, sign);
            let c = center + n * (size[axis] / 2.0);
            let area = size[(axis + 1) % 3] * size[(axis + 2) % 3];
            planar(
                face_samples(mesh, first + f, 1000 + (first + f) as u64, reject),
                c,
                n,
                area,
            )
        })
        .collect()
}

fn rotations_about(axis: Vec3, steps: usize) -> Vec<RigidTransform> {
    (1..steps)
        .map(|k| RigidTransform::from_axis_angle(&axis, std::f64::consts::TAU * k as f64 / steps as f64))
        .collect()
}

/// Proper symmetry group of an axis-aligned box, identity excluded.
fn cuboid_symmetries(size: &Vec3) -> Vec<RigidTransform> {
    let eq = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.max(b);
    let (x, y, z) = (size.x, size.y, size.z);
    if eq(x, y) && eq(y, z) {
        return cube_group();
    }
    let axis = if eq(x, y) {
        Some(Vec3::z())
    } else if eq(y, z) {
        Some(Vec3::x())
    } else if eq(x, z) {
        Some(Vec3::y())
    } else {
        None
    };
    match axis {
        None => vec![
            RigidTransform::rot_x_deg(180.0),
            RigidTransform::rot_y_deg(180.0),
            RigidTransform::rot_z_deg(180.0),
        ],
        Some(a) => {
            let mut out = rotations_about(a, 4);
            let perp = if a.x.abs() > 0.5 { Vec3::y() } else { Vec3::x() };
            for k in 0..4 {
                let dir = RigidTransform::from_axis_angle(&a, std::f64::consts::FRAC_PI_4 * k as f64).rotate(&perp);
                out.push(RigidTransform::from_axis_angle(&dir, std::f64::consts::PI));
            }
            out
        }
    }
}

/// The 23 non-identity rotations of the cube.
fn cube_group() -> Vec<RigidTransform> {
    let mut out = Vec::new();
    for a in [Vec3::x(), Vec3::y(), Vec3::z()] {
        out.extend(rotations_about(a, 4));
    }
    for s in [[1.0, 1.0, 1.0], [1.0, 1.0, -1.0], [1.0, -1.0, 1.0], [-1.0, 1.0, 1.0]] {
        out.extend(rotations_about(Vec3::from(s).normalize(), 3));
    }
    for s in [
        [1.0, 1.0, 0.0],
        [1.0, -1.0, 0.0],
        [1.0, 0.0, 1.0],
        [1.0, 0.0, -1.0],
        [0.0, 1.0, 1.0],
        [0.0, 1.0, -1.0],
    ] {
        out.push(RigidTransform::from_axis_angle(
            &Vec3::from(s).normalize(),
            std::f64::consts::PI,
        ));
    }
    out
}

fn shrink_factor(extent: &Vec3) -> f64 {
    let m = extent.max();
    if m > 1.0 {
        1.0 / m
    } else {
        1.0
    }
}

/// Builds a template for a procedural primitive.
pub fn make_primitive(spec: &PrimitiveSpec) -> Result<TemplateModel> {
    let no_reject = |_: &Vec3| false;
    match spec {
        PrimitiveSpec::Box { size } => {
            positive(size)?;
            let size = Vec3::from(*size);
            let size = size * shrink_factor(&size);
            let mesh = TriangleMesh::cuboid(Vec3::zeros(), size, 0);
            let patches = box_patches(&mesh, Vec3::zeros(), size, 0, &no_reject);
            let symmetry = SymmetrySpec::discrete(cuboid_symmetries(&size));
            TemplateModel::build(spec.clone(), mesh, patches, symmetry, &no_reject)
        }
        PrimitiveSpec::Cylinder { radius, height } => {
            positive(&[*radius, *height])?;
            let extent = Vec3::new(2.0 * radius, 2.0 * radius, *height);
            let s = shrink_factor(&extent);
            let (r, h) = (radius * s, height * s);
            revolution_template(spec.clone(), r, r, h)
        }
        PrimitiveSpec::Revolution {
            bottom_radius,
            top_radius,
            height,
        } => {
            positive(&[*height])?;
            if !(bottom_radius.is_finite() && top_radius.is_finite())
                || *bottom_radius < 0.0
                || *top_radius < 0.0
                || bottom_radius.max(*top_radius) <= 0.0
            {
                return Err(Error::InvalidDimensions(
                    "radii must be non-negative with one positive".into(),
                ));
            }
            let rmax = bottom_radius.max(*top_radius);
            let s = shrink_factor(&Vec3::new(2.0 * rmax, 2.0 * rmax, *height));
            revolution_template(spec.clone(), bottom_radius * s, top_radius * s, height * s)
        }
        PrimitiveSpec::BoxCluster { base, top, offset } => {
            positive(base)?;
            positive(top)?;
            let (base, top) = (Vec3::from(*base), Vec3::from(*top));
            let off = Vec3::new(offset[0], offset[1], 0.0);
            if (off.x.abs() + top.x / 2.0 > base.x / 2.0 + 1e-12) || (off.y.abs() + top.y / 2.0 > base.y / 2.0 + 1e-12)
            {
                return Err(Error::InvalidDimensions(
                    "top box must rest within the base footprint".into(),
                ));
            }
            let extent = Vec3::new(base.x, base.y, base.z + top.z);
            let s = shrink_factor(&extent);
            let (base, top, off) = (base * s, top * s, off * s);
            let zmid = (base.z + top.z) / 2.0;
            let base_c = Vec3::new(0.0, 0.0, base.z / 2.0 - zmid);
            let top_c = Vec3::new(off.x, off.y, base.z + top.z / 2.0 - zmid);
            let z_join = base.z - zmid;
            let hole = move |p: &Vec3| {
                (p.z - z_join).abs() <= 1e-9
                    && (p.x - top_c.x).abs() < top.x / 2.0
                    && (p.y - top_c.y).abs() < top.y / 2.0
            };
            let mut mesh = TriangleMesh::cuboid(base_c, base, 0);
            let mut upper = TriangleMesh::cuboid(top_c, top, 6);
            // the top box's bottom face (label 11) is glued to the base
            let keep: Vec<usize> = (0..upper.triangles.len())
                .filter(|&i| upper.labels[i] != Some(11))
                .collect();
            upper.triangles = keep.iter().map(|&i| upper.triangles[i]).collect();
            upper.labels = keep.iter().map(|&i| upper.labels[i]).collect();
            mesh.append(&upper);
            let mut patches = box_patches(&mesh, base_c, base, 0, &hole);
            if let Patch::Planar(p) = &mut patches[4] {
                p.area_estimate -= top.x * top.y;
            }
            let upper_patches = box_patches(&mesh, top_c, top, 6, &no_reject);
            patches.extend(upper_patches.into_iter().take(5));
            TemplateModel::build(spec.clone(), mesh, patches, SymmetrySpec::none(), &hole)
        }
    }
}

fn revolution_template(spec: PrimitiveSpec, rb: f64, rt: f64, h: f64) -> Result<TemplateModel> {
    let no_reject = |_: &Vec3| false;
    let mesh = TriangleMesh::frustum(rb, rt, h, MESH_SEGMENTS);
    let mut patches = Vec::new();
    if (rb - rt).abs() <= 1e-12 {
        let side = face_samples(&mesh, 0, 2000, &no_reject);
        patches.push(Patch::Cylindrical(CylindricalPatch {
            indices: (0..side.len()).collect(),
            points: OrientedCloud::new(side, FrameTag::Canonical),
            axis_point: Vec3::zeros(),
            axis_dir: Vec3::z(),
            radius: rb,
            arc_extent: std::f64::consts::TAU,
            rms: 0.0,
        }));
    }
    let cap_area = |r: f64| 0.5 * MESH_SEGMENTS as f64 * r * r * (std::f64::consts::TAU / MESH_SEGMENTS as f64).sin();
    if rt > 0.0 {
        patches.push(planar(
            face_samples(&mesh, 1, 2001, &no_reject),
            Vec3::new(0.0, 0.0, h / 2.0),
            Vec3::z(),
            cap_area(rt),
        ));
    }
    if rb > 0.0 {
        patches.push(planar(
            face_samples(&mesh, 2, 2002, &no_reject),
            Vec3::new(0.0, 0.0, -h / 2.0),
            -Vec3::z(),
            cap_area(rb),
        ));
    }
    let flips = if (rb - rt).abs() <= 1e-12 {
        vec![RigidTransform::rot_x_deg(180.0)]
    } else {
        vec![]
    };
    let symmetry = SymmetrySpec::continuous(Axis::new(Vec3::zeros(), Vec3::z()), flips);
    TemplateModel::build(spec, mesh, patches, symmetry, &no_reject)
}

impl TemplateModel {
    /// Assembles a template and validates its symmetry declaration.
    pub fn build(
        spec: PrimitiveSpec,
        mesh: TriangleMesh,
        canonical_patches: Vec<Patch>,
        symmetry: SymmetrySpec,
        reject: &dyn Fn(&Vec3) -> bool,
    ) -> Result<TemplateModel> {
        let samples: Vec<OrientedPoint> = sample_surface(&mesh, TEMPLATE_SAMPLES, 17, reject)
            .into_iter()
            .map(|s| s.point)
            .collect();
        let dense = sample_surface(&mesh, DENSE_SAMPLES, 23, reject);
        if samples.len() < TEMPLATE_SAMPLES || dense.is_empty() {
            return Err(Error::InvalidDimensions("degenerate surface".into()));
        }
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &mesh.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        let mut diameter: f64 = 0.0;
        for (i, a) in mesh.vertices.iter().enumerate() {
            for b in &mesh.vertices[i + 1..] {
                diameter = diameter.max((a - b).norm_squared());
            }
        }
        let dense_pos: Vec<Vec3> = dense.iter().map(|s| s.point.position).collect();
        let sample_pos: Vec<Vec3> = samples.iter().map(|s| s.position).collect();
        let model = TemplateModel {
            spec,
            surface_samples: OrientedCloud::new(samples, FrameTag::Canonical),
            canonical_patches,
            diameter: diameter.sqrt(),
            symmetry,
            aabb: (lo, hi),
            dense_index: PointIndex::new(&dense_pos),
            sample_index: PointIndex::new(&sample_pos),
            face_normals: (0..mesh.triangles.len()).map(|i| mesh.normal(i)).collect(),
            edge_neighbours: edge_neighbours(&mesh),
            dense,
            mesh,
        };
        model.symmetry.validate(&model)?;
        Ok(model)
    }

    pub fn kind(&self) -> PrimitiveKind {
        self.spec.kind()
    }

    /// Closest point on the mesh among the triangles of the few dense
    /// samples nearest to `p` (canonical frame). Exact whenever the true
    /// closest triangle carries one of those samples.
    pub fn closest_surface_point(&self, p: &Vec3) -> SurfaceHit {
        let mut best = SurfaceHit {
            point: *p,
            normal: Vec3::z(),
            distance: f64::INFINITY,
        };
        let mut candidates: Vec<usize> = Vec::with_capacity(16);
        for (i, _) in self.dense_index.knn(p, 4) {
            let tri = self.dense[i].triangle;
            for &t in std::iter::once(&tri).chain(&self.edge_neighbours[tri]) {
                if !candidates.contains(&t) {
                    candidates.push(t);
                }
            }
        }
        for tri in candidates {
            let [a, b, c] = self.mesh.triangle(tri);
            let q = closest_point_on_triangle(p, &a, &b, &c);
            let d = (p - q).norm();
            if d < best.distance {
                best = SurfaceHit {
                    point: q,
                    normal: self.face_normals[tri],
                    distance: d,
                };
            }
        }
        best
    }

    /// Exhaustive point-to-mesh distance.
    pub fn exact_surface_distance(&self, p: &Vec3) -> f64 {
        (0..self.mesh.triangles.len())
            .map(|i| point_triangle_distance(p, &self.mesh.triangle(i)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Nearest template sample to `p` (canonical frame): (index, distance).
    pub fn nearest_sample(&self, p: &Vec3) -> (usize, f64) {
        self.sample_index.nearest(p).expect("template has samples")
    }

    pub fn dense_samples(&self) -> &[SurfaceSample] {
        &self.dense
    }

    /// Mean nearest-neighbour spacing of the surface samples.
    pub fn sample_spacing(&self) -> f64 {
        let pts = &self.surface_samples.points;
        let total: f64 = pts
            .iter()
            .map(|p| self.sample_index.knn(&p.position, 2).get(1).map_or(0.0, |x| x.1))
            .sum();
        total / pts.len() as f64
    }

    pub fn centroid(&self) -> Vec3 {
        (self.aabb.0 + self.aabb.1) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_template() {
        let t = make_primitive(&PrimitiveSpec::Box { size: [1.0, 0.7, 0.4] }).unwrap();
        assert_eq!(t.surface_samples.len(), 500);
        assert_eq!(t.canonical_patches.len(), 6);
        let d = (1.0f64 + 0.49 + 0.16).sqrt();
        assert!((t.diameter - d).abs() < 1e-12);
        assert_eq!(t.symmetry.transforms.len(), 3);
        for p in &t.canonical_patches {
            assert_eq!(p.points().len(), 100);
            for q in &p.points().points {
                assert!(p.model_distance(&q.position).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn oversized_box_is_shrunk() {
        let t = make_primitive(&PrimitiveSpec::Box { size: [2.0, 1.0, 1.0] }).unwrap();
        assert!((t.aabb.1 - t.aabb.0 - Vec3::new(1.0, 0.5, 0.5)).norm() < 1e-12);
        assert_eq!(t.symmetry.transforms.len(), 7);
    }

    #[test]
    fn cube_has_full_group() {
        let t = make_primitive(&PrimitiveSpec::Box { size: [1.0, 1.0, 1.0] }).unwrap();
        assert_eq!(t.symmetry.transforms.len(), 23);
    }

    #[test]
    fn invalid_dimensions() {
        assert!(matches!(
            make_primitive(&PrimitiveSpec::Box { size: [1.0, 0.0, 0.4] }),
            Err(Error::InvalidDimensions(_))
        ));
        assert!(make_primitive(&PrimitiveSpec::Cylinder {
            radius: -1.0,
            height: 1.0
        })
        .is_err());
        assert!(make_primitive(&PrimitiveSpec::BoxCluster {
            base: [1.0, 0.6, 0.3],
            top: [0.4, 0.3, 0.3],
            offset: [0.5, 0.0]
        })
        .is_err());
    }

    #[test]
    fn cylinder_template() {
        let t = make_primitive(&PrimitiveSpec::Cylinder {
            radius: 0.3,
            height: 0.8,
        })
        .unwrap();
        let axis = t.symmetry.axis.unwrap();
        assert!(axis.c.norm() < 1e-12 && (axis.a - Vec3::z()).norm() < 1e-12);
        assert_eq!(t.canonical_patches.len(), 3);
        assert!((t.diameter - (0.36f64 + 0.64).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn cluster_samples_avoid_the_glued_region() {
        let t = make_primitive(&PrimitiveSpec::default_for(PrimitiveKind::BoxCluster)).unwrap();
        assert_eq!(t.canonical_patches.len(), 11);
        assert!(t.symmetry.transforms.is_empty());
        let hi = t.aabb.1;
        assert!((hi.z - 0.35).abs() < 1e-12);
        for s in t.dense_samples() {
            let p = s.point.position;
            let inside_top = (p.x - 0.25).abs() < 0.2 - 1e-9 && (p.y - 0.1).abs() < 0.15 - 1e-9 && p.z.abs() < 1e-9;
            assert!(!inside_top, "{p:?}");
        }
    }

    #[test]
    fn closest_surface_point_matches_exhaustive() {
        let t = make_primitive(&PrimitiveSpec::Cylinder {
            radius: 0.3,
            height: 0.8,
        })
        .unwrap();
        for s in t.surface_samples.points.iter().take(100) {
            let p = s.position + s.normal * 0.01;
            let hit = t.closest_surface_point(&p);
            let exact = t.exact_surface_distance(&p);
            assert!((hit.distance - exact).abs() < 1e-6, "{} vs {}", hit.distance, exact);
        }
    }
}
