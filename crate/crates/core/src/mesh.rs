//! Triangle meshes for procedural templates: construction, closest-point
//! queries and area-weighted surface sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{OrientedPoint, RigidTransform, Vec3};

/// Triangles wound counter-clockwise seen from outside.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    /// Face label per triangle (canonical patch id, or `None`).
    pub labels: Vec<Option<usize>>,
}

impl TriangleMesh {
    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let t = self.triangles[i];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn normal(&self, i: usize) -> Vec3 {
        let [a, b, c] = self.triangle(i);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangle(i);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| self.area(i)).sum()
    }

    pub fn transformed(&self, t: &RigidTransform) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|v| t.apply(v)).collect(),
            triangles: self.triangles.clone(),
            labels: self.labels.clone(),
        }
    }

    pub fn append(&mut self, other: &TriangleMesh) {
        let base = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
        self.labels.extend_from_slice(&other.labels);
    }

    fn push_quad(&mut self, corners: [Vec3; 4], label: Option<usize>) {
        let base = self.vertices.len();
        self.vertices.extend_from_slice(&corners);
        self.triangles.push([base, base + 1, base + 2]);
        self.triangles.push([base, base + 2, base + 3]);
        self.labels.push(label);
        self.labels.push(label);
    }

    /// Axis-aligned box centered at `center`. Face labels are
    /// `first_label + {0:+x, 1:−x, 2:+y, 3:−y, 4:+z, 5:−z}`.
    pub fn cuboid(center: Vec3, size: Vec3, first_label: usize) -> TriangleMesh {
        let h = size / 2.0;
        let mut m = TriangleMesh::default();
        for axis in 0..3 {
            for (k, sign) in [1.0, -1.0].into_iter().enumerate() {
                let n = Vec3::ith(axis, sign);
                let u = Vec3::ith((axis + 1) % 3, 1.0);
                let v = n.cross(&u);
                let hu = h.dot(&u.abs());
                let hv = h.dot(&v.abs());
                let c = center + n * h[axis];
                m.push_quad(
                    [
                        c - u * hu - v * hv,
                        c + u * hu - v * hv,
                        c + u * hu + v * hv,
                        c - u * hu + v * hv,
                    ],
                    Some(first_label + 2 * axis + k),
                );
            }
        }
        m
    }

    /// Solid of revolution about `z`: a frustum from radius `r_bottom` at
    /// `z = -h/2` to `r_top` at `z = h/2`, capped. Labels: side 0, top 1,
    /// bottom 2.
    pub fn frustum(r_bottom: f64, r_top: f64, h: f64, segments: usize) -> TriangleMesh {
        let mut m = TriangleMesh::default();
        let z0 = -h / 2.0;
        let z1 = h / 2.0;
        let ring = |r: f64, z: f64, k: usize| {
            let th = std::f64::consts::TAU * k as f64 / segments as f64;
            Vec3::new(r * th.cos(), r * th.sin(), z)
        };
        for k in 0..segments {
            let (a0, a1) = (ring(r_bottom, z0, k), ring(r_bottom, z0, k + 1));
            let (b0, b1) = (ring(r_top, z1, k), ring(r_top, z1, k + 1));
            let base = m.vertices.len();
            m.vertices.extend_from_slice(&[a0, a1, b1, b0]);
            let side: &[[usize; 3]] = if r_top <= 0.0 {
                &[[0, 1, 3]]
            } else if r_bottom <= 0.0 {
                &[[0, 2, 3]]
            } else {
                &[[0, 1, 2], [0, 2, 3]]
            };
            for t in side {
                m.triangles.push([base + t[0], base + t[1], base + t[2]]);
                m.labels.push(Some(0));
            }
            let ct = m.vertices.len();
            m.vertices.extend_from_slice(&[Vec3::new(0.0, 0.0, z1), b0, b1]);
            if r_top > 0.0 {
                m.triangles.push([ct, ct + 1, ct + 2]);
                m.labels.push(Some(1));
            }
            let cb = m.vertices.len();
            m.vertices.extend_from_slice(&[Vec3::new(0.0, 0.0, z0), a1, a0]);
            if r_bottom > 0.0 {
                m.triangles.push([cb, cb + 1, cb + 2]);
                m.labels.push(Some(2));
            }
        }
        m
    }

    /// Latitude/longitude sphere, outward winding.
    pub fn uv_sphere(center: Vec3, r: f64, rings: usize, segments: usize) -> TriangleMesh {
        let mut m = TriangleMesh::default();
        let at = |i: usize, j: usize| {
            let phi = std::f64::consts::PI * i as f64 / rings as f64;
            let th = std::f64::consts::TAU * j as f64 / segments as f64;
            center + Vec3::new(phi.sin() * th.cos(), phi.sin() * th.sin(), phi.cos()) * r
        };
        for i in 0..rings {
            for j in 0..segments {
                let (a, b, c, d) = (at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1));
                let base = m.vertices.len();
                m.vertices.extend_from_slice(&[a, b, c, d]);
                if i + 1 < rings {
                    m.triangles.push([base, base + 1, base + 2]);
                    m.labels.push(None);
                }
                if i > 0 {
                    m.triangles.push([base, base + 2, base + 3]);
                    m.labels.push(None);
                }
            }
        }
        m
    }
}

/// Closest point to `p` on triangle `(a, b, c)`.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

pub fn point_triangle_distance(p: &Vec3, tri: &[Vec3; 3]) -> f64 {
    (p - closest_point_on_triangle(p, &tri[0], &tri[1], &tri[2])).norm()
}

/// Exhaustive distance from `p` to the mesh surface.
pub fn distance_to_mesh(p: &Vec3, mesh: &TriangleMesh) -> f64 {
    (0..mesh.triangles.len())
        .map(|i| point_triangle_distance(p, &mesh.triangle(i)))
        .fold(f64::INFINITY, f64::min)
}

/// A surface sample tagged with its source triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub point: OrientedPoint,
    pub triangle: usize,
}

/// Draws `n` area-weighted samples, skipping candidates for which
/// `reject` returns true (e.g. points buried inside another part).
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64, reject: impl Fn(&Vec3) -> bool) -> Vec<SurfaceSample> {
    let areas: Vec<f64> = (0..mesh.triangles.len()).map(|i| mesh.area(i)).collect();
    let mut cdf = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a;
        cdf.push(acc);
    }
    if acc <= 0.0 || n == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n && attempts < 1000 * n {
        attempts += 1;
        let x = rng.random::<f64>() * acc;
        let tri = cdf.partition_point(|&c| c < x).min(cdf.len() - 1);
        let [a, b, c] = mesh.triangle(tri);
        let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let p = a + (b - a) * u + (c - a) * v;
        if reject(&p) {
            continue;
        }
        out.push(SurfaceSample {
            point: OrientedPoint::new(p, mesh.normal(tri)),
            triangle: tri,
        });
    }
    out
}
