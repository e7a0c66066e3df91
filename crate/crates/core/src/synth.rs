//! Synthetic scenes: procedural templates posed in front of a pinhole
//! camera, rendered to depth with optional noise and rectangular
//! occluders, plus unprojection back to oriented clouds.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::eigen::symmetric_eigen;
use crate::error::{Error, Result};
use crate::geom::{FrameTag, OrientedCloud, OrientedPoint, RigidTransform, Vec3};
use crate::metrics::{rasterize_into, read_depth, write_depth, DepthImage, Intrinsics};
use crate::spatial::PointIndex;
pub use crate::template::{make_primitive, PrimitiveKind, PrimitiveSpec, TemplateModel};

pub const DEFAULT_QUANTIZATION: f64 = 1e-4;

/// Pixel rectangle `[u0, u1) × [v0, v1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub u0: usize,
    pub v0: usize,
    pub u1: usize,
    pub v1: usize,
}

impl Rect {
    pub fn contains(&self, u: usize, v: usize) -> bool {
        u >= self.u0 && u < self.u1 && v >= self.v0 && v < self.v1
    }

    pub fn area(&self) -> usize {
        self.u1.saturating_sub(self.u0) * self.v1.saturating_sub(self.v0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    /// Index into [`SceneSpec::templates`].
    pub template: usize,
    /// Canonical frame to world frame.
    pub pose: RigidTransform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub templates: Vec<PrimitiveSpec>,
    pub objects: Vec<SceneObject>,
    pub intrinsics: Intrinsics,
    pub width: usize,
    pub height: usize,
    /// World frame to camera frame.
    pub camera: RigidTransform,
    #[serde(default)]
    pub occlusions: Vec<Rect>,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "default_quantization")]
    pub quantization: f64,
    pub seed: u64,
}

fn default_quantization() -> f64 {
    DEFAULT_QUANTIZATION
}

impl SceneSpec {
    pub fn build_templates(&self) -> Result<Vec<TemplateModel>> {
        self.templates.iter().map(make_primitive).collect()
    }

    /// Pose of object `i` in the camera frame.
    pub fn camera_pose(&self, i: usize) -> RigidTransform {
        self.camera.compose(&self.objects[i].pose)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Canonical frame to camera frame.
    pub pose: RigidTransform,
    /// Visible pixels over pixels covered when rendered alone.
    pub visibility: f64,
    /// Sorted row-major pixel indices where this object is observed.
    #[serde(skip)]
    pub mask: Vec<usize>,
}

/// Renders all objects into one z-buffer, then applies occluders, noise and
/// quantization. Deterministic in `(spec, seed)`.
pub fn render_scene(spec: &SceneSpec, templates: &[TemplateModel]) -> (DepthImage, Vec<GroundTruth>) {
    let mut depth = DepthImage::empty(spec.width, spec.height, spec.intrinsics);
    let mut owner = vec![usize::MAX; spec.width * spec.height];
    let mut solo = Vec::with_capacity(spec.objects.len());
    for (i, obj) in spec.objects.iter().enumerate() {
        let pose = spec.camera_pose(i);
        let mesh = &templates[obj.template].mesh;
        let mut alone = DepthImage::empty(spec.width, spec.height, spec.intrinsics);
        rasterize_into(mesh, &pose, &mut alone, |_| {});
        solo.push(alone.covered());
        rasterize_into(mesh, &pose, &mut depth, |idx| owner[idx] = i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).expect("finite sigma");
    for v in 0..spec.height {
        for u in 0..spec.width {
            let idx = v * spec.width + u;
            if spec.occlusions.iter().any(|r| r.contains(u, v)) {
                depth.values[idx] = 0.0;
                owner[idx] = usize::MAX;
                continue;
            }
            let z = depth.values[idx] as f64;
            if z <= 0.0 {
                continue;
            }
            let mut zn = if spec.noise_sigma > 0.0 {
                z + noise.sample(&mut rng)
            } else {
                z
            };
            if spec.quantization > 0.0 {
                zn = (zn / spec.quantization).round() * spec.quantization;
            }
            if zn <= 0.0 {
                depth.values[idx] = 0.0;
                owner[idx] = usize::MAX;
            } else {
                depth.values[idx] = zn as f32;
            }
        }
    }

    let gts = (0..spec.objects.len())
        .map(|i| {
            let mask: Vec<usize> = owner
                .iter()
                .enumerate()
                .filter(|(_, o)| **o == i)
                .map(|(p, _)| p)
                .collect();
            let visibility = if solo[i] == 0 {
                0.0
            } else {
                mask.len() as f64 / solo[i] as f64
            };
            GroundTruth {
                pose: spec.camera_pose(i),
                visibility: visibility.min(1.0),
                mask,
            }
        })
        .collect();
    (depth, gts)
}

/// Camera-frame oriented cloud of the masked pixels. Normals come from PCA
/// over the `k` nearest points and face the camera.
pub fn unproject(depth: &DepthImage, mask: &[usize], intrinsics: &Intrinsics, k: usize) -> Result<OrientedCloud> {
    let positions: Vec<Vec3> = mask
        .iter()
        .filter(|&&p| p < depth.values.len() && depth.values[p] > 0.0)
        .map(|&p| {
            intrinsics.unproject(
                (p % depth.width) as f64,
                (p / depth.width) as f64,
                depth.values[p] as f64,
            )
        })
        .collect();
    if positions.is_empty() {
        return Err(Error::EmptyMask);
    }
    let index = PointIndex::new(&positions);
    let points = positions
        .iter()
        .map(|p| {
            let nn = index.knn(p, k.max(3));
            let mut n = pca_normal(nn.iter().map(|(j, _)| &positions[*j])).unwrap_or(Vec3::z());
            // the ray to the point is p itself
            if n.dot(p) > 0.0 {
                n = -n;
            }
            OrientedPoint::new(*p, n)
        })
        .collect();
    Ok(OrientedCloud::new(points, FrameTag::Camera))
}

fn pca_normal<'a>(pts: impl Iterator<Item = &'a Vec3> + Clone) -> Option<Vec3> {
    let n = pts.clone().count();
    if n < 3 {
        return None;
    }
    let mean = pts.clone().fold(Vec3::zeros(), |a, p| a + p) / n as f64;
    let cov = pts.fold(Matrix3::zeros(), |a, p| {
        let d = p - mean;
        a + d * d.transpose()
    });
    let eig = symmetric_eigen(&cov).ok()?;
    Some(eig.vector(0).normalize())
}

/// Parameters for random scene generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneGenParams {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub distance: f64,
    /// Lateral jitter of the object center, scene units.
    pub jitter: f64,
    pub noise_sigma: f64,
    pub quantization: f64,
    /// Inclusive range of occluder count; `(0, 0)` disables occlusion.
    pub occluders: (usize, usize),
    /// Occluder area as a fraction of the unoccluded mask area.
    pub occluder_area: (f64, f64),
}

impl Default for SceneGenParams {
    fn default() -> Self {
        Self {
            width: 160,
            height: 120,
            focal: 180.0,
            distance: 2.5,
            jitter: 0.15,
            noise_sigma: 0.0,
            quantization: DEFAULT_QUANTIZATION,
            occluders: (0, 0),
            occluder_area: (0.05, 0.20),
        }
    }
}

impl SceneGenParams {
    /// Depth noise σ = 0.005 with 1–3 occluders.
    pub fn perturbed() -> Self {
        Self {
            noise_sigma: 0.005,
            occluders: (1, 3),
            ..Self::default()
        }
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fx: self.focal,
            fy: self.focal,
            cx: (self.width as f64 - 1.0) / 2.0,
            cy: (self.height as f64 - 1.0) / 2.0,
        }
    }
}

/// Uniform random rotation.
pub fn random_rotation(rng: &mut impl Rng) -> UnitQuaternion<f64> {
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]))
}

/// Whether the viewing direction `v` (object to camera, canonical frame)
/// shows enough of `kind` to pin its pose.
pub fn informative_view(kind: PrimitiveKind, v: &Vec3) -> bool {
    match kind {
        // three faces visible
        PrimitiveKind::Box => v.iter().all(|c| c.abs() >= 0.3),
        // the upper box sits on +z, so look from above
        PrimitiveKind::BoxCluster => v.z >= 0.3 && v.x.abs() >= 0.3 && v.y.abs() >= 0.3,
        // one cap and the mantle
        PrimitiveKind::Cylinder | PrimitiveKind::Revolution => (0.25..=0.95).contains(&v.z.abs()),
    }
}

/// One object of `template` at a random informative pose.
pub fn random_scene(template: &PrimitiveSpec, params: &SceneGenParams, seed: u64) -> Result<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = template.kind();
    let model = make_primitive(template)?;
    let k = params.intrinsics();
    let rotation = loop {
        let q = random_rotation(&mut rng);
        // camera at the origin, object near +z: the view direction is −z in
        // the camera frame, taken into the canonical frame
        let v = q.inverse() * Vec3::new(0.0, 0.0, -1.0);
        if informative_view(kind, &v) {
            break q;
        }
    };
    let center = Vec3::new(
        rng.random_range(-params.jitter..=params.jitter),
        rng.random_range(-params.jitter..=params.jitter),
        params.distance,
    );
    // canonical centroid lands on `center`
    let t = center - rotation * model.centroid();
    let pose = RigidTransform::new(rotation, t);
    let mut spec = SceneSpec {
        templates: vec![template.clone()],
        objects: vec![SceneObject { template: 0, pose }],
        intrinsics: k,
        width: params.width,
        height: params.height,
        camera: RigidTransform::identity(),
        occlusions: Vec::new(),
        noise_sigma: params.noise_sigma,
        quantization: params.quantization,
        seed,
    };
    let (lo, hi) = params.occluders;
    if hi > 0 {
        let (_, gts) = render_scene(&spec, std::slice::from_ref(&model));
        spec.occlusions = random_occluders(&gts[0].mask, params, lo, hi, &mut rng);
    }
    Ok(spec)
}

fn random_occluders(mask: &[usize], params: &SceneGenParams, lo: usize, hi: usize, rng: &mut impl Rng) -> Vec<Rect> {
    if mask.is_empty() {
        return Vec::new();
    }
    let w = params.width;
    let (mut umin, mut umax, mut vmin, mut vmax) = (usize::MAX, 0, usize::MAX, 0);
    for &p in mask {
        umin = umin.min(p % w);
        umax = umax.max(p % w);
        vmin = vmin.min(p / w);
        vmax = vmax.max(p / w);
    }
    let count = rng.random_range(lo..=hi);
    (0..count)
        .map(|_| {
            let frac = rng.random_range(params.occluder_area.0..=params.occluder_area.1);
            let area = frac * mask.len() as f64;
            let aspect: f64 = rng.random_range(0.5..=2.0);
            let rw = ((area * aspect).sqrt().round() as usize).max(1);
            let rh = ((area / aspect).sqrt().round() as usize).max(1);
            let cu = rng.random_range(umin..=umax);
            let cv = rng.random_range(vmin..=vmax);
            let u0 = cu.saturating_sub(rw / 2);
            let v0 = cv.saturating_sub(rh / 2);
            Rect {
                u0,
                v0,
                u1: (u0 + rw).min(params.width),
                v1: (v0 + rh).min(params.height),
            }
        })
        .collect()
}

/// Run-length text encoding of a sorted pixel mask: `start:len` runs.
pub fn encode_mask(mask: &[usize]) -> String {
    let mut out = String::new();
    let mut i = 0;
    while i < mask.len() {
        let start = mask[i];
        let mut len = 1;
        while i + len < mask.len() && mask[i + len] == start + len {
            len += 1;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        let _ = write!(out, "{start}:{len}");
        i += len;
    }
    out
}

pub fn decode_mask(text: &str) -> std::result::Result<Vec<usize>, String> {
    let mut mask = Vec::new();
    for run in text.split_whitespace() {
        let (s, l) = run.split_once(':').ok_or_else(|| format!("bad run {run:?}"))?;
        let s: usize = s.parse().map_err(|_| format!("bad run start {s:?}"))?;
        let l: usize = l.parse().map_err(|_| format!("bad run length {l:?}"))?;
        if mask.last().is_some_and(|&m| m >= s) {
            return Err("runs must be increasing".into());
        }
        mask.extend(s..s + l);
    }
    Ok(mask)
}

/// A rendered scene as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub spec: SceneSpec,
    pub depth: DepthImage,
    pub ground_truth: Vec<GroundTruth>,
}

pub const DEPTH_FILE: &str = "depth.dpth";
pub const MASKS_FILE: &str = "masks.txt";
pub const GT_FILE: &str = "gt.json";
pub const SPEC_FILE: &str = "spec.json";

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the depth raster, masks (one object per line), ground truth and
/// scene spec into `dir`.
pub fn write_bundle(dir: &Path, bundle: &SceneBundle) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_depth(&dir.join(DEPTH_FILE), &bundle.depth)?;
    let masks: String = bundle
        .ground_truth
        .iter()
        .map(|g| encode_mask(&g.mask) + "\n")
        .collect();
    write_text(&dir.join(MASKS_FILE), &masks)?;
    let gt = serde_json::to_string_pretty(&bundle.ground_truth).expect("serializable");
    write_text(&dir.join(GT_FILE), &(gt + "\n"))?;
    let spec = serde_json::to_string_pretty(&bundle.spec).expect("serializable");
    write_text(&dir.join(SPEC_FILE), &(spec + "\n"))
}

pub fn read_bundle(dir: &Path) -> Result<SceneBundle> {
    let read = |name: &str| {
        let p = dir.join(name);
        std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    };
    let spec_path = dir.join(SPEC_FILE);
    let spec: SceneSpec = serde_json::from_str(&read(SPEC_FILE)?).map_err(|e| Error::data(&spec_path, e))?;
    let depth = read_depth(&dir.join(DEPTH_FILE), spec.intrinsics)?;
    if depth.width != spec.width || depth.height != spec.height {
        return Err(Error::data(
            dir.join(DEPTH_FILE),
            "raster size disagrees with the scene",
        ));
    }
    let gt_path = dir.join(GT_FILE);
    let mut ground_truth: Vec<GroundTruth> =
        serde_json::from_str(&read(GT_FILE)?).map_err(|e| Error::data(&gt_path, e))?;
    let masks_path = dir.join(MASKS_FILE);
    let masks_text = read(MASKS_FILE)?;
    let lines: Vec<&str> = masks_text.lines().collect();
    if lines.len() != ground_truth.len() {
        return Err(Error::data(&masks_path, "one mask line per object expected"));
    }
    for (g, line) in ground_truth.iter_mut().zip(lines) {
        g.mask = decode_mask(line).map_err(|e| Error::data(&masks_path, e))?;
        if g.mask.last().is_some_and(|&m| m >= depth.values.len()) {
            return Err(Error::data(&masks_path, "mask pixel outside the image"));
        }
    }
    Ok(SceneBundle {
        spec,
        depth,
        ground_truth,
    })
}

/// ASCII PLY with `x y z nx ny nz` per vertex.
pub fn write_ply(path: &Path, cloud: &OrientedCloud) -> Result<()> {
    let mut s = String::new();
    let _ = write!(
        s,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property float nx\nproperty float ny\nproperty float nz\nend_header\n",
        cloud.len()
    );
    for p in &cloud.points {
        let (x, n) = (p.position, p.normal);
        let _ = writeln!(s, "{} {} {} {} {} {}", x.x, x.y, x.z, n.x, n.y, n.z);
    }
    write_text(path, &s)
}
