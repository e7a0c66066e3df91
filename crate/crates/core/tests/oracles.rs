//! Worked examples checked against independent computations.

use nalgebra::{Matrix6, UnitQuaternion, Vector4, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use slipstab::geom::{FrameTag, OrientedCloud, OrientedPoint, RigidTransform, Vec3};
use slipstab::groups::StableGroup;
use slipstab::mesh::TriangleMesh;
use slipstab::metrics::{add, adi, read_depth, render_depth, vsd, write_depth, DepthImage, Intrinsics};
use slipstab::patches::{fit_cylinder, fit_plane, segment_patches, Patch, SegmentationParams};
use slipstab::posesolve::{asym_objective, group_pose_loss, patch_loss, refine_pose, SolverParams};
use slipstab::stability::{accumulate_covariance, analyze, point_to_plane_energy};
use slipstab::symmetry::{benefit_matrix, dsym_objective, SymmetrySpec};
use slipstab::synth::{
    make_primitive, random_scene, render_scene, unproject, PrimitiveKind, PrimitiveSpec, SceneGenParams, SceneObject,
    SceneSpec, TemplateModel,
};

fn random_pose(rng: &mut ChaCha8Rng) -> RigidTransform {
    let axis = Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    )
    .normalize();
    RigidTransform::new(
        UnitQuaternion::from_scaled_axis(axis * rng.random_range(0.0..3.1)),
        Vec3::new(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(2.0..3.0),
        ),
    )
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> OrientedCloud {
    let pts = (0..n)
        .map(|_| {
            let p = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let d = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            OrientedPoint::new(p, d.normalize())
        })
        .collect();
    OrientedCloud::new(pts, FrameTag::Camera)
}

/// Homogeneous-matrix application, independent of the quaternion path.
fn apply_h(t: &RigidTransform, p: &Vec3) -> Vec3 {
    let h = t.to_matrix4() * Vector4::new(p.x, p.y, p.z, 1.0);
    Vec3::new(h.x, h.y, h.z)
}

#[test]
fn energy_equals_per_point_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cloud = random_cloud(&mut rng, 50);
    for _ in 0..20 {
        let t = random_pose(&mut rng);
        let oracle: f64 = cloud
            .points
            .iter()
            .map(|p| apply_h(&t, &p.position).dot(&p.normal).powi(2))
            .sum();
        let got = point_to_plane_energy(&t, &cloud).unwrap();
        assert!((got - oracle).abs() <= 1e-12 * oracle.max(1.0));
    }
}

#[test]
fn covariance_is_psd_sum_of_outer_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cloud = random_cloud(&mut rng, 200);
    let c = accumulate_covariance(&cloud, false).unwrap().matrix;
    let mut oracle = Matrix6::zeros();
    for p in &cloud.points {
        let w = p.position.cross(&p.normal);
        let row = Vector6::new(w.x, w.y, w.z, p.normal.x, p.normal.y, p.normal.z);
        oracle += row * row.transpose();
    }
    assert!((c - oracle).amax() <= 1e-10 * oracle.amax());
    let eig = nalgebra::SymmetricEigen::new(c);
    assert!(eig.eigenvalues.min() >= -1e-10 * eig.eigenvalues.max());
    let rebuilt = eig.eigenvectors * Matrix6::from_diagonal(&eig.eigenvalues) * eig.eigenvectors.transpose();
    assert!((rebuilt - c).amax() <= 1e-9 * c.amax());
}

#[test]
fn plane_fit_rms_matches_noise_level() {
    // fitting three parameters to N noisy points leaves E[rms²] = σ²(1 − 3/N)
    let (sigma, n, trials) = (0.01, 20usize, 4000);
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut acc = 0.0;
    for _ in 0..trials {
        let pts: Vec<Vec3> = (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    0.5 + noise.sample(&mut rng),
                )
            })
            .collect();
        acc += fit_plane(&pts).unwrap().rms.powi(2);
    }
    let mean = acc / trials as f64;
    let expected = sigma * sigma * (1.0 - 3.0 / n as f64);
    assert!(
        (mean / expected - 1.0).abs() < 0.03,
        "mean rms² {mean:e} vs {expected:e}"
    );
}

#[test]
fn noisy_cylinder_radius_is_recovered() {
    let noise = Normal::new(0.0, 0.001).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut errs = Vec::new();
    for _ in 0..21 {
        let pose = random_pose(&mut rng);
        let r = 0.3;
        let pts: Vec<OrientedPoint> = (0..400)
            .map(|_| {
                let th: f64 = rng.random_range(0.0..std::f64::consts::PI);
                let n = Vec3::new(th.cos(), th.sin(), 0.0);
                let p = n * (r + noise.sample(&mut rng)) + Vec3::new(0.0, 0.0, rng.random_range(-0.4..0.4));
                OrientedPoint::new(pose.apply(&p), pose.rotate(&n))
            })
            .collect();
        errs.push((fit_cylinder(&pts).unwrap().radius - r).abs());
    }
    errs.sort_by(|a, b| a.total_cmp(b));
    assert!(errs[10] < 0.002, "median radius error {}", errs[10]);
}

/// Face of the canonical box that `x` lies on: `2·axis + (x<0)`.
fn box_face(x: &Vec3, half: &Vec3) -> usize {
    let axis = (0..3)
        .max_by(|&a, &b| (x[a].abs() / half[a]).total_cmp(&(x[b].abs() / half[b])))
        .unwrap();
    2 * axis + usize::from(x[axis] < 0.0)
}

#[test]
fn box_corner_segments_into_three_orthogonal_faces() {
    let model = make_primitive(&PrimitiveSpec::default_for(PrimitiveKind::Box)).unwrap();
    let half = (model.aabb.1 - model.aabb.0) / 2.0;
    let spec = random_scene(&model.spec, &SceneGenParams::default(), 11).unwrap();
    let (depth, gts) = render_scene(&spec, std::slice::from_ref(&model));
    let cloud = unproject(&depth, &gts[0].mask, &spec.intrinsics, 12).unwrap();
    let patches = segment_patches(&cloud, &SegmentationParams::default());
    assert_eq!(patches.len(), 3);
    let normals: Vec<Vec3> = patches
        .iter()
        .map(|p| match p {
            Patch::Planar(pp) => pp.normal,
            Patch::Cylindrical(_) => panic!("cylindrical patch on a box"),
        })
        .collect();
    for i in 0..3 {
        for j in i + 1..3 {
            assert!(normals[i].dot(&normals[j]).abs() < 0.02);
        }
    }
    let inv = gts[0].pose.inverse();
    let (mut correct, mut total) = (0usize, 0usize);
    let mut labels = Vec::new();
    for p in &patches {
        let faces: Vec<usize> = p
            .points()
            .points
            .iter()
            .map(|q| box_face(&inv.apply(&q.position), &half))
            .collect();
        let mut counts = [0usize; 6];
        for f in &faces {
            counts[*f] += 1;
        }
        let (label, n) = counts.iter().enumerate().max_by_key(|(_, c)| **c).unwrap();
        labels.push(label);
        correct += n;
        total += faces.len();
    }
    labels.sort_unstable();
    labels.dedup();
    assert_eq!(labels.len(), 3);
    assert!(correct as f64 >= 0.95 * total as f64, "{correct}/{total}");
}

#[test]
fn cylinder_side_view_is_one_cylindrical_patch() {
    let model = make_primitive(&PrimitiveSpec::default_for(PrimitiveKind::Cylinder)).unwrap();
    let params = SceneGenParams::default();
    let spec = SceneSpec {
        templates: vec![model.spec.clone()],
        objects: vec![SceneObject {
            template: 0,
            pose: RigidTransform::new(
                UnitQuaternion::from_euler_angles(0.0, std::f64::consts::FRAC_PI_2, 0.0),
                Vec3::new(0.0, 0.0, 2.5),
            ),
        }],
        intrinsics: params.intrinsics(),
        width: params.width,
        height: params.height,
        camera: RigidTransform::identity(),
        occlusions: vec![],
        noise_sigma: 0.0,
        quantization: params.quantization,
        seed: 0,
    };
    let (depth, gts) = render_scene(&spec, std::slice::from_ref(&model));
    let cloud = unproject(&depth, &gts[0].mask, &spec.intrinsics, 12).unwrap();
    let patches = segment_patches(&cloud, &SegmentationParams::default());
    let cyl: Vec<_> = patches
        .iter()
        .filter_map(|p| match p {
            Patch::Cylindrical(c) => Some(c),
            Patch::Planar(_) => None,
        })
        .collect();
    assert_eq!(patches.len(), 1, "{} patches", patches.len());
    assert_eq!(cyl.len(), 1);
    let r = match &model.spec {
        PrimitiveSpec::Cylinder { radius, .. } => *radius,
        _ => unreachable!(),
    };
    assert!(
        (cyl[0].radius / r - 1.0).abs() < 0.02,
        "radius {} vs {r}",
        cyl[0].radius
    );
}

fn box_setup(seed: u64) -> (TemplateModel, RigidTransform, Vec<Patch>, Vec<StableGroup>) {
    let model = make_primitive(&PrimitiveSpec::default_for(PrimitiveKind::Box)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gt = random_pose(&mut rng);
    let patches: Vec<Patch> = model.canonical_patches.iter().map(|p| p.transformed(&gt)).collect();
    // +x, +y, +z faces
    let ids = [0, 2, 4];
    let mut union = Vec::new();
    for &i in &ids {
        union.extend(patches[i].points().points.iter().copied());
    }
    let report = analyze(&OrientedCloud::new(union.clone(), FrameTag::Camera), true).unwrap();
    let groups = vec![StableGroup {
        patch_ids: ids,
        report,
        union_cloud_size: union.len(),
    }];
    (model, gt, patches, groups)
}

#[test]
fn group_pose_loss_and_benefit_matrix_match_brute_force() {
    let (model, gt, _, _) = box_setup(5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let poses: Vec<RigidTransform> = (0..4).map(|_| random_pose(&mut rng)).collect();
    let oracle = |a: &RigidTransform, b: &RigidTransform| -> f64 {
        model
            .surface_samples
            .points
            .iter()
            .map(|p| (apply_h(a, &p.position) - apply_h(b, &p.position)).norm())
            .sum()
    };
    for p in &poses {
        let got = group_pose_loss(p, &gt, &model);
        assert!((got - oracle(p, &gt)).abs() <= 1e-9 * got.max(1.0));
    }
    let truth: Vec<RigidTransform> = poses.iter().rev().copied().collect();
    let b = benefit_matrix(&poses, &truth, &model).unwrap();
    for m in 0..4 {
        for k in 0..4 {
            assert!((b[(m, k)] - oracle(&poses[m], &truth[k])).abs() <= 1e-9 * b[(m, k)].max(1.0));
        }
    }
}

#[test]
fn cylindrical_patch_loss_matches_axis_distance() {
    let model = make_primitive(&PrimitiveSpec::default_for(PrimitiveKind::Cylinder)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let gt = random_pose(&mut rng);
    let side = model
        .canonical_patches
        .iter()
        .find(|p| matches!(p, Patch::Cylindrical(_)))
        .unwrap()
        .transformed(&gt);
    let Patch::Cylindrical(c) = &side else { unreachable!() };
    // the canonical patch samples a 128-gon, so only the faceting error remains
    let sag = c.radius * (1.0 - (std::f64::consts::PI / 128.0).cos());
    assert!(patch_loss(&gt, &side, &gt) <= 100.0 * sag);
    let t = RigidTransform::from_translation(Vec3::new(0.01, -0.02, 0.005)).compose(&gt);
    // oracle: distance to the true axis in the canonical frame, via the
    // cross-product formula, over the same stride of points
    let n = c.points.len();
    let stride: Vec<usize> = if n <= 100 {
        (0..n).collect()
    } else {
        (0..100).map(|i| i * n / 100).collect()
    };
    let ti = t.inverse();
    let gi = gt.inverse();
    let p0 = gi.apply(&c.axis_point);
    let a = gi.rotate(&c.axis_dir).normalize();
    let oracle: f64 = stride
        .iter()
        .map(|&j| ((ti.apply(&c.points.points[j].position) - p0).cross(&a).norm() - c.radius).abs())
        .sum();
    let got = patch_loss(&t, &side, &gt);
    assert!((got - oracle).abs() <= 1e-9 * oracle.max(1.0), "{got} vs {oracle}");
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn dsym_objective_matches_exhaustive_pairing() {
    let (model, gt, patches, groups) = box_setup(8);
    let t = RigidTransform::from_translation(Vec3::new(0.004, 0.0, -0.003))
        .compose(&gt)
        .compose(&RigidTransform::rot_z_deg(181.5));
    let set = model.symmetry.discrete_set();
    let pred: Vec<RigidTransform> = set.iter().map(|s| t.compose(s)).collect();
    let truth: Vec<RigidTransform> = set.iter().map(|s| gt.compose(s)).collect();
    let benefit = |m: usize, k: usize| group_pose_loss(&pred[m], &truth[k], &model);
    let best = permutations(set.len())
        .into_iter()
        .min_by(|a, b| {
            let ca: f64 = a.iter().enumerate().map(|(m, &k)| benefit(m, k)).sum();
            let cb: f64 = b.iter().enumerate().map(|(m, &k)| benefit(m, k)).sum();
            ca.total_cmp(&cb)
        })
        .unwrap();
    let oracle: f64 = best
        .iter()
        .enumerate()
        .map(|(m, &k)| asym_objective(&pred[m], &groups, &patches, &truth[k], &model))
        .sum();
    let got = dsym_objective(&t, &model.symmetry, &gt, &model, &groups, &patches).unwrap();
    assert!((got - oracle).abs() <= 1e-9 * oracle.max(1.0), "{got} vs {oracle}");
    // relabelling the prediction by a symmetry element changes nothing
    let relabelled = t.compose(&RigidTransform::rot_z_deg(180.0));
    let again = dsym_objective(&relabelled, &model.symmetry, &gt, &model, &groups, &patches).unwrap();
    assert!((again - got).abs() <= 1e-6 * got, "{again} vs {got}");
}

#[test]
fn asym_objective_vanishes_only_at_truth() {
    let (model, gt, patches, groups) = box_setup(9);
    let at_truth = asym_objective(&gt, &groups, &patches, &gt, &model);
    assert!(at_truth < 1e-9, "{at_truth}");
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..20 {
        let d = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ) * 1e-3;
        let t = RigidTransform::from_translation(d).compose(&gt);
        assert!(asym_objective(&t, &groups, &patches, &gt, &model) > 0.0);
    }
}

#[test]
fn adi_and_add_match_quadratic_oracles() {
    let mesh = TriangleMesh::uv_sphere(Vec3::zeros(), 0.4, 16, 32);
    let spec = PrimitiveSpec::Revolution {
        bottom_radius: 0.4,
        top_radius: 0.4,
        height: 0.8,
    };
    let model = TemplateModel::build(spec, mesh, vec![], SymmetrySpec::none(), &|_| false).unwrap();
    let pts: Vec<Vec3> = model.surface_samples.points.iter().map(|p| p.position).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..5 {
        let (t, gt) = (random_pose(&mut rng), random_pose(&mut rng));
        let moved: Vec<Vec3> = pts.iter().map(|p| apply_h(&t, p)).collect();
        let truth: Vec<Vec3> = pts.iter().map(|p| apply_h(&gt, p)).collect();
        let adi_oracle = moved
            .iter()
            .map(|m| truth.iter().map(|g| (m - g).norm()).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / pts.len() as f64;
        let add_oracle = moved.iter().zip(&truth).map(|(m, g)| (m - g).norm()).sum::<f64>() / pts.len() as f64;
        assert!((adi(&t, &gt, &model) - adi_oracle).abs() < 1e-9);
        assert!((add(&t, &gt, &model) - add_oracle).abs() < 1e-9);
    }
    // a pure rotation about the center leaves the sphere in place
    let gt = RigidTransform::from_translation(Vec3::new(0.0, 0.0, 2.0));
    let spun = gt.compose(&RigidTransform::rot_x_deg(37.0));
    assert!(adi(&spun, &gt, &model) < 0.05);
    assert!(add(&spun, &gt, &model) > 0.1);
}

const K: Intrinsics = Intrinsics {
    fx: 180.0,
    fy: 180.0,
    cx: 79.5,
    cy: 59.5,
};

/// Pixel loop with its own visibility test: visible means rendered,
/// observed and not more than `delta` behind the observation.
fn vsd_oracle(est: &DepthImage, truth: &DepthImage, obs: &DepthImage, tau: f64, delta: f64) -> f64 {
    let (mut union, mut bad) = (0.0, 0.0);
    for v in 0..obs.height {
        for u in 0..obs.width {
            let (e, g, o) = (est.get(u, v) as f64, truth.get(u, v) as f64, obs.get(u, v) as f64);
            let ve = e > 0.0 && o > 0.0 && e - o <= delta;
            let vg = g > 0.0 && o > 0.0 && g - o <= delta;
            if ve || vg {
                union += 1.0;
                if ve != vg || (e - g).abs() >= tau {
                    bad += 1.0;
                }
            }
        }
    }
    if union == 0.0 {
        1.0
    } else {
        bad / union
    }
}

#[test]
fn vsd_matches_pixel_loop_for_small_offsets() {
    let model = make_primitive(&PrimitiveSpec::default_for(PrimitiveKind::BoxCluster)).unwrap();
    let gt = RigidTransform::new(
        UnitQuaternion::from_euler_angles(0.6, -0.5, 0.9),
        Vec3::new(0.0, 0.0, 2.5),
    );
    let observed = render_depth(&model.mesh, &gt, K, 160, 120);
    let truth = render_depth(&model.mesh, &gt, K, 160, 120);
    for d in [
        Vec3::new(0.005, 0.0, 0.0),
        Vec3::new(0.0, 0.0, 0.01),
        Vec3::new(0.0, 0.0, 0.03),
        Vec3::new(-0.02, 0.01, 0.0),
    ] {
        let t = RigidTransform::from_translation(d).compose(&gt);
        let est = render_depth(&model.mesh, &t, K, 160, 120);
        let oracle = vsd_oracle(&est, &truth, &observed, 0.02, 0.015);
        let got = vsd(&t, &gt, &model, &observed, 0.02, 0.015);
        assert!((got - oracle).abs() < 1e-12, "{d:?}: {got} vs {oracle}");
        assert!(got > 0.0);
    }
}

#[test]
fn depth_file_matches_fixture_bytes() {
    let fixture = std::fs::read(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/tiny.dpth")).unwrap();
    let mut img = DepthImage::empty(3, 2, K);
    for (i, z) in [0.0f32, 1.5, 2.25, 0.0, 3.0, 0.125].into_iter().enumerate() {
        img.set(i % 3, i / 3, z);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.dpth");
    write_depth(&path, &img).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), fixture);
    let back = read_depth(
        std::path::Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/tiny.dpth")),
        K,
    )
    .unwrap();
    assert_eq!(back, img);
}

#[test]
fn render_unproject_refine_round_trip() {
    for (i, kind) in [PrimitiveKind::Box, PrimitiveKind::BoxCluster, PrimitiveKind::Cylinder]
        .into_iter()
        .enumerate()
    {
        let model = make_primitive(&PrimitiveSpec::default_for(kind)).unwrap();
        let spec = random_scene(&model.spec, &SceneGenParams::default(), 40 + i as u64).unwrap();
        let (depth, gts) = render_scene(&spec, std::slice::from_ref(&model));
        let cloud = unproject(&depth, &gts[0].mask, &spec.intrinsics, 12).unwrap();
        let init = RigidTransform::from_translation(Vec3::new(0.01, -0.01, 0.01))
            .compose(&gts[0].pose)
            .compose(&RigidTransform::rot_y_deg(1.0));
        let r = refine_pose(&init, &cloud, &model, &SolverParams::default()).unwrap();
        assert!(r.rms < 2e-4, "{kind:?}: rms {}", r.rms);
    }
}
