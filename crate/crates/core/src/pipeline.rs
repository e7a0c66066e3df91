//! End-to-end pose estimation from one observed cloud: segmentation,
//! stable groups, per-group hypotheses, symmetry-aware fusion and
//! refinement. Objects with a continuous symmetry go through the axis
//! estimator instead of the group search.

use log::debug;
use nalgebra::UnitQuaternion;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{rotation_geodesic_deg, OrientedCloud, RigidTransform, Vec3};
use crate::groups::{enumerate_stable_groups, GroupParams};
use crate::metrics::MetricThresholds;
use crate::patches::{fit_plane, segment_patches, Patch, SegmentationParams};
use crate::posesolve::{
    fuse_group_poses, hypothesize_and_verify, refine_pose, verification_residual, PoseHypothesis, SolverParams,
};
use crate::stability::STABLE_THRESHOLD;
use crate::symmetry::{closest_symmetric_pose, estimate_rotation_axis, rotation_between, SymmetryKind};
use crate::template::TemplateModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub stability_threshold: f64,
    pub normalize: bool,
    pub max_groups: usize,
    /// Points per triplet used for the stability test.
    pub group_subsample: usize,
    /// Neighbours for normal estimation when unprojecting depth.
    pub normal_k: usize,
    pub segmentation: SegmentationParams,
    pub solver: SolverParams,
    /// Hypotheses farther than this from the best one (after symmetry
    /// alignment) are left out of the fusion.
    pub consensus_deg: f64,
    /// Translation counterpart of `consensus_deg`, relative to diameter.
    pub consensus_trans: f64,
    pub metrics: MetricThresholds,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stability_threshold: STABLE_THRESHOLD,
            normalize: true,
            max_groups: 32,
            group_subsample: 600,
            normal_k: 12,
            segmentation: SegmentationParams::default(),
            solver: SolverParams::default(),
            consensus_deg: 5.0,
            consensus_trans: 0.05,
            metrics: MetricThresholds::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn group_params(&self) -> GroupParams {
        GroupParams {
            threshold: self.stability_threshold,
            max_groups: self.max_groups,
            subsample_cap: self.group_subsample,
            seed: self.seed,
            normalize: self.normalize,
        }
    }

    /// Parses and validates a JSON configuration; omitted fields default.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.stability_threshold > 0.0 && self.stability_threshold < 1.0) {
            return bad("stability_threshold must lie in (0, 1)");
        }
        if self.max_groups == 0 || self.group_subsample < 6 {
            return bad("max_groups must be positive and group_subsample at least 6");
        }
        if self.normal_k < 3 || self.segmentation.k < 3 {
            return bad("neighbourhood sizes must be at least 3");
        }
        let s = &self.segmentation;
        if !(s.dist_tol > 0.0 && s.cyl_dist_tol > 0.0 && s.max_edge > 0.0 && s.normal_angle_tol_deg > 0.0) {
            return bad("segmentation tolerances must be positive");
        }
        let v = &self.solver;
        if !(v.accept_rms > 0.0 && v.verify_cap > 0.0 && v.refine_cutoff > 0.0 && v.angle_tol_deg > 0.0) {
            return bad("solver tolerances must be positive");
        }
        let m = &self.metrics;
        if !(m.adi_frac > 0.0 && m.vsd_tau > 0.0 && m.vsd_delta > 0.0 && m.rot_deg > 0.0 && m.trans > 0.0) {
            return bad("metric thresholds must be positive");
        }
        if !(m.vsd_max > 0.0 && m.vsd_max <= 1.0 && m.iou > 0.0 && m.iou < 1.0) {
            return bad("vsd_max must lie in (0, 1] and iou in (0, 1)");
        }
        if !(self.consensus_deg > 0.0 && self.consensus_trans > 0.0) {
            return bad("consensus tolerances must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Fused stable-group hypotheses.
    Groups,
    /// Rotation axis plus cap plane.
    Axis,
    /// No hypothesis verified; coarse rotation search from the centroid.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub pose: RigidTransform,
    pub route: Route,
    /// Verification rms of the final pose.
    pub residual: f64,
    pub patches: usize,
    pub groups: usize,
    pub hypotheses: usize,
}

impl PoseEstimate {
    pub fn fallback(&self) -> bool {
        self.route == Route::Fallback
    }
}

/// Estimates the pose (canonical to camera) of `model` in `cloud`.
pub fn estimate_pose(cloud: &OrientedCloud, model: &TemplateModel, cfg: &PipelineConfig) -> Result<PoseEstimate> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let patches = segment_patches(cloud, &cfg.segmentation);
    estimate_pose_with_patches(cloud, &patches, model, cfg)
}

/// [`estimate_pose`] with a precomputed segmentation.
pub fn estimate_pose_with_patches(
    cloud: &OrientedCloud,
    patches: &[Patch],
    model: &TemplateModel,
    cfg: &PipelineConfig,
) -> Result<PoseEstimate> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut est = if model.symmetry.kind == SymmetryKind::Continuous {
        axis_route(cloud, patches, model, cfg)
    } else {
        group_route(cloud, patches, model, cfg)
    };
    if est.is_none() {
        debug!("no verified hypothesis; falling back to rotation search");
    }
    let mut est = match est.take() {
        Some(e) => e,
        None => fallback(cloud, model, cfg)?,
    };
    est.patches = patches.len();
    Ok(est)
}

fn finish(
    init: &RigidTransform,
    cloud: &OrientedCloud,
    model: &TemplateModel,
    cfg: &PipelineConfig,
) -> (RigidTransform, f64) {
    let pose = refine_pose(init, cloud, model, &cfg.solver)
        .map(|r| r.pose)
        .unwrap_or(*init);
    (pose, verification_residual(&pose, cloud, model, &cfg.solver))
}

fn group_route(
    cloud: &OrientedCloud,
    patches: &[Patch],
    model: &TemplateModel,
    cfg: &PipelineConfig,
) -> Option<PoseEstimate> {
    let groups = enumerate_stable_groups(patches, &cfg.group_params());
    let hyps: Vec<PoseHypothesis> = groups
        .par_iter()
        .filter_map(|g| hypothesize_and_verify(g, patches, cloud, model, &cfg.solver))
        .collect();
    debug!(
        "{} patches, {} stable groups, {} verified hypotheses",
        patches.len(),
        groups.len(),
        hyps.len()
    );
    let best = hyps.iter().min_by(|a, b| a.residual.total_cmp(&b.residual))?;
    // bring every hypothesis to the symmetric variant nearest the best one
    let tol_t = cfg.consensus_trans * model.diameter;
    let agreeing: Vec<PoseHypothesis> = hyps
        .iter()
        .map(|h| PoseHypothesis {
            pose: closest_symmetric_pose(&h.pose, &best.pose, &model.symmetry),
            ..h.clone()
        })
        .filter(|h| {
            rotation_geodesic_deg(&h.pose, &best.pose) <= cfg.consensus_deg
                && (h.pose.translation() - best.pose.translation()).norm() <= tol_t
        })
        .collect();
    let fused = fuse_group_poses(&agreeing).unwrap_or(best.pose);
    let (a, ra) = finish(&fused, cloud, model, cfg);
    let (pose, residual) = if fused == best.pose {
        (a, ra)
    } else {
        let (b, rb) = finish(&best.pose, cloud, model, cfg);
        if rb < ra {
            (b, rb)
        } else {
            (a, ra)
        }
    };
    Some(PoseEstimate {
        pose,
        route: Route::Groups,
        residual,
        patches: patches.len(),
        groups: groups.len(),
        hypotheses: hyps.len(),
    })
}

/// Canonical cap patches: planar patches whose normal is the symmetry axis.
fn canonical_caps(model: &TemplateModel) -> Vec<&crate::patches::PlanarPatch> {
    let axis = model.symmetry.axis.expect("continuous symmetry has an axis");
    model
        .canonical_patches
        .iter()
        .filter_map(|p| match p {
            Patch::Planar(pl) if pl.normal.dot(&axis.a).abs() > 0.99 => Some(pl),
            _ => None,
        })
        .collect()
}

fn axis_route(
    cloud: &OrientedCloud,
    patches: &[Patch],
    model: &TemplateModel,
    cfg: &PipelineConfig,
) -> Option<PoseEstimate> {
    let axis = match estimate_rotation_axis(cloud, model) {
        Ok(a) => a,
        Err(e) => {
            debug!("axis estimation failed: {e}");
            return None;
        }
    };
    let can_axis = model.symmetry.axis?;
    // observed cap: a segmented plane along the axis, else the points whose
    // normals run along it
    let cap = patches
        .iter()
        .filter_map(|p| match p {
            Patch::Planar(pl) if pl.normal.dot(&axis.a).abs() > 0.95 => Some((pl.normal, pl.center, pl.points.len())),
            _ => None,
        })
        .max_by_key(|c| c.2)
        .map(|(n, c, _)| (n, c))
        .or_else(|| {
            let pts: Vec<Vec3> = cloud
                .points
                .iter()
                .filter(|p| p.normal.dot(&axis.a).abs() > 0.95)
                .map(|p| p.position)
                .collect();
            if pts.len() < 10 {
                return None;
            }
            let fit = fit_plane(&pts).ok()?;
            let center = pts.iter().fold(Vec3::zeros(), |a, p| a + p) / pts.len() as f64;
            let n = if fit.normal.dot(&center) > 0.0 {
                -fit.normal
            } else {
                fit.normal
            };
            Some((n, center))
        });

    let mut candidates = Vec::new();
    match cap {
        Some((n_obs, c_obs)) => {
            // outward cap normal, snapped to the estimated axis
            let a = if axis.a.dot(&n_obs) > 0.0 { axis.a } else { -axis.a };
            // where the axis pierces the cap plane
            let s = (c_obs - axis.c).dot(&n_obs) / a.dot(&n_obs);
            let pierce = axis.c + a * s;
            for can in canonical_caps(model) {
                let r = rotation_between(&can.normal, &a);
                let can_pierce = can_axis.c + can_axis.a * (can.center - can_axis.c).dot(&can_axis.a);
                candidates.push(RigidTransform::new(r, pierce - r * can_pierce));
            }
        }
        None => {
            // no cap in view: centre the object on the axis at the cloud's
            // depth along it, trying both directions
            let centroid = cloud.centroid()?;
            let on_axis = axis.c + axis.a * (centroid - axis.c).dot(&axis.a);
            for a in [axis.a, -axis.a] {
                let r = rotation_between(&can_axis.a, &a);
                candidates.push(RigidTransform::new(r, on_axis - r * model.centroid()));
            }
        }
    }
    let (pose, residual) = candidates
        .iter()
        .map(|c| finish(c, cloud, model, cfg))
        .min_by(|a, b| a.1.total_cmp(&b.1))?;
    if residual > cfg.solver.accept_rms * model.diameter {
        debug!("axis route residual {residual} above acceptance");
        return None;
    }
    Some(PoseEstimate {
        pose,
        route: Route::Axis,
        residual,
        patches: patches.len(),
        groups: 0,
        hypotheses: candidates.len(),
    })
}

/// The 24 rotations mapping coordinate axes onto coordinate axes.
fn axis_permutations() -> Vec<UnitQuaternion<f64>> {
    let mut out = Vec::with_capacity(24);
    let axes = [Vec3::x(), Vec3::y(), Vec3::z(), -Vec3::x(), -Vec3::y(), -Vec3::z()];
    for &z in &axes {
        for &x in &axes {
            if x.dot(&z).abs() > 0.5 {
                continue;
            }
            let y = z.cross(&x);
            let m = nalgebra::Matrix3::from_columns(&[x, y, z]);
            out.push(UnitQuaternion::from_rotation_matrix(
                &nalgebra::Rotation3::from_matrix_unchecked(m),
            ));
        }
    }
    out
}

/// Coarse search: axis-aligned rotations about the observed centroid,
/// pushed back along the view ray, each refined; best verification wins.
fn fallback(cloud: &OrientedCloud, model: &TemplateModel, cfg: &PipelineConfig) -> Result<PoseEstimate> {
    let centroid = cloud.centroid().ok_or(Error::EmptyCloud)?;
    let behind = centroid + centroid.normalize() * (0.25 * model.diameter);
    let mut solver = cfg.solver;
    solver.refine_cutoff *= 3.0;
    solver.normal_agreement = 0.0;
    let coarse = PipelineConfig { solver, ..cfg.clone() };
    let (pose, _) = axis_permutations()
        .into_iter()
        .map(|r| {
            let init = RigidTransform::new(r, behind - r * model.centroid());
            finish(&init, cloud, model, &coarse)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("24 candidates");
    let (pose, residual) = finish(&pose, cloud, model, cfg);
    Ok(PoseEstimate {
        pose,
        route: Route::Fallback,
        residual,
        patches: 0,
        groups: 0,
        hypotheses: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = PipelineConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
        cfg.validate().unwrap();
        let bad = PipelineConfig {
            stability_threshold: 1.5,
            ..cfg.clone()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"bogus": 1}"#).is_err());
        let partial: PipelineConfig = serde_json::from_str(r#"{"stability_threshold": 0.6}"#).unwrap();
        assert_eq!(partial.max_groups, cfg.max_groups);
    }

    #[test]
    fn axis_permutations_are_distinct_proper_rotations() {
        let r = axis_permutations();
        assert_eq!(r.len(), 24);
        for i in 0..24 {
            for j in 0..i {
                assert!(r[i].angle_to(&r[j]) > 0.1);
            }
        }
    }
}
