//! Scene-bundle orchestration behind the command-line tool: synthesis,
//! per-stage processing and report writing. Every output is a pure
//! function of the configuration and inputs; rows are ordered by scene id.

use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{OrientedCloud, RigidTransform};
use crate::groups::{enumerate_stable_groups, group_weight, StableGroup};
use crate::metrics::{classify, metrics_csv_row, MetricReport, RecallMetric, METRICS_CSV_HEADER};
use crate::patches::{patch_from_json, patch_to_json, segment_patches, Patch};
use crate::pipeline::{estimate_pose_with_patches, PipelineConfig, PoseEstimate};
use crate::synth::{
    random_scene, read_bundle, render_scene, unproject, write_bundle, write_ply, PrimitiveKind, PrimitiveSpec,
    SceneBundle, SceneGenParams, SPEC_FILE,
};
use crate::template::TemplateModel;

/// Recipe for `synth`: scene `i` uses template `i mod len` and seed
/// `seed + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub templates: Vec<PrimitiveSpec>,
    pub scene: SceneGenParams,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            templates: [PrimitiveKind::Box, PrimitiveKind::BoxCluster, PrimitiveKind::Cylinder]
                .into_iter()
                .map(PrimitiveSpec::default_for)
                .collect(),
            scene: SceneGenParams::default(),
            seed: 0,
        }
    }
}

pub fn scene_dir_name(i: usize) -> String {
    format!("scene_{i:04}")
}

/// Renders `n` scenes into `out/scene_XXXX`.
pub fn synthesize(cfg: &SynthConfig, n: usize, out: &Path) -> Result<Vec<PathBuf>> {
    if n > 0 && cfg.templates.is_empty() {
        return Err(Error::Config("synth needs at least one template".into()));
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let template = &cfg.templates[i % cfg.templates.len()];
            let spec = random_scene(template, &cfg.scene, cfg.seed.wrapping_add(i as u64)).map_err(|e| match e {
                Error::InvalidDimensions(m) => Error::Config(m),
                other => other,
            })?;
            let models = spec.build_templates()?;
            let (depth, ground_truth) = render_scene(&spec, &models);
            let dir = out.join(scene_dir_name(i));
            write_bundle(
                &dir,
                &SceneBundle {
                    spec,
                    depth,
                    ground_truth,
                },
            )?;
            Ok(dir)
        })
        .collect()
}

/// Scene directories under `dir`, sorted by id. `dir` may itself be a
/// scene.
pub fn discover_scenes(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    if dir.join(SPEC_FILE).is_file() {
        let id = dir
            .file_name()
            .map_or("scene".into(), |s| s.to_string_lossy().into_owned());
        return Ok(vec![(id, dir.to_path_buf())]);
    }
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut scenes: Vec<(String, PathBuf)> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join(SPEC_FILE).is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), p))
        .collect();
    if scenes.is_empty() {
        return Err(Error::data(dir, "no scenes found"));
    }
    scenes.sort();
    Ok(scenes)
}

/// A loaded scene with its templates built.
pub struct Scene {
    pub id: String,
    pub bundle: SceneBundle,
    pub models: Vec<TemplateModel>,
}

pub fn load_scene(id: &str, dir: &Path) -> Result<Scene> {
    let bundle = read_bundle(dir)?;
    let models = bundle
        .spec
        .build_templates()
        .map_err(|e| Error::data(dir.join(SPEC_FILE), e))?;
    if bundle.spec.objects.iter().any(|o| o.template >= models.len()) {
        return Err(Error::data(dir.join(SPEC_FILE), "object refers to a missing template"));
    }
    Ok(Scene {
        id: id.to_string(),
        bundle,
        models,
    })
}

impl Scene {
    pub fn object_count(&self) -> usize {
        self.bundle.spec.objects.len()
    }

    pub fn model(&self, k: usize) -> &TemplateModel {
        &self.models[self.bundle.spec.objects[k].template]
    }

    pub fn object_id(&self, k: usize) -> String {
        format!("{}/{}", self.id, k)
    }

    /// Camera-frame cloud of object `k` from its mask.
    pub fn observe(&self, k: usize, cfg: &PipelineConfig) -> Result<OrientedCloud> {
        let b = &self.bundle;
        unproject(&b.depth, &b.ground_truth[k].mask, &b.spec.intrinsics, cfg.normal_k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub patch_ids: [usize; 3],
    pub weight: f64,
    pub measure: f64,
    pub eigenvalues: [f64; 6],
}

impl From<&StableGroup> for GroupRecord {
    fn from(g: &StableGroup) -> Self {
        GroupRecord {
            patch_ids: g.patch_ids,
            weight: group_weight(g),
            measure: g.report.measure,
            eigenvalues: g.report.eigenvalues,
        }
    }
}

/// Everything the pipeline produced for one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectResult {
    pub object_id: String,
    pub template: PrimitiveSpec,
    pub points: usize,
    pub estimate: Option<PoseEstimate>,
    pub ground_truth: RigidTransform,
    pub visibility: f64,
    pub metrics: Option<MetricReport>,
    pub error: Option<String>,
}

fn object_dir(out: &Path, scene: &Scene) -> Result<PathBuf> {
    let dir = out.join(&scene.id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(path, e))
}

/// Segments object `k`; writes its cloud as PLY and its patches as JSON
/// when `out` is given.
pub fn stage_segment(
    scene: &Scene,
    k: usize,
    cfg: &PipelineConfig,
    out: Option<&Path>,
) -> Result<(OrientedCloud, Vec<Patch>)> {
    let cloud = scene.observe(k, cfg)?;
    let patches = segment_patches(&cloud, &cfg.segmentation);
    if let Some(out) = out {
        let dir = object_dir(out, scene)?;
        write_ply(&dir.join(format!("object_{k}_cloud.ply")), &cloud)?;
        let json: Vec<serde_json::Value> = patches.iter().map(patch_to_json).collect();
        write_json(&dir.join(format!("object_{k}_patches.json")), &json)?;
    }
    Ok((cloud, patches))
}

/// Reads the patches written by [`stage_segment`].
pub fn load_patches(out: &Path, scene: &Scene, k: usize, cloud: &OrientedCloud) -> Result<Vec<Patch>> {
    let path = out.join(&scene.id).join(format!("object_{k}_patches.json"));
    let json: Vec<serde_json::Value> = read_json(&path)?;
    json.iter()
        .map(|v| patch_from_json(v, cloud).map_err(|e| Error::data(&path, e)))
        .collect()
}

pub fn stage_analyze(
    scene: &Scene,
    k: usize,
    patches: &[Patch],
    cfg: &PipelineConfig,
    out: Option<&Path>,
) -> Result<Vec<GroupRecord>> {
    let groups = enumerate_stable_groups(patches, &cfg.group_params());
    let records: Vec<GroupRecord> = groups.iter().map(GroupRecord::from).collect();
    if let Some(out) = out {
        write_json(
            &object_dir(out, scene)?.join(format!("object_{k}_groups.json")),
            &records,
        )?;
    }
    Ok(records)
}

pub fn stage_estimate(
    scene: &Scene,
    k: usize,
    cloud: &OrientedCloud,
    patches: &[Patch],
    cfg: &PipelineConfig,
    out: Option<&Path>,
) -> Result<PoseEstimate> {
    let est = estimate_pose_with_patches(cloud, patches, scene.model(k), cfg)?;
    if est.fallback() {
        warn!(
            "{}: no stable-group hypothesis verified; used the fallback search",
            scene.object_id(k)
        );
    }
    if let Some(out) = out {
        write_json(&object_dir(out, scene)?.join(format!("object_{k}_pose.json")), &est)?;
    }
    Ok(est)
}

pub fn load_estimate(out: &Path, scene: &Scene, k: usize) -> Result<PoseEstimate> {
    read_json(&out.join(&scene.id).join(format!("object_{k}_pose.json")))
}

pub fn stage_evaluate(scene: &Scene, k: usize, pose: &RigidTransform, cfg: &PipelineConfig) -> MetricReport {
    let gt = &scene.bundle.ground_truth[k].pose;
    classify(pose, gt, scene.model(k), Some(&scene.bundle.depth), &cfg.metrics)
}

fn result_for(
    scene: &Scene,
    k: usize,
    points: usize,
    estimate: Result<PoseEstimate>,
    cfg: &PipelineConfig,
) -> ObjectResult {
    let (estimate, error) = match estimate {
        Ok(e) => (Some(e), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let metrics = estimate.as_ref().map(|e| stage_evaluate(scene, k, &e.pose, cfg));
    ObjectResult {
        object_id: scene.object_id(k),
        template: scene.bundle.spec.templates[scene.bundle.spec.objects[k].template].clone(),
        points,
        estimate,
        ground_truth: scene.bundle.ground_truth[k].pose,
        visibility: scene.bundle.ground_truth[k].visibility,
        metrics,
        error,
    }
}

/// Segment, analyze, estimate and evaluate every object of a scene,
/// writing each stage's artifacts under `out/<scene id>` when given.
pub fn process_scene(scene: &Scene, cfg: &PipelineConfig, out: Option<&Path>) -> Result<Vec<ObjectResult>> {
    let mut results = Vec::with_capacity(scene.object_count());
    for k in 0..scene.object_count() {
        let staged = stage_segment(scene, k, cfg, out);
        let r = match staged {
            Err(Error::Io { path, message }) => return Err(Error::Io { path, message }),
            Err(e) => result_for(scene, k, 0, Err(e), cfg),
            Ok((cloud, patches)) => {
                stage_analyze(scene, k, &patches, cfg, out)?;
                let est = stage_estimate(scene, k, &cloud, &patches, cfg, out);
                if let Err(Error::Io { path, message }) = est {
                    return Err(Error::Io { path, message });
                }
                result_for(scene, k, cloud.len(), est, cfg)
            }
        };
        if let Some(out) = out {
            write_json(&object_dir(out, scene)?.join(format!("object_{k}_result.json")), &r)?;
        }
        results.push(r);
    }
    Ok(results)
}

/// Evaluates previously estimated poses found under `poses`.
pub fn evaluate_scene(scene: &Scene, cfg: &PipelineConfig, poses: &Path) -> Result<Vec<ObjectResult>> {
    (0..scene.object_count())
        .map(|k| {
            let est = load_estimate(poses, scene, k)?;
            Ok(result_for(scene, k, 0, Ok(est), cfg))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recalls {
    pub adi: f64,
    pub vsd: f64,
    pub deg10cm10: f64,
    pub iou25: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenes: usize,
    pub objects: usize,
    pub failures: usize,
    pub fallbacks: usize,
    /// Objects without an estimate count as misses.
    pub recall: Recalls,
    pub median_r_err_deg: Option<f64>,
    pub median_t_err: Option<f64>,
    pub config: PipelineConfig,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

pub fn summarize(scenes: usize, results: &[ObjectResult], cfg: &PipelineConfig) -> Result<Summary> {
    if results.is_empty() {
        return Err(Error::EmptySet);
    }
    let rate = |m: RecallMetric| {
        results
            .iter()
            .filter(|r| r.metrics.as_ref().is_some_and(|x| m.passes(x)))
            .count() as f64
            / results.len() as f64
    };
    let reports: Vec<&MetricReport> = results.iter().filter_map(|r| r.metrics.as_ref()).collect();
    Ok(Summary {
        scenes,
        objects: results.len(),
        failures: results.iter().filter(|r| r.estimate.is_none()).count(),
        fallbacks: results
            .iter()
            .filter(|r| r.estimate.as_ref().is_some_and(|e| e.fallback()))
            .count(),
        recall: Recalls {
            adi: rate(RecallMetric::Adi),
            vsd: rate(RecallMetric::Vsd),
            deg10cm10: rate(RecallMetric::Deg10Cm10),
            iou25: rate(RecallMetric::Iou25),
        },
        median_r_err_deg: median(reports.iter().map(|m| m.r_err_deg).collect()),
        median_t_err: median(reports.iter().map(|m| m.t_err).collect()),
        config: cfg.clone(),
    })
}

/// Metric CSV; objects without an estimate get empty metric fields.
pub fn metrics_csv(results: &[ObjectResult]) -> String {
    let mut s = String::from(METRICS_CSV_HEADER);
    s.push('\n');
    for r in results {
        match &r.metrics {
            Some(m) => s.push_str(&metrics_csv_row(&r.object_id, m)),
            None => s.push_str(&format!("{},,,,,,0,0,0,0", r.object_id)),
        }
        s.push('\n');
    }
    s
}

/// Writes `metrics.csv` and `summary.json` into `out`.
pub fn write_reports(out: &Path, scenes: usize, results: &[ObjectResult], cfg: &PipelineConfig) -> Result<Summary> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("metrics.csv");
    std::fs::write(&path, metrics_csv(results)).map_err(|e| Error::io(&path, e))?;
    let summary = summarize(scenes, results, cfg)?;
    write_json(&out.join("summary.json"), &summary)?;
    info!(
        "{} objects: ADI recall {:.3}, VSD recall {:.3}",
        summary.objects, summary.recall.adi, summary.recall.vsd
    );
    Ok(summary)
}

/// Loads and processes every scene under `bundle`, in parallel across
/// scenes, results ordered by scene id.
pub fn run_bundle(bundle: &Path, cfg: &PipelineConfig, out: Option<&Path>) -> Result<(usize, Vec<ObjectResult>)> {
    let scenes = discover_scenes(bundle)?;
    let per_scene: Vec<Vec<ObjectResult>> = scenes
        .par_iter()
        .map(|(id, dir)| {
            let scene = load_scene(id, dir)?;
            process_scene(&scene, cfg, out)
        })
        .collect::<Result<_>>()?;
    Ok((scenes.len(), per_scene.into_iter().flatten().collect()))
}
