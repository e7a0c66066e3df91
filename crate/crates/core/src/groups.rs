//! Stable patch triplets.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::{OrientedCloud, OrientedPoint};
use crate::patches::Patch;
use crate::stability::{analyze, StabilityReport, STABLE_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupParams {
    pub threshold: f64,
    pub max_groups: usize,
    /// Points per triplet after subsampling.
    pub subsample_cap: usize,
    pub seed: u64,
    pub normalize: bool,
}

impl Default for GroupParams {
    fn default() -> Self {
        Self {
            threshold: STABLE_THRESHOLD,
            max_groups: 32,
            subsample_cap: 600,
            seed: 0,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableGroup {
    /// Sorted, distinct indices into the patch list.
    pub patch_ids: [usize; 3],
    pub report: StabilityReport,
    pub union_cloud_size: usize,
}

/// Weight of a group when fusing poses.
pub fn group_weight(g: &StableGroup) -> f64 {
    g.report.measure
}

fn lexicographic(a: &OrientedPoint, b: &OrientedPoint) -> std::cmp::Ordering {
    a.position
        .iter()
        .chain(a.normal.iter())
        .zip(b.position.iter().chain(b.normal.iter()))
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Union of the three patches' points, subsampled to `cap` points. The
/// union is sorted first so the subsample depends only on the point set.
pub fn triplet_cloud(patches: &[Patch], ids: [usize; 3], cap: usize, seed: u64) -> (OrientedCloud, usize) {
    let mut pts: Vec<OrientedPoint> = ids
        .iter()
        .flat_map(|&i| patches[i].points().points.iter().copied())
        .collect();
    let total = pts.len();
    pts.sort_by(lexicographic);
    if pts.len() > cap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (total as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut keep = sample(&mut rng, pts.len(), cap).into_vec();
        keep.sort_unstable();
        pts = keep.into_iter().map(|i| pts[i]).collect();
    }
    let frame = patches[ids[0]].points().frame;
    (OrientedCloud::new(pts, frame), total)
}

/// All `C(n, 3)` triplets in lexicographic order.
pub fn triplets(n: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            for c in (b + 1)..n {
                out.push([a, b, c]);
            }
        }
    }
    out
}

/// Scores every triplet; no filtering.
pub fn score_triplets(patches: &[Patch], params: &GroupParams) -> Vec<StableGroup> {
    triplets(patches.len())
        .into_par_iter()
        .filter_map(|ids| {
            let (cloud, total) = triplet_cloud(patches, ids, params.subsample_cap, params.seed);
            let report = analyze(&cloud, params.normalize).ok()?;
            Some(StableGroup {
                patch_ids: ids,
                report,
                union_cloud_size: total,
            })
        })
        .collect()
}

/// Triplets whose stability measure exceeds `params.threshold`, most
/// stable first, at most `params.max_groups` of them.
pub fn enumerate_stable_groups(patches: &[Patch], params: &GroupParams) -> Vec<StableGroup> {
    let mut groups: Vec<StableGroup> = score_triplets(patches, params)
        .into_iter()
        .filter(|g| g.report.measure > params.threshold)
        .collect();
    groups.sort_by(|a, b| {
        b.report
            .measure
            .total_cmp(&a.report.measure)
            .then(a.patch_ids.cmp(&b.patch_ids))
    });
    groups.truncate(params.max_groups);
    groups
}
