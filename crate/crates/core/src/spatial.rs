//! Nearest-neighbour index over 3-D positions.

use std::num::NonZero;

use kiddo::immutable::float::kdtree::ImmutableKdTree;
use kiddo::SquaredEuclidean;

use crate::geom::Vec3;

#[derive(Clone)]
pub struct PointIndex {
    tree: ImmutableKdTree<f64, u64, 3, 32>,
    len: usize,
}

impl std::fmt::Debug for PointIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PointIndex").field("len", &self.len).finish()
    }
}

impl PointIndex {
    pub fn new<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let coords: Vec<[f64; 3]> = points.into_iter().map(|p| [p.x, p.y, p.z]).collect();
        let len = coords.len();
        Self {
            tree: ImmutableKdTree::new_from_slice(&coords),
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Index and Euclidean distance of the closest point.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        if self.len == 0 {
            return None;
        }
        let n = self.tree.nearest_one::<SquaredEuclidean>(&[q.x, q.y, q.z]);
        Some((n.item as usize, n.distance.sqrt()))
    }

    /// The `k` closest points (including the query itself when indexed),
    /// ordered by distance, ties by index.
    pub fn knn(&self, q: &Vec3, k: usize) -> Vec<(usize, f64)> {
        let Some(k) = NonZero::new(k.min(self.len)) else {
            return Vec::new();
        };
        let mut out: Vec<(usize, f64)> = self
            .tree
            .nearest_n::<SquaredEuclidean>(&[q.x, q.y, q.z], k)
            .into_iter()
            .map(|n| (n.item as usize, n.distance.sqrt()))
            .collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }
}
