//! Exact nearest-neighbor search over a fixed 3D point set.
//!
//! Queries return the same index as a brute-force scan: the smallest squared
//! distance wins and exact ties go to the lowest point index.

use crate::se3::Vec3;

const LEAF_SIZE: usize = 8;

#[inline]
pub(crate) fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    /// Point indices arranged so that every subrange `[lo, hi)` with more than
    /// `LEAF_SIZE` entries is split at `mid = (lo + hi) / 2`.
    order: Vec<usize>,
    /// Split axis for the node whose pivot sits at `order[mid]`.
    axis: Vec<u8>,
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            axis: vec![0; points.len()],
        };
        let n = tree.order.len();
        tree.build(0, n);
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    fn build(&mut self, lo: usize, hi: usize) {
        if hi - lo <= LEAF_SIZE {
            return;
        }
        let mut min = Vec3::repeat(f64::INFINITY);
        let mut max = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[lo..hi] {
            min = min.inf(&self.points[i]);
            max = max.sup(&self.points[i]);
        }
        let axis = (max - min).imax();
        let mid = (lo + hi) / 2;
        let pts = &self.points;
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
            pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b))
        });
        self.axis[mid] = axis as u8;
        self.build(lo, mid);
        self.build(mid + 1, hi);
    }

    /// Index and squared distance of the nearest point, or `None` if empty.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(q, 0, self.order.len(), &mut best);
        Some(best)
    }

    fn consider(&self, q: &Vec3, i: usize, best: &mut (usize, f64)) {
        let d = dist2(q, &self.points[i]);
        if d < best.1 || (d == best.1 && i < best.0) {
            *best = (i, d);
        }
    }

    fn search(&self, q: &Vec3, lo: usize, hi: usize, best: &mut (usize, f64)) {
        if hi - lo <= LEAF_SIZE {
            for &i in &self.order[lo..hi] {
                self.consider(q, i, best);
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let pivot = self.order[mid];
        let axis = self.axis[mid] as usize;
        let diff = q[axis] - self.points[pivot][axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, best);
        self.consider(q, pivot, best);
        // `<=` keeps equal-distance candidates reachable for tie-breaking
        if diff * diff <= best.1 {
            self.search(q, far.0, far.1, best);
        }
    }
}

/// Brute-force nearest neighbor with the same tie rule as [`KdTree`].
pub fn nearest_brute(points: &[Vec3], q: &Vec3) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d = dist2(q, p);
        match best {
            Some((_, bd)) if d >= bd => {}
            _ => best = Some((i, d)),
        }
    }
    best
}

/// Point count above which nearest-neighbor queries go through a kd-tree.
pub const KDTREE_THRESHOLD: usize = 256;

/// For every query point, the index of its nearest target point.
pub fn nearest_indices(queries: &[Vec3], targets: &[Vec3]) -> Vec<usize> {
    if targets.len() > KDTREE_THRESHOLD {
        let tree = KdTree::new(targets);
        queries.iter().map(|q| tree.nearest(q).unwrap().0).collect()
    } else {
        queries
            .iter()
            .map(|q| nearest_brute(targets, q).unwrap().0)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_brute_force_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec3> = (0..1000)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let tree = KdTree::new(&pts);
        for _ in 0..500 {
            let q = Vec3::new(rng.random(), rng.random(), rng.random()) * 1.2;
            assert_eq!(tree.nearest(&q), nearest_brute(&pts, &q));
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        // integer grid with duplicates: many exact ties
        let mut pts = Vec::new();
        for _ in 0..3 {
            for x in 0..5 {
                for y in 0..5 {
                    pts.push(Vec3::new(x as f64, y as f64, 0.0));
                }
            }
        }
        let tree = KdTree::new(&pts);
        for x in 0..9 {
            for y in 0..9 {
                let q = Vec3::new(x as f64 * 0.5, y as f64 * 0.5, 0.5);
                assert_eq!(tree.nearest(&q), nearest_brute(&pts, &q), "{q:?}");
            }
        }
    }

    #[test]
    fn empty_tree() {
        assert!(KdTree::new(&[]).nearest(&Vec3::zeros()).is_none());
    }

    proptest! {
        #[test]
        fn kdtree_equals_brute(seed in 0u64..10_000, n in 1usize..400) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // coarse coordinates make ties common
            let pts: Vec<Vec3> = (0..n)
                .map(|_| Vec3::new(rng.random_range(0..6) as f64,
                                   rng.random_range(0..6) as f64,
                                   rng.random_range(0..3) as f64))
                .collect();
            let tree = KdTree::new(&pts);
            for _ in 0..20 {
                let q = Vec3::new(rng.random_range(-1.0..7.0), rng.random_range(-1.0..7.0),
                                  rng.random_range(-1.0..4.0));
                prop_assert_eq!(tree.nearest(&q), nearest_brute(&pts, &q));
            }
        }
    }
}
