//! Point-set and transform losses: Chamfer distance, Earth Mover's Distance,
//! and the Frobenius transform loss.
//!
//! The plain functions here evaluate a loss on concrete data. The
//! differentiable versions live on [`Tape`](crate::autodiff::Tape) and share
//! the correspondence kernels below, so both paths agree exactly.

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::kdtree::{dist2, nearest_indices};
use crate::se3::{frobenius_deviation, Transform, Vec3};

/// Largest cloud accepted by [`emd`] unless a different cap is requested.
pub const DEFAULT_EMD_CAP: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Chamfer,
    Emd,
    Frobenius,
}

impl LossKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "chamfer" | "cd" => Some(LossKind::Chamfer),
            "emd" => Some(LossKind::Emd),
            "frobenius" => Some(LossKind::Frobenius),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Chamfer => "chamfer",
            LossKind::Emd => "emd",
            LossKind::Frobenius => "frobenius",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub kind: LossKind,
}

/// Nearest-neighbor correspondences in both directions plus the Chamfer value.
pub(crate) struct ChamferMatch {
    pub value: f64,
    pub x_to_y: Vec<usize>,
    pub y_to_x: Vec<usize>,
}

pub(crate) fn chamfer_match(x: &[Vec3], y: &[Vec3]) -> ChamferMatch {
    let x_to_y = nearest_indices(x, y);
    let y_to_x = nearest_indices(y, x);
    let fwd: f64 = x.iter().zip(&x_to_y).map(|(p, &j)| dist2(p, &y[j])).sum::<f64>();
    let bwd: f64 = y.iter().zip(&y_to_x).map(|(p, &i)| dist2(p, &x[i])).sum::<f64>();
    ChamferMatch {
        value: fwd / x.len() as f64 + bwd / y.len() as f64,
        x_to_y,
        y_to_x,
    }
}

/// Mean squared nearest-neighbor distance from `x` to `y` plus from `y` to `x`.
pub fn chamfer(x: &PointCloud, y: &PointCloud) -> Result<LossValue> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(LossValue {
        value: chamfer_match(x.points(), y.points()).value,
        kind: LossKind::Chamfer,
    })
}

/// Minimum-cost assignment for a square cost matrix (row-major, `n x n`).
/// Returns `assignment[row] = column`. Runs in `O(n^3)`.
pub fn min_cost_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    // Shortest augmenting path with row/column potentials; 1-based with a
    // virtual column 0.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Optimal matching `x[i] -> y[matching[i]]` and its mean squared cost.
pub(crate) fn emd_match(x: &[Vec3], y: &[Vec3]) -> (f64, Vec<usize>) {
    let n = x.len();
    let cost: Vec<f64> = x
        .iter()
        .flat_map(|p| y.iter().map(move |q| dist2(p, q)))
        .collect();
    let matching = min_cost_assignment(&cost, n);
    let total: f64 = matching
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    (total / n as f64, matching)
}

pub(crate) fn check_emd_sizes(nx: usize, ny: usize, cap: usize) -> Result<()> {
    if nx == 0 || ny == 0 {
        return Err(Error::EmptyCloud);
    }
    if nx != ny {
        return Err(Error::invalid(format!(
            "EMD needs equal point counts, got {nx} and {ny}"
        )));
    }
    if nx > cap {
        return Err(Error::invalid(format!(
            "EMD point count {nx} exceeds the cap of {cap}"
        )));
    }
    Ok(())
}

/// Minimum-cost perfect matching under squared distance, divided by `N`.
pub fn emd(x: &PointCloud, y: &PointCloud) -> Result<LossValue> {
    emd_with_cap(x, y, DEFAULT_EMD_CAP)
}

pub fn emd_with_cap(x: &PointCloud, y: &PointCloud, cap: usize) -> Result<LossValue> {
    check_emd_sizes(x.len(), y.len(), cap)?;
    Ok(LossValue {
        value: emd_match(x.points(), y.points()).0,
        kind: LossKind::Emd,
    })
}

/// `|| M(pred) M(gt)^-1 - I ||_F^2`.
pub fn frobenius_loss(pred: &Transform, gt: &Transform) -> LossValue {
    LossValue {
        value: frobenius_deviation(pred, gt).powi(2),
        kind: LossKind::Frobenius,
    }
}

/// The four points `gt^-1 (0), gt^-1 (e_x), gt^-1 (e_y), gt^-1 (e_z)`.
///
/// Mapping these through a predicted transform `T` gives points `P0..P3` with
/// `||M(T) M(gt)^-1 - I||_F^2 = ||P0||^2 + sum_j ||P_j - P0 - e_j||^2`, which
/// lets the differentiable pipeline evaluate the Frobenius loss through
/// ordinary point transforms.
pub fn frobenius_probe(gt: &Transform) -> PointCloud {
    let inv = gt.inverse();
    PointCloud::new(
        [Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()]
            .iter()
            .map(|p| inv.apply_point(p))
            .collect(),
    )
    .expect("finite transform")
}

pub(crate) fn frobenius_from_probe(p: &[Vec3]) -> f64 {
    let axes = [Vec3::x(), Vec3::y(), Vec3::z()];
    let mut total = p[0].norm_squared();
    for j in 0..3 {
        total += (p[j + 1] - p[0] - axes[j]).norm_squared();
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::{euler_to_transform, Rotation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut impl Rng, n: usize) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
                .collect(),
        )
        .unwrap()
    }

    fn brute_chamfer(x: &PointCloud, y: &PointCloud) -> f64 {
        let mut a = 0.0;
        for p in x.points() {
            let mut best = f64::INFINITY;
            for q in y.points() {
                best = best.min((p - q).norm_squared());
            }
            a += best;
        }
        let mut b = 0.0;
        for q in y.points() {
            let mut best = f64::INFINITY;
            for p in x.points() {
                best = best.min((p - q).norm_squared());
            }
            b += best;
        }
        a / x.len() as f64 + b / y.len() as f64
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        // Heap's algorithm
        let mut a: Vec<usize> = (0..n).collect();
        let mut c = vec![0; n];
        let mut out = vec![a.clone()];
        let mut i = 0;
        while i < n {
            if c[i] < i {
                if i % 2 == 0 {
                    a.swap(0, i);
                } else {
                    a.swap(c[i], i);
                }
                out.push(a.clone());
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
        out
    }

    fn brute_emd(x: &PointCloud, y: &PointCloud) -> f64 {
        let n = x.len();
        permutations(n)
            .iter()
            .map(|perm| {
                (0..n)
                    .map(|i| (x.points()[i] - y.points()[perm[i]]).norm_squared())
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
            / n as f64
    }

    #[test]
    fn chamfer_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_cloud(&mut rng, 40);
        assert_eq!(chamfer(&x, &x).unwrap().value, 0.0);

        let a = PointCloud::new(vec![Vec3::zeros()]).unwrap();
        let b = PointCloud::new(vec![Vec3::x()]).unwrap();
        assert_eq!(chamfer(&a, &b).unwrap().value, 2.0);

        for _ in 0..20 {
            let x = random_cloud(&mut rng, 32);
            let y = random_cloud(&mut rng, 32);
            let got = chamfer(&x, &y).unwrap().value;
            assert!((got - brute_chamfer(&x, &y)).abs() <= 1e-15 * got.max(1.0));
        }
        assert!(chamfer(&PointCloud::empty(), &x).is_err());
    }

    #[test]
    fn chamfer_kdtree_path_matches_brute() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_cloud(&mut rng, 600);
        let y = random_cloud(&mut rng, 700);
        let got = chamfer(&x, &y).unwrap().value;
        assert!((got - brute_chamfer(&x, &y)).abs() < 1e-14);
    }

    #[test]
    fn chamfer_rigid_motion_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_cloud(&mut rng, 50);
        let y = random_cloud(&mut rng, 60);
        let t = euler_to_transform([20.0, -35.0, 10.0], [0.3, -0.7, 1.1]);
        let a = chamfer(&x, &y).unwrap().value;
        let b = chamfer(&t.apply(&x).unwrap(), &t.apply(&y).unwrap()).unwrap().value;
        assert!((a - b).abs() < 1e-9);
        assert_eq!(a, chamfer(&y, &x).unwrap().value);
    }

    #[test]
    fn emd_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_cloud(&mut rng, 10);
        assert_eq!(emd(&x, &x).unwrap().value, 0.0);
        let (_, m) = emd_match(x.points(), x.points());
        assert_eq!(m, (0..10).collect::<Vec<_>>());

        // crossed arrangement: both pairings enumerated
        let a = PointCloud::new(vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)]).unwrap();
        let b = PointCloud::new(vec![Vec3::new(1.1, 0.1, 0.0), Vec3::new(-0.2, 0.0, 0.0)]).unwrap();
        let p1 = ((a.points()[0] - b.points()[0]).norm_squared()
            + (a.points()[1] - b.points()[1]).norm_squared())
            / 2.0;
        let p2 = ((a.points()[0] - b.points()[1]).norm_squared()
            + (a.points()[1] - b.points()[0]).norm_squared())
            / 2.0;
        assert_eq!(emd(&a, &b).unwrap().value, p1.min(p2));

        for _ in 0..10 {
            let x = random_cloud(&mut rng, 8);
            let y = random_cloud(&mut rng, 8);
            let got = emd(&x, &y).unwrap().value;
            assert!((got - brute_emd(&x, &y)).abs() < 1e-12);
            assert!((got - emd(&y, &x).unwrap().value).abs() < 1e-12);
        }
    }

    #[test]
    fn emd_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_cloud(&mut rng, 5);
        let y = random_cloud(&mut rng, 6);
        assert!(emd(&x, &y).is_err());
        let big = random_cloud(&mut rng, 20);
        assert!(emd_with_cap(&big, &big, 10).is_err());
    }

    #[test]
    fn assignment_small_matrix() {
        #[rustfmt::skip]
        let cost = [
            4.0, 1.0, 3.0,
            2.0, 0.0, 5.0,
            3.0, 2.0, 2.0,
        ];
        let a = min_cost_assignment(&cost, 3);
        let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i * 3 + j]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn frobenius_cases() {
        let gt = euler_to_transform([10.0, 20.0, -5.0], [0.1, 0.2, 0.3]);
        assert_eq!(frobenius_loss(&gt, &gt).value, 0.0);
        let pred = Transform::from_translation(Vec3::new(1.0, 0.0, 0.0)).compose(&gt);
        assert!((frobenius_loss(&pred, &gt).value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frobenius_probe_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let gt = Transform::new(
                Rotation::from_quaternion(q[0], q[1], q[2], q[3]).unwrap(),
                Vec3::new(rng.random(), rng.random(), rng.random()),
            );
            let pred = euler_to_transform(
                [rng.random_range(-90.0..90.0), 5.0, -30.0],
                [rng.random(), 0.0, -1.0],
            );
            let probe = pred.apply(&frobenius_probe(&gt)).unwrap();
            let via_probe = frobenius_from_probe(probe.points());
            let direct = frobenius_loss(&pred, &gt).value;
            assert!((via_probe - direct).abs() < 1e-9 * direct.max(1.0));
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn chamfer_permutation_invariant(seed in 0u64..500) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = random_cloud(&mut rng, 25);
                let y = random_cloud(&mut rng, 30);
                let mut idx: Vec<usize> = (0..25).collect();
                idx.reverse();
                idx.swap(3, 11);
                let xp = x.select(&idx);
                let a = chamfer(&x, &y).unwrap().value;
                let b = chamfer(&xp, &y).unwrap().value;
                prop_assert!((a - b).abs() <= 1e-15 * a.max(1.0));
                prop_assert!(a > 0.0);
            }
        }
    }
}
