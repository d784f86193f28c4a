//! Synthetic registration pairs under the three dataset regimes.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::{add_gaussian_noise, farthest_point_sample, make_partial, normalize_unit_box, sample_mesh, sparsify, PointCloud};
use crate::error::{Error, Result};
use crate::io::{load_cloud, parse_off};
use crate::se3::{euler_to_transform, Transform};
use crate::synth::{synth_shape, ShapeKind, ShapeSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Several shape kinds, several models of each.
    MultiCategory,
    /// One shape kind, several models.
    SingleCategory,
    /// Exactly one model.
    SingleModel,
}

impl Regime {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "multi_category" => Some(Regime::MultiCategory),
            "single_category" => Some(Regime::SingleCategory),
            "single_model" => Some(Regime::SingleModel),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Regime::MultiCategory => "multi_category",
            Regime::SingleCategory => "single_category",
            Regime::SingleModel => "single_model",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub regime: Regime,
    /// Synthetic shape kinds, used when `template_files` is empty.
    pub shapes: Vec<ShapeKind>,
    /// OFF meshes or XYZ/PLY clouds; overrides `shapes` when non-empty.
    pub template_files: Vec<PathBuf>,
    /// Synthetic models per kind for the multi-model regimes.
    pub models_per_category: usize,
    pub points_per_cloud: usize,
    pub noise_sigma_max: f64,
    /// Sources keep a random fraction in `[partial_keep_min, 1]` of the
    /// points; 1 disables cropping.
    pub partial_keep_min: f64,
    pub sparsify_to: Option<usize>,
    pub max_angle_deg: f64,
    pub max_translation: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            regime: Regime::SingleModel,
            shapes: vec![ShapeKind::LBracket],
            template_files: Vec::new(),
            models_per_category: 8,
            points_per_cloud: 512,
            noise_sigma_max: 0.0,
            partial_keep_min: 1.0,
            sparsify_to: None,
            max_angle_deg: 45.0,
            max_translation: 1.0,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma_max >= 0.0 && self.noise_sigma_max.is_finite()) {
            return Err(Error::invalid(format!("noise_sigma_max must be >= 0, got {}", self.noise_sigma_max)));
        }
        if !(self.partial_keep_min > 0.0 && self.partial_keep_min <= 1.0) {
            return Err(Error::invalid(format!("partial_keep_min must be in (0, 1], got {}", self.partial_keep_min)));
        }
        if !(self.max_angle_deg >= 0.0 && self.max_angle_deg <= 180.0) || !(self.max_translation >= 0.0) {
            return Err(Error::invalid("transform ranges must be non-negative, angles at most 180"));
        }
        if self.points_per_cloud == 0 {
            return Err(Error::invalid("points_per_cloud must be at least 1"));
        }
        if let Some(n) = self.sparsify_to {
            if n == 0 || n > self.points_per_cloud {
                return Err(Error::invalid(format!("sparsify_to {n} must be in 1..={}", self.points_per_cloud)));
            }
        }
        if self.template_files.is_empty() && self.shapes.is_empty() {
            return Err(Error::invalid("no template shapes or files"));
        }
        if self.regime != Regime::SingleModel && self.template_files.is_empty() && self.models_per_category == 0 {
            return Err(Error::invalid("models_per_category must be at least 1"));
        }
        Ok(())
    }
}

/// SplitMix64 over the parts, for independent per-item seeds.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

const TRAIN_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;
const TEMPLATE_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Normalized template clouds for each split. Multi-model regimes hold out
/// disjoint models for testing; a single model is shared by both splits.
#[derive(Debug, Clone)]
pub struct Templates {
    pub train: Vec<PointCloud>,
    pub test: Vec<PointCloud>,
    pub names: (Vec<String>, Vec<String>),
}

impl Templates {
    pub fn get(&self, split: Split) -> &[PointCloud] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

fn prepare_one(raw: PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    let c = if raw.len() > n { farthest_point_sample(&raw, n, seed)? } else { raw };
    if c.len() < n {
        return Err(Error::invalid(format!("template has {} points, need {n}", c.len())));
    }
    normalize_unit_box(&c)
}

fn load_template(path: &std::path::Path, n: usize, seed: u64) -> Result<PointCloud> {
    let is_off = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("off"));
    let raw = if is_off {
        sample_mesh(&parse_off(&std::fs::read(path)?)?, 4 * n, seed)?
    } else {
        load_cloud(path)?
    };
    prepare_one(raw, n, seed)
}

/// Builds and normalizes (once) the template clouds for a spec.
pub fn prepare_templates(spec: &DatasetSpec) -> Result<Templates> {
    spec.validate()?;
    let n = spec.points_per_cloud;
    let seed = |i: usize| derive_seed(&[spec.seed, TEMPLATE_STREAM, i as u64]);
    if !spec.template_files.is_empty() {
        let files: Vec<&PathBuf> = match spec.regime {
            Regime::SingleModel => spec.template_files.iter().take(1).collect(),
            _ => spec.template_files.iter().collect(),
        };
        let clouds = files
            .iter()
            .enumerate()
            .map(|(i, p)| load_template(p, n, seed(i)))
            .collect::<Result<Vec<_>>>()?;
        let names: Vec<String> = files.iter().map(|p| p.display().to_string()).collect();
        // every fifth model is held out once there are enough to split
        if clouds.len() >= 2 {
            let held = |i: usize| i % 5 == 4 || (clouds.len() < 5 && i == clouds.len() - 1);
            let split = |test: bool| -> (Vec<PointCloud>, Vec<String>) {
                (0..clouds.len())
                    .filter(|&i| held(i) == test)
                    .map(|i| (clouds[i].clone(), names[i].clone()))
                    .unzip()
            };
            let (train, tn) = split(false);
            let (test, sn) = split(true);
            return Ok(Templates { train, test, names: (tn, sn) });
        }
        return Ok(Templates {
            train: clouds.clone(),
            test: clouds,
            names: (names.clone(), names),
        });
    }
    let kinds: &[ShapeKind] = match spec.regime {
        Regime::MultiCategory => &spec.shapes,
        _ => &spec.shapes[..1],
    };
    if spec.regime == Regime::SingleModel {
        let s = ShapeSpec::new(kinds[0]);
        let c = prepare_one(synth_shape(&s, n, seed(0))?, n, seed(0))?;
        let name = vec![kinds[0].name().to_string()];
        return Ok(Templates {
            train: vec![c.clone()],
            test: vec![c],
            names: (name.clone(), name),
        });
    }
    // models 0..m train, m..m+ceil(m/4) test
    let m = spec.models_per_category;
    let held = m.div_ceil(4);
    let mut t = Templates {
        train: Vec::new(),
        test: Vec::new(),
        names: (Vec::new(), Vec::new()),
    };
    for (ki, &k) in kinds.iter().enumerate() {
        for idx in 0..m + held {
            let s = ShapeSpec::variant(k, idx as u64);
            let sd = seed(ki * 10_000 + idx);
            let c = prepare_one(synth_shape(&s, n, sd)?, n, sd)?;
            let name = format!("{}#{idx}", k.name());
            if idx < m {
                t.train.push(c);
                t.names.0.push(name);
            } else {
                t.test.push(c);
                t.names.1.push(name);
            }
        }
    }
    Ok(t)
}

/// A generated registration problem: `source = corrupt(gt * template)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub id: usize,
    pub template: usize,
    pub source: PointCloud,
    pub gt: Transform,
}

/// Samples `gt` (Euler angles uniform in `±max_angle_deg` per axis,
/// translation uniform in `±max_translation` per component) and corrupts the
/// moved template: optional crop, optional subsampling, Gaussian noise with
/// sigma uniform in `[0, noise_sigma_max]`.
pub fn generate_pair(template: &PointCloud, spec: &DatasetSpec, rng: &mut impl Rng) -> Result<(PointCloud, Transform)> {
    let a = spec.max_angle_deg;
    let t = spec.max_translation;
    let angle = |rng: &mut dyn rand::RngCore| if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 };
    let trans = |rng: &mut dyn rand::RngCore| if t > 0.0 { rng.random_range(-t..=t) } else { 0.0 };
    let angles = [angle(rng), angle(rng), angle(rng)];
    let translation = [trans(rng), trans(rng), trans(rng)];
    let sigma = if spec.noise_sigma_max > 0.0 { rng.random_range(0.0..=spec.noise_sigma_max) } else { 0.0 };
    let keep = if spec.partial_keep_min < 1.0 { rng.random_range(spec.partial_keep_min..=1.0) } else { 1.0 };
    let (s_crop, s_sparse, s_noise): (u64, u64, u64) = (rng.random(), rng.random(), rng.random());

    let gt = euler_to_transform(angles, translation);
    let mut source = gt.apply(template)?;
    if keep < 1.0 {
        source = make_partial(&source, keep, s_crop)?;
    }
    if let Some(n) = spec.sparsify_to {
        if n < source.len() {
            source = sparsify(&source, n, s_sparse)?;
        }
    }
    source = add_gaussian_noise(&source, sigma, s_noise)?;
    Ok((source, gt))
}

fn stream(split: Split) -> u64 {
    match split {
        Split::Train => TRAIN_STREAM,
        Split::Test => TEST_STREAM,
    }
}

/// `count` pairs for a split. `round` separates training epochs; train and
/// test use disjoint seed streams. Pair `i` depends only on
/// `(spec.seed, split, round, i)`.
pub fn generate_pairs(templates: &Templates, spec: &DatasetSpec, split: Split, round: u64, count: usize) -> Result<Vec<Pair>> {
    let pool = templates.get(split);
    if pool.is_empty() {
        return Err(Error::invalid("no templates for this split"));
    }
    let one = |i: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[spec.seed, stream(split), round, i as u64]));
        let template = if pool.len() == 1 { 0 } else { rng.random_range(0..pool.len()) };
        let (source, gt) = generate_pair(&pool[template], spec, &mut rng)?;
        Ok(Pair { id: i, template, source, gt })
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..count).into_par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(one).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(regime: Regime) -> DatasetSpec {
        DatasetSpec {
            regime,
            points_per_cloud: 64,
            models_per_category: 4,
            ..Default::default()
        }
    }

    #[test]
    fn clean_pair_is_exact_transform() {
        let spec = small(Regime::SingleModel);
        let t = prepare_templates(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (src, gt) = generate_pair(&t.train[0], &spec, &mut rng).unwrap();
        assert_eq!(src, gt.apply(&t.train[0]).unwrap());
    }

    #[test]
    fn deterministic_and_streams_disjoint() {
        let mut spec = small(Regime::SingleModel);
        spec.noise_sigma_max = 0.04;
        spec.partial_keep_min = 0.7;
        let t = prepare_templates(&spec).unwrap();
        let a = generate_pairs(&t, &spec, Split::Train, 0, 5).unwrap();
        let b = generate_pairs(&t, &spec, Split::Train, 0, 5).unwrap();
        assert_eq!(a, b);
        let c = generate_pairs(&t, &spec, Split::Test, 0, 5).unwrap();
        let d = generate_pairs(&t, &spec, Split::Train, 1, 5).unwrap();
        for i in 0..5 {
            assert_ne!(a[i].gt, c[i].gt);
            assert_ne!(a[i].gt, d[i].gt);
            assert!(a[i].source.len() >= 45 && a[i].source.len() <= 64);
        }
    }

    #[test]
    fn templates_are_normalized() {
        let t = prepare_templates(&small(Regime::SingleModel)).unwrap();
        let c = &t.train[0];
        let (lo, hi) = c.bounds();
        assert!(((hi - lo).max() - 1.0).abs() < 1e-12);
        assert!(c.centroid().norm() < 1e-12);
    }

    #[test]
    fn multi_model_regimes_hold_out_models() {
        let t = prepare_templates(&small(Regime::SingleCategory)).unwrap();
        assert_eq!((t.train.len(), t.test.len()), (4, 1));
        let mut spec = small(Regime::MultiCategory);
        spec.shapes = ShapeKind::ALL.to_vec();
        let t = prepare_templates(&spec).unwrap();
        assert_eq!((t.train.len(), t.test.len()), (16, 4));
        for n in &t.names.1 {
            assert!(!t.names.0.contains(n));
        }
    }

    #[test]
    fn invalid_specs() {
        let mut s = small(Regime::SingleModel);
        s.partial_keep_min = 0.0;
        assert!(s.validate().is_err());
        s.partial_keep_min = 1.0;
        s.noise_sigma_max = -1.0;
        assert!(s.validate().is_err());
    }

    /// Kolmogorov-Smirnov test of each Euler angle against U[-45, 45].
    #[test]
    fn euler_angles_are_uniform() {
        let spec = DatasetSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = PointCloud::from_flat(&[0.0, 0.0, 0.0]).unwrap();
        let n = 10_000;
        let mut angles = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
        for _ in 0..n {
            let (_, gt) = generate_pair(&t, &spec, &mut rng).unwrap();
            // recover Z-Y-X angles from the rotation matrix
            let r = gt.rotation.matrix();
            let b = (-r[(2, 0)]).asin();
            let a = r[(2, 1)].atan2(r[(2, 2)]);
            let c = r[(1, 0)].atan2(r[(0, 0)]);
            for (k, v) in [a, b, c].into_iter().enumerate() {
                angles[k].push(v.to_degrees());
            }
            assert!(gt.translation.iter().all(|v| v.abs() <= 1.0));
        }
        let critical = 1.628 / (n as f64).sqrt();
        for mut xs in angles {
            xs.sort_by(f64::total_cmp);
            let d = xs
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let cdf = (x + 45.0) / 90.0;
                    (cdf - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - cdf).abs())
                })
                .fold(0.0, f64::max);
            assert!(d < critical, "KS statistic {d} >= {critical}");
        }
    }
}
