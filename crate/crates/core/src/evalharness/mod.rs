//! Quantitative evaluation: descriptor matching, matching accuracy,
//! repeatability, the synthetic-burst benchmark over HPatches-format data,
//! camera-trajectory error metrics, and reconstruction statistics.

pub mod hpatches;
pub mod recon;
pub mod trajectory;

use crate::error::Result;
use crate::extractor::FeatureSet;
use crate::geometry::Homography;
use rayon::prelude::*;

/// Mutual-nearest-neighbor correspondences between two feature sets.
#[derive(Clone, Debug, Default)]
pub struct MatchSet {
    /// (index in A, index in B) pairs; each index appears at most once per
    /// side.
    pub pairs: Vec<(usize, usize)>,
    /// Euclidean descriptor distance per pair.
    pub distances: Vec<f32>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn descriptor_distance(a: &[f32], b: &[f32]) -> f32 {
    let mut s = 0.0f32;
    let chunks = a.len() / 8;
    let mut lanes = [0.0f32; 8];
    for c in 0..chunks {
        for l in 0..8 {
            let d = a[c * 8 + l] - b[c * 8 + l];
            lanes[l] += d * d;
        }
    }
    for i in chunks * 8..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    for l in lanes {
        s += l;
    }
    s.sqrt()
}

/// Mutual nearest neighbors under Euclidean descriptor distance, ties
/// broken by the lower index. Either side empty yields an empty match set.
pub fn match_descriptors(fs_a: &FeatureSet, fs_b: &FeatureSet) -> MatchSet {
    if fs_a.is_empty() || fs_b.is_empty() {
        return MatchSet::default();
    }
    let nn_ab: Vec<(usize, f32)> = (0..fs_a.len())
        .into_par_iter()
        .map(|i| {
            let da = fs_a.descriptor(i);
            let mut best = (0usize, f32::INFINITY);
            for j in 0..fs_b.len() {
                let d = descriptor_distance(da, fs_b.descriptor(j));
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .collect();
    let nn_ba: Vec<usize> = (0..fs_b.len())
        .into_par_iter()
        .map(|j| {
            let db = fs_b.descriptor(j);
            let mut best = (0usize, f32::INFINITY);
            for i in 0..fs_a.len() {
                let d = descriptor_distance(fs_a.descriptor(i), db);
                if d < best.1 {
                    best = (i, d);
                }
            }
            best.0
        })
        .collect();
    let mut pairs = Vec::new();
    let mut distances = Vec::new();
    for (i, &(j, d)) in nn_ab.iter().enumerate() {
        if nn_ba[j] == i {
            pairs.push((i, j));
            distances.push(d);
        }
    }
    MatchSet { pairs, distances }
}

/// Matching accuracy at one or more pixel thresholds.
#[derive(Clone, Debug)]
pub struct MmaResult {
    pub thresholds: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub match_count: usize,
    /// No matches existed; accuracies were reported as zero.
    pub empty: bool,
}

pub fn default_mma_thresholds() -> Vec<f64> {
    (1..=10).map(|t| t as f64).collect()
}

/// Mean matching accuracy: the fraction of mutual-NN matches whose
/// reprojection error under `h_ab` (A-frame to B-frame) is within each
/// threshold.
pub fn mma(
    fs_a: &FeatureSet,
    fs_b: &FeatureSet,
    h_ab: &Homography,
    thresholds: &[f64],
) -> MmaResult {
    let matches = match_descriptors(fs_a, fs_b);
    if matches.is_empty() {
        return MmaResult {
            thresholds: thresholds.to_vec(),
            accuracy: vec![0.0; thresholds.len()],
            match_count: 0,
            empty: true,
        };
    }
    let mut errors = Vec::with_capacity(matches.len());
    for &(i, j) in &matches.pairs {
        let a = &fs_a.keypoints[i];
        let b = &fs_b.keypoints[j];
        let err = match h_ab.apply(a.x, a.y) {
            Some((px, py)) => ((px - b.x).powi(2) + (py - b.y).powi(2)).sqrt(),
            None => f64::INFINITY,
        };
        errors.push(err);
    }
    let total = errors.len() as f64;
    let accuracy = thresholds
        .iter()
        .map(|&t| errors.iter().filter(|&&e| e <= t).count() as f64 / total)
        .collect();
    MmaResult {
        thresholds: thresholds.to_vec(),
        accuracy,
        match_count: matches.len(),
        empty: false,
    }
}

/// Symmetric proximity repeatability: the fraction of keypoints whose
/// ground-truth projection lands within `eps` of some keypoint on the other
/// side, averaged over both directions. Empty inputs report zero.
pub fn repeatability(
    fs_a: &FeatureSet,
    fs_b: &FeatureSet,
    h_ab: &Homography,
    eps: f64,
) -> Result<f64> {
    if fs_a.is_empty() || fs_b.is_empty() {
        return Ok(0.0);
    }
    let h_ba = h_ab.inverse()?;
    let frac = |src: &FeatureSet, dst: &FeatureSet, h: &Homography| -> f64 {
        let mut hit = 0usize;
        for kp in &src.keypoints {
            if let Some((px, py)) = h.apply(kp.x, kp.y) {
                let close = dst
                    .keypoints
                    .iter()
                    .any(|d| (d.x - px).powi(2) + (d.y - py).powi(2) <= eps * eps);
                if close {
                    hit += 1;
                }
            }
        }
        hit as f64 / src.keypoints.len() as f64
    };
    Ok(0.5 * (frac(fs_a, fs_b, h_ab) + frac(fs_b, fs_a, &h_ba)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extractor::Keypoint;
    use crate::rng::DetRng;

    fn feature_set(points: &[(f64, f64)], descs: Vec<Vec<f32>>) -> FeatureSet {
        let dim = descs[0].len();
        FeatureSet {
            keypoints: points
                .iter()
                .map(|&(x, y)| Keypoint { x, y, scale: 1.0, score: 1.0 })
                .collect(),
            descriptors: descs.concat(),
            descriptor_dim: dim,
            image_id: String::new(),
            width: 100,
            height: 100,
        }
    }

    fn random_unit(dim: usize, rng: &mut DetRng) -> Vec<f32> {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| (x / n) as f32).collect()
    }

    #[test]
    fn identical_sets_match_identically() {
        let mut rng = DetRng::seed_from(1);
        let descs: Vec<Vec<f32>> = (0..10).map(|_| random_unit(16, &mut rng)).collect();
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64 * 5.0, i as f64 * 3.0)).collect();
        let fs = feature_set(&pts, descs);
        let m = match_descriptors(&fs, &fs);
        assert_eq!(m.len(), 10);
        for (k, &(i, j)) in m.pairs.iter().enumerate() {
            assert_eq!(i, j);
            assert_eq!(m.distances[k], 0.0);
        }
    }

    #[test]
    fn orthogonal_singletons_still_match() {
        let a = feature_set(&[(0.0, 0.0)], vec![vec![1.0, 0.0]]);
        let b = feature_set(&[(5.0, 5.0)], vec![vec![0.0, 1.0]]);
        let m = match_descriptors(&a, &b);
        assert_eq!(m.len(), 1);
        assert!((m.distances[0] - std::f32::consts::SQRT_2).abs() < 1e-6);
    }

    #[test]
    fn empty_side_gives_empty_matchset() {
        let a = feature_set(&[(0.0, 0.0)], vec![vec![1.0, 0.0]]);
        let empty = FeatureSet {
            keypoints: vec![],
            descriptors: vec![],
            descriptor_dim: 2,
            image_id: String::new(),
            width: 10,
            height: 10,
        };
        assert!(match_descriptors(&a, &empty).is_empty());
        assert!(match_descriptors(&empty, &a).is_empty());
    }

    #[test]
    fn mutual_nn_matches_brute_force_oracle() {
        let mut rng = DetRng::seed_from(2);
        let da: Vec<Vec<f32>> = (0..50).map(|_| random_unit(128, &mut rng)).collect();
        let db: Vec<Vec<f32>> = (0..50).map(|_| random_unit(128, &mut rng)).collect();
        let pts: Vec<(f64, f64)> = (0..50).map(|i| (i as f64, i as f64)).collect();
        let fa = feature_set(&pts, da.clone());
        let fb = feature_set(&pts, db.clone());
        let got = match_descriptors(&fa, &fb);
        // oracle: double loop in f64
        let dist = |a: &[f32], b: &[f32]| -> f64 {
            a.iter()
                .zip(b)
                .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let mut want = Vec::new();
        for i in 0..50 {
            let mut bj = 0;
            let mut bd = f64::INFINITY;
            for (j, dbj) in db.iter().enumerate() {
                let d = dist(&da[i], dbj);
                if d < bd {
                    bd = d;
                    bj = j;
                }
            }
            let mut bi = 0;
            let mut bd2 = f64::INFINITY;
            for (k, dak) in da.iter().enumerate() {
                let d = dist(dak, &db[bj]);
                if d < bd2 {
                    bd2 = d;
                    bi = k;
                }
            }
            if bi == i {
                want.push((i, bj));
            }
        }
        assert_eq!(got.pairs, want);
    }

    #[test]
    fn mma_is_one_for_identical_sets_under_identity() {
        let mut rng = DetRng::seed_from(3);
        let descs: Vec<Vec<f32>> = (0..20).map(|_| random_unit(32, &mut rng)).collect();
        let pts: Vec<(f64, f64)> = (0..20).map(|i| ((i * 7 % 90) as f64, (i * 13 % 90) as f64)).collect();
        let fs = feature_set(&pts, descs);
        let res = mma(&fs, &fs, &Homography::identity(), &default_mma_thresholds());
        for &a in &res.accuracy {
            assert_eq!(a, 1.0);
        }
    }

    #[test]
    fn mma_is_a_step_function_for_uniform_displacement() {
        let mut rng = DetRng::seed_from(4);
        let descs: Vec<Vec<f32>> = (0..15).map(|_| random_unit(32, &mut rng)).collect();
        let pts_a: Vec<(f64, f64)> = (0..15).map(|i| ((i * 6) as f64, (i * 5) as f64)).collect();
        // b keypoints displaced by exactly 5 px in x relative to H(a) = a
        let pts_b: Vec<(f64, f64)> = pts_a.iter().map(|&(x, y)| (x + 5.0, y)).collect();
        let fa = feature_set(&pts_a, descs.clone());
        let fb = feature_set(&pts_b, descs);
        let res = mma(&fa, &fb, &Homography::identity(), &default_mma_thresholds());
        for (t, a) in res.thresholds.iter().zip(&res.accuracy) {
            if *t < 5.0 {
                assert_eq!(*a, 0.0, "threshold {t}");
            } else {
                assert_eq!(*a, 1.0, "threshold {t}");
            }
        }
    }

    #[test]
    fn mma_zero_matches_is_flagged() {
        let empty = FeatureSet {
            keypoints: vec![],
            descriptors: vec![],
            descriptor_dim: 2,
            image_id: String::new(),
            width: 10,
            height: 10,
        };
        let res = mma(&empty, &empty, &Homography::identity(), &[3.0]);
        assert!(res.empty);
        assert_eq!(res.accuracy, vec![0.0]);
    }

    #[test]
    fn mma_nondecreasing_in_threshold() {
        let mut rng = DetRng::seed_from(5);
        let da: Vec<Vec<f32>> = (0..40).map(|_| random_unit(64, &mut rng)).collect();
        let db: Vec<Vec<f32>> = (0..40).map(|_| random_unit(64, &mut rng)).collect();
        let pa: Vec<(f64, f64)> = (0..40)
            .map(|_| (rng.uniform_in(0.0, 90.0), rng.uniform_in(0.0, 90.0)))
            .collect();
        let pb: Vec<(f64, f64)> = (0..40)
            .map(|_| (rng.uniform_in(0.0, 90.0), rng.uniform_in(0.0, 90.0)))
            .collect();
        let fa = feature_set(&pa, da);
        let fb = feature_set(&pb, db);
        let res = mma(&fa, &fb, &Homography::identity(), &default_mma_thresholds());
        for w in res.accuracy.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn repeatability_extremes() {
        let mut rng = DetRng::seed_from(6);
        let descs: Vec<Vec<f32>> = (0..10).map(|_| random_unit(16, &mut rng)).collect();
        let pts: Vec<(f64, f64)> = (0..10).map(|i| ((i * 9) as f64, (i * 4) as f64)).collect();
        let fs = feature_set(&pts, descs.clone());
        assert_eq!(repeatability(&fs, &fs, &Homography::identity(), 3.0).unwrap(), 1.0);
        let far: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x + 500.0, y + 500.0)).collect();
        let fs_far = feature_set(&far, descs);
        assert_eq!(repeatability(&fs, &fs_far, &Homography::identity(), 3.0).unwrap(), 0.0);
    }

    #[test]
    fn metrics_invariant_to_keypoint_permutation() {
        let mut rng = DetRng::seed_from(7);
        let descs: Vec<Vec<f32>> = (0..30).map(|_| random_unit(64, &mut rng)).collect();
        let pts: Vec<(f64, f64)> = (0..30)
            .map(|_| (rng.uniform_in(0.0, 80.0), rng.uniform_in(0.0, 80.0)))
            .collect();
        let fa = feature_set(&pts, descs.clone());
        // permuted copy of the same features
        let perm: Vec<usize> = {
            let mut p: Vec<usize> = (0..30).collect();
            rng.shuffle(&mut p);
            p
        };
        let pts_p: Vec<(f64, f64)> = perm.iter().map(|&i| pts[i]).collect();
        let descs_p: Vec<Vec<f32>> = perm.iter().map(|&i| descs[i].clone()).collect();
        let fb = feature_set(&pts_p, descs_p);
        let r_ab = repeatability(&fa, &fb, &Homography::identity(), 3.0).unwrap();
        assert_eq!(r_ab, 1.0);
        let m = mma(&fa, &fb, &Homography::identity(), &[3.0]);
        assert_eq!(m.accuracy[0], 1.0);
    }
}
