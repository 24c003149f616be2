use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{feature_dist_sq, FeatureSet};
use crate::error::{Error, Result};
use crate::geometry::{dist_sq, Correspondence, KdTree, PointCloud};

/// Neighbors per query row in feature matching.
pub const DEFAULT_K: usize = 5;
/// Spatial tolerance for positive pairs, in normalized units.
pub const DEFAULT_PAIR_TAU: f64 = 0.05;

/// All `(i, j)` with `|a_i - b_j| < tau`, ordered by `i` then `j`.
pub fn extract_pairs(a: &PointCloud, b: &PointCloud, tau: f64) -> Result<Vec<Correspondence>> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::param(format!("tau must be positive, got {tau}")));
    }
    let tree = KdTree::new(b.points());
    let rows: Vec<Vec<Correspondence>> = a
        .points()
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            tree.within(p, tau)
                .into_iter()
                .map(|j| Correspondence::new(i, j))
                .collect()
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

/// Draws up to `count` distinct pairs uniformly from those at distance
/// `>= tau` that are not in `positives`. Output is sorted.
pub fn sample_negative_pairs(
    a: &PointCloud,
    b: &PointCloud,
    positives: &[Correspondence],
    tau: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<Correspondence>> {
    if count == 0 {
        return Err(Error::param("negative pair count must be at least 1"));
    }
    let tau_sq = tau * tau;
    let excluded: HashSet<Correspondence> = positives.iter().copied().collect();
    let pool: Vec<Correspondence> = a
        .points()
        .iter()
        .enumerate()
        .flat_map(|(i, p)| {
            b.points()
                .iter()
                .enumerate()
                .filter(move |(_, q)| dist_sq(p, q) >= tau_sq)
                .map(move |(j, _)| Correspondence::new(i, j))
        })
        .filter(|c| !excluded.contains(c))
        .collect();
    if pool.is_empty() {
        return Err(Error::NoNegatives);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, pool.len(), count.min(pool.len()));
    let mut out: Vec<Correspondence> = picks.into_iter().map(|k| pool[k]).collect();
    out.sort_unstable();
    Ok(out)
}

/// Indices of the `k` rows of `model` nearest to `row` in feature space,
/// restricted to `candidates` when given. Ties go to the lower index.
pub fn k_nearest_rows(
    row: &[f32],
    model: &FeatureSet,
    candidates: Option<&[usize]>,
    k: usize,
) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = match candidates {
        Some(c) => c
            .iter()
            .map(|&j| (feature_dist_sq(row, model.row(j)), j))
            .collect(),
        None => (0..model.len())
            .map(|j| (feature_dist_sq(row, model.row(j)), j))
            .collect(),
    };
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k == 0 {
        return Vec::new();
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    scored.into_iter().map(|(_, j)| j).collect()
}

/// For each query row, its `k` nearest model rows in feature space.
/// Output holds `N * k` pairs grouped by query index, nearest first.
pub fn knn_match(
    query_features: &FeatureSet,
    model_features: &FeatureSet,
    k: usize,
) -> Result<Vec<Correspondence>> {
    if query_features.dim() != model_features.dim() {
        return Err(Error::DimMismatch {
            left: query_features.dim(),
            right: model_features.dim(),
        });
    }
    if k == 0 || k > model_features.len() {
        return Err(Error::param(format!(
            "k must be in 1..={}, got {k}",
            model_features.len()
        )));
    }
    let rows: Vec<Vec<usize>> = (0..query_features.len())
        .into_par_iter()
        .map(|i| k_nearest_rows(query_features.row(i), model_features, None, k))
        .collect();
    Ok(rows
        .into_iter()
        .enumerate()
        .flat_map(|(i, js)| js.into_iter().map(move |j| Correspondence::new(i, j)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureSource;
    use crate::geometry::Point;
    use rand::Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, offset: f64) -> PointCloud {
        let pts = (0..n)
            .map(|_| Point::new(rng.random::<f64>() + offset, rng.random(), rng.random()))
            .collect();
        PointCloud::new("r", pts).unwrap()
    }

    fn random_features(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> FeatureSet {
        let data: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        FeatureSet::from_rows(&data, dim, FeatureSource::External).unwrap()
    }

    #[test]
    fn extract_pairs_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_cloud(&mut rng, 30, 0.0);
        let pairs = extract_pairs(&a, &a, 1e-6).unwrap();
        for i in 0..30 {
            assert!(pairs.contains(&Correspondence::new(i, i)));
        }
        let far = random_cloud(&mut rng, 30, 10.0);
        assert!(extract_pairs(&a, &far, 1.0).unwrap().is_empty());
        assert!(extract_pairs(&a, &a, 0.0).is_err());
        assert!(extract_pairs(&a, &a, -1.0).is_err());
    }

    #[test]
    fn extract_pairs_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_cloud(&mut rng, 30, 0.0);
        let b = random_cloud(&mut rng, 30, 0.0);
        let mut brute = vec![];
        for (i, p) in a.points().iter().enumerate() {
            for (j, q) in b.points().iter().enumerate() {
                let d = p - q;
                if d.x * d.x + d.y * d.y + d.z * d.z < 0.01 {
                    brute.push(Correspondence::new(i, j));
                }
            }
        }
        assert_eq!(extract_pairs(&a, &b, 0.1).unwrap(), brute);
        let mut transposed: Vec<_> = extract_pairs(&b, &a, 0.1)
            .unwrap()
            .into_iter()
            .map(|c| Correspondence::new(c.model, c.query))
            .collect();
        transposed.sort();
        assert_eq!(transposed, brute);
    }

    #[test]
    fn negative_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_cloud(&mut rng, 20, 0.0);
        let b = random_cloud(&mut rng, 25, 0.0);
        let pos = extract_pairs(&a, &b, 0.3).unwrap();
        let n1 = sample_negative_pairs(&a, &b, &pos, 0.3, 40, 7).unwrap();
        let n2 = sample_negative_pairs(&a, &b, &pos, 0.3, 40, 7).unwrap();
        assert_eq!(n1, n2);
        assert_eq!(n1.len(), 40);
        for c in &n1 {
            assert!((a.points()[c.query] - b.points()[c.model]).norm() >= 0.3);
            assert!(!pos.contains(c));
        }
        // cube diagonal is sqrt(3) < 2
        assert!(matches!(
            sample_negative_pairs(&a, &a, &[], 2.0, 5, 0),
            Err(Error::NoNegatives)
        ));
        assert!(sample_negative_pairs(&a, &b, &pos, 0.3, 0, 0).is_err());
    }

    #[test]
    fn knn_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random_features(&mut rng, 12, 6);
        let diag = knn_match(&f, &f, 1).unwrap();
        assert_eq!(diag, (0..12).map(|i| Correspondence::new(i, i)).collect::<Vec<_>>());

        let g = random_features(&mut rng, 7, 6);
        let mut all = knn_match(&f, &g, 7).unwrap();
        assert_eq!(all.len(), 12 * 7);
        all.sort();
        let full: Vec<_> = (0..12)
            .flat_map(|i| (0..7).map(move |j| Correspondence::new(i, j)))
            .collect();
        assert_eq!(all, full);

        assert!(knn_match(&f, &g, 8).is_err());
        assert!(knn_match(&f, &g, 0).is_err());
        let h = random_features(&mut rng, 7, 5);
        assert!(matches!(knn_match(&f, &h, 1), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn knn_matches_per_row_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_features(&mut rng, 20, 8);
        let m = random_features(&mut rng, 20, 8);
        let got = knn_match(&q, &m, 3).unwrap();
        let mut expect = vec![];
        for i in 0..20 {
            let mut d: Vec<(f64, usize)> = (0..20)
                .map(|j| {
                    let s: f64 = q.row(i).iter().zip(m.row(j)).map(|(a, b)| {
                        let t = *a as f64 - *b as f64;
                        t * t
                    }).sum();
                    (s, j)
                })
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            expect.extend(d[..3].iter().map(|&(_, j)| Correspondence::new(i, j)));
        }
        assert_eq!(got, expect);
    }

    #[test]
    fn knn_ties_prefer_lower_index() {
        let f = FeatureSet::from_rows(&[1.0, 0.0, 1.0, 0.0, 1.0, 0.0], 2, FeatureSource::External).unwrap();
        let m = knn_match(&f, &f, 2).unwrap();
        assert_eq!(&m[..2], &[Correspondence::new(0, 0), Correspondence::new(0, 1)]);
    }
}
