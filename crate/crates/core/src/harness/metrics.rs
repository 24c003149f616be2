use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::geometry::{chamfer, PointCloud};

/// Fraction of the first `m` retrieved ids that are positives.
pub fn precision_at_m(retrieved: &[String], positives: &HashSet<String>, m: usize) -> Result<f64> {
    if m == 0 || retrieved.len() < m {
        return Err(Error::param(format!(
            "precision@M needs 1 <= m <= {}, got {m}",
            retrieved.len()
        )));
    }
    let hits = retrieved[..m].iter().filter(|id| positives.contains(*id)).count();
    Ok(hits as f64 / m as f64)
}

/// How much worse the retrieved model fits the query than the best
/// database model does, in Chamfer distance.
pub fn top1_cd(query: &PointCloud, retrieved_top1: &PointCloud, oracle_top1: &PointCloud) -> f64 {
    (chamfer(query, retrieved_top1) - chamfer(query, oracle_top1)).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn precision_examples() {
        let pos: HashSet<String> = ids(&["a", "b"]).into_iter().collect();
        assert_eq!(precision_at_m(&ids(&["a", "b", "c"]), &pos, 2).unwrap(), 1.0);
        assert_eq!(precision_at_m(&ids(&["c", "d"]), &pos, 2).unwrap(), 0.0);
        assert_eq!(precision_at_m(&ids(&["a", "c", "b", "d"]), &pos, 4).unwrap(), 0.5);
        assert!(precision_at_m(&ids(&["a"]), &pos, 2).is_err());
        assert!(precision_at_m(&ids(&["a"]), &pos, 0).is_err());
    }

    #[test]
    fn precision_non_increasing_when_positives_lead() {
        let ranked = ids(&["p1", "p2", "p3", "n1", "n2", "n3"]);
        let pos: HashSet<String> = ids(&["p1", "p2", "p3"]).into_iter().collect();
        let values: Vec<f64> = (1..=6).map(|m| precision_at_m(&ranked, &pos, m).unwrap()).collect();
        assert!(values.windows(2).all(|w| w[1] <= w[0]));
    }

    fn cloud(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> PointCloud {
        let pts = (0..n).map(|_| Point::new(rng.random::<f64>() + shift, rng.random(), rng.random())).collect();
        PointCloud::new("c", pts).unwrap()
    }

    #[test]
    fn top1_cd_against_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = cloud(&mut rng, 60, 0.0);
        let db: Vec<PointCloud> = (0..10).map(|k| cloud(&mut rng, 60, k as f64 * 0.1)).collect();
        let cds: Vec<f64> = db.iter().map(|m| chamfer(&q, m)).collect();
        let oracle = (0..10).min_by(|&a, &b| cds[a].total_cmp(&cds[b])).unwrap();
        assert_eq!(top1_cd(&q, &db[oracle], &db[oracle]), 0.0);
        for k in 0..10 {
            assert_eq!(top1_cd(&q, &db[k], &db[oracle]), (cds[k] - cds[oracle]).abs());
        }
        let same = vec![db[0].clone(); 3];
        assert_eq!(top1_cd(&q, &same[1], &same[2]), 0.0);
    }
}
