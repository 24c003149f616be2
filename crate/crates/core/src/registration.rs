//! Rigid pose estimation from correspondences.
//!
//! Poses map model coordinates onto query coordinates: `q = R * m + p`.

use nalgebra::{Matrix3, SVD};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{knn_match, FeatureSet, DEFAULT_K};
use crate::geometry::{apply_pose, dist_sq, scd, Correspondence, Point, PointCloud, Pose};
use crate::symmetry::{
    constrained_match, enumerate_mappings, symmetry_split, SymmetryParams, SymmetrySplit,
};

/// Hypothesis label of the plain feature-kNN correspondence set.
pub const UNCONSTRAINED: &str = "unconstrained";

const CHUNK: usize = 256;
const REFINE_ROUNDS: usize = 10;

/// Least-squares rigid transform taking `model_pts` onto `query_pts`.
pub fn kabsch(query_pts: &[Point], model_pts: &[Point]) -> Result<Pose> {
    if query_pts.len() != model_pts.len() {
        return Err(Error::param(format!(
            "kabsch needs matched point lists, got {} and {}",
            query_pts.len(),
            model_pts.len()
        )));
    }
    if query_pts.len() < 3 {
        return Err(Error::TooFewCorrespondences(query_pts.len()));
    }
    let n = query_pts.len() as f64;
    let cq = query_pts.iter().fold(Point::zeros(), |a, p| a + p) / n;
    let cm = model_pts.iter().fold(Point::zeros(), |a, p| a + p) / n;
    let mut h = Matrix3::zeros();
    for (q, m) in query_pts.iter().zip(model_pts) {
        h += (m - cm) * (q - cq).transpose();
    }
    let svd = SVD::new(h, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateCorrespondences),
    };
    let s = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    if !(s[order[0]] > 0.0) || s[order[1]] < 1e-12 * s[order[0]] {
        return Err(Error::DegenerateCorrespondences);
    }
    let v = v_t.transpose();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        d[(order[2], order[2])] = -1.0;
    }
    let r = orthonormalize(&(v * d * u.transpose()));
    let t = cq - r * cm;
    Pose::new(r, t).map_err(|_| Error::DegenerateCorrespondences)
}

/// One Gram-Schmidt pass to remove rounding drift from a rotation.
fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let x = r.column(0).normalize();
    let y = (r.column(1) - x * x.dot(&r.column(1))).normalize();
    let z = x.cross(&y);
    Matrix3::from_columns(&[x, y, z])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    pub iterations: usize,
    pub inlier_threshold: f64,
    /// Stop once the best inlier fraction exceeds this.
    pub early_exit_ratio: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams {
            iterations: 10_000,
            inlier_threshold: 0.05,
            early_exit_ratio: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub pose: Pose,
    pub inlier_count: usize,
    pub hypothesis_label: String,
    pub alignment_scd: f64,
}

/// On-disk form of a [`RegistrationResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationRecord {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub inlier_count: usize,
    pub hypothesis_label: String,
    pub alignment_scd: f64,
}

impl From<&RegistrationResult> for RegistrationRecord {
    fn from(r: &RegistrationResult) -> Self {
        let t = r.pose.translation();
        RegistrationRecord {
            rotation: r.pose.rotation_row_major(),
            translation: [t.x, t.y, t.z],
            inlier_count: r.inlier_count,
            hypothesis_label: r.hypothesis_label.clone(),
            alignment_scd: r.alignment_scd,
        }
    }
}

impl RegistrationResult {
    pub fn record(&self) -> RegistrationRecord {
        RegistrationRecord::from(self)
    }
}

fn count_inliers(pose: &Pose, qs: &[Point], ms: &[Point], thr_sq: f64) -> usize {
    qs.iter()
        .zip(ms)
        .filter(|(q, m)| dist_sq(q, &pose.transform_point(m)) < thr_sq)
        .count()
}

fn inlier_indices(pose: &Pose, qs: &[Point], ms: &[Point], thr_sq: f64) -> Vec<usize> {
    (0..qs.len())
        .filter(|&i| dist_sq(&qs[i], &pose.transform_point(&ms[i])) < thr_sq)
        .collect()
}

/// RANSAC over 3-point Kabsch fits. The best hypothesis is refit by Kabsch
/// on its inliers until the inlier set stops changing. Iteration `i` draws
/// its sample from ChaCha8 stream `i` keyed by the seed, and iterations are
/// scored in fixed-size chunks, so the result does not depend on the
/// thread count.
pub fn ransac_register(
    query: &PointCloud,
    model: &PointCloud,
    correspondences: &[Correspondence],
    params: &RansacParams,
) -> Result<RegistrationResult> {
    if correspondences.len() < 3 {
        return Err(Error::TooFewCorrespondences(correspondences.len()));
    }
    if params.iterations == 0 {
        return Err(Error::param("RANSAC needs at least one iteration"));
    }
    if !(params.inlier_threshold.is_finite() && params.inlier_threshold > 0.0) {
        return Err(Error::param("inlier threshold must be positive"));
    }
    let mut qs = Vec::with_capacity(correspondences.len());
    let mut ms = Vec::with_capacity(correspondences.len());
    for c in correspondences {
        let q = query.points().get(c.query).ok_or(Error::IndexOutOfBounds {
            index: c.query,
            len: query.len(),
        })?;
        let m = model.points().get(c.model).ok_or(Error::IndexOutOfBounds {
            index: c.model,
            len: model.len(),
        })?;
        qs.push(*q);
        ms.push(*m);
    }
    let n = qs.len();
    let thr_sq = params.inlier_threshold * params.inlier_threshold;

    let mut best: Option<(usize, Pose)> = None;
    let mut start = 0;
    while start < params.iterations {
        let end = (start + CHUNK).min(params.iterations);
        let trials: Vec<Option<(usize, Pose)>> = (start..end)
            .into_par_iter()
            .map(|it| {
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
                rng.set_stream(it as u64);
                let pick = index::sample(&mut rng, n, 3);
                let sq: Vec<Point> = pick.iter().map(|i| qs[i]).collect();
                let sm: Vec<Point> = pick.iter().map(|i| ms[i]).collect();
                let pose = kabsch(&sq, &sm).ok()?;
                Some((count_inliers(&pose, &qs, &ms, thr_sq), pose))
            })
            .collect();
        for t in trials.into_iter().flatten() {
            if best.as_ref().is_none_or(|b| t.0 > b.0) {
                best = Some(t);
            }
        }
        start = end;
        if let Some((count, _)) = &best {
            if *count as f64 > params.early_exit_ratio * n as f64 {
                break;
            }
        }
    }
    let (mut count, mut pose) = best.ok_or(Error::DegenerateCorrespondences)?;

    let mut inliers = inlier_indices(&pose, &qs, &ms, thr_sq);
    for _ in 0..REFINE_ROUNDS {
        if inliers.len() < 3 {
            break;
        }
        let iq: Vec<Point> = inliers.iter().map(|&i| qs[i]).collect();
        let im: Vec<Point> = inliers.iter().map(|&i| ms[i]).collect();
        let Ok(refined) = kabsch(&iq, &im) else { break };
        let next = inlier_indices(&refined, &qs, &ms, thr_sq);
        pose = refined;
        count = next.len();
        if next == inliers {
            break;
        }
        inliers = next;
    }
    Ok(RegistrationResult {
        pose,
        inlier_count: count,
        hypothesis_label: "ransac".into(),
        alignment_scd: scd(query, &apply_pose(model, &pose)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationParams {
    pub ransac: RansacParams,
    /// Feature neighbors per query point.
    pub k: usize,
    pub symmetry: SymmetryParams,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        RegistrationParams {
            ransac: RansacParams::default(),
            k: DEFAULT_K,
            symmetry: SymmetryParams::default(),
        }
    }
}

fn check_inputs(
    query: &PointCloud,
    query_features: &FeatureSet,
    model: &PointCloud,
    model_features: &FeatureSet,
) -> Result<()> {
    if query_features.len() != query.len() {
        return Err(Error::FeatureCountMismatch {
            expected: query.len(),
            found: query_features.len(),
        });
    }
    if model_features.len() != model.len() {
        return Err(Error::FeatureCountMismatch {
            expected: model.len(),
            found: model_features.len(),
        });
    }
    Ok(())
}

/// Plain feature kNN followed by RANSAC.
pub fn register_unconstrained(
    query: &PointCloud,
    query_features: &FeatureSet,
    model: &PointCloud,
    model_features: &FeatureSet,
    params: &RegistrationParams,
) -> Result<RegistrationResult> {
    check_inputs(query, query_features, model, model_features)?;
    let k = params.k.min(model.len());
    let corr = knn_match(query_features, model_features, k)?;
    let mut result = ransac_register(query, model, &corr, &params.ransac)?;
    result.hypothesis_label = UNCONSTRAINED.into();
    Ok(result)
}

/// Every hypothesis evaluated by [`symmetry_aware_register`]: one per class
/// mapping, in enumeration order, followed by the unconstrained one.
/// Mappings whose matching or RANSAC fails are left out. `model_split`
/// may carry a precomputed split of the model.
pub fn registration_hypotheses(
    query: &PointCloud,
    query_features: &FeatureSet,
    model: &PointCloud,
    model_features: &FeatureSet,
    g: usize,
    model_split: Option<&SymmetrySplit>,
    params: &RegistrationParams,
) -> Result<Vec<RegistrationResult>> {
    check_inputs(query, query_features, model, model_features)?;
    if g == 0 {
        return Err(Error::param("symmetry class count must be at least 1"));
    }
    let backup = register_unconstrained(query, query_features, model, model_features, params);
    if g == 1 {
        return backup.map(|r| vec![r]);
    }
    let qsplit = symmetry_split(query, query_features, g, &params.symmetry)?;
    let computed;
    let msplit = match model_split {
        Some(s) => {
            if s.len() != model.len() || s.classes() != g {
                return Err(Error::param("model split does not fit the model"));
            }
            s
        }
        None => {
            computed = symmetry_split(model, model_features, g, &params.symmetry)?;
            &computed
        }
    };
    let mappings = enumerate_mappings(g)?;
    let constrained: Vec<Option<RegistrationResult>> = mappings
        .par_iter()
        .map(|mapping| {
            let corr = constrained_match(
                query_features,
                model_features,
                &qsplit,
                msplit,
                mapping,
                params.k,
            )
            .ok()?;
            let mut r = ransac_register(query, model, &corr, &params.ransac).ok()?;
            r.hypothesis_label = mapping.label();
            Some(r)
        })
        .collect();
    let mut out: Vec<RegistrationResult> = constrained.into_iter().flatten().collect();
    match backup {
        Ok(r) => out.push(r),
        Err(e) if out.is_empty() => return Err(e),
        Err(_) => {}
    }
    Ok(out)
}

/// Registers under every class mapping plus the unconstrained back-up and
/// keeps the pose with the smallest single-direction Chamfer distance
/// from the query to the posed model. Earlier hypotheses win ties.
pub fn symmetry_aware_register(
    query: &PointCloud,
    query_features: &FeatureSet,
    model: &PointCloud,
    model_features: &FeatureSet,
    g: usize,
    params: &RegistrationParams,
) -> Result<RegistrationResult> {
    symmetry_aware_register_with_split(query, query_features, model, model_features, g, None, params)
}

pub fn symmetry_aware_register_with_split(
    query: &PointCloud,
    query_features: &FeatureSet,
    model: &PointCloud,
    model_features: &FeatureSet,
    g: usize,
    model_split: Option<&SymmetrySplit>,
    params: &RegistrationParams,
) -> Result<RegistrationResult> {
    let hyps = registration_hypotheses(
        query,
        query_features,
        model,
        model_features,
        g,
        model_split,
        params,
    )?;
    select_best(hyps).ok_or(Error::DegenerateCorrespondences)
}

/// Lowest `alignment_scd`, first on ties.
pub fn select_best(hypotheses: Vec<RegistrationResult>) -> Option<RegistrationResult> {
    let mut best: Option<RegistrationResult> = None;
    for h in hypotheses {
        if best.as_ref().is_none_or(|b| h.alignment_scd < b.alignment_scd) {
            best = Some(h);
        }
    }
    best
}

/// Geodesic angle between the two rotations, in radians.
pub fn rre(estimated: &Pose, ground_truth: &Pose) -> f64 {
    let m = estimated.rotation().transpose() * ground_truth.rotation();
    ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

pub fn rte(estimated: &Pose, ground_truth: &Pose) -> f64 {
    (estimated.translation() - ground_truth.translation()).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureSource;
    use crate::geometry::{random_rotation, rotation_z};
    use rand::Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
        (0..n)
            .map(|_| Point::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)))
            .collect()
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let t = Point::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
        Pose::new(random_rotation(rng), t).unwrap()
    }

    fn posed(pts: &[Point], pose: &Pose) -> Vec<Point> {
        pts.iter().map(|p| pose.transform_point(p)).collect()
    }

    fn cloud(id: &str, pts: Vec<Point>) -> PointCloud {
        PointCloud::new(id, pts).unwrap()
    }

    #[test]
    fn kabsch_identity_and_exact_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_points(&mut rng, 20);
        let id = kabsch(&m, &m).unwrap();
        assert!(rre(&id, &Pose::identity()) < 1e-7);
        assert!(rte(&id, &Pose::identity()) < 1e-12);

        let gt = Pose::new(rotation_z(FRAC_PI_2), Point::new(1.0, 2.0, 3.0)).unwrap();
        let est = kabsch(&posed(&m, &gt), &m).unwrap();
        assert!((est.rotation() - gt.rotation()).amax() < 1e-9);
        assert!(rte(&est, &gt) < 1e-9);
    }

    #[test]
    fn kabsch_output_is_a_proper_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let m = random_points(&mut rng, 10);
            let q = random_points(&mut rng, 10);
            let r = *kabsch(&q, &m).unwrap().rotation();
            assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kabsch_handles_reflection_case() {
        let m = vec![
            Point::new(1.0, 0.0, 0.0),
            Point::new(0.0, 1.0, 0.0),
            Point::new(0.0, 0.0, 1.0),
            Point::new(0.0, 0.0, 0.0),
        ];
        let q: Vec<Point> = m.iter().map(|p| Point::new(-p.x, p.y, p.z)).collect();
        let r = *kabsch(&q, &m).unwrap().rotation();
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kabsch_noisy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = rand_distr::Normal::new(0.0, 0.01).unwrap();
        for _ in 0..20 {
            let m = random_points(&mut rng, 100);
            let gt = random_pose(&mut rng);
            let q: Vec<Point> = posed(&m, &gt)
                .into_iter()
                .map(|p| p + Point::from_fn(|_, _| rng.sample(normal)))
                .collect();
            let est = kabsch(&q, &m).unwrap();
            assert!(rre(&est, &gt).to_degrees() < 1.0);
            assert!(rte(&est, &gt) < 0.02);
        }
    }

    #[test]
    fn kabsch_errors() {
        let line: Vec<Point> = (0..5).map(|i| Point::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(kabsch(&line, &line), Err(Error::DegenerateCorrespondences)));
        let same = vec![Point::new(1.0, 1.0, 1.0); 4];
        assert!(matches!(kabsch(&same, &same), Err(Error::DegenerateCorrespondences)));
        assert!(kabsch(&line[..2], &line[..2]).is_err());
        assert!(kabsch(&line[..4], &line[..3]).is_err());
    }

    fn outlier_instance(rng: &mut ChaCha8Rng, n: usize, outlier_frac: f64) -> (PointCloud, PointCloud, Vec<Correspondence>, Pose) {
        let m = random_points(rng, n);
        let gt = random_pose(rng);
        let q = posed(&m, &gt);
        let corr = (0..n)
            .map(|i| {
                if rng.random::<f64>() < outlier_frac {
                    Correspondence::new(i, rng.random_range(0..n))
                } else {
                    Correspondence::new(i, i)
                }
            })
            .collect();
        (cloud("q", q), cloud("m", m), corr, gt)
    }

    #[test]
    fn ransac_outlier_free_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (q, m, corr, gt) = outlier_instance(&mut rng, 200, 0.0);
        let r = ransac_register(&q, &m, &corr, &RansacParams::default()).unwrap();
        assert_eq!(r.inlier_count, corr.len());
        assert!(rre(&r.pose, &gt) < 1e-7);
        assert!(rte(&r.pose, &gt) < 1e-9);
        assert!(r.alignment_scd < 1e-12);
    }

    #[test]
    fn ransac_with_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ok = 0;
        for trial in 0..20 {
            let (q, m, corr, gt) = outlier_instance(&mut rng, 500, 0.4);
            let params = RansacParams {
                seed: trial,
                ..RansacParams::default()
            };
            let r = ransac_register(&q, &m, &corr, &params).unwrap();
            if rre(&r.pose, &gt).to_degrees() <= 1.0 && rte(&r.pose, &gt) <= 0.01 {
                ok += 1;
            }
        }
        assert!(ok >= 19, "{ok}/20");
    }

    #[test]
    fn ransac_deterministic_across_thread_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (q, m, corr, _) = outlier_instance(&mut rng, 300, 0.7);
        let params = RansacParams {
            iterations: 2000,
            seed: 11,
            ..RansacParams::default()
        };
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| ransac_register(&q, &m, &corr, &params).unwrap())
        };
        let a = run(1);
        assert_eq!(a, run(4));
        assert_eq!(a, run(1));
    }

    #[test]
    fn ransac_more_consistent_pairs_never_lower_inlier_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for seed in 0..10 {
            let (q, m, corr, _) = outlier_instance(&mut rng, 200, 0.6);
            let params = RansacParams {
                iterations: 3000,
                seed,
                ..RansacParams::default()
            };
            let base = ransac_register(&q, &m, &corr, &params).unwrap();
            let mut more = corr.clone();
            more.extend((0..50).map(|i| Correspondence::new(i, i)));
            let richer = ransac_register(&q, &m, &more, &params).unwrap();
            assert!(richer.inlier_count >= base.inlier_count);
        }
    }

    #[test]
    fn ransac_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (q, m, corr, _) = outlier_instance(&mut rng, 10, 0.0);
        assert!(matches!(
            ransac_register(&q, &m, &corr[..2], &RansacParams::default()),
            Err(Error::TooFewCorrespondences(2))
        ));
        let bad = vec![Correspondence::new(0, 0), Correspondence::new(1, 1), Correspondence::new(2, 99)];
        assert!(ransac_register(&q, &m, &bad, &RansacParams::default()).is_err());
    }

    #[test]
    fn ransac_zero_inliers_still_returns_a_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (q, m, _, _) = outlier_instance(&mut rng, 50, 0.0);
        let corr: Vec<_> = (0..50).map(|i| Correspondence::new(i, (i * 7 + 3) % 50)).collect();
        let params = RansacParams {
            iterations: 50,
            inlier_threshold: 1e-9,
            ..RansacParams::default()
        };
        let r = ransac_register(&q, &m, &corr, &params).unwrap();
        assert_eq!(r.inlier_count, 0);
    }

    #[test]
    fn metric_unit_cases() {
        let id = Pose::identity();
        let rz = |a: f64| Pose::new(rotation_z(a), Point::zeros()).unwrap();
        assert_eq!(rre(&id, &id), 0.0);
        assert!((rre(&rz(FRAC_PI_2), &id) - FRAC_PI_2).abs() < 1e-12);
        assert!((rre(&rz(PI), &id) - PI).abs() < 1e-12);
        let p = |x, y, z| Pose::from_translation(Point::new(x, y, z));
        assert_eq!(rte(&p(1.0, 0.0, 0.0), &p(0.0, 0.0, 0.0)), 1.0);
        assert_eq!(rte(&p(1.0, 2.0, 2.0), &id), 3.0);
        assert_eq!(rte(&p(0.5, 0.5, 0.5), &p(0.5, 0.5, 0.5)), 0.0);
    }

    #[test]
    fn rre_symmetric_and_left_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..100 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let c = Pose::new(random_rotation(&mut rng), Point::zeros()).unwrap();
            assert!((rre(&a, &b) - rre(&b, &a)).abs() < 1e-9);
            assert!((rre(&c.compose(&a), &c.compose(&b)) - rre(&a, &b)).abs() < 1e-7);
        }
    }

    /// Mirror-symmetric cloud (x -> -x) with features depending on |x|.
    fn symmetric_instance(seed: u64, n_half: usize) -> (PointCloud, FeatureSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half: Vec<Point> = (0..n_half)
            .map(|_| Point::new(rng.random_range(0.05..0.5), rng.random_range(-0.4..0.4), rng.random_range(-0.3..0.3)))
            .collect();
        let mut pts = half.clone();
        pts.extend(half.iter().map(|p| Point::new(-p.x, p.y, p.z)));
        let feats: Vec<f64> = pts
            .iter()
            .flat_map(|p| {
                let a = p.x.abs();
                [a, p.y, p.z, a * p.y, p.y * p.z, a * p.z, 1.0]
            })
            .collect();
        (cloud("sym", pts), FeatureSet::from_rows(&feats, 7, FeatureSource::External).unwrap())
    }

    fn quick_params(seed: u64) -> RegistrationParams {
        RegistrationParams {
            ransac: RansacParams {
                iterations: 1000,
                seed,
                ..RansacParams::default()
            },
            ..RegistrationParams::default()
        }
    }

    #[test]
    fn self_registration_is_exact() {
        let (c, f) = symmetric_instance(1, 150);
        let params = quick_params(3);
        let hyps = registration_hypotheses(&c, &f, &c, &f, 2, None, &params).unwrap();
        assert_eq!(hyps.len(), 3);
        assert_eq!(hyps.last().unwrap().hypothesis_label, UNCONSTRAINED);
        let best = symmetry_aware_register(&c, &f, &c, &f, 2, &params).unwrap();
        assert!(best.alignment_scd < 1e-20);
        assert!(hyps.iter().all(|h| best.alignment_scd <= h.alignment_scd));
    }

    #[test]
    fn selection_is_argmin_and_dominates_backup() {
        for seed in 0..5 {
            let (c, f) = symmetric_instance(seed, 120);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let gt = random_pose(&mut rng);
            let q = apply_pose(&c, &gt);
            let params = quick_params(seed);
            let hyps = registration_hypotheses(&q, &f, &c, &f, 2, None, &params).unwrap();
            let min = hyps.iter().map(|h| h.alignment_scd).fold(f64::INFINITY, f64::min);
            let best = symmetry_aware_register(&q, &f, &c, &f, 2, &params).unwrap();
            assert_eq!(best.alignment_scd, min);
            let plain = register_unconstrained(&q, &f, &c, &f, &params).unwrap();
            assert!(best.alignment_scd <= plain.alignment_scd);
            for h in &hyps {
                let recomputed = scd(&q, &apply_pose(&c, &h.pose));
                assert!((recomputed - h.alignment_scd).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn single_class_degrades_to_unconstrained() {
        let (c, f) = symmetric_instance(2, 80);
        let params = quick_params(1);
        let a = symmetry_aware_register(&c, &f, &c, &f, 1, &params).unwrap();
        let b = register_unconstrained(&c, &f, &c, &f, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn equivariant_under_query_motion() {
        let (c, f) = symmetric_instance(4, 150);
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let q = apply_pose(&c, &random_pose(&mut rng));
        let t = random_pose(&mut rng);
        let q2 = apply_pose(&q, &t);
        let params = quick_params(9);
        let a = symmetry_aware_register(&q, &f, &c, &f, 2, &params).unwrap();
        let b = symmetry_aware_register(&q2, &f, &c, &f, 2, &params).unwrap();
        assert!((a.alignment_scd - b.alignment_scd).abs() <= 1e-6);
        assert!(rre(&t.compose(&a.pose), &b.pose) < 1e-6);
    }

    #[test]
    fn record_serializes_expected_fields() {
        let r = RegistrationResult {
            pose: Pose::new(rotation_z(FRAC_PI_2), Point::new(1.0, 2.0, 3.0)).unwrap(),
            inlier_count: 7,
            hypothesis_label: UNCONSTRAINED.into(),
            alignment_scd: 0.25,
        };
        let v: serde_json::Value = serde_json::to_value(r.record()).unwrap();
        assert_eq!(v["rotation"].as_array().unwrap().len(), 9);
        assert_eq!(v["translation"], serde_json::json!([1.0, 2.0, 3.0]));
        assert_eq!(v["inlier_count"], 7);
        assert_eq!(v["hypothesis_label"], "unconstrained");
        assert_eq!(v["alignment_scd"], 0.25);
    }
}
