//! Symmetry-aided segmentation and class-constrained matching.
//!
//! Objects with `G` symmetry classes (two per mirror plane) produce
//! near-identical local features on symmetric parts, which makes plain
//! feature matching ambiguous. The split below recovers the parts from
//! feature similarity alone: the feature neighbors of a sampled point
//! scatter over its symmetric copies, and clustering them spatially
//! yields centroids whose Voronoi cells separate the copies. Among all
//! sampled candidates the one with the most even part sizes wins.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{k_nearest_rows, FeatureSet};
use crate::geometry::{dist_sq, Correspondence, Point, PointCloud};

const KMEANS_MAX_ITERS: usize = 50;

/// Partition of a cloud's points into symmetry classes `0..classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetrySplit {
    assignment: Vec<usize>,
    classes: usize,
    centroids: Vec<[f64; 3]>,
    evenness: f64,
}

impl SymmetrySplit {
    /// Builds a split from per-point labels. Classes may be empty here;
    /// [`symmetry_split`] never returns one that is.
    pub fn new(assignment: Vec<usize>, classes: usize, centroids: Vec<Point>) -> Result<Self> {
        if classes == 0 || centroids.len() != classes {
            return Err(Error::param("centroid count must equal the class count"));
        }
        if let Some(&bad) = assignment.iter().find(|&&c| c >= classes) {
            return Err(Error::param(format!("class label {bad} out of range")));
        }
        let evenness = size_std(&class_sizes(&assignment, classes));
        Ok(SymmetrySplit {
            assignment,
            classes,
            centroids: centroids.iter().map(|c| [c.x, c.y, c.z]).collect(),
            evenness,
        })
    }

    /// Split from labels alone, centroids taken as class means (origin for
    /// an empty class).
    pub fn from_labels(cloud: &PointCloud, assignment: Vec<usize>, classes: usize) -> Result<Self> {
        if assignment.len() != cloud.len() {
            return Err(Error::param("label count differs from point count"));
        }
        let mut sums = vec![Point::zeros(); classes];
        let mut counts = vec![0usize; classes];
        for (p, &c) in cloud.points().iter().zip(&assignment) {
            if c >= classes {
                return Err(Error::param(format!("class label {c} out of range")));
            }
            sums[c] += p;
            counts[c] += 1;
        }
        let centroids = sums
            .iter()
            .zip(&counts)
            .map(|(s, &n)| if n > 0 { s / n as f64 } else { Point::zeros() })
            .collect();
        SymmetrySplit::new(assignment, classes, centroids)
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn centroids(&self) -> Vec<Point> {
        self.centroids.iter().map(|c| Point::new(c[0], c[1], c[2])).collect()
    }

    /// Standard deviation of the class sizes.
    pub fn evenness(&self) -> f64 {
        self.evenness
    }

    pub fn sizes(&self) -> Vec<usize> {
        class_sizes(&self.assignment, self.classes)
    }

    /// Point indices of each class, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.classes];
        for (i, &c) in self.assignment.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

fn class_sizes(assignment: &[usize], classes: usize) -> Vec<usize> {
    let mut sizes = vec![0; classes];
    for &c in assignment {
        sizes[c] += 1;
    }
    sizes
}

/// Population standard deviation.
fn size_std(sizes: &[usize]) -> f64 {
    let n = sizes.len() as f64;
    let mean = sizes.iter().sum::<usize>() as f64 / n;
    let var = sizes.iter().map(|&s| (s as f64 - mean).powi(2)).sum::<f64>() / n;
    var.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SymmetryParams {
    pub n_samples: usize,
    /// Feature neighbors per sample; `None` means `max(32, N / 20)`.
    pub k_neighbors: Option<usize>,
    pub seed: u64,
}

impl Default for SymmetryParams {
    fn default() -> Self {
        SymmetryParams {
            n_samples: 20,
            k_neighbors: None,
            seed: 0,
        }
    }
}

fn nearest_centroid(p: &Point, centroids: &[Point]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, q) in centroids.iter().enumerate() {
        let d = dist_sq(p, q);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// k-means with k-means++ seeding and at most 50 Lloyd iterations.
/// `pts` must hold at least `g` points.
pub fn kmeans<R: Rng + ?Sized>(pts: &[Point], g: usize, rng: &mut R) -> Vec<Point> {
    let mut centroids = Vec::with_capacity(g);
    centroids.push(pts[rng.random_range(0..pts.len())]);
    let mut d2: Vec<f64> = pts.iter().map(|p| dist_sq(p, &centroids[0])).collect();
    while centroids.len() < g {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = pts.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..pts.len())
        };
        let c = pts[next];
        for (d, p) in d2.iter_mut().zip(pts) {
            *d = d.min(dist_sq(p, &c));
        }
        centroids.push(c);
    }

    let mut labels = vec![usize::MAX; pts.len()];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (l, p) in labels.iter_mut().zip(pts) {
            let c = nearest_centroid(p, &centroids);
            if *l != c {
                *l = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![Point::zeros(); g];
        let mut counts = vec![0usize; g];
        for (&l, p) in labels.iter().zip(pts) {
            sums[l] += p;
            counts[l] += 1;
        }
        for c in 0..g {
            if counts[c] > 0 {
                centroids[c] = sums[c] / counts[c] as f64;
            }
        }
    }
    centroids
}

/// Splits a cloud into `g` symmetry classes.
///
/// For each of `n_samples` seeded sample points, the `k_neighbors` nearest
/// points in feature space (the sample included) are clustered into `g`
/// groups by their coordinates, and every cloud point is assigned to its
/// nearest cluster centroid. The candidate with the smallest standard
/// deviation of class sizes is returned; ties go to the earlier sample.
/// Candidates with an empty class are discarded.
pub fn symmetry_split(
    cloud: &PointCloud,
    features: &FeatureSet,
    g: usize,
    params: &SymmetryParams,
) -> Result<SymmetrySplit> {
    if g < 2 {
        return Err(Error::param(format!("symmetry class count must be >= 2, got {g}")));
    }
    if features.len() != cloud.len() {
        return Err(Error::FeatureCountMismatch {
            expected: cloud.len(),
            found: features.len(),
        });
    }
    if params.n_samples == 0 {
        return Err(Error::param("n_samples must be at least 1"));
    }
    let n = cloud.len();
    if g > n {
        return Err(Error::DegenerateSplit);
    }
    let k = params
        .k_neighbors
        .unwrap_or_else(|| (n / 20).max(32))
        .clamp(g, n);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let samples = index::sample(&mut rng, n, params.n_samples.min(n)).into_vec();
    let pts = cloud.points();

    let candidates: Vec<Option<(f64, Vec<usize>, Vec<Point>)>> = samples
        .par_iter()
        .enumerate()
        .map(|(s, &i)| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(s as u64 + 1);
            let neighborhood: Vec<Point> = k_nearest_rows(features.row(i), features, None, k)
                .into_iter()
                .map(|j| pts[j])
                .collect();
            let centroids = kmeans(&neighborhood, g, &mut rng);
            let labels: Vec<usize> = pts.iter().map(|p| nearest_centroid(p, &centroids)).collect();
            let sizes = class_sizes(&labels, g);
            if sizes.contains(&0) {
                return None;
            }
            Some((size_std(&sizes), labels, centroids))
        })
        .collect();

    let mut best: Option<(f64, Vec<usize>, Vec<Point>)> = None;
    for cand in candidates.into_iter().flatten() {
        if best.as_ref().is_none_or(|b| cand.0 < b.0) {
            best = Some(cand);
        }
    }
    let (_, labels, centroids) = best.ok_or(Error::DegenerateSplit)?;
    SymmetrySplit::new(labels, g, centroids)
}

/// A pairing of query classes with model classes: query class `c` is
/// matched against model class `permutation[c]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassMapping {
    permutation: Vec<usize>,
}

impl ClassMapping {
    pub fn new(permutation: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; permutation.len()];
        for &p in &permutation {
            if p >= permutation.len() || seen[p] {
                return Err(Error::param(format!("{permutation:?} is not a permutation")));
            }
            seen[p] = true;
        }
        Ok(ClassMapping { permutation })
    }

    pub fn identity(g: usize) -> Self {
        ClassMapping {
            permutation: (0..g).collect(),
        }
    }

    pub fn apply(&self, class: usize) -> usize {
        self.permutation[class]
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// Label such as `mapping[2,1]` (1-based model class per query class).
    pub fn label(&self) -> String {
        let parts: Vec<String> = self.permutation.iter().map(|p| (p + 1).to_string()).collect();
        format!("mapping[{}]", parts.join(","))
    }
}

/// All `g!` class mappings in lexicographic order, identity first.
pub fn enumerate_mappings(g: usize) -> Result<Vec<ClassMapping>> {
    if !(2..=4).contains(&g) {
        return Err(Error::param(format!("mapping enumeration supports 2..=4 classes, got {g}")));
    }
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(g);
    let mut used = vec![false; g];
    permute(g, &mut current, &mut used, &mut out);
    Ok(out)
}

fn permute(g: usize, current: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<ClassMapping>) {
    if current.len() == g {
        out.push(ClassMapping {
            permutation: current.clone(),
        });
        return;
    }
    for v in 0..g {
        if !used[v] {
            used[v] = true;
            current.push(v);
            permute(g, current, used, out);
            current.pop();
            used[v] = false;
        }
    }
}

/// Feature kNN where each query point only sees model points of the class
/// its own class maps to. Classes with fewer than `k` model points yield
/// all of them; an empty target class yields nothing.
pub fn constrained_match(
    query_features: &FeatureSet,
    model_features: &FeatureSet,
    query_split: &SymmetrySplit,
    model_split: &SymmetrySplit,
    mapping: &ClassMapping,
    k: usize,
) -> Result<Vec<Correspondence>> {
    let g = query_split.classes();
    if model_split.classes() != g || mapping.permutation().len() != g {
        return Err(Error::param("splits and mapping disagree on the class count"));
    }
    if query_features.dim() != model_features.dim() {
        return Err(Error::DimMismatch {
            left: query_features.dim(),
            right: model_features.dim(),
        });
    }
    if query_split.len() != query_features.len() || model_split.len() != model_features.len() {
        return Err(Error::param("split and feature sizes differ"));
    }
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    let members = model_split.members();
    if members.iter().all(|m| m.is_empty()) {
        return Err(Error::DegenerateSplit);
    }
    let rows: Vec<Vec<usize>> = (0..query_features.len())
        .into_par_iter()
        .map(|i| {
            let target = &members[mapping.apply(query_split.assignment()[i])];
            k_nearest_rows(query_features.row(i), model_features, Some(target), k)
        })
        .collect();
    Ok(rows
        .into_iter()
        .enumerate()
        .flat_map(|(i, js)| js.into_iter().map(move |j| Correspondence::new(i, j)))
        .collect())
}
