//! Fast point feature histograms.
//!
//! Normals come from PCA over a radius neighborhood and are oriented away
//! from the cloud centroid. Each point gets a simplified histogram (SPFH) of
//! the three Darboux-frame angles to its neighbors, 11 bins per angle; the
//! final descriptor adds the distance-weighted SPFH of the neighbors.

use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FeatureSet, FeatureSource};
use crate::error::{Error, Result};
use crate::geometry::{KdTree, Point, PointCloud};

const BINS: usize = 11;
pub const FPFH_DIM: usize = 3 * BINS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FpfhParams {
    pub normal_radius: f64,
    pub feature_radius: f64,
}

impl Default for FpfhParams {
    fn default() -> Self {
        FpfhParams {
            normal_radius: 0.1,
            feature_radius: 0.2,
        }
    }
}

type Histogram = [f64; FPFH_DIM];

pub fn extract_fpfh(cloud: &PointCloud, params: &FpfhParams) -> Result<FeatureSet> {
    if cloud.len() < 5 {
        return Err(Error::param(format!(
            "FPFH needs at least 5 points, got {}",
            cloud.len()
        )));
    }
    let radii_ok = |r: f64| r.is_finite() && r > 0.0;
    if !radii_ok(params.normal_radius) || !radii_ok(params.feature_radius) {
        return Err(Error::param("FPFH radii must be positive"));
    }
    let pts = cloud.points();
    let tree = KdTree::new(pts);
    let centroid = cloud.centroid();

    let normals: Vec<Option<Point>> = pts
        .par_iter()
        .map(|p| estimate_normal(&tree, pts, p, params.normal_radius, &centroid))
        .collect();

    let neighborhoods: Vec<Vec<usize>> = (0..pts.len())
        .into_par_iter()
        .map(|i| {
            tree.within(&pts[i], params.feature_radius)
                .into_iter()
                .filter(|&j| j != i && normals[j].is_some() && pts[j] != pts[i])
                .collect()
        })
        .collect();

    // a point is usable when it has a normal and at least 3 points
    // (itself included) in its feature neighborhood
    let usable: Vec<bool> = (0..pts.len())
        .map(|i| normals[i].is_some() && neighborhoods[i].len() + 1 >= 3)
        .collect();

    let spfh: Vec<Option<Histogram>> = (0..pts.len())
        .into_par_iter()
        .map(|i| usable[i].then(|| simplified_histogram(pts, &normals, i, &neighborhoods[i])))
        .collect();

    let rows: Vec<Histogram> = (0..pts.len())
        .into_par_iter()
        .map(|i| match &spfh[i] {
            Some(own) => combine(pts, &spfh, i, own, &neighborhoods[i]),
            None => [1.0; FPFH_DIM],
        })
        .collect();

    let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    FeatureSet::from_rows(&flat, FPFH_DIM, FeatureSource::Fpfh)
}

fn estimate_normal(
    tree: &KdTree,
    pts: &[Point],
    p: &Point,
    radius: f64,
    centroid: &Point,
) -> Option<Point> {
    let nbrs = tree.within(p, radius);
    if nbrs.len() < 3 {
        return None;
    }
    let mean = nbrs.iter().fold(Point::zeros(), |a, &j| a + pts[j]) / nbrs.len() as f64;
    let mut cov = Matrix3::zeros();
    for &j in &nbrs {
        let d = pts[j] - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let n: Point = eig.eigenvectors.column(eig.eigenvalues.imin()).into_owned();
    let norm = n.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return None;
    }
    let mut n = n / norm;
    let out = p - centroid;
    let side = n.dot(&out);
    let tol = 1e-12 * out.norm().max(1.0);
    if side < -tol {
        n = -n;
    } else if side.abs() <= tol {
        // normal tangent to the centroid direction: pick the sign that makes
        // the largest component positive
        if n[n.iamax()] < 0.0 {
            n = -n;
        }
    }
    Some(n)
}

/// Darboux-frame angle triple `(alpha, phi, theta)` as in PCL's
/// `computePairFeatures`; `None` when the frame is undefined.
fn pair_features(p1: &Point, n1: &Point, p2: &Point, n2: &Point) -> Option<(f64, f64, f64)> {
    let mut dp = p2 - p1;
    let len = dp.norm();
    if len == 0.0 {
        return None;
    }
    let a1 = n1.dot(&dp) / len;
    let a2 = n2.dot(&dp) / len;
    let (u, other, f3) = if a1.abs().acos() > a2.abs().acos() {
        dp = -dp;
        (n2, n1, -a2)
    } else {
        (n1, n2, a1)
    };
    let v = dp.cross(u);
    let vn = v.norm();
    if vn == 0.0 {
        return None;
    }
    let v = v / vn;
    let w = u.cross(&v);
    let f2 = v.dot(other);
    let f1 = w.dot(other).atan2(u.dot(other));
    Some((f1, f2, f3))
}

fn bin(value: f64, lo: f64, hi: f64) -> usize {
    let b = (BINS as f64 * (value - lo) / (hi - lo)).floor();
    b.clamp(0.0, (BINS - 1) as f64) as usize
}

fn simplified_histogram(
    pts: &[Point],
    normals: &[Option<Point>],
    i: usize,
    nbrs: &[usize],
) -> Histogram {
    let mut h = [0.0; FPFH_DIM];
    let n1 = normals[i].expect("usable point has a normal");
    let mut count = 0usize;
    for &j in nbrs {
        let n2 = normals[j].expect("neighbors are filtered to points with normals");
        if let Some((f1, f2, f3)) = pair_features(&pts[i], &n1, &pts[j], &n2) {
            h[bin(f1, -std::f64::consts::PI, std::f64::consts::PI)] += 1.0;
            h[BINS + bin(f2, -1.0, 1.0)] += 1.0;
            h[2 * BINS + bin(f3, -1.0, 1.0)] += 1.0;
            count += 1;
        }
    }
    if count == 0 {
        return [100.0 / BINS as f64; FPFH_DIM];
    }
    let scale = 100.0 / count as f64;
    h.iter_mut().for_each(|v| *v *= scale);
    h
}

/// Own SPFH plus the inverse-distance-weighted neighbor SPFHs, with each
/// weighted sub-histogram rescaled to sum 100.
fn combine(
    pts: &[Point],
    spfh: &[Option<Histogram>],
    i: usize,
    own: &Histogram,
    nbrs: &[usize],
) -> Histogram {
    let mut acc = [0.0; FPFH_DIM];
    for &j in nbrs {
        if let Some(h) = &spfh[j] {
            let w = 1.0 / (pts[i] - pts[j]).norm();
            for (a, v) in acc.iter_mut().zip(h.iter()) {
                *a += w * v;
            }
        }
    }
    let mut out = *own;
    for part in 0..3 {
        let range = part * BINS..(part + 1) * BINS;
        let total: f64 = acc[range.clone()].iter().sum();
        if total > 0.0 {
            for k in range {
                out[k] += acc[k] * 100.0 / total;
            }
        }
    }
    out
}
