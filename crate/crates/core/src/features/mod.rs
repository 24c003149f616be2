//! Per-point local descriptors and correspondence generation.

mod fpfh;
mod matching;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::crsf;

pub use fpfh::{extract_fpfh, FpfhParams, FPFH_DIM};
pub use matching::{
    extract_pairs, k_nearest_rows, knn_match, sample_negative_pairs, DEFAULT_K, DEFAULT_PAIR_TAU,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSource {
    Fpfh,
    External,
}

/// Row-major `N x C` descriptor matrix with unit-length rows, stored as f32.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    data: Vec<f32>,
    rows: usize,
    dim: usize,
    source: FeatureSource,
}

/// Deviation from unit length beyond which ingested rows are re-normalized.
const RENORMALIZE_TOL: f64 = 1e-4;

impl FeatureSet {
    /// Builds a feature set from raw rows, normalizing each to unit length.
    pub fn from_rows(data: &[f64], dim: usize, source: FeatureSource) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::param(format!(
                "feature data of length {} is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        let rows = data.len() / dim;
        let mut out = Vec::with_capacity(data.len());
        for (r, row) in data.chunks_exact(dim).enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteFeature { row: r });
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::param(format!("feature row {r} is all zeros")));
            }
            out.extend(row.iter().map(|v| (v / norm) as f32));
        }
        Ok(FeatureSet {
            data: out,
            rows,
            dim,
            source,
        })
    }

    /// Wraps f32 rows, re-normalizing only rows whose length is off by more
    /// than 1e-4 so that already-normalized data keeps its exact bits.
    pub fn from_f32(data: Vec<f32>, dim: usize, source: FeatureSource) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::param(format!(
                "feature data of length {} is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        let mut data = data;
        for (r, row) in data.chunks_exact_mut(dim).enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteFeature { row: r });
            }
            let norm = row.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::param(format!("feature row {r} is all zeros")));
            }
            if (norm - 1.0).abs() > RENORMALIZE_TOL {
                for v in row.iter_mut() {
                    *v = (*v as f64 / norm) as f32;
                }
            }
        }
        let rows = data.len() / dim;
        Ok(FeatureSet {
            data,
            rows,
            dim,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source(&self) -> FeatureSource {
        self.source
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Rows reordered so that output row `k` is input row `order[k]`.
    pub fn select_rows(&self, order: &[usize]) -> FeatureSet {
        let mut data = Vec::with_capacity(order.len() * self.dim);
        for &i in order {
            data.extend_from_slice(self.row(i));
        }
        FeatureSet {
            data,
            rows: order.len(),
            dim: self.dim,
            source: self.source,
        }
    }
}

/// Squared L2 distance between two descriptor rows, accumulated in f64.
#[inline]
pub fn feature_dist_sq(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Reads externally computed features for a cloud of `expected_points`.
pub fn load_features(path: &Path, expected_points: usize) -> Result<FeatureSet> {
    let m = crsf::read_crsf(path)?;
    features_from_matrix(m, expected_points)
}

pub(crate) fn features_from_matrix(m: crsf::CrsfMatrix, expected_points: usize) -> Result<FeatureSet> {
    if m.rows != expected_points {
        return Err(Error::FeatureCountMismatch {
            expected: expected_points,
            found: m.rows,
        });
    }
    FeatureSet::from_f32(m.data, m.cols, FeatureSource::External)
}

pub fn write_features(path: &Path, features: &FeatureSet) -> Result<()> {
    crsf::write_crsf(path, features.rows, features.dim, &features.data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_normalized() {
        let f = FeatureSet::from_rows(&[3.0, 4.0, 0.0, 0.0, 0.0, 2.0], 3, FeatureSource::Fpfh).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f.row(0), &[0.6, 0.8, 0.0]);
        assert_eq!(f.row(1), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(FeatureSet::from_rows(&[0.0, 0.0], 2, FeatureSource::Fpfh).is_err());
        assert!(matches!(
            FeatureSet::from_rows(&[1.0, f64::INFINITY], 2, FeatureSource::Fpfh),
            Err(Error::NonFiniteFeature { row: 0 })
        ));
        assert!(FeatureSet::from_rows(&[1.0, 2.0, 3.0], 2, FeatureSource::Fpfh).is_err());
    }

    #[test]
    fn load_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.crsf");
        let f = FeatureSet::from_rows(&[1.0, 2.0, 2.0, -1.0, 0.5, 0.0], 3, FeatureSource::Fpfh).unwrap();
        write_features(&path, &f).unwrap();
        let back = load_features(&path, 2).unwrap();
        assert_eq!(back.as_slice(), f.as_slice());
        assert_eq!(back.source(), FeatureSource::External);

        let err = load_features(&path, 3).unwrap_err();
        assert!(err.to_string().contains("feature/point count mismatch"));

        let mut bytes = crsf::encode_crsf(1, 2, &[1.0, 0.0]).unwrap();
        bytes[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let err = load_features(&path, 1).unwrap_err();
        assert!(err.to_string().contains("non-finite feature"));
    }

    #[test]
    fn load_renormalizes_off_rows_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.crsf");
        crsf::write_crsf(&path, 2, 2, &[3.0, 4.0, 0.6, 0.8]).unwrap();
        let f = load_features(&path, 2).unwrap();
        assert!((f.row(0)[0] - 0.6).abs() < 1e-7 && (f.row(0)[1] - 0.8).abs() < 1e-7);
        assert_eq!(f.row(1), &[0.6f32, 0.8f32]);
    }
}
