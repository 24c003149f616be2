//! Point clouds, poses, and the distance measures built on them.
//!
//! All coordinates are `f64`. Point order within a [`PointCloud`] is fixed
//! at construction: correspondences refer to points by index.

mod distance;
pub mod kdtree;
mod pose;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use distance::{
    chamfer, classify_by_rank, matched_point_distance, positive_negative_sets, scd, scd_to_tree,
    similarity_matrix, CdThresholds, SimilarityMatrix,
};
pub use kdtree::KdTree;
pub use pose::{random_rotation, rotation_axis_angle, rotation_z, Pose, PoseRecord};

pub type Point = Vector3<f64>;

/// Squared Euclidean distance, summed x, y, z in that order.
///
/// Every nearest-neighbor routine goes through this function so accelerated
/// and exhaustive searches agree bit for bit.
#[inline]
pub fn dist_sq(a: &Point, b: &Point) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    id: String,
    points: Vec<Point>,
}

impl PointCloud {
    /// Fails on an empty point list or any non-finite coordinate.
    pub fn new(id: impl Into<String>, points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(index) = points
            .iter()
            .position(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()))
        {
            return Err(Error::NonFinitePoint { index });
        }
        Ok(PointCloud {
            id: id.into(),
            points,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false: construction rejects empty clouds.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point {
        let sum = self.points.iter().fold(Point::zeros(), |acc, p| acc + p);
        sum / self.points.len() as f64
    }

    pub fn subset(&self, indices: &[usize]) -> Result<PointCloud> {
        let pts = indices
            .iter()
            .map(|&i| {
                self.points.get(i).copied().ok_or(Error::IndexOutOfBounds {
                    index: i,
                    len: self.points.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        PointCloud::new(self.id.clone(), pts)
    }

    fn map_points(&self, f: impl Fn(&Point) -> Point) -> PointCloud {
        PointCloud {
            id: self.id.clone(),
            points: self.points.iter().map(f).collect(),
        }
    }

    /// Pose that maps the unit-size canonical frame onto this cloud:
    /// translation = centroid, scale = bounding-sphere diameter about the
    /// centroid. A cloud with zero spread gets scale 1.
    pub fn normalization_pose(&self) -> Pose {
        let c = self.centroid();
        let radius_sq = self
            .points
            .iter()
            .map(|p| dist_sq(p, &c))
            .fold(0.0f64, f64::max);
        let diameter = 2.0 * radius_sq.sqrt();
        let scale = if diameter > 1e-12 { diameter } else { 1.0 };
        Pose::with_scale(nalgebra::Matrix3::identity(), c, scale)
            .expect("positive scale and identity rotation")
    }

    /// Centered at the centroid and scaled to unit bounding diameter.
    pub fn normalized(&self) -> (PointCloud, Pose) {
        let pose = self.normalization_pose();
        (to_ncc(self, &pose), pose)
    }
}

/// Index pair linking a query point to a model point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Correspondence {
    pub query: usize,
    pub model: usize,
}

impl Correspondence {
    pub fn new(query: usize, model: usize) -> Self {
        Correspondence { query, model }
    }
}

/// Maps each point to `scale * R * x + p`, keeping order and id.
pub fn apply_pose(cloud: &PointCloud, pose: &Pose) -> PointCloud {
    cloud.map_points(|p| pose.transform_point(p))
}

/// Expresses a cloud in its canonical frame: `s^-1 * R^T * (x - p)`.
pub fn to_ncc(cloud: &PointCloud, annotated_pose: &Pose) -> PointCloud {
    cloud.map_points(|p| annotated_pose.inverse_transform_point(p))
}
