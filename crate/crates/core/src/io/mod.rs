//! Point-cloud and feature file formats.

pub mod crsf;
mod ply;
mod xyz;

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

pub use crsf::{read_crsf, write_crsf, CrsfMatrix};
pub use ply::{ply_string, read_ply, write_ply, write_ply_with_labels};
pub use xyz::{read_xyz, write_xyz};

/// Reads a cloud, choosing the format by extension (`.ply`, else XYZ).
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    match extension(path).as_deref() {
        Some("ply") => read_ply(path),
        Some("xyz") | Some("txt") | Some("pts") => read_xyz(path),
        _ => Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "unknown point cloud extension (expected .ply or .xyz)".into(),
        }),
    }
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    match extension(path).as_deref() {
        Some("xyz") | Some("txt") | Some("pts") => write_xyz(path, cloud),
        _ => write_ply(path, cloud),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase())
}
