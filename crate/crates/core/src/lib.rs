//! Category-level point cloud retrieval and symmetry-aware registration.
//!
//! Given a query cloud and a database of category models, the toolkit
//! retrieves the most similar model by global embedding and estimates the
//! rigid pose aligning it with the query. Correspondences come from local
//! feature matching, optionally constrained to symmetry classes found by
//! clustering; poses come from RANSAC over Kabsch fits, and competing
//! hypotheses are ranked by single-direction Chamfer distance.

pub mod error;
pub mod features;
pub mod harness;
pub mod geometry;
pub mod io;
pub mod registration;
pub mod retrieval;
pub mod symmetry;

pub use error::{Error, Result};
