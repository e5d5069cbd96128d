//! Gaussian mixture occupancy maps: construction from posed depth images,
//! R-tree indexed storage, and single or batched occupancy queries.
//!
//! The construction pipeline per frame is scanline segmentation, segment
//! fusion into occupied Gaussians, free-basis generation (from segment rays or
//! directly from the occupied Gaussians), basis refinement, and fusion into
//! the global [`GaussianMap`]. Counters on every stage stand in for energy
//! measurements so that the optional optimizations can be compared.

pub mod camera;
pub mod config;
pub mod error;
pub mod free_space;
pub mod ingest;
pub mod map;
pub mod metrics;
pub mod pipeline;
pub mod quant;
pub mod query;
pub mod rtree;
pub mod segmentation;
pub mod storage;
pub mod types;

pub use camera::{unproject, CameraIntrinsics, Pose};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use map::GaussianMap;
pub use pipeline::{build_map, construct_frame, FrameReport, PipelineParams};
pub use query::{query_batch, query_single, QueryResult, Status};
pub use types::{bbox_of, gaussian_pdf, hellinger_sq, moment_merge, Aabb, Gaussian3, Kind, SymMat3, Vec3};
