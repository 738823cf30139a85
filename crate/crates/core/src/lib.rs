//! Ground-truth crowd density maps from head-point annotations.
//!
//! Three generators are provided:
//!
//! 1. **Static** – a fixed-spread Gaussian per head, summed.
//! 2. **kNN** – spread proportional to the mean distance to the three nearest
//!    heads (k-d tree search), summed.
//! 3. **Content-aware** – exact nearest neighbor (brute force) bounds a window
//!    around each head, Chan-Vese segmentation finds the head region inside it,
//!    the Gaussian spread follows the segmented boundary, and kernels are
//!    accumulated exclusively (each pixel belongs to its nearest head) with
//!    per-head renormalization so every head contributes exactly unit mass.
//!
//! The [`eval`] module compares the generators and [`cli`] wires everything to
//! the `crowdmark` binary.

pub mod chanvese;
pub mod cli;
pub mod config;
pub mod densitymap;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod ingest;
pub mod kernels;
pub mod neighbors;

pub use chanvese::{ChanVeseParams, RegionMask, RoiWindow, SegmentationResult};
pub use config::{GenerationConfig, Method};
pub use densitymap::{generate, DensityMap, Generation};
pub use error::{Error, Result};
pub use geometry::Point;
pub use ingest::{HeadAnnotationSet, IntensityGrid, Scene};
pub use kernels::{KernelPatch, SigmaSpec};
pub use neighbors::{NeighborResult, PointIndex};
