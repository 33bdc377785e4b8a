//! Long-term single-object tracking with an ensemble of local trackers.
//!
//! An ensemble of N deformable-attention local trackers is spread over the
//! full frame. Each tracker searches a local region around its reference
//! position; the tracker that locates the target is *activated* and carries
//! temporal context (its reference position and an online target query) into
//! the next frame. When the target moves discontinuously, a tracker close to
//! the new location takes over and the lost tracker resets to its default
//! state. The crate contains the trainable model, a bipartite-matching
//! training loop, a deterministic synthetic world for data, a per-sequence
//! inference state machine, and the long-term tracking metrics used to
//! score results.

pub mod autograd;
pub mod cli;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod features;
pub mod geometry;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod runtime;
pub mod temporal;
pub mod training;
pub mod world;


pub use error::{Error, Result};
pub use geometry::{BBox, CornerBox, Point2};

