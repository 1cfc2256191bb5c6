//! Stereo pose estimation for a three-circle planar marker.
//!
//! The pipeline has three stages: a convolutional detector locates the three
//! circle centers at pixel accuracy in a downscaled view and classifies their
//! IDs; a lightweight encoder-decoder segments each center's ellipse in a
//! full-resolution patch so an ellipse fit recovers the center at sub-pixel
//! accuracy; DLT triangulation and a three-point frame construction turn the
//! stereo correspondences into a rigid pose.
//!
//! The crate also ships a classical baseline detector (threshold, contours,
//! concentricity, ellipse fit, epipolar matching), a synthetic stereo
//! renderer with analytic ground truth for every stage, and the evaluation
//! experiments used by the acceptance suite. See the `examples/` directory
//! for one runnable program per capability, and the `markerpose` binary for
//! the batch CLI.

pub mod error;
pub mod linalg;
pub mod tensor;

pub use error::{Error, Result};

/// Entry point used by the `markerpose` binary. Returns the process exit
/// code: 0 success, 1 usage, 2 data/validation, 3 numerical failure.
pub fn run_cli() -> i32 {
    // Placeholder until the cli module lands.
    eprintln!("cli not wired yet");
    1
}
