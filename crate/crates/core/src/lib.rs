//! Self-regularized low-light enhancement on the HSV value channel.
//!
//! An image is split into hue, saturation and value. Only the value plane is
//! enhanced: a U-Net predicts an inverse illumination `L`, the reflectance
//! `R = V * L` becomes the new brightness, and the original hue and
//! saturation are regrouped with it.
//!
//! Training needs only dark images. Each value plane is paired with a
//! randomly gamma-disturbed copy; both pass through the same network and four
//! non-reference losses (reflectance consistency, exposure control, spatial
//! structure and illumination smoothness) drive the optimisation.

// Links the system BLAS that backs ndarray's matrix products.
extern crate blas_src;

pub mod cli;
pub mod color;
pub mod disturbance;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod training;

pub use color::{hsv_to_rgb, regroup, rgb_to_hsv, HsvPlanes, Plane, RgbImage};
pub use error::{Error, Result};
