//! Burst-aware learned local features for low-light imagery.
//!
//! The crate covers the full pipeline:
//!
//! * [`burstsynth`] — synthetic low-light robotic burst pairs with
//!   ground-truth flow maps,
//! * [`network`] — a fully convolutional joint detector/descriptor over an
//!   N-frame burst,
//! * [`losses`] — the self-supervised detection loss and the
//!   average-precision reliability loss,
//! * [`trainer`] — corpus ingestion and the deterministic training loop,
//! * [`extractor`] — multi-scale keypoint extraction,
//! * [`evalharness`] — matching accuracy, repeatability, trajectory error,
//!   and reconstruction statistics,
//! * [`interop`] — on-disk formats and the SfM text export.

pub mod burstsynth;
pub mod error;
pub mod evalharness;
pub mod extractor;
pub mod geometry;
pub mod image;
pub mod interop;
pub mod losses;
pub mod network;
pub mod rng;
pub mod texture;
pub mod trainer;

pub use error::{Error, Result};
