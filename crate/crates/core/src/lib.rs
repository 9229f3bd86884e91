//! Cascaded convolutional face detection.
//!
//! Three stage networks (proposal, refinement, output) are run coarse-to-fine
//! over an image pyramid to produce face boxes with five facial landmarks.
//! Everything is implemented from scratch: a small dense-tensor kernel with
//! per-layer backward passes, multi-task training with online hard-example
//! mining on synthetic data, a Haar/AdaBoost cascade baseline, and the
//! detection metrics used to compare the two.

pub mod tensor;
pub mod nets;
pub mod geometry;
pub mod imageio;
pub mod pipeline;
pub mod synth;
pub mod training;
pub mod haar;
pub mod eval;
