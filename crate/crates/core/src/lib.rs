//! Two-stage removal of non-extreme salt-and-pepper noise.
//!
//! Stage one is a convolutional detector that predicts, per pixel, whether
//! the pixel was hit by an impulse of arbitrary (not necessarily 0/255)
//! value. The predicted noise map is thresholded and every flagged pixel is
//! forced to 0. Stage two is a single-channel DRUnet-style restoration
//! network trained to repair images corrupted by zero-valued dots.
//!
//! Everything runs on a small self-contained tensor engine with
//! reverse-mode gradients ([`tensor`]), first-order optimizers ([`optim`]),
//! the two training losses ([`loss`]), the impulse-noise synthesizer
//! ([`noise`]), the two network architectures ([`models`]), and a training /
//! inference / evaluation pipeline ([`pipeline`]). Grayscale images move in
//! and out through [`imageio`].

pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod gradcheck;
pub mod imageio;
pub mod loss;
pub mod models;
pub mod noise;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Graph, NodeId, Tensor};
