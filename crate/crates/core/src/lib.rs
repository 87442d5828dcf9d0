//! Core library for tracklet-conditioned video generation.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`] — dense f64 tensors with tape-based reverse-mode autodiff,
//!   the seeded RNG all randomness flows through, and gradient checking.
//! * [`checkpoint`] — named-parameter store with a binary save/load format.
//! * [`geometry`] — normalized boxes, IoU, Fourier box embeddings, ROIAlign.
//! * [`conditioning`] — per-frame location tokens with instance identity.
//! * [`attention`] — self/cross attention plus the gated variants.
//! * [`enhancer`] — cross-frame instance feature cubes and motion tokens.
//! * [`diffusion`] — noise schedule, forward process, DDPM stepping, CFG.
//! * [`trackdata`] — annotation format, synthetic clip generator, patch codec,
//!   PPM frame I/O.
//! * [`denoiser`] — the conditional video denoiser, two-stage training and
//!   ancestral sampling.
//! * [`evalkit`] — blob detection, grounding metrics, Frechet video distance.
//! * [`gradsuite`] — registry of finite-difference checks across modules.

pub mod attention;
pub mod checkpoint;
pub mod conditioning;
pub mod denoiser;
pub mod diffusion;
pub mod enhancer;
pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod gradsuite;
pub mod tensor;
pub mod trackdata;

pub use error::{Error, Result};
pub use geometry::BoundingBox;
pub use tensor::{Rng, Tensor};
pub use trackdata::{ClipAnnotation, FrameBuffer, Tracklet};
