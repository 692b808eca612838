//! `cgsc` is a compression codec for anchor-based Gaussian splatting scenes.
//!
//! An anchor scene is a point set where every point ("anchor") carries a
//! context feature vector, a scaling vector and a small matrix of offsets
//! that spawn the actual rendering primitives. Those attributes dominate
//! storage, and adjacent anchors are strongly correlated. This crate codes
//! them with a learned, autoregressive entropy model:
//!
//! 1. [`partition`] splits the anchors into `K` disjoint coarseness levels
//!    by bottom-up voxel quantization, with a binary search on the voxel
//!    scale so each level keeps a target fraction of the previous one. The
//!    construction yields a parent map from every anchor to a coarser-level
//!    representative in the same voxel.
//! 2. [`entropy`] models each attribute channel as a Gaussian convolved
//!    with a uniform quantization kernel. Per-level networks predict the
//!    Gaussian parameters and the bin width from a context built out of the
//!    anchor position, the already-decoded parent attributes, and a small
//!    integer-quantized hyperprior vector coded under a learned factorized
//!    density.
//! 3. [`coder`] is a bit-exact integer range coder that turns the predicted
//!    distributions into actual bytes, deterministically on every platform.
//! 4. [`codec`] frames everything — raw positions, offset masks, model
//!    weights, the hyperprior payload and one attribute payload per level —
//!    into a versioned, CRC-protected container, and decodes it back
//!    bit-exactly.
//! 5. [`train`] fits the entropy models to a given scene by minimizing the
//!    coded size with Adam, using uniform-noise quantization surrogates and
//!    hand-written analytic gradients.
//!
//! The [`cli`] module wires the pipeline into the `cgsc` binary; [`synth`]
//! generates deterministic test scenes. See the book under `book/` for a
//! guided tour, and `docs/` for the byte-exact file formats.

pub mod cli;
pub mod codec;
pub mod coder;
pub mod entropy;
pub mod error;
pub mod math;
pub mod partition;
pub mod scene;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
