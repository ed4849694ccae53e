//! Algorithmic core for domain-adaptive sim-to-real segmentation.
//!
//! Everything in this crate is pure computation over in-memory buffers:
//! the IoU-ranking blend curriculum, a reversible projection flow network
//! for style transfer, the Fourier low-frequency spectrum swap, confusion
//! matrix metrics, and a small encoder-decoder segmentation trainer.
//! File formats, image IO, and the experiment CLI live in the companion
//! `sim2real-tools` crate.
//!
//! The crate is `no_std` + `alloc`: no files, no threads, no clocks.
//! All randomness flows through explicitly seeded ChaCha streams, so every
//! operation is a pure function of its inputs and seeds.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod dataset;
pub mod error;
pub mod fda;
pub mod flow;
pub mod irb;
pub mod linalg;
pub mod math;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod seg;
pub mod style;
pub mod tensor;

pub use error::CoreError;
pub use tensor::Tensor;
