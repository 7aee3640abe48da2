//! Deterministic image-augmentation ablation toolkit.
//!
//! The crate is `no_std` (it needs `alloc`) and carries all of the numerical
//! work: raster primitives, the four augmentation kernels and their seeded
//! samplers, a small reverse-mode autodiff engine with a linear-attention
//! vision transformer on top of it, the training protocol, the combination
//! sweep and GradCAM. File formats and the command line live in the `augsweep`
//! companion crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod augment;
pub mod data;
pub mod gradcam;
pub mod image;
mod math;
pub mod nn;
pub mod rng;
pub mod sweep;
pub mod tensor;
pub mod trainer;

