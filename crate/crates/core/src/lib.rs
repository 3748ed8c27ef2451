//! Data-augmentation consistency (DAC) laboratory.
//!
//! Estimators that learn from augmented data either by stacking the
//! augmentations into the training set (DA-ERM) or by forcing the model to be
//! consistent across each sample's augmentations (DAC), together with the
//! closed-form risk calculators used to check them and seeded Monte Carlo
//! experiment runners.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod datagen;
pub mod estimators;
pub mod expansion;
pub mod experiments;
pub mod error;
pub mod matkit;
pub mod rng;
pub mod theory;
pub mod verify;

pub use error::{Error, Result};
