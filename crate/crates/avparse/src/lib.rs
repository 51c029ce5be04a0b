//! Joint reinforcement-learning label denoising for weakly-supervised
//! audio-visual video parsing.
//!
//! A Bernoulli keep/remove policy over per-modality event labels is trained
//! with a score-function policy gradient whose reward combines per-branch
//! validation F-scores of the parsing network with a soft agreement reward
//! against the original labels; the parsing network trains simultaneously on
//! the revised labels. The crate also ships the synthetic noisy-label dataset
//! generator, the segment/event evaluation protocol, and a CLI covering
//! dataset synthesis, training, evaluation, and convergence plots.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod denoiser;
pub mod error;
pub mod metrics;
pub mod optim;
pub mod plot;
pub mod rewards;
pub mod task;
pub mod trainer;
pub mod util;

pub use error::{Error, Result};
