//! Multi-label contrastive learning laboratory.
//!
//! Losses with exact analytic gradients through the tempered cosine, the
//! positive-pair gradient regularizer, finite-difference and closed-form
//! oracles, a synthetic long-tailed data generator, a small trainer and
//! linear-probe evaluation.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod losses;
pub mod numerics;
pub mod training;
pub mod verification;

pub use error::{Error, Result};
