//! Independent reference implementations used to cross-check the library.
//!
//! These favour directness over speed and are only practical on small
//! inputs.

pub mod fusion;
pub mod metrics;
