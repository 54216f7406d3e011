//! Sequential fine-tuning harness.
//!
//! Trains task sequences through a checkpoint zoo, scores every run by the
//! area under its best-loss-so-far curve in log-update space, and compares
//! initialization strategies: independent fine-tuning, naive (most recent
//! checkpoint), selective (a gradient-boosted discriminator picks the
//! checkpoint) and an exhaustive oracle over all initialization chains.

pub mod backends;
pub mod metrics;
pub mod seed;
pub mod benchmark;
pub mod engine;
pub mod selector;
pub mod cli;
