//! Desk-scale laboratory for training class-conditional GANs with a gradual
//! unconditional-to-conditional transition, plus the metrics used to detect
//! conditioning-induced mode collapse (FID, KID, precision/recall, class-wise
//! variants and ground-truth mode coverage).
//!
//! Module map:
//!
//! - [`autodiff`]: dense tensors, a reverse-mode tape and the Adam update.
//! - [`schedule`]: the linear transition weight and its timeline.
//! - [`nets`]: generator with additive class injection and a two-headed
//!   discriminator.
//! - [`objective`]: non-saturating losses combined across the two heads.
//! - [`data`]: synthetic labeled mixtures with known mode centers.
//! - [`metrics`]: distribution distances and coverage diagnostics.
//! - [`harness`]: training loop, ablation modes, sweeps, checkpoints.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nets;
pub mod objective;
pub mod schedule;

pub use error::{Error, Result};
