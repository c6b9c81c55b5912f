//! AES-256 with entropy-whitened round keys.
//!
//! The pipeline runs from raw bits ([`entropy_source`]) through debiasing and
//! condensation ([`conditioning`]) under online health monitoring
//! ([`health`]) to epoch key material ([`qe_schedule`]). Epochs are managed
//! and erased by [`lifecycle`], and messages are sealed by [`container`].
//! [`stats_suite`] evaluates randomness offline.

pub mod aes_core;
pub mod bits;
pub mod conditioning;
pub mod container;
pub mod entropy_source;
pub mod error;
pub mod health;
pub mod lifecycle;
pub mod qe_schedule;
pub mod stats_suite;

pub use bits::BitBuf;
pub use error::{Error, Result};
