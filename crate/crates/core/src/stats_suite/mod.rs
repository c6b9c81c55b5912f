//! Offline randomness evaluation: ENT-style byte metrics and a NIST SP 800-22 subset.

pub mod ent;
pub mod nist;
pub mod special;

pub use ent::{ent_metrics, EntReport};
pub use nist::{nist_subset, NistBatchReport, NistTest, TestOutcome};
pub use special::chi_square_p;
