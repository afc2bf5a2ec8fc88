//! Fidelity, fidelity-deviation and success-probability trade-offs of
//! continuous-variable teleportation with a measurement-based noiseless
//! linear amplification (MB-NLA) filter on the Bell record.

pub mod ensemble;
pub mod error;
pub mod model;
pub mod oracle;
pub mod profile;
pub mod quadrature;
pub mod tradeoff;

pub use error::{Error, Result};
