//! Online optimization as feedback with robustness certificates.

pub mod certify;
pub mod cli;
pub mod error;
pub mod lmi;
pub mod numlin;
pub mod plants;
pub mod problem;
pub mod seed;
pub mod serde_ext;
pub mod sim;
pub mod uncertainty;
pub mod vi;

pub use error::{Error, Result};
