#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compat;
pub mod config;
pub mod domain;
pub mod error;
pub mod experiment;
pub mod fixtures;
pub mod learn;
pub mod oracle;
pub mod policies;
pub mod popgen;
pub mod sim;

pub use error::{Error, Result};
