//! Correlation power analysis of an AES-128 round register under FinFET and
//! NCFET power profiles.

pub mod aes;
pub mod cpa;
pub mod device;
pub mod error;
pub mod harness;
pub mod io;
pub mod power;
pub mod seed;

pub use error::{Error, Result};
