//! The chapters of the guide in `book/`, compiled so that `cargo test` runs
//! their snippets.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/device.md")]
pub mod device {}

#[doc = include_str!("../../../book/src/leakage.md")]
pub mod leakage {}

#[doc = include_str!("../../../book/src/attack.md")]
pub mod attack {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

#[doc = include_str!("../../../README.md")]
pub mod readme {}
