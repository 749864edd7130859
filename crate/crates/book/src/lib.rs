//! The guide in `book/` is plain mdbook. Its chapters are included here so
//! `cargo test --doc` runs every Rust snippet against the current library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/schemes.md")]
pub mod schemes {}
#[doc = include_str!("../../../book/src/calibration.md")]
pub mod calibration {}
#[doc = include_str!("../../../book/src/execution.md")]
pub mod execution {}
#[doc = include_str!("../../../book/src/cost-model.md")]
pub mod cost_model {}
#[doc = include_str!("../../../book/src/search.md")]
pub mod search {}
#[doc = include_str!("../../../book/src/analysis.md")]
pub mod analysis {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
