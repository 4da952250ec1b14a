//! The guide in `book/` as doctests: each chapter becomes a module whose docs are the
//! chapter's Markdown, so `cargo test` runs every listing.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/copulas.md")]
pub mod copulas {}
#[doc = include_str!("../../../book/src/proposals.md")]
pub mod proposals {}
#[doc = include_str!("../../../book/src/filtering.md")]
pub mod filtering {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
#[doc = include_str!("../../../book/src/results.md")]
pub mod results {}
