//! The rendered guide, chapter by chapter. Each module's documentation
//! is the corresponding book chapter, so `cargo test --doc` compiles
//! and runs every code block the book shows — the guide cannot drift
//! out of sync with the API.

#[doc = include_str!("../../../book/src/01-overview.md")]
pub mod overview {}

#[doc = include_str!("../../../book/src/02-autodiff.md")]
pub mod autodiff {}

#[doc = include_str!("../../../book/src/03-models.md")]
pub mod models {}

#[doc = include_str!("../../../book/src/04-training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/05-densities.md")]
pub mod densities {}

#[doc = include_str!("../../../book/src/06-frechet.md")]
pub mod frechet_scoring {}

#[doc = include_str!("../../../book/src/07-harness.md")]
pub mod harness_guide {}
