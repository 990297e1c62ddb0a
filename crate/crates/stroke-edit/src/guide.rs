//! The book chapters, included as rustdoc so every code block in
//! `book/src/*.md` compiles and runs under `cargo test --doc`. mdBook and
//! rustdoc share the hidden-line convention (`# ` prefixes), so the same
//! sources render cleanly in the rendered guide and stay green in CI.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/data-generation.md")]
pub mod data_generation {}

#[doc = include_str!("../../../book/src/stroke-blending.md")]
pub mod stroke_blending {}

#[doc = include_str!("../../../book/src/thin-plate-splines.md")]
pub mod thin_plate_splines {}

#[doc = include_str!("../../../book/src/pre-transformation.md")]
pub mod pre_transformation {}

#[doc = include_str!("../../../book/src/losses.md")]
pub mod losses {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
