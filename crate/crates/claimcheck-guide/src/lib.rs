//! The book under `book/` cannot run its own code samples, so this crate
//! includes every chapter as module documentation and lets `cargo test
//! --doc` execute the snippets. One module per chapter keeps test failures
//! traceable to their source file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/verdict-scales.md")]
pub mod verdict_scales {}

#[doc = include_str!("../../../book/src/verification-loop.md")]
pub mod verification_loop {}

#[doc = include_str!("../../../book/src/searching.md")]
pub mod searching {}

#[doc = include_str!("../../../book/src/datasets.md")]
pub mod datasets {}

#[doc = include_str!("../../../book/src/scoring.md")]
pub mod scoring {}

#[doc = include_str!("../../../book/src/running-experiments.md")]
pub mod running_experiments {}

#[doc = include_str!("../../../book/src/file-formats.md")]
pub mod file_formats {}
