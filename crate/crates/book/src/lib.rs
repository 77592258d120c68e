//! The guide in `book/src`, compiled as doc modules so `cargo test` runs
//! every Rust listing in it. mdbook cannot link against workspace crates,
//! so this crate does the testing instead.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/orientation.md")]
pub mod orientation {}
#[doc = include_str!("../../../book/src/augmentation.md")]
pub mod augmentation {}
#[doc = include_str!("../../../book/src/segmenters.md")]
pub mod segmenters {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/evolution.md")]
pub mod evolution {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
