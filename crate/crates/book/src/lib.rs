//! The `book/` chapters and the README, compiled as documentation so that
//! every Rust snippet in them runs under `cargo test`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/normalization-family.md")]
pub mod normalization_family {}

#[doc = include_str!("../../../book/src/extended-batch-norm.md")]
pub mod extended_batch_norm {}

#[doc = include_str!("../../../book/src/gradients.md")]
pub mod gradients {}

#[doc = include_str!("../../../book/src/running-stats-and-fusion.md")]
pub mod running_stats_and_fusion {}

#[doc = include_str!("../../../book/src/mnist-benchmark.md")]
pub mod mnist_benchmark {}

#[doc = include_str!("../../../README.md")]
pub mod readme {}
