//! Every Rust listing in `book/src` compiles and runs as a doc-test of this
//! crate, one module per chapter, so a failure names its chapter.

#[doc = include_str!("../../../book/src/overview.md")]
pub mod overview {}

#[doc = include_str!("../../../book/src/network.md")]
pub mod network {}

#[doc = include_str!("../../../book/src/traffic.md")]
pub mod traffic {}

#[doc = include_str!("../../../book/src/dispersion.md")]
pub mod dispersion {}

#[doc = include_str!("../../../book/src/functionals.md")]
pub mod functionals {}

#[doc = include_str!("../../../book/src/optimize.md")]
pub mod optimize {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

#[doc = include_str!("../../../book/src/acceptance.md")]
pub mod acceptance {}
