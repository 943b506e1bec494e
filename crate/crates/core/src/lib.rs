pub mod acceptance;
pub mod batch;
pub mod bridge;
pub mod checkpoint;
pub mod config;
pub mod coupling;
pub mod data;
pub mod error;
pub mod eval;
pub mod io;
pub mod net;
pub mod sim;
pub mod uba;

pub use batch::SampleBatch;
pub use error::{Error, Result};

/// The guide's code blocks, compiled and run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/paths.md")]
    mod paths {}
    #[doc = include_str!("../../../book/src/couplings.md")]
    mod couplings {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/checks.md")]
    mod checks {}
}
