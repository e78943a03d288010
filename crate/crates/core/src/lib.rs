//! Nonhomogeneous hidden Markov models of individual learning.
//!
//! Analysts move between ordered latent states driven by their learning
//! activities; completion times are negative binomial given the state.
//! The crate covers panel ingestion, simulation, the likelihood, adaptive
//! Metropolis-within-Gibbs estimation, a static baseline, decoding and
//! reports. The guide in `book/` walks through each piece.

pub mod baseline;
pub mod decode;
pub mod error;
pub mod hmm;
pub mod math;
pub mod mcmc;
pub mod panel;
pub mod provenance;
pub mod report;
pub mod simulate;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/likelihood.md")]
    mod likelihood {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
    #[doc = include_str!("../../../book/src/baseline.md")]
    mod baseline {}
    #[doc = include_str!("../../../book/src/decoding.md")]
    mod decoding {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
