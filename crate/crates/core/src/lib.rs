//! Federated recommendation over heterogeneous information networks.
//!
//! Clients publish their item interactions once through a two-stage locally
//! differentially private mechanism ([`perturb`]); the server rebuilds
//! meta-path neighborhoods from the perturbed graph ([`hin`]); clients then
//! jointly train a two-level attention graph model ([`hgnn`]) under the
//! round-based protocol in [`fed`]. [`verify`] checks the mechanism's privacy
//! ratios by exact enumeration.

pub mod error;
pub mod hin;
pub mod rng;
pub use error::{Error, Result};

pub mod config;
pub mod dataset;
pub mod eval;
pub mod fed;
pub mod hgnn;
pub mod perturb;
pub mod verify;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    mod graphs {}
    #[doc = include_str!("../../../book/src/publishing.md")]
    mod publishing {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/federation.md")]
    mod federation {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/privacy-checks.md")]
    mod privacy_checks {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
