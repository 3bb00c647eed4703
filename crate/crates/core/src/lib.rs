//! Structural VAR toolkit for the global crude-oil market.
//!
//! The pipeline runs ingestion ([`ingest`]) and data transforms ([`ts`]),
//! reduced-form estimation ([`var`]), recursive identification ([`ident`]),
//! bootstrap inference ([`boot`]), historical decomposition ([`hdecomp`]) and
//! second-stage distributed-lag regressions ([`stage2`]).

mod linalg;

pub mod boot;
pub mod hdecomp;
pub mod ident;
pub mod ingest;
pub mod stage2;
pub mod ts;
pub mod var;

pub use linalg::RCOND_MIN;
