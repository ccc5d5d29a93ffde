//! Graph-convolutional place classification.
//!
//! A nearest-neighbor teacher scores each view against every place class;
//! its reciprocal-rank vectors become node features of single-view (SVSL)
//! and multi-view (MVIL) scene graphs, which a two-layer graph
//! convolutional network classifies.
//!
//! Pipeline: [`synthworld`] (or JSON Lines ingestion) → [`geoclass`]
//! partition → [`teacher`] databases → [`scenegraph`] graphs → [`gcn`]
//! training → [`evalharness`] reports. [`cli`] wires it together.

pub mod cli;
pub mod error;
pub mod evalharness;
pub mod gcn;
pub mod geoclass;
pub mod io;
pub mod numkit;
pub mod pipeline;
pub mod scenegraph;
pub mod synthworld;
pub mod teacher;

pub use error::{Error, Result};
