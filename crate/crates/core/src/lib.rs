//! Reference-aware language models.
//!
//! Three mixture models decide, token by token, whether to generate from a
//! vocabulary softmax or to point at something external:
//!
//! - [`recipe_model`] copies from an ingredient list,
//! - [`table_model`] points into a database table during a dialogue,
//! - [`coref_model`] refers back to entities already mentioned in a document.
//!
//! Everything runs on the small reverse-mode engine in [`numcore`]. The
//! [`corpus`] module reads and preprocesses data (and writes synthetic
//! fixtures), and [`harness`] trains, evaluates, decodes and exports
//! attention heat maps. The `examples/` directory has one runnable program
//! per capability.

pub mod coref_model;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod layers;
pub mod mixture;
pub mod numcore;
pub mod recipe_model;
pub mod table_model;
pub mod task;

pub use error::{Error, Result};

/// `<crate version>-g<git describe>` when built inside a git checkout.
pub const BUILD_ID: &str = env!("REFLM_BUILD_ID");
