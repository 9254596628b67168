//! Domain-invariant component analysis: kernel-space transforms that shrink
//! the spread of domain mean embeddings while keeping the input–output
//! relationship, plus the downstream learners and synthetic generators used
//! to evaluate them.

pub mod dica;
pub mod domains;
pub mod downstream;
pub mod eigen;
pub mod error;
pub mod io;
pub mod kernels;
pub mod matrix;
pub mod synthdata;

pub use error::{Error, Result};
