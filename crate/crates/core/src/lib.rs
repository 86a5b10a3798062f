pub mod bloch;
pub mod cauchy;
pub mod cell;
pub mod config;
pub mod error;
pub mod expr;
pub mod expsweep;
pub mod germ;
pub mod lattice;
pub mod linalg;
pub mod models;
pub mod oracle;
pub mod periodic_fn;
pub mod report;
pub mod validate;

pub use error::{Error, Result};
