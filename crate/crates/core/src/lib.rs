pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod gateway;
pub mod prompt;
pub mod report;
pub mod selection;
pub mod store;
pub mod sweep;
pub mod vectorspace;

pub use error::{Error, ErrorCategory, Result};
