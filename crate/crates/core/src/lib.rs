pub mod analysis;
pub mod averaging;
pub mod basis;
pub mod builtin;
pub mod classify;
pub mod decompose;
pub mod error;
pub mod markov;
pub mod model;
pub mod network;
pub mod poisson;
pub mod rational;
pub mod sim;
pub mod stats;
pub mod ensemble;

pub use error::{Error, Result};
pub use analysis::{analyze, Analysis};
