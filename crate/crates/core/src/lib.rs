pub mod cli;
pub mod error;
pub mod filters;
pub mod fitting;
pub mod forward;
pub mod io;
pub mod noise;
pub mod optim;
pub mod oracle;
pub mod quad;
pub mod reconstruct;
pub mod roundtrip;
pub mod sequences;

pub use error::{Error, Result};
