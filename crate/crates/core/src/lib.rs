mod codec;
pub mod encoding;
pub mod error;
pub mod feature_store;
pub mod prototypes;
pub mod retrieval;
pub mod fusion;
pub mod detection;
pub mod toybench;

pub use error::{Error, Result};
