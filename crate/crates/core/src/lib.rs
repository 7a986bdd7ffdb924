pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluator;
mod math;
pub mod model;
pub mod optim;
pub mod params;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};

/// Hex-encoded SHA-256 digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
