//! Named, splittable random streams.
//!
//! Every component that needs randomness receives a [`SeedStream`] derived
//! from the run seed by name. Derivation hashes the parent key together with
//! the child name, so adding a new consumer never shifts the numbers another
//! consumer sees. Streams are realised as ChaCha8 generators, which are
//! counter based and identical across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedStream {
    key: [u8; 32],
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"latent-control/root");
        h.update(seed.to_le_bytes());
        Self { key: h.finalize().into() }
    }

    /// Child stream identified by `name`.
    pub fn derive(&self, name: &str) -> Self {
        let mut h = Sha256::new();
        h.update(self.key);
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        Self { key: h.finalize().into() }
    }

    /// Child stream identified by an index (episodes, candidates, ...).
    pub fn derive_index(&self, index: u64) -> Self {
        let mut h = Sha256::new();
        h.update(self.key);
        h.update(b"#");
        h.update(index.to_le_bytes());
        Self { key: h.finalize().into() }
    }

    pub fn rng(&self) -> Rng {
        ChaCha8Rng::from_seed(self.key)
    }

    /// A 64-bit summary of the key, for logging and config hashes.
    pub fn fingerprint(&self) -> u64 {
        u64::from_le_bytes(self.key[..8].try_into().expect("8 bytes"))
    }
}
