//! Deterministic random-number streams.
//!
//! Every unit of work (a replication, a split, a fold, a learner) draws from
//! a stream addressed by the root seed plus a path of labeled indices. The
//! stream seed is a hash of that address, so two streams with different
//! paths are independent, and the numbers a unit sees do not depend on
//! execution order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// A labeled position in the stream tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stream {
    root_seed: u64,
    path: Vec<(String, u64)>,
}

impl Stream {
    /// Stream at the root of the tree.
    pub fn root(seed: u64) -> Self {
        Stream {
            root_seed: seed,
            path: Vec::new(),
        }
    }

    /// Child stream one level down.
    pub fn child(&self, label: &str, index: u64) -> Self {
        let mut path = self.path.clone();
        path.push((label.to_string(), index));
        Stream {
            root_seed: self.root_seed,
            path,
        }
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn path(&self) -> &[(String, u64)] {
        &self.path
    }

    fn digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.root_seed.to_le_bytes());
        for (label, index) in &self.path {
            hasher.update((label.len() as u64).to_le_bytes());
            hasher.update(label.as_bytes());
            hasher.update(index.to_le_bytes());
        }
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        seed
    }

    /// Generator seeded from the hash of this stream's address.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.digest())
    }

    /// Plain integer seed derived from this stream's address, for nested
    /// components that are seeded by a u64.
    pub fn derive_seed(&self) -> u64 {
        u64::from_le_bytes(self.digest()[..8].try_into().unwrap())
    }
}
