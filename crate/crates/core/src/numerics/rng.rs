//! Seeded, path-addressed random substreams.
//!
//! A stream is identified by a root seed plus a path of `(label, index)`
//! pairs. The path is hashed into a ChaCha8 key, so a stream depends only on
//! its address and never on how many draws other streams have made.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SeededRng {
    root_seed: u64,
    path: Vec<(String, u64)>,
}

impl SeededRng {
    pub fn new(root_seed: u64) -> Self {
        SeededRng {
            root_seed,
            path: Vec::new(),
        }
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn path(&self) -> &[(String, u64)] {
        &self.path
    }

    /// Child address `self / (label, index)`.
    pub fn derive(&self, label: &str, index: u64) -> SeededRng {
        let mut path = self.path.clone();
        path.push((label.to_owned(), index));
        SeededRng {
            root_seed: self.root_seed,
            path,
        }
    }

    /// Stable 64-bit digest of the full address.
    pub fn key(&self) -> u64 {
        let mut h = fnv1a(FNV_OFFSET, &self.root_seed.to_le_bytes());
        for (label, index) in &self.path {
            h = fnv1a(h, &(label.len() as u64).to_le_bytes());
            h = fnv1a(h, label.as_bytes());
            h = fnv1a(h, &index.to_le_bytes());
        }
        splitmix64(h)
    }

    /// Fresh generator positioned at the start of this substream.
    pub fn stream(&self) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        let mut state = self.key();
        for chunk in seed.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

/// Shorthand for `SeededRng::new(seed).derive(label, index).stream()`.
pub fn substream(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    SeededRng::new(seed).derive(label, index).stream()
}
