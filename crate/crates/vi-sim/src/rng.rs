//! Deterministic, order-independent random number streams.
//!
//! A [`RngStream`] is a small piece of seed material. Substreams are derived
//! by mixing a label into the state with an avalanche hash, so the stream a
//! work unit receives depends only on the labels along its derivation path,
//! never on the order work units run in. This is what keeps simulation output
//! byte-identical across thread counts.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seed material for a family of independent generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    state: u64,
}

impl RngStream {
    pub fn from_seed(seed: u64) -> Self {
        RngStream { state: splitmix64(seed) }
    }

    /// Derives the child stream for `label`. Distinct labels yield
    /// well-separated children; the same label always yields the same child.
    pub fn substream(&self, label: u64) -> Self {
        let mixed = splitmix64(self.state ^ splitmix64(label.wrapping_add(0xA076_1D64_78BD_642F)));
        RngStream { state: mixed }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.state)
    }
}

/// Finalizer from the splitmix64 generator; a 64-bit avalanche permutation.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
