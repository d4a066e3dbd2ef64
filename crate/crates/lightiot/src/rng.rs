//! Seeded deterministic randomness.
//!
//! One master seed drives a run; every entity and link derives its own
//! labeled stream, so adding a participant never perturbs the draws of
//! the others.

use crate::crypto::{digest_parts, IdBits};

/// SplitMix64 generator. Small, fast, and reproducible across platforms.
#[derive(Debug, Clone)]
pub struct DetRng {
    state: u64,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        DetRng { state: seed }
    }

    /// Derives an independent stream for `label` from the master seed.
    pub fn stream(master_seed: u64, label: &str) -> Self {
        let d = digest_parts(&[&master_seed.to_be_bytes(), label.as_bytes()]);
        DetRng {
            state: u64::from_be_bytes(d.0[..8].try_into().expect("digest is 32 bytes")),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Fresh 128-bit value (nonces, identities, secrets, pseudonyms).
    pub fn next_id(&mut self) -> IdBits {
        let mut out = [0u8; 16];
        out[..8].copy_from_slice(&self.next_u64().to_be_bytes());
        out[8..].copy_from_slice(&self.next_u64().to_be_bytes());
        IdBits(out)
    }

    /// Bernoulli draw with probability `p` in [0, 1].
    pub fn chance(&mut self, p: f64) -> bool {
        if p <= 0.0 {
            return false;
        }
        if p >= 1.0 {
            return true;
        }
        ((self.next_u64() >> 11) as f64 / (1u64 << 53) as f64) < p
    }

    /// Uniform draw in `[lo, hi]`.
    pub fn range(&mut self, lo: u64, hi: u64) -> u64 {
        debug_assert!(lo <= hi);
        let span = hi - lo + 1;
        lo + self.next_u64() % span
    }
}
