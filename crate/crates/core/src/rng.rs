//! Seeded randomness.
//!
//! A [`SeedTree`] derives independent, reproducible generators from one root seed and a
//! string label, so adding a new consumer never shifts the stream seen by existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{Decode, Decoder, Encode, Encoder};
use crate::Result;

/// The generator used everywhere in the crate.
pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// A generator that depends only on `(root, label)`.
    pub fn rng(&self, label: &str) -> Rng {
        Rng::seed_from_u64(self.child_seed(label))
    }

    /// A sub-tree, e.g. one per trial of a repeated experiment.
    pub fn subtree(&self, label: &str) -> SeedTree {
        SeedTree::new(self.child_seed(label))
    }

    fn child_seed(&self, label: &str) -> u64 {
        // FNV-1a over the label, then a splitmix64 finaliser mixed with the root.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        splitmix64(self.root ^ splitmix64(h))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Encode for Rng {
    fn encode(&self, enc: &mut Encoder) {
        enc.bytes(&self.get_seed());
        enc.u64(self.get_stream());
        enc.u128(self.get_word_pos());
    }
}

impl Decode for Rng {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        let seed: [u8; 32] = dec
            .bytes()?
            .try_into()
            .map_err(|_| crate::Error::Decode("rng seed must be 32 bytes".into()))?;
        let mut rng = Rng::from_seed(seed);
        rng.set_stream(dec.u64()?);
        rng.set_word_pos(dec.u128()?);
        Ok(rng)
    }
}
