use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

/// Derives independent random streams from one root seed. A stream is named by a label
/// (experiment and grid point) and a trial index, so adding trials or grid points never shifts
/// the streams of existing ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedPlan {
    pub root: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: impl IntoIterator<Item = u8>, mut h: u64) -> u64 {
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedPlan {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn derive(&self, label: &str, trial: u64) -> u64 {
        let h = fnv1a(self.root.to_le_bytes(), FNV_OFFSET);
        let h = fnv1a(label.bytes().chain([0xff]), h);
        splitmix64(fnv1a(trial.to_le_bytes(), h))
    }

    pub fn rng(&self, label: &str, trial: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.derive(label, trial))
    }

    /// Fails if two of the named streams would share a seed.
    pub fn check_unique<'a>(&self, streams: impl IntoIterator<Item = (&'a str, u64)>) -> Result<()> {
        let mut seen = HashSet::new();
        for (label, trial) in streams {
            if !seen.insert(self.derive(label, trial)) {
                return Err(Error::Config(format!("seed collision at stream {label:?}, trial {trial}")));
            }
        }
        Ok(())
    }
}
