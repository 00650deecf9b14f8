use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Counter-based uniforms keyed on `(seed, step, slot)`.
///
/// ChaCha's stream id carries the step and the word position carries the
/// slot, so any slot can be reproduced without replaying earlier draws.
#[derive(Debug, Clone)]
pub struct SlotRng {
    base: ChaCha8Rng,
}

const WORDS_PER_SLOT: u128 = 4;

impl SlotRng {
    pub fn new(seed: u64) -> Self {
        Self {
            base: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Two independent uniforms in `[0, 1)` for one slot.
    pub fn uniforms(&self, step: u64, slot: u32) -> [f64; 2] {
        let mut r = self.base.clone();
        r.set_stream(step);
        r.set_word_pos(u128::from(slot) * WORDS_PER_SLOT);
        [unit(r.next_u64()), unit(r.next_u64())]
    }
}

/// Top 53 bits scaled into `[0, 1)`.
fn unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
