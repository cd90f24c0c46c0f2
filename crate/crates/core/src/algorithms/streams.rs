use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose of a draw inside one round of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// Outer-objective sample; index 1 is the optional second draw.
    Outer(u32),
    /// Level sample: index 0 is the gradient/cross draw, `1..=b` the Hessians.
    Level { level: u32, index: u32 },
    /// Inner-loop step of a double-loop baseline.
    Inner(u32),
}

/// Words reserved per slot: `2^24`, far above what one oracle call draws.
const WINDOW_BITS: u32 = 24;
const WINDOW_MASK: u128 = (1 << WINDOW_BITS) - 1;

impl Slot {
    fn code(self) -> u128 {
        match self {
            Slot::Outer(i) => i as u128,
            Slot::Level { level, index } => ((1 + level as u128) << 24) | (index as u128 & WINDOW_MASK),
            Slot::Inner(i) => (1u128 << 43) | i as u128,
        }
    }
}

/// Counter-based random streams keyed by `(seed, agent, round, slot)`.
///
/// Each agent owns a ChaCha key derived from `(seed, agent)`; the round picks
/// the ChaCha stream and the slot picks a disjoint 2²⁴-word window in it (the
/// ChaCha word counter has 68 bits, leaving 44 bits for slot codes).
/// Adding agents never perturbs the draws of existing ones.
#[derive(Debug, Clone)]
pub struct Streams {
    keys: Vec<ChaCha8Rng>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Streams {
    pub fn new(seed: u64, agents: usize) -> Self {
        let keys = (0..agents as u64)
            .map(|k| ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(k.wrapping_add(0xA5A5)))))
            .collect();
        Streams { keys }
    }

    pub fn draw(&self, agent: usize, round: usize, slot: Slot) -> ChaCha8Rng {
        let mut rng = self.keys[agent].clone();
        rng.set_stream(round as u64);
        rng.set_word_pos(slot.code() << WINDOW_BITS);
        rng
    }
}
