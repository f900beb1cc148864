use rand::SeedableRng;
use rand_xoshiro::Xoshiro256StarStar;

/// The engine's PRNG.
pub type EngineRng = Xoshiro256StarStar;

/// Independent generators for each consumer of randomness, all derived
/// from one seed. Each stream starts a fixed number of 2^128-step jumps
/// after the previous one, so they never overlap in practice.
#[derive(Clone, Debug)]
pub struct RngStreams {
    pub init: EngineRng,
    pub dropout: EngineRng,
    pub shuffle: EngineRng,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        let init = EngineRng::seed_from_u64(seed);
        let mut dropout = init.clone();
        dropout.jump();
        let mut shuffle = dropout.clone();
        shuffle.jump();
        Self {
            init,
            dropout,
            shuffle,
        }
    }
}

pub fn rng_from_seed(seed: u64) -> EngineRng {
    EngineRng::seed_from_u64(seed)
}
