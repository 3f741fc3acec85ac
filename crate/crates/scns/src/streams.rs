//! Deterministic, splittable random-number streams.
//!
//! Algorithm `chacha12-boxmuller-v1`: a 64-bit master seed is expanded by
//! SplitMix64 into a 32-byte ChaCha12 key.  The path index selects the
//! ChaCha stream, and every (step, refinement, mode) tuple owns a fixed
//! four-word slot of that stream's keystream.  Two 64-bit words per slot
//! feed a Box-Muller transform.  Draws therefore depend only on
//! (seed, path, step, refinement, mode) and never on the spatial grid, so
//! trajectories at different resolutions can share their noise exactly.

use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};

/// Name recorded in run metadata.
pub const RNG_ALGORITHM: &str = "chacha12-boxmuller-v1";

/// SplitMix64 step, used for key expansion and test-field sub-seeding.
pub fn splitmix64(state: &mut u64) {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    *state = z ^ (z >> 31);
}

/// Expand a master seed into a ChaCha key.
pub fn master_key(seed: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    let mut s = seed;
    for chunk in key.chunks_mut(8) {
        splitmix64(&mut s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    key
}

/// Map two uniform 64-bit words to one standard normal draw.
pub fn box_muller(a: u64, b: u64) -> f64 {
    const SCALE: f64 = 1.0 / 9007199254740992.0; // 2^-53
    let u1 = ((a >> 11) + 1) as f64 * SCALE; // (0, 1]
    let u2 = (b >> 11) as f64 * SCALE; // [0, 1)
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// One standard normal draw from any word source.
pub fn standard_normal(rng: &mut impl RngCore) -> f64 {
    let a = rng.next_u64();
    let b = rng.next_u64();
    box_muller(a, b)
}

/// Identifies one refinement position inside a macro step.  The unrefined
/// step is `level = 0, index = 0`; halving a step twice yields
/// `level = 2, index = 0..4`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct SubStep {
    pub level: u8,
    pub index: u32,
}

/// Maximum number of step halvings honoured by the slot layout.
pub const MAX_HALVINGS: u8 = 8;

/// Keyed family of per-path Gaussian streams with random-access slots.
#[derive(Clone, Debug)]
pub struct NoiseStreams {
    key: [u8; 32],
    seed: u64,
}

impl NoiseStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            key: master_key(seed),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn word_pos(step: u64, sub: SubStep, mode: usize) -> u128 {
        debug_assert!(sub.level <= MAX_HALVINGS);
        debug_assert!((sub.index as u64) < (1u64 << MAX_HALVINGS));
        debug_assert!(mode < (1 << 20));
        ((step as u128) << 34)
            | ((sub.level as u128) << 30)
            | ((sub.index as u128) << 22)
            | ((mode as u128) << 2)
    }

    /// Unit normal draw for one (path, step, refinement, mode) tuple.
    pub fn normal(&self, path: u64, step: u64, sub: SubStep, mode: usize) -> f64 {
        let mut rng = ChaCha12Rng::from_seed(self.key);
        rng.set_stream(path);
        rng.set_word_pos(Self::word_pos(step, sub, mode));
        standard_normal(&mut rng)
    }

    /// Unit normal draws for modes `0..modes` of one step.
    pub fn normals(&self, path: u64, step: u64, sub: SubStep, modes: usize) -> Vec<f64> {
        let mut rng = ChaCha12Rng::from_seed(self.key);
        rng.set_stream(path);
        (0..modes)
            .map(|k| {
                rng.set_word_pos(Self::word_pos(step, sub, k));
                standard_normal(&mut rng)
            })
            .collect()
    }
}

/// Deterministic sub-generator for test-field ensembles: hashes the salts
/// into a ChaCha seed so independent helpers never share draws.
pub fn sub_rng(seed: u64, salts: &[u64]) -> ChaCha12Rng {
    let mut s = seed ^ 0x5851f42d4c957f2d;
    splitmix64(&mut s);
    for salt in salts {
        s ^= *salt;
        splitmix64(&mut s);
    }
    let mut key = [0u8; 32];
    let mut st = s;
    for chunk in key.chunks_mut(8) {
        splitmix64(&mut st);
        chunk.copy_from_slice(&st.to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_reproducible_bitwise() {
        let a = NoiseStreams::new(42);
        let b = NoiseStreams::new(42);
        for path in [0u64, 1, 17] {
            for step in [0u64, 5, 1_000_003] {
                let x = a.normals(path, step, SubStep::default(), 8);
                let y = b.normals(path, step, SubStep::default(), 8);
                assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn distinct_paths_steps_and_modes_differ() {
        let s = NoiseStreams::new(7);
        let base = s.normal(0, 0, SubStep::default(), 0);
        assert_ne!(base, s.normal(1, 0, SubStep::default(), 0));
        assert_ne!(base, s.normal(0, 1, SubStep::default(), 0));
        assert_ne!(base, s.normal(0, 0, SubStep::default(), 1));
        assert_ne!(
            base,
            s.normal(0, 0, SubStep { level: 1, index: 0 }, 0)
        );
    }

    #[test]
    fn slots_do_not_overlap() {
        // Adjacent modes sit four words apart; sub-step and level fields
        // shift well past the largest mode index we ever use.
        let w0 = NoiseStreams::word_pos(3, SubStep::default(), 0);
        let w1 = NoiseStreams::word_pos(3, SubStep::default(), 1);
        assert_eq!(w1 - w0, 4);
        let s0 = NoiseStreams::word_pos(3, SubStep { level: 1, index: 1 }, 0);
        assert!(s0 > w1);
        assert!(NoiseStreams::word_pos(4, SubStep::default(), 0) > s0);
    }

    #[test]
    fn box_muller_is_finite_and_centered() {
        let mut rng = sub_rng(1, &[2, 3]);
        let n = 200_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let z = standard_normal(&mut rng);
            assert!(z.is_finite());
            sum += z;
            sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }
}
