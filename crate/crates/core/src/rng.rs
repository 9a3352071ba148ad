//! Deterministic pseudorandom generators.
//!
//! Two flavours are used across the crate:
//!
//! * [`SplitMix64`] — a sequential stream for weight initialization, patch
//!   sampling and augmentation. Bit-stable across platforms.
//! * [`hash2`] / [`counter_unit`] — a stateless counter-based generator
//!   keyed by `(seed, index)`. Noise synthesis draws one value per pixel
//!   index, so corruption is independent of evaluation order.

/// SplitMix64 finalizer. Scrambles a 64-bit value into a well-mixed one.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stateless hash of a `(seed, index)` pair.
#[inline]
pub fn hash2(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index.wrapping_add(0x51_7c_c1_b7_27_22_0a_95)))
}

/// Counter-based uniform draw in `[0, 1)` keyed by `(seed, index)`.
#[inline]
pub fn counter_unit(seed: u64, index: u64) -> f64 {
    to_unit(hash2(seed, index))
}

/// Map a u64 to `[0, 1)` using the top 53 bits.
#[inline]
pub fn to_unit(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Sequential SplitMix64 stream.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Derive an independent child stream; `tag` distinguishes siblings.
    pub fn child(&self, tag: u64) -> Self {
        SplitMix64::new(hash2(self.state, tag))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn next_unit(&mut self) -> f64 {
        to_unit(self.next_u64())
    }

    /// Uniform in `[lo, hi)`.
    #[inline]
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_unit()
    }

    /// Uniform integer in `[0, n)`.
    #[inline]
    pub fn next_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_unit() * n as f64) as usize % n
    }

    pub fn next_bool(&mut self) -> bool {
        self.next_u64() & 1 == 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_is_reproducible() {
        let mut a = SplitMix64::new(42);
        let mut b = SplitMix64::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn counter_draws_are_order_independent() {
        let forward: Vec<f64> = (0..64).map(|i| counter_unit(7, i)).collect();
        let mut reverse: Vec<f64> = (0..64).rev().map(|i| counter_unit(7, i)).collect();
        reverse.reverse();
        assert_eq!(forward, reverse);
    }

    #[test]
    fn unit_draws_stay_in_range() {
        let mut rng = SplitMix64::new(1);
        for i in 0..10_000 {
            let u = rng.next_unit();
            assert!((0.0..1.0).contains(&u));
            let c = counter_unit(3, i);
            assert!((0.0..1.0).contains(&c));
        }
    }

    #[test]
    fn mean_of_unit_draws_is_centered() {
        let mut rng = SplitMix64::new(99);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| rng.next_unit()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }
}
