//! Self-contained pseudo-random number generation.
//!
//! Simulations here routinely draw billions of variates and reports must be
//! byte-identical across runs and machines, so the generator is pinned in
//! this crate rather than taken from an external crate whose stream might
//! change between versions. The core generator is xoshiro256++ (Blackman &
//! Vigna), seeded through SplitMix64.
//!
//! Replicate streams: replicate `i` of a run with master seed `s` uses the
//! stream `Rng::for_replicate(s, i)`, which seeds SplitMix64 with
//! `mix(s) + mix(i) * 0x9E3779B97F4A7C15` and expands four state words.
//! The derivation is a pure function of `(s, i)`, so results do not depend
//! on scheduling or worker count.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer; also usable as a standalone 64-bit mixer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    fn next(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// xoshiro256++ generator.
#[derive(Debug, Clone)]
pub struct Rng {
    s: [u64; 4],
}

impl Rng {
    /// Create a generator from a 64-bit seed.
    pub fn new(seed: u64) -> Self {
        let mut sm = SplitMix64::new(seed);
        let mut s = [sm.next(), sm.next(), sm.next(), sm.next()];
        if s == [0, 0, 0, 0] {
            s[0] = GOLDEN;
        }
        Self { s }
    }

    /// Stream for replicate `index` of a run with master seed `seed`.
    pub fn for_replicate(seed: u64, index: u64) -> Self {
        Self::new(mix64(seed).wrapping_add(mix64(index).wrapping_mul(GOLDEN)))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[0]
            .wrapping_add(self.s[3])
            .rotate_left(23)
            .wrapping_add(self.s[0]);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform `f64` in `[0, 1)` with 53-bit resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform `f64` in the open interval `(0, 1)`; safe to pass to `ln`.
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Exponential variate with the given rate (mean `1/rate`).
    #[inline]
    pub fn exponential(&mut self, rate: f64) -> f64 {
        debug_assert!(rate > 0.0, "exponential rate must be positive");
        -self.uniform_open().ln() / rate
    }

    /// Uniform integer in `[0, n)` using Lemire's multiply-shift rejection.
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        loop {
            let x = self.next_u64();
            let m = (x as u128) * (n as u128);
            let low = m as u64;
            if low >= n || low >= n.wrapping_neg() % n {
                return (m >> 64) as u64;
            }
        }
    }

    /// Uniform index in `[0, n)` for in-memory collections.
    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        self.below(n as u64) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn replicate_streams_distinct_and_stable() {
        let mut r0 = Rng::for_replicate(7, 0);
        let mut r1 = Rng::for_replicate(7, 1);
        let first0 = r0.next_u64();
        assert_ne!(first0, r1.next_u64());
        let mut again = Rng::for_replicate(7, 0);
        assert_eq!(first0, again.next_u64());
    }

    #[test]
    fn uniform_in_range_and_roughly_centered() {
        let mut rng = Rng::new(12345);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
            sum += u;
        }
        let mean = sum / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "uniform mean off: {mean}");
    }

    #[test]
    fn exponential_mean_matches_rate() {
        let mut rng = Rng::new(99);
        let n = 200_000;
        let rate = 3.0;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = rng.exponential(rate);
            assert!(x > 0.0);
            sum += x;
        }
        let mean = sum / n as f64;
        // six sigma of the sample mean of Exp(3)
        let tol = 6.0 / rate / (n as f64).sqrt();
        assert!((mean - 1.0 / rate).abs() < tol, "exp mean off: {mean}");
    }

    #[test]
    fn below_is_uniform_over_small_range() {
        let mut rng = Rng::new(5);
        let mut counts = [0u64; 7];
        let n = 70_000;
        for _ in 0..n {
            counts[rng.below(7) as usize] += 1;
        }
        for (v, &c) in counts.iter().enumerate() {
            let expect = n as f64 / 7.0;
            assert!(
                (c as f64 - expect).abs() < 6.0 * expect.sqrt(),
                "value {v} count {c} far from {expect}"
            );
        }
    }
}
