//! Deterministic random-number streams.
//!
//! All randomness in a run flows from one root seed through named
//! sub-streams ("plant", "watermark", ...), so any component can be re-run
//! bit-identically and parallel replications never share a generator.
//! The generator is xoshiro256++ seeded via SplitMix64; conversions to
//! uniform and normal variates are implemented here so results are stable
//! across platforms and crate versions.

use crate::math;

const TWO_PI: f64 = core::f64::consts::TAU;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over arbitrary bytes; used to fold stream labels into the seed.
#[inline]
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// xoshiro256++ generator.
#[derive(Clone, Debug)]
pub struct Rng {
    s: [u64; 4],
}

impl Rng {
    /// Seed the generator; any u64 is acceptable.
    pub fn seed_from_u64(seed: u64) -> Self {
        let mut sm = seed;
        let mut s = [0u64; 4];
        for slot in &mut s {
            *slot = splitmix64(&mut sm);
        }
        // an all-zero state would be a fixed point
        if s == [0, 0, 0, 0] {
            s[0] = 0x9e37_79b9_7f4a_7c15;
        }
        Rng { s }
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

    /// Uniform on [0, 1) with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on (0, 1]; safe as a log argument.
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n).
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // 53-bit multiply-and-shift; bias is negligible for the n used here
        (self.uniform() * n as f64) as usize % n
    }

    /// Standard normal via Box-Muller (cosine branch).
    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        math::sqrt(-2.0 * math::ln(u1)) * math::cos(TWO_PI * u2)
    }

    /// N(mu, sigma^2) scalar draw.
    #[inline]
    pub fn normal(&mut self, mu: f64, sigma: f64) -> f64 {
        mu + sigma * self.standard_normal()
    }
}

/// Factory deriving independent named streams from a single root seed.
#[derive(Clone, Copy, Debug)]
pub struct Streams {
    root: u64,
}

impl Streams {
    pub fn new(root: u64) -> Self {
        Streams { root }
    }

    /// Stream for `label`; `index` separates replications or episodes.
    pub fn stream(&self, label: &str, index: u64) -> Rng {
        let mut h = fnv1a(label.as_bytes());
        h ^= self.root.rotate_left(17);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
        h ^= index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        Rng::seed_from_u64(h)
    }

    /// Derive a child root, e.g. one per replication.
    pub fn child(&self, label: &str, index: u64) -> Streams {
        let mut rng = self.stream(label, index);
        Streams::new(rng.next_u64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let s = Streams::new(42);
        let mut a1 = s.stream("plant", 0);
        let mut a2 = s.stream("plant", 0);
        let mut b = s.stream("watermark", 0);
        let mut c = s.stream("plant", 1);
        let xs: [u64; 4] = core::array::from_fn(|_| a1.next_u64());
        let ys: [u64; 4] = core::array::from_fn(|_| a2.next_u64());
        assert_eq!(xs, ys);
        assert_ne!(xs[0], b.next_u64());
        assert_ne!(xs[0], c.next_u64());
    }

    #[test]
    fn normal_moments() {
        let mut rng = Streams::new(7).stream("n", 0);
        let n = 200_000;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..n {
            let x = rng.standard_normal();
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.02);
    }

    #[test]
    fn uniform_bounds() {
        let mut rng = Streams::new(9).stream("u", 0);
        for _ in 0..10_000 {
            let x = rng.uniform();
            assert!((0.0..1.0).contains(&x));
            let y = rng.uniform_open();
            assert!(y > 0.0 && y <= 1.0);
        }
    }
}
