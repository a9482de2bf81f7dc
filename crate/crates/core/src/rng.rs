//! Counter-based random streams.
//!
//! Every stream is addressed by a logical key `(seed, replicate, generation,
//! index)`, so the numbers a particle sees never depend on thread schedule,
//! pruning order or how a batch was sharded.

use rand_core::{impls, RngCore};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline(always)]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a four-word key into a stream origin.
#[inline(always)]
pub fn stream_origin(seed: u64, a: u64, b: u64, c: u64) -> u64 {
    let mut h = mix64(seed ^ 0x5851_F42D_4C95_7F2D);
    h = mix64(h ^ a.wrapping_mul(GOLDEN));
    h = mix64(h ^ b.wrapping_add(0x2545_F491_4F6C_DD1D));
    mix64(h ^ c.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Shared prefix of the keys `(seed, a, b, ·)`.
#[inline(always)]
pub fn stream_base(seed: u64, a: u64, b: u64) -> u64 {
    let h = mix64(seed ^ 0x5851_F42D_4C95_7F2D);
    let h = mix64(h ^ a.wrapping_mul(GOLDEN));
    mix64(h ^ b.wrapping_add(0x2545_F491_4F6C_DD1D))
}

/// Logical label of child `child` of the particle labelled `parent`. Labels
/// follow the tree, not array positions, so pruning never shifts a stream.
#[inline(always)]
pub fn child_key(parent: u64, child: u32) -> u64 {
    mix64(parent.wrapping_mul(GOLDEN) ^ (child as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// SplitMix64 walk started at a hashed key.
#[derive(Clone, Debug)]
pub struct CounterRng {
    state: u64,
}

impl CounterRng {
    #[inline(always)]
    pub fn new(seed: u64, a: u64, b: u64, c: u64) -> Self {
        Self { state: stream_origin(seed, a, b, c) }
    }

    #[inline(always)]
    pub fn next(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Stream for key `(base, c)` where `base` came from [`stream_base`]; one
    /// mixing round instead of four for hot per-particle keys.
    #[inline(always)]
    pub fn keyed(base: u64, c: u64) -> Self {
        Self { state: mix64(base ^ c.wrapping_mul(0xD6E8_FEB8_6659_FD93)) }
    }

    /// Uniform on [0, 1) with 53 random bits.
    #[inline(always)]
    pub fn unit(&mut self) -> f64 {
        (self.next() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on (0, 1]; safe inside logarithms.
    #[inline(always)]
    pub fn unit_open0(&mut self) -> f64 {
        ((self.next() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for CounterRng {
    fn next_u32(&mut self) -> u32 {
        (self.next() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        impls::fill_bytes_via_next(self, dst)
    }
}

/// Threshold table for sampling a finite pmf from one 64-bit draw.
#[derive(Clone, Debug)]
pub struct U64Table {
    thresholds: Vec<u64>,
}

impl U64Table {
    pub fn new(probs: &[f64]) -> Self {
        let total: f64 = probs.iter().sum();
        let mut acc = 0.0;
        let mut thresholds = Vec::with_capacity(probs.len());
        for (i, p) in probs.iter().enumerate() {
            acc += p / total;
            let t = if i + 1 == probs.len() || acc >= 1.0 {
                u64::MAX
            } else {
                (acc * 18_446_744_073_709_551_616.0) as u64
            };
            thresholds.push(t);
        }
        Self { thresholds }
    }

    #[inline(always)]
    pub fn pick(&self, r: u64) -> usize {
        let last = self.thresholds.len() - 1;
        for (i, &t) in self.thresholds[..last].iter().enumerate() {
            if r < t {
                return i;
            }
        }
        last
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_give_distinct_streams() {
        let a = CounterRng::new(1, 0, 0, 0).next();
        let b = CounterRng::new(1, 0, 0, 1).next();
        let c = CounterRng::new(1, 0, 1, 0).next();
        let d = CounterRng::new(2, 0, 0, 0).next();
        assert!(a != b && a != c && a != d && b != c);
        assert_eq!(a, CounterRng::new(1, 0, 0, 0).next());
        assert_eq!(CounterRng::keyed(stream_base(7, 3, 2), 9).next(), CounterRng::new(7, 3, 2, 9).next());
    }

    #[test]
    fn unit_moments() {
        let mut r = CounterRng::new(9, 1, 2, 3);
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let u = r.unit();
            assert!((0.0..1.0).contains(&u));
            s += u;
            s2 += u * u;
        }
        let m = s / n as f64;
        assert!((m - 0.5).abs() < 5.0 * (1.0f64 / 12.0 / n as f64).sqrt());
        assert!((s2 / n as f64 - 1.0 / 3.0).abs() < 0.005);
    }

    #[test]
    fn table_frequencies() {
        let t = U64Table::new(&[0.25, 0.5, 0.25]);
        let mut r = CounterRng::new(4, 0, 0, 0);
        let mut c = [0usize; 3];
        let n = 100_000;
        for _ in 0..n {
            c[t.pick(r.next())] += 1;
        }
        for (k, p) in c.iter().zip([0.25, 0.5, 0.25]) {
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            assert!((*k as f64 / n as f64 - p).abs() < 5.0 * sd);
        }
        assert_eq!(U64Table::new(&[1.0]).pick(u64::MAX), 0);
    }
}
