//! Counter-based random numbers (Philox4x32-10).
//!
//! Philox is a keyed bijection on 128-bit counters: the output for a given
//! `(key, counter)` does not depend on how many other values were generated
//! before it. Sampling uses one stream per `(sample, class)` pair, so draws are
//! reproducible regardless of iteration order.

const MUL0: u32 = 0xD251_1F53;
const MUL1: u32 = 0xCD9E_8D57;
const WEYL0: u32 = 0x9E37_79B9;
const WEYL1: u32 = 0xBB67_AE85;

/// Philox4x32 with 10 rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Philox4x32 {
    key: [u32; 2],
}

impl Philox4x32 {
    pub const fn new(key: [u32; 2]) -> Self {
        Philox4x32 { key }
    }

    pub const fn from_seed(seed: u64) -> Self {
        Philox4x32 {
            key: [seed as u32, (seed >> 32) as u32],
        }
    }

    /// The block function: encrypts `counter` under the key.
    pub fn block(&self, counter: [u32; 4]) -> [u32; 4] {
        let mut ctr = counter;
        let mut key = self.key;
        for round in 0..10 {
            if round > 0 {
                key[0] = key[0].wrapping_add(WEYL0);
                key[1] = key[1].wrapping_add(WEYL1);
            }
            let p0 = u64::from(MUL0) * u64::from(ctr[0]);
            let p1 = u64::from(MUL1) * u64::from(ctr[2]);
            ctr = [
                (p1 >> 32) as u32 ^ ctr[1] ^ key[0],
                p1 as u32,
                (p0 >> 32) as u32 ^ ctr[3] ^ key[1],
                p0 as u32,
            ];
        }
        ctr
    }

    /// A stream of values addressed by `(stream, substream)`.
    pub fn stream(&self, stream: u64, substream: u32) -> PhiloxStream {
        PhiloxStream {
            rng: *self,
            stream,
            substream,
            position: 0,
            buffer: [0; 4],
            used: 4,
        }
    }
}

/// Sequential reader over the blocks of one Philox stream.
#[derive(Debug, Clone)]
pub struct PhiloxStream {
    rng: Philox4x32,
    stream: u64,
    substream: u32,
    position: u32,
    buffer: [u32; 4],
    used: usize,
}

impl PhiloxStream {
    pub fn next_u32(&mut self) -> u32 {
        if self.used == 4 {
            self.buffer = self.rng.block([
                self.stream as u32,
                (self.stream >> 32) as u32,
                self.substream,
                self.position,
            ]);
            self.position = self.position.wrapping_add(1);
            self.used = 0;
        }
        let v = self.buffer[self.used];
        self.used += 1;
        v
    }

    pub fn next_u64(&mut self) -> u64 {
        let lo = u64::from(self.next_u32());
        let hi = u64::from(self.next_u32());
        (hi << 32) | lo
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` (Lemire's multiply-shift with rejection).
    pub fn below(&mut self, n: u32) -> u32 {
        assert!(n > 0);
        loop {
            let m = u64::from(self.next_u32()) * u64::from(n);
            let low = m as u32;
            if low >= n.wrapping_neg() % n {
                return (m >> 32) as u32;
            }
        }
    }

    /// Standard normal via Box-Muller.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Known-answer vectors published with the Random123 reference implementation.
    #[test]
    fn philox_known_answers() {
        let zero = Philox4x32::new([0, 0]).block([0; 4]);
        assert_eq!(zero, [0x6627_e8d5, 0xe169_c58d, 0xbc57_ac4c, 0x9b00_dbd8]);
        let ones = Philox4x32::new([u32::MAX; 2]).block([u32::MAX; 4]);
        assert_eq!(ones, [0x408f_276d, 0x41c8_3b0e, 0xa20b_c7c6, 0x6d54_51fd]);
        let pi = Philox4x32::new([0xa409_3822, 0x299f_31d0])
            .block([0x243f_6a88, 0x85a3_08d3, 0x1319_8a2e, 0x0370_7344]);
        assert_eq!(pi, [0xd16c_fe09, 0x94fd_cceb, 0x5001_e420, 0x2412_6ea1]);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let rng = Philox4x32::from_seed(42);
        let mut s1 = rng.stream(3, 7);
        let mut s2 = rng.stream(3, 7);
        let mut s3 = rng.stream(3, 8);
        let v1: [u64; 8] = core::array::from_fn(|_| s1.next_u64());
        let v2: [u64; 8] = core::array::from_fn(|_| s2.next_u64());
        let v3: [u64; 8] = core::array::from_fn(|_| s3.next_u64());
        assert_eq!(v1, v2);
        assert_ne!(v1, v3);
    }

    #[test]
    fn uniform_mean_is_about_half() {
        let mut s = Philox4x32::from_seed(1).stream(0, 0);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| s.next_f64()).sum::<f64>() / n as f64;
        // 5 standard errors of U(0,1): 5 * sqrt(1/12) / sqrt(n)
        assert!((mean - 0.5).abs() < 5.0 * 0.2887 / libm::sqrt(n as f64));
    }

    #[test]
    fn below_stays_in_range() {
        let mut s = Philox4x32::from_seed(9).stream(1, 2);
        for _ in 0..1000 {
            assert!(s.below(7) < 7);
        }
    }
}
