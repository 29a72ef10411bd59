//! Small deterministic PRNG used by generators and rounding schemes.
//!
//! Every randomized component of this crate must be a pure function of its
//! seed, byte-identically reproducible across runs and platforms. A
//! hand-rolled splitmix64 keeps that contract independent of external crate
//! versions.

/// splitmix64 step; also used to derive child seeds from a master seed.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from `(master, a, b)`.
pub fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    let mut s = master;
    let x = splitmix64(&mut s);
    let mut s2 = x ^ a.wrapping_mul(0xd1342543de82ef95);
    let y = splitmix64(&mut s2);
    let mut s3 = y ^ b.wrapping_mul(0xa0761d6478bd642f);
    splitmix64(&mut s3)
}

/// Deterministic pseudo-random stream.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        splitmix64(&mut self.state)
    }

    /// Uniform f64 in [0, 1) with 53 bits of randomness.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, bound) without modulo bias.
    pub fn next_bounded(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let r = self.next_u64();
            if r >= threshold {
                return r % bound;
            }
        }
    }

    /// Fisher-Yates shuffle producing a uniform permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.next_bounded(i as u64 + 1) as usize;
            perm.swap(i, j);
        }
        perm
    }
}
