//! Counter-based randomness. Every stream is a pure function of its key, so
//! reruns with the same seed are bit-identical regardless of evaluation order.

/// The splitmix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a list of words into one 64-bit key.
pub fn key(parts: &[u64]) -> u64 {
    let mut h = 0x6A09_E667_F3BC_C908u64;
    for &p in parts {
        h = mix64(h ^ p);
    }
    h
}

/// Derives a child seed, e.g. one per pipeline phase.
pub fn derive(seed: u64, label: u64) -> u64 {
    key(&[seed, label])
}

#[derive(Debug, Clone)]
pub struct Rng {
    base: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { base: mix64(seed), counter: 0 }
    }

    /// Stream for one node in one round.
    pub fn for_node(seed: u64, id: u64, round: u64) -> Self {
        Rng { base: key(&[seed, id, round]), counter: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        mix64(self.base ^ mix64(self.counter))
    }

    /// Uniform in `0..bound` (`bound > 0`), by rejection.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        if bound.is_power_of_two() {
            return self.next_u64() & (bound - 1);
        }
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % bound;
            }
        }
    }

    /// True with probability `2^-e`.
    pub fn coin_pow2(&mut self, e: u32) -> bool {
        if e == 0 {
            return true;
        }
        if e >= 64 {
            return false;
        }
        self.next_u64() >> (64 - e) == 0
    }

    /// True with probability `num/den`.
    pub fn ratio(&mut self, num: u64, den: u64) -> bool {
        num >= den || self.below(den) < num
    }

    pub fn bits(&mut self, width: u32) -> u64 {
        if width == 0 {
            0
        } else if width >= 64 {
            self.next_u64()
        } else {
            self.next_u64() >> (64 - width)
        }
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }
}
