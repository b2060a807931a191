//! Deterministic random number generation.
//!
//! Every random choice in this crate (synthesis geometry, noise fields,
//! weight init, epoch shuffles) flows through [`DetRng`], a self-contained
//! xoshiro256++ generator. Determinism contracts here are bit-exact — the
//! same (inputs, seed) must reproduce the same bytes on disk — so the
//! generator is pinned in-crate rather than borrowed from a crate whose
//! stream may change between versions.
//!
//! Independent streams are derived with [`DetRng::derive`], which mixes a
//! list of tags (epoch, step, role, ...) into a child seed. Parallel work
//! owns one derived stream per unit, so evaluation order never changes the
//! numbers.

/// xoshiro256++ with splitmix64 seeding.
#[derive(Clone, Debug)]
pub struct DetRng {
    s: [u64; 4],
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl DetRng {
    pub fn seed_from(seed: u64) -> Self {
        let mut sm = seed;
        let mut s = [0u64; 4];
        for slot in &mut s {
            *slot = splitmix64(&mut sm);
        }
        // all-zero state is invalid for xoshiro; splitmix cannot emit four
        // zeros from any seed, but guard anyway
        if s == [0, 0, 0, 0] {
            s[0] = 1;
        }
        DetRng { s }
    }

    /// Derive an independent child stream from this seed and a tag path.
    pub fn derive(seed: u64, tags: &[u64]) -> Self {
        let mut sm = seed ^ 0x6c62_272e_07bb_0142;
        let mut acc = splitmix64(&mut sm);
        for &t in tags {
            let mut tm = t ^ acc.rotate_left(17);
            acc ^= splitmix64(&mut tm);
            acc = acc.wrapping_mul(0x100_0000_01b3).rotate_left(29);
        }
        Self::seed_from(acc)
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

    /// Uniform in [0, 1) with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n). n must be > 0.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // multiply-shift; bias is < 2^-53 for any realistic n
        (self.uniform() * n as f64) as usize % n
    }

    /// Standard normal via Box-Muller. One sample per call; the paired
    /// sample is discarded to keep the stream position independent of
    /// caller bookkeeping.
    pub fn normal(&mut self) -> f64 {
        loop {
            let u1 = self.uniform();
            if u1 > 0.0 {
                let u2 = self.uniform();
                let r = (-2.0 * u1.ln()).sqrt();
                return r * (std::f64::consts::TAU * u2).cos();
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
