//! Pinned pseudo-random number generation.
//!
//! Every stochastic step in the crate (weight init, class-parameter sampling,
//! noise, shuffling) draws from [`Pcg32`], the PCG XSH-RR 64/32 generator with
//! the reference constants. The generator and the derived-stream convention
//! are part of the fixture contract: a reimplementation in another language
//! that follows the constants below reproduces every synthetic map and every
//! training run bit for bit.

/// PCG32 multiplier (Melissa O'Neill's reference implementation).
const PCG32_MULT: u64 = 6364136223846793005;

/// SplitMix64 output mixer, used to derive independent per-item seeds from a
/// base seed (e.g. per-pixel streams keyed by `seed ^ pixel_index`).
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// PCG XSH-RR 64/32: 64-bit state, 32-bit output, selectable stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pcg32 {
    state: u64,
    inc: u64,
}

impl Pcg32 {
    /// Seed with an initial state and stream selector, reference semantics
    /// (`pcg32_srandom_r`).
    pub fn new(initstate: u64, initseq: u64) -> Self {
        let mut rng = Pcg32 {
            state: 0,
            inc: (initseq << 1) | 1,
        };
        rng.next_u32();
        rng.state = rng.state.wrapping_add(initstate);
        rng.next_u32();
        rng
    }

    /// Independent stream for item `index` under a base seed. The state seed
    /// is `splitmix64(seed ^ index)` and the stream selector is `index`.
    pub fn for_item(seed: u64, index: u64) -> Self {
        Pcg32::new(splitmix64(seed ^ index), index)
    }

    pub fn next_u32(&mut self) -> u32 {
        let old = self.state;
        self.state = old.wrapping_mul(PCG32_MULT).wrapping_add(self.inc);
        let xorshifted = (((old >> 18) ^ old) >> 27) as u32;
        let rot = (old >> 59) as u32;
        xorshifted.rotate_right(rot)
    }

    /// Uniform integer in `[0, bound)` by the debiased-modulo rejection loop
    /// of the reference `pcg32_boundedrand_r`.
    pub fn bounded(&mut self, bound: u32) -> u32 {
        assert!(bound > 0, "bound must be positive");
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let r = self.next_u32();
            if r >= threshold {
                return r % bound;
            }
        }
    }

    /// Uniform `f64` in `[0, 1)` with 53 random bits. Draw order: high word
    /// first, then low word.
    pub fn next_f64(&mut self) -> f64 {
        let hi = self.next_u32() as u64;
        let lo = self.next_u32() as u64;
        let bits53 = ((hi << 32) | lo) >> 11;
        bits53 as f64 * (1.0 / 9007199254740992.0)
    }

    /// Uniform `f64` in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// One pair of independent standard normals via Box–Muller. Consumes
    /// exactly two `f64` draws.
    pub fn normal_pair(&mut self) -> (f64, f64) {
        // 1 - u maps [0,1) onto (0,1] so the log argument is never zero.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        (r * theta.cos(), r * theta.sin())
    }

    /// Fill `out` with i.i.d. `N(0, sigma^2)` samples, pairwise Box–Muller.
    /// An odd count discards the second member of the final pair, so the
    /// number of underlying draws depends only on `out.len()`.
    pub fn fill_normal(&mut self, out: &mut [f64], sigma: f64) {
        let mut i = 0;
        while i + 1 < out.len() {
            let (a, b) = self.normal_pair();
            out[i] = a * sigma;
            out[i + 1] = b * sigma;
            i += 2;
        }
        if i < out.len() {
            let (a, _) = self.normal_pair();
            out[i] = a * sigma;
        }
    }
}
