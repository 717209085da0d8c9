//! Portable, seedable random number generation.
//!
//! Every random draw in this crate flows through [`SplitMix64`], a 64-bit
//! generator with a fixed, documented update rule. The derived samplers
//! (uniform, normal, gamma, Dirichlet, shuffle) are likewise pinned to one
//! exact sequence of operations, so a given seed replays the same
//! partitions, initializations, and batch orders on any platform.
//!
//! The scheme, in full:
//!
//! * state update: `s += 0x9E3779B97F4A7C15`, output `mix64(s)`
//! * `mix64(z)`: `z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9`,
//!   `z = (z ^ (z >> 27)) * 0x94D049BB133111EB`, `z ^ (z >> 31)`
//! * `f64` in `[0, 1)`: `(next_u64() >> 11) * 2^-53`
//! * `f64` in `(0, 1]`: `((next_u64() >> 11) + 1) * 2^-53`
//! * bounded index: `next_u64() % n`
//! * shuffle: Fisher–Yates, `i` from `len-1` down to `1`, `j = index(i + 1)`
//! * standard normal: Box–Muller, `sqrt(-2 ln u1) * cos(2 pi u2)` with
//!   `u1` in `(0, 1]`, `u2` in `[0, 1)`; the sine mate is discarded
//! * gamma(shape >= 1): Marsaglia–Tsang; gamma(shape < 1) via the
//!   `gamma(shape + 1) * u^(1/shape)` boost
//! * substreams: `derive_seed(base, tag) = mix64(base ^ mix64(tag ^ GOLDEN))`

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent stream seed from a base seed and a tag
/// (round number, client id, attempt counter, ...).
#[inline]
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    mix64(base ^ mix64(tag ^ GOLDEN))
}

/// SplitMix64 generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform `f64` in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * 2f64.powi(-53)
    }

    /// Uniform `f64` in `(0, 1]`; safe as a logarithm argument.
    #[inline]
    pub fn next_open_closed(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * 2f64.powi(-53)
    }

    /// Uniform index in `[0, n)`.
    ///
    /// Plain modulo reduction: the bias is ~`n / 2^64`, irrelevant at the
    /// scales simulated here, and the draw count per element is fixed,
    /// which keeps sequences replayable.
    #[inline]
    pub fn next_index(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_index needs n > 0");
        (self.next_u64() % n as u64) as usize
    }

    /// Uniform `f64` in `[lo, hi)`.
    #[inline]
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box–Muller (cosine branch only).
    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_open_closed();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Gamma(shape, 1) via Marsaglia–Tsang.
    pub fn next_gamma(&mut self, shape: f64) -> f64 {
        assert!(shape > 0.0, "gamma shape must be positive");
        if shape < 1.0 {
            let boost = self.next_gamma(shape + 1.0);
            let u = self.next_open_closed();
            return boost * u.powf(1.0 / shape);
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (3.0 * d.sqrt());
        loop {
            let x = self.next_normal();
            // Explicit multiplication chains keep the draw sequence
            // reproducible by any implementation of this scheme.
            let t = 1.0 + c * x;
            let v = t * t * t;
            if v <= 0.0 {
                continue;
            }
            let u = self.next_open_closed();
            let x2 = x * x;
            if u < 1.0 - 0.0331 * (x2 * x2) {
                return d * v;
            }
            if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
                return d * v;
            }
        }
    }

    /// One draw from a symmetric Dirichlet with concentration `beta` over
    /// `k` components: normalized i.i.d. Gamma(beta, 1) draws.
    pub fn next_dirichlet(&mut self, beta: f64, k: usize) -> Vec<f64> {
        let gammas: Vec<f64> = (0..k).map(|_| self.next_gamma(beta)).collect();
        let total: f64 = gammas.iter().sum();
        gammas.into_iter().map(|g| g / total).collect()
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.next_index(i + 1);
            slice.swap(i, j);
        }
    }
}
