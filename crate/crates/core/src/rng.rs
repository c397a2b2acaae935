//! Counter-based random streams.
//!
//! Output `i` of the stream keyed by `key` is the SplitMix64 finalizer
//! applied to `mix64(key) + (i + 1) * GAMMA` (wrapping), i.e. the published
//! SplitMix64 sequence seeded with `mix64(key)`. A stream is a plain value:
//! copying it forks an identical sequence, and two streams never share
//! hidden state.
//!
//! Derived variates, each consuming a fixed number of counters:
//! - `uniform`: 53 high bits of one output, in `[0, 1)`.
//! - `normal`: Box-Muller cosine branch over two outputs.
//! - `below(n)`: Lemire multiply-shift with rejection, one or more outputs.
//! - `gamma`: Marsaglia-Tsang, variable number of outputs.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const TAG_SALT: u64 = 0xD1B5_4A32_D192_ED03;

/// The SplitMix64 output finalizer (a bijection on `u64`).
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a, used to turn string tags into substream tags.
pub fn tag_hash(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    key: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(key: u64) -> Self {
        Self { key, counter: 0 }
    }

    pub fn at(key: u64, counter: u64) -> Self {
        Self { key, counter }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Independent child stream. For a fixed parent key the map
    /// `tag -> child key` is a composition of bijections, so it is injective
    /// over every tag, not just those below 2^32.
    pub fn substream(&self, tag: u64) -> RngStream {
        RngStream::new(mix64(self.key.wrapping_add(mix64(tag ^ TAG_SALT))))
    }

    pub fn substream_str(&self, tag: &str) -> RngStream {
        self.substream(tag_hash(tag))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(mix64(self.key).wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `(0, 1]`, safe to pass to `ln`.
    pub fn uniform_open0(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open0();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `[0, n)`. Panics on `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = u128::from(self.next_u64()) * u128::from(n);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// Natural log of a Gamma(shape, 1) variate.
    ///
    /// Marsaglia-Tsang for `shape >= 1`; for `shape < 1` the boost
    /// `Gamma(shape + 1) * U^(1/shape)` is applied in log space so tiny
    /// shapes never underflow to zero.
    pub fn log_gamma_variate(&mut self, shape: f64) -> f64 {
        assert!(shape > 0.0 && shape.is_finite(), "gamma shape {shape}");
        if shape < 1.0 {
            let boosted = self.log_gamma_variate(shape + 1.0);
            let u = self.uniform_open0();
            return boosted + u.ln() / shape;
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.normal();
            let v = 1.0 + c * x;
            if v <= 0.0 {
                continue;
            }
            let v = v * v * v;
            let u = self.uniform_open0();
            if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
                return d.ln() + v.ln();
            }
        }
    }

    pub fn gamma(&mut self, shape: f64) -> f64 {
        self.log_gamma_variate(shape).exp()
    }

    /// Symmetric Dirichlet(concentration * 1_k) via normalized Gamma draws,
    /// normalized in log space.
    pub fn dirichlet(&mut self, k: usize, concentration: f64) -> Vec<f64> {
        let logs: Vec<f64> = (0..k)
            .map(|_| self.log_gamma_variate(concentration))
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        weights.into_iter().map(|w| w / total).collect()
    }

    /// In-place Fisher-Yates: `i` runs upward, swapping with `i + below(n - i)`.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        let n = items.len();
        for i in 0..n.saturating_sub(1) {
            let j = i + self.below((n - i) as u64) as usize;
            items.swap(i, j);
        }
    }

    /// First `m` entries of a Fisher-Yates shuffle of `items` (same draw
    /// order as [`shuffle`](Self::shuffle), stopped early).
    pub fn partial_shuffle<T>(&mut self, items: &mut [T], m: usize) {
        let n = items.len();
        for i in 0..m.min(n.saturating_sub(1)) {
            let j = i + self.below((n - i) as u64) as usize;
            items.swap(i, j);
        }
    }
}
