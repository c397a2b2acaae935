//! Independent reimplementation of the Dirichlet partition sampler, shared
//! by the partition tests and the acceptance suite.

use collabdm::RngStream;

/// Straight-line reimplementation of the per-class sampling pipeline. Only
/// the raw 64-bit counter stream is shared with the library.
struct Oracle {
    bits: RngStream,
}

impl Oracle {
    fn u01(&mut self) -> f64 {
        (self.bits.next_u64() >> 11) as f64 / 9_007_199_254_740_992.0
    }

    fn u01_open0(&mut self) -> f64 {
        ((self.bits.next_u64() >> 11) + 1) as f64 / 9_007_199_254_740_992.0
    }

    fn gauss(&mut self) -> f64 {
        let r = (-2.0 * self.u01_open0().ln()).sqrt();
        r * (2.0 * std::f64::consts::PI * self.u01()).cos()
    }

    // Marsaglia and Tsang, "A simple method for generating gamma variables".
    fn gamma(&mut self, a: f64) -> f64 {
        if a < 1.0 {
            let g = self.gamma(a + 1.0);
            return g * self.u01_open0().powf(1.0 / a);
        }
        let d = a - 1.0 / 3.0;
        let c = (1.0 / 3.0) / d.sqrt();
        loop {
            let x = self.gauss();
            let t = 1.0 + c * x;
            if t <= 0.0 {
                continue;
            }
            let v = t * t * t;
            let u = self.u01_open0();
            if u.ln() < x * x / 2.0 + d * (1.0 - v + v.ln()) {
                return d * v;
            }
        }
    }

    fn below(&mut self, n: usize) -> usize {
        let n = n as u128;
        let floor = ((1u128 << 64) - n) % n;
        loop {
            let m = self.bits.next_u64() as u128 * n;
            if m & 0xffff_ffff_ffff_ffff >= floor {
                return (m >> 64) as usize;
            }
        }
    }
}

/// `out[client][class]`: ascending example indices.
pub fn oracle_partition(labels: &[usize], classes: usize, k: usize, beta: f64, seed: u64) -> Vec<Vec<Vec<usize>>> {
    let mut out = vec![vec![Vec::new(); classes]; k];
    for y in 0..classes {
        let mut o = Oracle { bits: RngStream::new(seed).substream(y as u64) };
        let g: Vec<f64> = (0..k).map(|_| o.gamma(beta)).collect();
        let s: f64 = g.iter().sum();
        let p: Vec<f64> = g.iter().map(|v| v / s).collect();

        let mut pool: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == y).collect();
        for i in 0..pool.len().saturating_sub(1) {
            let j = i + o.below(pool.len() - i);
            pool.swap(i, j);
        }

        let n = pool.len();
        let mut counts = vec![0usize; k];
        let mut rem = Vec::with_capacity(k);
        for c in 0..k {
            let exact = p[c] * n as f64;
            counts[c] = exact as usize;
            rem.push((exact - counts[c] as f64, c));
        }
        let left = n - counts.iter().sum::<usize>();
        rem.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for &(_, c) in &rem[..left] {
            counts[c] += 1;
        }

        let mut at = 0;
        for c in 0..k {
            let mut run = pool[at..at + counts[c]].to_vec();
            run.sort();
            out[c][y] = run;
            at += counts[c];
        }
    }
    out
}
