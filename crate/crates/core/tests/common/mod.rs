// Independent reference implementations shared by the integration suites.
// Nothing here calls into the estimation code; only plain numbers cross
// the boundary.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn gaussian(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// Grid points and trapezoid weights on `[a, b]` with `n` points.
pub fn trapezoid(a: f64, b: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let h = (b - a) / (n - 1) as f64;
    let q = (0..n).map(|j| if j == n - 1 { b } else { a + j as f64 * h }).collect();
    let w = (0..n).map(|j| if j == 0 || j == n - 1 { h / 2.0 } else { h }).collect();
    (q, w)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Predictive {
    Scaling,
    Marginal,
}

pub struct OracleSetup {
    pub q_min: f64,
    pub q_max: f64,
    pub n: usize,
    pub gain: f64,
    pub sigma: f64,
    pub hazard: f64,
}

impl OracleSetup {
    /// Unnormalized batch posterior of a segment on the grid.
    fn batch(&self, q: &[f64], data: &[f64]) -> Vec<f64> {
        let width = self.q_max - self.q_min;
        q.iter()
            .map(|&qi| data.iter().map(|&c| gaussian(c, self.gain * qi, self.sigma)).product::<f64>() / width)
            .collect()
    }

    /// `p(segment data)` under a fresh uniform prior.
    fn segment_probability(&self, data: &[f64], method: Predictive) -> f64 {
        let (q, w) = trapezoid(self.q_min, self.q_max, self.n);
        match method {
            Predictive::Marginal => {
                let b = self.batch(&q, data);
                b.iter().zip(&w).map(|(x, wi)| x * wi).sum()
            }
            // Product of sequential predictives read off the batch
            // posterior of the preceding data by linear interpolation.
            Predictive::Scaling => {
                let mut p = 1.0;
                for j in 0..data.len() {
                    let b = self.batch(&q, &data[..j]);
                    let z: f64 = b.iter().zip(&w).map(|(x, wi)| x * wi).sum();
                    let x = data[j] / self.gain;
                    let dens = if x < self.q_min || x > self.q_max {
                        0.0
                    } else {
                        let h = (self.q_max - self.q_min) / (self.n - 1) as f64;
                        let t = (x - self.q_min) / h;
                        let i = (t.floor() as usize).min(self.n - 2);
                        let f = t - i as f64;
                        (b[i] * (1.0 - f) + b[i + 1] * f) / z
                    };
                    p *= dens / self.gain;
                }
                p
            }
        }
    }

    /// `alpha_k(i) = p(r_k = i, c_1:k)` by enumerating, for every pass,
    /// whether a new regime starts there.
    pub fn joint(&self, cy: &[f64], method: Predictive) -> Vec<f64> {
        let k = cy.len();
        let mut alpha = vec![0.0; k + 1];
        for mask in 0u32..(1 << k) {
            let starts: Vec<usize> = (0..k).filter(|j| mask >> j & 1 == 1).collect();
            let prior: f64 = (0..k)
                .map(|j| if mask >> j & 1 == 1 { self.hazard } else { 1.0 - self.hazard })
                .product();
            let mut bounds = vec![0];
            bounds.extend(starts.iter().copied().filter(|&s| s > 0));
            bounds.push(k);
            let mut lik = 1.0;
            for seg in bounds.windows(2) {
                lik *= self.segment_probability(&cy[seg[0]..seg[1]], method);
            }
            // Passes are 1-based; a regime starting at pass s has run
            // length k - s, and one carried over from the start has k.
            let r = starts.last().map_or(k, |&s0| k - (s0 + 1));
            alpha[r] += prior * lik;
        }
        alpha
    }
}

/// A short stream with a possible jump, plus a gain and noise scale. Rates
/// stay inside [0, 4.9].
pub fn random_stream(seed: u64, k: usize) -> (Vec<f64>, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gain = rng.random_range(0.5..2.0);
    let sigma = rng.random_range(0.2..0.8);
    let q1 = rng.random_range(0.5..1.5);
    let q2 = q1 * rng.random_range(1.0..2.5);
    let change = rng.random_range(1..=k);
    let cy = (0..k)
        .map(|j| {
            let q = if j < change { q1 } else { q2 };
            let noise: f64 = (0..12).map(|_| rng.random::<f64>()).sum::<f64>() - 6.0;
            (gain * q + sigma * noise).clamp(0.0, gain * 4.9)
        })
        .collect();
    (cy, gain, sigma)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()) || (a == 0.0 && b == 0.0)
}
