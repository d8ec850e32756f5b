//! Power-law ("colored") Gaussian noise along the time axis.
//!
//! A sequence of length `L` is synthesized in the frequency domain with
//! amplitude `f^(-beta/2)` per frequency bin (the zero bin uses the lowest
//! nonzero frequency) and transformed back with an inverse FFT. The result
//! is scaled by its exact theoretical standard deviation, so every time step
//! is marginally `N(0, 1)` for any `beta`; `beta = 0` gives white noise.

use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::rng::Rng;

pub struct ColoredNoise {
    len: usize,
    amplitude: Vec<f64>,
    norm: f64,
    ifft: Arc<dyn Fft<f64>>,
}

impl ColoredNoise {
    pub fn new(beta: f64, len: usize) -> Self {
        assert!(len >= 1, "noise length must be positive");
        let half = len / 2;
        let amplitude: Vec<f64> = (0..=half)
            .map(|k| {
                let f = k.max(1) as f64 / len as f64;
                f.powf(-beta / 2.0)
            })
            .collect();
        let mut var = 2.0 * amplitude[0].powi(2);
        for (k, a) in amplitude.iter().enumerate().skip(1) {
            var += if len % 2 == 0 && k == half { 2.0 * a * a } else { 4.0 * a * a };
        }
        // var is the variance of the unnormalized inverse transform times len^2
        let norm = (var.sqrt() / len as f64).max(f64::MIN_POSITIVE);
        let ifft = FftPlanner::new().plan_fft_inverse(len);
        Self { len, amplitude, norm, ifft }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// One unit-variance sequence.
    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let l = self.len;
        if l == 1 {
            return vec![StandardNormal.sample(rng)];
        }
        let half = l / 2;
        let mut spec = vec![Complex::new(0.0, 0.0); l];
        for k in 0..=half {
            let a = self.amplitude[k];
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            let real_only = k == 0 || (l % 2 == 0 && k == half);
            spec[k] = if real_only {
                Complex::new(re * a * std::f64::consts::SQRT_2, 0.0)
            } else {
                Complex::new(re * a, im * a)
            };
            if k != 0 && k != l - k {
                spec[l - k] = spec[k].conj();
            }
        }
        self.ifft.process(&mut spec);
        spec.iter().map(|c| c.re / l as f64 / self.norm).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    fn sample_var(xs: &[f64]) -> f64 {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
    }

    #[test]
    fn marginals_have_unit_variance_for_any_beta() {
        let mut rng = SeedStream::new(4).rng();
        for &(beta, len) in &[(0.0, 5), (2.0, 5), (1.0, 8), (2.0, 1)] {
            let gen = ColoredNoise::new(beta, len);
            let draws: Vec<Vec<f64>> = (0..20000).map(|_| gen.sample(&mut rng)).collect();
            for t in 0..len {
                let col: Vec<f64> = draws.iter().map(|d| d[t]).collect();
                let v = sample_var(&col);
                assert!((v - 1.0).abs() < 0.05, "beta {beta} len {len} t {t}: var {v}");
            }
        }
    }

    #[test]
    fn white_noise_is_uncorrelated() {
        let mut rng = SeedStream::new(5).rng();
        let gen = ColoredNoise::new(0.0, 6);
        let n = 20000;
        let mut acc = 0.0;
        for _ in 0..n {
            let x = gen.sample(&mut rng);
            acc += x[0] * x[3];
        }
        assert!((acc / n as f64).abs() < 0.03);
    }
}
