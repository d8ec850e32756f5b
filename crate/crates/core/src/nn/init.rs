use ndarray::IxDyn;
use rand_distr::{Distribution, StandardNormal};

use super::params::Tensor;
use super::real::Real;
use crate::rng::Rng;

/// Weight initialization schemes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Kaiming normal, std = sqrt(2 / fan_in), fan_in = shape[0].
    Kaiming,
    /// Zero-mean normal with a fixed standard deviation.
    Normal(f64),
    Zeros,
}

pub fn kaiming_normal<T: Real>(shape: &[usize], rng: &mut Rng) -> Tensor<T> {
    let fan_in = shape.first().copied().unwrap_or(1).max(1);
    normal(shape, (2.0 / fan_in as f64).sqrt(), rng)
}

/// Small initialization used for output heads (default sigma 0.01).
pub fn small_init<T: Real>(shape: &[usize], sigma: f64, rng: &mut Rng) -> Tensor<T> {
    normal(shape, sigma, rng)
}

pub fn normal<T: Real>(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor<T> {
    Tensor::from_shape_simple_fn(IxDyn(shape), || {
        let z: f64 = StandardNormal.sample(rng);
        T::lit(z * std)
    })
}

impl Init {
    pub fn tensor<T: Real>(self, shape: &[usize], rng: &mut Rng) -> Tensor<T> {
        match self {
            Init::Kaiming => kaiming_normal(shape, rng),
            Init::Normal(s) => normal(shape, s, rng),
            Init::Zeros => Tensor::zeros(IxDyn(shape)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    fn std_of(t: &Tensor<f64>) -> f64 {
        let n = t.len() as f64;
        let m = t.sum() / n;
        (t.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
    }

    #[test]
    fn deterministic_given_seed() {
        let s = SeedStream::new(3);
        let a: Tensor<f32> = kaiming_normal(&[8, 4], &mut s.rng());
        let b: Tensor<f32> = kaiming_normal(&[8, 4], &mut s.rng());
        assert_eq!(a, b);
    }

    #[test]
    fn kaiming_std_matches_fan_in() {
        // 512 x 200 = 102400 draws
        let t: Tensor<f64> = kaiming_normal(&[512, 200], &mut SeedStream::new(1).rng());
        let target = (2.0f64 / 512.0).sqrt();
        assert!((std_of(&t) / target - 1.0).abs() < 0.05, "std {}", std_of(&t));
    }

    #[test]
    fn small_init_std() {
        let t: Tensor<f64> = small_init(&[100_000], 0.01, &mut SeedStream::new(2).rng());
        assert!((std_of(&t) / 0.01 - 1.0).abs() < 0.05);
    }
}
