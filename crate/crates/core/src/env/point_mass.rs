//! Planar integrator `z' = z + a` on the unit square.

use rand::Rng as _;

use super::{clip_vec, to_f32};
use crate::rng::Rng;

pub(super) fn step_exact(s: &[f64], a: &[f64]) -> Vec<f64> {
    vec![(s[0] + a[0]).clamp(0.0, 1.0), (s[1] + a[1]).clamp(0.0, 1.0)]
}

pub(super) fn step(s: &[f64], a: &[f64]) -> Vec<f32> {
    to_f32(&step_exact(s, a))
}

pub(super) fn expert(s: &[f64], g: &[f64], v: f64) -> Vec<f64> {
    clip_vec([g[0] - s[0], g[1] - s[1]], v).to_vec()
}

pub(super) fn sample_task(rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let mut p = || vec![rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)];
    (p(), p())
}

pub(super) fn valid(s: &[f64]) -> bool {
    s.iter().all(|x| (0.0..=1.0).contains(x))
}
