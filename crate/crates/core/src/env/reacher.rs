//! Two-link planar arm driven by joint velocities. State and observation are
//! `(q1, q2, fingertip_x, fingertip_y)` with the base at the origin.

use rand::Rng as _;

use super::to_f32;
use crate::rng::Rng;

pub const LINK_LENGTHS: [f64; 2] = [0.25, 0.25];
/// Shoulder joint range `[-Q1_LIMIT, Q1_LIMIT]`.
pub const Q1_LIMIT: f64 = 3.0;
/// Elbow range; strictly positive angles keep the arm on the elbow-up branch.
pub const Q2_RANGE: [f64; 2] = [0.2, 2.8];

pub(crate) fn fingertip(q1: f64, q2: f64) -> [f64; 2] {
    let [l1, l2] = LINK_LENGTHS;
    [l1 * q1.cos() + l2 * (q1 + q2).cos(), l1 * q1.sin() + l2 * (q1 + q2).sin()]
}

fn state(q1: f64, q2: f64) -> Vec<f64> {
    let q1 = q1.clamp(-Q1_LIMIT, Q1_LIMIT);
    let q2 = q2.clamp(Q2_RANGE[0], Q2_RANGE[1]);
    let f = fingertip(q1, q2);
    vec![q1, q2, f[0], f[1]]
}

pub(super) fn step_exact(s: &[f64], a: &[f64]) -> Vec<f64> {
    if a[0] == 0.0 && a[1] == 0.0 {
        return s.to_vec();
    }
    state(s[0] + a[0], s[1] + a[1])
}

pub(super) fn step(s: &[f64], a: &[f64]) -> Vec<f32> {
    to_f32(&step_exact(s, a))
}

/// Elbow-up inverse kinematics of a fingertip position, clamped to the joint
/// ranges.
pub(crate) fn inverse_kinematics(p: [f64; 2]) -> [f64; 2] {
    let [l1, l2] = LINK_LENGTHS;
    let r2 = p[0] * p[0] + p[1] * p[1];
    let c2 = ((r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let q2 = c2.acos().clamp(Q2_RANGE[0], Q2_RANGE[1]);
    let mut q1 = p[1].atan2(p[0]) - (l2 * q2.sin()).atan2(l1 + l2 * q2.cos());
    if q1 > std::f64::consts::PI {
        q1 -= 2.0 * std::f64::consts::PI;
    } else if q1 <= -std::f64::consts::PI {
        q1 += 2.0 * std::f64::consts::PI;
    }
    [q1.clamp(-Q1_LIMIT, Q1_LIMIT), q2]
}

pub(super) fn expert(s: &[f64], g: &[f64], v: f64) -> Vec<f64> {
    let target = inverse_kinematics([g[2], g[3]]);
    vec![(target[0] - s[0]).clamp(-v, v), (target[1] - s[1]).clamp(-v, v)]
}

fn random_state(rng: &mut Rng) -> Vec<f64> {
    state(rng.random_range(-Q1_LIMIT..Q1_LIMIT), rng.random_range(Q2_RANGE[0]..Q2_RANGE[1]))
}

pub(super) fn sample_task(rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    (random_state(rng), random_state(rng))
}

pub(super) fn valid(s: &[f64]) -> bool {
    let f = fingertip(s[0], s[1]);
    s[0].abs() <= Q1_LIMIT + 1e-6
        && s[1] >= Q2_RANGE[0] - 1e-6
        && s[1] <= Q2_RANGE[1] + 1e-6
        && (f[0] - s[2]).abs() < 1e-5
        && (f[1] - s[3]).abs() < 1e-5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Env, EnvId};
    use crate::rng::SeedStream;

    #[test]
    fn zero_action_keeps_state() {
        let env = Env::new(EnvId::Reacher);
        let (s, _) = env.sample_task(&mut SeedStream::new(3).rng());
        assert_eq!(env.step(&s, &[0.0, 0.0]).unwrap(), s);
    }

    #[test]
    fn expert_is_zero_at_goal() {
        let env = Env::new(EnvId::Reacher);
        let mut rng = SeedStream::new(4).rng();
        for _ in 0..50 {
            let (s, _) = env.sample_task(&mut rng);
            let a = env.expert_action(&s, &s).unwrap();
            assert!(a.iter().all(|x| x.abs() < 1e-5), "{a:?}");
        }
    }

    #[test]
    fn inverse_kinematics_inverts_forward() {
        let mut rng = SeedStream::new(5).rng();
        for _ in 0..200 {
            let q = [rng.random_range(-Q1_LIMIT..Q1_LIMIT), rng.random_range(Q2_RANGE[0]..Q2_RANGE[1])];
            let back = inverse_kinematics(fingertip(q[0], q[1]));
            assert!((back[0] - q[0]).abs() < 1e-9 && (back[1] - q[1]).abs() < 1e-9, "{q:?} {back:?}");
        }
    }
}
