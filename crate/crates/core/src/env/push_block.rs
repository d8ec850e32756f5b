//! A disc pusher moving a disc block by quasi-static contact. State and
//! observation are `(pusher_x, pusher_y, block_x, block_y)`.

use rand::Rng as _;

use super::{clip_vec, to_f32};
use crate::rng::Rng;

pub const PUSHER_RADIUS: f64 = 0.03;
pub const BLOCK_RADIUS: f64 = 0.06;
const CONTACT: f64 = PUSHER_RADIUS + BLOCK_RADIUS;

fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

pub(super) fn step(s: &[f64], a: &[f64]) -> Vec<f32> {
    to_f32(&step_exact(s, a))
}

pub(super) fn step_exact(s: &[f64], a: &[f64]) -> Vec<f64> {
    let clampp = |v: f64| v.clamp(PUSHER_RADIUS, 1.0 - PUSHER_RADIUS);
    let clampb = |v: f64| v.clamp(BLOCK_RADIUS, 1.0 - BLOCK_RADIUS);
    let mut p = [clampp(s[0] + a[0]), clampp(s[1] + a[1])];
    let mut b = [s[2], s[3]];
    let d = [b[0] - p[0], b[1] - p[1]];
    let dist = norm(d);
    if dist < CONTACT {
        // push the block out along the contact normal
        let n = if dist > 1e-12 { [d[0] / dist, d[1] / dist] } else { [a[0] / norm([a[0], a[1]]).max(1e-12), a[1] / norm([a[0], a[1]]).max(1e-12)] };
        b = [clampb(p[0] + n[0] * CONTACT), clampb(p[1] + n[1] * CONTACT)];
        // a block held by the boundary pushes the pusher back
        let d2 = [b[0] - p[0], b[1] - p[1]];
        let dist2 = norm(d2);
        if dist2 < CONTACT && dist2 > 1e-12 {
            p = [clampp(b[0] - d2[0] / dist2 * CONTACT), clampp(b[1] - d2[1] / dist2 * CONTACT)];
        }
    }
    vec![p[0], p[1], b[0], b[1]]
}

/// Radius at which the expert circles the block to get behind it.
const ORBIT: f64 = CONTACT + 0.04;

fn wrap(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let r = (a + std::f64::consts::PI).rem_euclid(tau);
    r - std::f64::consts::PI
}

/// Push the block along the block->goal ray: circle around it at a safe
/// radius until behind it, close in, then drive through its center.
pub(super) fn expert(s: &[f64], g: &[f64], v: f64) -> Vec<f64> {
    let p = [s[0], s[1]];
    let b = [s[2], s[3]];
    let to_goal = [g[2] - b[0], g[3] - b[1]];
    let dg = norm(to_goal);
    if dg < 1e-9 {
        return vec![0.0, 0.0];
    }
    let u = [to_goal[0] / dg, to_goal[1] / dg];
    let rel = [p[0] - b[0], p[1] - b[1]];
    let dist = norm(rel);
    let behind_angle = (-u[1]).atan2(-u[0]);
    let theta = wrap(rel[1].atan2(rel[0]) - behind_angle);
    let contact_pt = [b[0] - u[0] * CONTACT, b[1] - u[1] * CONTACT];
    let cmd = if theta.abs() < 0.3 && dist < CONTACT + 0.02 {
        let speed = dg.min(v);
        [contact_pt[0] - p[0] + u[0] * speed, contact_pt[1] - p[1] + u[1] * speed]
    } else if theta.abs() < 0.6 {
        let stage = [b[0] - u[0] * (CONTACT + 0.005), b[1] - u[1] * (CONTACT + 0.005)];
        [stage[0] - p[0], stage[1] - p[1]]
    } else {
        let phi = behind_angle + theta - theta.signum() * theta.abs().min(0.35);
        let target = [b[0] + ORBIT * phi.cos(), b[1] + ORBIT * phi.sin()];
        [target[0] - p[0], target[1] - p[1]]
    };
    clip_vec(cmd, v).to_vec()
}

pub(super) fn sample_task(rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let block = [rng.random_range(0.25..0.75), rng.random_range(0.25..0.75)];
    let pusher = loop {
        let p = [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)];
        if norm([p[0] - block[0], p[1] - block[1]]) > CONTACT + 0.02 {
            break p;
        }
    };
    let goal_block = [rng.random_range(0.25..0.75), rng.random_range(0.25..0.75)];
    let goal_pusher = [
        (goal_block[0] - (goal_block[0] - block[0]).signum() * 0.1).clamp(0.05, 0.95),
        goal_block[1],
    ];
    (
        vec![pusher[0], pusher[1], block[0], block[1]],
        vec![goal_pusher[0], goal_pusher[1], goal_block[0], goal_block[1]],
    )
}

pub(super) fn valid(s: &[f64]) -> bool {
    s.iter().all(|x| (0.0..=1.0).contains(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Env, EnvId};

    #[test]
    fn contact_translates_block_along_normal() {
        let env = Env::new(EnvId::PushBlock);
        // pusher left of block, touching, moving right
        let s = [0.41f32, 0.5, 0.5, 0.5];
        let next = env.step(&s, &[0.02, 0.0]).unwrap();
        assert!((next[0] - 0.43).abs() < 1e-6);
        assert!((next[2] as f64 - (0.43 + CONTACT)).abs() < 1e-6);
        assert!((next[3] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn free_motion_leaves_block() {
        let env = Env::new(EnvId::PushBlock);
        let s = [0.1f32, 0.1, 0.5, 0.5];
        let next = env.step(&s, &[0.02, 0.01]).unwrap();
        assert_eq!(&next[2..], &s[2..]);
    }
}
