//! Two rooms split by a vertical wall at `x = 0.5` with a door. The agent is
//! a square of half-width [`AGENT_RADIUS`] driven by velocity commands.
//!
//! Motion is swept against the wall boxes expanded by the agent radius: the
//! agent travels along its displacement until first contact, then slides along
//! the blocking face with the remaining tangential motion.

use rand::Rng as _;

use super::clip_vec;
use crate::rng::Rng;

pub const WALL_X: [f64; 2] = [0.495, 0.505];
/// Door opening in the wall, as a y interval.
pub const DOOR_Y: [f64; 2] = [0.45, 0.55];
pub const AGENT_RADIUS: f64 = 0.004;

/// Axis-aligned box with open interior, `[lo, hi]` per axis.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Aabb {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Aabb {
    fn contains_strict(&self, p: [f64; 2]) -> bool {
        (0..2).all(|k| p[k] > self.lo[k] && p[k] < self.hi[k])
    }
}

/// Wall segments grown by the agent radius; the agent center must stay out of
/// their interiors.
pub(crate) fn obstacles() -> [Aabb; 2] {
    let r = AGENT_RADIUS;
    [
        Aabb { lo: [WALL_X[0] - r, -1.0], hi: [WALL_X[1] + r, DOOR_Y[0] + r] },
        Aabb { lo: [WALL_X[0] - r, DOOR_Y[1] - r], hi: [WALL_X[1] + r, 2.0] },
    ]
}

/// The unexpanded wall segments.
pub fn wall_segments() -> [[f64; 4]; 2] {
    [[WALL_X[0], 0.0, WALL_X[1], DOOR_Y[0]], [WALL_X[0], DOOR_Y[1], WALL_X[1], 1.0]]
}

/// Earliest entry of the segment `p + t d`, `t in [0, 1]`, into the open box.
/// Returns the entry time and the axis whose face is hit.
fn entry(b: &Aabb, p: [f64; 2], d: [f64; 2]) -> Option<(f64, usize)> {
    let mut t_in = f64::NEG_INFINITY;
    let mut t_out = f64::INFINITY;
    let mut axis = 0;
    for k in 0..2 {
        if d[k] == 0.0 {
            if p[k] <= b.lo[k] || p[k] >= b.hi[k] {
                return None;
            }
        } else {
            let (t0, t1) = {
                let a = (b.lo[k] - p[k]) / d[k];
                let c = (b.hi[k] - p[k]) / d[k];
                if a < c { (a, c) } else { (c, a) }
            };
            if t0 > t_in {
                t_in = t0;
                axis = k;
            }
            t_out = t_out.min(t1);
        }
    }
    (t_in < t_out && t_in < 1.0 && t_out > 0.0 && t_in >= -1e-12).then_some((t_in.max(0.0), axis))
}

fn face(b: &Aabb, axis: usize, d: f64) -> f64 {
    if d > 0.0 { b.lo[axis] } else { b.hi[axis] }
}

pub(crate) fn sweep(p: [f64; 2], d: [f64; 2]) -> [f64; 2] {
    let obs = obstacles();
    let mut pos = p;
    let mut t_left = 1.0;
    // axis and box of the face currently being slid along
    let mut contact: Option<(usize, Aabb)> = None;
    for _ in 0..8 {
        if t_left <= 0.0 {
            break;
        }
        let mut vel = d;
        if let Some((k, _)) = contact {
            vel[k] = 0.0;
        }
        let t_release = contact.map_or(f64::INFINITY, |(k, b)| {
            let j = 1 - k;
            if vel[j] > 0.0 {
                (b.hi[j] - pos[j]) / vel[j]
            } else if vel[j] < 0.0 {
                (b.lo[j] - pos[j]) / vel[j]
            } else {
                f64::INFINITY
            }
        });
        let seg = [vel[0] * t_left, vel[1] * t_left];
        let hit = obs
            .iter()
            .filter_map(|b| entry(b, pos, seg).map(|(s, k)| (s * t_left, k, *b)))
            .min_by(|a, b| a.0.total_cmp(&b.0));
        match hit {
            Some((t, k, b)) if t <= t_release => {
                pos = [pos[0] + t * vel[0], pos[1] + t * vel[1]];
                pos[k] = face(&b, k, vel[k]);
                t_left -= t;
                if contact.is_some_and(|(c, _)| c != k) {
                    break;
                }
                contact = Some((k, b));
            }
            _ if t_release < t_left => {
                let (k, b) = contact.expect("release implies contact");
                let j = 1 - k;
                pos = [pos[0] + t_release * vel[0], pos[1] + t_release * vel[1]];
                pos[j] = if vel[j] > 0.0 { b.hi[j] } else { b.lo[j] };
                t_left -= t_release;
                contact = None;
            }
            _ => {
                pos = [pos[0] + t_left * vel[0], pos[1] + t_left * vel[1]];
                break;
            }
        }
    }
    let lo = AGENT_RADIUS;
    let hi = 1.0 - AGENT_RADIUS;
    [pos[0].clamp(lo, hi), pos[1].clamp(lo, hi)]
}

/// Round to `f32`, nudging outward if rounding landed inside an obstacle.
fn round_outside(p: [f64; 2]) -> Vec<f32> {
    let mut out = [p[0] as f32, p[1] as f32];
    for b in obstacles() {
        let q = [out[0] as f64, out[1] as f64];
        if b.contains_strict(q) {
            // push out through the nearest face
            let gaps = [q[0] - b.lo[0], b.hi[0] - q[0], q[1] - b.lo[1], b.hi[1] - q[1]];
            let (i, _) = gaps.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("four faces");
            let k = i / 2;
            out[k] = if i % 2 == 0 {
                let mut v = b.lo[k] as f32;
                while v as f64 > b.lo[k] {
                    v = v.next_down();
                }
                v
            } else {
                let mut v = b.hi[k] as f32;
                while (v as f64) < b.hi[k] {
                    v = v.next_up();
                }
                v
            };
        }
    }
    out.to_vec()
}

pub(super) fn step(s: &[f64], a: &[f64]) -> Vec<f32> {
    round_outside(sweep([s[0], s[1]], [a[0], a[1]]))
}

/// Next state before rounding to observation precision.
pub(super) fn step_exact(s: &[f64], a: &[f64]) -> Vec<f64> {
    sweep([s[0], s[1]], [a[0], a[1]]).to_vec()
}

/// Approach and exit points on either side of the door center.
const DOOR_STANDOFF: f64 = 0.05;
/// Half-height of the band around the door center in which the expert drives
/// straight through.
const DOOR_BAND: f64 = 0.02;

fn door_center() -> [f64; 2] {
    [0.5 * (WALL_X[0] + WALL_X[1]), 0.5 * (DOOR_Y[0] + DOOR_Y[1])]
}

/// Current navigation target: the goal itself when it is in the agent's room,
/// otherwise the door approach point, then the exit point beyond the door.
pub(crate) fn waypoint(s: [f64; 2], g: [f64; 2]) -> [f64; 2] {
    let c = door_center();
    let left = s[0] < c[0];
    if left == (g[0] < c[0]) {
        return g;
    }
    let dir = if left { 1.0 } else { -1.0 };
    let approach = [c[0] - dir * DOOR_STANDOFF, c[1]];
    let aligned = (s[1] - c[1]).abs() <= DOOR_BAND && (s[0] - c[0]).abs() <= DOOR_STANDOFF + 1e-3;
    if aligned {
        [c[0] + dir * DOOR_STANDOFF, c[1]]
    } else {
        approach
    }
}

pub(super) fn expert(s: &[f64], g: &[f64], v: f64) -> Vec<f64> {
    let w = waypoint([s[0], s[1]], [g[0], g[1]]);
    clip_vec([w[0] - s[0], w[1] - s[1]], v).to_vec()
}

fn random_point(rng: &mut Rng) -> Vec<f64> {
    loop {
        let p: [f64; 2] = [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)];
        if (p[0] - 0.5).abs() > 0.03 {
            return p.to_vec();
        }
    }
}

pub(super) fn sample_task(rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    (random_point(rng), random_point(rng))
}

pub(super) fn valid(s: &[f64]) -> bool {
    let p = [s[0], s[1]];
    s.iter().all(|x| (0.0..=1.0).contains(x)) && obstacles().iter().all(|b| !b.contains_strict(p))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::env::{Env, EnvId};

    /// Reference motion: many tiny axis-separated moves, each rejected if it
    /// would enter an obstacle.
    fn substep_oracle(p: [f64; 2], d: [f64; 2]) -> [f64; 2] {
        let n = 20_000;
        let mut pos = p;
        for _ in 0..n {
            for k in 0..2 {
                let mut next = pos;
                next[k] += d[k] / n as f64;
                if obstacles().iter().all(|b| !b.contains_strict(next)) {
                    pos = next;
                }
            }
        }
        [pos[0].clamp(AGENT_RADIUS, 1.0 - AGENT_RADIUS), pos[1].clamp(AGENT_RADIUS, 1.0 - AGENT_RADIUS)]
    }

    #[test]
    fn wall_face_clamp() {
        let env = Env::with_bound(EnvId::TwoRoom, 0.1).unwrap();
        let next = env.step(&[0.49, 0.2], &[0.1, 0.0]).unwrap();
        let face = WALL_X[0] - AGENT_RADIUS;
        assert!((next[0] as f64 - face).abs() < 1e-6, "{next:?}");
        assert!(next[0] as f64 <= face);
        assert_eq!(next[1], 0.2);
        let oracle = substep_oracle([0.49, 0.2], [0.1, 0.0]);
        assert!((oracle[0] - next[0] as f64).abs() < 1e-5);
    }

    #[test]
    fn door_passage() {
        let env = Env::with_bound(EnvId::TwoRoom, 0.1).unwrap();
        let next = env.step(&[0.45, 0.5], &[0.1, 0.0]).unwrap();
        assert!((next[0] - 0.55).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn sweep_matches_substep_oracle(x in 0.3f64..0.7, y in 0.3f64..0.7, dx in -0.1f64..0.1, dy in -0.1f64..0.1) {
            prop_assume!(obstacles().iter().all(|b| !b.contains_strict([x, y])));
            let fast = sweep([x, y], [dx, dy]);
            let slow = substep_oracle([x, y], [dx, dy]);
            prop_assert!((fast[0] - slow[0]).abs() < 2e-3 && (fast[1] - slow[1]).abs() < 2e-3,
                "fast {:?} slow {:?}", fast, slow);
        }

        #[test]
        fn wall_is_impermeable(seq in proptest::collection::vec((-1.0f32..1.0, -1.0f32..1.0), 1..60),
                               x in 0.05f32..0.95, y in 0.05f32..0.95) {
            let env = Env::new(EnvId::TwoRoom);
            let mut s = vec![x, y];
            prop_assume!(env.is_valid_state(&s));
            for (ax, ay) in seq {
                s = env.step(&s, &[ax, ay]).unwrap();
                prop_assert!(env.is_valid_state(&s), "agent inside wall at {:?}", s);
            }
        }
    }
}
