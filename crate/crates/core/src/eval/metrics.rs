//! Trajectory-quality measures computed from executed actions and recorded
//! latent distances.

use super::EpisodeRecord;

/// Mean L2 norm of the second finite difference `a_t - 2 a_{t-1} + a_{t-2}`
/// over the `T - 2` interior points. `None` for fewer than three actions.
pub fn action_jerk(actions: &[Vec<f32>]) -> Option<f64> {
    if actions.len() < 3 {
        return None;
    }
    let total: f64 = actions
        .windows(3)
        .map(|w| {
            w[0].iter()
                .zip(&w[1])
                .zip(&w[2])
                .map(|((&a, &b), &c)| (c as f64 - 2.0 * b as f64 + a as f64).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Some(total / (actions.len() - 2) as f64)
}

/// Strictly decreasing at every consecutive pair; ties count as violations.
/// `None` for fewer than two distances.
pub fn latent_monotonicity(distances: &[f64]) -> Option<bool> {
    if distances.len() < 2 {
        return None;
    }
    Some(distances.windows(2).all(|w| w[1] < w[0]))
}

/// Share of records whose latent distance decreases at every step; records
/// without a single step are skipped. `None` if nothing is left.
pub fn monotonicity_fraction<'a>(records: impl IntoIterator<Item = &'a EpisodeRecord>) -> Option<f64> {
    let flags: Vec<bool> = records.into_iter().filter_map(|r| latent_monotonicity(&r.latent_goal_distances)).collect();
    if flags.is_empty() {
        return None;
    }
    Some(flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(v: &[f32]) -> Vec<Vec<f32>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn jerk_hand_values() {
        assert_eq!(action_jerk(&seq(&[0.3; 7])), Some(0.0));
        assert_eq!(action_jerk(&seq(&[0.0, 0.0, 1.0])), Some(1.0));
        for t in 3..9 {
            let alt: Vec<f32> = (0..t).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
            assert_eq!(action_jerk(&seq(&alt)), Some(4.0));
        }
        assert_eq!(action_jerk(&seq(&[1.0, 2.0])), None);
    }

    #[test]
    fn jerk_is_l2_over_dimensions() {
        let a = vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![3.0, 4.0]];
        assert_eq!(action_jerk(&a), Some(5.0));
    }

    #[test]
    fn monotonicity_rules() {
        assert_eq!(latent_monotonicity(&[3.0, 2.0, 1.0]), Some(true));
        assert_eq!(latent_monotonicity(&[3.0, 3.0, 1.0]), Some(false));
        assert_eq!(latent_monotonicity(&[3.0]), None);
    }

    #[test]
    fn fraction_averages_flags() {
        use crate::env::{EnvId, GoalTask};
        let task = GoalTask { start_obs: vec![0.0, 0.0], goal_obs: vec![0.0, 0.0], goal_offset_steps: 1, budget: 1, episode: None, start_t: None };
        let recs: Vec<EpisodeRecord> = [true, false, true, true]
            .iter()
            .map(|&ok| {
                let mut r = EpisodeRecord::new(EnvId::PointMass, "x", task.clone());
                r.latent_goal_distances = if ok { vec![2.0, 1.0] } else { vec![1.0, 2.0] };
                r
            })
            .collect();
        assert_eq!(monotonicity_fraction(&recs), Some(0.75));
    }
}
