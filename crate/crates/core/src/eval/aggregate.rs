//! Aggregate rows, speedup ratios and the Pareto check, all pure functions
//! of episode records.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{action_jerk, monotonicity_fraction};
use super::EpisodeRecord;
use crate::env::EnvId;
use crate::error::{ensure, Error, Result};
use crate::nn::checkpoint::write_atomic;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub protocol: String,
    pub method: String,
    pub variant: String,
    pub env: EnvId,
    pub n_seeds: usize,
    pub n_episodes: usize,
    /// Mean over seeds of the per-seed success rate, in percent.
    pub success_rate: f64,
    /// Population standard deviation of the per-seed success rates.
    pub success_std: f64,
    pub ms_per_episode: Option<f64>,
    pub ms_per_plan: Option<f64>,
    pub predictor_calls_per_plan: f64,
    pub jerk_mean: Option<f64>,
    pub monotonicity_fraction: Option<f64>,
}

type Key = (String, String, String, EnvId);

fn key(r: &EpisodeRecord) -> Key {
    (r.protocol.clone(), r.method.clone(), r.variant.clone(), r.env_id)
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// One row per (protocol, method, variant, env) in order of first
/// appearance. Timing columns are empty when no record carries timings.
pub fn aggregate(records: &[EpisodeRecord]) -> Vec<AggregateRow> {
    let mut order: Vec<Key> = Vec::new();
    let mut groups: BTreeMap<Key, Vec<&EpisodeRecord>> = BTreeMap::new();
    for r in records {
        let k = key(r);
        groups.entry(k.clone()).or_insert_with(|| {
            order.push(k);
            Vec::new()
        }).push(r);
    }
    order
        .into_iter()
        .map(|k| {
            let rs = &groups[&k];
            let mut per_seed: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
            for r in rs {
                let e = per_seed.entry(r.seed).or_default();
                e.0 += r.success as usize;
                e.1 += 1;
            }
            let rates: Vec<f64> = per_seed.values().map(|&(s, n)| 100.0 * s as f64 / n as f64).collect();
            let m = mean(rates.iter().copied()).unwrap_or(0.0);
            let std = (rates.iter().map(|x| (x - m).powi(2)).sum::<f64>() / rates.len() as f64).sqrt();
            let timed = rs.iter().any(|r| r.timing.wall_ms_total > 0.0);
            let plans: u64 = rs.iter().map(|r| r.plan_calls).sum();
            let calls: u64 = rs.iter().map(|r| r.predictor_calls).sum();
            AggregateRow {
                protocol: k.0.clone(),
                method: k.1.clone(),
                variant: k.2.clone(),
                env: k.3,
                n_seeds: rates.len(),
                n_episodes: rs.len(),
                success_rate: m,
                success_std: std,
                ms_per_episode: if timed { mean(rs.iter().map(|r| r.timing.wall_ms_total)) } else { None },
                ms_per_plan: if timed { mean(rs.iter().flat_map(|r| r.timing.wall_ms_per_plan_call.iter().copied())) } else { None },
                predictor_calls_per_plan: if plans > 0 { calls as f64 / plans as f64 } else { 0.0 },
                jerk_mean: mean(rs.iter().filter_map(|r| action_jerk(&r.raw_actions))),
                monotonicity_fraction: monotonicity_fraction(rs.iter().copied()),
            }
        })
        .collect()
}

/// Serialize any rows as CSV with a header.
pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_atomic(path, &csv_bytes(rows)?)
}

pub fn read_aggregate_csv(path: &Path) -> Result<Vec<AggregateRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub env: EnvId,
    pub variant: String,
    pub method: String,
    pub baseline: String,
    /// Baseline over method, end-to-end per episode.
    pub wall_ratio: f64,
    /// Baseline over method, per plan call.
    pub plan_ratio: f64,
    /// Predictor calls per plan call, stated as counts (`"0 vs 45000 calls"`)
    /// because the ratio is infinite whenever the method calls none.
    pub calls: String,
}

/// Ratios of `baseline` to `method` for every (env, variant) where both
/// have timed rows. Rows with zero time are rejected.
pub fn speedup_summary(rows: &[AggregateRow], method: &str, baseline: &str) -> Result<Vec<SpeedupRow>> {
    let mut out = Vec::new();
    for m in rows.iter().filter(|r| r.method == method) {
        let Some(b) = rows.iter().find(|r| r.method == baseline && r.env == m.env && r.protocol == m.protocol && (r.variant == m.variant || r.variant.is_empty() || m.variant.is_empty())) else {
            continue;
        };
        let times = [m.ms_per_episode, m.ms_per_plan, b.ms_per_episode, b.ms_per_plan];
        ensure!(times.iter().all(|t| t.is_some()), "speedup needs timed rows for {} and {baseline} on {}", m.method, m.env);
        let [me, mp, be, bp] = times.map(Option::unwrap);
        ensure!(me > 0.0 && mp > 0.0 && be > 0.0 && bp > 0.0, "zero-time row for {} vs {baseline} on {}", m.method, m.env);
        out.push(SpeedupRow {
            env: m.env,
            variant: m.variant.clone(),
            method: method.to_string(),
            baseline: baseline.to_string(),
            wall_ratio: be / me,
            plan_ratio: bp / mp,
            calls: format!("{} vs {} calls", m.predictor_calls_per_plan, b.predictor_calls_per_plan),
        });
    }
    Ok(out)
}

/// Sweep rows that beat the reference on both axes: faster per plan call
/// and strictly more successful. An empty result means the upper-left
/// region of the success/latency plane is empty.
pub fn pareto_violations<'a>(rows: &'a [AggregateRow], env: EnvId, reference: &str, sweep: &str) -> Result<Vec<&'a AggregateRow>> {
    let r = rows
        .iter()
        .find(|r| r.env == env && r.method == reference)
        .ok_or_else(|| crate::error::contract(format!("no {reference} row for {env}")))?;
    let r_ms = r.ms_per_plan.ok_or_else(|| crate::error::contract("reference row has no timing"))?;
    Ok(rows
        .iter()
        .filter(|c| c.env == env && c.method == sweep)
        .filter(|c| c.ms_per_plan.is_some_and(|ms| ms < r_ms) && c.success_rate > r.success_rate)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::GoalTask;
    use crate::eval::Timing;

    fn rec(method: &str, seed: u64, success: bool, ms: f64) -> EpisodeRecord {
        let task = GoalTask { start_obs: vec![0.0, 0.0], goal_obs: vec![1.0, 1.0], goal_offset_steps: 1, budget: 1, episode: None, start_t: None };
        let mut r = EpisodeRecord::new(EnvId::PointMass, method, task);
        r.seed = seed;
        r.success = success;
        r.latent_goal_distances = vec![1.0];
        r.plan_calls = 2;
        r.predictor_calls = if method == "cem" { 90000 } else { 0 };
        r.timing = Timing { wall_ms_total: ms * 2.0, wall_ms_per_plan_call: vec![ms, ms] };
        r
    }

    #[test]
    fn per_seed_std() {
        let recs = vec![rec("cem", 42, true, 1.0), rec("cem", 42, false, 1.0), rec("cem", 123, true, 1.0), rec("cem", 123, true, 1.0)];
        let rows = aggregate(&recs);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].n_seeds, 2);
        assert_eq!(rows[0].success_rate, 75.0);
        assert_eq!(rows[0].success_std, 25.0);
        assert_eq!(rows[0].predictor_calls_per_plan, 45000.0);
        let single = aggregate(&recs[..2]);
        assert_eq!(single[0].success_std, 0.0);
    }

    #[test]
    fn speedups() {
        let recs = vec![rec("gc_idm", 42, true, 2.0), rec("cem", 42, true, 200.0)];
        let rows = aggregate(&recs);
        let s = speedup_summary(&rows, "gc_idm", "cem").unwrap();
        assert_eq!(s[0].plan_ratio, 100.0);
        assert_eq!(s[0].calls, "0 vs 45000 calls");
        let same = speedup_summary(&rows, "cem", "cem").unwrap();
        assert_eq!(same[0].wall_ratio, 1.0);
        let mut zero = rows.clone();
        zero[0].ms_per_plan = Some(0.0);
        assert!(speedup_summary(&zero, "gc_idm", "cem").is_err());
    }

    #[test]
    fn pareto_region() {
        let mut recs = vec![rec("gc_idm", 42, true, 5.0), rec("gc_idm", 42, false, 5.0)];
        recs.push(rec("cem", 42, true, 1.0));
        let rows = aggregate(&recs);
        assert_eq!(pareto_violations(&rows, EnvId::PointMass, "gc_idm", "cem").unwrap().len(), 1);
        let rows = aggregate(&recs[..2]);
        assert!(pareto_violations(&rows, EnvId::PointMass, "gc_idm", "cem").unwrap().is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let rows = aggregate(&[rec("gc_idm", 42, true, 2.0)]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_csv(&p, &rows).unwrap();
        assert_eq!(read_aggregate_csv(&p).unwrap(), rows);
    }
}
