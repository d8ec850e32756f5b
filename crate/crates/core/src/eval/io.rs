//! JSONL episode records and their wall-clock sidecar.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EpisodeRecord, Timing};
use crate::env::EnvId;
use crate::error::{Error, Result};
use crate::nn::checkpoint::write_atomic;

/// One sidecar line, in the same order as the record file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingLine {
    pub env_id: EnvId,
    pub method: String,
    pub variant: String,
    pub seed: u64,
    pub task_index: usize,
    pub wall_ms_total: f64,
    pub wall_ms_per_plan_call: Vec<f64>,
}

/// `runs/headline.jsonl` -> `runs/headline.timing.jsonl`
pub fn timing_path(records: &Path) -> PathBuf {
    records.with_extension("timing.jsonl")
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, &it)?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Write records and their timing sidecar, each atomically.
pub fn write_records(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    write_atomic(path, &jsonl(records)?)?;
    let lines = records.iter().map(|r| TimingLine {
        env_id: r.env_id,
        method: r.method.clone(),
        variant: r.variant.clone(),
        seed: r.seed,
        task_index: r.task_index,
        wall_ms_total: r.timing.wall_ms_total,
        wall_ms_per_plan_call: r.timing.wall_ms_per_plan_call.clone(),
    });
    write_atomic(&timing_path(path), &jsonl(lines)?)
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path, kind: &'static str) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => e.into(),
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format { kind, msg: format!("{}:{}: {e}", path.display(), i + 1) })?);
    }
    Ok(out)
}

/// Read records and, when the sidecar exists, attach their timings.
pub fn read_records(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let mut records: Vec<EpisodeRecord> = read_lines(path, "record")?;
    for r in &records {
        r.validate()?;
    }
    let side = timing_path(path);
    if side.exists() {
        let lines: Vec<TimingLine> = read_lines(&side, "timing")?;
        if lines.len() != records.len() {
            return Err(Error::Format { kind: "timing", msg: format!("{} lines for {} records", lines.len(), records.len()) });
        }
        for (r, t) in records.iter_mut().zip(lines) {
            if (t.env_id, t.seed, t.task_index) != (r.env_id, r.seed, r.task_index) || t.method != r.method || t.variant != r.variant {
                return Err(Error::Format { kind: "timing", msg: format!("sidecar out of step with record {} of {}", r.task_index, r.method) });
            }
            r.timing = Timing { wall_ms_total: t.wall_ms_total, wall_ms_per_plan_call: t.wall_ms_per_plan_call };
        }
    }
    Ok(records)
}

impl EpisodeRecord {
    /// Structural invariants of a stored record.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Format { kind: "record", msg });
        if self.schema_version != super::record::RECORD_SCHEMA_VERSION {
            return bad(format!("schema version {}", self.schema_version));
        }
        if self.latent_goal_distances.len() != self.steps_taken + 1 {
            return bad(format!("{} distances for {} steps", self.latent_goal_distances.len(), self.steps_taken));
        }
        if self.raw_actions.len() != self.steps_taken {
            return bad(format!("{} actions for {} steps", self.raw_actions.len(), self.steps_taken));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::GoalTask;

    #[test]
    fn round_trip_with_sidecar() {
        let task = GoalTask { start_obs: vec![0.1, 0.2], goal_obs: vec![0.3, 0.4], goal_offset_steps: 5, budget: 10, episode: Some(1), start_t: Some(2) };
        let mut r = EpisodeRecord::new(EnvId::TwoRoom, "gc_idm", task);
        r.push_step(vec![0.01, -0.02], 0.5);
        r.latent_goal_distances.insert(0, 1.0);
        r.timing = Timing { wall_ms_total: 3.5, wall_ms_per_plan_call: vec![1.25] };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        write_records(&path, &[r.clone(), r.clone()]).unwrap();
        let back = read_records(&path).unwrap();
        assert_eq!(back, vec![r.clone(), r]);
        assert_eq!(back[0].timing.wall_ms_per_plan_call, vec![1.25]);
        assert!(timing_path(&path).ends_with("x.timing.jsonl"));
    }
}
