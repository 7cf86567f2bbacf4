use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{AnomalyConfig, EnvError, Trajectory, Transition};

/// Reads any JSON document (models, policies, configs) from a file.
pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T, EnvError> {
    let reader = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(reader)?)
}

/// Writes a value as pretty-printed JSON.
pub fn save_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<(), EnvError> {
    let mut writer = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

/// One line of the trajectory JSONL format: a transition tagged with its
/// trajectory id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionLine {
    pub trajectory: usize,
    pub terminal: bool,
    #[serde(flatten)]
    pub transition: Transition,
    /// Present when the trajectory carries an anomaly log.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anomaly_event: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anomaly_agent: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anomaly_probability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forced_action: Option<usize>,
    /// State after the trajectory's last transition, repeated on every line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_state: Option<usize>,
}

pub fn write_trajectories_jsonl<W: Write>(mut writer: W, trajectories: &[Trajectory]) -> Result<(), EnvError> {
    for (id, traj) in trajectories.iter().enumerate() {
        for (k, step) in traj.steps.iter().enumerate() {
            let a = traj.anomaly.as_ref();
            let line = TransitionLine {
                trajectory: id,
                terminal: traj.terminal,
                transition: step.clone(),
                anomaly_event: a.map(|a| a.event_log[k]),
                anomaly_agent: a.map(|a| a.agent_index),
                anomaly_probability: a.map(|a| a.probability),
                forced_action: a.map(|a| a.forced_action),
                final_state: traj.final_state,
            };
            serde_json::to_writer(&mut writer, &line)?;
            writer.write_all(b"\n")?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Inverse of [`write_trajectories_jsonl`]; trajectories come back ordered by id.
pub fn read_trajectories_jsonl<R: BufRead>(reader: R) -> Result<Vec<Trajectory>, EnvError> {
    let mut by_id: BTreeMap<usize, Trajectory> = BTreeMap::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TransitionLine = serde_json::from_str(&line)?;
        let traj = by_id.entry(rec.trajectory).or_insert_with(|| Trajectory {
            steps: Vec::new(),
            terminal: rec.terminal,
            anomaly: None,
            final_state: rec.final_state,
        });
        if let (Some(event), Some(agent), Some(p), Some(forced)) =
            (rec.anomaly_event, rec.anomaly_agent, rec.anomaly_probability, rec.forced_action)
        {
            traj.anomaly
                .get_or_insert_with(|| AnomalyConfig::new(agent, p, forced))
                .event_log
                .push(event);
        }
        traj.steps.push(rec.transition);
    }
    Ok(by_id.into_values().collect())
}
