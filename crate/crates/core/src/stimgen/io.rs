use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{InputSpike, StimulusTimeline};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Row {
    time_ms: f64,
    source_id: u32,
}

/// Writes `time_ms,source_id` rows, e.g. to `lgn_trial_9.csv`.
pub fn write_spike_train(path: &Path, spikes: &[InputSpike]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in spikes {
        w.serialize(Row {
            time_ms: s.time,
            source_id: s.source,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_spike_train(path: &Path) -> Result<Vec<InputSpike>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize::<Row>() {
        let row = row?;
        out.push(InputSpike {
            time: row.time_ms,
            source: row.source_id,
        });
    }
    if out.windows(2).any(|w| w[0].time > w[1].time) {
        return Err(Error::Parse {
            path: path.to_owned(),
            message: "spike times must be sorted ascending".into(),
        });
    }
    Ok(out)
}

pub fn write_timeline_json(path: &Path, timeline: &StimulusTimeline) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(timeline)?).map_err(|e| Error::io(path, e))
}
