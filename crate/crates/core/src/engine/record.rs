use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NeuronId;

/// One recorded action potential, stored on the integer step grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Spike {
    pub step: u32,
    pub neuron: NeuronId,
}

/// Provenance attached to a record and repeated on every CSV row.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub run_id: String,
    /// `FLO`, `JAM` or `NONE`.
    pub attack: String,
    /// Attack instant (`625`) or window (`600:700`); empty for baselines.
    pub attack_param: String,
    pub lgn_trial: u32,
    pub bkg_trial: u32,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikeRecord {
    /// Sorted by step, then neuron id.
    pub events: Vec<Spike>,
    pub dt: f64,
    pub duration: f64,
    pub meta: RecordMeta,
}

impl SpikeRecord {
    pub fn new(dt: f64, duration: f64) -> Self {
        SpikeRecord {
            events: Vec::new(),
            dt,
            duration,
            meta: RecordMeta::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn time_of(&self, spike: &Spike) -> f64 {
        spike.step as f64 * self.dt
    }

    /// `(time_ms, neuron)` pairs.
    pub fn times(&self) -> impl Iterator<Item = (f64, NeuronId)> + '_ {
        self.events.iter().map(|s| (self.time_of(s), s.neuron))
    }

    /// Spikes emitted by one neuron, in step order.
    pub fn neuron_steps(&self, neuron: NeuronId) -> Vec<u32> {
        self.events
            .iter()
            .filter(|s| s.neuron == neuron)
            .map(|s| s.step)
            .collect()
    }

    /// Prefix of events strictly before `step`.
    pub fn before_step(&self, step: u32) -> &[Spike] {
        let end = self.events.partition_point(|s| s.step < step);
        &self.events[..end]
    }

    /// Events in `[from_step, to_step)`.
    pub fn in_steps(&self, from_step: u32, to_step: u32) -> &[Spike] {
        let lo = self.events.partition_point(|s| s.step < from_step);
        let hi = self.events.partition_point(|s| s.step < to_step);
        &self.events[lo..hi]
    }

    pub fn is_sorted(&self) -> bool {
        self.events.windows(2).all(|w| w[0] <= w[1])
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        self.write_csv_to(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Writes `time_ms,neuron_id,run_id,attack,attack_param,lgn_trial,bkg_trial`.
    pub fn write_csv_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "time_ms,neuron_id,run_id,attack,attack_param,lgn_trial,bkg_trial")?;
        let m = &self.meta;
        let suffix = format!(
            "{},{},{},{},{}",
            m.run_id, m.attack, m.attack_param, m.lgn_trial, m.bkg_trial
        );
        for s in &self.events {
            writeln!(out, "{},{},{}", self.time_of(s), s.neuron, suffix)?;
        }
        Ok(())
    }

    /// Reads a record written by [`SpikeRecord::write_csv`]. Times are mapped
    /// back onto the `dt` grid.
    pub fn read_csv(path: &Path, dt: f64, duration: f64) -> Result<SpikeRecord> {
        #[derive(Deserialize)]
        struct Row {
            time_ms: f64,
            neuron_id: NeuronId,
            run_id: String,
            attack: String,
            attack_param: String,
            lgn_trial: u32,
            bkg_trial: u32,
        }
        let mut r = csv::Reader::from_path(path)?;
        let mut rec = SpikeRecord::new(dt, duration);
        for (i, row) in r.deserialize::<Row>().enumerate() {
            let row = row?;
            let x = row.time_ms / dt;
            let step = x.round();
            if (x - step).abs() > 1e-6 || step < 0.0 {
                return Err(Error::Parse {
                    path: path.to_owned(),
                    message: format!("time {} is not on the {dt} ms grid", row.time_ms),
                });
            }
            if i == 0 {
                rec.meta = RecordMeta {
                    run_id: row.run_id,
                    attack: row.attack,
                    attack_param: row.attack_param,
                    lgn_trial: row.lgn_trial,
                    bkg_trial: row.bkg_trial,
                    seed: 0,
                };
            }
            rec.events.push(Spike {
                step: step as u32,
                neuron: row.neuron_id,
            });
        }
        if !rec.is_sorted() {
            return Err(Error::Parse {
                path: path.to_owned(),
                message: "spikes must be sorted by time".into(),
            });
        }
        Ok(rec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout_and_roundtrip() {
        let mut rec = SpikeRecord::new(0.25, 3000.0);
        rec.events = vec![Spike { step: 0, neuron: 3 }, Spike { step: 2501, neuron: 1 }];
        rec.meta = RecordMeta {
            run_id: "flash-FLO-625-f25-r0".into(),
            attack: "FLO".into(),
            attack_param: "625".into(),
            lgn_trial: 9,
            bkg_trial: 99,
            seed: 1,
        };
        let mut buf = Vec::new();
        rec.write_csv_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "time_ms,neuron_id,run_id,attack,attack_param,lgn_trial,bkg_trial\n\
             0,3,flash-FLO-625-f25-r0,FLO,625,9,99\n\
             625.25,1,flash-FLO-625-f25-r0,FLO,625,9,99\n"
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("spikes.csv");
        rec.write_csv(&p).unwrap();
        let back = SpikeRecord::read_csv(&p, 0.25, 3000.0).unwrap();
        assert_eq!(back.events, rec.events);
        assert_eq!(back.meta.attack_param, "625");
    }

    #[test]
    fn slicing() {
        let mut rec = SpikeRecord::new(0.25, 10.0);
        rec.events = (0..10).map(|i| Spike { step: i * 2, neuron: i }).collect();
        assert_eq!(rec.before_step(4).len(), 2);
        assert_eq!(rec.in_steps(4, 9).len(), 3);
        assert_eq!(rec.neuron_steps(3), vec![6]);
    }
}
