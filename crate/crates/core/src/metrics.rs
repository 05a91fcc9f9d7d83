//! Impact metrics over paired baseline and attacked spike records.
//!
//! Activity is aggregated into half-open 100 ms intervals: a spike at
//! 299.75 ms belongs to interval index 2, one at 300.0 ms to index 3.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::SpikeRecord;
use crate::error::{Error, Result};

pub const DEFAULT_INTERVAL_MS: f64 = 100.0;
pub const DEFAULT_RECOVERY_TOLERANCE: f64 = 0.05;
pub const DEFAULT_REBOUND_Z: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalSeries {
    pub interval_ms: f64,
    pub values: Vec<f64>,
    pub label: String,
}

impl IntervalSeries {
    pub fn new(interval_ms: f64, values: Vec<f64>, label: impl Into<String>) -> Self {
        IntervalSeries {
            interval_ms,
            values,
            label: label.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Number of intervals covering `duration`; a trailing partial interval counts.
pub fn n_intervals(duration: f64, interval_ms: f64) -> usize {
    (duration / interval_ms - 1e-9).ceil().max(0.0) as usize
}

/// Interval index of time `t`.
pub fn interval_of(t: f64, interval_ms: f64) -> usize {
    (t / interval_ms + 1e-9).floor().max(0.0) as usize
}

/// Spike counts per interval.
pub fn interval_counts(record: &SpikeRecord, interval_ms: f64) -> IntervalSeries {
    let n = n_intervals(record.duration, interval_ms);
    let mut values = vec![0.0; n];
    for spike in &record.events {
        let k = interval_of(record.time_of(spike), interval_ms);
        if k >= values.len() {
            values.resize(k + 1, 0.0);
        }
        values[k] += 1.0;
    }
    IntervalSeries::new(interval_ms, values, "counts")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub delta: Vec<f64>,
    /// `None` where the baseline is zero.
    pub percent: Vec<Option<f64>>,
}

/// `attacked - baseline` per interval, with the change relative to baseline.
pub fn impact_delta(attacked: &IntervalSeries, baseline: &IntervalSeries) -> Result<Delta> {
    if attacked.len() != baseline.len() {
        return Err(Error::Usage(format!(
            "series lengths differ: attacked {} vs baseline {}",
            attacked.len(),
            baseline.len()
        )));
    }
    let delta: Vec<f64> = attacked
        .values
        .iter()
        .zip(&baseline.values)
        .map(|(a, b)| a - b)
        .collect();
    let percent = delta
        .iter()
        .zip(&baseline.values)
        .map(|(d, &b)| (b > 0.0).then(|| 100.0 * d / b))
        .collect();
    Ok(Delta { delta, percent })
}

/// Baseline implied by a reported absolute and relative change.
pub fn implied_baseline(delta: f64, percent: f64) -> f64 {
    delta / percent * 100.0
}

/// Share of attacked-run spikes per interval that have no baseline spike of
/// the same neuron at exactly the same step.
pub fn shift_percentage(attacked: &SpikeRecord, baseline: &SpikeRecord, interval_ms: f64) -> IntervalSeries {
    shift_percentage_with(attacked, baseline, interval_ms, 0)
}

/// [`shift_percentage`] where a baseline spike within `tolerance_steps` steps
/// counts as a match.
pub fn shift_percentage_with(
    attacked: &SpikeRecord,
    baseline: &SpikeRecord,
    interval_ms: f64,
    tolerance_steps: u32,
) -> IntervalSeries {
    let reference: HashSet<(u32, u32)> = baseline.events.iter().map(|s| (s.neuron, s.step)).collect();
    let matched = |neuron: u32, step: u32| {
        let lo = step.saturating_sub(tolerance_steps);
        let hi = step.saturating_add(tolerance_steps);
        (lo..=hi).any(|s| reference.contains(&(neuron, s)))
    };
    let n = n_intervals(attacked.duration, interval_ms);
    let mut total = vec![0u64; n];
    let mut shifted = vec![0u64; n];
    for spike in &attacked.events {
        let k = interval_of(attacked.time_of(spike), interval_ms);
        if k >= total.len() {
            total.resize(k + 1, 0);
            shifted.resize(k + 1, 0);
        }
        total[k] += 1;
        if !matched(spike.neuron, spike.step) {
            shifted[k] += 1;
        }
    }
    let values = total
        .iter()
        .zip(&shifted)
        .map(|(&t, &s)| if t == 0 { 0.0 } else { 100.0 * s as f64 / t as f64 })
        .collect();
    IntervalSeries::new(interval_ms, values, "shift_pct")
}

/// Smallest `m >= 1` such that intervals `end + m` and `end + m + 1` both
/// satisfy `|delta| <= tolerance * baseline`; `None` if the series ends first.
pub fn recovery_time(delta: &[f64], baseline: &[f64], attack_end_interval: usize, tolerance: f64) -> Option<usize> {
    let n = delta.len().min(baseline.len());
    let ok = |k: usize| delta[k].abs() <= tolerance * baseline[k];
    (1..)
        .map(|m| (m, attack_end_interval + m))
        .take_while(|&(_, k)| k + 1 < n)
        .find(|&(_, k)| ok(k) && ok(k + 1))
        .map(|(m, _)| m)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReboundPeak {
    pub interval: usize,
    /// `attacked - baseline` in spikes.
    pub magnitude: f64,
    /// Magnitude in units of the noise scale.
    pub z: f64,
}

/// First interval after `window_end_interval` where the attacked count exceeds
/// the baseline by more than `z` times `noise_sd`.
pub fn rebound_detect(
    attacked: &IntervalSeries,
    baseline: &IntervalSeries,
    noise_sd: &[f64],
    window_end_interval: usize,
    z: f64,
) -> Option<ReboundPeak> {
    let n = attacked.len().min(baseline.len()).min(noise_sd.len());
    (window_end_interval + 1..n).find_map(|k| {
        let d = attacked.values[k] - baseline.values[k];
        let sd = noise_sd[k];
        let score = if sd > 0.0 { d / sd } else if d > 0.0 { f64::INFINITY } else { 0.0 };
        (d > 0.0 && score > z).then_some(ReboundPeak {
            interval: k,
            magnitude: d,
            z: score,
        })
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub interval_ms: f64,
    pub shift_tolerance_steps: u32,
    pub recovery_tolerance: f64,
    pub rebound_z: f64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            interval_ms: DEFAULT_INTERVAL_MS,
            shift_tolerance_steps: 0,
            recovery_tolerance: DEFAULT_RECOVERY_TOLERANCE,
            rebound_z: DEFAULT_REBOUND_Z,
        }
    }
}

/// Mean and sample standard deviation per interval across repetitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub mean: IntervalSeries,
    pub sd: Vec<f64>,
}

impl SeriesStats {
    pub fn from_series(series: &[IntervalSeries], label: &str) -> Self {
        let interval_ms = series.first().map_or(DEFAULT_INTERVAL_MS, |s| s.interval_ms);
        let n = series.iter().map(IntervalSeries::len).max().unwrap_or(0);
        let reps = series.len() as f64;
        let at = |s: &IntervalSeries, k: usize| s.values.get(k).copied().unwrap_or(0.0);
        let mut mean = vec![0.0; n];
        let mut sd = vec![0.0; n];
        for k in 0..n {
            let m = series.iter().map(|s| at(s, k)).sum::<f64>() / reps;
            mean[k] = m;
            if series.len() > 1 {
                let ss: f64 = series.iter().map(|s| (at(s, k) - m).powi(2)).sum();
                sd[k] = (ss / (reps - 1.0)).sqrt();
            }
        }
        SeriesStats {
            mean: IntervalSeries::new(interval_ms, mean, label),
            sd,
        }
    }
}

/// Which baseline each attacked repetition was compared against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pairing {
    pub baseline_run: String,
    pub attacked_run: String,
    pub engine_seed: u64,
    pub lgn_trial: u32,
    pub bkg_trial: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpactReport {
    pub interval_ms: f64,
    pub repetitions: usize,
    pub counts_baseline: SeriesStats,
    pub counts_attacked: SeriesStats,
    pub delta: Vec<f64>,
    pub percent_change: Vec<Option<f64>>,
    pub shift_percentage: SeriesStats,
    /// First and last interval touched by the attack.
    pub attack_intervals: Option<(usize, usize)>,
    pub recovery_intervals: Option<usize>,
    pub rebound_peak: Option<ReboundPeak>,
    pub pairing: Vec<Pairing>,
    pub options: MetricOptions,
}

impl ImpactReport {
    /// Builds a report from `(baseline, attacked)` pairs. `attack_span` is the
    /// first and last-plus-one attacked time in ms (equal for an instant).
    ///
    /// Errors if a pair does not share seeds and trials.
    pub fn from_pairs(
        pairs: &[(&SpikeRecord, &SpikeRecord)],
        attack_span: Option<(f64, f64)>,
        options: &MetricOptions,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Usage("an impact report needs at least one run pair".into()));
        }
        let iv = options.interval_ms;
        let mut pairing = Vec::with_capacity(pairs.len());
        let mut base_series = Vec::with_capacity(pairs.len());
        let mut att_series = Vec::with_capacity(pairs.len());
        let mut shift_series = Vec::with_capacity(pairs.len());
        for (base, att) in pairs {
            let (b, a) = (&base.meta, &att.meta);
            if b.seed != a.seed || b.lgn_trial != a.lgn_trial || b.bkg_trial != a.bkg_trial {
                return Err(Error::Usage(format!(
                    "run {} is not paired with baseline {}: seeds or trials differ",
                    a.run_id, b.run_id
                )));
            }
            pairing.push(Pairing {
                baseline_run: b.run_id.clone(),
                attacked_run: a.run_id.clone(),
                engine_seed: a.seed,
                lgn_trial: a.lgn_trial,
                bkg_trial: a.bkg_trial,
            });
            base_series.push(interval_counts(base, iv));
            att_series.push(interval_counts(att, iv));
            shift_series.push(shift_percentage_with(att, base, iv, options.shift_tolerance_steps));
        }
        let counts_baseline = SeriesStats::from_series(&base_series, "baseline");
        let counts_attacked = SeriesStats::from_series(&att_series, "attacked");
        let shift = SeriesStats::from_series(&shift_series, "shift_pct");
        let Delta { delta, percent } = impact_delta(&counts_attacked.mean, &counts_baseline.mean)?;

        let dt = pairs[0].1.dt;
        let attack_intervals = attack_span.map(|(t0, t1)| {
            let last = if t1 > t0 { t1 - dt } else { t0 };
            (interval_of(t0, iv), interval_of(last, iv))
        });
        let (recovery_intervals, rebound_peak) = match attack_intervals {
            None => (None, None),
            Some((_, end)) => {
                let noise = noise_scale(&counts_baseline, &counts_attacked);
                (
                    recovery_time(&delta, &counts_baseline.mean.values, end, options.recovery_tolerance),
                    rebound_detect(&counts_attacked.mean, &counts_baseline.mean, &noise, end, options.rebound_z),
                )
            }
        };
        Ok(ImpactReport {
            interval_ms: iv,
            repetitions: pairs.len(),
            counts_baseline,
            counts_attacked,
            delta,
            percent_change: percent,
            shift_percentage: shift,
            attack_intervals,
            recovery_intervals,
            rebound_peak,
            pairing,
            options: options.clone(),
        })
    }

    pub fn n_intervals(&self) -> usize {
        self.delta.len()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "interval_index",
            "t_start_ms",
            "t_end_ms",
            "baseline_mean",
            "baseline_sd",
            "attacked_mean",
            "attacked_sd",
            "delta",
            "percent",
            "shift_pct",
        ])?;
        for k in 0..self.n_intervals() {
            let t0 = k as f64 * self.interval_ms;
            w.write_record([
                k.to_string(),
                t0.to_string(),
                (t0 + self.interval_ms).to_string(),
                self.counts_baseline.mean.values[k].to_string(),
                self.counts_baseline.sd[k].to_string(),
                self.counts_attacked.mean.values[k].to_string(),
                self.counts_attacked.sd[k].to_string(),
                self.delta[k].to_string(),
                self.percent_change[k].map_or_else(String::new, |p| p.to_string()),
                self.shift_percentage.mean.values[k].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&raw)?)
    }
}

/// Per-interval noise scale for rebound detection: the larger of the
/// repetition sd of either series and the Poisson sd of the baseline count.
fn noise_scale(baseline: &SeriesStats, attacked: &SeriesStats) -> Vec<f64> {
    (0..baseline.sd.len())
        .map(|k| {
            baseline.sd[k]
                .max(attacked.sd[k])
                .max(baseline.mean.values[k].max(1.0).sqrt())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Spike;
    use proptest::prelude::*;

    fn record(spikes: &[(u32, u32)], duration: f64) -> SpikeRecord {
        let mut r = SpikeRecord::new(0.25, duration);
        r.events = spikes.iter().map(|&(step, neuron)| Spike { step, neuron }).collect();
        r.events.sort();
        r
    }

    #[test]
    fn hand_placed_counts() {
        // Times 10, 50, 99.75 | 100, 150 | 200, 299.75.
        let steps = [40, 200, 399, 400, 600, 800, 1199];
        let r = record(&steps.iter().map(|&s| (s, 0)).collect::<Vec<_>>(), 300.0);
        assert_eq!(interval_counts(&r, 100.0).values, vec![3.0, 2.0, 2.0]);
        assert_eq!(interval_counts(&SpikeRecord::new(0.25, 3000.0), 100.0).values, vec![0.0; 30]);
    }

    #[test]
    fn boundary_spikes() {
        let r = record(&[(1199, 0), (1200, 1)], 3000.0);
        let c = interval_counts(&r, 100.0);
        assert_eq!(c.len(), 30);
        assert_eq!(c.values[2], 1.0);
        assert_eq!(c.values[3], 1.0);
        assert_eq!(interval_of(200.0, 100.0), 2);
    }

    #[test]
    fn delta_and_percent() {
        let base = IntervalSeries::new(100.0, vec![10.0, 0.0, 4.0], "b");
        let att = IntervalSeries::new(100.0, vec![12.0, 5.0, 4.0], "a");
        let d = impact_delta(&att, &base).unwrap();
        assert_eq!(d.delta, vec![2.0, 5.0, 0.0]);
        assert_eq!(d.percent, vec![Some(20.0), None, Some(0.0)]);
        let short = IntervalSeries::new(100.0, vec![1.0], "s");
        assert!(matches!(impact_delta(&short, &base), Err(Error::Usage(_))));
    }

    #[test]
    fn reported_pairing_implies_baseline() {
        let b = implied_baseline(21_667.0, 21.40);
        assert!((b - 101_248.0).abs() <= 1.0, "{b}");
    }

    #[test]
    fn shift_cases() {
        let base = record(&[(10, 0), (20, 1), (30, 2), (40, 3)], 100.0);
        assert!(shift_percentage(&base, &base, 100.0).values.iter().all(|&v| v == 0.0));

        let moved = record(&[(11, 0), (21, 1), (31, 2), (41, 3)], 100.0);
        assert_eq!(shift_percentage(&moved, &base, 100.0).values, vec![100.0]);
        assert_eq!(shift_percentage_with(&moved, &base, 100.0, 1).values, vec![0.0]);

        // Four attacked spikes, one of which matches exactly.
        let att = record(&[(10, 0), (25, 1), (30, 3), (40, 2)], 100.0);
        assert_eq!(shift_percentage(&att, &base, 100.0).values, vec![75.0]);

        // Empty attacked interval reads 0.
        let empty = SpikeRecord::new(0.25, 200.0);
        assert_eq!(shift_percentage(&empty, &base, 100.0).values, vec![0.0, 0.0]);
    }

    #[test]
    fn recovery_cases() {
        let baseline = vec![100.0; 12];
        let mut delta = vec![0.0; 12];
        delta[4] = 50.0;
        assert_eq!(recovery_time(&delta, &baseline, 4, 0.05), Some(1));

        // Decays: +1 -> 30, +2 -> 12, +3 -> 4, then below 5%.
        delta[5] = 30.0;
        delta[6] = 12.0;
        delta[7] = 4.0;
        delta[8] = -3.0;
        assert_eq!(recovery_time(&delta, &baseline, 4, 0.05), Some(3));

        let never = vec![20.0; 12];
        assert_eq!(recovery_time(&never, &baseline, 4, 0.05), None);
        // A single quiet interval at the very end is not a two-interval run.
        let mut tail = never.clone();
        tail[11] = 0.0;
        assert_eq!(recovery_time(&tail, &baseline, 4, 0.05), None);
    }

    #[test]
    fn rebound_cases() {
        let base = IntervalSeries::new(100.0, vec![100.0; 10], "b");
        let sd = vec![4.0; 10];
        assert_eq!(rebound_detect(&base, &base, &sd, 6, 3.0), None);

        let mut att = base.clone();
        att.values[6] = 20.0;
        att.values[7] = 120.0;
        let peak = rebound_detect(&att, &base, &sd, 6, 3.0).unwrap();
        assert_eq!(peak.interval, 7);
        assert_eq!(peak.magnitude, 20.0);
        assert_eq!(peak.z, 5.0);

        att.values[7] = 110.0;
        assert_eq!(rebound_detect(&att, &base, &sd, 6, 3.0), None);
    }

    #[test]
    fn report_of_identical_runs_is_flat() {
        let mut base = record(&[(10, 0), (500, 1), (900, 2)], 300.0);
        base.meta.run_id = "b".into();
        let mut att = base.clone();
        att.meta.run_id = "a".into();
        let rep = ImpactReport::from_pairs(&[(&base, &att)], Some((100.0, 200.0)), &MetricOptions::default()).unwrap();
        assert_eq!(rep.delta, vec![0.0; 3]);
        assert!(rep.shift_percentage.mean.values.iter().all(|&v| v == 0.0));
        assert_eq!(rep.attack_intervals, Some((1, 1)));
        assert_eq!(rep.rebound_peak, None);
        assert_eq!(rep.pairing[0].attacked_run, "a");

        let mut other = att.clone();
        other.meta.seed = 99;
        assert!(ImpactReport::from_pairs(&[(&base, &other)], None, &MetricOptions::default()).is_err());
    }

    #[test]
    fn report_files() {
        let base = record(&[(10, 0), (500, 1)], 200.0);
        let att = record(&[(10, 0), (510, 1), (520, 2)], 200.0);
        let rep = ImpactReport::from_pairs(&[(&base, &att), (&base, &att)], Some((125.0, 125.0)), &MetricOptions::default())
            .unwrap();
        assert_eq!(rep.counts_attacked.sd, vec![0.0, 0.0]);
        let dir = tempfile::tempdir().unwrap();
        rep.write_csv(&dir.path().join("r.csv")).unwrap();
        rep.write_json(&dir.path().join("r.json")).unwrap();
        assert_eq!(ImpactReport::read_json(&dir.path().join("r.json")).unwrap(), rep);
        let csv = fs::read_to_string(dir.path().join("r.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("interval_index,t_start_ms"));
        assert_eq!(lines[2], "1,100,200,1,0,2,0,1,100,100");
    }

    #[test]
    fn stats_use_sample_sd() {
        let s = [
            IntervalSeries::new(100.0, vec![1.0, 4.0], "x"),
            IntervalSeries::new(100.0, vec![3.0, 4.0], "x"),
        ];
        let st = SeriesStats::from_series(&s, "m");
        assert_eq!(st.mean.values, vec![2.0, 4.0]);
        assert!((st.sd[0] - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(st.sd[1], 0.0);
    }

    fn arb_record() -> impl Strategy<Value = SpikeRecord> {
        prop::collection::vec((0u32..12_000, 0u32..50), 0..400).prop_map(|mut v| {
            v.sort();
            v.dedup();
            record(&v, 3000.0)
        })
    }

    proptest! {
        #[test]
        fn counts_sum_to_total(r in arb_record()) {
            prop_assert_eq!(interval_counts(&r, 100.0).total() as usize, r.len());
        }

        #[test]
        fn shift_bounds(a in arb_record(), b in arb_record()) {
            prop_assert!(shift_percentage(&a, &a, 100.0).values.iter().all(|&v| v == 0.0));
            prop_assert!(shift_percentage(&a, &b, 100.0).values.iter().all(|&v| (0.0..=100.0).contains(&v)));
        }

        #[test]
        fn delta_antisymmetric(a in arb_record(), b in arb_record()) {
            let (ca, cb) = (interval_counts(&a, 100.0), interval_counts(&b, 100.0));
            let ab = impact_delta(&ca, &cb).unwrap().delta;
            let ba = impact_delta(&cb, &ca).unwrap().delta;
            prop_assert!(ab.iter().zip(&ba).all(|(x, y)| *x == -*y));
        }
    }
}
