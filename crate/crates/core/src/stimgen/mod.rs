//! Stimulus timelines, the LGN/BKG trial registry and stochastic input spike
//! trains.
//!
//! Visual input is modeled as an inhomogeneous Poisson process whose rate
//! follows a per-event profile; background input is a homogeneous 1 kHz
//! Poisson process per source. Each source projects to `fan_out` random
//! neurons through the feed map.

mod io;
mod timeline;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gaussian, NeuronId, Topology};
use crate::seeding::stream_rng;

pub use io::{read_spike_train, write_spike_train, write_timeline_json};
pub use timeline::{
    flash_timeline, gratings_timeline, movie_timeline, EventKind, LgnRates, RateProfile,
    Stimulus, StimulusEvent, StimulusTimeline, GRATING_ORIENTATIONS, STIMULUS_DURATION_MS,
};

/// Background Poisson rate per source.
pub const BKG_RATE_HZ: f64 = 1000.0;

/// One input spike: `(time in ms, source id)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputSpike {
    pub time: f64,
    pub source: u32,
}

/// Pairing of an LGN trial with its background trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub stimulus: Stimulus,
    pub lgn_trial: u32,
    pub bkg_trial: u32,
}

impl TrialSpec {
    /// Checks that `bkg_trial` lies in the block reserved for the stimulus
    /// family (gratings 0-79, movie 80-89, flash 90-99).
    pub fn validate(&self) -> Result<()> {
        if self.lgn_trial > 9 {
            return Err(Error::config("lgn_trial", format!("{} outside [0, 9]", self.lgn_trial)));
        }
        let base = self.stimulus.bkg_family_base()?;
        let range = match self.stimulus {
            Stimulus::Gratings { .. } => 0..80,
            _ => base..base + 10,
        };
        if !range.contains(&self.bkg_trial) {
            return Err(Error::config(
                "bkg_trial",
                format!("{} not in {:?} for {}", self.bkg_trial, range, self.stimulus),
            ));
        }
        Ok(())
    }
}

/// Maps an LGN trial index onto the background trial paired with it.
pub fn resolve_trial(stimulus: &Stimulus, lgn_trial: u32) -> Result<TrialSpec> {
    if lgn_trial > 9 {
        return Err(Error::config("lgn_trial", format!("{lgn_trial} outside [0, 9]")));
    }
    let base = stimulus.bkg_family_base()?;
    Ok(TrialSpec {
        stimulus: stimulus.clone(),
        lgn_trial,
        bkg_trial: base + lgn_trial,
    })
}

/// Source counts, fan-out and weights of the external inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub n_lgn_sources: usize,
    pub n_bkg_sources: usize,
    pub fan_out: usize,
    pub lgn_weight: Gaussian,
    pub bkg_weight: Gaussian,
    #[serde(default)]
    pub rates: LgnRates,
}

impl InputSpec {
    /// Input defaults for a network of `n_neurons`.
    pub fn for_neurons(n_neurons: usize) -> Self {
        InputSpec {
            n_lgn_sources: n_neurons.max(1),
            n_bkg_sources: (n_neurons / 5).max(1),
            fan_out: 10,
            lgn_weight: Gaussian::new(1.0, 0.25),
            bkg_weight: Gaussian::new(0.6, 0.15),
            rates: LgnRates::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fan_out == 0 {
            return Err(Error::config("inputs.fan_out", "must be at least 1"));
        }
        for (name, g) in [("inputs.lgn_weight", self.lgn_weight), ("inputs.bkg_weight", self.bkg_weight)] {
            if !(g.sd >= 0.0 && g.mean.is_finite()) {
                return Err(Error::config(name, "mean must be finite and sd non-negative"));
            }
        }
        self.rates.validate()
    }
}

/// Source → `(target neuron, weight)` projections for both input populations.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeedMap {
    pub lgn: Vec<Vec<(NeuronId, f64)>>,
    pub bkg: Vec<Vec<(NeuronId, f64)>>,
}

impl FeedMap {
    /// Largest target id referenced, if any.
    pub fn max_target(&self) -> Option<NeuronId> {
        self.lgn
            .iter()
            .chain(self.bkg.iter())
            .flat_map(|v| v.iter().map(|&(t, _)| t))
            .max()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InputSpikeSet {
    pub lgn_spikes: Vec<InputSpike>,
    pub bkg_spikes: Vec<InputSpike>,
    pub feed_map: FeedMap,
}

impl InputSpikeSet {
    pub fn empty() -> Self {
        InputSpikeSet::default()
    }
}

fn sort_spikes(spikes: &mut [InputSpike]) {
    spikes.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.source.cmp(&b.source)));
}

/// Poisson arrivals on `[t0, t1)` with rate `rate(t)` (Hz) by thinning a
/// homogeneous process at `rate_max`.
fn thinned_poisson<R: Rng>(
    rng: &mut R,
    t0: f64,
    t1: f64,
    rate_max_hz: f64,
    rate: impl Fn(f64) -> f64,
    out: &mut Vec<f64>,
) {
    if rate_max_hz <= 0.0 {
        return;
    }
    let per_ms = rate_max_hz / 1000.0;
    let mut t = t0;
    loop {
        let gap: f64 = Exp1.sample(rng);
        t += gap / per_ms;
        if t >= t1 {
            break;
        }
        let accept = rate(t) / rate_max_hz;
        if accept >= 1.0 || rng.gen::<f64>() < accept {
            out.push(t);
        }
    }
}

/// Synthesizes LGN spikes for every source from the timeline's rate profiles.
/// Each source has its own random stream keyed by `(seed, trial, source)`.
pub fn generate_lgn_spikes(
    timeline: &StimulusTimeline,
    n_sources: usize,
    trial: &TrialSpec,
    seed: u64,
) -> Vec<InputSpike> {
    let family = timeline.stimulus.stream_code();
    let mut spikes = Vec::new();
    let mut times = Vec::new();
    for source in 0..n_sources as u32 {
        let index = (family << 40) | (u64::from(trial.lgn_trial) << 32) | u64::from(source);
        let mut rng = stream_rng(seed, "stimgen/lgn", index);
        times.clear();
        for ev in &timeline.events {
            let max = ev.rate.max_rate(ev.t_start, ev.t_end);
            thinned_poisson(&mut rng, ev.t_start, ev.t_end, max, |t| ev.rate.rate_at(ev.t_start, t), &mut times);
        }
        spikes.extend(times.iter().map(|&time| InputSpike { time, source }));
    }
    sort_spikes(&mut spikes);
    spikes
}

/// Homogeneous 1 kHz background spikes on `[0, duration_ms)`.
pub fn generate_bkg_spikes(
    duration_ms: f64,
    n_sources: usize,
    trial: &TrialSpec,
    seed: u64,
) -> Vec<InputSpike> {
    let mut spikes = Vec::new();
    let mut times = Vec::new();
    for source in 0..n_sources as u32 {
        let index = (u64::from(trial.bkg_trial) << 32) | u64::from(source);
        let mut rng = stream_rng(seed, "stimgen/bkg", index);
        times.clear();
        thinned_poisson(&mut rng, 0.0, duration_ms, BKG_RATE_HZ, |_| BKG_RATE_HZ, &mut times);
        spikes.extend(times.iter().map(|&time| InputSpike { time, source }));
    }
    sort_spikes(&mut spikes);
    spikes
}

/// Wires every input source to `fan_out` distinct random neurons.
pub fn build_feed_map(topology: &Topology, spec: &InputSpec, seed: u64) -> Result<FeedMap> {
    spec.validate()?;
    let n = topology.len();
    if n == 0 {
        return Err(Error::config("topology", "cannot feed an empty network"));
    }
    let k = spec.fan_out.min(n);
    let project = |domain: &str, n_sources: usize, weight: Gaussian| -> Result<Vec<Vec<(NeuronId, f64)>>> {
        let mut rng = stream_rng(seed, domain, 0);
        let normal = Normal::new(weight.mean, weight.sd)
            .map_err(|e| Error::config(domain.to_owned(), e.to_string()))?;
        Ok((0..n_sources)
            .map(|_| {
                let mut targets: Vec<usize> = sample(&mut rng, n, k).into_vec();
                targets.sort_unstable();
                targets
                    .into_iter()
                    .map(|t| (t as NeuronId, normal.sample(&mut rng).abs().max(1e-6)))
                    .collect()
            })
            .collect())
    };
    Ok(FeedMap {
        lgn: project("stimgen/feed/lgn", spec.n_lgn_sources, spec.lgn_weight)?,
        bkg: project("stimgen/feed/bkg", spec.n_bkg_sources, spec.bkg_weight)?,
    })
}

/// LGN + BKG spikes and the feed map for one trial.
pub fn generate_inputs(
    topology: &Topology,
    timeline: &StimulusTimeline,
    trial: &TrialSpec,
    spec: &InputSpec,
    seed: u64,
) -> Result<InputSpikeSet> {
    trial.validate()?;
    Ok(InputSpikeSet {
        lgn_spikes: generate_lgn_spikes(timeline, spec.n_lgn_sources, trial, seed),
        bkg_spikes: generate_bkg_spikes(timeline.total_duration, spec.n_bkg_sources, trial, seed),
        feed_map: build_feed_map(topology, spec, seed)?,
    })
}
