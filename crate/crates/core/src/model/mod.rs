//! Neuron and synapse parameterizations and the layered cortical topology
//! generator.
//!
//! Neurons are GLIF-1 point neurons (leaky integrate-and-fire with a hard
//! threshold, reset and absolute refractory period). A [`Topology`] is
//! generated from a [`TopologySpec`] by placing neurons in a cylinder whose
//! layers are stacked along the depth axis and wiring them with a
//! distance-dependent connection probability `p_base * exp(-d / distance_scale)`.

mod io;
mod validate;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::stream_rng;

pub use io::{read_topology, write_topology, TOPOLOGY_FORMAT_VERSION};
pub use validate::{validate_topology, validate_topology_with, Rule, Subject, Violation};

pub type NeuronId = u32;

/// Grid used when quantizing generated synaptic delays.
pub const DEFAULT_RESOLUTION_MS: f64 = 0.25;

/// Neuron count of the full-scale microcircuit.
pub const FULL_SCALE_NEURONS: usize = 230_924;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Layer {
    L1,
    L23,
    L4,
    L5,
    L6,
}

impl Layer {
    pub const ALL: [Layer; 5] = [Layer::L1, Layer::L23, Layer::L4, Layer::L5, Layer::L6];

    pub fn as_str(self) -> &'static str {
        match self {
            Layer::L1 => "L1",
            Layer::L23 => "L23",
            Layer::L4 => "L4",
            Layer::L5 => "L5",
            Layer::L6 => "L6",
        }
    }

    /// Cortical depth band `[top, bottom)` in micrometers.
    pub fn depth_range(self) -> (f64, f64) {
        match self {
            Layer::L1 => (0.0, 100.0),
            Layer::L23 => (100.0, 310.0),
            Layer::L4 => (310.0, 430.0),
            Layer::L5 => (430.0, 650.0),
            Layer::L6 => (650.0, 860.0),
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Layer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L1" => Ok(Layer::L1),
            "L23" | "L2/3" => Ok(Layer::L23),
            "L4" => Ok(Layer::L4),
            "L5" => Ok(Layer::L5),
            "L6" => Ok(Layer::L6),
            other => Err(Error::config("layer", format!("unknown layer {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Excitatory,
    Inhibitory,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Excitatory => "E",
            Polarity::Inhibitory => "I",
        }
    }

    /// +1 for excitatory, -1 for inhibitory.
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Excitatory => 1.0,
            Polarity::Inhibitory => -1.0,
        }
    }
}

impl FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "E" | "excitatory" => Ok(Polarity::Excitatory),
            "I" | "inhibitory" => Ok(Polarity::Inhibitory),
            other => Err(Error::config("polarity", format!("unknown polarity {other:?}"))),
        }
    }
}

/// Position in micrometers. `z` is cortical depth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub fn distance(&self, other: &Position) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// Per-neuron GLIF-1 constants. Voltages in mV, times in ms, capacitance in pF.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    pub v_threshold: f64,
    pub v_reset: f64,
    pub e_leak: f64,
    pub tau_membrane: f64,
    pub capacitance: f64,
    pub t_refractory: f64,
    pub polarity: Polarity,
    pub layer: Layer,
    pub position: Position,
}

impl NeuronParams {
    /// Membrane resistance in GOhm, so that `resistance * pA = mV`.
    pub fn resistance(&self) -> f64 {
        self.tau_membrane / self.capacitance
    }
}

/// A delta-PSP synapse. `weight` is the voltage jump (mV) applied to `post`
/// when a spike of `pre` arrives, `delay` the axonal plus synaptic delay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Synapse {
    pub pre: NeuronId,
    pub post: NeuronId,
    pub weight: f64,
    pub delay: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub sd: f64,
}

impl Gaussian {
    pub const fn new(mean: f64, sd: f64) -> Self {
        Gaussian { mean, sd }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Connectivity {
    pub p_base: f64,
    /// Length constant in micrometers. `f64::INFINITY` makes the probability
    /// distance-independent; serialized as `null`.
    #[serde(with = "infinite_as_null")]
    pub distance_scale: f64,
}

impl Connectivity {
    pub fn probability(&self, distance: f64) -> f64 {
        if self.distance_scale.is_infinite() {
            self.p_base
        } else {
            self.p_base * (-distance / self.distance_scale).exp()
        }
    }
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Synaptic weight distributions keyed by post-synaptic layer, one table per
/// pre-synaptic polarity. Inhibitory means are negative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub excitatory: BTreeMap<Layer, Gaussian>,
    pub inhibitory: BTreeMap<Layer, Gaussian>,
}

impl WeightTable {
    pub fn uniform(excitatory: Gaussian, inhibitory: Gaussian) -> Self {
        WeightTable {
            excitatory: Layer::ALL.iter().map(|&l| (l, excitatory)).collect(),
            inhibitory: Layer::ALL.iter().map(|&l| (l, inhibitory)).collect(),
        }
    }

    pub fn get(&self, pre: Polarity, post_layer: Layer) -> Option<Gaussian> {
        match pre {
            Polarity::Excitatory => self.excitatory.get(&post_layer).copied(),
            Polarity::Inhibitory => self.inhibitory.get(&post_layer).copied(),
        }
    }
}

/// Nominal GLIF-1 constants; each neuron draws every value uniformly within
/// `±jitter` (relative) of the nominal one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronDefaults {
    pub v_threshold: f64,
    pub v_reset: f64,
    pub e_leak: f64,
    pub tau_membrane: f64,
    pub capacitance: f64,
    pub t_refractory: f64,
    pub jitter: f64,
}

impl Default for NeuronDefaults {
    fn default() -> Self {
        NeuronDefaults {
            v_threshold: -50.0,
            v_reset: -70.0,
            e_leak: -70.0,
            tau_membrane: 10.0,
            capacitance: 250.0,
            t_refractory: 2.0,
            jitter: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub n_neurons: usize,
    pub layer_fractions: BTreeMap<Layer, f64>,
    pub inhibitory_fraction: BTreeMap<Layer, f64>,
    pub connectivity: Connectivity,
    pub weights: WeightTable,
    /// `[min, max]` synaptic delay in ms; sampled uniformly and snapped to the
    /// default resolution grid.
    pub delay_range: (f64, f64),
    pub cylinder_radius: f64,
    #[serde(default)]
    pub neuron: NeuronDefaults,
}

impl Default for TopologySpec {
    fn default() -> Self {
        TopologySpec::for_scale(0.01)
    }
}

impl TopologySpec {
    /// Cortical defaults for a network of `round(scale * 230,924)` neurons.
    ///
    /// The connection probability is scaled with `1 / scale` (capped at 1) so
    /// that the expected in-degree stays roughly constant across scales.
    pub fn for_scale(scale: f64) -> Self {
        let n = (scale * FULL_SCALE_NEURONS as f64).round().max(2.0) as usize;
        let p_base = (0.25 * 0.01 / scale).min(1.0);
        let layer_fractions = [
            (Layer::L1, 0.02),
            (Layer::L23, 0.26),
            (Layer::L4, 0.29),
            (Layer::L5, 0.27),
            (Layer::L6, 0.16),
        ]
        .into_iter()
        .collect();
        TopologySpec {
            n_neurons: n,
            layer_fractions,
            inhibitory_fraction: Layer::ALL.iter().map(|&l| (l, 0.15)).collect(),
            connectivity: Connectivity {
                p_base,
                distance_scale: 300.0,
            },
            weights: WeightTable::uniform(Gaussian::new(0.6, 0.15), Gaussian::new(-2.4, 0.6)),
            delay_range: (1.0, 3.0),
            cylinder_radius: 845.0,
            neuron: NeuronDefaults::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_neurons < 2 {
            return Err(Error::config(
                "n_neurons",
                format!("need at least 2 neurons, got {}", self.n_neurons),
            ));
        }
        let mut sum = 0.0;
        for (layer, &f) in &self.layer_fractions {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::config(
                    format!("layer_fractions.{layer}"),
                    format!("fraction {f} outside [0, 1]"),
                ));
            }
            sum += f;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "layer_fractions",
                format!("fractions sum to {sum}, expected 1"),
            ));
        }
        let populated = self.layer_fractions.values().filter(|&&f| f > 0.0).count();
        if self.n_neurons < populated {
            return Err(Error::config(
                "n_neurons",
                format!("{} neurons cannot populate {populated} layers", self.n_neurons),
            ));
        }
        for (layer, &f) in &self.inhibitory_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::config(
                    format!("inhibitory_fraction.{layer}"),
                    format!("fraction {f} outside [0, 1]"),
                ));
            }
        }
        let c = &self.connectivity;
        if !(0.0..=1.0).contains(&c.p_base) {
            return Err(Error::config(
                "connectivity.p_base",
                format!("probability {} outside [0, 1]", c.p_base),
            ));
        }
        if c.distance_scale.is_nan() || c.distance_scale <= 0.0 {
            return Err(Error::config(
                "connectivity.distance_scale",
                "must be positive (or infinite)",
            ));
        }
        for (&layer, &f) in &self.layer_fractions {
            if f == 0.0 {
                continue;
            }
            for pol in [Polarity::Excitatory, Polarity::Inhibitory] {
                match self.weights.get(pol, layer) {
                    None => {
                        return Err(Error::config(
                            format!("weights.{}.{layer}", pol_key(pol)),
                            "missing weight distribution",
                        ))
                    }
                    Some(g) if !(g.sd >= 0.0) || !g.mean.is_finite() => {
                        return Err(Error::config(
                            format!("weights.{}.{layer}", pol_key(pol)),
                            "mean must be finite and sd non-negative",
                        ))
                    }
                    Some(_) => {}
                }
            }
        }
        let (lo, hi) = self.delay_range;
        if !(lo >= DEFAULT_RESOLUTION_MS && hi >= lo && hi.is_finite()) {
            return Err(Error::config(
                "delay_range",
                format!("need {DEFAULT_RESOLUTION_MS} <= min <= max, got ({lo}, {hi})"),
            ));
        }
        if !(self.cylinder_radius > 0.0) {
            return Err(Error::config("cylinder_radius", "must be positive"));
        }
        let nd = &self.neuron;
        if !(nd.v_reset < nd.v_threshold) {
            return Err(Error::config("neuron.v_reset", "must be below v_threshold"));
        }
        if !(nd.tau_membrane > 0.0 && nd.capacitance > 0.0 && nd.t_refractory >= 0.0) {
            return Err(Error::config(
                "neuron",
                "tau_membrane and capacitance must be positive, t_refractory non-negative",
            ));
        }
        if !(0.0..0.5).contains(&nd.jitter) {
            return Err(Error::config("neuron.jitter", "must lie in [0, 0.5)"));
        }
        Ok(())
    }

    /// Neuron count per layer: largest-remainder apportionment of
    /// `n_neurons`, with every layer of positive fraction given at least one
    /// neuron.
    pub fn layer_counts(&self) -> BTreeMap<Layer, usize> {
        let n = self.n_neurons;
        let mut counts: Vec<(Layer, usize, f64)> = Layer::ALL
            .iter()
            .map(|&l| {
                let exact = self.layer_fractions.get(&l).copied().unwrap_or(0.0) * n as f64;
                (l, exact.floor() as usize, exact - exact.floor())
            })
            .collect();
        let assigned: usize = counts.iter().map(|c| c.1).sum();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        // Stable: ties broken by layer order.
        order.sort_by(|&a, &b| counts[b].2.partial_cmp(&counts[a].2).unwrap());
        for &i in order.iter().take(n.saturating_sub(assigned)) {
            counts[i].1 += 1;
        }
        for i in 0..counts.len() {
            let frac = self.layer_fractions.get(&counts[i].0).copied().unwrap_or(0.0);
            if frac > 0.0 && counts[i].1 == 0 {
                let donor = (0..counts.len()).max_by_key(|&j| counts[j].1).unwrap();
                counts[donor].1 -= 1;
                counts[i].1 += 1;
            }
        }
        counts
            .into_iter()
            .filter(|c| self.layer_fractions.get(&c.0).copied().unwrap_or(0.0) > 0.0)
            .map(|c| (c.0, c.1))
            .collect()
    }
}

fn pol_key(p: Polarity) -> &'static str {
    match p {
        Polarity::Excitatory => "excitatory",
        Polarity::Inhibitory => "inhibitory",
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub neurons: Vec<NeuronParams>,
    pub synapses: Vec<Synapse>,
    pub layer_counts: BTreeMap<Layer, usize>,
    pub seed: u64,
    /// Generating spec; `None` for hand-built networks.
    pub spec: Option<TopologySpec>,
}

impl Topology {
    /// Builds a topology from explicit neurons and synapses.
    pub fn from_parts(neurons: Vec<NeuronParams>, synapses: Vec<Synapse>) -> Self {
        let mut layer_counts = BTreeMap::new();
        for n in &neurons {
            *layer_counts.entry(n.layer).or_insert(0) += 1;
        }
        Topology {
            neurons,
            synapses,
            layer_counts,
            seed: 0,
            spec: None,
        }
    }

    pub fn len(&self) -> usize {
        self.neurons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neurons.is_empty()
    }

    pub fn excitatory_ids(&self) -> impl Iterator<Item = NeuronId> + '_ {
        self.neurons
            .iter()
            .enumerate()
            .filter(|(_, n)| n.polarity == Polarity::Excitatory)
            .map(|(i, _)| i as NeuronId)
    }
}

fn jittered<R: Rng>(rng: &mut R, nominal: f64, jitter: f64) -> f64 {
    if jitter == 0.0 {
        nominal
    } else {
        nominal * (1.0 + rng.gen_range(-jitter..=jitter))
    }
}

/// Snap to the resolution grid, never below one step.
fn quantize_delay(d: f64) -> f64 {
    ((d / DEFAULT_RESOLUTION_MS).round() * DEFAULT_RESOLUTION_MS).max(DEFAULT_RESOLUTION_MS)
}

/// Generates a layered excitatory/inhibitory network. Pure function of
/// `(spec, seed)`.
pub fn build_topology(spec: &TopologySpec, seed: u64) -> Result<Topology> {
    spec.validate()?;
    let layer_counts = spec.layer_counts();

    let mut place_rng = stream_rng(seed, "topology/neurons", 0);
    let mut neurons = Vec::with_capacity(spec.n_neurons);
    let nd = &spec.neuron;
    for (&layer, &count) in &layer_counts {
        let inh_frac = spec.inhibitory_fraction.get(&layer).copied().unwrap_or(0.0);
        let n_inh = (inh_frac * count as f64 + 0.5).floor() as usize;
        let mut polarities: Vec<Polarity> = (0..count)
            .map(|i| {
                if i < n_inh {
                    Polarity::Inhibitory
                } else {
                    Polarity::Excitatory
                }
            })
            .collect();
        polarities.shuffle(&mut place_rng);
        let (top, bottom) = layer.depth_range();
        for polarity in polarities {
            let r = spec.cylinder_radius * place_rng.gen::<f64>().sqrt();
            let theta = std::f64::consts::TAU * place_rng.gen::<f64>();
            let z = place_rng.gen_range(top..bottom);
            let v_threshold = jittered(&mut place_rng, nd.v_threshold, nd.jitter);
            let v_reset = jittered(&mut place_rng, nd.v_reset, nd.jitter);
            let e_leak = jittered(&mut place_rng, nd.e_leak, nd.jitter);
            let tau_membrane = jittered(&mut place_rng, nd.tau_membrane, nd.jitter);
            let t_refractory = jittered(&mut place_rng, nd.t_refractory, nd.jitter);
            neurons.push(NeuronParams {
                v_threshold,
                v_reset,
                e_leak,
                tau_membrane,
                capacitance: nd.capacitance,
                t_refractory,
                polarity,
                layer,
                position: Position {
                    x: r * theta.cos(),
                    y: r * theta.sin(),
                    z,
                },
            });
        }
    }

    let mut wire_rng = stream_rng(seed, "topology/synapses", 0);
    let (d_lo, d_hi) = spec.delay_range;
    let mut synapses = Vec::new();
    let mut samplers: BTreeMap<(bool, Layer), Normal<f64>> = BTreeMap::new();
    for &layer in layer_counts.keys() {
        for pol in [Polarity::Excitatory, Polarity::Inhibitory] {
            let g = spec.weights.get(pol, layer).expect("validated");
            let normal = Normal::new(g.mean, g.sd)
                .map_err(|e| Error::config(format!("weights.{}.{layer}", pol_key(pol)), e.to_string()))?;
            samplers.insert((pol == Polarity::Excitatory, layer), normal);
        }
    }
    for (pre, pre_n) in neurons.iter().enumerate() {
        for (post, post_n) in neurons.iter().enumerate() {
            if pre == post {
                continue;
            }
            let p = spec
                .connectivity
                .probability(pre_n.position.distance(&post_n.position));
            if wire_rng.gen::<f64>() >= p {
                continue;
            }
            let normal = &samplers[&(pre_n.polarity == Polarity::Excitatory, post_n.layer)];
            let magnitude = normal.sample(&mut wire_rng).abs().max(1e-6);
            let delay = if d_hi > d_lo {
                wire_rng.gen_range(d_lo..=d_hi)
            } else {
                d_lo
            };
            synapses.push(Synapse {
                pre: pre as NeuronId,
                post: post as NeuronId,
                weight: pre_n.polarity.sign() * magnitude,
                delay: quantize_delay(delay),
            });
        }
    }

    Ok(Topology {
        neurons,
        synapses,
        layer_counts,
        seed,
        spec: Some(spec.clone()),
    })
}
