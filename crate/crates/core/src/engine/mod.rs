//! Clock-driven GLIF-1 simulation with delayed delta-PSP synapses.
//!
//! Each step at time `t = k * dt` applies, in order:
//!
//! 1. delivery of input and recurrent spikes whose delay matures at `t`
//!    (voltage jumps),
//! 2. exact exponential integration of the leak (plus any constant injected
//!    current) over one step,
//! 3. the [`AttackHook`], which may overwrite voltages,
//! 4. the threshold test `v >= v_threshold` for non-refractory neurons, which
//!    emits a spike, resets `v` to `v_reset` and starts the refractory period.
//!
//! Refractory neurons hold `v_reset` and discard arriving input. `v_reset` is
//! also the floor of the membrane voltage: inhibition cannot push a neuron
//! below it.

mod hook;
mod record;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NeuronId, Topology};
use crate::seeding::stream_rng;
use crate::stimgen::InputSpikeSet;

pub use hook::{AttackHook, FnHook, Membranes, NullHook};
pub use record::{RecordMeta, Spike, SpikeRecord};

const GRID_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub duration: f64,
    pub dt: f64,
    pub seed: u64,
    /// Draw initial voltages uniformly in `[max(e_leak, v_reset), v_threshold)`; otherwise
    /// every neuron starts at rest.
    #[serde(default = "default_true")]
    pub randomize_initial: bool,
}

fn default_true() -> bool {
    true
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            duration: 3000.0,
            dt: 0.25,
            seed: 0,
            randomize_initial: true,
        }
    }
}

impl SimConfig {
    pub fn n_steps(&self) -> Result<u32> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::config("duration", format!("must be positive, got {}", self.duration)));
        }
        steps_of(self.duration, self.dt)
            .filter(|&n| n <= u32::MAX as u64)
            .map(|n| n as u32)
            .ok_or_else(|| {
                Error::config(
                    "duration",
                    format!("{} ms is not an integral number of {} ms steps", self.duration, self.dt),
                )
            })
    }

    /// Grid step of `t`, or `None` when `t` is off the grid.
    pub fn step_of(&self, t: f64) -> Option<u32> {
        steps_of(t, self.dt).and_then(|s| u32::try_from(s).ok())
    }
}

fn steps_of(t: f64, dt: f64) -> Option<u64> {
    let x = t / dt;
    let k = x.round();
    if k >= 0.0 && (x - k).abs() <= GRID_EPS * x.abs().max(1.0) {
        Some(k as u64)
    } else {
        None
    }
}

/// Delivery step of an input spike at `time`: the first grid point at or
/// after it.
fn input_step(time: f64, dt: f64) -> u64 {
    steps_of(time, dt).unwrap_or_else(|| (time / dt).ceil() as u64)
}

/// Snapshot of one neuron.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeuronState {
    pub v: f64,
    /// Time (ms) from which the neuron may fire again.
    pub refractory_until: f64,
    pub last_spike: Option<f64>,
}

/// Topology and inputs flattened into the arrays the step loop reads.
/// Immutable; can back any number of simulations with the same `dt`.
pub struct CompiledNetwork {
    dt: f64,
    n_steps: u32,
    e_leak: Vec<f64>,
    v_threshold: Vec<f64>,
    v_reset: Vec<f64>,
    decay: Vec<f64>,
    /// `R * (1 - decay)`, multiplies injected current (pA) into mV.
    drive_gain: Vec<f64>,
    refractory_steps: Vec<u32>,
    syn_offsets: Vec<u32>,
    syn_post: Vec<NeuronId>,
    syn_weight: Vec<f64>,
    syn_delay: Vec<u32>,
    ring_len: usize,
    feed_offsets: Vec<u32>,
    feed_target: Vec<NeuronId>,
    feed_weight: Vec<f64>,
    input_offsets: Vec<u32>,
    input_source: Vec<u32>,
}

impl CompiledNetwork {
    pub fn new(config: &SimConfig, topology: &Topology, inputs: &InputSpikeSet) -> Result<Self> {
        let n_steps = config.n_steps()?;
        let dt = config.dt;
        let n = topology.len();
        if n == 0 {
            return Err(Error::config("topology", "network has no neurons"));
        }
        if n > NeuronId::MAX as usize {
            return Err(Error::config("topology", "too many neurons"));
        }
        if let Some(max) = inputs.feed_map.max_target() {
            if max as usize >= n {
                return Err(Error::config(
                    "inputs.feed_map",
                    format!("target {max} does not exist in a {n}-neuron topology"),
                ));
            }
        }
        let n_lgn = inputs.feed_map.lgn.len();
        let n_bkg = inputs.feed_map.bkg.len();
        if let Some(s) = inputs.lgn_spikes.iter().find(|s| s.source as usize >= n_lgn) {
            return Err(Error::config(
                "inputs.lgn_spikes",
                format!("source {} has no feed_map entry ({n_lgn} LGN sources)", s.source),
            ));
        }
        if let Some(s) = inputs.bkg_spikes.iter().find(|s| s.source as usize >= n_bkg) {
            return Err(Error::config(
                "inputs.bkg_spikes",
                format!("source {} has no feed_map entry ({n_bkg} BKG sources)", s.source),
            ));
        }

        let mut e_leak = Vec::with_capacity(n);
        let mut v_threshold = Vec::with_capacity(n);
        let mut v_reset = Vec::with_capacity(n);
        let mut decay = Vec::with_capacity(n);
        let mut drive_gain = Vec::with_capacity(n);
        let mut refractory_steps = Vec::with_capacity(n);
        for p in &topology.neurons {
            let d = (-dt / p.tau_membrane).exp();
            e_leak.push(p.e_leak);
            v_threshold.push(p.v_threshold);
            v_reset.push(p.v_reset);
            decay.push(d);
            drive_gain.push(p.resistance() * (1.0 - d));
            // Smallest whole number of steps covering t_refractory.
            let r = p.t_refractory / dt;
            let steps = if (r - r.round()).abs() <= GRID_EPS { r.round() } else { r.ceil() };
            refractory_steps.push(steps.max(0.0) as u32);
        }

        let mut order: Vec<usize> = (0..topology.synapses.len()).collect();
        order.sort_by_key(|&i| topology.synapses[i].pre);
        let mut syn_offsets = vec![0u32; n + 1];
        let mut syn_post = Vec::with_capacity(order.len());
        let mut syn_weight = Vec::with_capacity(order.len());
        let mut syn_delay = Vec::with_capacity(order.len());
        let mut max_delay = 1u32;
        for &i in &order {
            let s = &topology.synapses[i];
            if s.pre as usize >= n || s.post as usize >= n {
                return Err(Error::config(
                    "topology.synapses",
                    format!("synapse {} -> {} references a missing neuron", s.pre, s.post),
                ));
            }
            let d = ((s.delay / dt).round() as u32).max(1);
            max_delay = max_delay.max(d);
            syn_offsets[s.pre as usize + 1] += 1;
            syn_post.push(s.post);
            syn_weight.push(s.weight);
            syn_delay.push(d);
        }
        for i in 0..n {
            syn_offsets[i + 1] += syn_offsets[i];
        }

        let mut feed_offsets = Vec::with_capacity(n_lgn + n_bkg + 1);
        let mut feed_target = Vec::new();
        let mut feed_weight = Vec::new();
        feed_offsets.push(0u32);
        for targets in inputs.feed_map.lgn.iter().chain(inputs.feed_map.bkg.iter()) {
            for &(t, w) in targets {
                feed_target.push(t);
                feed_weight.push(w);
            }
            feed_offsets.push(feed_target.len() as u32);
        }

        // Bin input spikes by delivery step; BKG sources follow LGN sources.
        let mut per_step = vec![0u32; n_steps as usize + 1];
        let tagged = inputs
            .lgn_spikes
            .iter()
            .map(|s| (s.time, s.source))
            .chain(inputs.bkg_spikes.iter().map(|s| (s.time, s.source + n_lgn as u32)));
        let mut binned: Vec<(u32, u32)> = Vec::with_capacity(inputs.lgn_spikes.len() + inputs.bkg_spikes.len());
        for (time, src) in tagged {
            if time < 0.0 {
                return Err(Error::config("inputs", format!("negative spike time {time}")));
            }
            let k = input_step(time, dt);
            if k < n_steps as u64 {
                binned.push((k as u32, src));
                per_step[k as usize + 1] += 1;
            }
        }
        binned.sort_unstable();
        for k in 0..n_steps as usize {
            per_step[k + 1] += per_step[k];
        }
        let input_source = binned.into_iter().map(|(_, s)| s).collect();

        Ok(CompiledNetwork {
            dt,
            n_steps,
            e_leak,
            v_threshold,
            v_reset,
            decay,
            drive_gain,
            refractory_steps,
            syn_offsets,
            syn_post,
            syn_weight,
            syn_delay,
            ring_len: max_delay as usize + 1,
            feed_offsets,
            feed_target,
            feed_weight,
            input_offsets: per_step,
            input_source,
        })
    }

    pub fn n_neurons(&self) -> usize {
        self.e_leak.len()
    }

    pub fn n_steps(&self) -> u32 {
        self.n_steps
    }

    /// Whole steps a neuron stays refractory after a spike.
    pub fn refractory_steps(&self, id: NeuronId) -> u32 {
        self.refractory_steps[id as usize]
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }
}

/// A single run in progress. Owns all mutable state; the network is shared.
pub struct Simulation<'a> {
    net: &'a CompiledNetwork,
    v: Vec<f64>,
    refractory_until: Vec<u32>,
    last_spike: Vec<Option<u32>>,
    current: Vec<f64>,
    ring: Vec<f64>,
    step: u32,
    spikes_now: Vec<NeuronId>,
    record: SpikeRecord,
}

impl<'a> Simulation<'a> {
    pub fn new(net: &'a CompiledNetwork, config: &SimConfig) -> Self {
        let n = net.n_neurons();
        let v = if config.randomize_initial {
            let mut rng = stream_rng(config.seed, "engine/initial-v", 0);
            (0..n)
                .map(|i| {
                    let lo = net.e_leak[i].max(net.v_reset[i]).min(net.v_threshold[i]);
                    lo + rng.gen::<f64>() * (net.v_threshold[i] - lo)
                })
                .collect()
        } else {
            net.e_leak.clone()
        };
        Simulation {
            net,
            v,
            refractory_until: vec![0; n],
            last_spike: vec![None; n],
            current: vec![0.0; n],
            ring: vec![0.0; net.ring_len * n],
            step: 0,
            spikes_now: Vec::new(),
            record: SpikeRecord::new(net.dt, net.n_steps as f64 * net.dt),
        }
    }

    /// Constant injected current per neuron, in pA.
    pub fn set_external_current(&mut self, current: Vec<f64>) -> Result<()> {
        if current.len() != self.v.len() {
            return Err(Error::Usage(format!(
                "{} currents for {} neurons",
                current.len(),
                self.v.len()
            )));
        }
        self.current = current;
        Ok(())
    }

    pub fn set_voltages(&mut self, v: Vec<f64>) -> Result<()> {
        if v.len() != self.v.len() {
            return Err(Error::Usage(format!("{} voltages for {} neurons", v.len(), self.v.len())));
        }
        self.v = v;
        Ok(())
    }

    /// Time of the next step to execute.
    pub fn time(&self) -> f64 {
        self.step as f64 * self.net.dt
    }

    pub fn step_index(&self) -> u32 {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.net.n_steps
    }

    pub fn voltages(&self) -> &[f64] {
        &self.v
    }

    pub fn state(&self, id: NeuronId) -> NeuronState {
        let i = id as usize;
        NeuronState {
            v: self.v[i],
            refractory_until: self.refractory_until[i] as f64 * self.net.dt,
            last_spike: self.last_spike[i].map(|s| s as f64 * self.net.dt),
        }
    }

    /// Executes the step at time `t`, which must be the next grid point.
    pub fn step_at(&mut self, t: f64, hook: &dyn AttackHook) -> Result<&[NeuronId]> {
        let expected = self.time();
        match steps_of(t, self.net.dt) {
            Some(k) if k == self.step as u64 => Ok(self.step(hook)),
            _ => Err(Error::Internal(format!(
                "step requested at t={t} ms but the next grid point is {expected} ms"
            ))),
        }
    }

    /// Advances one step and returns the neurons that fired in it.
    pub fn step(&mut self, hook: &dyn AttackHook) -> &[NeuronId] {
        let net = self.net;
        let n = self.v.len();
        let k = self.step;
        debug_assert!(k < net.n_steps, "stepping past the end of the run");
        let t = k as f64 * net.dt;
        let slot = (k as usize % net.ring_len) * n;

        // (1) delivery: inputs are added to the current ring slot.
        let (lo, hi) = (net.input_offsets[k as usize] as usize, net.input_offsets[k as usize + 1] as usize);
        {
            let acc = &mut self.ring[slot..slot + n];
            for &src in &net.input_source[lo..hi] {
                let (a, b) = (net.feed_offsets[src as usize] as usize, net.feed_offsets[src as usize + 1] as usize);
                for j in a..b {
                    acc[net.feed_target[j] as usize] += net.feed_weight[j];
                }
            }
        }

        self.spikes_now.clear();
        let hook_active = hook.is_active(k, t);

        // (2) leak integration; refractory neurons hold reset and drop input.
        for i in 0..n {
            let pending = std::mem::take(&mut self.ring[slot + i]);
            if k < self.refractory_until[i] {
                continue;
            }
            let v = self.v[i] + pending;
            let el = net.e_leak[i];
            let next = el + (v - el) * net.decay[i] + net.drive_gain[i] * self.current[i];
            self.v[i] = next.max(net.v_reset[i]);
            if !hook_active {
                self.threshold(i, k);
            }
        }

        if hook_active {
            // (3) hook, then (4) threshold test.
            let mut view = Membranes {
                v: &mut self.v,
                v_threshold: &net.v_threshold,
                v_reset: &net.v_reset,
                refractory_until: &self.refractory_until,
                step: k,
            };
            hook.apply(k, t, &mut view);
            for i in 0..n {
                if k >= self.refractory_until[i] {
                    self.threshold(i, k);
                }
            }
        }

        for &id in &self.spikes_now {
            self.record.events.push(Spike { step: k, neuron: id });
        }
        self.step += 1;
        &self.spikes_now
    }

    #[inline]
    fn threshold(&mut self, i: usize, k: u32) {
        let net = self.net;
        if self.v[i] < net.v_threshold[i] {
            return;
        }
        self.v[i] = net.v_reset[i];
        self.refractory_until[i] = k + net.refractory_steps[i];
        self.last_spike[i] = Some(k);
        self.spikes_now.push(i as NeuronId);
        let n = self.v.len();
        let (a, b) = (net.syn_offsets[i] as usize, net.syn_offsets[i + 1] as usize);
        for j in a..b {
            let slot = ((k + net.syn_delay[j]) as usize % net.ring_len) * n;
            self.ring[slot + net.syn_post[j] as usize] += net.syn_weight[j];
        }
    }

    /// Runs all remaining steps.
    pub fn run_to_end(&mut self, hook: &dyn AttackHook) {
        while !self.is_finished() {
            self.step(hook);
        }
    }

    /// Runs until (excluding) `step`.
    pub fn run_until(&mut self, step: u32, hook: &dyn AttackHook) {
        while self.step < step.min(self.net.n_steps) {
            self.step(hook);
        }
    }

    pub fn record(&self) -> &SpikeRecord {
        &self.record
    }

    pub fn into_record(self) -> SpikeRecord {
        self.record
    }
}

/// Simulates `topology` driven by `inputs` for `config.duration` with the
/// given hook.
pub fn run(
    config: &SimConfig,
    topology: &Topology,
    inputs: &InputSpikeSet,
    hook: &dyn AttackHook,
) -> Result<SpikeRecord> {
    let net = CompiledNetwork::new(config, topology, inputs)?;
    Ok(run_compiled(&net, config, hook))
}

/// Like [`run`] on a precompiled network.
pub fn run_compiled(net: &CompiledNetwork, config: &SimConfig, hook: &dyn AttackHook) -> SpikeRecord {
    let mut sim = Simulation::new(net, config);
    sim.run_to_end(hook);
    let mut rec = sim.into_record();
    rec.meta.seed = config.seed;
    rec
}

#[cfg(test)]
mod tests;
