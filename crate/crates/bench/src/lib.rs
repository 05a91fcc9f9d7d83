//! Fixtures shared by the benchmarks.

use neurostrike_core::engine::{run_compiled, CompiledNetwork, NullHook, SimConfig, SpikeRecord};
use neurostrike_core::model::{build_topology, Topology, TopologySpec};
use neurostrike_core::stimgen::{generate_inputs, resolve_trial, InputSpec, InputSpikeSet, LgnRates, Stimulus};

pub struct Fixture {
    pub topology: Topology,
    pub inputs: InputSpikeSet,
    pub config: SimConfig,
}

impl Fixture {
    /// A flash-stimulus network at `scale` of the full model.
    pub fn flash(scale: f64, seed: u64) -> Self {
        let spec = TopologySpec::for_scale(scale);
        let topology = build_topology(&spec, seed).expect("topology");
        let input_spec = InputSpec::for_neurons(topology.len());
        let stimulus = Stimulus::Flash;
        let timeline = stimulus.timeline(&LgnRates::default()).expect("timeline");
        let trial = resolve_trial(&stimulus, 9).expect("trial");
        let inputs = generate_inputs(&topology, &timeline, &trial, &input_spec, seed).expect("inputs");
        let config = SimConfig {
            duration: timeline.total_duration,
            seed,
            ..SimConfig::default()
        };
        Fixture {
            topology,
            inputs,
            config,
        }
    }

    pub fn compile(&self) -> CompiledNetwork {
        CompiledNetwork::new(&self.config, &self.topology, &self.inputs).expect("compile")
    }

    pub fn baseline(&self) -> SpikeRecord {
        run_compiled(&self.compile(), &self.config, &NullHook)
    }
}
