//! Spiking cortical microcircuit simulator for studying neuronal flooding
//! (FLO) and neuronal jamming (JAM) attacks.
//!
//! The crate is organized bottom-up:
//!
//! * [`model`]: GLIF-1 neuron parameters and layered topology generation,
//! * [`stimgen`]: stimulus timelines, trial registry and Poisson inputs,
//! * [`engine`]: the clock-driven simulation loop with an attack hook,
//! * [`attacks`]: FLO/JAM hooks, target selection and the attack schedule,
//! * [`metrics`]: interval counts, impact deltas, shift percentage,
//!   recovery and rebound,
//! * [`harness`]: experiment orchestration, manifests and the full grid.

pub mod attacks;
pub mod engine;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod seeding;
pub mod stimgen;

pub use engine::{run, AttackHook, CompiledNetwork, NullHook, SimConfig, Simulation, Spike, SpikeRecord};
pub use error::{Error, Result};
pub use model::{build_topology, validate_topology, NeuronParams, Synapse, Topology, TopologySpec};
pub use stimgen::{InputSpikeSet, Stimulus, StimulusTimeline, TrialSpec};
