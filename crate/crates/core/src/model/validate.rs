use std::fmt;

use super::{NeuronId, Polarity, Topology, DEFAULT_RESOLUTION_MS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subject {
    Neuron(NeuronId),
    /// Index into `Topology::synapses`.
    Synapse(usize),
    Layer(super::Layer),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    ResetBelowThreshold,
    PositiveTimeConstant,
    PositiveCapacitance,
    NonNegativeRefractory,
    InsideCylinder,
    ValidEndpoint,
    NoSelfSynapse,
    DelayAtLeastResolution,
    SignMatchesPolarity,
    LayerCountMatches,
    LayerPopulated,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::ResetBelowThreshold => "v_reset < v_threshold",
            Rule::PositiveTimeConstant => "tau_membrane > 0",
            Rule::PositiveCapacitance => "capacitance > 0",
            Rule::NonNegativeRefractory => "t_refractory >= 0",
            Rule::InsideCylinder => "position inside cylinder",
            Rule::ValidEndpoint => "synapse endpoints are valid neuron ids",
            Rule::NoSelfSynapse => "no self-synapses",
            Rule::DelayAtLeastResolution => "delay >= resolution",
            Rule::SignMatchesPolarity => "sign(weight) matches pre polarity",
            Rule::LayerCountMatches => "layer_counts match neurons",
            Rule::LayerPopulated => "layer with positive fraction is nonempty",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub subject: Subject,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.subject {
            Subject::Neuron(id) => write!(f, "neuron {id}: ")?,
            Subject::Synapse(i) => write!(f, "synapse #{i}: ")?,
            Subject::Layer(l) => write!(f, "layer {l}: ")?,
        }
        write!(f, "{} ({})", self.rule, self.detail)
    }
}

/// Checks every neuron, synapse and topology invariant against the default
/// resolution.
pub fn validate_topology(t: &Topology) -> Vec<Violation> {
    validate_topology_with(t, DEFAULT_RESOLUTION_MS)
}

/// Like [`validate_topology`] with an explicit simulation resolution for the
/// minimum-delay rule. Never fails; returns an empty list iff all invariants
/// hold.
pub fn validate_topology_with(t: &Topology, resolution_ms: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |subject, rule, detail: String| out.push(Violation { subject, rule, detail });

    for (i, n) in t.neurons.iter().enumerate() {
        let id = Subject::Neuron(i as NeuronId);
        if !(n.v_reset < n.v_threshold) {
            push(id, Rule::ResetBelowThreshold, format!("{} >= {}", n.v_reset, n.v_threshold));
        }
        if !(n.tau_membrane > 0.0) {
            push(id, Rule::PositiveTimeConstant, format!("{}", n.tau_membrane));
        }
        if !(n.capacitance > 0.0) {
            push(id, Rule::PositiveCapacitance, format!("{}", n.capacitance));
        }
        if !(n.t_refractory >= 0.0) {
            push(id, Rule::NonNegativeRefractory, format!("{}", n.t_refractory));
        }
        if let Some(spec) = &t.spec {
            let r = n.position.x.hypot(n.position.y);
            let (top, bottom) = n.layer.depth_range();
            if r > spec.cylinder_radius || n.position.z < top || n.position.z >= bottom {
                push(
                    id,
                    Rule::InsideCylinder,
                    format!("r={r:.1} z={:.1} for {}", n.position.z, n.layer),
                );
            }
        }
    }

    let n = t.neurons.len();
    for (i, s) in t.synapses.iter().enumerate() {
        let id = Subject::Synapse(i);
        if s.pre as usize >= n || s.post as usize >= n {
            push(id, Rule::ValidEndpoint, format!("{} -> {} with {n} neurons", s.pre, s.post));
            continue;
        }
        if s.pre == s.post {
            push(id, Rule::NoSelfSynapse, format!("{} -> {}", s.pre, s.post));
        }
        if !(s.delay >= resolution_ms) {
            push(id, Rule::DelayAtLeastResolution, format!("{} < {resolution_ms}", s.delay));
        }
        let ok = match t.neurons[s.pre as usize].polarity {
            Polarity::Excitatory => s.weight > 0.0,
            Polarity::Inhibitory => s.weight < 0.0,
        };
        if !ok {
            push(
                id,
                Rule::SignMatchesPolarity,
                format!(
                    "weight {} from {} neuron {}",
                    s.weight,
                    t.neurons[s.pre as usize].polarity.as_str(),
                    s.pre
                ),
            );
        }
    }

    for (&layer, &count) in &t.layer_counts {
        let actual = t.neurons.iter().filter(|n| n.layer == layer).count();
        if actual != count {
            push(Subject::Layer(layer), Rule::LayerCountMatches, format!("{count} recorded, {actual} present"));
        }
    }
    if let Some(spec) = &t.spec {
        for (&layer, &f) in &spec.layer_fractions {
            if f > 0.0 && t.layer_counts.get(&layer).copied().unwrap_or(0) == 0 {
                push(Subject::Layer(layer), Rule::LayerPopulated, format!("fraction {f}"));
            }
        }
    }
    out
}
