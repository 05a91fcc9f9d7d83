use super::*;
use crate::model::{
    build_topology, Layer, NeuronParams, Polarity, Position, Synapse, Topology, TopologySpec,
};
use crate::stimgen::{
    flash_timeline, generate_inputs, resolve_trial, FeedMap, InputSpec, InputSpike, Stimulus,
};

fn lif(e_leak: f64, v_th: f64, tau: f64, c: f64, t_ref: f64) -> NeuronParams {
    NeuronParams {
        v_threshold: v_th,
        v_reset: e_leak,
        e_leak,
        tau_membrane: tau,
        capacitance: c,
        t_refractory: t_ref,
        polarity: Polarity::Excitatory,
        layer: Layer::L4,
        position: Position::default(),
    }
}

fn at_rest(duration: f64) -> SimConfig {
    SimConfig {
        duration,
        randomize_initial: false,
        ..SimConfig::default()
    }
}

fn small_network(n: usize, seed: u64) -> (Topology, InputSpikeSet) {
    let spec = TopologySpec {
        n_neurons: n,
        ..TopologySpec::default()
    };
    let topo = build_topology(&spec, seed).unwrap();
    let trial = resolve_trial(&Stimulus::Flash, 9).unwrap();
    let inputs = generate_inputs(&topo, &flash_timeline(), &trial, &InputSpec::for_neurons(n), seed).unwrap();
    (topo, inputs)
}

#[test]
fn isolated_neuron_stays_at_rest() {
    let topo = Topology::from_parts(vec![lif(-70.0, -50.0, 10.0, 250.0, 2.0)], vec![]);
    let inputs = InputSpikeSet::empty();
    let cfg = at_rest(1000.0);
    let net = CompiledNetwork::new(&cfg, &topo, &inputs).unwrap();
    let mut sim = Simulation::new(&net, &cfg);
    while !sim.is_finished() {
        assert!(sim.step(&NullHook).is_empty());
        assert_eq!(sim.voltages()[0], -70.0);
    }
    assert!(sim.record().is_empty());
}

#[test]
fn constant_current_first_spike_matches_closed_form() {
    for (e_leak, v_th, tau, c, i_ext) in [
        (-70.0, -50.0, 10.0, 250.0, 600.0),
        (-65.0, -55.0, 20.0, 200.0, 150.0),
        (-70.0, -52.0, 5.0, 100.0, 400.0),
    ] {
        let p = lif(e_leak, v_th, tau, c, 2.0);
        let ri = p.resistance() * i_ext;
        let t_star = tau * (ri / (ri - (v_th - e_leak))).ln();
        let topo = Topology::from_parts(vec![p], vec![]);
        let inputs = InputSpikeSet::empty();
        let cfg = at_rest(200.0);
        let net = CompiledNetwork::new(&cfg, &topo, &inputs).unwrap();
        let mut sim = Simulation::new(&net, &cfg);
        sim.set_external_current(vec![i_ext]).unwrap();
        sim.run_to_end(&NullHook);
        let first = sim.record().times().next().unwrap().0;
        // Each step integrates one full dt, so the crossing is stamped on the
        // grid point before the interval in which it happens.
        assert!((first - t_star).abs() <= cfg.dt, "{first} vs {t_star}");
    }
}

#[test]
fn forced_threshold_fires_once() {
    let topo = Topology::from_parts(vec![lif(-70.0, -50.0, 10.0, 250.0, 2.0)], vec![]);
    let inputs = InputSpikeSet::empty();
    let cfg = at_rest(20.0);
    let net = CompiledNetwork::new(&cfg, &topo, &inputs).unwrap();
    let mut sim = Simulation::new(&net, &cfg);
    let hook = FnHook(|step: u32, _t: f64, m: &mut Membranes<'_>| {
        if step == 20 {
            let th = m.v_threshold(0);
            m.force(0, th);
        }
    });
    sim.run_to_end(&hook);
    assert_eq!(sim.record().events, vec![Spike { step: 20, neuron: 0 }]);
}

#[test]
fn refractory_neuron_ignores_forcing() {
    let topo = Topology::from_parts(vec![lif(-70.0, -50.0, 10.0, 250.0, 2.0)], vec![]);
    let inputs = InputSpikeSet::empty();
    let cfg = at_rest(20.0);
    let net = CompiledNetwork::new(&cfg, &topo, &inputs).unwrap();
    let mut sim = Simulation::new(&net, &cfg);
    // Force at step 10 and again 4 steps (1 ms) later, inside the 2 ms refractory period.
    let hook = FnHook(|step: u32, _t: f64, m: &mut Membranes<'_>| {
        if step == 10 || step == 14 || step == 18 {
            let th = m.v_threshold(0);
            let took = m.force(0, th);
            assert_eq!(took, step != 14);
        }
    });
    sim.run_to_end(&hook);
    let steps: Vec<u32> = sim.record().events.iter().map(|s| s.step).collect();
    assert_eq!(steps, vec![10, 18]);
}

#[test]
fn three_neuron_chain() {
    let n = || lif(-70.0, -50.0, 10.0, 250.0, 2.0);
    let syn = |pre, post| Synapse { pre, post, weight: 30.0, delay: 1.0 };
    let topo = Topology::from_parts(vec![n(), n(), n()], vec![syn(0, 1), syn(1, 2)]);
    let inputs = InputSpikeSet {
        lgn_spikes: vec![InputSpike { time: 10.0, source: 0 }],
        bkg_spikes: vec![],
        feed_map: FeedMap {
            lgn: vec![vec![(0, 30.0)]],
            bkg: vec![],
        },
    };
    let rec = run(&at_rest(50.0), &topo, &inputs, &NullHook).unwrap();
    let got: Vec<(f64, u32)> = rec.times().collect();
    assert_eq!(got, vec![(10.0, 0), (11.0, 1), (12.0, 2)]);
}

#[test]
fn misaligned_step_is_internal_error() {
    let topo = Topology::from_parts(vec![lif(-70.0, -50.0, 10.0, 250.0, 2.0)], vec![]);
    let inputs = InputSpikeSet::empty();
    let cfg = at_rest(10.0);
    let net = CompiledNetwork::new(&cfg, &topo, &inputs).unwrap();
    let mut sim = Simulation::new(&net, &cfg);
    sim.step_at(0.0, &NullHook).unwrap();
    assert!(matches!(sim.step_at(0.3, &NullHook), Err(Error::Internal(_))));
    assert!(matches!(sim.step_at(0.75, &NullHook), Err(Error::Internal(_))));
    sim.step_at(0.25, &NullHook).unwrap();
}

#[test]
fn feed_map_mismatch_rejected() {
    let topo = Topology::from_parts(vec![lif(-70.0, -50.0, 10.0, 250.0, 2.0)], vec![]);
    let inputs = InputSpikeSet {
        lgn_spikes: vec![],
        bkg_spikes: vec![],
        feed_map: FeedMap {
            lgn: vec![vec![(3, 1.0)]],
            bkg: vec![],
        },
    };
    let err = run(&at_rest(10.0), &topo, &inputs, &NullHook).unwrap_err();
    assert!(matches!(err, Error::Config { ref field, .. } if field == "inputs.feed_map"));

    let inputs = InputSpikeSet {
        lgn_spikes: vec![InputSpike { time: 1.0, source: 2 }],
        bkg_spikes: vec![],
        feed_map: FeedMap {
            lgn: vec![vec![(0, 1.0)]],
            bkg: vec![],
        },
    };
    assert!(run(&at_rest(10.0), &topo, &inputs, &NullHook).unwrap_err().is_config());
}

#[test]
fn config_validation() {
    let bad = SimConfig {
        duration: 10.1,
        ..SimConfig::default()
    };
    assert!(bad.n_steps().is_err());
    let bad = SimConfig {
        dt: 0.0,
        ..SimConfig::default()
    };
    assert!(bad.n_steps().is_err());
    assert_eq!(SimConfig::default().n_steps().unwrap(), 12_000);
}

struct NeverHook;

impl AttackHook for NeverHook {
    fn is_active(&self, _step: u32, _t: f64) -> bool {
        true
    }

    fn apply(&self, _step: u32, _t: f64, _m: &mut Membranes<'_>) {}
}

#[test]
fn determinism_and_hook_neutrality() {
    let (topo, inputs) = small_network(300, 3);
    let cfg = SimConfig {
        duration: 500.0,
        seed: 5,
        ..SimConfig::default()
    };
    let a = run(&cfg, &topo, &inputs, &NullHook).unwrap();
    let b = run(&cfg, &topo, &inputs, &NullHook).unwrap();
    let c = run(&cfg, &topo, &inputs, &NeverHook).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn dynamical_invariants() {
    let (topo, inputs) = small_network(300, 4);
    let cfg = SimConfig {
        duration: 600.0,
        seed: 1,
        ..SimConfig::default()
    };
    let net = CompiledNetwork::new(&cfg, &topo, &inputs).unwrap();
    let mut sim = Simulation::new(&net, &cfg);
    while !sim.is_finished() {
        let fired = sim.step(&NullHook).to_vec();
        for id in fired {
            // Reset.
            assert_eq!(sim.voltages()[id as usize], topo.neurons[id as usize].v_reset);
        }
        for (i, &v) in sim.voltages().iter().enumerate() {
            let p = &topo.neurons[i];
            assert!(v >= p.v_reset, "neuron {i} below reset: {v}");
        }
    }
    let rec = sim.into_record();
    assert!(rec.is_sorted());
    assert!(rec.len() > 100);
    for (i, p) in topo.neurons.iter().enumerate() {
        let steps = rec.neuron_steps(i as u32);
        for w in steps.windows(2) {
            let gap = (w[1] - w[0]) as f64 * cfg.dt;
            assert!(gap >= p.t_refractory - 1e-9, "neuron {i}: gap {gap} < {}", p.t_refractory);
        }
    }
    for (t, _) in rec.times() {
        assert_eq!((t / cfg.dt).fract(), 0.0);
    }
}

#[test]
fn truncated_run_is_a_prefix() {
    let (topo, inputs) = small_network(200, 6);
    let full = SimConfig {
        duration: 400.0,
        seed: 2,
        ..SimConfig::default()
    };
    let short = SimConfig {
        duration: 250.0,
        ..full.clone()
    };
    let a = run(&full, &topo, &inputs, &NullHook).unwrap();
    let b = run(&short, &topo, &inputs, &NullHook).unwrap();
    assert_eq!(a.before_step(1000), &b.events[..]);
}
