//! Neuronal flooding (FLO) and neuronal jamming (JAM).
//!
//! FLO sets every target's voltage to its own threshold at a single step so
//! each non-refractory target fires at that step. JAM clamps every target to
//! its reset voltage at every step of a window so no target can fire inside
//! it. Targets are a uniform sample, without replacement, over all neurons of
//! all layers.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::engine::{AttackHook, Membranes, NullHook, SimConfig};
use crate::error::{Error, Result};
use crate::model::{NeuronId, Topology};
use crate::seeding::stream_rng;
use crate::stimgen::Stimulus;

/// Default JAM window length.
pub const JAM_WINDOW_MS: f64 = 100.0;

/// The two target fractions of the experiment grid.
pub const GRID_FRACTIONS: [f64; 2] = [0.25, 0.5];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AttackKind {
    Flo,
    Jam,
    None,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::Flo => "FLO",
            AttackKind::Jam => "JAM",
            AttackKind::None => "NONE",
        }
    }

    /// The voltage each attack forces.
    pub fn voltage_mode(self) -> Option<VoltageMode> {
        match self {
            AttackKind::Flo => Some(VoltageMode::Threshold),
            AttackKind::Jam => Some(VoltageMode::Reset),
            AttackKind::None => None,
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "FLO" => Ok(AttackKind::Flo),
            "JAM" => Ok(AttackKind::Jam),
            "NONE" => Ok(AttackKind::None),
            other => Err(Error::config("attack", format!("unknown attack {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoltageMode {
    Threshold,
    Reset,
}

impl VoltageMode {
    pub fn as_str(self) -> &'static str {
        match self {
            VoltageMode::Threshold => "threshold",
            VoltageMode::Reset => "reset",
        }
    }
}

impl FromStr for VoltageMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "threshold" | "v_th" => Ok(VoltageMode::Threshold),
            "reset" | "v_reset" => Ok(VoltageMode::Reset),
            other => Err(Error::config("voltage_mode", format!("unknown voltage mode {other:?}"))),
        }
    }
}

/// When an attack acts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "UPPERCASE")]
pub enum AttackTiming {
    None,
    Flo { t_attack: f64 },
    /// Half-open window `[t0, t1)`.
    Jam { t0: f64, t1: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub timing: AttackTiming,
    pub target_fraction: f64,
    pub voltage_mode: Option<VoltageMode>,
    pub selection_seed: u64,
    /// Stimulus event the attack is aimed at, e.g. `on_flash`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<String>,
}

impl AttackConfig {
    pub fn none() -> Self {
        AttackConfig {
            timing: AttackTiming::None,
            target_fraction: 0.0,
            voltage_mode: None,
            selection_seed: 0,
            event: None,
        }
    }

    pub fn flo(t_attack: f64, target_fraction: f64) -> Self {
        AttackConfig {
            timing: AttackTiming::Flo { t_attack },
            target_fraction,
            voltage_mode: Some(VoltageMode::Threshold),
            selection_seed: 0,
            event: None,
        }
    }

    pub fn jam(t0: f64, t1: f64, target_fraction: f64) -> Self {
        AttackConfig {
            timing: AttackTiming::Jam { t0, t1 },
            target_fraction,
            voltage_mode: Some(VoltageMode::Reset),
            selection_seed: 0,
            event: None,
        }
    }

    pub fn with_fraction(mut self, fraction: f64) -> Self {
        self.target_fraction = fraction;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.selection_seed = seed;
        self
    }

    fn with_event(mut self, event: &str) -> Self {
        self.event = Some(event.to_owned());
        self
    }

    pub fn kind(&self) -> AttackKind {
        match self.timing {
            AttackTiming::None => AttackKind::None,
            AttackTiming::Flo { .. } => AttackKind::Flo,
            AttackTiming::Jam { .. } => AttackKind::Jam,
        }
    }

    /// `625` for FLO, `600:700` for JAM, empty otherwise.
    pub fn param_string(&self) -> String {
        match self.timing {
            AttackTiming::None => String::new(),
            AttackTiming::Flo { t_attack } => format!("{t_attack}"),
            AttackTiming::Jam { t0, t1 } => format!("{t0}:{t1}"),
        }
    }

    /// First and last-plus-one time the attack acts on, in ms.
    pub fn span(&self) -> Option<(f64, f64)> {
        match self.timing {
            AttackTiming::None => None,
            AttackTiming::Flo { t_attack } => Some((t_attack, t_attack)),
            AttackTiming::Jam { t0, t1 } => Some((t0, t1)),
        }
    }

    pub fn validate(&self, sim: &SimConfig) -> Result<()> {
        let kind = self.kind();
        if kind == AttackKind::None {
            return Ok(());
        }
        if !(self.target_fraction > 0.0 && self.target_fraction <= 1.0) {
            return Err(Error::config(
                "target_fraction",
                format!("{} outside (0, 1]", self.target_fraction),
            ));
        }
        if self.voltage_mode != kind.voltage_mode() {
            return Err(Error::config(
                "voltage_mode",
                format!(
                    "{kind} requires {}",
                    kind.voltage_mode().map_or("none", VoltageMode::as_str)
                ),
            ));
        }
        match self.timing {
            AttackTiming::None => {}
            AttackTiming::Flo { t_attack } => {
                if !(0.0..sim.duration).contains(&t_attack) || sim.step_of(t_attack).is_none() {
                    return Err(Error::config(
                        "t_attack",
                        format!("{t_attack} ms must be a grid point in [0, {})", sim.duration),
                    ));
                }
            }
            AttackTiming::Jam { t0, t1 } => {
                if !(t1 > t0) {
                    return Err(Error::config("window", format!("empty window [{t0}, {t1})")));
                }
                if t0 < 0.0 || t1 > sim.duration {
                    return Err(Error::config(
                        "window",
                        format!("[{t0}, {t1}) not inside [0, {})", sim.duration),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSet {
    /// Sorted ascending, unique.
    pub neuron_ids: Vec<NeuronId>,
    pub fraction_requested: f64,
    pub seed: u64,
}

impl TargetSet {
    pub fn empty() -> Self {
        TargetSet {
            neuron_ids: Vec::new(),
            fraction_requested: 0.0,
            seed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.neuron_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neuron_ids.is_empty()
    }

    pub fn contains(&self, id: NeuronId) -> bool {
        self.neuron_ids.binary_search(&id).is_ok()
    }
}

/// `round(fraction * n)`, halves rounded up.
pub fn target_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64) + 0.5).floor() as usize
}

/// Uniform sample of `round(fraction * N)` neurons over the whole topology.
pub fn select_targets(topology: &Topology, fraction: f64, seed: u64) -> Result<TargetSet> {
    select_from_population(topology.len(), fraction, seed)
}

/// [`select_targets`] on a population of `n` neuron ids `0..n`.
pub fn select_from_population(n: usize, fraction: f64, seed: u64) -> Result<TargetSet> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config("target_fraction", format!("{fraction} outside (0, 1]")));
    }
    let k = target_count(n, fraction).min(n);
    let mut rng = stream_rng(seed, "attacks/targets", 0);
    let mut ids: Vec<NeuronId> = sample(&mut rng, n, k).into_iter().map(|i| i as NeuronId).collect();
    ids.sort_unstable();
    Ok(TargetSet {
        neuron_ids: ids,
        fraction_requested: fraction,
        seed,
    })
}

/// Forces every target to its threshold voltage at one step.
#[derive(Clone, Debug)]
pub struct FloHook {
    targets: Vec<NeuronId>,
    step: u32,
}

impl AttackHook for FloHook {
    fn is_active(&self, step: u32, _t: f64) -> bool {
        step == self.step && !self.targets.is_empty()
    }

    fn apply(&self, step: u32, _t: f64, m: &mut Membranes<'_>) {
        if step != self.step {
            return;
        }
        for &id in &self.targets {
            let th = m.v_threshold(id);
            m.force(id, th);
        }
    }
}

/// Clamps every target to its reset voltage at each step of `[t0, t1)`.
#[derive(Clone, Debug)]
pub struct JamHook {
    targets: Vec<NeuronId>,
    start: u32,
    end: u32,
}

impl AttackHook for JamHook {
    fn is_active(&self, step: u32, _t: f64) -> bool {
        (self.start..self.end).contains(&step) && !self.targets.is_empty()
    }

    fn apply(&self, step: u32, _t: f64, m: &mut Membranes<'_>) {
        if !(self.start..self.end).contains(&step) {
            return;
        }
        for &id in &self.targets {
            let reset = m.v_reset(id);
            m.force(id, reset);
        }
    }
}

/// FLO hook acting at `t_attack`, which must lie on the `dt` grid.
pub fn flo_hook(targets: &TargetSet, t_attack: f64, dt: f64) -> Result<FloHook> {
    let grid = SimConfig {
        duration: f64::MAX,
        dt,
        ..SimConfig::default()
    };
    let step = grid
        .step_of(t_attack)
        .ok_or_else(|| Error::config("t_attack", format!("{t_attack} ms is not on the {dt} ms grid")))?;
    Ok(FloHook {
        targets: targets.neuron_ids.clone(),
        step,
    })
}

/// JAM hook covering every step whose time lies in `[t0, t1)`.
pub fn jam_hook(targets: &TargetSet, t0: f64, t1: f64, dt: f64) -> Result<JamHook> {
    if !(t1 > t0 && t0 >= 0.0) {
        return Err(Error::config("window", format!("invalid window [{t0}, {t1})")));
    }
    let first = |t: f64| (t / dt - 1e-9).ceil().max(0.0) as u32;
    Ok(JamHook {
        targets: targets.neuron_ids.clone(),
        start: first(t0),
        end: first(t1),
    })
}

/// Builds the hook for `config`; `None` attacks get a [`NullHook`].
pub fn build_hook(config: &AttackConfig, targets: &TargetSet, dt: f64) -> Result<Box<dyn AttackHook>> {
    Ok(match config.timing {
        AttackTiming::None => Box::new(NullHook),
        AttackTiming::Flo { t_attack } => Box::new(flo_hook(targets, t_attack, dt)?),
        AttackTiming::Jam { t0, t1 } => Box::new(jam_hook(targets, t0, t1, dt)?),
    })
}

/// The three single-event attacks for a `(stimulus, kind)` pair, each meant to
/// be run on its own. Fractions default to 25%.
pub fn attack_schedule(stimulus: &Stimulus, kind: AttackKind) -> Result<Vec<AttackConfig>> {
    let f = GRID_FRACTIONS[0];
    let flo = |t: f64, ev: &str| AttackConfig::flo(t, f).with_event(ev);
    let jam = |t0: f64, ev: &str| AttackConfig::jam(t0, t0 + JAM_WINDOW_MS, f).with_event(ev);
    let out = match (stimulus, kind) {
        (_, AttackKind::None) => {
            return Err(Error::config("attack", "NONE has no attack schedule"));
        }
        (Stimulus::Flash, AttackKind::Flo) => vec![
            flo(625.0, "on_flash"),
            flo(1300.0, "gray"),
            flo(1875.0, "off_flash"),
        ],
        (Stimulus::Flash, AttackKind::Jam) => vec![
            jam(600.0, "on_flash"),
            jam(1300.0, "gray"),
            jam(1800.0, "off_flash"),
        ],
        (Stimulus::Movie, AttackKind::Flo) => vec![
            flo(450.0, "gray"),
            flo(550.0, "movie_onset"),
            flo(1600.0, "movie_mid"),
        ],
        (Stimulus::Movie, AttackKind::Jam) => vec![
            jam(400.0, "gray"),
            jam(500.0, "movie_onset"),
            jam(1600.0, "movie_mid"),
        ],
        (Stimulus::Gratings { .. }, AttackKind::Flo) => vec![
            flo(450.0, "gray"),
            flo(600.0, "grating_onset"),
            flo(1600.0, "grating_mid"),
        ],
        (Stimulus::Gratings { .. }, AttackKind::Jam) => vec![
            jam(400.0, "gray"),
            jam(600.0, "grating_onset"),
            jam(1600.0, "grating_mid"),
        ],
    };
    Ok(out)
}

fn parse_kv(path: &Path) -> Result<BTreeMap<String, String>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (lineno, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_owned(),
            message: format!("line {}: expected key=value", lineno + 1),
        })?;
        out.insert(k.trim().to_owned(), v.trim().to_owned());
    }
    Ok(out)
}

fn get_f64(map: &BTreeMap<String, String>, key: &str, path: &Path) -> Result<f64> {
    let v = map.get(key).ok_or_else(|| Error::Parse {
        path: path.to_owned(),
        message: format!("missing key {key}"),
    })?;
    v.parse().map_err(|_| Error::Parse {
        path: path.to_owned(),
        message: format!("{key}={v} is not a number"),
    })
}

/// Reads the attack kind from `type_attack.txt` (first non-comment line).
pub fn read_type_attack(path: &Path) -> Result<AttackKind> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let line = raw
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .ok_or_else(|| Error::Parse {
            path: path.to_owned(),
            message: "empty attack type file".into(),
        })?;
    // Accept both `FLO` and `type=FLO`.
    let value = line.split_once('=').map_or(line, |(_, v)| v.trim());
    value.parse()
}

/// Reads `FLO_attributes.txt` (`t_attack_ms`, `target_fraction`, `voltage_mode`).
pub fn read_flo_attributes(path: &Path) -> Result<AttackConfig> {
    let kv = parse_kv(path)?;
    let mut cfg = AttackConfig::flo(get_f64(&kv, "t_attack_ms", path)?, get_f64(&kv, "target_fraction", path)?);
    if let Some(m) = kv.get("voltage_mode") {
        cfg.voltage_mode = Some(m.parse()?);
    }
    Ok(cfg)
}

/// Reads `JAM_attributes.txt` (`t0_ms`, `t1_ms`, `target_fraction`, `voltage_mode`).
pub fn read_jam_attributes(path: &Path) -> Result<AttackConfig> {
    let kv = parse_kv(path)?;
    let mut cfg = AttackConfig::jam(
        get_f64(&kv, "t0_ms", path)?,
        get_f64(&kv, "t1_ms", path)?,
        get_f64(&kv, "target_fraction", path)?,
    );
    if let Some(m) = kv.get("voltage_mode") {
        cfg.voltage_mode = Some(m.parse()?);
    }
    Ok(cfg)
}

/// Reads `type_attack.txt` and, depending on it, the matching attributes
/// file from the same directory.
pub fn read_attack_files(dir: &Path) -> Result<AttackConfig> {
    match read_type_attack(&dir.join("type_attack.txt"))? {
        AttackKind::None => Ok(AttackConfig::none()),
        AttackKind::Flo => read_flo_attributes(&dir.join("FLO_attributes.txt")),
        AttackKind::Jam => read_jam_attributes(&dir.join("JAM_attributes.txt")),
    }
}

/// Writes `type_attack.txt` plus the attributes file for the attack kind.
pub fn write_attack_files(dir: &Path, config: &AttackConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    write("type_attack.txt", format!("{}\n", config.kind()))?;
    let mode = config.voltage_mode.map_or("none", VoltageMode::as_str);
    match config.timing {
        AttackTiming::None => {}
        AttackTiming::Flo { t_attack } => write(
            "FLO_attributes.txt",
            format!(
                "t_attack_ms={t_attack}\ntarget_fraction={}\nvoltage_mode={mode}\n",
                config.target_fraction
            ),
        )?,
        AttackTiming::Jam { t0, t1 } => write(
            "JAM_attributes.txt",
            format!(
                "t0_ms={t0}\nt1_ms={t1}\ntarget_fraction={}\nvoltage_mode={mode}\n",
                config.target_fraction
            ),
        )?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run, CompiledNetwork, Simulation};
    use crate::model::{build_topology, TopologySpec};
    use crate::stimgen::{flash_timeline, generate_inputs, resolve_trial, InputSpec, InputSpikeSet};

    #[test]
    fn full_scale_target_counts() {
        assert_eq!(target_count(230_924, 0.5), 115_462);
        assert_eq!(target_count(230_924, 0.25), 57_731);
        let half = select_from_population(230_924, 0.5, 1).unwrap();
        assert_eq!(half.len(), 115_462);
        let quarter = select_from_population(230_924, 0.25, 1).unwrap();
        assert_eq!(quarter.len(), 57_731);
        assert!(quarter.neuron_ids.windows(2).all(|w| w[0] < w[1]));
        assert!(*quarter.neuron_ids.last().unwrap() < 230_924);
    }

    #[test]
    fn whole_population_and_bad_fractions() {
        let all = select_from_population(37, 1.0, 3).unwrap();
        assert_eq!(all.neuron_ids, (0..37).collect::<Vec<_>>());
        assert!(select_from_population(37, 0.0, 3).is_err());
        assert!(select_from_population(37, 1.2, 3).is_err());
        assert_eq!(
            select_from_population(500, 0.3, 9).unwrap(),
            select_from_population(500, 0.3, 9).unwrap()
        );
        assert_ne!(
            select_from_population(500, 0.3, 9).unwrap().neuron_ids,
            select_from_population(500, 0.3, 10).unwrap().neuron_ids
        );
    }

    #[test]
    fn selection_is_uniform_across_population() {
        // Each id is picked with probability 1/4; check hit counts over many seeds.
        let n = 40;
        let mut hits = vec![0u32; n];
        let trials = 4000;
        for seed in 0..trials {
            for id in select_from_population(n, 0.25, seed).unwrap().neuron_ids {
                hits[id as usize] += 1;
            }
        }
        let expected = trials as f64 * 0.25;
        let sd = (trials as f64 * 0.25 * 0.75).sqrt();
        for (i, &h) in hits.iter().enumerate() {
            assert!((h as f64 - expected).abs() < 4.5 * sd, "id {i}: {h}");
        }
    }

    #[test]
    fn schedules_match_table() {
        let instants = |s: &Stimulus| -> Vec<f64> {
            attack_schedule(s, AttackKind::Flo)
                .unwrap()
                .iter()
                .map(|c| c.span().unwrap().0)
                .collect()
        };
        let windows = |s: &Stimulus| -> Vec<(f64, f64)> {
            attack_schedule(s, AttackKind::Jam)
                .unwrap()
                .iter()
                .map(|c| c.span().unwrap())
                .collect()
        };
        assert_eq!(instants(&Stimulus::Flash), vec![625.0, 1300.0, 1875.0]);
        assert_eq!(instants(&Stimulus::Movie), vec![450.0, 550.0, 1600.0]);
        assert_eq!(instants(&Stimulus::gratings(90)), vec![450.0, 600.0, 1600.0]);
        assert_eq!(
            windows(&Stimulus::Flash),
            vec![(600.0, 700.0), (1300.0, 1400.0), (1800.0, 1900.0)]
        );
        assert_eq!(
            windows(&Stimulus::Movie),
            vec![(400.0, 500.0), (500.0, 600.0), (1600.0, 1700.0)]
        );
        assert_eq!(
            windows(&Stimulus::gratings(90)),
            vec![(400.0, 500.0), (600.0, 700.0), (1600.0, 1700.0)]
        );
        let flash_flo = attack_schedule(&Stimulus::Flash, AttackKind::Flo).unwrap();
        assert_eq!(flash_flo.len(), 3);
        for c in &flash_flo {
            assert_eq!(c.kind(), AttackKind::Flo);
            assert_eq!(c.voltage_mode, Some(VoltageMode::Threshold));
            c.validate(&SimConfig::default()).unwrap();
        }
        assert!(attack_schedule(&Stimulus::Flash, AttackKind::None).is_err());
    }

    #[test]
    fn config_validation() {
        let sim = SimConfig::default();
        assert!(AttackConfig::flo(625.1, 0.25).validate(&sim).is_err());
        assert!(AttackConfig::flo(3000.0, 0.25).validate(&sim).is_err());
        assert!(AttackConfig::jam(700.0, 600.0, 0.25).validate(&sim).is_err());
        assert!(AttackConfig::jam(2950.0, 3050.0, 0.25).validate(&sim).is_err());
        assert!(AttackConfig::flo(625.0, 0.0).validate(&sim).is_err());
        let mut wrong_mode = AttackConfig::jam(600.0, 700.0, 0.5);
        wrong_mode.voltage_mode = Some(VoltageMode::Threshold);
        assert!(wrong_mode.validate(&sim).is_err());
        AttackConfig::none().validate(&sim).unwrap();
    }

    #[test]
    fn attack_files_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        for cfg in [
            AttackConfig::flo(625.0, 0.25),
            AttackConfig::jam(600.0, 700.0, 0.5),
            AttackConfig::none(),
        ] {
            write_attack_files(dir.path(), &cfg).unwrap();
            assert_eq!(read_attack_files(dir.path()).unwrap(), cfg);
        }
        fs::write(dir.path().join("type_attack.txt"), "# comment\nJAM\n").unwrap();
        fs::write(
            dir.path().join("JAM_attributes.txt"),
            "t0_ms = 1300\nt1_ms=1400\n\ntarget_fraction=0.25\nvoltage_mode=reset\n",
        )
        .unwrap();
        assert_eq!(read_attack_files(dir.path()).unwrap(), AttackConfig::jam(1300.0, 1400.0, 0.25));
        fs::write(dir.path().join("type_attack.txt"), "SCA\n").unwrap();
        assert!(read_attack_files(dir.path()).unwrap_err().is_config());
    }

    fn network() -> (crate::model::Topology, InputSpikeSet) {
        let spec = TopologySpec {
            n_neurons: 300,
            ..TopologySpec::default()
        };
        let topo = build_topology(&spec, 21).unwrap();
        let trial = resolve_trial(&Stimulus::Flash, 9).unwrap();
        let inputs = generate_inputs(&topo, &flash_timeline(), &trial, &InputSpec::for_neurons(300), 21).unwrap();
        (topo, inputs)
    }

    #[test]
    fn flo_forces_non_refractory_targets() {
        let (topo, inputs) = network();
        let cfg = SimConfig {
            duration: 800.0,
            seed: 3,
            ..SimConfig::default()
        };
        let targets = select_targets(&topo, 0.5, 4).unwrap();
        let hook = flo_hook(&targets, 625.0, cfg.dt).unwrap();
        let net = CompiledNetwork::new(&cfg, &topo, &inputs).unwrap();
        let mut sim = Simulation::new(&net, &cfg);
        sim.run_until(2500, &hook);
        let refractory: Vec<u32> = targets
            .neuron_ids
            .iter()
            .copied()
            .filter(|&id| sim.state(id).refractory_until > 625.0)
            .collect();
        let fired = sim.step(&hook).to_vec();
        let from_targets = fired.iter().filter(|&&id| targets.contains(id)).count();
        assert_eq!(from_targets, targets.len() - refractory.len());
        for id in refractory {
            assert!(!fired.contains(&id));
        }
        sim.run_to_end(&hook);

        // Non-targets are unchanged at the attack step and everything before it.
        let base = run(&cfg, &topo, &inputs, &NullHook).unwrap();
        let rec = sim.into_record();
        assert_eq!(base.before_step(2500), rec.before_step(2500));
        let non_target = |r: &crate::engine::SpikeRecord| -> Vec<u32> {
            r.in_steps(2500, 2501)
                .iter()
                .filter(|s| !targets.contains(s.neuron))
                .map(|s| s.neuron)
                .collect()
        };
        assert_eq!(non_target(&base), non_target(&rec));
    }

    #[test]
    fn jam_silences_targets_in_window() {
        let (topo, inputs) = network();
        let cfg = SimConfig {
            duration: 900.0,
            seed: 3,
            ..SimConfig::default()
        };
        let targets = select_targets(&topo, 0.25, 8).unwrap();
        let hook = jam_hook(&targets, 600.0, 700.0, cfg.dt).unwrap();
        let base = run(&cfg, &topo, &inputs, &NullHook).unwrap();
        let rec = run(&cfg, &topo, &inputs, &hook).unwrap();
        let in_window = |r: &crate::engine::SpikeRecord| {
            r.in_steps(2400, 2800).iter().filter(|s| targets.contains(s.neuron)).count()
        };
        assert!(in_window(&base) > 0);
        assert_eq!(in_window(&rec), 0);
        assert_eq!(base.before_step(2400), rec.before_step(2400));

        let nobody = jam_hook(&TargetSet::empty(), 600.0, 700.0, cfg.dt).unwrap();
        assert_eq!(run(&cfg, &topo, &inputs, &nobody).unwrap(), base);
    }

    #[test]
    fn off_grid_flo_rejected() {
        assert!(flo_hook(&TargetSet::empty(), 625.1, 0.25).is_err());
        assert!(jam_hook(&TargetSet::empty(), 700.0, 600.0, 0.25).is_err());
    }
}
