//! Experiment orchestration.
//!
//! An experiment is one baseline run plus `repetitions` attacked runs that
//! share every input and engine seed with the baseline and differ only in
//! which neurons are targeted. Each experiment writes its spike records, an
//! impact report and a manifest from which every record can be regenerated.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{
    attack_schedule, build_hook, select_targets, AttackConfig, AttackKind, AttackTiming, TargetSet, GRID_FRACTIONS,
};
use crate::engine::{run_compiled, CompiledNetwork, RecordMeta, SimConfig, SpikeRecord};
use crate::error::{Error, Result};
use crate::metrics::{ImpactReport, MetricOptions};
use crate::model::{build_topology, read_topology, Topology, TopologySpec, DEFAULT_RESOLUTION_MS};
use crate::seeding::mix64;
use crate::stimgen::{generate_inputs, resolve_trial, InputSpec, Stimulus, TrialSpec};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_REPETITIONS: u32 = 10;
pub const DEFAULT_LGN_TRIAL: u32 = 9;
pub const DEFAULT_SCALE: f64 = 0.01;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_CSV_FILE: &str = "impact_report.csv";
pub const REPORT_JSON_FILE: &str = "impact_report.json";
pub const GRID_SUMMARY_FILE: &str = "grid_summary.csv";

/// Where the network comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum TopologySource {
    /// Generated from a spec with the experiment's base seed.
    Spec { spec: TopologySpec },
    /// Read from a directory written by `write_topology`.
    Path { path: PathBuf },
}

fn default_lgn_trial() -> u32 {
    DEFAULT_LGN_TRIAL
}

fn default_repetitions() -> u32 {
    DEFAULT_REPETITIONS
}

fn default_true() -> bool {
    true
}

fn default_dt() -> f64 {
    DEFAULT_RESOLUTION_MS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment_id: Option<String>,
    pub topology: TopologySource,
    /// External input layout; defaults to [`InputSpec::for_neurons`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<InputSpec>,
    pub stimulus: Stimulus,
    #[serde(default = "default_lgn_trial")]
    pub lgn_trial: u32,
    /// Overrides the background trial paired with `lgn_trial`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bkg_trial: Option<u32>,
    pub attack: AttackConfig,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    #[serde(default)]
    pub base_seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_true")]
    pub write_spikes: bool,
    /// Draw fresh input and engine seeds for every repetition, each with its
    /// own baseline. By default inputs are fixed and only targets change.
    #[serde(default)]
    pub resample_inputs: bool,
    /// Parallel runs; 0 uses every available core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub metrics: MetricOptions,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

impl ExperimentConfig {
    /// Desk-scale defaults around one stimulus and attack.
    pub fn new(stimulus: Stimulus, attack: AttackConfig, output_dir: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            experiment_id: None,
            topology: TopologySource::Spec {
                spec: TopologySpec::for_scale(DEFAULT_SCALE),
            },
            inputs: None,
            stimulus,
            lgn_trial: DEFAULT_LGN_TRIAL,
            bkg_trial: None,
            attack,
            repetitions: DEFAULT_REPETITIONS,
            base_seed: 0,
            output_dir: output_dir.into(),
            write_spikes: true,
            resample_inputs: false,
            workers: 0,
            metrics: MetricOptions::default(),
            dt: DEFAULT_RESOLUTION_MS,
        }
    }

    /// The explicit id, or one derived from stimulus, attack and fraction,
    /// e.g. `flash_FLO_625_25` or `movie_JAM_400-500_50`.
    pub fn experiment_id(&self) -> String {
        if let Some(id) = &self.experiment_id {
            return id.clone();
        }
        let a = &self.attack;
        let pct = (a.target_fraction * 100.0).round();
        match a.timing {
            AttackTiming::None => format!("{}_NONE", self.stimulus),
            AttackTiming::Flo { t_attack } => format!("{}_FLO_{t_attack}_{pct}", self.stimulus),
            AttackTiming::Jam { t0, t1 } => format!("{}_JAM_{t0}-{t1}_{pct}", self.stimulus),
        }
    }

    pub fn trial(&self) -> Result<TrialSpec> {
        let mut trial = resolve_trial(&self.stimulus, self.lgn_trial)?;
        if let Some(b) = self.bkg_trial {
            trial.bkg_trial = b;
        }
        trial.validate()?;
        Ok(trial)
    }

    pub fn sim_config(&self, engine_seed: u64) -> Result<SimConfig> {
        let timeline = self.stimulus.timeline(&self.input_rates())?;
        Ok(SimConfig {
            duration: timeline.total_duration,
            dt: self.dt,
            seed: engine_seed,
            randomize_initial: true,
        })
    }

    fn input_rates(&self) -> crate::stimgen::LgnRates {
        self.inputs.as_ref().map(|i| i.rates.clone()).unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::config("repetitions", "must be at least 1"));
        }
        let id = self.experiment_id();
        if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
            return Err(Error::config("experiment_id", format!("{id:?} is not a valid directory name")));
        }
        self.trial()?;
        if let Some(inputs) = &self.inputs {
            inputs.validate()?;
        }
        if let TopologySource::Spec { spec } = &self.topology {
            spec.validate()?;
        }
        let sim = self.sim_config(0)?;
        sim.n_steps()?;
        self.attack.validate(&sim)?;
        if self.metrics.interval_ms <= 0.0 {
            return Err(Error::config("metrics.interval_ms", "must be positive"));
        }
        if self.metrics.recovery_tolerance <= 0.0 {
            return Err(Error::config("metrics.recovery_tolerance", "must be positive"));
        }
        Ok(())
    }

    pub fn experiment_dir(&self) -> PathBuf {
        self.output_dir.join(self.experiment_id())
    }

    /// Input and engine seed of repetition `rep`.
    pub fn input_seed(&self, rep: u32) -> u64 {
        if self.resample_inputs {
            mix64(self.base_seed ^ mix64(u64::from(rep) + 1))
        } else {
            self.base_seed
        }
    }

    /// Target selection seed of repetition `rep`.
    pub fn selection_seed(&self, rep: u32) -> u64 {
        self.base_seed.wrapping_add(u64::from(rep))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunRole {
    Baseline,
    Attacked,
}

/// Per-run attack bookkeeping, compared against the paired baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackCheck {
    /// Spikes from targets inside the attack span (the FLO step or the JAM window).
    pub target_spikes_in_span: usize,
    /// FLO only: targets not refractory at the attack step.
    pub forced_expected: Option<usize>,
    /// Network-wide spikes inside the span, attacked and baseline.
    pub span_spikes: usize,
    pub span_spikes_baseline: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub run_id: String,
    pub role: RunRole,
    pub repetition: Option<u32>,
    pub input_seed: u64,
    pub engine_seed: u64,
    pub selection_seed: Option<u64>,
    pub n_targets: usize,
    pub n_spikes: usize,
    /// Relative to the experiment directory.
    pub spikes_file: Option<String>,
    pub elapsed_ms: f64,
    pub check: Option<AttackCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Failed { message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub experiment_id: String,
    pub config: ExperimentConfig,
    pub topology_seed: u64,
    pub n_neurons: usize,
    pub n_synapses: usize,
    pub trial: TrialSpec,
    pub runs: Vec<RunEntry>,
    pub report_csv: Option<String>,
    pub report_json: Option<String>,
    pub status: RunStatus,
    pub elapsed_ms: f64,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
        let m: RunManifest = serde_json::from_slice(&raw)?;
        if m.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::Parse {
                path: path.to_owned(),
                message: format!("unsupported manifest format_version {}", m.format_version),
            });
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut body = serde_json::to_vec_pretty(self)?;
        body.push(b'\n');
        fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn run(&self, run_id: &str) -> Option<&RunEntry> {
        self.runs.iter().find(|r| r.run_id == run_id)
    }

    pub fn baseline_for(&self, entry: &RunEntry) -> Option<&RunEntry> {
        self.runs
            .iter()
            .find(|r| r.role == RunRole::Baseline && r.input_seed == entry.input_seed && r.engine_seed == entry.engine_seed)
    }
}

/// Loads or generates the experiment topology.
pub fn load_topology(source: &TopologySource, seed: u64) -> Result<Topology> {
    match source {
        TopologySource::Spec { spec } => build_topology(spec, seed),
        TopologySource::Path { path } => read_topology(path),
    }
}

/// A stimulus-driven network compiled for one input seed, with its baseline
/// computed on first use.
pub struct Prepared {
    topology: Arc<Topology>,
    trial: TrialSpec,
    input_seed: u64,
    sim: SimConfig,
    net: CompiledNetwork,
    baseline: OnceLock<SpikeRecord>,
}

impl Prepared {
    pub fn new(config: &ExperimentConfig, topology: Arc<Topology>, input_seed: u64) -> Result<Self> {
        let trial = config.trial()?;
        let sim = config.sim_config(input_seed)?;
        let spec = config
            .inputs
            .clone()
            .unwrap_or_else(|| InputSpec::for_neurons(topology.len()));
        let timeline = config.stimulus.timeline(&spec.rates)?;
        let inputs = generate_inputs(&topology, &timeline, &trial, &spec, input_seed)?;
        let net = CompiledNetwork::new(&sim, &topology, &inputs)?;
        Ok(Prepared {
            topology,
            trial,
            input_seed,
            sim,
            net,
            baseline: OnceLock::new(),
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn network(&self) -> &CompiledNetwork {
        &self.net
    }

    pub fn sim_config(&self) -> &SimConfig {
        &self.sim
    }

    /// The null-attack run; metadata is left blank.
    pub fn baseline(&self) -> &SpikeRecord {
        self.baseline.get_or_init(|| run_compiled(&self.net, &self.sim, &crate::engine::NullHook))
    }

    fn run_attacked(&self, attack: &AttackConfig, targets: &TargetSet) -> Result<SpikeRecord> {
        let hook = build_hook(attack, targets, self.sim.dt)?;
        Ok(run_compiled(&self.net, &self.sim, hook.as_ref()))
    }

    fn meta(&self, run_id: &str, attack: &AttackConfig) -> RecordMeta {
        RecordMeta {
            run_id: run_id.to_owned(),
            attack: attack.kind().to_string(),
            attack_param: attack.param_string(),
            lgn_trial: self.trial.lgn_trial,
            bkg_trial: self.trial.bkg_trial,
            seed: self.sim.seed,
        }
    }

    fn check(&self, attack: &AttackConfig, targets: &TargetSet, record: &SpikeRecord) -> Option<AttackCheck> {
        let (from, to) = match attack.timing {
            AttackTiming::None => return None,
            AttackTiming::Flo { t_attack } => {
                let k = self.sim.step_of(t_attack)?;
                (k, k + 1)
            }
            AttackTiming::Jam { t0, t1 } => {
                let first = |t: f64| (t / self.sim.dt - 1e-9).ceil().max(0.0) as u32;
                (first(t0), first(t1))
            }
        };
        let base = self.baseline();
        let in_span = record.in_steps(from, to);
        let forced_expected = matches!(attack.timing, AttackTiming::Flo { .. }).then(|| {
            // The prefix before the attack matches the baseline, so refractoriness
            // at the attack step can be read off the baseline record.
            let prefix = base.before_step(from);
            targets
                .neuron_ids
                .iter()
                .filter(|&&id| {
                    let last = prefix.iter().rev().find(|s| s.neuron == id).map(|s| s.step);
                    !matches!(last, Some(s) if from < s + self.net.refractory_steps(id))
                })
                .count()
        });
        Some(AttackCheck {
            target_spikes_in_span: in_span.iter().filter(|s| targets.contains(s.neuron)).count(),
            forced_expected,
            span_spikes: in_span.len(),
            span_spikes_baseline: base.in_steps(from, to).len(),
        })
    }
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if workers > 0 {
        b = b.num_threads(workers);
    }
    b.build().map_err(|e| Error::Internal(format!("cannot start worker pool: {e}")))
}

struct RepOutcome {
    baseline: Option<(RunEntry, SpikeRecord)>,
    attacked: (RunEntry, SpikeRecord),
}

/// Runs one experiment and writes its files under
/// `output_dir/<experiment_id>/`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(RunManifest, ImpactReport)> {
    config.validate()?;
    let topology = Arc::new(load_topology(&config.topology, config.base_seed)?);
    let pool = thread_pool(config.workers)?;
    let shared = if config.resample_inputs {
        None
    } else {
        Some(Arc::new(Prepared::new(config, topology.clone(), config.input_seed(0))?))
    };
    pool.install(|| execute(config, &topology, shared.as_deref()))
}

/// Runs `config` against an already prepared network. The caller must have
/// built `prepared` from the same topology, stimulus and input seed.
pub fn run_experiment_prepared(
    config: &ExperimentConfig,
    prepared: &Prepared,
    workers: usize,
) -> Result<(RunManifest, ImpactReport)> {
    config.validate()?;
    if config.resample_inputs || prepared.input_seed != config.input_seed(0) {
        return Err(Error::Usage(
            "prepared network does not match the experiment's input seeds".into(),
        ));
    }
    let pool = thread_pool(workers)?;
    let topology = prepared.topology.clone();
    pool.install(|| execute(config, &topology, Some(prepared)))
}

fn execute(
    config: &ExperimentConfig,
    topology: &Arc<Topology>,
    shared: Option<&Prepared>,
) -> Result<(RunManifest, ImpactReport)> {
    let started = Instant::now();
    let id = config.experiment_id();
    let dir = config.experiment_dir();
    let trial = config.trial()?;
    let mut manifest = RunManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        experiment_id: id.clone(),
        config: config.clone(),
        topology_seed: config.base_seed,
        n_neurons: topology.len(),
        n_synapses: topology.synapses.len(),
        trial,
        runs: Vec::new(),
        report_csv: None,
        report_json: None,
        status: RunStatus::Complete,
        elapsed_ms: 0.0,
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let result = (|| -> Result<ImpactReport> {
        let shared_baseline = match shared {
            Some(p) => {
                let t = Instant::now();
                let mut rec = p.baseline().clone();
                rec.meta = p.meta(&format!("{id}/baseline"), &AttackConfig::none());
                let entry = baseline_entry(config, &rec, 0, t, None);
                let entry = persist(config, &dir, entry, &rec, "spikes_baseline.csv")?;
                manifest.runs.push(entry);
                Some(rec)
            }
            None => None,
        };

        let outcomes: Vec<Result<RepOutcome>> = (0..config.repetitions)
            .into_par_iter()
            .map(|rep| run_repetition(config, topology, shared, rep))
            .collect();

        let mut pairs_owned = Vec::with_capacity(outcomes.len());
        for (rep, outcome) in outcomes.into_iter().enumerate() {
            let outcome = outcome?;
            let base = match outcome.baseline {
                Some((entry, rec)) => {
                    let file = format!("spikes_baseline_rep{rep:02}.csv");
                    manifest.runs.push(persist(config, &dir, entry, &rec, &file)?);
                    rec
                }
                None => shared_baseline.clone().ok_or_else(|| Error::Internal("missing baseline".into()))?,
            };
            let (entry, rec) = outcome.attacked;
            let file = format!("spikes_rep{rep:02}.csv");
            manifest.runs.push(persist(config, &dir, entry, &rec, &file)?);
            pairs_owned.push((base, rec));
        }

        let pairs: Vec<(&SpikeRecord, &SpikeRecord)> = pairs_owned.iter().map(|(b, a)| (b, a)).collect();
        let report = ImpactReport::from_pairs(&pairs, config.attack.span(), &config.metrics)?;
        report.write_csv(&dir.join(REPORT_CSV_FILE))?;
        report.write_json(&dir.join(REPORT_JSON_FILE))?;
        manifest.report_csv = Some(REPORT_CSV_FILE.into());
        manifest.report_json = Some(REPORT_JSON_FILE.into());
        Ok(report)
    })();

    manifest.elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
    match result {
        Ok(report) => {
            manifest.write(&dir.join(MANIFEST_FILE))?;
            log::info!("{id}: {} runs in {:.0} ms", manifest.runs.len(), manifest.elapsed_ms);
            Ok((manifest, report))
        }
        Err(e) => {
            manifest.status = RunStatus::Failed { message: e.to_string() };
            // Best effort: the manifest records which runs completed.
            if let Err(w) = manifest.write(&dir.join(MANIFEST_FILE)) {
                log::warn!("{id}: could not write partial manifest: {w}");
            }
            Err(e)
        }
    }
}

fn baseline_entry(config: &ExperimentConfig, rec: &SpikeRecord, rep: u32, t: Instant, repetition: Option<u32>) -> RunEntry {
    RunEntry {
        run_id: rec.meta.run_id.clone(),
        role: RunRole::Baseline,
        repetition,
        input_seed: config.input_seed(rep),
        engine_seed: rec.meta.seed,
        selection_seed: None,
        n_targets: 0,
        n_spikes: rec.len(),
        spikes_file: None,
        elapsed_ms: t.elapsed().as_secs_f64() * 1e3,
        check: None,
    }
}

fn persist(config: &ExperimentConfig, dir: &Path, mut entry: RunEntry, rec: &SpikeRecord, file: &str) -> Result<RunEntry> {
    if config.write_spikes {
        rec.write_csv(&dir.join(file))?;
        entry.spikes_file = Some(file.to_owned());
    }
    Ok(entry)
}

fn run_repetition(
    config: &ExperimentConfig,
    topology: &Arc<Topology>,
    shared: Option<&Prepared>,
    rep: u32,
) -> Result<RepOutcome> {
    let id = config.experiment_id();
    let own;
    let prepared = match shared {
        Some(p) => p,
        None => {
            own = Prepared::new(config, topology.clone(), config.input_seed(rep))?;
            &own
        }
    };
    let baseline = if shared.is_none() {
        let t = Instant::now();
        let mut rec = prepared.baseline().clone();
        rec.meta = prepared.meta(&format!("{id}/baseline_rep{rep:02}"), &AttackConfig::none());
        Some((baseline_entry(config, &rec, rep, t, Some(rep)), rec))
    } else {
        None
    };

    let t = Instant::now();
    let selection_seed = config.selection_seed(rep);
    let (targets, mut rec) = if config.attack.kind() == AttackKind::None {
        (TargetSet::empty(), prepared.baseline().clone())
    } else {
        let targets = select_targets(prepared.topology(), config.attack.target_fraction, selection_seed)?;
        let rec = prepared.run_attacked(&config.attack, &targets)?;
        (targets, rec)
    };
    rec.meta = prepared.meta(&format!("{id}/rep{rep:02}"), &config.attack);
    let entry = RunEntry {
        run_id: rec.meta.run_id.clone(),
        role: RunRole::Attacked,
        repetition: Some(rep),
        input_seed: prepared.input_seed,
        engine_seed: prepared.sim.seed,
        selection_seed: Some(selection_seed),
        n_targets: targets.len(),
        n_spikes: rec.len(),
        spikes_file: None,
        elapsed_ms: t.elapsed().as_secs_f64() * 1e3,
        check: prepared.check(&config.attack, &targets, &rec),
    };
    Ok(RepOutcome {
        baseline,
        attacked: (entry, rec),
    })
}

/// Regenerates one run of a manifest from its recorded seeds.
pub fn replay_run(manifest: &RunManifest, run_id: &str) -> Result<SpikeRecord> {
    let entry = manifest
        .run(run_id)
        .ok_or_else(|| Error::Usage(format!("run {run_id:?} not in manifest {}", manifest.experiment_id)))?;
    let config = &manifest.config;
    let topology = Arc::new(load_topology(&config.topology, manifest.topology_seed)?);
    let prepared = Prepared::new(config, topology, entry.input_seed)?;
    let attack = match entry.role {
        RunRole::Baseline => AttackConfig::none(),
        RunRole::Attacked => config.attack.clone(),
    };
    let mut rec = match (entry.role, entry.selection_seed) {
        (RunRole::Attacked, Some(seed)) if attack.kind() != AttackKind::None => {
            let targets = select_targets(prepared.topology(), attack.target_fraction, seed)?;
            prepared.run_attacked(&attack, &targets)?
        }
        _ => prepared.baseline().clone(),
    };
    rec.meta = prepared.meta(run_id, &attack);
    Ok(rec)
}

/// Recomputes the impact report of an experiment directory from its spike
/// CSVs and rewrites the report files.
pub fn report_from_dir(dir: &Path) -> Result<ImpactReport> {
    let manifest = RunManifest::read(&dir.join(MANIFEST_FILE))?;
    let config = &manifest.config;
    let duration = config.sim_config(0)?.duration;
    let load = |entry: &RunEntry| -> Result<SpikeRecord> {
        let file = entry.spikes_file.as_ref().ok_or_else(|| {
            Error::Usage(format!("run {} has no spike file; rerun with spike output enabled", entry.run_id))
        })?;
        let mut rec = SpikeRecord::read_csv(&dir.join(file), config.dt, duration)?;
        rec.meta.run_id = entry.run_id.clone();
        rec.meta.seed = entry.engine_seed;
        rec.meta.lgn_trial = manifest.trial.lgn_trial;
        rec.meta.bkg_trial = manifest.trial.bkg_trial;
        Ok(rec)
    };
    let mut pairs_owned = Vec::new();
    for entry in manifest.runs.iter().filter(|r| r.role == RunRole::Attacked) {
        let base = manifest
            .baseline_for(entry)
            .ok_or_else(|| Error::Usage(format!("no baseline paired with {}", entry.run_id)))?;
        pairs_owned.push((load(base)?, load(entry)?));
    }
    let pairs: Vec<(&SpikeRecord, &SpikeRecord)> = pairs_owned.iter().map(|(b, a)| (b, a)).collect();
    let report = ImpactReport::from_pairs(&pairs, config.attack.span(), &config.metrics)?;
    report.write_csv(&dir.join(REPORT_CSV_FILE))?;
    report.write_json(&dir.join(REPORT_JSON_FILE))?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub scale: f64,
    pub output_dir: PathBuf,
    pub base_seed: u64,
    pub repetitions: u32,
    pub workers: usize,
    pub write_spikes: bool,
    pub lgn_trial: u32,
    pub stimuli: Vec<Stimulus>,
    pub fractions: Vec<f64>,
    /// Overrides the topology generated for `scale`.
    pub topology: Option<TopologySpec>,
    pub inputs: Option<InputSpec>,
    pub metrics: MetricOptions,
}

impl GridConfig {
    pub fn new(scale: f64, output_dir: impl Into<PathBuf>) -> Self {
        GridConfig {
            scale,
            output_dir: output_dir.into(),
            base_seed: 0,
            repetitions: DEFAULT_REPETITIONS,
            workers: 0,
            write_spikes: true,
            lgn_trial: DEFAULT_LGN_TRIAL,
            stimuli: Stimulus::standard_set().to_vec(),
            fractions: GRID_FRACTIONS.to_vec(),
            topology: None,
            inputs: None,
            metrics: MetricOptions::default(),
        }
    }

    pub fn topology_spec(&self) -> Result<TopologySpec> {
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(Error::config("scale", format!("{} outside (0, 1]", self.scale)));
        }
        Ok(self.topology.clone().unwrap_or_else(|| TopologySpec::for_scale(self.scale)))
    }
}

/// One `(stimulus, attack, event, fraction)` combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub index: usize,
    pub stimulus: Stimulus,
    pub kind: AttackKind,
    pub event_index: usize,
    pub fraction: f64,
    pub attack: AttackConfig,
}

impl GridCell {
    pub fn experiment_id(&self) -> String {
        let mut c = ExperimentConfig::new(self.stimulus.clone(), self.attack.clone(), "");
        c.experiment_id = None;
        format!("cell{:02}_{}", self.index, c.experiment_id())
    }
}

/// Enumerates the cells in stimulus, attack, event, fraction order.
pub fn grid_cells(stimuli: &[Stimulus], fractions: &[f64]) -> Result<Vec<GridCell>> {
    let mut cells = Vec::new();
    for stimulus in stimuli {
        for kind in [AttackKind::Flo, AttackKind::Jam] {
            for (event_index, attack) in attack_schedule(stimulus, kind)?.into_iter().enumerate() {
                for &fraction in fractions {
                    cells.push(GridCell {
                        index: cells.len(),
                        stimulus: stimulus.clone(),
                        kind,
                        event_index,
                        fraction,
                        attack: attack.clone().with_fraction(fraction),
                    });
                }
            }
        }
    }
    Ok(cells)
}

/// One line of `grid_summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub cell: usize,
    pub experiment_id: String,
    pub stimulus: String,
    pub attack: String,
    pub event_index: usize,
    pub event: String,
    pub attack_param: String,
    pub fraction: f64,
    pub status: String,
    pub error: String,
    pub n_targets: Option<usize>,
    pub attack_interval: Option<usize>,
    pub baseline_count: Option<f64>,
    pub attacked_mean: Option<f64>,
    pub delta: Option<f64>,
    pub percent: Option<f64>,
    pub shift_pct: Option<f64>,
    pub recovery_intervals: Option<usize>,
    pub rebound_interval: Option<usize>,
    pub rebound_z: Option<f64>,
    /// Summed over repetitions.
    pub target_spikes_in_span: Option<usize>,
    /// Repetitions where FLO targets did not fire exactly as forced.
    pub forced_mismatches: Option<usize>,
    pub span_spikes_baseline: Option<f64>,
    pub span_spikes_attacked_mean: Option<f64>,
}

impl GridRow {
    fn new(cell: &GridCell, id: &str) -> Self {
        GridRow {
            cell: cell.index,
            experiment_id: id.to_owned(),
            stimulus: cell.stimulus.to_string(),
            attack: cell.kind.to_string(),
            event_index: cell.event_index,
            event: cell.attack.event.clone().unwrap_or_default(),
            attack_param: cell.attack.param_string(),
            fraction: cell.fraction,
            status: "ok".into(),
            error: String::new(),
            n_targets: None,
            attack_interval: None,
            baseline_count: None,
            attacked_mean: None,
            delta: None,
            percent: None,
            shift_pct: None,
            recovery_intervals: None,
            rebound_interval: None,
            rebound_z: None,
            target_spikes_in_span: None,
            forced_mismatches: None,
            span_spikes_baseline: None,
            span_spikes_attacked_mean: None,
        }
    }

    fn fill(&mut self, manifest: &RunManifest, report: &ImpactReport) {
        let attacked: Vec<&RunEntry> = manifest.runs.iter().filter(|r| r.role == RunRole::Attacked).collect();
        self.n_targets = attacked.first().map(|r| r.n_targets);
        if let Some((k, _)) = report.attack_intervals {
            self.attack_interval = Some(k);
            self.baseline_count = Some(report.counts_baseline.mean.values[k]);
            self.attacked_mean = Some(report.counts_attacked.mean.values[k]);
            self.delta = Some(report.delta[k]);
            self.percent = report.percent_change[k];
            self.shift_pct = Some(report.shift_percentage.mean.values[k]);
        }
        self.recovery_intervals = report.recovery_intervals;
        self.rebound_interval = report.rebound_peak.map(|p| p.interval);
        self.rebound_z = report.rebound_peak.map(|p| p.z);
        let checks: Vec<&AttackCheck> = attacked.iter().filter_map(|r| r.check.as_ref()).collect();
        if !checks.is_empty() {
            let n = checks.len() as f64;
            self.target_spikes_in_span = Some(checks.iter().map(|c| c.target_spikes_in_span).sum());
            self.forced_mismatches = Some(
                checks
                    .iter()
                    .filter(|c| c.forced_expected.is_some_and(|e| e != c.target_spikes_in_span))
                    .count(),
            );
            self.span_spikes_baseline = Some(checks[0].span_spikes_baseline as f64);
            self.span_spikes_attacked_mean = Some(checks.iter().map(|c| c.span_spikes as f64).sum::<f64>() / n);
        }
    }
}

pub struct GridOutcome {
    pub cells: Vec<GridCell>,
    pub rows: Vec<GridRow>,
    /// Manifests of cells that completed, in cell order.
    pub manifests: Vec<RunManifest>,
    pub reports: Vec<ImpactReport>,
    pub summary_path: PathBuf,
}

impl GridOutcome {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.status != "ok").count()
    }
}

/// Runs every grid cell at `scale`. A failing cell is recorded in the summary
/// and the remaining cells still run.
pub fn run_grid(config: &GridConfig) -> Result<GridOutcome> {
    let spec = config.topology_spec()?;
    spec.validate()?;
    let cells = grid_cells(&config.stimuli, &config.fractions)?;
    fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
    let topology = Arc::new(build_topology(&spec, config.base_seed)?);
    let pool = thread_pool(config.workers)?;
    log::info!(
        "grid: {} cells on {} neurons, {} synapses",
        cells.len(),
        topology.len(),
        topology.synapses.len()
    );

    let experiment = |cell: &GridCell| {
        let mut c = ExperimentConfig::new(cell.stimulus.clone(), cell.attack.clone(), &config.output_dir);
        c.experiment_id = Some(cell.experiment_id());
        c.topology = TopologySource::Spec { spec: spec.clone() };
        c.inputs = config.inputs.clone();
        c.lgn_trial = config.lgn_trial;
        c.repetitions = config.repetitions;
        c.base_seed = config.base_seed;
        c.write_spikes = config.write_spikes;
        c.workers = config.workers;
        c.metrics = config.metrics.clone();
        c
    };

    let mut rows = Vec::with_capacity(cells.len());
    let mut manifests = Vec::new();
    let mut reports = Vec::new();
    let mut prepared: Option<(Stimulus, Arc<Prepared>)> = None;
    for cell in &cells {
        let exp = experiment(cell);
        let id = exp.experiment_id();
        let mut row = GridRow::new(cell, &id);
        let outcome = (|| -> Result<(RunManifest, ImpactReport)> {
            exp.validate()?;
            let p = match &prepared {
                Some((s, p)) if *s == cell.stimulus => p.clone(),
                _ => {
                    let p = Arc::new(Prepared::new(&exp, topology.clone(), exp.input_seed(0))?);
                    prepared = Some((cell.stimulus.clone(), p.clone()));
                    p
                }
            };
            let topo = p.topology.clone();
            pool.install(|| execute(&exp, &topo, Some(&p)))
        })();
        match outcome {
            Ok((manifest, report)) => {
                row.fill(&manifest, &report);
                manifests.push(manifest);
                reports.push(report);
            }
            Err(e) => {
                log::warn!("{id}: {e}");
                row.status = "failed".into();
                row.error = e.to_string();
            }
        }
        rows.push(row);
    }

    let summary_path = config.output_dir.join(GRID_SUMMARY_FILE);
    let mut w = csv::Writer::from_path(&summary_path)?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(&summary_path, e))?;
    Ok(GridOutcome {
        cells,
        rows,
        manifests,
        reports,
        summary_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TopologySpec;

    fn small(stimulus: Stimulus, attack: AttackConfig, dir: &Path) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(stimulus, attack, dir);
        c.topology = TopologySource::Spec {
            spec: TopologySpec {
                n_neurons: 120,
                ..TopologySpec::default()
            },
        };
        c.repetitions = 3;
        c.base_seed = 5;
        c.workers = 1;
        c
    }

    #[test]
    fn derived_ids() {
        let c = ExperimentConfig::new(Stimulus::Flash, AttackConfig::flo(625.0, 0.25), "out");
        assert_eq!(c.experiment_id(), "flash_FLO_625_25");
        let c = ExperimentConfig::new(Stimulus::gratings(90), AttackConfig::jam(400.0, 500.0, 0.5), "out");
        assert_eq!(c.experiment_id(), "gratings90_JAM_400-500_50");
        assert_eq!(c.selection_seed(3), 3);
    }

    #[test]
    fn invalid_configs_fail_before_running() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small(Stimulus::Flash, AttackConfig::flo(625.0, 0.25), dir.path());
        c.repetitions = 0;
        assert!(run_experiment(&c).unwrap_err().is_config());
        let c = small(Stimulus::Flash, AttackConfig::flo(625.1, 0.25), dir.path());
        assert!(run_experiment(&c).unwrap_err().is_config());
        let mut c = small(Stimulus::Flash, AttackConfig::flo(625.0, 0.25), dir.path());
        c.bkg_trial = Some(3);
        assert!(run_experiment(&c).unwrap_err().is_config());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn experiment_layout_and_pairing() {
        let dir = tempfile::tempdir().unwrap();
        let c = small(Stimulus::Flash, AttackConfig::flo(625.0, 0.25), dir.path());
        let (m, report) = run_experiment(&c).unwrap();
        let exp = dir.path().join("flash_FLO_625_25");
        for f in [MANIFEST_FILE, REPORT_CSV_FILE, REPORT_JSON_FILE, "spikes_baseline.csv"] {
            assert!(exp.join(f).is_file(), "{f}");
        }
        let spike_files = fs::read_dir(&exp)
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("spikes_"))
            .count();
        assert_eq!(spike_files, 4);
        assert_eq!(m.runs.len(), 4);
        assert_eq!(report.repetitions, 3);
        let attacked: Vec<_> = m.runs.iter().filter(|r| r.role == RunRole::Attacked).collect();
        let seeds: Vec<_> = attacked.iter().map(|r| r.selection_seed.unwrap()).collect();
        assert_eq!(seeds, vec![5, 6, 7]);
        for r in &attacked {
            assert_eq!(r.engine_seed, m.runs[0].engine_seed);
            assert_eq!(r.n_targets, 30);
            let check = r.check.as_ref().unwrap();
            assert_eq!(Some(check.target_spikes_in_span), check.forced_expected);
        }
        assert!(report.pairing.iter().all(|p| p.baseline_run == "flash_FLO_625_25/baseline"));
        assert!(report.delta[6] > 0.0);
        assert_eq!(RunManifest::read(&exp.join(MANIFEST_FILE)).unwrap(), m);
    }

    #[test]
    fn null_attack_is_flat() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small(Stimulus::Movie, AttackConfig::none(), dir.path());
        c.repetitions = 2;
        let (_, report) = run_experiment(&c).unwrap();
        assert!(report.delta.iter().all(|&d| d == 0.0));
        assert!(report.shift_percentage.mean.values.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn rerun_is_byte_identical_and_replayable() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let mut ca = small(Stimulus::Flash, AttackConfig::jam(600.0, 700.0, 0.5), a.path());
        ca.repetitions = 1;
        let mut cb = ca.clone();
        cb.output_dir = b.path().to_owned();
        let (m, _) = run_experiment(&ca).unwrap();
        run_experiment(&cb).unwrap();
        let id = m.experiment_id.clone();
        for f in [REPORT_JSON_FILE, REPORT_CSV_FILE, "spikes_rep00.csv", "spikes_baseline.csv"] {
            assert_eq!(
                fs::read(a.path().join(&id).join(f)).unwrap(),
                fs::read(b.path().join(&id).join(f)).unwrap(),
                "{f}"
            );
        }
        let check = m.runs[1].check.as_ref().unwrap();
        assert_eq!(check.target_spikes_in_span, 0);

        let replay_dir = tempfile::tempdir().unwrap();
        for entry in &m.runs {
            let rec = replay_run(&m, &entry.run_id).unwrap();
            let p = replay_dir.path().join("r.csv");
            rec.write_csv(&p).unwrap();
            let original = a.path().join(&id).join(entry.spikes_file.as_ref().unwrap());
            assert_eq!(fs::read(p).unwrap(), fs::read(original).unwrap(), "{}", entry.run_id);
        }

        let before = fs::read(a.path().join(&id).join(REPORT_JSON_FILE)).unwrap();
        report_from_dir(&a.path().join(&id)).unwrap();
        assert_eq!(fs::read(a.path().join(&id).join(REPORT_JSON_FILE)).unwrap(), before);
    }

    #[test]
    fn resampled_inputs_get_their_own_baselines() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small(Stimulus::Flash, AttackConfig::flo(1300.0, 0.25), dir.path());
        c.repetitions = 2;
        c.resample_inputs = true;
        c.write_spikes = false;
        let (m, report) = run_experiment(&c).unwrap();
        let baselines: Vec<_> = m.runs.iter().filter(|r| r.role == RunRole::Baseline).collect();
        assert_eq!(baselines.len(), 2);
        assert_ne!(baselines[0].engine_seed, baselines[1].engine_seed);
        assert_eq!(report.pairing[1].baseline_run, baselines[1].run_id);
        assert!(m.runs.iter().all(|r| r.spikes_file.is_none()));
    }

    #[test]
    fn grid_enumeration() {
        let cells = grid_cells(&Stimulus::standard_set(), &GRID_FRACTIONS).unwrap();
        assert_eq!(cells.len(), 36);
        let cell = cells
            .iter()
            .find(|c| {
                c.stimulus == Stimulus::gratings(90) && c.kind == AttackKind::Jam && c.fraction == 0.5 && c.event_index == 0
            })
            .unwrap();
        assert_eq!(cell.attack.span(), Some((400.0, 500.0)));
        assert_eq!(TopologySpec::for_scale(0.01).n_neurons, 2309);
    }

    #[test]
    fn small_grid_continues_past_failures() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = GridConfig::new(0.01, dir.path());
        g.topology = Some(TopologySpec {
            n_neurons: 80,
            ..TopologySpec::default()
        });
        g.repetitions = 1;
        g.workers = 1;
        g.write_spikes = false;
        g.stimuli = vec![Stimulus::Flash];
        // A second fraction outside (0, 1] makes half the cells fail.
        g.fractions = vec![0.25, 1.5];
        let out = run_grid(&g).unwrap();
        assert_eq!(out.rows.len(), 12);
        assert_eq!(out.failures(), 6);
        assert_eq!(out.manifests.len(), 6);
        let summary = fs::read_to_string(&out.summary_path).unwrap();
        assert_eq!(summary.lines().count(), 13);
        let jam = out.rows.iter().find(|r| r.attack == "JAM" && r.status == "ok").unwrap();
        assert_eq!(jam.target_spikes_in_span, Some(0));
    }
}
