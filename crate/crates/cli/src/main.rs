//! `neurostrike` command-line front end.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 runtime error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use neurostrike_core::attacks::{
    read_flo_attributes, read_jam_attributes, read_type_attack, AttackConfig, AttackKind, AttackTiming,
};
use neurostrike_core::harness::{
    report_from_dir, run_experiment, run_grid, ExperimentConfig, GridConfig, TopologySource, GRID_SUMMARY_FILE,
    MANIFEST_FILE,
};
use neurostrike_core::metrics::ImpactReport;
use neurostrike_core::model::{build_topology, write_topology, TopologySpec};
use neurostrike_core::stimgen::{
    generate_bkg_spikes, generate_lgn_spikes, resolve_trial, write_spike_train, write_timeline_json, InputSpec,
};
use neurostrike_core::{Error, Result, Stimulus};
use serde::de::DeserializeOwned;

/// Target fraction used when neither a file nor a flag sets one.
const DEFAULT_FRACTION: f64 = 0.25;

#[derive(Parser, Debug)]
#[command(name = "neurostrike", version, about = "Simulate neuronal flooding and jamming attacks on a spiking cortical model")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Parallel simulations (0 = all cores).
    #[arg(long, global = true, env = "NEUROSTRIKE_WORKERS")]
    workers: Option<usize>,
    /// Base seed for topology, inputs and engine.
    #[arg(long, global = true, env = "NEUROSTRIKE_SEED")]
    seed: Option<u64>,
    /// Network size as a fraction of the full 230,924-neuron model.
    #[arg(long, global = true, env = "NEUROSTRIKE_SCALE")]
    scale: Option<f64>,
    /// Output directory.
    #[arg(long, global = true, env = "NEUROSTRIKE_OUT")]
    out: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Topology generation.
    #[command(subcommand)]
    Topology(TopologyCmd),
    /// Stimulus and input spike generation.
    #[command(subcommand)]
    Stimulus(StimulusCmd),
    /// Run one experiment: a baseline plus attacked repetitions.
    Run(RunArgs),
    /// Run the 36-cell attack grid.
    Grid(GridArgs),
    /// Recompute reports from spike files already on disk.
    Report(ReportArgs),
}

#[derive(Subcommand, Debug)]
enum TopologyCmd {
    /// Build a topology and write neurons.csv, synapses.csv and topology.json.
    Build {
        /// Overrides the neuron count implied by --scale.
        #[arg(long)]
        n_neurons: Option<usize>,
    },
}

#[derive(Subcommand, Debug)]
enum StimulusCmd {
    /// Write the stimulus timeline and its LGN and background spike trains.
    Gen {
        #[arg(long, env = "NEUROSTRIKE_STIMULUS")]
        stimulus: String,
        #[arg(long, default_value_t = 9)]
        lgn_trial: u32,
        #[arg(long)]
        bkg_trial: Option<u32>,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Experiment JSON file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// flash, movie, gratings or gratings<deg>.
    #[arg(long, env = "NEUROSTRIKE_STIMULUS")]
    stimulus: Option<String>,
    /// FLO, JAM or NONE.
    #[arg(long, env = "NEUROSTRIKE_ATTACK")]
    attack: Option<String>,
    /// FLO attack instant in ms.
    #[arg(long)]
    instant: Option<f64>,
    /// JAM window as `t0:t1` in ms.
    #[arg(long)]
    window: Option<String>,
    /// Fraction of neurons targeted.
    #[arg(long)]
    fraction: Option<f64>,
    /// type_attack.txt; the FLO/JAM attribute files are read from its directory.
    #[arg(long)]
    type_attack_file: Option<PathBuf>,
    #[arg(long)]
    flo_attributes: Option<PathBuf>,
    #[arg(long)]
    jam_attributes: Option<PathBuf>,
    /// Existing topology directory instead of generating one.
    #[arg(long)]
    topology: Option<PathBuf>,
    #[arg(long)]
    repetitions: Option<u32>,
    #[arg(long)]
    lgn_trial: Option<u32>,
    #[arg(long)]
    bkg_trial: Option<u32>,
    /// Draw fresh inputs for every repetition.
    #[arg(long)]
    resample_inputs: bool,
    /// Skip writing spike CSVs.
    #[arg(long)]
    no_spikes: bool,
    #[arg(long)]
    id: Option<String>,
}

#[derive(Args, Debug)]
struct GridArgs {
    /// Grid JSON file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    repetitions: Option<u32>,
    #[arg(long)]
    lgn_trial: Option<u32>,
    /// Comma-separated stimuli.
    #[arg(long, value_delimiter = ',')]
    stimuli: Option<Vec<String>>,
    /// Comma-separated target fractions.
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    #[arg(long)]
    no_spikes: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// An experiment directory or a grid directory.
    dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Topology(TopologyCmd::Build { n_neurons }) => topology_build(cli, *n_neurons),
        Command::Stimulus(StimulusCmd::Gen {
            stimulus,
            lgn_trial,
            bkg_trial,
        }) => stimulus_gen(cli, stimulus, *lgn_trial, *bkg_trial),
        Command::Run(args) => run(cli, args),
        Command::Grid(args) => grid(cli, args),
        Command::Report(args) => report(&args.dir),
    }
}

fn out_dir(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn scale(cli: &Cli) -> Result<f64> {
    let s = cli.scale.unwrap_or(neurostrike_core::harness::DEFAULT_SCALE);
    if s > 0.0 && s <= 1.0 {
        Ok(s)
    } else {
        Err(Error::config("scale", format!("{s} outside (0, 1]")))
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = fs::read_to_string(path).map_err(|e| Error::Parse {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&raw).map_err(|e| Error::Parse {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

fn topology_build(cli: &Cli, n_neurons: Option<usize>) -> Result<()> {
    let mut spec = TopologySpec::for_scale(scale(cli)?);
    if let Some(n) = n_neurons {
        spec.n_neurons = n;
    }
    let topo = build_topology(&spec, cli.seed.unwrap_or(0))?;
    let dir = out_dir(cli, "topology");
    write_topology(&dir, &topo)?;
    println!(
        "{} neurons, {} synapses -> {}",
        topo.len(),
        topo.synapses.len(),
        dir.display()
    );
    Ok(())
}

fn stimulus_gen(cli: &Cli, stimulus: &str, lgn_trial: u32, bkg_trial: Option<u32>) -> Result<()> {
    let stimulus: Stimulus = stimulus.parse()?;
    let mut trial = resolve_trial(&stimulus, lgn_trial)?;
    if let Some(b) = bkg_trial {
        trial.bkg_trial = b;
        trial.validate()?;
    }
    let spec = TopologySpec::for_scale(scale(cli)?);
    let inputs = InputSpec::for_neurons(spec.n_neurons);
    let timeline = stimulus.timeline(&inputs.rates)?;
    let seed = cli.seed.unwrap_or(0);
    let lgn = generate_lgn_spikes(&timeline, inputs.n_lgn_sources, &trial, seed);
    let bkg = generate_bkg_spikes(timeline.total_duration, inputs.n_bkg_sources, &trial, seed);
    let dir = out_dir(cli, "stimulus");
    fs::create_dir_all(&dir).map_err(|e| runtime_io(&dir, e))?;
    write_timeline_json(&dir.join("timeline.json"), &timeline)?;
    write_spike_train(&dir.join(format!("lgn_trial_{}.csv", trial.lgn_trial)), &lgn)?;
    write_spike_train(&dir.join(format!("bkg_trial_{}.csv", trial.bkg_trial)), &bkg)?;
    println!(
        "{stimulus} trial {}/{}: {} LGN spikes, {} background spikes -> {}",
        trial.lgn_trial,
        trial.bkg_trial,
        lgn.len(),
        bkg.len(),
        dir.display()
    );
    Ok(())
}

fn runtime_io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_owned(),
        source: e,
    }
}

fn parse_window(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::config("window", format!("expected t0:t1 in ms, got {s:?}"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

/// Attack from type_attack.txt and the attribute files, if any were given.
fn attack_from_files(args: &RunArgs) -> Result<Option<AttackConfig>> {
    let Some(type_file) = &args.type_attack_file else {
        return match (&args.flo_attributes, &args.jam_attributes) {
            (Some(_), Some(_)) => Err(Error::Usage(
                "give --type-attack-file to choose between FLO and JAM attribute files".into(),
            )),
            (Some(f), None) => read_flo_attributes(f).map(Some),
            (None, Some(j)) => read_jam_attributes(j).map(Some),
            (None, None) => Ok(None),
        };
    };
    let dir = type_file.parent().unwrap_or(Path::new("."));
    let cfg = match read_type_attack(type_file)? {
        AttackKind::None => AttackConfig::none(),
        AttackKind::Flo => read_flo_attributes(
            args.flo_attributes.as_deref().unwrap_or(&dir.join("FLO_attributes.txt")),
        )?,
        AttackKind::Jam => read_jam_attributes(
            args.jam_attributes.as_deref().unwrap_or(&dir.join("JAM_attributes.txt")),
        )?,
    };
    Ok(Some(cfg))
}

/// Layers the attack: config file, then attack files, then flags.
fn resolve_attack(base: AttackConfig, args: &RunArgs) -> Result<AttackConfig> {
    let mut attack = attack_from_files(args)?.unwrap_or(base);
    let inherited = match attack.kind() {
        AttackKind::None => DEFAULT_FRACTION,
        _ => attack.target_fraction,
    };
    let fraction = args.fraction.unwrap_or(inherited);
    let kind = match &args.attack {
        Some(k) => k.parse::<AttackKind>()?,
        None if args.instant.is_some() => AttackKind::Flo,
        None if args.window.is_some() => AttackKind::Jam,
        None => attack.kind(),
    };
    let seed = attack.selection_seed;
    attack = match kind {
        AttackKind::None => AttackConfig::none(),
        AttackKind::Flo => {
            if args.window.is_some() {
                return Err(Error::Usage("--window applies to JAM; use --instant for FLO".into()));
            }
            let t = match (args.instant, &attack.timing) {
                (Some(t), _) => t,
                (None, AttackTiming::Flo { t_attack }) => *t_attack,
                _ => return Err(Error::Usage("FLO needs --instant <ms>".into())),
            };
            AttackConfig::flo(t, fraction)
        }
        AttackKind::Jam => {
            if args.instant.is_some() {
                return Err(Error::Usage("--instant applies to FLO; use --window for JAM".into()));
            }
            let (t0, t1) = match (&args.window, &attack.timing) {
                (Some(w), _) => parse_window(w)?,
                (None, AttackTiming::Jam { t0, t1 }) => (*t0, *t1),
                _ => return Err(Error::Usage("JAM needs --window <t0:t1>".into())),
            };
            AttackConfig::jam(t0, t1, fraction)
        }
    };
    Ok(attack.with_seed(seed))
}

fn run(cli: &Cli, args: &RunArgs) -> Result<()> {
    let mut config: ExperimentConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => ExperimentConfig::new(Stimulus::Flash, AttackConfig::none(), "out"),
    };
    if let Some(s) = &args.stimulus {
        config.stimulus = s.parse()?;
    }
    config.attack = resolve_attack(config.attack.clone(), args)?;
    if let Some(path) = &args.topology {
        config.topology = TopologySource::Path { path: path.clone() };
    } else if cli.scale.is_some() || args.config.is_none() {
        config.topology = TopologySource::Spec {
            spec: TopologySpec::for_scale(scale(cli)?),
        };
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.base_seed = seed;
    }
    if let Some(w) = cli.workers {
        config.workers = w;
    }
    if let Some(r) = args.repetitions {
        config.repetitions = r;
    }
    if let Some(t) = args.lgn_trial {
        config.lgn_trial = t;
    }
    if args.bkg_trial.is_some() {
        config.bkg_trial = args.bkg_trial;
    }
    if args.id.is_some() {
        config.experiment_id = args.id.clone();
    }
    config.resample_inputs |= args.resample_inputs;
    if args.no_spikes {
        config.write_spikes = false;
    }

    let (manifest, report) = run_experiment(&config)?;
    println!("{} ({} runs) -> {}", manifest.experiment_id, manifest.runs.len(), config.experiment_dir().display());
    print_report(&report);
    Ok(())
}

fn print_report(report: &ImpactReport) {
    if let Some((first, last)) = report.attack_intervals {
        for k in first..=last {
            let pct = report.percent_change[k].map_or("n/a".into(), |p| format!("{p:+.2}%"));
            println!(
                "interval {k}: baseline {:.1}, attacked {:.1}, delta {:+.1} ({pct})",
                report.counts_baseline.mean.values[k], report.counts_attacked.mean.values[k], report.delta[k]
            );
        }
    }
    let rec = report.recovery_intervals.map_or("not recovered".into(), |m| format!("{m} intervals"));
    println!("recovery: {rec}");
    if let Some(p) = report.rebound_peak {
        println!("rebound: interval {} (+{:.1} spikes, z {:.1})", p.interval, p.magnitude, p.z);
    }
}

fn grid(cli: &Cli, args: &GridArgs) -> Result<()> {
    let mut config: GridConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => GridConfig::new(scale(cli)?, "grid"),
    };
    if cli.scale.is_some() {
        config.scale = scale(cli)?;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.base_seed = seed;
    }
    if let Some(w) = cli.workers {
        config.workers = w;
    }
    if let Some(r) = args.repetitions {
        config.repetitions = r;
    }
    if let Some(t) = args.lgn_trial {
        config.lgn_trial = t;
    }
    if let Some(s) = &args.stimuli {
        config.stimuli = s.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    }
    if let Some(f) = &args.fractions {
        config.fractions = f.clone();
    }
    if args.no_spikes {
        config.write_spikes = false;
    }
    if config.repetitions == 0 {
        return Err(Error::config("repetitions", "must be at least 1"));
    }

    let outcome = run_grid(&config)?;
    for row in &outcome.rows {
        let pct = row.percent.map_or("n/a".into(), |p| format!("{p:+.2}%"));
        let rec = row.recovery_intervals.map_or("-".into(), |m| m.to_string());
        if row.status == "ok" {
            println!("{:<40} {pct:>10}  recovery {rec}", row.experiment_id);
        } else {
            println!("{:<40} FAILED: {}", row.experiment_id, row.error);
        }
    }
    println!("summary -> {}", outcome.summary_path.display());
    match outcome.failures() {
        0 => Ok(()),
        n => Err(Error::Internal(format!("{n} of {} grid cells failed", outcome.rows.len()))),
    }
}

fn report(dir: &Path) -> Result<()> {
    if dir.join(MANIFEST_FILE).is_file() {
        let report = report_from_dir(dir)?;
        println!("{}", dir.display());
        print_report(&report);
        return Ok(());
    }
    if !dir.join(GRID_SUMMARY_FILE).is_file() {
        return Err(Error::Usage(format!(
            "{} has neither {MANIFEST_FILE} nor {GRID_SUMMARY_FILE}",
            dir.display()
        )));
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| runtime_io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).is_file())
        .collect();
    entries.sort();
    for exp in &entries {
        let report = report_from_dir(exp)?;
        let rec = report.recovery_intervals.map_or("-".into(), |m| m.to_string());
        println!("{:<40} recovery {rec}", exp.file_name().unwrap_or_default().to_string_lossy());
    }
    Ok(())
}
