//! `ncfet-psc` command-line tool.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | internal or I/O failure |
//! | 2 | invalid arguments, including hysteresis violations |
//! | 3 | missing input file or artifact |
//! | 4 | malformed configuration or input file |
//! | 5 | digest mismatch |
//! | 6 | noise calibration could not reach its target |

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ncfet_psc::aes::AesKey;
use ncfet_psc::cpa;
use ncfet_psc::device::{self, CapacitancePair, GainCurve};
use ncfet_psc::harness::{self, BatchSource, CalibrationConfig, ExperimentConfig, Preset};
use ncfet_psc::io::{ConfigFile, RunManifest};
use ncfet_psc::power::{self, NoiseConfig, TraceSet};
use ncfet_psc::Error;

/// Environment variable giving the default output directory.
const OUT_DIR_ENV: &str = "NCFET_PSC_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "ncfet-psc",
    version,
    about = "Correlation power analysis of AES-128 under FinFET and NCFET power profiles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Negative-capacitance gate stack arithmetic.
    #[command(subcommand)]
    Device(DeviceCommand),
    /// Simulate peak-power traces for one key.
    Simulate(SimulateArgs),
    /// Run CPA on a trace file.
    Attack(AttackArgs),
    /// Run the full success-rate experiment.
    Experiment(ExperimentArgs),
    /// Write the trace-index batch files of an experiment.
    Batches(BatchesArgs),
    /// Search the noise level that puts a profile's crossing at a target.
    Calibrate(CalibrateArgs),
    /// Check the output digests recorded in a manifest.
    Verify {
        /// Manifest file; outputs are resolved relative to its directory.
        manifest: PathBuf,
    },
}

#[derive(Subcommand)]
enum DeviceCommand {
    /// Series capacitance of the ferroelectric and internal capacitances.
    SeriesCap(CapArgs),
    /// Internal voltage gain.
    VoltageGain(CapArgs),
    /// Average gain of a tabulated `v_gate,v_internal` curve.
    AvgGain {
        #[arg(long)]
        curve: PathBuf,
    },
}

#[derive(Args)]
struct CapArgs {
    /// Ferroelectric capacitance in farads (negative).
    #[arg(long, allow_hyphen_values = true)]
    c_ferro: f64,
    /// Internal gate capacitance in farads.
    #[arg(long)]
    c_int: f64,
}

#[derive(Args)]
struct OutArgs {
    /// Output directory [default: $NCFET_PSC_OUT_DIR or `out`].
    #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Cipher key in hex; derived from the seed when absent.
    #[arg(long)]
    key: Option<AesKey>,
    /// Number of random plaintexts.
    #[arg(long, default_value_t = 2000)]
    texts: usize,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "finfet,tfe1,tfe2,tfe3,tfe4"
    )]
    profiles: Vec<String>,
    /// Noise in units of each profile's signal standard deviation.
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct AttackArgs {
    /// Trace CSV written by `simulate`.
    #[arg(long)]
    traces: PathBuf,
    /// `all`, a range `a..b`, or a comma-separated list of trace indices.
    #[arg(long, default_value = "all")]
    indices: String,
    /// Candidates per byte in the report.
    #[arg(long, default_value_t = 5)]
    top: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct ExperimentSelect {
    #[arg(long)]
    preset: Option<Preset>,
    /// JSON config file; `--preset` and the other flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    profiles: Option<Vec<String>>,
    /// Noise in units of each profile's signal standard deviation.
    #[arg(long)]
    noise_sigma: Option<f64>,
}

impl ExperimentSelect {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut file = match &self.config {
            Some(path) => ConfigFile::from_path(path)?,
            None => ConfigFile::new(self.preset.unwrap_or(Preset::Desk)),
        };
        if let Some(p) = self.preset {
            file.preset = p;
        }
        if let Some(s) = self.seed {
            file.master_seed = Some(s);
        }
        if let Some(p) = &self.profiles {
            file.profiles = Some(p.clone());
        }
        if let Some(sigma) = self.noise_sigma {
            file.noise = Some(NoiseConfig::relative(sigma));
        }
        file.resolve()
    }
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    select: ExperimentSelect,
    /// Directory holding `batch_<trial>.bin` files to use instead of
    /// regenerating the index sets.
    #[arg(long)]
    batches: Option<PathBuf>,
    /// Worker threads [default: all cores].
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct BatchesArgs {
    #[command(flatten)]
    select: ExperimentSelect,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long, default_value = "finfet")]
    profile: String,
    /// Target crossing in traces.
    #[arg(long, default_value_t = 693)]
    target: usize,
    #[arg(long, default_value_t = 0.9)]
    threshold: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::HysteresisViolation { .. }
        | Error::InvalidCapacitance(_)
        | Error::OutOfRange { .. }
        | Error::TooFewSamples { .. }
        | Error::UnknownProfile(_)
        | Error::InvalidNoise(_)
        | Error::ZeroSpan => 2,
        Error::MissingArtifact(_) => 3,
        Error::InvalidConfig(_)
        | Error::InvalidProfile { .. }
        | Error::InvalidCurve(_)
        | Error::Parse(_)
        | Error::LengthMismatch { .. } => 4,
        Error::DigestMismatch { .. } => 5,
        Error::Unachievable(_) => 6,
        Error::Io(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Device(d) => run_device(d),
        Command::Simulate(a) => run_simulate(a),
        Command::Attack(a) => run_attack(a),
        Command::Experiment(a) => run_experiment(a),
        Command::Batches(a) => run_batches(a),
        Command::Calibrate(a) => run_calibrate(a),
        Command::Verify { manifest } => {
            let m = RunManifest::read(&manifest)?;
            let dir = manifest.parent().unwrap_or(Path::new("."));
            m.verify(dir)?;
            println!("{} outputs verified", m.outputs.len());
            Ok(())
        }
    }
}

fn run_device(cmd: DeviceCommand) -> Result<(), Error> {
    match cmd {
        DeviceCommand::SeriesCap(a) => {
            let c = device::series_capacitance(&CapacitancePair::new(a.c_ferro, a.c_int)?)?;
            println!("{c:?} F");
        }
        DeviceCommand::VoltageGain(a) => {
            let g = device::voltage_gain(&CapacitancePair::new(a.c_ferro, a.c_int)?)?;
            println!("{g:?}");
        }
        DeviceCommand::AvgGain { curve } => {
            if !curve.exists() {
                return Err(Error::MissingArtifact(format!("curve {}", curve.display())));
            }
            let g = device::average_gain(&GainCurve::from_csv_path(&curve)?)?;
            println!("{g:?}");
        }
    }
    Ok(())
}

fn trace_file_name(profile: &str) -> String {
    format!("traces_{profile}.csv")
}

fn run_simulate(a: SimulateArgs) -> Result<(), Error> {
    let start = Instant::now();
    let noise = NoiseConfig::relative(a.noise_sigma);
    noise.validate()?;
    if a.texts == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let profiles = a
        .profiles
        .iter()
        .map(|name| power::builtin_profile(name))
        .collect::<Result<Vec<_>, _>>()?;
    let key = a
        .key
        .unwrap_or_else(|| harness::generate_keys(a.seed, 1)[0]);
    let texts = harness::generate_texts(a.seed, a.texts);
    let trace_seed = harness::trace_seed(a.seed, 0);
    std::fs::create_dir_all(&a.out.out_dir)?;
    let mut manifest = RunManifest::new("simulate", a.seed);
    manifest.key = Some(key);
    for p in &profiles {
        let set = power::simulate_trace_set(&key, &texts, p, &noise, trace_seed);
        let name = trace_file_name(&p.name);
        set.write_csv(a.out.out_dir.join(&name))?;
        manifest.add_output(&a.out.out_dir, &name)?;
        println!("{name}: {} traces, {} clamped", set.len(), set.clamp_count);
    }
    manifest.add_timing("simulate", start.elapsed().as_secs_f64());
    manifest.write(&a.out.out_dir)?;
    println!("key {key}");
    Ok(())
}

fn parse_indices(spec: &str, len: usize) -> Result<Vec<usize>, Error> {
    let bad = || Error::Parse(format!("bad --indices `{spec}`"));
    let idx: Vec<usize> = match spec.trim() {
        "all" => (0..len).collect(),
        s if s.contains("..") => {
            let (a, b) = s.split_once("..").ok_or_else(bad)?;
            let a: usize = a.trim().parse().map_err(|_| bad())?;
            let b: usize = b.trim().parse().map_err(|_| bad())?;
            (a..b).collect()
        }
        s => s
            .split(',')
            .map(|t| t.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?,
    };
    Ok(idx)
}

fn run_attack(a: AttackArgs) -> Result<(), Error> {
    if !a.traces.exists() {
        return Err(Error::MissingArtifact(format!(
            "traces {}",
            a.traces.display()
        )));
    }
    let stem = a
        .traces
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "traces".into());
    let profile = stem.strip_prefix("traces_").unwrap_or(&stem).to_string();
    let set = TraceSet::read_csv(&a.traces, profile)?;
    let idx = parse_indices(&a.indices, set.len())?;
    let result = cpa::attack(&set, &idx)?;
    std::fs::create_dir_all(&a.out.out_dir)?;
    let name = format!("attack_{stem}.json");
    std::fs::write(
        a.out.out_dir.join(&name),
        result.report(a.top).to_json_string(),
    )?;
    println!("traces used: {}", result.trace_count);
    println!("round-10 key: {}", result.recovered_key);
    println!("master key:   {}", result.recovered_master_key());
    Ok(())
}

fn run_experiment(a: ExperimentArgs) -> Result<(), Error> {
    let config = a.select.resolve()?;
    let start = Instant::now();
    let source = match &a.batches {
        Some(dir) => BatchSource::load_dir(&config, dir)?,
        None => BatchSource::Derived,
    };
    let result =
        harness::with_workers(a.workers, || harness::run_experiment_with(&config, &source))??;
    let elapsed = start.elapsed().as_secs_f64();
    let dir = &a.out.out_dir;
    let names = result.write(dir)?;
    std::fs::write(dir.join("config.json"), config.to_json_string())?;
    let mut manifest = RunManifest::new("experiment", config.master_seed).with_config(&config);
    for n in names.iter().map(String::as_str).chain(["config.json"]) {
        manifest.add_output(dir, n)?;
    }
    manifest.add_timing("experiment", elapsed);
    manifest.write(dir)?;
    for row in result.stats.rows.iter().filter(|r| r.trial.is_none()) {
        let avg = row.avg_traces.map_or("-".into(), |v| format!("{v:.1}"));
        let std = row.std_traces.map_or("-".into(), |v| format!("{v:.1}"));
        println!(
            "{:<8} {:>6}  avg {avg:>7}  std {std:>6}  not reached {}",
            row.profile_name, row.threshold, row.not_reached
        );
    }
    println!("wrote {} files to {}", names.len() + 2, dir.display());
    Ok(())
}

fn run_batches(a: BatchesArgs) -> Result<(), Error> {
    let config = a.select.resolve()?;
    let dir = &a.out.out_dir;
    std::fs::create_dir_all(dir)?;
    let mut manifest = RunManifest::new("batches", config.master_seed).with_config(&config);
    for t in 0..config.trial_count {
        let name = harness::batch_file_name(t);
        harness::PermutationBatch::generate(&config, t)?.write(&config, dir.join(&name))?;
        manifest.add_output(dir, &name)?;
        println!("{name}");
    }
    manifest.write(dir)?;
    Ok(())
}

fn run_calibrate(a: CalibrateArgs) -> Result<(), Error> {
    let mut cal = CalibrationConfig::desk();
    cal.profile = power::builtin_profile(&a.profile)?;
    cal.target_crossing = a.target;
    cal.threshold = a.threshold;
    cal.master_seed = a.seed;
    let c = harness::with_workers(a.workers, || harness::calibrate_noise(&cal))??;
    for (sigma, crossing) in &c.trajectory {
        println!("sigma {sigma:<10} crossing {crossing}");
    }
    println!("calibrated sigma {} (crossing {})", c.sigma, c.achieved);
    if !c.is_monotone() {
        eprintln!("warning: crossing was not monotone in sigma along the search");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_specs() {
        assert_eq!(parse_indices("all", 3).unwrap(), [0, 1, 2]);
        assert_eq!(parse_indices("2..5", 10).unwrap(), [2, 3, 4]);
        assert_eq!(parse_indices("7, 1,3", 10).unwrap(), [7, 1, 3]);
        assert!(parse_indices("x", 10).is_err());
    }

    #[test]
    fn exit_codes_are_distinct_per_class() {
        let codes = [
            exit_code(&Error::HysteresisViolation {
                c_ferro_abs: 1.0,
                c_internal: 1.0,
            }),
            exit_code(&Error::MissingArtifact(String::new())),
            exit_code(&Error::InvalidConfig(String::new())),
            exit_code(&Error::DigestMismatch {
                path: String::new(),
                expected: String::new(),
                found: String::new(),
            }),
            exit_code(&Error::Unachievable(String::new())),
            exit_code(&Error::Io(String::new())),
        ];
        assert_eq!(codes, [2, 3, 4, 5, 6, 1]);
    }
}
