//! Experiment protocol: fixed keys and plaintexts, families of random trace
//! subsets of increasing size, success-rate curves per technology and the
//! number of traces needed to reach given success levels.
//!
//! Every random choice is drawn from a stream addressed by
//! `(master_seed, purpose, indices...)` (see [`crate::seed`]), so any part of
//! an experiment can be regenerated on its own and results do not depend on
//! scheduling.

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aes::{self, AesKey, Block};
use crate::cpa::Attacker;
use crate::error::{Error, Result};
use crate::power::{self, NoiseConfig, TechnologyProfile};
use crate::seed;

/// Noise level of the desk preset, in units of each profile's signal
/// standard deviation. Produced by [`calibrate_noise`] with
/// [`CalibrationConfig::desk`].
pub const DESK_NOISE_SIGMA: f64 = 0.625;

/// Noise level of the paper preset. The calibrated crossing does not depend
/// on how many index sets are drawn per step, so this is the desk level.
pub const PAPER_NOISE_SIGMA: f64 = DESK_NOISE_SIGMA;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 3 keys, 100 steps of 20 traces, 50 sets per step, 1 trial.
    Desk,
    /// 10 keys, 1000 steps of 2 traces, 1000 sets per step, 3 trials.
    Paper,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        })
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(Error::InvalidConfig(format!(
                "unknown preset `{s}` (expected desk or paper)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub key_count: usize,
    pub text_count: usize,
    pub step_count: usize,
    pub sets_per_step: usize,
    pub trial_count: usize,
    /// Traces added per step: step `s` draws sets of `set_stride * s`.
    pub set_stride: usize,
    pub profiles: Vec<String>,
    /// Profiles used instead of, or in addition to, the built-in ones.
    #[serde(default)]
    pub profile_overrides: Vec<TechnologyProfile>,
    pub noise: NoiseConfig,
    pub master_seed: u64,
    pub thresholds: Vec<f64>,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let profiles = power::BUILTIN_NAMES.iter().map(|s| s.to_string()).collect();
        match preset {
            Preset::Desk => Self {
                key_count: 3,
                text_count: 2000,
                step_count: 100,
                sets_per_step: 50,
                trial_count: 1,
                set_stride: 20,
                profiles,
                profile_overrides: Vec::new(),
                noise: NoiseConfig::relative(DESK_NOISE_SIGMA),
                master_seed: 1,
                thresholds: vec![0.5, 0.9],
            },
            Preset::Paper => Self {
                key_count: 10,
                text_count: 2000,
                step_count: 1000,
                sets_per_step: 1000,
                trial_count: 3,
                set_stride: 2,
                profiles,
                profile_overrides: Vec::new(),
                noise: NoiseConfig::relative(PAPER_NOISE_SIGMA),
                master_seed: 1,
                thresholds: vec![0.5, 0.9, 0.999],
            },
        }
    }

    pub fn set_size(&self, step: usize) -> usize {
        self.set_stride * step
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        for (name, v) in [
            ("key_count", self.key_count),
            ("text_count", self.text_count),
            ("step_count", self.step_count),
            ("sets_per_step", self.sets_per_step),
            ("trial_count", self.trial_count),
            ("set_stride", self.set_stride),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.set_size(1) < 2 {
            return bad("sets must hold at least 2 traces (set_stride >= 2)".into());
        }
        if self
            .set_stride
            .checked_mul(self.step_count)
            .is_none_or(|m| m > self.text_count)
        {
            return bad(format!(
                "set_stride * step_count = {} * {} exceeds text_count {}",
                self.set_stride, self.step_count, self.text_count
            ));
        }
        if self.text_count > u32::MAX as usize {
            return bad("text_count must fit in 32 bits".into());
        }
        if self.thresholds.is_empty() {
            return bad("at least one threshold is required".into());
        }
        if let Some(t) = self.thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return bad(format!("threshold {t} outside (0, 1]"));
        }
        if self.thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return bad("thresholds must be strictly increasing".into());
        }
        if self.profiles.is_empty() {
            return bad("at least one profile is required".into());
        }
        self.noise.validate()?;
        for p in &self.profile_overrides {
            p.validate()?;
        }
        self.resolve_profiles().map(|_| ())
    }

    /// Profiles named in the config, overrides first, then built-ins.
    pub fn resolve_profiles(&self) -> Result<Vec<TechnologyProfile>> {
        self.profiles
            .iter()
            .map(|name| {
                if let Some(p) = self
                    .profile_overrides
                    .iter()
                    .find(|p| p.name.eq_ignore_ascii_case(name))
                {
                    return Ok(p.clone());
                }
                power::builtin_profile(name)
            })
            .collect()
    }

    /// SHA-256 of the canonical JSON form, lowercase hex.
    pub fn config_hash(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }

    /// Hash of the parameters that determine the trace-index sets.
    pub fn batch_hash(&self) -> String {
        sha256_hex(
            format!(
                "{}:{}:{}:{}:{}",
                self.master_seed,
                self.text_count,
                self.step_count,
                self.sets_per_step,
                self.set_stride
            )
            .as_bytes(),
        )
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn generate_keys(master_seed: u64, key_count: usize) -> Vec<AesKey> {
    let mut rng = seed::rng(master_seed, "keys", &[]);
    (0..key_count).map(|_| AesKey(rng.random())).collect()
}

pub fn generate_texts(master_seed: u64, text_count: usize) -> Vec<Block> {
    let mut rng = seed::rng(master_seed, "texts", &[]);
    (0..text_count).map(|_| Block(rng.random())).collect()
}

/// Seed of the noise stream shared by all profiles for one key.
pub fn trace_seed(master_seed: u64, key_index: usize) -> u64 {
    seed::derive(master_seed, "traces", &[key_index as u64])
}

/// The `set`-th index set of step `step` (1-based) in trial `trial`: a
/// uniform sample without replacement of `set_stride * step` text indices.
pub fn index_set(config: &ExperimentConfig, trial: usize, step: usize, set: usize) -> Vec<u32> {
    let mut rng = seed::rng(
        config.master_seed,
        "batch",
        &[trial as u64, step as u64, set as u64],
    );
    rand::seq::index::sample(&mut rng, config.text_count, config.set_size(step))
        .into_iter()
        .map(|i| i as u32)
        .collect()
}

/// All index sets of one trial, stored step by step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationBatch {
    pub batch_id: usize,
    pub text_count: usize,
    pub step_count: usize,
    pub sets_per_step: usize,
    pub set_stride: usize,
    indices: Vec<u32>,
}

const BATCH_MAGIC: &str = "ncfet-psc-batch";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BatchHeader {
    format: String,
    version: u32,
    master_seed: u64,
    batch_hash: String,
    batch_id: usize,
    text_count: usize,
    step_count: usize,
    sets_per_step: usize,
    set_stride: usize,
}

impl PermutationBatch {
    pub fn generate(config: &ExperimentConfig, trial: usize) -> Result<Self> {
        config.validate()?;
        let mut indices = Vec::with_capacity(batch_len(config));
        for step in 1..=config.step_count {
            for set in 0..config.sets_per_step {
                indices.extend(index_set(config, trial, step, set));
            }
        }
        Ok(Self {
            batch_id: trial,
            text_count: config.text_count,
            step_count: config.step_count,
            sets_per_step: config.sets_per_step,
            set_stride: config.set_stride,
            indices,
        })
    }

    pub fn set_count(&self) -> usize {
        self.step_count * self.sets_per_step
    }

    /// Index set `set` of step `step` (1-based).
    pub fn set(&self, step: usize, set: usize) -> &[u32] {
        assert!((1..=self.step_count).contains(&step) && set < self.sets_per_step);
        let size = self.set_stride * step;
        let before = self.sets_per_step * self.set_stride * step * (step - 1) / 2;
        let start = before + set * size;
        &self.indices[start..start + size]
    }

    fn header(&self, config: &ExperimentConfig) -> BatchHeader {
        BatchHeader {
            format: BATCH_MAGIC.into(),
            version: 1,
            master_seed: config.master_seed,
            batch_hash: config.batch_hash(),
            batch_id: self.batch_id,
            text_count: self.text_count,
            step_count: self.step_count,
            sets_per_step: self.sets_per_step,
            set_stride: self.set_stride,
        }
    }

    /// Binary file: one JSON header line, then every index as little-endian
    /// `u32`, sets in step order.
    pub fn write(&self, config: &ExperimentConfig, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut w, &self.header(config))?;
        w.write_all(b"\n")?;
        for i in &self.indices {
            w.write_all(&i.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a batch file and checks it was produced for `config`.
    pub fn read(config: &ExperimentConfig, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| Error::MissingArtifact(format!("batch file {}: {e}", path.display())))?;
        let mut r = BufReader::new(file);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: BatchHeader = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::Parse(format!("{}: bad batch header: {e}", path.display())))?;
        if header.format != BATCH_MAGIC || header.version != 1 {
            return Err(Error::Parse(format!(
                "{}: not a batch file",
                path.display()
            )));
        }
        if header.batch_hash != config.batch_hash() || header.master_seed != config.master_seed {
            return Err(Error::InvalidConfig(format!(
                "{} was generated for a different seed or batch layout",
                path.display()
            )));
        }
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let expected = batch_len(config) * 4;
        if bytes.len() != expected {
            return Err(Error::Parse(format!(
                "{}: expected {expected} index bytes, found {}",
                path.display(),
                bytes.len()
            )));
        }
        let indices: Vec<u32> = bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if let Some(i) = indices.iter().find(|&&i| i as usize >= config.text_count) {
            return Err(Error::Parse(format!(
                "{}: index {i} out of range",
                path.display()
            )));
        }
        Ok(Self {
            batch_id: header.batch_id,
            text_count: header.text_count,
            step_count: header.step_count,
            sets_per_step: header.sets_per_step,
            set_stride: header.set_stride,
            indices,
        })
    }

    /// SHA-256 of the index content.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for i in &self.indices {
            h.update(i.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

fn batch_len(config: &ExperimentConfig) -> usize {
    config.sets_per_step * config.set_stride * config.step_count * (config.step_count + 1) / 2
}

pub fn generate_batches(config: &ExperimentConfig) -> Result<Vec<PermutationBatch>> {
    (0..config.trial_count)
        .map(|t| PermutationBatch::generate(config, t))
        .collect()
}

/// Where the index sets of a run come from.
#[derive(Debug, Clone, Default)]
pub enum BatchSource {
    /// Regenerated from the master seed on demand.
    #[default]
    Derived,
    /// Loaded batches, one per trial.
    Loaded(Vec<PermutationBatch>),
}

impl BatchSource {
    /// Loads `batch_<trial>.bin` for every trial from `dir`.
    pub fn load_dir(config: &ExperimentConfig, dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        (0..config.trial_count)
            .map(|t| PermutationBatch::read(config, dir.join(batch_file_name(t))))
            .collect::<Result<_>>()
            .map(BatchSource::Loaded)
    }

    fn set(&self, config: &ExperimentConfig, trial: usize, step: usize, set: usize) -> Vec<usize> {
        match self {
            BatchSource::Derived => index_set(config, trial, step, set)
                .into_iter()
                .map(|i| i as usize)
                .collect(),
            BatchSource::Loaded(b) => b[trial]
                .set(step, set)
                .iter()
                .map(|&i| i as usize)
                .collect(),
        }
    }
}

pub fn batch_file_name(trial: usize) -> String {
    format!("batch_{trial}.bin")
}

/// Success rate per step for one profile, pooled over keys and trials.
#[derive(Debug, Clone, PartialEq)]
pub struct SuccessCurve {
    pub profile_name: String,
    pub set_stride: usize,
    /// Rate at step `s` is `rates[s - 1]`.
    pub rates: Vec<f64>,
}

pub const CURVE_CSV_HEADER: &str = "step,set_size,success_rate";

impl SuccessCurve {
    pub fn to_csv_string(&self) -> String {
        let mut out = format!("{CURVE_CSV_HEADER}\n");
        for (i, r) in self.rates.iter().enumerate() {
            out.push_str(&format!("{},{},{r}\n", i + 1, (i + 1) * self.set_stride));
        }
        out
    }

    pub fn from_csv_str(text: &str, profile_name: impl Into<String>) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CURVE_CSV_HEADER) {
            return Err(Error::Parse(format!(
                "expected header `{CURVE_CSV_HEADER}`"
            )));
        }
        let mut rates = Vec::new();
        let mut stride = 0;
        for (i, line) in lines.enumerate() {
            let cols: Vec<&str> = line.split(',').collect();
            let err = || Error::Parse(format!("curve line {}: `{line}`", i + 2));
            if cols.len() != 3 {
                return Err(err());
            }
            let step: usize = cols[0].parse().map_err(|_| err())?;
            let size: usize = cols[1].parse().map_err(|_| err())?;
            let rate: f64 = cols[2].parse().map_err(|_| err())?;
            if step != i + 1 || !size.is_multiple_of(step) || !(0.0..=1.0).contains(&rate) {
                return Err(err());
            }
            if i == 0 {
                stride = size;
            } else if size != stride * step {
                return Err(err());
            }
            rates.push(rate);
        }
        Ok(Self {
            profile_name: profile_name.into(),
            set_stride: stride,
            rates,
        })
    }
}

/// Traces needed to first reach a success level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Crossing {
    Traces(usize),
    NotReached,
}

impl Crossing {
    pub fn traces(self) -> Option<usize> {
        match self {
            Crossing::Traces(n) => Some(n),
            Crossing::NotReached => None,
        }
    }
}

impl fmt::Display for Crossing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Crossing::Traces(n) => write!(f, "{n}"),
            Crossing::NotReached => f.write_str("not reached"),
        }
    }
}

/// Set size of the first step whose rate is at least `threshold`.
pub fn threshold_crossing(curve: &SuccessCurve, threshold: f64) -> Crossing {
    crossing_of(&curve.rates, curve.set_stride, threshold)
}

fn crossing_of(rates: &[f64], stride: usize, threshold: f64) -> Crossing {
    rates
        .iter()
        .position(|&r| r >= threshold)
        .map_or(Crossing::NotReached, |i| Crossing::Traces((i + 1) * stride))
}

/// Crossing of one key in one trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyCrossing {
    pub profile: usize,
    pub trial: usize,
    pub key: usize,
    pub threshold: f64,
    pub crossing: Crossing,
}

/// Average and sample standard deviation of per-key crossings.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsRow {
    pub profile_name: String,
    pub threshold: f64,
    /// `None` for the row pooling all trials.
    pub trial: Option<usize>,
    pub avg_traces: Option<f64>,
    pub std_traces: Option<f64>,
    pub reached: usize,
    pub not_reached: usize,
}

pub const STATS_CSV_HEADER: &str =
    "profile,threshold,trial,avg_traces,std_traces,reached,not_reached";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ThresholdStats {
    pub rows: Vec<StatsRow>,
}

impl ThresholdStats {
    pub fn pooled(&self, profile_name: &str, threshold: f64) -> Option<&StatsRow> {
        self.rows.iter().find(|r| {
            r.trial.is_none() && r.profile_name == profile_name && r.threshold == threshold
        })
    }

    pub fn to_csv_string(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let mut out = format!("{STATS_CSV_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.profile_name,
                r.threshold,
                r.trial.map_or("all".to_string(), |t| t.to_string()),
                opt(r.avg_traces),
                opt(r.std_traces),
                r.reached,
                r.not_reached
            ));
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(STATS_CSV_HEADER) {
            return Err(Error::Parse(format!(
                "expected header `{STATS_CSV_HEADER}`"
            )));
        }
        let rows = lines
            .enumerate()
            .map(|(i, line)| {
                let err = || Error::Parse(format!("stats line {}: `{line}`", i + 2));
                let c: Vec<&str> = line.split(',').collect();
                if c.len() != 7 {
                    return Err(err());
                }
                let opt = |s: &str| -> Result<Option<f64>> {
                    if s.is_empty() {
                        Ok(None)
                    } else {
                        s.parse().map(Some).map_err(|_| err())
                    }
                };
                Ok(StatsRow {
                    profile_name: c[0].to_string(),
                    threshold: c[1].parse().map_err(|_| err())?,
                    trial: match c[2] {
                        "all" => None,
                        t => Some(t.parse().map_err(|_| err())?),
                    },
                    avg_traces: opt(c[3])?,
                    std_traces: opt(c[4])?,
                    reached: c[5].parse().map_err(|_| err())?,
                    not_reached: c[6].parse().map_err(|_| err())?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1)
        .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), std)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub profiles: Vec<TechnologyProfile>,
    pub curves: Vec<SuccessCurve>,
    /// Successful attacks, `[profile][trial][key][step - 1]`, out of
    /// `sets_per_step` each.
    pub successes: Vec<Vec<Vec<Vec<u32>>>>,
    pub crossings: Vec<KeyCrossing>,
    pub stats: ThresholdStats,
    /// Traces clamped to static power, per profile, summed over keys.
    pub clamp_counts: Vec<usize>,
}

/// Power columns and attack engine for one key, shared by all profiles.
struct KeyTraces {
    round_key_10: Block,
    attacker: Attacker,
    powers: Vec<Vec<f64>>,
    clamps: Vec<usize>,
}

fn key_traces(
    config: &ExperimentConfig,
    profiles: &[TechnologyProfile],
    texts: &[Block],
    key_index: usize,
    key: &AesKey,
) -> KeyTraces {
    let schedule = aes::expand_key(key);
    let records: Vec<_> = texts
        .iter()
        .map(|p| aes::encrypt_with_schedule(&schedule, p))
        .collect();
    let cts: Vec<Block> = records.iter().map(|r| r.ciphertext).collect();
    let seed = trace_seed(config.master_seed, key_index);
    let sets: Vec<_> = profiles
        .iter()
        .map(|p| power::trace_set_from_records(&records, Some(*key), p, &config.noise, seed))
        .collect();
    KeyTraces {
        round_key_10: schedule[10],
        attacker: Attacker::new(&cts),
        powers: sets.iter().map(|s| s.powers()).collect(),
        clamps: sets.iter().map(|s| s.clamp_count).collect(),
    }
}

/// Runs the full protocol with index sets derived from the master seed.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with(config, &BatchSource::Derived)
}

pub fn run_experiment_with(
    config: &ExperimentConfig,
    batches: &BatchSource,
) -> Result<ExperimentResult> {
    config.validate()?;
    if let BatchSource::Loaded(b) = batches {
        if b.len() != config.trial_count {
            return Err(Error::MissingArtifact(format!(
                "{} batches loaded for {} trials",
                b.len(),
                config.trial_count
            )));
        }
    }
    let profiles = config.resolve_profiles()?;
    let keys = generate_keys(config.master_seed, config.key_count);
    let texts = generate_texts(config.master_seed, config.text_count);
    let per_key: Vec<KeyTraces> = keys
        .par_iter()
        .enumerate()
        .map(|(k, key)| key_traces(config, &profiles, &texts, k, key))
        .collect();

    let units: Vec<(usize, usize, usize)> = (0..config.trial_count)
        .flat_map(|t| {
            (0..config.key_count).flat_map(move |k| (1..=config.step_count).map(move |s| (t, k, s)))
        })
        .collect();
    let counts: Vec<Vec<u32>> = units
        .par_iter()
        .map(|&(trial, key, step)| {
            let kt = &per_key[key];
            let cols: Vec<&[f64]> = kt.powers.iter().map(Vec::as_slice).collect();
            let mut ok = vec![0u32; profiles.len()];
            for set in 0..config.sets_per_step {
                let idx = batches.set(config, trial, step, set);
                let hits = kt
                    .attacker
                    .recovers(&cols, &idx, &kt.round_key_10)
                    .expect("validated inputs");
                for (c, h) in ok.iter_mut().zip(hits) {
                    *c += h as u32;
                }
            }
            ok
        })
        .collect();

    let mut successes =
        vec![
            vec![vec![vec![0u32; config.step_count]; config.key_count]; config.trial_count];
            profiles.len()
        ];
    for (&(t, k, s), c) in units.iter().zip(&counts) {
        for (p, &v) in c.iter().enumerate() {
            successes[p][t][k][s - 1] = v;
        }
    }
    Ok(summarize(
        config,
        profiles,
        successes,
        per_key.iter().map(|k| k.clamps.clone()).collect(),
    ))
}

fn summarize(
    config: &ExperimentConfig,
    profiles: Vec<TechnologyProfile>,
    successes: Vec<Vec<Vec<Vec<u32>>>>,
    clamps_per_key: Vec<Vec<usize>>,
) -> ExperimentResult {
    let sets = config.sets_per_step as f64;
    let runs = (config.sets_per_step * config.key_count * config.trial_count) as f64;
    let curves = profiles
        .iter()
        .zip(&successes)
        .map(|(p, by_trial)| SuccessCurve {
            profile_name: p.name.clone(),
            set_stride: config.set_stride,
            rates: (0..config.step_count)
                .map(|s| {
                    let total: u64 = by_trial
                        .iter()
                        .flat_map(|by_key| by_key.iter().map(|c| c[s] as u64))
                        .sum();
                    total as f64 / runs
                })
                .collect(),
        })
        .collect();

    let mut crossings = Vec::new();
    for (p, by_trial) in successes.iter().enumerate() {
        for (t, by_key) in by_trial.iter().enumerate() {
            for (k, counts) in by_key.iter().enumerate() {
                let rates: Vec<f64> = counts.iter().map(|&c| c as f64 / sets).collect();
                for &threshold in &config.thresholds {
                    crossings.push(KeyCrossing {
                        profile: p,
                        trial: t,
                        key: k,
                        threshold,
                        crossing: crossing_of(&rates, config.set_stride, threshold),
                    });
                }
            }
        }
    }

    let mut rows = Vec::new();
    for (p, profile) in profiles.iter().enumerate() {
        for &threshold in &config.thresholds {
            let trials = (0..config.trial_count)
                .map(Some)
                .chain(std::iter::once(None));
            for trial in trials {
                let picked: Vec<Crossing> = crossings
                    .iter()
                    .filter(|c| {
                        c.profile == p
                            && c.threshold == threshold
                            && trial.is_none_or(|t| c.trial == t)
                    })
                    .map(|c| c.crossing)
                    .collect();
                let reached: Vec<f64> = picked
                    .iter()
                    .filter_map(|c| c.traces())
                    .map(|n| n as f64)
                    .collect();
                let (avg, std) = mean_std(&reached);
                rows.push(StatsRow {
                    profile_name: profile.name.clone(),
                    threshold,
                    trial,
                    avg_traces: avg,
                    std_traces: std,
                    reached: reached.len(),
                    not_reached: picked.len() - reached.len(),
                });
            }
        }
    }

    let clamp_counts = (0..profiles.len())
        .map(|p| clamps_per_key.iter().map(|c| c[p]).sum())
        .collect();
    ExperimentResult {
        profiles,
        curves,
        successes,
        crossings,
        stats: ThresholdStats { rows },
        clamp_counts,
    }
}

impl ExperimentResult {
    /// File name of a profile's success-curve CSV.
    pub fn curve_file_name(profile_name: &str) -> String {
        format!("curve_{profile_name}.csv")
    }

    pub const STATS_FILE_NAME: &'static str = "stats.csv";

    /// Writes one curve CSV per profile and the statistics CSV; returns the
    /// file names written, relative to `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<String>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut names = Vec::new();
        for c in &self.curves {
            let name = Self::curve_file_name(&c.profile_name);
            std::fs::write(dir.join(&name), c.to_csv_string())?;
            names.push(name);
        }
        std::fs::write(dir.join(Self::STATS_FILE_NAME), self.stats.to_csv_string())?;
        names.push(Self::STATS_FILE_NAME.to_string());
        Ok(names)
    }
}

/// Runs `f` on a thread pool of `workers` threads, or on the global pool
/// when `workers` is `None`.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(Error::InvalidConfig("workers must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}"))),
    }
}

/// Reduced-scale setting in which the noise level is searched.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub profile: TechnologyProfile,
    pub target_crossing: usize,
    pub threshold: f64,
    /// Accepted relative deviation from the target.
    pub tolerance: f64,
    pub key_count: usize,
    pub text_count: usize,
    pub sets_per_step: usize,
    pub set_stride: usize,
    pub master_seed: u64,
    pub scale: power::NoiseScale,
    pub sigma_max: f64,
    pub max_iterations: usize,
}

impl CalibrationConfig {
    /// FinFET to a 90% crossing of 693 traces on a reduced desk setting.
    pub fn desk() -> Self {
        Self {
            profile: power::builtin_profile(power::FINFET).expect("built-in"),
            target_crossing: 693,
            threshold: 0.9,
            tolerance: 0.1,
            key_count: 2,
            text_count: 2000,
            sets_per_step: 20,
            set_stride: 20,
            master_seed: 1,
            scale: power::NoiseScale::SignalStd,
            sigma_max: 4.0,
            max_iterations: 24,
        }
    }

    fn experiment(&self, sigma: f64) -> ExperimentConfig {
        ExperimentConfig {
            key_count: self.key_count,
            text_count: self.text_count,
            step_count: self.text_count / self.set_stride,
            sets_per_step: self.sets_per_step,
            trial_count: 1,
            set_stride: self.set_stride,
            profiles: vec![self.profile.name.clone()],
            profile_overrides: vec![self.profile.clone()],
            noise: NoiseConfig {
                sigma,
                scale: self.scale,
                seed_slot: 0,
            },
            master_seed: self.master_seed,
            thresholds: vec![self.threshold],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub sigma: f64,
    pub achieved: usize,
    /// Every evaluated `(sigma, crossing)`, in evaluation order.
    pub trajectory: Vec<(f64, Crossing)>,
}

impl Calibration {
    /// Whether the crossing never decreased with growing sigma over the
    /// evaluated points.
    pub fn is_monotone(&self) -> bool {
        let mut pts = self.trajectory.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.windows(2).all(|w| w[0].1 <= w[1].1)
    }
}

/// Pooled crossing of the calibration profile at one noise level. Steps are
/// evaluated in order and the search stops at the first that reaches the
/// threshold.
fn calibration_crossing(cal: &CalibrationConfig, sigma: f64) -> Result<Crossing> {
    let config = cal.experiment(sigma);
    config.validate()?;
    let keys = generate_keys(config.master_seed, config.key_count);
    let texts = generate_texts(config.master_seed, config.text_count);
    let profiles = [cal.profile.clone()];
    let per_key: Vec<KeyTraces> = keys
        .iter()
        .enumerate()
        .map(|(k, key)| key_traces(&config, &profiles, &texts, k, key))
        .collect();
    let runs = (config.key_count * config.sets_per_step) as f64;
    for step in 1..=config.step_count {
        let jobs: Vec<(usize, usize)> = (0..config.key_count)
            .flat_map(|k| (0..config.sets_per_step).map(move |s| (k, s)))
            .collect();
        let hits: u32 = jobs
            .par_iter()
            .map(|&(k, s)| {
                let kt = &per_key[k];
                let idx: Vec<usize> = index_set(&config, 0, step, s)
                    .into_iter()
                    .map(|i| i as usize)
                    .collect();
                kt.attacker
                    .recovers(&[&kt.powers[0]], &idx, &kt.round_key_10)
                    .expect("validated inputs")[0] as u32
            })
            .sum();
        if hits as f64 / runs >= cal.threshold {
            return Ok(Crossing::Traces(config.set_size(step)));
        }
    }
    Ok(Crossing::NotReached)
}

/// Bisects the noise level until the calibration profile's pooled crossing
/// lies within `tolerance` of the target.
pub fn calibrate_noise(cal: &CalibrationConfig) -> Result<Calibration> {
    if cal.target_crossing > cal.text_count || cal.target_crossing == 0 {
        return Err(Error::Unachievable(format!(
            "target {} outside 1..={}",
            cal.target_crossing, cal.text_count
        )));
    }
    if cal.tolerance.is_nan()
        || cal.tolerance <= 0.0
        || cal.sigma_max.is_nan()
        || cal.sigma_max <= 0.0
    {
        return Err(Error::InvalidConfig(
            "tolerance and sigma_max must be positive".into(),
        ));
    }
    let target = cal.target_crossing as f64;
    let (lo_ok, hi_ok) = (
        target * (1.0 - cal.tolerance),
        target * (1.0 + cal.tolerance),
    );
    let mut trajectory = Vec::new();
    let eval = |sigma: f64, traj: &mut Vec<(f64, Crossing)>| -> Result<Crossing> {
        let c = calibration_crossing(cal, sigma)?;
        traj.push((sigma, c));
        Ok(c)
    };
    let within = |c: Crossing| {
        c.traces()
            .is_some_and(|n| (lo_ok..=hi_ok).contains(&(n as f64)))
    };
    let above = |c: Crossing| c.traces().is_none_or(|n| n as f64 > hi_ok);

    let (mut lo, mut hi) = (0.0, cal.sigma_max);
    for sigma in [lo, hi] {
        let c = eval(sigma, &mut trajectory)?;
        if within(c) {
            return Ok(Calibration {
                sigma,
                achieved: c.traces().expect("reached"),
                trajectory,
            });
        }
        if sigma == lo && above(c) {
            return Err(Error::Unachievable(format!(
                "crossing without noise is already {c}, above the target {}",
                cal.target_crossing
            )));
        }
        if sigma == hi && !above(c) {
            return Err(Error::Unachievable(format!(
                "crossing at sigma {hi} is only {c}, below the target {}",
                cal.target_crossing
            )));
        }
    }
    for _ in 0..cal.max_iterations {
        let mid = 0.5 * (lo + hi);
        let c = eval(mid, &mut trajectory)?;
        if within(c) {
            return Ok(Calibration {
                sigma: mid,
                achieved: c.traces().expect("reached"),
                trajectory,
            });
        }
        if above(c) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Err(Error::Unachievable(format!(
        "no sigma in [{lo}, {hi}] gives a crossing within {:.0}% of {} after {} steps",
        cal.tolerance * 100.0,
        cal.target_crossing,
        cal.max_iterations
    )))
}
