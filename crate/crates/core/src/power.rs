//! Zero-delay peak-power model of the AES round-state register.
//!
//! Every transition happens at the active clock edge, so one encryption
//! yields one scalar: the register's power at the final edge,
//!
//! ```text
//! P = n01 * t01_total + n10 * t10_total + n_stable * t_clk + p_static (+ noise)
//! ```
//!
//! where the per-bit terms come from a [`TechnologyProfile`].

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::aes::{self, AesKey, Block, TransitionCount};
use crate::error::{Error, Result};
use crate::seed;

/// Per-register-bit power parameters of one technology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TechnologyProfile {
    pub name: String,
    /// Power of a bit rising 0 -> 1, clock share included (W).
    pub t01_total: f64,
    /// Power of a bit falling 1 -> 0, clock share included (W).
    pub t10_total: f64,
    /// Clock-rise power of a bit that keeps its value (W).
    pub t_clk: f64,
    /// Static or leakage power (W).
    pub p_static: f64,
    /// Supply voltage (V), informational.
    pub vdd: f64,
    /// Clock frequency (Hz), informational.
    pub freq: f64,
}

pub const FINFET: &str = "finfet";

/// Names of the built-in profiles, thinnest ferroelectric last.
pub const BUILTIN_NAMES: [&str; 5] = ["finfet", "tfe1", "tfe2", "tfe3", "tfe4"];

const VDD: f64 = 0.7;
const FREQ: f64 = 100e6;

impl TechnologyProfile {
    pub fn new(
        name: impl Into<String>,
        t01_total: f64,
        t10_total: f64,
        t_clk: f64,
        p_static: f64,
    ) -> Result<Self> {
        let p = Self {
            name: name.into(),
            t01_total,
            t10_total,
            t_clk,
            p_static,
            vdd: VDD,
            freq: FREQ,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| {
            Err(Error::InvalidProfile {
                name: self.name.clone(),
                reason,
            })
        };
        let fields = [
            ("t01_total", self.t01_total),
            ("t10_total", self.t10_total),
            ("t_clk", self.t_clk),
            ("p_static", self.p_static),
            ("vdd", self.vdd),
            ("freq", self.freq),
        ];
        if let Some((f, v)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return bad(format!("{f} is not finite ({v})"));
        }
        if self.name.is_empty() {
            return bad("empty name".into());
        }
        if self.t_clk <= 0.0 {
            return bad(format!("t_clk must be positive, got {:e}", self.t_clk));
        }
        if self.t01_total < self.t_clk || self.t10_total < self.t_clk {
            return bad("transition power below the clock-only power".into());
        }
        if self.p_static < 0.0 {
            return bad(format!(
                "p_static must be nonnegative, got {:e}",
                self.p_static
            ));
        }
        Ok(())
    }

    /// Switching share of a rising bit, `t01_total - t_clk`.
    pub fn rise_switching(&self) -> f64 {
        self.t01_total - self.t_clk
    }

    /// Switching share of a falling bit, `t10_total - t_clk`.
    pub fn fall_switching(&self) -> f64 {
        self.t10_total - self.t_clk
    }

    /// Rise/fall asymmetry `t01_total / t10_total`.
    pub fn asymmetry_ratio(&self) -> f64 {
        self.t01_total / self.t10_total
    }

    /// Standard deviation of the noise-free peak power when all 128 register
    /// bits see independent uniformly random before/after values.
    ///
    /// Per bit the switching term `a * n01 + b * n10` has variance
    /// `(3a^2 + 3b^2 - 2ab) / 16`.
    pub fn signal_std(&self) -> f64 {
        let a = self.rise_switching();
        let b = self.fall_switching();
        (128.0 * (3.0 * a * a + 3.0 * b * b - 2.0 * a * b) / 16.0).sqrt()
    }

    /// All four power parameters multiplied by `factor`; metadata untouched.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            name: self.name.clone(),
            t01_total: self.t01_total * factor,
            t10_total: self.t10_total * factor,
            t_clk: self.t_clk * factor,
            p_static: self.p_static * factor,
            vdd: self.vdd,
            freq: self.freq,
        }
    }

    /// Copy with `t10_total` set equal to `t01_total`; the leakage then
    /// follows the Hamming distance exactly.
    pub fn symmetric(&self) -> Self {
        Self {
            name: format!("{}-sym", self.name),
            t10_total: self.t01_total,
            ..self.clone()
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    pub fn from_json_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes") + "\n"
    }
}

fn finfet_baseline() -> TechnologyProfile {
    TechnologyProfile {
        name: "finfet".into(),
        t01_total: 2.19e-6,
        t10_total: 2.04e-6,
        t_clk: 4.89e-7,
        p_static: 3.45e-10,
        vdd: VDD,
        freq: FREQ,
    }
}

fn tfe4() -> TechnologyProfile {
    TechnologyProfile {
        name: "tfe4".into(),
        t01_total: 4.59e-6,
        t10_total: 3.86e-6,
        t_clk: 6.94e-7,
        p_static: 3.17e-10,
        vdd: VDD,
        freq: FREQ,
    }
}

/// Intermediate ferroelectric thickness `t` nm (0 < t < 4), placed between
/// the baseline and TFE4 with weight `(t / 4)^2`.
fn interpolated(thickness_nm: u32) -> TechnologyProfile {
    let (lo, hi) = (finfet_baseline(), tfe4());
    let w = (thickness_nm as f64 / 4.0).powi(2);
    let mix = |a: f64, b: f64| a + (b - a) * w;
    TechnologyProfile {
        name: format!("tfe{thickness_nm}"),
        t01_total: mix(lo.t01_total, hi.t01_total),
        t10_total: mix(lo.t10_total, hi.t10_total),
        t_clk: mix(lo.t_clk, hi.t_clk),
        p_static: mix(lo.p_static, hi.p_static),
        vdd: VDD,
        freq: FREQ,
    }
}

/// FinFET baseline and the four NCFET setups TFE1..TFE4.
///
/// Baseline and TFE4 carry the characterized register powers. TFE1..TFE3 are
/// derived values, interpolated quadratically in ferroelectric thickness.
pub fn builtin_profiles() -> Vec<TechnologyProfile> {
    vec![
        finfet_baseline(),
        interpolated(1),
        interpolated(2),
        interpolated(3),
        tfe4(),
    ]
}

/// Looks up a built-in profile by name (case-insensitive). A `-sym` suffix
/// gives the profile's [`symmetric`](TechnologyProfile::symmetric) variant.
pub fn builtin_profile(name: &str) -> Result<TechnologyProfile> {
    let lower = name.to_ascii_lowercase();
    let (base, sym) = match lower.strip_suffix("-sym") {
        Some(b) => (b, true),
        None => (lower.as_str(), false),
    };
    builtin_profiles()
        .into_iter()
        .find(|p| p.name == base)
        .map(|p| if sym { p.symmetric() } else { p })
        .ok_or_else(|| Error::UnknownProfile(name.to_string()))
}

/// Unit of [`NoiseConfig::sigma`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScale {
    /// `sigma` is in watts.
    Watts,
    /// `sigma` is a multiple of the profile's [`TechnologyProfile::signal_std`],
    /// so every technology sees the same signal-to-noise ratio for a
    /// symmetric leakage.
    #[default]
    SignalStd,
}

/// Additive Gaussian noise on the peak-power scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub sigma: f64,
    #[serde(default)]
    pub scale: NoiseScale,
    /// Selects an independent family of noise streams.
    #[serde(default)]
    pub seed_slot: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self::none()
    }
}

impl NoiseConfig {
    pub fn none() -> Self {
        Self {
            sigma: 0.0,
            scale: NoiseScale::SignalStd,
            seed_slot: 0,
        }
    }

    pub fn relative(sigma: f64) -> Self {
        Self {
            sigma,
            scale: NoiseScale::SignalStd,
            seed_slot: 0,
        }
    }

    pub fn watts(sigma: f64) -> Self {
        Self {
            sigma,
            scale: NoiseScale::Watts,
            seed_slot: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(Error::InvalidNoise(format!(
                "sigma must be finite and nonnegative, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    /// Standard deviation in watts for `profile`.
    pub fn sigma_watts(&self, profile: &TechnologyProfile) -> f64 {
        match self.scale {
            NoiseScale::Watts => self.sigma,
            NoiseScale::SignalStd => self.sigma * profile.signal_std(),
        }
    }
}

/// One simulated peak-power value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakSample {
    pub watts: f64,
    /// The noisy value fell below `p_static` and was clamped to it.
    pub clamped: bool,
}

/// Noise-free register power for one transition pattern.
pub fn noiseless_peak_power(tc: &TransitionCount, profile: &TechnologyProfile) -> f64 {
    tc.n01 as f64 * profile.t01_total
        + tc.n10 as f64 * profile.t10_total
        + tc.n_stable as f64 * profile.t_clk
        + profile.p_static
}

/// Peak power at the final clock edge, with a standard-normal draw from
/// `rng` scaled by the configured noise.
///
/// No random number is consumed when the noise is zero.
pub fn simulate_peak_power<R: rand::Rng + ?Sized>(
    tc: &TransitionCount,
    profile: &TechnologyProfile,
    noise: &NoiseConfig,
    rng: &mut R,
) -> PeakSample {
    let sigma = noise.sigma_watts(profile);
    let z = if sigma > 0.0 {
        StandardNormal.sample(rng)
    } else {
        0.0
    };
    peak_from_draw(tc, profile, sigma, z)
}

fn peak_from_draw(
    tc: &TransitionCount,
    profile: &TechnologyProfile,
    sigma: f64,
    z: f64,
) -> PeakSample {
    let p = noiseless_peak_power(tc, profile) + sigma * z;
    if p < profile.p_static {
        PeakSample {
            watts: profile.p_static,
            clamped: true,
        }
    } else {
        PeakSample {
            watts: p,
            clamped: false,
        }
    }
}

/// One row of a [`TraceSet`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub plaintext: Block,
    pub ciphertext: Block,
    pub peak_power: f64,
}

/// Peak-power traces of one key under one technology, aligned with the
/// plaintext list they were simulated from.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub profile_name: String,
    /// Known when the set was simulated; absent after a CSV import.
    pub key: Option<AesKey>,
    pub entries: Vec<TraceEntry>,
    /// Number of samples clamped to `p_static`.
    pub clamp_count: usize,
}

/// Noise draws of one trace set: text `i` reads stream `i` of a ChaCha8
/// generator seeded from `(seed, seed_slot)`, so draws do not depend on
/// evaluation order and are shared across profiles.
pub fn noise_draw(seed: u64, seed_slot: u64, text_index: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "noise", &[seed_slot]));
    rng.set_stream(text_index);
    StandardNormal.sample(&mut rng)
}

/// Encrypts every text under `key` and records the register peak power.
pub fn simulate_trace_set(
    key: &AesKey,
    texts: &[Block],
    profile: &TechnologyProfile,
    noise: &NoiseConfig,
    seed: u64,
) -> TraceSet {
    let schedule = aes::expand_key(key);
    let records: Vec<_> = texts
        .iter()
        .map(|pt| aes::encrypt_with_schedule(&schedule, pt))
        .collect();
    trace_set_from_records(&records, Some(*key), profile, noise, seed)
}

/// Builds a trace set from already computed encryptions.
pub fn trace_set_from_records(
    records: &[aes::EncryptionRecord],
    key: Option<AesKey>,
    profile: &TechnologyProfile,
    noise: &NoiseConfig,
    seed: u64,
) -> TraceSet {
    let sigma = noise.sigma_watts(profile);
    let mut base = (sigma > 0.0)
        .then(|| ChaCha8Rng::seed_from_u64(seed::derive(seed, "noise", &[noise.seed_slot])));
    let mut clamp_count = 0;
    let entries = records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let z = match base.as_mut() {
                Some(rng) => {
                    rng.set_stream(i as u64);
                    rng.set_word_pos(0);
                    StandardNormal.sample(rng)
                }
                None => 0.0,
            };
            let s = peak_from_draw(&rec.last_round_transitions(), profile, sigma, z);
            clamp_count += s.clamped as usize;
            TraceEntry {
                plaintext: rec.plaintext,
                ciphertext: rec.ciphertext,
                peak_power: s.watts,
            }
        })
        .collect();
    TraceSet {
        profile_name: profile.name.clone(),
        key,
        entries,
        clamp_count,
    }
}

pub const TRACE_CSV_HEADER: &str = "index,plaintext_hex,ciphertext_hex,power_watts";

impl TraceSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn powers(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.peak_power).collect()
    }

    pub fn ciphertexts(&self) -> Vec<Block> {
        self.entries.iter().map(|e| e.ciphertext).collect()
    }

    /// Every power multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for e in &mut out.entries {
            e.peak_power *= factor;
        }
        out
    }

    /// CSV with header `index,plaintext_hex,ciphertext_hex,power_watts`,
    /// power in scientific notation with 9 significant digits.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(80 * (self.entries.len() + 1));
        out.push_str(TRACE_CSV_HEADER);
        out.push('\n');
        for (i, e) in self.entries.iter().enumerate() {
            writeln!(
                out,
                "{i},{},{},{:.8e}",
                e.plaintext, e.ciphertext, e.peak_power
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn from_csv_str(text: &str, profile_name: impl Into<String>) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == TRACE_CSV_HEADER => {}
            Some(h) => return Err(Error::Parse(format!("unexpected trace header `{h}`"))),
            None => return Err(Error::Parse("empty trace file".into())),
        }
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            let [idx, pt, ct, pw] = cols[..] else {
                return Err(Error::Parse(format!(
                    "trace line {}: expected 4 columns",
                    n + 2
                )));
            };
            let idx: usize = idx
                .parse()
                .map_err(|e| Error::Parse(format!("trace line {}: index: {e}", n + 2)))?;
            if idx != entries.len() {
                return Err(Error::Parse(format!(
                    "trace line {}: index {idx} out of order",
                    n + 2
                )));
            }
            let peak_power: f64 = pw
                .parse()
                .map_err(|e| Error::Parse(format!("trace line {}: power: {e}", n + 2)))?;
            entries.push(TraceEntry {
                plaintext: Block::from_hex(pt)?,
                ciphertext: Block::from_hex(ct)?,
                peak_power,
            });
        }
        Ok(Self {
            profile_name: profile_name.into(),
            key: None,
            entries,
            clamp_count: 0,
        })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>, profile_name: impl Into<String>) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?, profile_name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tc(n01: u32, n10: u32) -> TransitionCount {
        TransitionCount {
            n01,
            n10,
            n_stable: 128 - n01 - n10,
        }
    }

    #[test]
    fn builtin_values() {
        let p = builtin_profiles();
        assert_eq!(
            p.iter().map(|p| p.name.as_str()).collect::<Vec<_>>(),
            BUILTIN_NAMES
        );
        let f = &p[0];
        assert_eq!(
            (f.t01_total, f.t10_total, f.t_clk, f.p_static),
            (2.19e-6, 2.04e-6, 4.89e-7, 3.45e-10)
        );
        let t = &p[4];
        assert_eq!(
            (t.t01_total, t.t10_total, t.t_clk, t.p_static),
            (4.59e-6, 3.86e-6, 6.94e-7, 3.17e-10)
        );
        assert!((f.asymmetry_ratio() - 1.0735).abs() < 1e-3);
        assert!((t.asymmetry_ratio() - 1.1891).abs() < 1e-3);
        for p in &p {
            p.validate().unwrap();
            assert_eq!((p.vdd, p.freq), (0.7, 100e6));
        }
    }

    #[test]
    fn interpolated_profiles_follow_quadratic_weight() {
        let p = builtin_profiles();
        let (f, t) = (&p[0], &p[4]);
        for (k, prof) in p[1..4].iter().enumerate() {
            let w = ((k + 1) as f64 / 4.0).powi(2);
            assert!(
                (prof.t01_total - (f.t01_total + (t.t01_total - f.t01_total) * w)).abs() < 1e-18
            );
        }
        assert!((p[2].t10_total - (2.04e-6 + 1.82e-6 / 4.0)).abs() < 1e-18);
    }

    #[test]
    fn peak_power_examples() {
        let f = builtin_profile("FinFET").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let none = NoiseConfig::none();
        let s = simulate_peak_power(&tc(128, 0), &f, &none, &mut rng);
        assert!((s.watts - 2.80320345e-4).abs() < 1e-15);
        assert!(!s.clamped);
        let s = simulate_peak_power(&tc(0, 0), &f, &none, &mut rng);
        assert_eq!(s.watts, 128.0 * f.t_clk + f.p_static);
        let sym = f.symmetric();
        for (a, b) in [(3, 9), (60, 1), (0, 128), (40, 40)] {
            let s = simulate_peak_power(&tc(a, b), &sym, &none, &mut rng);
            let hd = (a + b) as f64;
            let expect = 128.0 * sym.t_clk + sym.p_static + hd * (sym.t01_total - sym.t_clk);
            assert!((s.watts - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_noise_consumes_no_randomness() {
        use rand::RngCore;
        let f = builtin_profile("finfet").unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let b = a.clone();
        simulate_peak_power(&tc(1, 1), &f, &NoiseConfig::none(), &mut a);
        assert_eq!(a.clone().next_u64(), b.clone().next_u64());
    }

    #[test]
    fn negative_noisy_power_is_clamped() {
        let f = builtin_profile("finfet").unwrap();
        let s = peak_from_draw(&tc(0, 0), &f, 1.0, -1.0);
        assert!(s.clamped);
        assert_eq!(s.watts, f.p_static);
    }

    #[test]
    fn profile_validation() {
        assert!(TechnologyProfile::new("x", 1.0, 1.0, 0.0, 0.0).is_err());
        assert!(TechnologyProfile::new("x", 0.5, 1.0, 0.6, 0.0).is_err());
        assert!(TechnologyProfile::new("x", 1.0, 1.0, 0.5, -1.0).is_err());
        assert!(TechnologyProfile::new("", 1.0, 1.0, 0.5, 0.0).is_err());
        assert!(builtin_profile("tfe9").is_err());
    }

    #[test]
    fn profile_json_round_trip_and_unknown_fields() {
        let p = builtin_profile("tfe2").unwrap();
        assert_eq!(
            TechnologyProfile::from_json_str(&p.to_json_string()).unwrap(),
            p
        );
        let bad = r#"{"name":"x","t01_total":1,"t10_total":1,"t_clk":0.5,"p_static":0,"vdd":0.7,"freq":1e8,"extra":1}"#;
        assert!(TechnologyProfile::from_json_str(bad).is_err());
    }

    #[test]
    fn signal_std_of_symmetric_profile() {
        // symmetric: per-bit variance a^2/4, so std = a * sqrt(32)
        let p = TechnologyProfile::new("s", 2.0, 2.0, 1.0, 0.0).unwrap();
        assert!((p.signal_std() - 32f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn noise_draws_match_helper() {
        let f = builtin_profile("finfet").unwrap();
        let key = AesKey::new([1; 16]);
        let texts: Vec<Block> = (0..5u8).map(|i| Block::new([i; 16])).collect();
        let noise = NoiseConfig::watts(1e-6);
        let ts = simulate_trace_set(&key, &texts, &f, &noise, 42);
        for (i, e) in ts.entries.iter().enumerate() {
            let rec = aes::encrypt(&key, &texts[i]);
            let expect = noiseless_peak_power(&rec.last_round_transitions(), &f)
                + 1e-6 * noise_draw(42, 0, i as u64);
            assert_eq!(e.peak_power, expect);
        }
    }

    #[test]
    fn csv_rejects_bad_header_and_order() {
        assert!(TraceSet::from_csv_str("a,b\n", "x").is_err());
        let row = format!("{TRACE_CSV_HEADER}\n1,{0},{0},1e-4\n", "00".repeat(16));
        assert!(TraceSet::from_csv_str(&row, "x").is_err());
    }
}
