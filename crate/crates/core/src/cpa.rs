//! Last-round correlation power analysis with the Hamming-distance model.
//!
//! For the key byte at ciphertext position `q`, a guess `g` predicts the
//! round-9 byte `inv_sbox(c[q] ^ g)`. That byte sat in register position
//! `src = shiftrows_source(q)`, which at the final edge switches to `c[src]`.
//! The hypothetical power of the guess is the Hamming distance between the
//! two. The guess whose hypothetical powers correlate best (Pearson) with the
//! observed peak power is taken as the round-10 key byte.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aes::{self, AesKey, Block, INV_SBOX, SHIFTROWS_SOURCE};
use crate::error::{Error, Result};
use crate::power::TraceSet;

/// Grid on which correlation coefficients are reported and ranked.
///
/// Rounding to it makes coefficients that differ only by floating-point
/// rounding compare equal, so such ties fall to the candidate-value rule and
/// rankings do not change under rescaling of the traces.
pub const COEFFICIENT_QUANTUM: f64 = 1e-12;

fn quantize(r: f64) -> f64 {
    ((r / COEFFICIENT_QUANTUM).round() * COEFFICIENT_QUANTUM).clamp(-1.0, 1.0)
}

fn check_position(byte_position: usize) -> Result<()> {
    if byte_position < 16 {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            what: "byte position",
            value: byte_position,
            bound: 16,
        })
    }
}

#[inline]
fn hd_byte(ct: &[u8; 16], byte_position: usize, guess: u8) -> u8 {
    let predicted = INV_SBOX[(ct[byte_position] ^ guess) as usize];
    (predicted ^ ct[SHIFTROWS_SOURCE[byte_position]]).count_ones() as u8
}

/// Hypothetical Hamming distances of one key-byte guess, one per ciphertext.
pub fn hypothetical_hd(
    ciphertexts: &[Block],
    byte_position: usize,
    guess: usize,
) -> Result<Vec<u8>> {
    check_position(byte_position)?;
    if guess > 255 {
        return Err(Error::OutOfRange {
            what: "key guess",
            value: guess,
            bound: 256,
        });
    }
    Ok(ciphertexts
        .iter()
        .map(|c| hd_byte(&c.0, byte_position, guess as u8))
        .collect())
}

/// Hypothetical powers of all 256 guesses for one byte position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HypothesisMatrix {
    byte_position: usize,
    traces: usize,
    values: Vec<u8>,
}

impl HypothesisMatrix {
    pub fn new(ciphertexts: &[Block], byte_position: usize) -> Result<Self> {
        check_position(byte_position)?;
        let mut values = Vec::with_capacity(256 * ciphertexts.len());
        for g in 0..=255u8 {
            values.extend(ciphertexts.iter().map(|c| hd_byte(&c.0, byte_position, g)));
        }
        Ok(Self {
            byte_position,
            traces: ciphertexts.len(),
            values,
        })
    }

    pub fn byte_position(&self) -> usize {
        self.byte_position
    }

    pub fn trace_count(&self) -> usize {
        self.traces
    }

    /// Hypothetical values of `guess` across all traces.
    pub fn row(&self, guess: u8) -> &[u8] {
        let start = guess as usize * self.traces;
        &self.values[start..start + self.traces]
    }
}

/// Sample Pearson correlation coefficient.
///
/// Two-pass (centre first, then accumulate). Returns 0 when either input has
/// zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: x.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// One key-byte candidate and its correlation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub candidate: u8,
    pub coefficient: f64,
}

/// All 256 candidates of one byte position, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct ByteRanking {
    pub byte_position: usize,
    pub ranking: Vec<CandidateScore>,
}

impl ByteRanking {
    fn from_scores(byte_position: usize, scores: &[f64; 256]) -> Self {
        let mut ranking: Vec<CandidateScore> = scores
            .iter()
            .enumerate()
            .map(|(g, &c)| CandidateScore {
                candidate: g as u8,
                coefficient: c,
            })
            .collect();
        ranking.sort_by(|a, b| {
            b.coefficient
                .total_cmp(&a.coefficient)
                .then(a.candidate.cmp(&b.candidate))
        });
        Self {
            byte_position,
            ranking,
        }
    }

    pub fn best(&self) -> CandidateScore {
        self.ranking[0]
    }

    /// Zero-based rank of `candidate`.
    pub fn rank_of(&self, candidate: u8) -> usize {
        self.ranking
            .iter()
            .position(|c| c.candidate == candidate)
            .expect("ranking covers all candidates")
    }

    pub fn coefficient_of(&self, candidate: u8) -> f64 {
        self.ranking[self.rank_of(candidate)].coefficient
    }
}

/// Outcome of one attack.
#[derive(Debug, Clone, PartialEq)]
pub struct CpaResult {
    pub per_byte: Vec<ByteRanking>,
    /// Rank-1 candidates, i.e. the recovered round-10 key.
    pub recovered_key: Block,
    pub trace_count: usize,
}

impl CpaResult {
    pub fn recovered_master_key(&self) -> AesKey {
        round10_to_master_key(&self.recovered_key)
    }

    /// All 16 bytes ranked first equal `round_key_10`.
    pub fn recovers(&self, round_key_10: &Block) -> bool {
        self.recovered_key == *round_key_10
    }

    pub fn report(&self, top: usize) -> CpaReport {
        CpaReport {
            trace_count: self.trace_count,
            recovered_round10_key: self.recovered_key,
            recovered_master_key: self.recovered_master_key(),
            bytes: self
                .per_byte
                .iter()
                .map(|b| ByteReport {
                    byte_position: b.byte_position,
                    top: b.ranking.iter().take(top).copied().collect(),
                })
                .collect(),
        }
    }
}

/// JSON form of a [`CpaResult`]: the top candidates of every byte plus the
/// recovered keys in hex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpaReport {
    pub trace_count: usize,
    pub recovered_round10_key: Block,
    pub recovered_master_key: AesKey,
    pub bytes: Vec<ByteReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ByteReport {
    pub byte_position: usize,
    pub top: Vec<CandidateScore>,
}

impl CpaReport {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Correlations of all candidates, `[position][guess]`.
pub type ScoreTable = [[f64; 256]; 16];

/// In-place unnormalized Walsh-Hadamard transform of length 256, applied
/// independently to each of the `K` lanes.
fn fwht<T, const K: usize>(v: &mut [[T; K]; 256])
where
    T: Copy + std::ops::Add<Output = T> + std::ops::Sub<Output = T>,
{
    let mut h = 1;
    while h < 256 {
        for start in (0..256).step_by(2 * h) {
            let (lo, hi) = v[start..start + 2 * h].split_at_mut(h);
            for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                for k in 0..K {
                    let (a, b) = (x[k], y[k]);
                    x[k] = a + b;
                    y[k] = a - b;
                }
            }
        }
        h *= 2;
    }
}

const PAIRS: usize = 28;

fn bit_pairs() -> [(usize, usize); PAIRS] {
    let mut out = [(0, 0); PAIRS];
    let mut k = 0;
    for a in 0..8 {
        for b in a + 1..8 {
            out[k] = (a, b);
            k += 1;
        }
    }
    out
}

/// Bits of a byte as +1 (clear) / -1 (set).
fn spins(byte: u8) -> [i32; 8] {
    std::array::from_fn(|b| 1 - 2 * ((byte >> b) & 1) as i32)
}

fn pair_spins(byte: u8) -> [i32; PAIRS] {
    let s = spins(byte);
    let pairs = bit_pairs();
    std::array::from_fn(|k| s[pairs[k].0] * s[pairs[k].1])
}

/// Per-byte spin tables and the transforms of the inverse S-box in spin
/// form, single bits and bit pairs.
struct SpinTables {
    single: Box<[[i32; 8]; 256]>,
    pair: Box<[[i32; PAIRS]; 256]>,
    single_f: Box<[[f64; 8]; 256]>,
    sbox_single: Box<[[f64; 8]; 256]>,
    sbox_pair: Box<[[f64; PAIRS]; 256]>,
}

impl SpinTables {
    fn new() -> Self {
        let single: [[i32; 8]; 256] = std::array::from_fn(|y| spins(y as u8));
        let pair: [[i32; PAIRS]; 256] = std::array::from_fn(|y| pair_spins(y as u8));
        let single_f = std::array::from_fn(|y| single[y].map(f64::from));
        let mut sbox_single: [[f64; 8]; 256] =
            std::array::from_fn(|z| spins(INV_SBOX[z]).map(f64::from));
        let mut sbox_pair: [[f64; PAIRS]; 256] =
            std::array::from_fn(|z| pair_spins(INV_SBOX[z]).map(f64::from));
        fwht(&mut sbox_single);
        fwht(&mut sbox_pair);
        Self {
            single: Box::new(single),
            pair: Box::new(pair),
            single_f: Box::new(single_f),
            sbox_single: Box::new(sbox_single),
            sbox_pair: Box::new(sbox_pair),
        }
    }
}

/// Lane-wise products with a transformed S-box table, summed over lanes.
///
/// Runs in `f64`; every intermediate is an integer far below 2^53 for any
/// realistic trace count, so the result is exact.
fn correlate<const K: usize>(acc: &[[i32; K]; 256], sbox: &[[f64; K]; 256]) -> [i64; 256] {
    let mut v: Box<[[f64; K]; 256]> = Box::new(std::array::from_fn(|x| acc[x].map(f64::from)));
    fwht(&mut v);
    let mut t: [[f64; 1]; 256] =
        std::array::from_fn(|k| [v[k].iter().zip(&sbox[k]).map(|(a, b)| a * b).sum()]);
    fwht(&mut t);
    t.map(|[x]| x as i64)
}

/// CPA engine for a fixed ciphertext corpus. One instance serves any number
/// of power columns (technologies) recorded over the same ciphertexts and any
/// number of index subsets.
///
/// Writing the predicted byte's bits as spins `S_b(c[q] ^ g)` and the
/// register's final bits as `Y_b`, the Hamming distance is
/// `4 - (1/2) * sum_b S_b Y_b`. Every sum the correlation needs (of `h`,
/// `h^2` and `h * p`) then becomes an XOR-correlation over the ciphertext
/// byte value, which is evaluated for all 256 guesses at once with
/// Walsh-Hadamard transforms. Sums of `h` and `h^2` are exact integers.
pub struct Attacker {
    ciphertexts: Vec<[u8; 16]>,
    tables: SpinTables,
}

impl std::fmt::Debug for Attacker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Attacker")
            .field("traces", &self.ciphertexts.len())
            .finish()
    }
}

impl Attacker {
    pub fn new(ciphertexts: &[Block]) -> Self {
        Self {
            ciphertexts: ciphertexts.iter().map(|c| c.0).collect(),
            tables: SpinTables::new(),
        }
    }

    pub fn trace_count(&self) -> usize {
        self.ciphertexts.len()
    }

    fn check(&self, powers: &[&[f64]], indices: &[usize]) -> Result<()> {
        if indices.len() < 2 {
            return Err(Error::TooFewSamples {
                needed: 2,
                got: indices.len(),
            });
        }
        for p in powers {
            if p.len() != self.ciphertexts.len() {
                return Err(Error::LengthMismatch {
                    left: p.len(),
                    right: self.ciphertexts.len(),
                });
            }
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= self.ciphertexts.len()) {
            return Err(Error::OutOfRange {
                what: "trace index",
                value: i,
                bound: self.ciphertexts.len(),
            });
        }
        Ok(())
    }

    fn select(&self, powers: &[&[f64]], indices: &[usize]) -> Result<Selection> {
        self.check(powers, indices)?;
        let nf = indices.len() as f64;
        let centred: Vec<Vec<f64>> = powers
            .iter()
            .map(|p| {
                let sel: Vec<f64> = indices.iter().map(|&i| p[i]).collect();
                let mean = sel.iter().sum::<f64>() / nf;
                sel.into_iter().map(|v| v - mean).collect()
            })
            .collect();
        Ok(Selection {
            psum: centred.iter().map(|c| c.iter().sum()).collect(),
            spp: centred
                .iter()
                .map(|c| c.iter().map(|v| v * v).sum())
                .collect(),
            centred,
        })
    }

    /// Scores of all 256 guesses at position `q`, one row per power column.
    fn position_scores(&self, q: usize, indices: &[usize], sel: &Selection) -> Vec<[f64; 256]> {
        let t = &self.tables;
        let n = indices.len();
        let nf = n as f64;
        let src = SHIFTROWS_SOURCE[q];
        let mut e = Box::new([[0i32; 8]; 256]);
        let mut ee = Box::new([[0i32; PAIRS]; 256]);
        let mut d = vec![[[0f64; 8]; 256]; sel.centred.len()];
        for (j, &i) in indices.iter().enumerate() {
            let ct = &self.ciphertexts[i];
            let x = ct[q] as usize;
            let y = ct[src] as usize;
            for (acc, s) in e[x].iter_mut().zip(&t.single[y]) {
                *acc += s;
            }
            for (acc, s) in ee[x].iter_mut().zip(&t.pair[y]) {
                *acc += s;
            }
            for (dk, col) in d.iter_mut().zip(&sel.centred) {
                let p = col[j];
                for (acc, s) in dk[x].iter_mut().zip(&t.single_f[y]) {
                    *acc += s * p;
                }
            }
        }

        let t1 = correlate(&e, &t.sbox_single);
        let t2 = correlate(&ee, &t.sbox_pair);
        // sum h = 4n - T1/2, sum h^2 = 18n - 4 T1 + T2/2, with T = t / 256
        let sh: [i64; 256] = std::array::from_fn(|g| (8 * n as i64 - t1[g] / 256) / 2);
        let shh: [i64; 256] =
            std::array::from_fn(|g| 18 * n as i64 - 4 * (t1[g] / 256) + t2[g] / 512);

        d.iter_mut()
            .zip(&sel.psum)
            .zip(&sel.spp)
            .map(|((dk, &ps), &sp)| {
                fwht(dk);
                let mut tp: [[f64; 1]; 256] = std::array::from_fn(|k| {
                    [dk[k]
                        .iter()
                        .zip(&t.sbox_single[k])
                        .map(|(a, b)| a * b)
                        .sum()]
                });
                fwht(&mut tp);
                std::array::from_fn(|g| {
                    let nvar = n as i64 * shh[g] - sh[g] * sh[g];
                    if nvar == 0 || sp == 0.0 {
                        return 0.0;
                    }
                    let shp = 4.0 * ps - tp[g][0] / 512.0;
                    let cov = shp - sh[g] as f64 * ps / nf;
                    let var_h = nvar as f64 / nf;
                    quantize(cov / (var_h.sqrt() * sp.sqrt()))
                })
            })
            .collect()
    }

    /// Quantized correlation of every candidate at every position, for each
    /// power column, over the selected traces.
    pub fn scores(&self, powers: &[&[f64]], indices: &[usize]) -> Result<Vec<Box<ScoreTable>>> {
        let sel = self.select(powers, indices)?;
        let mut out: Vec<Box<ScoreTable>> =
            powers.iter().map(|_| Box::new([[0.0; 256]; 16])).collect();
        for q in 0..16 {
            for (table, row) in out.iter_mut().zip(self.position_scores(q, indices, &sel)) {
                table[q] = row;
            }
        }
        Ok(out)
    }

    /// Full attack on one power column.
    pub fn attack(&self, powers: &[f64], indices: &[usize]) -> Result<CpaResult> {
        let scores = self.scores(&[powers], indices)?;
        Ok(result_from_scores(&scores[0], indices.len()))
    }

    /// Whether the rank-1 candidates of each power column equal
    /// `round_key_10`, one flag per column. Stops as soon as every column
    /// has missed a byte.
    pub fn recovers(
        &self,
        powers: &[&[f64]],
        indices: &[usize],
        round_key_10: &Block,
    ) -> Result<Vec<bool>> {
        let sel = self.select(powers, indices)?;
        let mut ok = vec![true; powers.len()];
        for q in 0..16 {
            let rows = self.position_scores(q, indices, &sel);
            for (flag, row) in ok.iter_mut().zip(&rows) {
                *flag &= best_guess(row) == round_key_10.0[q];
            }
            if !ok.iter().any(|&f| f) {
                break;
            }
        }
        Ok(ok)
    }
}

struct Selection {
    centred: Vec<Vec<f64>>,
    psum: Vec<f64>,
    spp: Vec<f64>,
}

fn best_guess(row: &[f64; 256]) -> u8 {
    let mut best = 0usize;
    for g in 1..256 {
        // strict: ties keep the smaller candidate
        if row[g] > row[best] {
            best = g;
        }
    }
    best as u8
}

fn result_from_scores(scores: &ScoreTable, trace_count: usize) -> CpaResult {
    let per_byte: Vec<ByteRanking> = scores
        .iter()
        .enumerate()
        .map(|(q, s)| ByteRanking::from_scores(q, s))
        .collect();
    let recovered_key = Block(std::array::from_fn(|q| per_byte[q].best().candidate));
    CpaResult {
        per_byte,
        recovered_key,
        trace_count,
    }
}

/// Attacks the traces at `trace_indices`.
pub fn attack(traces: &TraceSet, trace_indices: &[usize]) -> Result<CpaResult> {
    if let Some(&i) = trace_indices.iter().find(|&&i| i >= traces.len()) {
        return Err(Error::OutOfRange {
            what: "trace index",
            value: i,
            bound: traces.len(),
        });
    }
    if trace_indices.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: trace_indices.len(),
        });
    }
    let cts: Vec<Block> = traces.ciphertexts();
    let powers: Vec<f64> = traces.powers();
    Attacker::new(&cts).attack(&powers, trace_indices)
}

/// Same as [`attack`] but evaluates the 16 byte positions in parallel using
/// one [`HypothesisMatrix`] and a direct Pearson computation per guess.
/// Much slower than [`Attacker`]; coefficients agree to rounding.
pub fn attack_by_position(traces: &TraceSet, trace_indices: &[usize]) -> Result<CpaResult> {
    if trace_indices.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: trace_indices.len(),
        });
    }
    let cts: Vec<Block> = trace_indices
        .iter()
        .map(|&i| traces.entries.get(i).map(|e| e.ciphertext))
        .collect::<Option<_>>()
        .ok_or(Error::OutOfRange {
            what: "trace index",
            value: *trace_indices.iter().max().expect("nonempty"),
            bound: traces.len(),
        })?;
    let powers: Vec<f64> = trace_indices
        .iter()
        .map(|&i| traces.entries[i].peak_power)
        .collect();
    let rows: Vec<[f64; 256]> = (0..16)
        .into_par_iter()
        .map(|q| {
            let m = HypothesisMatrix::new(&cts, q).expect("position in range");
            let mut s = [0.0; 256];
            for (g, out) in s.iter_mut().enumerate() {
                let h: Vec<f64> = m.row(g as u8).iter().map(|&v| v as f64).collect();
                *out = quantize(pearson(&h, &powers).expect("lengths match"));
            }
            s
        })
        .collect();
    let table: ScoreTable = rows.try_into().expect("16 rows");
    Ok(result_from_scores(&table, trace_indices.len()))
}

/// Inverts the AES-128 key schedule from the round-10 key back to the
/// cipher key.
pub fn round10_to_master_key(k10: &Block) -> AesKey {
    let mut k = k10.0;
    for round in (1..=10).rev() {
        k = aes::prev_round_key(&k, round);
    }
    AesKey(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aes::{encrypt, expand_key, register_transitions, sbox};

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]).unwrap(), 0.0);
        assert!(matches!(
            pearson(&[1.0], &[1.0]),
            Err(Error::TooFewSamples { .. })
        ));
        assert!(matches!(
            pearson(&[1.0, 2.0], &[1.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn hypothetical_hd_range_checks() {
        let c = [Block::default()];
        assert!(hypothetical_hd(&c, 16, 0).is_err());
        assert!(hypothetical_hd(&c, 0, 256).is_err());
        let v = hypothetical_hd(&c, 3, 77).unwrap();
        assert_eq!(v.len(), 1);
        assert!(v[0] <= 8);
    }

    #[test]
    fn hypothetical_hd_exhaustive_byte_oracle() {
        // position 0 maps onto itself, so the compared byte is c[0] too
        for c in 0..=255u8 {
            let mut block = [0x5au8; 16];
            block[0] = c;
            let cts = [Block(block)];
            for g in 0..=255u8 {
                let h = hypothetical_hd(&cts, 0, g as usize).unwrap()[0];
                // predicted round-9 byte: the x with sbox(x) ^ g == c
                let predicted = (0..=255u8).find(|&x| sbox(x) ^ g == c).unwrap();
                let naive = (0..8)
                    .filter(|b| (predicted >> b) & 1 != (c >> b) & 1)
                    .count() as u8;
                assert_eq!(h, naive);
            }
        }
    }

    #[test]
    fn correct_guess_matches_register_transitions() {
        let key = AesKey::from_hex("000102030405060708090a0b0c0d0e0f").unwrap();
        let k10 = expand_key(&key)[10];
        for t in 0..50u8 {
            let rec = encrypt(&key, &Block::new([t.wrapping_mul(37); 16]));
            for q in 0..16 {
                let h = hypothetical_hd(&[rec.ciphertext], q, k10.0[q] as usize).unwrap()[0];
                let src = SHIFTROWS_SOURCE[q];
                let mut before = [0u8; 16];
                let mut after = [0u8; 16];
                before[src] = rec.round9_state.0[src];
                after[src] = rec.ciphertext.0[src];
                let tc = register_transitions(&Block(before), &Block(after));
                assert_eq!(h as u32, tc.hamming_distance());
            }
        }
    }

    #[test]
    fn matrix_rows_match_single_guess() {
        let cts: Vec<Block> = (0..20u8).map(|i| Block::new([i ^ 0x3c; 16])).collect();
        let m = HypothesisMatrix::new(&cts, 7).unwrap();
        assert_eq!(
            m.row(200),
            hypothetical_hd(&cts, 7, 200).unwrap().as_slice()
        );
        assert!(HypothesisMatrix::new(&cts, 16).is_err());
    }

    #[test]
    fn master_key_inversion() {
        let key = AesKey::from_hex("000102030405060708090a0b0c0d0e0f").unwrap();
        assert_eq!(round10_to_master_key(&expand_key(&key)[10]), key);
        let zero = AesKey::default();
        assert_eq!(round10_to_master_key(&expand_key(&zero)[10]), zero);
    }

    #[test]
    fn quantize_is_idempotent_and_bounded() {
        for r in [-1.0, -0.3, 0.0, 0.123456789012345, 0.9999999999999998, 1.0] {
            let q = quantize(r);
            assert_eq!(quantize(q), q);
            assert!((-1.0..=1.0).contains(&q));
            assert!((q - r).abs() <= COEFFICIENT_QUANTUM);
        }
    }

    #[test]
    fn attacker_rejects_bad_input() {
        let cts = vec![Block::default(); 4];
        let a = Attacker::new(&cts);
        let p = [1.0, 2.0, 3.0, 4.0];
        assert!(a.attack(&p, &[0]).is_err());
        assert!(a.attack(&p, &[0, 4]).is_err());
        assert!(a.attack(&p[..3], &[0, 1]).is_err());
    }

    #[test]
    fn attacker_matches_direct_pearson() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let key = AesKey(rng.random());
        let ks = expand_key(&key);
        let mut entries = Vec::new();
        for _ in 0..300 {
            let rec = crate::aes::encrypt_with_schedule(&ks, &Block(rng.random()));
            let tc = rec.last_round_transitions();
            let p = tc.n01 as f64 * 2.0 + tc.n10 as f64 * 1.5 + rng.random::<f64>() * 40.0;
            entries.push(crate::power::TraceEntry {
                plaintext: rec.plaintext,
                ciphertext: rec.ciphertext,
                peak_power: p,
            });
        }
        let set = TraceSet {
            profile_name: "test".into(),
            key: Some(key),
            entries,
            clamp_count: 0,
        };
        let idx: Vec<usize> = (0..300).step_by(2).chain(1..40).collect();
        let fast = attack(&set, &idx).unwrap();
        let slow = attack_by_position(&set, &idx).unwrap();
        for (f, s) in fast.per_byte.iter().zip(&slow.per_byte) {
            for g in 0..=255u8 {
                assert!((f.coefficient_of(g) - s.coefficient_of(g)).abs() < 1e-9);
            }
        }
        assert_eq!(fast.recovered_key, slow.recovered_key);
    }
}
