use ncfet_psc::aes::{
    encrypt, expand_key, final_round, inv_sbox, register_transitions, sbox, AesKey, Block,
};
use ncfet_psc::cpa::{self, pearson, round10_to_master_key};
use ncfet_psc::device::{
    average_gain, series_capacitance, voltage_gain, CapacitancePair, GainCurve,
};
use ncfet_psc::harness::{
    index_set, threshold_crossing, Crossing, ExperimentConfig, Preset, StatsRow, SuccessCurve,
    ThresholdStats,
};
use ncfet_psc::power::{self, NoiseConfig};
use proptest::prelude::*;

fn naive_transitions(before: &[u8; 16], after: &[u8; 16]) -> (u32, u32) {
    let (mut up, mut down) = (0, 0);
    for i in 0..16 {
        for b in 0..8 {
            let x = before[i] >> b & 1;
            let y = after[i] >> b & 1;
            up += (x == 0 && y == 1) as u32;
            down += (x == 1 && y == 0) as u32;
        }
    }
    (up, down)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transitions_match_bit_loop(a in any::<[u8; 16]>(), b in any::<[u8; 16]>()) {
        let t = register_transitions(&Block(a), &Block(b));
        let (up, down) = naive_transitions(&a, &b);
        prop_assert_eq!((t.n01, t.n10), (up, down));
        prop_assert_eq!(t.n01 + t.n10 + t.n_stable, 128);
        let r = register_transitions(&Block(b), &Block(a));
        prop_assert_eq!((r.n01, r.n10, r.n_stable), (t.n10, t.n01, t.n_stable));
    }

    #[test]
    fn sboxes_are_inverse(x in any::<u8>()) {
        prop_assert_eq!(inv_sbox(sbox(x)), x);
        prop_assert_eq!(sbox(inv_sbox(x)), x);
    }

    #[test]
    fn last_round_rebuilds_ciphertext(key in any::<[u8; 16]>(), pt in any::<[u8; 16]>()) {
        let key = AesKey(key);
        let rec = encrypt(&key, &Block(pt));
        let ks = expand_key(&key);
        prop_assert_eq!(final_round(&rec.round9_state, &ks[10]), rec.ciphertext);
        prop_assert_eq!(round10_to_master_key(&ks[10]), key);
    }

    #[test]
    fn encryption_matches_reference_cipher(key in any::<[u8; 16]>(), pt in any::<[u8; 16]>()) {
        use aes::cipher::{BlockEncrypt, KeyInit};
        let mut block = pt.into();
        aes::Aes128::new(&key.into()).encrypt_block(&mut block);
        let expected: [u8; 16] = block.into();
        prop_assert_eq!(encrypt(&AesKey(key), &Block(pt)).ciphertext.0, expected);
    }

    #[test]
    fn hex_round_trips(bytes in any::<[u8; 16]>()) {
        let b = Block(bytes);
        prop_assert_eq!(b.to_string().parse::<Block>().unwrap(), b);
        prop_assert_eq!(b.to_string().to_uppercase().parse::<Block>().unwrap(), b);
    }

    #[test]
    fn hysteresis_free_pairs_amplify(ci_exp in -17.0f64..-13.0, ratio in 1.0001f64..100.0) {
        let ci = 10f64.powf(ci_exp);
        let pair = CapacitancePair::new(-ci * ratio, ci).unwrap();
        let c = series_capacitance(&pair).unwrap();
        prop_assert!(c > ci);
        prop_assert!((c - ci * ratio / (ratio - 1.0)).abs() <= 1e-12 * c);
        let a = voltage_gain(&pair).unwrap();
        prop_assert!(a > 1.0);
        prop_assert!((a - ratio / (ratio - 1.0)).abs() <= 1e-12 * a);
    }

    #[test]
    fn hysteretic_pairs_are_rejected(ci_exp in -17.0f64..-13.0, ratio in 1e-3f64..=1.0) {
        let ci = 10f64.powf(ci_exp);
        let pair = CapacitancePair::new(-ci * ratio, ci).unwrap();
        prop_assert!(!pair.is_hysteresis_free());
        prop_assert!(series_capacitance(&pair).is_err());
        prop_assert!(voltage_gain(&pair).is_err());
    }

    #[test]
    fn average_gain_is_endpoint_slope(
        mut grid in prop::collection::btree_set(1u32..10_000, 1..40),
        coeffs in (0.5f64..3.0, -1.0f64..1.0),
    ) {
        grid.insert(0);
        let pts: Vec<(f64, f64)> = grid
            .iter()
            .map(|&g| {
                let v = g as f64 * 1e-4;
                (v, coeffs.0 * v + coeffs.1 * v * v)
            })
            .collect();
        let (first, last) = (pts[0], pts[pts.len() - 1]);
        let oracle = (last.1 - first.1) / (last.0 - first.0);
        let curve = GainCurve::new(pts).unwrap();
        let got = average_gain(&curve).unwrap();
        prop_assert!(((got - oracle) / oracle).abs() <= 1e-9);
    }

    #[test]
    fn pearson_is_bounded_and_affine_invariant(
        pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 3..200),
        scale in 1e-3f64..1e3,
        shift in -1e3f64..1e3,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        if let Ok(r) = pearson(&x, &y) {
            prop_assert!(r.abs() <= 1.0);
            let y2: Vec<f64> = y.iter().map(|v| v * scale + shift).collect();
            if let Ok(r2) = pearson(&x, &y2) {
                prop_assert!((r - r2).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn attack_ranking_ignores_power_scale(seed in any::<u64>(), n in 20usize..120, lambda in 0.05f64..50.0) {
        let key = AesKey(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).to_le_bytes().repeat(2).try_into().unwrap());
        let texts: Vec<Block> = (0..n as u64)
            .map(|i| encrypt(&AesKey([seed as u8; 16]), &Block((i as u128 ^ seed as u128).to_le_bytes())).ciphertext)
            .collect();
        let profile = power::builtin_profile("tfe2").unwrap();
        let set = power::simulate_trace_set(&key, &texts, &profile, &NoiseConfig::relative(0.5), seed);
        let idx: Vec<usize> = (0..n).collect();
        let a = cpa::attack(&set, &idx).unwrap();
        let b = cpa::attack(&set.scaled(lambda), &idx).unwrap();
        prop_assert_eq!(a.recovered_key, b.recovered_key);
        for (x, y) in a.per_byte.iter().zip(&b.per_byte) {
            let rx: Vec<u8> = x.ranking.iter().map(|c| c.candidate).collect();
            let ry: Vec<u8> = y.ranking.iter().map(|c| c.candidate).collect();
            prop_assert_eq!(rx, ry);
        }
    }

    #[test]
    fn crossing_is_monotone_in_threshold(
        rates in prop::collection::vec(0.0f64..=1.0, 1..50),
        stride in 1usize..50,
        t1 in 0.0f64..=1.0,
        t2 in 0.0f64..=1.0,
    ) {
        let curve = SuccessCurve { profile_name: "p".into(), set_stride: stride, rates };
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = threshold_crossing(&curve, lo);
        let b = threshold_crossing(&curve, hi);
        prop_assert!(a <= b);
        if let Crossing::Traces(n) = a {
            prop_assert_eq!(n % stride, 0);
            prop_assert!(curve.rates[n / stride - 1] >= lo);
            prop_assert!(curve.rates[..n / stride - 1].iter().all(|&r| r < lo));
        }
    }

    #[test]
    fn curve_csv_round_trips(rates in prop::collection::vec(0.0f64..=1.0, 1..30), stride in 1usize..100) {
        let curve = SuccessCurve { profile_name: "x".into(), set_stride: stride, rates };
        let back = SuccessCurve::from_csv_str(&curve.to_csv_string(), "x").unwrap();
        prop_assert_eq!(back, curve);
    }

    #[test]
    fn stats_csv_round_trips(
        rows in prop::collection::vec(
            (0.0f64..1.0, prop::option::of(0usize..5), prop::option::of(0.0f64..2000.0),
             prop::option::of(0.0f64..500.0), 0usize..20, 0usize..20),
            0..10,
        ),
    ) {
        let stats = ThresholdStats {
            rows: rows
                .into_iter()
                .map(|(threshold, trial, avg, std, reached, not_reached)| StatsRow {
                    profile_name: "tfe3".into(),
                    threshold,
                    trial,
                    avg_traces: avg,
                    std_traces: std,
                    reached,
                    not_reached,
                })
                .collect(),
        };
        prop_assert_eq!(ThresholdStats::from_csv_str(&stats.to_csv_string()).unwrap(), stats);
    }

    #[test]
    fn trace_csv_round_trips(seed in any::<u64>(), n in 1usize..40) {
        let key = AesKey([7; 16]);
        let texts: Vec<Block> = (0..n).map(|i| Block(((seed as u128) << 8 | i as u128).to_le_bytes())).collect();
        let profile = power::builtin_profile("finfet").unwrap();
        let set = power::simulate_trace_set(&key, &texts, &profile, &NoiseConfig::relative(1.0), seed);
        let back = power::TraceSet::from_csv_str(&set.to_csv_string(), "finfet").unwrap();
        prop_assert_eq!(back.len(), set.len());
        for (a, b) in back.entries.iter().zip(&set.entries) {
            prop_assert_eq!(a.plaintext, b.plaintext);
            prop_assert_eq!(a.ciphertext, b.ciphertext);
            prop_assert!((a.peak_power - b.peak_power).abs() <= 1e-8 * b.peak_power);
        }
    }

    #[test]
    fn index_sets_are_distinct_and_in_range(
        trial in 0usize..3, step in 1usize..=100, set in 0usize..50, seed in any::<u64>(),
    ) {
        let mut config = ExperimentConfig::preset(Preset::Desk);
        config.master_seed = seed;
        let idx = index_set(&config, trial, step, set);
        prop_assert_eq!(idx.len(), config.set_size(step));
        prop_assert!(idx.iter().all(|&i| (i as usize) < config.text_count));
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), idx.len());
        prop_assert_eq!(index_set(&config, trial, step, set), idx);
    }
}
