//! Negative-capacitance gate stack arithmetic.
//!
//! A ferroelectric layer in series with the transistor's internal gate
//! capacitance behaves as a negative capacitance `c_ferro < 0`. As long as
//! `|c_ferro| > c_internal` the stack is hysteresis-free, the series
//! combination exceeds `c_internal`, and the internal node sees a voltage
//! gain above one.
//!
//! Everything here is in SI units (farads, volts).

use std::path::Path;

use crate::error::{Error, Result};

/// Ferroelectric and internal capacitance of one gate stack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacitancePair {
    c_ferro: f64,
    c_internal: f64,
}

impl CapacitancePair {
    /// Requires `c_ferro < 0 < c_internal`. The hysteresis-free condition is
    /// checked by the operations, not here, so that violating stacks can still
    /// be described and reported.
    pub fn new(c_ferro: f64, c_internal: f64) -> Result<Self> {
        if !c_ferro.is_finite() || !c_internal.is_finite() {
            return Err(Error::InvalidCapacitance("values must be finite".into()));
        }
        if c_internal <= 0.0 {
            return Err(Error::InvalidCapacitance(format!(
                "c_internal must be positive, got {c_internal:e}"
            )));
        }
        if c_ferro >= 0.0 {
            return Err(Error::InvalidCapacitance(format!(
                "c_ferro must be negative, got {c_ferro:e}"
            )));
        }
        Ok(Self {
            c_ferro,
            c_internal,
        })
    }

    pub fn c_ferro(&self) -> f64 {
        self.c_ferro
    }

    pub fn c_internal(&self) -> f64 {
        self.c_internal
    }

    pub fn is_hysteresis_free(&self) -> bool {
        self.c_ferro.abs() > self.c_internal
    }

    fn check_hysteresis_free(&self) -> Result<()> {
        if self.is_hysteresis_free() {
            Ok(())
        } else {
            Err(Error::HysteresisViolation {
                c_ferro_abs: self.c_ferro.abs(),
                c_internal: self.c_internal,
            })
        }
    }
}

/// Series combination `c_ferro * c_internal / (c_ferro + c_internal)`.
///
/// For a hysteresis-free stack the result is positive and strictly larger
/// than `c_internal`.
pub fn series_capacitance(pair: &CapacitancePair) -> Result<f64> {
    pair.check_hysteresis_free()?;
    Ok(pair.c_ferro * pair.c_internal / (pair.c_ferro + pair.c_internal))
}

/// Internal voltage amplification `|c_ferro| / (|c_ferro| - c_internal)`.
pub fn voltage_gain(pair: &CapacitancePair) -> Result<f64> {
    pair.check_hysteresis_free()?;
    let cf = pair.c_ferro.abs();
    Ok(cf / (cf - pair.c_internal))
}

/// Tabulated internal-node voltage against gate voltage.
#[derive(Debug, Clone, PartialEq)]
pub struct GainCurve {
    samples: Vec<(f64, f64)>,
}

impl GainCurve {
    /// Samples are `(v_gate, v_internal)`, at least two, strictly increasing
    /// in `v_gate`, starting at `v_gate = 0`.
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::TooFewSamples {
                needed: 2,
                got: samples.len(),
            });
        }
        if samples
            .iter()
            .any(|(g, v)| !g.is_finite() || !v.is_finite())
        {
            return Err(Error::InvalidCurve("non-finite sample".into()));
        }
        if samples[0].0 != 0.0 {
            return Err(Error::InvalidCurve(format!(
                "first v_gate must be 0, got {}",
                samples[0].0
            )));
        }
        if let Some(w) = samples.windows(2).find(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidCurve(format!(
                "v_gate not strictly increasing at {} -> {}",
                w[0].0, w[1].0
            )));
        }
        Ok(Self { samples })
    }

    /// Samples `f` on `n` uniformly spaced gate voltages over `[0, v_max]`.
    pub fn from_fn(v_max: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: n });
        }
        let step = v_max / (n - 1) as f64;
        Self::new(
            (0..n)
                .map(|i| {
                    let g = if i == n - 1 { v_max } else { i as f64 * step };
                    (g, f(g))
                })
                .collect(),
        )
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn v_gate_max(&self) -> f64 {
        self.samples[self.samples.len() - 1].0
    }

    /// Reads a two-column CSV `v_gate,v_internal` with a one-line header.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        lines
            .next()
            .ok_or_else(|| Error::Parse("empty gain curve file".into()))?;
        let mut samples = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split(',').map(str::trim);
            let (Some(g), Some(v), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::Parse(format!(
                    "line {}: expected two columns",
                    lineno + 2
                )));
            };
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: `{s}`: {e}", lineno + 2)))
            };
            samples.push((parse(g)?, parse(v)?));
        }
        Self::new(samples)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("v_gate,v_internal\n");
        for (g, v) in &self.samples {
            out.push_str(&format!("{g},{v}\n"));
        }
        out
    }
}

/// Pointwise `dV_int/dV_G` on the curve's own grid.
///
/// Interior points use the central difference over the two neighbours,
/// endpoints the one-sided difference.
pub fn differential_gain(curve: &GainCurve) -> Vec<(f64, f64)> {
    let s = &curve.samples;
    let n = s.len();
    (0..n)
        .map(|i| {
            let (lo, hi) = match i {
                0 => (0, 1),
                i if i == n - 1 => (n - 2, n - 1),
                i => (i - 1, i + 1),
            };
            (s[i].0, (s[hi].1 - s[lo].1) / (s[hi].0 - s[lo].0))
        })
        .collect()
}

/// Average gain `(1 / V_G) * integral of A_V over [0, V_G]`, with `V_G` the
/// last gate voltage of the curve.
///
/// The pointwise gains of [`differential_gain`] are integrated with the
/// trapezoid rule. With the central-difference stencil this telescopes, so on
/// exact data the result is the endpoint slope `(v_int(V_G) - v_int(0)) / V_G`.
pub fn average_gain(curve: &GainCurve) -> Result<f64> {
    let v_g = curve.v_gate_max();
    if v_g == 0.0 {
        return Err(Error::ZeroSpan);
    }
    Ok(trapezoid(&differential_gain(curve)) / v_g)
}

/// Running average gain at every grid point after the first.
pub fn average_gain_profile(curve: &GainCurve) -> Vec<(f64, f64)> {
    let gains = differential_gain(curve);
    let mut acc = 0.0;
    gains
        .windows(2)
        .map(|w| {
            acc += 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1);
            (w[1].0, acc / w[1].0)
        })
        .collect()
}

fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(cf: f64, ci: f64) -> CapacitancePair {
        CapacitancePair::new(cf, ci).unwrap()
    }

    #[test]
    fn series_capacitance_examples() {
        assert_eq!(series_capacitance(&pair(-2.0, 1.0)).unwrap(), 2.0);
        assert_eq!(series_capacitance(&pair(-3.0, 1.0)).unwrap(), 1.5);
        assert!(matches!(
            series_capacitance(&pair(-1.0, 1.0)),
            Err(Error::HysteresisViolation { .. })
        ));
    }

    #[test]
    fn voltage_gain_examples() {
        assert_eq!(voltage_gain(&pair(-2.0, 1.0)).unwrap(), 2.0);
        assert!((voltage_gain(&pair(-4.0, 1.0)).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            voltage_gain(&pair(-1.0, 1.0)),
            Err(Error::HysteresisViolation { .. })
        ));
        assert!(voltage_gain(&pair(-0.5, 1.0)).is_err());
    }

    #[test]
    fn pair_sign_checks() {
        assert!(CapacitancePair::new(1.0, 1.0).is_err());
        assert!(CapacitancePair::new(-1.0, 0.0).is_err());
        assert!(CapacitancePair::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn differential_gain_linear_and_identity() {
        let c = GainCurve::new(vec![(0.0, 0.0), (0.35, 0.7), (0.7, 1.4)]).unwrap();
        for (_, a) in differential_gain(&c) {
            assert!((a - 2.0).abs() < 1e-15);
        }
        let c = GainCurve::from_fn(0.7, 15, |v| v).unwrap();
        for (_, a) in differential_gain(&c) {
            assert!((a - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn differential_gain_quadratic_interior_is_exact() {
        let c = GainCurve::from_fn(1.0, 11, |v| v * v).unwrap();
        let d = differential_gain(&c);
        for (g, a) in &d[1..d.len() - 1] {
            assert!((a - 2.0 * g).abs() < 1e-12, "{g}: {a}");
        }
    }

    #[test]
    fn average_gain_examples() {
        let c = GainCurve::from_fn(0.7, 8, |v| 2.0 * v).unwrap();
        assert!((average_gain(&c).unwrap() - 2.0).abs() < 1e-12);
        let c = GainCurve::from_fn(0.7, 8, |v| v).unwrap();
        assert!((average_gain(&c).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn average_gain_profile_ends_at_average_gain() {
        let c = GainCurve::from_fn(0.7, 30, |v| v + 0.3 * v * v).unwrap();
        let prof = average_gain_profile(&c);
        assert_eq!(prof.len(), 29);
        let last = prof.last().unwrap().1;
        assert!((last - average_gain(&c).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn curve_validation() {
        assert!(matches!(
            GainCurve::new(vec![(0.0, 0.0)]),
            Err(Error::TooFewSamples { got: 1, .. })
        ));
        assert!(GainCurve::new(vec![(0.1, 0.0), (0.2, 0.1)]).is_err());
        assert!(GainCurve::new(vec![(0.0, 0.0), (0.2, 0.1), (0.2, 0.3)]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let c = GainCurve::from_csv_str("v_gate,v_internal\n0,0\n0.35,0.7\n0.7,1.4\n").unwrap();
        assert_eq!(c.samples().len(), 3);
        assert_eq!(GainCurve::from_csv_str(&c.to_csv_string()).unwrap(), c);
        assert!(GainCurve::from_csv_str("h\n0,0,1\n").is_err());
        assert!(GainCurve::from_csv_str("h\n0,x\n1,1\n").is_err());
    }
}
