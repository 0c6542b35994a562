//! Rabi oscillations of an inhomogeneously detuned NV ensemble.
//!
//! Cyclic-frequency convention: the resonant term completes a full spin
//! flip at t = 1/(2 Omega). Times are in ns, frequencies in MHz, so the
//! phase carries a factor 1e-3.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::lineshape::adaptive_simpson;

const MHZ_NS: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RabiParameters {
    /// On-resonance Rabi frequency, cyclic MHz.
    pub omega: f64,
    /// Gaussian spread of detunings, MHz.
    pub detuning_sigma: f64,
    /// Ascending pulse durations, ns.
    pub t_grid: Vec<f64>,
}

impl RabiParameters {
    pub fn validate(&self) -> Result<()> {
        ensure_finite(self.omega, "omega")?;
        ensure_finite(self.detuning_sigma, "detuning_sigma")?;
        if self.omega <= 0.0 {
            return Err(Error::OutOfRange {
                value: self.omega,
                reason: "omega must be positive".into(),
            });
        }
        if self.detuning_sigma < 0.0 {
            return Err(Error::OutOfRange {
                value: self.detuning_sigma,
                reason: "detuning_sigma must be non-negative".into(),
            });
        }
        if self.t_grid.is_empty() {
            return Err(Error::invalid("t_grid must be non-empty"));
        }
        for w in self.t_grid.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::invalid("t_grid must be strictly ascending"));
            }
        }
        Ok(())
    }
}

/// ms=0 population versus pulse duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RabiTrace {
    pub t_ns: Vec<f64>,
    pub signal: Vec<f64>,
}

/// Detuning spread implied by a pressure spread through the local D(P)
/// slope; keeps the Rabi and spectrum broadening models consistent.
pub fn detuning_sigma_from_pressure_spread(sigma_p: f64, dd_dp: f64) -> f64 {
    (sigma_p * dd_dp).abs()
}

/// Single-spin flip probability at detuning `delta` and duration `t`.
fn flip_probability(omega: f64, delta: f64, t_ns: f64) -> f64 {
    let nu2 = omega * omega + delta * delta;
    let amp = omega * omega / nu2;
    let phase = std::f64::consts::PI * nu2.sqrt() * t_ns * MHZ_NS;
    amp * phase.sin().powi(2)
}

/// Ensemble-averaged Rabi signal
/// `S(t) = 1 - < flip_probability >_delta` with delta ~ N(0, sigma),
/// evaluated by adaptive quadrature.
pub fn rabi_signal(p: &RabiParameters) -> Result<RabiTrace> {
    p.validate()?;
    let signal = p
        .t_grid
        .iter()
        .map(|&t| rabi_signal_at(p.omega, p.detuning_sigma, t))
        .collect();
    Ok(RabiTrace { t_ns: p.t_grid.clone(), signal })
}

pub fn rabi_signal_at(omega: f64, detuning_sigma: f64, t_ns: f64) -> f64 {
    if t_ns == 0.0 {
        return 1.0;
    }
    if detuning_sigma == 0.0 {
        return 1.0 - flip_probability(omega, 0.0, t_ns);
    }
    let s = detuning_sigma;
    let norm = 1.0 / (s * (2.0 * std::f64::consts::PI).sqrt());
    let f = |d: f64| norm * (-0.5 * (d / s).powi(2)).exp() * flip_probability(omega, d, t_ns);
    let avg = adaptive_simpson(&f, -8.0 * s, 8.0 * s, 1e-11);
    1.0 - avg
}

/// 1/e time of the oscillation envelope, ns.
///
/// Extrema of |S(t) - S_inf| are fitted to a log-linear decay. An
/// undamped trace (flat envelope) returns `f64::INFINITY`.
pub fn envelope_decay_time(trace: &RabiTrace) -> Result<f64> {
    let n = trace.t_ns.len();
    if n < 7 {
        return Err(Error::invalid("trace too short for envelope extraction"));
    }
    // asymptote from the tail
    let tail = n / 4;
    let s_inf = trace.signal[n - tail..].iter().sum::<f64>() / tail as f64;

    let mut extrema: Vec<(f64, f64)> = Vec::new();
    for i in 1..n - 1 {
        let (a, b, c) = (trace.signal[i - 1], trace.signal[i], trace.signal[i + 1]);
        if (b > a && b >= c) || (b < a && b <= c) {
            let amp = (b - s_inf).abs();
            if amp > 1e-12 {
                extrema.push((trace.t_ns[i], amp));
            }
        }
    }
    if extrema.len() < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 envelope extrema, found {}",
            extrema.len()
        )));
    }
    // linear regression of ln(amp) on t
    let m = extrema.len() as f64;
    let sx: f64 = extrema.iter().map(|(t, _)| t).sum();
    let sy: f64 = extrema.iter().map(|(_, a)| a.ln()).sum();
    let sxx: f64 = extrema.iter().map(|(t, _)| t * t).sum();
    let sxy: f64 = extrema.iter().map(|(t, a)| t * a.ln()).sum();
    let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    let t_span = extrema.last().unwrap().0 - extrema[0].0;
    if slope >= -1e-6 / t_span.max(1.0) {
        return Ok(f64::INFINITY);
    }
    Ok(-1.0 / slope)
}

/// Power-law fit of Rabi frequency versus microwave power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    /// Log-log slope; 0.5 for the square-root dependence.
    pub exponent: f64,
    /// Prefactor k in omega = k * power^exponent.
    pub coefficient: f64,
}

/// Log-log linear regression of (power, omega) points.
pub fn rabi_power_law(points: &[(f64, f64)]) -> Result<PowerLaw> {
    if points.len() < 2 {
        return Err(Error::invalid("need at least 2 (power, omega) points"));
    }
    for &(p, w) in points {
        ensure_finite(p, "power")?;
        ensure_finite(w, "omega")?;
        if p <= 0.0 || w <= 0.0 {
            return Err(Error::OutOfRange {
                value: p.min(w),
                reason: "powers and Rabi frequencies must be positive".into(),
            });
        }
    }
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|(p, _)| p.ln()).sum();
    let sy: f64 = points.iter().map(|(_, w)| w.ln()).sum();
    let sxx: f64 = points.iter().map(|(p, _)| p.ln().powi(2)).sum();
    let sxy: f64 = points.iter().map(|(p, w)| p.ln() * w.ln()).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return Err(Error::invalid("powers are all identical; slope undefined"));
    }
    let exponent = (n * sxy - sx * sy) / denom;
    let intercept = (sy - exponent * sx) / n;
    Ok(PowerLaw { exponent, coefficient: intercept.exp() })
}
