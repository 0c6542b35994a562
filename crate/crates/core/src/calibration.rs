//! Empirical pressure calibration: the second-order D(P) polynomial,
//! its inversion for pressure readout, and extraction of the zero-field
//! splitting D and transverse splitting E from a measured trace.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::optimize::{levenberg_marquardt, LmOptions};
use crate::spectrum::{dip_indices, BroadeningModel, SpectrumTrace};

/// D = d0 + a1 P + a2 P^2, valid up to `valid_max_p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPolynomial {
    /// MHz.
    pub d0: f64,
    /// MHz/GPa.
    pub a1_poly: f64,
    /// MHz/GPa^2.
    pub a2_poly: f64,
    /// GPa.
    pub valid_max_p: f64,
}

impl Default for CalibrationPolynomial {
    fn default() -> Self {
        CalibrationPolynomial {
            d0: 2880.0,
            a1_poly: 14.8,
            a2_poly: -0.027,
            valid_max_p: 146.2,
        }
    }
}

impl CalibrationPolynomial {
    pub fn validate(&self) -> Result<()> {
        ensure_finite(self.d0, "d0")?;
        ensure_finite(self.a1_poly, "a1_poly")?;
        ensure_finite(self.a2_poly, "a2_poly")?;
        ensure_finite(self.valid_max_p, "valid_max_p")?;
        if self.a2_poly < 0.0 && self.vertex_pressure() <= self.valid_max_p {
            return Err(Error::invalid(
                "polynomial vertex lies inside the valid domain; D(P) would not be monotone",
            ));
        }
        Ok(())
    }

    /// Pressure at which the polynomial peaks, -a1/(2 a2).
    pub fn vertex_pressure(&self) -> f64 {
        -self.a1_poly / (2.0 * self.a2_poly)
    }

    /// Local slope dD/dP at pressure `p`.
    pub fn slope(&self, p: f64) -> f64 {
        self.a1_poly + 2.0 * self.a2_poly * p
    }
}

/// One-sigma coefficient uncertainties for error propagation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationUncertainty {
    /// MHz.
    pub d0: f64,
    /// MHz/GPa.
    pub a1_poly: f64,
    /// MHz/GPa^2.
    pub a2_poly: f64,
}

impl Default for CalibrationUncertainty {
    fn default() -> Self {
        CalibrationUncertainty { d0: 30.0, a1_poly: 1.0, a2_poly: 0.007 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DReading {
    pub d_mhz: f64,
    /// Set when the requested pressure exceeds the validated domain.
    pub beyond_valid_range: bool,
}

/// Forward calibration polynomial.
pub fn d_from_pressure(p: f64, cal: &CalibrationPolynomial) -> Result<DReading> {
    ensure_finite(p, "p")?;
    if p < 0.0 {
        return Err(Error::OutOfRange { value: p, reason: "pressure must be non-negative".into() });
    }
    Ok(DReading {
        d_mhz: cal.d0 + cal.a1_poly * p + cal.a2_poly * p * p,
        beyond_valid_range: p > cal.valid_max_p,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PressureReading {
    pub p_gpa: f64,
    pub p_uncertainty_gpa: f64,
    pub beyond_valid_range: bool,
}

/// Inverts the calibration polynomial on its monotone branch
/// (p <= vertex) with first-order propagation of the coefficient
/// uncertainties.
pub fn pressure_from_d(
    d: f64,
    cal: &CalibrationPolynomial,
    unc: &CalibrationUncertainty,
) -> Result<PressureReading> {
    ensure_finite(d, "d")?;
    if d < cal.d0 {
        return Err(Error::OutOfRange {
            value: d,
            reason: format!("D below the zero-pressure value D0 = {} MHz", cal.d0),
        });
    }
    let q = d - cal.d0;
    let p = if cal.a2_poly == 0.0 {
        q / cal.a1_poly
    } else {
        let disc = cal.a1_poly * cal.a1_poly + 4.0 * cal.a2_poly * q;
        if disc < 0.0 {
            let vertex = cal.vertex_pressure();
            let d_max = cal.d0 + cal.a1_poly * vertex + cal.a2_poly * vertex * vertex;
            return Err(Error::OutOfRange {
                value: d,
                reason: format!(
                    "D exceeds the polynomial maximum {d_max:.3} MHz at the vertex \
                     ({vertex:.3} GPa); no real solution"
                ),
            });
        }
        // numerically stable root on the monotone branch
        2.0 * q / (cal.a1_poly + disc.sqrt())
    };
    let slope = cal.slope(p);
    let p_uncertainty = ((unc.d0 / slope).powi(2)
        + (p * unc.a1_poly / slope).powi(2)
        + (p * p * unc.a2_poly / slope).powi(2))
    .sqrt();
    Ok(PressureReading {
        p_gpa: p,
        p_uncertainty_gpa: p_uncertainty,
        beyond_valid_range: p > cal.valid_max_p,
    })
}

/// Broadening model whose D(P) slope is taken from the calibration
/// polynomial at the given hydrostatic pressure.
pub fn broadening_from_calibration(
    sigma_p: f64,
    cal: &CalibrationPolynomial,
    p_hydrostatic: f64,
) -> BroadeningModel {
    BroadeningModel { sigma_p, dd_dp: cal.slope(p_hydrostatic.max(0.0)) }
}

/// Result of fitting one or two Voigt-like dips to a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DipExtraction {
    /// Zero-field splitting estimate: dip-pair midpoint, MHz.
    pub d_mhz: f64,
    /// Half the dip separation (0 for a single dip), MHz.
    pub e_mhz: f64,
    /// Fitted Lorentzian half widths, one per dip.
    pub widths_mhz: Vec<f64>,
    /// Fitted dip depths.
    pub contrast: Vec<f64>,
    pub baseline: f64,
    /// Residual sum of squares of the accepted model.
    pub rss: f64,
    /// true when the two-dip model was selected.
    pub two_dips: bool,
    pub converged: bool,
}

fn lorentz_model(grid: &[f64], params: &[f64], dips: usize) -> DVector<f64> {
    // params: [baseline, width, (depth, center) x dips]
    let baseline = params[0];
    let gamma = params[1].abs().max(1e-6);
    DVector::from_iterator(
        grid.len(),
        grid.iter().map(|&f| {
            let mut c = baseline;
            for d in 0..dips {
                let depth = params[2 + 2 * d].abs();
                let center = params[3 + 2 * d];
                let x = f - center;
                c -= depth * gamma * gamma / (x * x + gamma * gamma);
            }
            c
        }),
    )
}

fn fit_dips(trace: &SpectrumTrace, init: Vec<f64>, dips: usize) -> Result<(Vec<f64>, f64, bool)> {
    let grid = trace.frequencies.clone();
    let data = DVector::from_column_slice(&trace.contrast);
    let f = move |x: &DVector<f64>| lorentz_model(&grid, x.as_slice(), dips) - &data;
    let span = trace.frequencies[trace.len() - 1] - trace.frequencies[0];
    let mut scales = vec![0.1, 0.1 * span];
    for _ in 0..dips {
        scales.push(0.05);
        scales.push(span);
    }
    let report = levenberg_marquardt(
        &f,
        DVector::from_vec(init),
        &scales,
        &LmOptions { max_iterations: 300, ..Default::default() },
    )?;
    let rss = report.residual_norm * report.residual_norm;
    Ok((report.x.as_slice().to_vec(), rss, report.converged()))
}

/// Extracts D and E from a trace by least-squares dip fitting.
///
/// Model order rule: the two-dip model is accepted when it lowers the
/// residual sum of squares by at least 10% and its centers are more
/// than a quarter linewidth apart; ties favor the single dip.
pub fn extract_d_and_e(trace: &SpectrumTrace) -> Result<DipExtraction> {
    let n = trace.len();
    if n < 8 {
        return Err(Error::invalid("trace too short for dip extraction"));
    }
    let baseline0 = trace
        .contrast
        .iter()
        .cloned()
        .fold(f64::MIN, f64::max);
    let min_val = trace.contrast.iter().cloned().fold(f64::MAX, f64::min);
    let depth0 = baseline0 - min_val;
    if depth0 < 1e-4 {
        return Err(Error::NoDip);
    }

    // candidate dips by prominence, floor at a quarter of the deepest
    let mut idx = dip_indices(&trace.contrast, 0.25 * depth0);
    if idx.is_empty() {
        return Err(Error::NoDip);
    }
    idx.sort_by(|&a, &b| trace.contrast[a].partial_cmp(&trace.contrast[b]).unwrap());
    idx.truncate(2);
    idx.sort();

    // crude width seed from the deepest dip's half-depth span
    let deepest = *idx
        .iter()
        .min_by(|&&a, &&b| trace.contrast[a].partial_cmp(&trace.contrast[b]).unwrap())
        .unwrap();
    let half = baseline0 - 0.5 * (baseline0 - trace.contrast[deepest]);
    let mut lo = deepest;
    while lo > 0 && trace.contrast[lo] < half {
        lo -= 1;
    }
    let mut hi = deepest;
    while hi + 1 < n && trace.contrast[hi] < half {
        hi += 1;
    }
    let width0 = (0.5 * (trace.frequencies[hi] - trace.frequencies[lo])).max(
        trace.frequencies[1] - trace.frequencies[0],
    );

    // single-dip fit
    let c0 = trace.frequencies[deepest];
    let (p1, rss1, conv1) = fit_dips(trace, vec![baseline0, width0, depth0, c0], 1)?;

    // two-dip fit seeded from the two candidates, or a split single dip
    let (ca, cb, da, db) = if idx.len() == 2 {
        (
            trace.frequencies[idx[0]],
            trace.frequencies[idx[1]],
            baseline0 - trace.contrast[idx[0]],
            baseline0 - trace.contrast[idx[1]],
        )
    } else {
        (c0 - width0, c0 + width0, 0.5 * depth0, 0.5 * depth0)
    };
    let (p2, rss2, conv2) = fit_dips(
        trace,
        vec![p1[0], p1[1].abs(), da.max(1e-3), ca, db.max(1e-3), cb],
        2,
    )?;

    let width2 = p2[1].abs();
    let separation = (p2[5] - p2[3]).abs();
    let take_two = rss2 <= 0.9 * rss1 && separation > 0.25 * width2;

    if take_two {
        let (c_lo, d_lo, c_hi, d_hi) = if p2[3] <= p2[5] {
            (p2[3], p2[2].abs(), p2[5], p2[4].abs())
        } else {
            (p2[5], p2[4].abs(), p2[3], p2[2].abs())
        };
        Ok(DipExtraction {
            d_mhz: 0.5 * (c_lo + c_hi),
            e_mhz: 0.5 * (c_hi - c_lo),
            widths_mhz: vec![width2, width2],
            contrast: vec![d_lo, d_hi],
            baseline: p2[0],
            rss: rss2,
            two_dips: true,
            converged: conv2,
        })
    } else {
        Ok(DipExtraction {
            d_mhz: p1[3],
            e_mhz: 0.0,
            widths_mhz: vec![p1[1].abs()],
            contrast: vec![p1[2].abs()],
            baseline: p1[0],
            rss: rss1,
            two_dips: false,
            converged: conv1,
        })
    }
}
