//! Forward synthesis of ensemble ODMR spectra.
//!
//! Each alive NV orientation contributes two Voigt dips; the Lorentzian
//! half width is intrinsic, the Gaussian width models the inhomogeneous
//! pressure distribution through the local D(P) slope.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::lineshape::voigt_unit_peak;
use crate::spin::{build_hamiltonian, transition_frequencies, PhysicalConstants, SpinTerms};
use crate::stress::{
    rotate_to_nv_frame, spin_stress_terms, NVOrientation, OrientationLabel, SpinStressConstants,
    StressTensor,
};

/// Dip depth, width and baseline of the synthesized contrast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineShapeParams {
    /// Total on-resonance dip depth contributed by one orientation
    /// group at full overlap, fraction of the baseline.
    pub contrast_per_group: f64,
    /// Lorentzian half width at half maximum, MHz.
    pub lorentz_width: f64,
    /// Off-resonance contrast level, normalized near 1.
    pub baseline: f64,
}

impl Default for LineShapeParams {
    fn default() -> Self {
        LineShapeParams {
            contrast_per_group: 0.04,
            lorentz_width: 5.0,
            baseline: 1.0,
        }
    }
}

impl LineShapeParams {
    pub fn validate(&self) -> Result<()> {
        ensure_finite(self.contrast_per_group, "contrast_per_group")?;
        ensure_finite(self.lorentz_width, "lorentz_width")?;
        ensure_finite(self.baseline, "baseline")?;
        if !(0.0..=1.0).contains(&self.contrast_per_group) {
            return Err(Error::OutOfRange {
                value: self.contrast_per_group,
                reason: "contrast_per_group must lie in [0, 1]".into(),
            });
        }
        if self.lorentz_width <= 0.0 {
            return Err(Error::OutOfRange {
                value: self.lorentz_width,
                reason: "lorentz_width must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Gaussian broadening from the pressure spread inside one diamond.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BroadeningModel {
    /// Standard deviation of the local pressure, GPa.
    pub sigma_p: f64,
    /// Local slope of D versus P, MHz/GPa.
    pub dd_dp: f64,
}

impl BroadeningModel {
    pub fn none() -> Self {
        BroadeningModel { sigma_p: 0.0, dd_dp: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite(self.sigma_p, "sigma_p")?;
        ensure_finite(self.dd_dp, "dd_dp")?;
        if self.sigma_p < 0.0 {
            return Err(Error::OutOfRange {
                value: self.sigma_p,
                reason: "sigma_p must be non-negative".into(),
            });
        }
        Ok(())
    }

    /// Gaussian standard deviation in MHz applied to the axial term.
    pub fn gauss_width(&self) -> f64 {
        (self.dd_dp * self.sigma_p).abs()
    }
}

/// Sampled ODMR contrast versus microwave frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumTrace {
    pub frequencies: Vec<f64>,
    pub contrast: Vec<f64>,
}

impl SpectrumTrace {
    pub fn new(frequencies: Vec<f64>, contrast: Vec<f64>) -> Result<Self> {
        if frequencies.len() != contrast.len() {
            return Err(Error::invalid(format!(
                "frequency and contrast lengths differ ({} vs {})",
                frequencies.len(),
                contrast.len()
            )));
        }
        if frequencies.is_empty() {
            return Err(Error::invalid("empty trace"));
        }
        for w in frequencies.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::invalid("frequency grid must be strictly ascending"));
            }
        }
        for (i, &c) in contrast.iter().enumerate() {
            if !c.is_finite() {
                return Err(Error::Parse { line: i + 1, reason: "non-finite contrast".into() });
            }
            if !(0.0..=1.05).contains(&c) {
                return Err(Error::OutOfRange {
                    value: c,
                    reason: format!("contrast out of [0, 1.05] at sample {i}"),
                });
            }
        }
        for (i, &f) in frequencies.iter().enumerate() {
            if !f.is_finite() {
                return Err(Error::Parse { line: i + 1, reason: "non-finite frequency".into() });
            }
        }
        Ok(SpectrumTrace { frequencies, contrast })
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }
}

/// Everything needed to synthesize one ensemble spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleScene {
    pub sigma: StressTensor,
    /// Magnetic field vector in the crystal frame, Gauss.
    pub b_crystal: [f64; 3],
    pub alive_groups: Vec<OrientationLabel>,
    pub line: LineShapeParams,
    pub broadening: BroadeningModel,
}

impl EnsembleScene {
    pub fn validate(&self) -> Result<()> {
        self.sigma.validate()?;
        ensure_finite(self.b_crystal[0], "b_crystal[0]")?;
        ensure_finite(self.b_crystal[1], "b_crystal[1]")?;
        ensure_finite(self.b_crystal[2], "b_crystal[2]")?;
        self.line.validate()?;
        self.broadening.validate()?;
        if self.alive_groups.is_empty() {
            return Err(Error::invalid("alive_groups must be non-empty"));
        }
        let total = self.line.contrast_per_group * self.alive_groups.len() as f64;
        if total > 1.0 {
            return Err(Error::OutOfRange {
                value: total,
                reason: "total dip depth exceeds 1".into(),
            });
        }
        Ok(())
    }

    pub fn b_vector(&self) -> Vector3<f64> {
        Vector3::new(self.b_crystal[0], self.b_crystal[1], self.b_crystal[2])
    }

    /// Alive groups sorted and deduplicated, in label order.
    pub fn sorted_groups(&self) -> Vec<OrientationLabel> {
        let mut g = self.alive_groups.clone();
        g.sort();
        g.dedup();
        g
    }
}

/// One orientation's pair of transition frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonanceLine {
    pub orientation: OrientationLabel,
    pub f_minus: f64,
    pub f_plus: f64,
    pub ambiguous_basis: bool,
}

/// Transition frequencies for every alive orientation, sorted by label.
pub fn resonance_lines(
    scene: &EnsembleScene,
    constants: &PhysicalConstants,
    coupling: &SpinStressConstants,
) -> Result<Vec<ResonanceLine>> {
    scene.validate()?;
    let mut groups = scene.sorted_groups();
    groups.sort();
    compute_lines(&scene.sigma, scene.b_vector(), &groups, constants, coupling)
}

/// Line computation without scene-level bounds checks; the fitters call
/// this directly with trial parameters.
pub(crate) fn compute_lines(
    sigma: &StressTensor,
    b: Vector3<f64>,
    groups: &[OrientationLabel],
    constants: &PhysicalConstants,
    coupling: &SpinStressConstants,
) -> Result<Vec<ResonanceLine>> {
    let mut out = Vec::new();
    for &label in groups {
        let orient = NVOrientation::new(label);
        let terms = spin_stress_terms(sigma, &orient, coupling)?;
        let spin_terms = SpinTerms::new(constants.d_ambient + terms.mz, terms.mx, terms.my)?;
        let b_nv = rotate_to_nv_frame(b, &orient);
        let h = build_hamiltonian(&spin_terms, b_nv, constants)?;
        let t = transition_frequencies(&h)?;
        out.push(ResonanceLine {
            orientation: label,
            f_minus: t.f_minus,
            f_plus: t.f_plus,
            ambiguous_basis: t.ambiguous_basis,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SpectrumSynthesis {
    pub trace: SpectrumTrace,
    /// Set when no resonance line falls inside the frequency grid; the
    /// trace is then a flat baseline.
    pub coverage_warning: bool,
    pub lines: Vec<ResonanceLine>,
}

/// Raw model evaluation on a grid; used directly by the fitters, which
/// must tolerate trial parameters that a validated trace would reject.
pub(crate) fn model_contrast(
    grid: &[f64],
    lines: &[ResonanceLine],
    line_params: &LineShapeParams,
    gauss_width: f64,
) -> Vec<f64> {
    let depth = line_params.contrast_per_group / 2.0;
    let gamma = line_params.lorentz_width.abs().max(1e-6);
    let sg = gauss_width.abs();
    let centers: Vec<f64> = lines
        .iter()
        .flat_map(|l| [l.f_minus, l.f_plus])
        .collect();
    grid.iter()
        .map(|&f| {
            let mut c = line_params.baseline;
            for &f0 in &centers {
                c -= depth * voigt_unit_peak(f - f0, gamma, sg);
            }
            c
        })
        .collect()
}

/// Synthesizes the ensemble ODMR spectrum on the given grid.
pub fn synthesize_spectrum(
    scene: &EnsembleScene,
    grid: &[f64],
    constants: &PhysicalConstants,
    coupling: &SpinStressConstants,
) -> Result<SpectrumSynthesis> {
    if grid.len() < 2 {
        return Err(Error::invalid("grid needs at least two points"));
    }
    let lines = resonance_lines(scene, constants, coupling)?;
    let lo = grid[0];
    let hi = grid[grid.len() - 1];
    let coverage_warning = !lines
        .iter()
        .flat_map(|l| [l.f_minus, l.f_plus])
        .any(|f| (lo..=hi).contains(&f));
    let contrast = model_contrast(grid, &lines, &scene.line, scene.broadening.gauss_width());
    let trace = SpectrumTrace::new(grid.to_vec(), contrast)?;
    Ok(SpectrumSynthesis { trace, coverage_warning, lines })
}

/// Adds Gaussian noise with the given standard deviation, clamped to
/// the valid contrast range.
pub fn add_gaussian_noise<R: Rng>(trace: &SpectrumTrace, noise_sigma: f64, rng: &mut R) -> SpectrumTrace {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0, noise_sigma.max(0.0)).unwrap();
    let contrast = trace
        .contrast
        .iter()
        .map(|&c| (c + normal.sample(rng)).clamp(0.0, 1.05))
        .collect();
    SpectrumTrace { frequencies: trace.frequencies.clone(), contrast }
}

/// Counts local minima whose prominence (in contrast units, baseline
/// normalized to 1) exceeds `prominence`.
pub fn count_resolved_dips(trace: &SpectrumTrace, prominence: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&prominence) || prominence <= 0.0 {
        return Err(Error::OutOfRange {
            value: prominence,
            reason: "prominence must lie in (0, 1)".into(),
        });
    }
    Ok(dip_indices(&trace.contrast, prominence).len())
}

/// Indices of resolved local minima, deepest barrier rule.
pub(crate) fn dip_indices(v: &[f64], prominence: f64) -> Vec<usize> {
    let n = v.len();
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        // descend into a plateau-aware local minimum
        if v[i] < v[i - 1] {
            let start = i;
            while i + 1 < n && v[i + 1] == v[i] {
                i += 1;
            }
            if i + 1 < n && v[i + 1] > v[i] {
                let idx = start;
                let val = v[idx];
                // barrier heights to the nearest lower sample each side
                let mut left = f64::NEG_INFINITY;
                let mut j = idx;
                loop {
                    if j == 0 {
                        break;
                    }
                    j -= 1;
                    if v[j] < val {
                        break;
                    }
                    left = left.max(v[j]);
                }
                let mut right = f64::NEG_INFINITY;
                let mut j = i;
                loop {
                    if j + 1 >= n {
                        break;
                    }
                    j += 1;
                    if v[j] < val {
                        break;
                    }
                    right = right.max(v[j]);
                }
                if left.min(right) - val > prominence {
                    out.push(idx);
                }
            }
        }
        i += 1;
    }
    out
}

/// Uniform frequency grid helper.
pub fn linear_grid(start: f64, stop: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 || !(stop > start) {
        return Err(Error::invalid("grid needs stop > start and at least 2 points"));
    }
    let step = (stop - start) / (points - 1) as f64;
    Ok((0..points).map(|i| start + step * i as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lineshape::{voigt_by_quadrature, voigt_fwhm};
    use approx::assert_abs_diff_eq;

    fn defaults() -> (PhysicalConstants, SpinStressConstants) {
        (PhysicalConstants::default(), SpinStressConstants::default())
    }

    fn scene(sigma: StressTensor, b: [f64; 3], groups: &[OrientationLabel]) -> EnsembleScene {
        EnsembleScene {
            sigma,
            b_crystal: b,
            alive_groups: groups.to_vec(),
            line: LineShapeParams::default(),
            broadening: BroadeningModel::none(),
        }
    }

    #[test]
    fn zero_stress_zero_field_lines_coincide() {
        let (pc, k) = defaults();
        let s = scene(StressTensor::zero(), [0.0; 3], &OrientationLabel::ALL);
        let lines = resonance_lines(&s, &pc, &k).unwrap();
        assert_eq!(lines.len(), 4);
        for l in &lines {
            assert_abs_diff_eq!(l.f_minus, 2870.0, epsilon = 1e-9);
            assert_abs_diff_eq!(l.f_plus, 2870.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn hydrostatic_scene_matches_arithmetic_oracle() {
        let (pc, k) = defaults();
        let s = scene(StressTensor::hydrostatic(66.3), [0.0; 3], &OrientationLabel::ALL);
        let lines = resonance_lines(&s, &pc, &k).unwrap();
        let expected = 2870.0 + 3.0 * k.a1 * 66.3; // 14.58 MHz/GPa slope
        assert_abs_diff_eq!(expected, 3836.654, epsilon = 1e-3);
        for l in &lines {
            assert_abs_diff_eq!(l.f_minus, expected, epsilon = 1e-8);
            assert_abs_diff_eq!(l.f_plus, expected, epsilon = 1e-8);
        }
    }

    #[test]
    fn zero_field_lines_match_analytic_d_plus_minus_e() {
        let (pc, k) = defaults();
        let sigma = crate::stress::reference_stress_tensor();
        let groups = [OrientationLabel::N111, OrientationLabel::Nm11m1];
        let s = scene(sigma, [0.0; 3], &groups);
        let lines = resonance_lines(&s, &pc, &k).unwrap();
        for l in &lines {
            let orient = NVOrientation::new(l.orientation);
            let t = spin_stress_terms(&sigma, &orient, &k).unwrap();
            let d = pc.d_ambient + t.mz;
            let e = crate::stress::effective_transverse_splitting(&t);
            assert_abs_diff_eq!(l.f_minus, d - e, epsilon = 1e-9);
            assert_abs_diff_eq!(l.f_plus, d + e, epsilon = 1e-9);
        }
    }

    #[test]
    fn single_line_no_broadening_is_pure_lorentzian() {
        let (pc, k) = defaults();
        let mut s = scene(StressTensor::zero(), [0.0; 3], &[OrientationLabel::N111]);
        s.line.contrast_per_group = 0.1;
        let grid = linear_grid(2770.0, 2970.0, 2001).unwrap();
        let synth = synthesize_spectrum(&s, &grid, &pc, &k).unwrap();
        assert!(!synth.coverage_warning);
        // both transitions coincide at 2870; on-center value exact
        let i0 = grid.iter().position(|&f| (f - 2870.0).abs() < 1e-9).unwrap();
        assert_abs_diff_eq!(synth.trace.contrast[i0], 1.0 - 0.1, epsilon = 1e-12);
        // profile is Lorentzian
        let gamma = s.line.lorentz_width;
        for (f, c) in grid.iter().zip(&synth.trace.contrast) {
            let x = f - 2870.0;
            let expected = 1.0 - 0.1 * gamma * gamma / (x * x + gamma * gamma);
            assert_abs_diff_eq!(*c, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn broadened_width_converges_to_gaussian_limit() {
        let (pc, k) = defaults();
        let mut s = scene(StressTensor::zero(), [0.0; 3], &[OrientationLabel::N111]);
        s.line.contrast_per_group = 0.1;
        s.line.lorentz_width = 2.0;
        s.broadening = BroadeningModel { sigma_p: 4.0, dd_dp: 14.0 };
        let gw = s.broadening.gauss_width();
        let grid = linear_grid(2870.0 - 30.0 * gw, 2870.0 + 30.0 * gw, 6001).unwrap();
        let synth = synthesize_spectrum(&s, &grid, &pc, &k).unwrap();
        // full width at half depth
        let min = synth.trace.contrast.iter().cloned().fold(f64::MAX, f64::min);
        let half = 0.5 * (1.0 + min);
        let below: Vec<usize> = synth
            .trace
            .contrast
            .iter()
            .enumerate()
            .filter(|(_, &c)| c < half)
            .map(|(i, _)| i)
            .collect();
        let width = grid[*below.last().unwrap()] - grid[below[0]];
        assert!(
            (width - 2.355 * gw).abs() / (2.355 * gw) < 0.05,
            "width={width} expected~{}",
            2.355 * gw
        );
        // and the shape itself matches the direct-quadrature convolution
        let peak = voigt_by_quadrature(0.0, 2.0, gw, 1e-12);
        for idx in (0..grid.len()).step_by(500) {
            let x = grid[idx] - 2870.0;
            let exact = 1.0 - 0.1 * voigt_by_quadrature(x, 2.0, gw, 1e-12) / peak;
            assert!((synth.trace.contrast[idx] - exact).abs() < 2e-4);
        }
    }

    #[test]
    fn monotone_broadening_never_narrows() {
        let mut last = 0.0;
        for i in 0..8 {
            let sp = i as f64 * 0.5;
            let w = voigt_fwhm(5.0, (BroadeningModel { sigma_p: sp, dd_dp: 14.0 }).gauss_width());
            assert!(w >= last - 1e-9);
            last = w;
        }
    }

    #[test]
    fn hydrostatic_pressure_shifts_dips_upward() {
        let (pc, k) = defaults();
        let mut last = 0.0;
        for p in [0.0, 10.0, 40.0, 80.0, 120.0] {
            let s = scene(StressTensor::hydrostatic(p), [0.0; 3], &OrientationLabel::ALL);
            let lines = resonance_lines(&s, &pc, &k).unwrap();
            let lowest = lines.iter().map(|l| l.f_minus).fold(f64::MAX, f64::min);
            assert!(lowest >= last);
            last = lowest;
        }
    }

    #[test]
    fn coverage_warning_for_out_of_band_grid() {
        let (pc, k) = defaults();
        let s = scene(StressTensor::hydrostatic(100.0), [0.0; 3], &[OrientationLabel::N111]);
        let grid = linear_grid(2800.0, 2900.0, 101).unwrap();
        let synth = synthesize_spectrum(&s, &grid, &pc, &k).unwrap();
        assert!(synth.coverage_warning);
        // flat to within the far Lorentzian tail
        let spread = synth
            .trace
            .contrast
            .iter()
            .map(|c| (c - 1.0).abs())
            .fold(0.0, f64::max);
        assert!(spread < 1e-3);
    }

    #[test]
    fn dip_counting_basics() {
        // flat baseline
        let flat = SpectrumTrace::new(
            linear_grid(0.0, 10.0, 11).unwrap(),
            vec![1.0; 11],
        )
        .unwrap();
        assert_eq!(count_resolved_dips(&flat, 0.01).unwrap(), 0);

        // one Lorentzian dip
        let grid = linear_grid(-50.0, 50.0, 501).unwrap();
        let depth = 0.2;
        let c: Vec<f64> = grid
            .iter()
            .map(|&x| 1.0 - depth * 25.0 / (x * x + 25.0))
            .collect();
        let t = SpectrumTrace::new(grid.clone(), c).unwrap();
        assert_eq!(count_resolved_dips(&t, 0.1 * depth).unwrap(), 1);

        // merged versus resolved pair
        for (sep, expected) in [(0.5, 1usize), (50.0, 2usize)] {
            let c: Vec<f64> = grid
                .iter()
                .map(|&x| {
                    1.0 - depth * 25.0 / ((x - sep / 2.0).powi(2) + 25.0)
                        - depth * 25.0 / ((x + sep / 2.0).powi(2) + 25.0)
                })
                .collect();
            let t = SpectrumTrace::new(grid.clone(), c).unwrap();
            assert_eq!(count_resolved_dips(&t, 0.05 * depth).unwrap(), expected, "sep={sep}");
        }
    }

    #[test]
    fn prominence_domain_checked() {
        let t = SpectrumTrace::new(vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        assert!(count_resolved_dips(&t, 0.0).is_err());
        assert!(count_resolved_dips(&t, 1.0).is_err());
    }

    #[test]
    fn trace_validation_rejects_bad_grids() {
        assert!(SpectrumTrace::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(SpectrumTrace::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(SpectrumTrace::new(vec![0.0, 1.0], vec![1.0, 2.0]).is_err());
    }

    /// The Zeeman crossover: derivative of the splitting with respect
    /// to axial field is quadratically suppressed at B=0 and approaches
    /// 2*gamma_e once gamma_e B >= 10 E.
    #[test]
    fn zeeman_regime_crossover() {
        let pc = PhysicalConstants::default();
        let e = 10.0;
        let split = |b_axial: f64| {
            let terms = SpinTerms::new(2870.0, e, 0.0).unwrap();
            let h = build_hamiltonian(&terms, Vector3::new(0.0, 0.0, b_axial), &pc).unwrap();
            let t = transition_frequencies(&h).unwrap();
            t.f_plus - t.f_minus
        };
        let h = 1e-4;
        let d0 = (split(h) - split(-h)) / (2.0 * h);
        assert!(d0.abs() < 1e-6 * 2.0 * pc.gamma_e);
        let b_big = 10.0 * e / pc.gamma_e;
        let dbig = (split(b_big + h) - split(b_big - h)) / (2.0 * h);
        assert!((dbig - 2.0 * pc.gamma_e).abs() / (2.0 * pc.gamma_e) < 0.05);
    }
}
