//! Stress tensor to spin-coupling mapping for the four NV orientation
//! families, plus crystal/NV-frame rotations.
//!
//! Stress is expressed on the diamond cubic axes, compressive positive,
//! in GPa. The four NV axes are the <111> directions with positive
//! sign product; shears pick up orientation-dependent signs
//! `sigma'_ij = n_i n_j sigma_ij`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Symmetric crystal-frame stress tensor, GPa, compressive positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StressTensor {
    pub sxx: f64,
    pub syy: f64,
    pub szz: f64,
    pub sxy: f64,
    pub sxz: f64,
    pub syz: f64,
}

impl StressTensor {
    pub fn new(sxx: f64, syy: f64, szz: f64, sxy: f64, sxz: f64, syz: f64) -> Result<Self> {
        let t = StressTensor { sxx, syy, szz, sxy, sxz, syz };
        t.validate()?;
        Ok(t)
    }

    pub fn zero() -> Self {
        StressTensor { sxx: 0.0, syy: 0.0, szz: 0.0, sxy: 0.0, sxz: 0.0, syz: 0.0 }
    }

    pub fn hydrostatic(p: f64) -> Self {
        StressTensor { sxx: p, syy: p, szz: p, sxy: 0.0, sxz: 0.0, syz: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite(self.sxx, "sxx")?;
        ensure_finite(self.syy, "syy")?;
        ensure_finite(self.szz, "szz")?;
        ensure_finite(self.sxy, "sxy")?;
        ensure_finite(self.sxz, "sxz")?;
        ensure_finite(self.syz, "syz")?;
        Ok(())
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.sxx, self.sxy, self.sxz,
            self.sxy, self.syy, self.syz,
            self.sxz, self.syz, self.szz,
        )
    }

    pub fn components(&self) -> [f64; 6] {
        [self.sxx, self.syy, self.szz, self.sxy, self.sxz, self.syz]
    }

    pub fn from_components(c: [f64; 6]) -> Self {
        StressTensor { sxx: c[0], syy: c[1], szz: c[2], sxy: c[3], sxz: c[4], syz: c[5] }
    }
}

/// Isotropic part of the stress tensor, trace/3.
pub fn hydrostatic_pressure(sigma: &StressTensor) -> f64 {
    (sigma.sxx + sigma.syy + sigma.szz) / 3.0
}

/// Spin-stress coupling coefficients, MHz/GPa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinStressConstants {
    pub a1: f64,
    pub a2: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for SpinStressConstants {
    fn default() -> Self {
        SpinStressConstants { a1: 4.86, a2: -3.7, b: -2.3, c: 3.5 }
    }
}

impl SpinStressConstants {
    pub fn validate(&self) -> Result<()> {
        ensure_finite(self.a1, "a1")?;
        ensure_finite(self.a2, "a2")?;
        ensure_finite(self.b, "b")?;
        ensure_finite(self.c, "c")?;
        Ok(())
    }
}

/// Frequency shifts (MHz) coupling one NV orientation to the stress.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinStressTerms {
    pub mz: f64,
    pub mx: f64,
    pub my: f64,
}

/// Effective transverse splitting E = sqrt(Mx^2 + My^2), MHz.
pub fn effective_transverse_splitting(terms: &SpinStressTerms) -> f64 {
    terms.mx.hypot(terms.my)
}

/// The four <111> NV orientation families (positive sign product).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OrientationLabel {
    /// [111]
    #[serde(rename = "111")]
    N111,
    /// [-1-11]
    #[serde(rename = "-1-11")]
    Nm1m11,
    /// [-11-1]
    #[serde(rename = "-11-1")]
    Nm11m1,
    /// [1-1-1]
    #[serde(rename = "1-1-1")]
    N1m1m1,
}

impl OrientationLabel {
    pub const ALL: [OrientationLabel; 4] = [
        OrientationLabel::N111,
        OrientationLabel::Nm1m11,
        OrientationLabel::Nm11m1,
        OrientationLabel::N1m1m1,
    ];

    /// Axis sign triple (n1, n2, n3); the product is always +1.
    pub fn signs(&self) -> (f64, f64, f64) {
        match self {
            OrientationLabel::N111 => (1.0, 1.0, 1.0),
            OrientationLabel::Nm1m11 => (-1.0, -1.0, 1.0),
            OrientationLabel::Nm11m1 => (-1.0, 1.0, -1.0),
            OrientationLabel::N1m1m1 => (1.0, -1.0, -1.0),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OrientationLabel::N111 => "111",
            OrientationLabel::Nm1m11 => "-1-11",
            OrientationLabel::Nm11m1 => "-11-1",
            OrientationLabel::N1m1m1 => "1-1-1",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().trim_matches(|c| c == '[' || c == ']') {
            "111" => Ok(OrientationLabel::N111),
            "-1-11" => Ok(OrientationLabel::Nm1m11),
            "-11-1" => Ok(OrientationLabel::Nm11m1),
            "1-1-1" => Ok(OrientationLabel::N1m1m1),
            other => Err(Error::invalid(format!(
                "unknown NV orientation `{other}`; expected one of 111, -1-11, -11-1, 1-1-1"
            ))),
        }
    }
}

impl std::fmt::Display for OrientationLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}]", self.name())
    }
}

/// One NV orientation family with its right-handed local frame.
///
/// Convention: for axis (n1,n2,n3)/sqrt(3),
/// `x_local = (n1, n2, -2 n3)/sqrt(6)` and `y_local = (-n1, n2, 0)/sqrt(2)`,
/// which reduces to x=(1,1,-2)/sqrt(6), y=(-1,1,0)/sqrt(2) for [111].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NVOrientation {
    pub label: OrientationLabel,
    pub axis: Vector3<f64>,
    pub x_local: Vector3<f64>,
    pub y_local: Vector3<f64>,
}

impl NVOrientation {
    pub fn new(label: OrientationLabel) -> Self {
        let (n1, n2, n3) = label.signs();
        let axis = Vector3::new(n1, n2, n3) / 3.0f64.sqrt();
        let x_local = Vector3::new(n1, n2, -2.0 * n3) / 6.0f64.sqrt();
        let y_local = Vector3::new(-n1, n2, 0.0) / 2.0f64.sqrt();
        NVOrientation { label, axis, x_local, y_local }
    }

    pub fn all() -> [NVOrientation; 4] {
        OrientationLabel::ALL.map(NVOrientation::new)
    }
}

/// Rotates a crystal-frame vector into the NV local frame
/// (x_local, y_local, axis).
pub fn rotate_to_nv_frame(v: Vector3<f64>, orient: &NVOrientation) -> Vector3<f64> {
    Vector3::new(v.dot(&orient.x_local), v.dot(&orient.y_local), v.dot(&orient.axis))
}

/// Inverse of [`rotate_to_nv_frame`].
pub fn rotate_from_nv_frame(v: Vector3<f64>, orient: &NVOrientation) -> Vector3<f64> {
    orient.x_local * v.x + orient.y_local * v.y + orient.axis * v.z
}

/// Maps a crystal-frame stress tensor to the (Mz, Mx, My) coupling
/// terms of one orientation.
pub fn spin_stress_terms(
    sigma: &StressTensor,
    orient: &NVOrientation,
    k: &SpinStressConstants,
) -> Result<SpinStressTerms> {
    sigma.validate()?;
    k.validate()?;
    let (n1, n2, n3) = orient.label.signs();
    let syz = n2 * n3 * sigma.syz;
    let sxz = n1 * n3 * sigma.sxz;
    let sxy = n1 * n2 * sigma.sxy;
    let mz = k.a1 * (sigma.sxx + sigma.syy + sigma.szz) + 2.0 * k.a2 * (syz + sxz + sxy);
    let mx = k.b * (2.0 * sigma.szz - sigma.sxx - sigma.syy) + k.c * (2.0 * sxy - syz - sxz);
    let my = 3.0f64.sqrt() * (k.b * (sigma.sxx - sigma.syy) + k.c * (syz - sxz));
    Ok(SpinStressTerms { mz, mx, my })
}

/// The stress tensor the reference experiment reports for its
/// microdiamond, used by tests and bundled fixtures.
pub fn reference_stress_tensor() -> StressTensor {
    StressTensor { sxx: 62.8, syy: 60.6, szz: 75.6, sxy: -5.7, sxz: 3.8, syz: 7.5 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn frames_are_orthonormal_and_right_handed() {
        for o in NVOrientation::all() {
            assert_abs_diff_eq!(o.axis.norm(), 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(o.x_local.norm(), 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(o.y_local.norm(), 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(o.axis.dot(&o.x_local), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(o.axis.dot(&o.y_local), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(o.x_local.dot(&o.y_local), 0.0, epsilon = 1e-12);
            let cross = o.x_local.cross(&o.y_local);
            assert!((cross - o.axis).norm() < 1e-12);
            // the four axes carry a positive sign product
            let (n1, n2, n3) = o.label.signs();
            assert_eq!(n1 * n2 * n3, 1.0);
        }
    }

    #[test]
    fn hydrostatic_stress_gives_pure_axial_shift() {
        let k = SpinStressConstants::default();
        let sigma = StressTensor::hydrostatic(42.0);
        let mut mzs = Vec::new();
        for o in NVOrientation::all() {
            let t = spin_stress_terms(&sigma, &o, &k).unwrap();
            assert_abs_diff_eq!(t.mx, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(t.my, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(t.mz, 3.0 * k.a1 * 42.0, epsilon = 1e-9);
            mzs.push(t.mz);
        }
        // zero spread across the four orientations
        let spread = mzs.iter().cloned().fold(f64::MIN, f64::max)
            - mzs.iter().cloned().fold(f64::MAX, f64::min);
        assert_eq!(spread, 0.0);
    }

    #[test]
    fn reference_tensor_mz_matches_hand_arithmetic() {
        let k = SpinStressConstants::default();
        let sigma = reference_stress_tensor();
        let o = NVOrientation::new(OrientationLabel::N111);
        let t = spin_stress_terms(&sigma, &o, &k).unwrap();
        // 4.86 * 199.0 + 2 * (-3.7) * (7.5 + 3.8 - 5.7)
        assert_abs_diff_eq!(t.mz, 925.70, epsilon = 1e-9);
    }

    #[test]
    fn reference_tensor_transverse_splitting_matches_formula_oracle() {
        let k = SpinStressConstants::default();
        let sigma = reference_stress_tensor();
        let o = NVOrientation::new(OrientationLabel::N111);
        let t = spin_stress_terms(&sigma, &o, &k).unwrap();
        let mx = k.b * (2.0 * 75.6 - 62.8 - 60.6) + k.c * (2.0 * (-5.7) - 7.5 - 3.8);
        let my = 3.0f64.sqrt() * (k.b * (62.8 - 60.6) + k.c * (7.5 - 3.8));
        assert_abs_diff_eq!(t.mx, mx, epsilon = 1e-12);
        assert_abs_diff_eq!(t.my, my, epsilon = 1e-12);
        assert_abs_diff_eq!(
            effective_transverse_splitting(&t),
            mx.hypot(my),
            epsilon = 1e-9
        );
    }

    #[test]
    fn hydrostatic_pressure_examples() {
        assert_abs_diff_eq!(
            hydrostatic_pressure(&reference_stress_tensor()),
            66.333333333333333,
            epsilon = 1e-12
        );
        // rounds to the published one-decimal value
        assert_eq!(
            format!("{:.1}", hydrostatic_pressure(&reference_stress_tensor())),
            "66.3"
        );
        assert_eq!(hydrostatic_pressure(&StressTensor::zero()), 0.0);
        assert_abs_diff_eq!(
            hydrostatic_pressure(&StressTensor::hydrostatic(17.5)),
            17.5,
            epsilon = 1e-14
        );
    }

    #[test]
    fn rotation_examples_and_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for o in NVOrientation::all() {
            let along = rotate_to_nv_frame(o.axis * 2.5, &o);
            assert_abs_diff_eq!(along.x, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(along.y, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(along.z, 2.5, epsilon = 1e-12);

            let perp = rotate_to_nv_frame(o.x_local * 1.5 - o.y_local * 0.5, &o);
            assert_abs_diff_eq!(perp.z, 0.0, epsilon = 1e-12);

            for _ in 0..20 {
                let v = Vector3::new(
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                );
                let w = rotate_to_nv_frame(v, &o);
                assert_abs_diff_eq!(w.norm(), v.norm(), epsilon = 1e-12);
                let back = rotate_from_nv_frame(w, &o);
                assert!((back - v).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn linearity_superposition() {
        let k = SpinStressConstants::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let o = NVOrientation::new(OrientationLabel::Nm11m1);
        for _ in 0..50 {
            let a = StressTensor::from_components(std::array::from_fn(|_| rng.gen_range(-50.0..50.0)));
            let b = StressTensor::from_components(std::array::from_fn(|_| rng.gen_range(-50.0..50.0)));
            let sum = StressTensor::from_components(std::array::from_fn(|i| {
                a.components()[i] + b.components()[i]
            }));
            let ta = spin_stress_terms(&a, &o, &k).unwrap();
            let tb = spin_stress_terms(&b, &o, &k).unwrap();
            let ts = spin_stress_terms(&sum, &o, &k).unwrap();
            assert_abs_diff_eq!(ts.mz, ta.mz + tb.mz, epsilon = 1e-9);
            assert_abs_diff_eq!(ts.mx, ta.mx + tb.mx, epsilon = 1e-9);
            assert_abs_diff_eq!(ts.my, ta.my + tb.my, epsilon = 1e-9);
        }
    }

    /// Independent oracle for the orientation sign rule: each family is
    /// the image of [111] under the 180-degree rotation diag(n1,n2,n3);
    /// rotating sigma by that element and applying the [111] formula
    /// must reproduce the family's terms.
    #[test]
    fn orientation_sign_rule_matches_rotation_oracle() {
        let k = SpinStressConstants::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let base = NVOrientation::new(OrientationLabel::N111);
        for _ in 0..30 {
            let sigma = StressTensor::from_components(std::array::from_fn(|_| {
                rng.gen_range(-80.0..80.0)
            }));
            for o in NVOrientation::all() {
                let (n1, n2, n3) = o.label.signs();
                let r = Matrix3::from_diagonal(&Vector3::new(n1, n2, n3));
                let rotated = r * sigma.to_matrix() * r.transpose();
                let sigma_r = StressTensor {
                    sxx: rotated[(0, 0)],
                    syy: rotated[(1, 1)],
                    szz: rotated[(2, 2)],
                    sxy: rotated[(0, 1)],
                    sxz: rotated[(0, 2)],
                    syz: rotated[(1, 2)],
                };
                let direct = spin_stress_terms(&sigma, &o, &k).unwrap();
                let oracle = spin_stress_terms(&sigma_r, &base, &k).unwrap();
                assert_abs_diff_eq!(direct.mz, oracle.mz, epsilon = 1e-9);
                assert_abs_diff_eq!(direct.mx, oracle.mx, epsilon = 1e-9);
                assert_abs_diff_eq!(direct.my, oracle.my, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn hydrostatic_slope_sits_in_the_empirical_band() {
        let k = SpinStressConstants::default();
        assert!((3.0 * k.a1 - 14.8).abs() <= 1.0);
    }

    #[test]
    fn three_four_five_transverse_splitting() {
        let t = SpinStressTerms { mz: 100.0, mx: 3.0, my: 4.0 };
        assert_abs_diff_eq!(effective_transverse_splitting(&t), 5.0, epsilon = 1e-14);
        let t0 = SpinStressTerms { mz: 100.0, mx: 0.0, my: 0.0 };
        assert_eq!(effective_transverse_splitting(&t0), 0.0);
    }

    #[test]
    fn label_parse_round_trip() {
        for l in OrientationLabel::ALL {
            assert_eq!(OrientationLabel::parse(l.name()).unwrap(), l);
        }
        assert!(OrientationLabel::parse("110").is_err());
    }
}
