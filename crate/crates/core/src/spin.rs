//! Spin-1 operator algebra and the NV ground-state Hamiltonian.
//!
//! The Hamiltonian, in the NV local frame and in cyclic MHz, is
//!
//! ```text
//! H = d_eff Sz^2 + mx (Sy^2 - Sx^2) + my (Sx Sy + Sy Sx)
//!   + gamma_e (bx Sx + by Sy + bz Sz)
//! ```
//!
//! with `d_eff = d_ambient + Mz` carrying the axial stress shift and
//! `(mx, my)` the transverse stress terms. The basis is
//! `|ms = +1>, |ms = 0>, |ms = -1>`.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

pub type C64 = Complex64;

const HERMITICITY_RTOL: f64 = 1e-12;
const OVERLAP_TIE_TOL: f64 = 1e-9;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Dimensionless spin-1 matrices in the `|+1, 0, -1>` basis.
#[derive(Debug, Clone)]
pub struct SpinMatrices {
    pub sx: Matrix3<C64>,
    pub sy: Matrix3<C64>,
    pub sz: Matrix3<C64>,
}

impl SpinMatrices {
    pub fn new() -> Self {
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        let sx = Matrix3::new(
            c(0.0, 0.0), c(inv_sqrt2, 0.0), c(0.0, 0.0),
            c(inv_sqrt2, 0.0), c(0.0, 0.0), c(inv_sqrt2, 0.0),
            c(0.0, 0.0), c(inv_sqrt2, 0.0), c(0.0, 0.0),
        );
        let sy = Matrix3::new(
            c(0.0, 0.0), c(0.0, -inv_sqrt2), c(0.0, 0.0),
            c(0.0, inv_sqrt2), c(0.0, 0.0), c(0.0, -inv_sqrt2),
            c(0.0, 0.0), c(0.0, inv_sqrt2), c(0.0, 0.0),
        );
        let sz = Matrix3::new(
            c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0),
            c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0),
            c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0),
        );
        SpinMatrices { sx, sy, sz }
    }
}

impl Default for SpinMatrices {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-orientation Hamiltonian coefficients in MHz.
///
/// `d_eff` is the axial term (ambient zero-field splitting plus the
/// axial stress shift Mz); `mx`, `my` are the transverse stress terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinTerms {
    pub d_eff: f64,
    pub mx: f64,
    pub my: f64,
}

impl SpinTerms {
    pub fn new(d_eff: f64, mx: f64, my: f64) -> Result<Self> {
        ensure_finite(d_eff, "d_eff")?;
        ensure_finite(mx, "mx")?;
        ensure_finite(my, "my")?;
        Ok(SpinTerms { d_eff, mx, my })
    }

    /// Effective transverse splitting E = sqrt(mx^2 + my^2).
    pub fn transverse_splitting(&self) -> f64 {
        self.mx.hypot(self.my)
    }
}

/// Gyromagnetic ratio and ambient zero-field splitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Electron gyromagnetic ratio, MHz/Gauss.
    pub gamma_e: f64,
    /// Zero-field splitting at ambient pressure, MHz.
    pub d_ambient: f64,
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<()> {
        ensure_finite(self.gamma_e, "gamma_e")?;
        ensure_finite(self.d_ambient, "d_ambient")?;
        if self.gamma_e <= 0.0 {
            return Err(Error::OutOfRange {
                value: self.gamma_e,
                reason: "gamma_e must be positive".into(),
            });
        }
        Ok(())
    }

    /// Checks d_ambient against the accepted ambient range; config
    /// overrides may legitimately fall outside it.
    pub fn d_ambient_in_standard_range(&self) -> bool {
        (2865.0..=2875.0).contains(&self.d_ambient)
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants {
            gamma_e: 2.8025,
            d_ambient: 2870.0,
        }
    }
}

/// 3x3 complex Hamiltonian, entries in cyclic MHz.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianMatrix {
    pub h: Matrix3<C64>,
}

impl HamiltonianMatrix {
    /// Wraps a matrix, rejecting non-Hermitian input beyond tolerance.
    pub fn new(h: Matrix3<C64>) -> Result<Self> {
        let scale = h.iter().map(|z| z.norm()).fold(0.0f64, f64::max).max(1.0);
        let mut deviation = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                deviation = deviation.max((h[(i, j)] - h[(j, i)].conj()).norm());
            }
        }
        let tolerance = HERMITICITY_RTOL * scale;
        if deviation > tolerance {
            return Err(Error::NotHermitian {
                deviation,
                tolerance,
            });
        }
        Ok(HamiltonianMatrix { h })
    }

    pub fn trace(&self) -> f64 {
        (self.h[(0, 0)] + self.h[(1, 1)] + self.h[(2, 2)]).re
    }
}

/// Assembles the NV ground-state Hamiltonian for one orientation.
pub fn build_hamiltonian(
    terms: &SpinTerms,
    b_nv: Vector3<f64>,
    constants: &PhysicalConstants,
) -> Result<HamiltonianMatrix> {
    ensure_finite(terms.d_eff, "d_eff")?;
    ensure_finite(terms.mx, "mx")?;
    ensure_finite(terms.my, "my")?;
    ensure_finite(b_nv.x, "b_nv.x")?;
    ensure_finite(b_nv.y, "b_nv.y")?;
    ensure_finite(b_nv.z, "b_nv.z")?;
    constants.validate()?;

    let g = constants.gamma_e;
    let d = terms.d_eff;
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    // Closed-form assembly of
    //   d Sz^2 + mx (Sy^2 - Sx^2) + my {Sx, Sy} + g (b . S).
    let zee = c(g * b_nv.x * inv_sqrt2, -g * b_nv.y * inv_sqrt2);
    let strain = c(-terms.mx, -terms.my);
    let h = Matrix3::new(
        c(d + g * b_nv.z, 0.0), zee,               strain,
        zee.conj(),             c(0.0, 0.0),       zee,
        strain.conj(),          zee.conj(),        c(d - g * b_nv.z, 0.0),
    );
    HamiltonianMatrix::new(h)
}

/// Eigensystem of a 3x3 Hermitian matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct Eigensystem {
    pub eigenvalues: [f64; 3],
    /// Orthonormal eigenvectors, column i pairs with eigenvalue i.
    pub eigenvectors: [Vector3<C64>; 3],
}

/// Exact Hermitian eigendecomposition with ascending eigenvalue order.
pub fn eig3_hermitian(h: &HamiltonianMatrix) -> Result<Eigensystem> {
    // Re-validate so matrices mutated after construction are caught.
    let checked = HamiltonianMatrix::new(h.h)?;
    let eig = SymmetricEigen::new(checked.h);

    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());

    let eigenvalues = [
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    ];
    let eigenvectors = [
        eig.eigenvectors.column(order[0]).into_owned(),
        eig.eigenvectors.column(order[1]).into_owned(),
        eig.eigenvectors.column(order[2]).into_owned(),
    ];
    Ok(Eigensystem {
        eigenvalues,
        eigenvectors,
    })
}

/// The two ODMR transition frequencies out of the ms=0-like state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionFrequencies {
    pub f_minus: f64,
    pub f_plus: f64,
    /// Set when two eigenvectors tie in ms=0 overlap within tolerance;
    /// the lower-index eigenvector is then used.
    pub ambiguous_basis: bool,
}

/// Identifies the eigenstate with maximal |<ms=0|v>|^2 and returns the
/// two transition frequencies from it, sorted ascending.
pub fn transition_frequencies(h: &HamiltonianMatrix) -> Result<TransitionFrequencies> {
    let eig = eig3_hermitian(h)?;
    // ms=0 is the middle basis vector in |+1, 0, -1>.
    let overlaps: Vec<f64> = eig.eigenvectors.iter().map(|v| v[1].norm_sqr()).collect();
    let mut best = 0usize;
    for i in 1..3 {
        if overlaps[i] > overlaps[best] + OVERLAP_TIE_TOL {
            best = i;
        }
    }
    let ambiguous_basis = (0..3)
        .filter(|&i| i != best)
        .any(|i| (overlaps[i] - overlaps[best]).abs() <= OVERLAP_TIE_TOL);

    let ground = eig.eigenvalues[best];
    let mut fs: Vec<f64> = (0..3)
        .filter(|&i| i != best)
        .map(|i| eig.eigenvalues[i] - ground)
        .collect();
    fs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(TransitionFrequencies {
        f_minus: fs[0],
        f_plus: fs[1],
        ambiguous_basis,
    })
}
