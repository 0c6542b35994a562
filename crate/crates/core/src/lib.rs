//! Forward and inverse modeling of nitrogen-vacancy (NV) center ODMR
//! spectroscopy in diamond anvil cells.
//!
//! The crate covers the full desk-side workflow:
//!
//! - [`spin`]: spin-1 Hamiltonian assembly and exact 3x3 Hermitian
//!   eigendecomposition, yielding the two ODMR transition frequencies.
//! - [`stress`]: crystal-frame stress tensor to per-orientation spin
//!   coupling terms, plus crystal/NV-frame rotations.
//! - [`lineshape`]: Voigt profile evaluation (Lorentzian dips under
//!   Gaussian pressure-inhomogeneity broadening).
//! - [`spectrum`]: ensemble ODMR spectrum synthesis and dip counting.
//! - [`calibration`]: the empirical D(P) polynomial, its inversion for
//!   pressure readout, and D/E extraction from measured traces.
//! - [`inversion`]: global least-squares recovery of the stress tensor
//!   and magnetic field vectors from spectrum series.
//! - [`rabi`]: Rabi oscillations of an inhomogeneously detuned ensemble.
//! - [`config`] and [`io`]: run configuration, CSV traces, experiment
//!   manifests.
//!
//! Units throughout: frequencies in MHz, magnetic fields in Gauss,
//! stress in GPa (compressive positive), times in ns.

pub mod calibration;
pub mod config;
pub mod error;
pub mod inversion;
pub mod io;
pub mod lineshape;
pub mod optimize;
pub mod rabi;
pub mod spectrum;
pub mod spin;
pub mod stress;

pub use error::{Error, Result};
