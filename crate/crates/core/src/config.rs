//! Run configuration: physical constants, coupling coefficients,
//! calibration polynomial, default line shape and fit options. Every
//! report echoes the effective config so results stay auditable.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::{CalibrationPolynomial, CalibrationUncertainty};
use crate::error::{Error, Result};
use crate::optimize::LmOptions;
use crate::spectrum::LineShapeParams;
use crate::spin::PhysicalConstants;
use crate::stress::SpinStressConstants;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolkitConfig {
    pub constants: PhysicalConstants,
    pub coupling: SpinStressConstants,
    pub calibration: CalibrationPolynomial,
    pub calibration_uncertainty: CalibrationUncertainty,
    pub line: LineShapeParams,
    /// Default pressure spread for broadening, GPa.
    pub sigma_p: f64,
    pub fit: LmOptions,
}

impl Default for ToolkitConfig {
    fn default() -> Self {
        ToolkitConfig {
            constants: PhysicalConstants::default(),
            coupling: SpinStressConstants::default(),
            calibration: CalibrationPolynomial::default(),
            calibration_uncertainty: CalibrationUncertainty::default(),
            line: LineShapeParams::default(),
            sigma_p: 0.5,
            fit: LmOptions::default(),
        }
    }
}

impl ToolkitConfig {
    pub fn validate(&self) -> Result<()> {
        self.constants.validate()?;
        self.coupling.validate()?;
        self.calibration.validate()?;
        self.line.validate()?;
        if !self.sigma_p.is_finite() || self.sigma_p < 0.0 {
            return Err(Error::OutOfRange {
                value: self.sigma_p,
                reason: "sigma_p must be a non-negative number".into(),
            });
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: ToolkitConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }
}
