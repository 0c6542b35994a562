//! CSV and JSON file formats for spectra, Rabi traces, and experiment
//! manifests.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inversion::{ExperimentDataset, ScanKind, SpectrumMeta};
use crate::rabi::RabiTrace;
use crate::spectrum::SpectrumTrace;
use crate::stress::OrientationLabel;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

/// Parses one two-column CSV body shared by spectrum and Rabi files.
fn read_two_column_csv(path: &Path, expected_header: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == expected_header => {}
        Some((_, header)) => {
            return Err(Error::Parse {
                line: 1,
                reason: format!("expected header '{expected_header}', found '{}'", header.trim()),
            })
        }
        None => return Err(Error::Parse { line: 1, reason: "empty file".into() }),
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let row = raw.trim();
        if row.is_empty() {
            continue;
        }
        let mut fields = row.split(',');
        let mut parse = |name: &str| -> Result<f64> {
            let field = fields.next().ok_or_else(|| Error::Parse {
                line: line_no,
                reason: format!("missing {name} column"),
            })?;
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                reason: format!("cannot parse {name} value '{}'", field.trim()),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    reason: format!("non-finite {name} value"),
                });
            }
            Ok(v)
        };
        xs.push(parse("first")?);
        ys.push(parse("second")?);
        if fields.next().is_some() {
            return Err(Error::Parse { line: line_no, reason: "too many columns".into() });
        }
    }
    Ok((xs, ys))
}

fn write_two_column_csv(path: &Path, header: &str, xs: &[f64], ys: &[f64]) -> Result<()> {
    let mut out = String::with_capacity(xs.len() * 32 + header.len() + 1);
    out.push_str(header);
    out.push('\n');
    for (x, y) in xs.iter().zip(ys) {
        // `{}` formatting round-trips f64 exactly through parse()
        out.push_str(&format!("{x},{y}\n"));
    }
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| io_err(path, e))
}

pub const SPECTRUM_HEADER: &str = "frequency_mhz,contrast";
pub const RABI_HEADER: &str = "t_ns,signal";

pub fn read_spectrum_csv(path: &Path) -> Result<SpectrumTrace> {
    let (frequencies, contrast) = read_two_column_csv(path, SPECTRUM_HEADER)?;
    SpectrumTrace::new(frequencies, contrast)
}

pub fn write_spectrum_csv(path: &Path, trace: &SpectrumTrace) -> Result<()> {
    write_two_column_csv(path, SPECTRUM_HEADER, &trace.frequencies, &trace.contrast)
}

pub fn read_rabi_csv(path: &Path) -> Result<RabiTrace> {
    let (t_ns, signal) = read_two_column_csv(path, RABI_HEADER)?;
    if t_ns.len() < 2 {
        return Err(Error::invalid("Rabi trace needs at least two samples"));
    }
    if t_ns.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("Rabi time axis must be strictly ascending"));
    }
    Ok(RabiTrace { t_ns, signal })
}

pub fn write_rabi_csv(path: &Path, trace: &RabiTrace) -> Result<()> {
    write_two_column_csv(path, RABI_HEADER, &trace.t_ns, &trace.signal)
}

/// One spectrum entry in an experiment manifest. `path` is resolved
/// relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSpectrum {
    pub path: PathBuf,
    pub scan: ScanKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known_field: Option<[f64; 3]>,
}

/// JSON description of a measurement series: where the spectrum files
/// live and what was scanned in each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub spectra: Vec<ManifestSpectrum>,
    pub alive_groups: Vec<OrientationLabel>,
    /// Independent culet pressure gauge reading, when available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub culet_pressure_gpa: Option<f64>,
}

impl ExperimentManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| io_err(path, e))
    }
}

/// Reads every spectrum named by a manifest into a dataset ready for
/// fitting. Relative paths resolve against `base_dir`.
pub fn load_dataset(manifest: &ExperimentManifest, base_dir: &Path) -> Result<ExperimentDataset> {
    if manifest.spectra.is_empty() {
        return Err(Error::invalid("manifest lists no spectra"));
    }
    let mut spectra = Vec::new();
    let mut meta = Vec::new();
    for entry in &manifest.spectra {
        let path = if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            base_dir.join(&entry.path)
        };
        spectra.push(read_spectrum_csv(&path)?);
        meta.push(SpectrumMeta { scan: entry.scan, known_field: entry.known_field });
    }
    let dataset = ExperimentDataset {
        spectra,
        meta,
        alive_groups: manifest.alive_groups.clone(),
    };
    dataset.validate()?;
    Ok(dataset)
}
