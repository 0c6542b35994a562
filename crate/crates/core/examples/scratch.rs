//! Temporary diagnostics for the inverse-problem round trip.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nv_odmr::config::ToolkitConfig;
use nv_odmr::inversion::{
    fit_global, seed_initialization, ExperimentDataset, ScanKind, SpectrumMeta,
};
use nv_odmr::spectrum::{
    add_gaussian_noise, linear_grid, resonance_lines, synthesize_spectrum, BroadeningModel,
    EnsembleScene, LineShapeParams,
};
use nv_odmr::stress::{hydrostatic_pressure, reference_stress_tensor, OrientationLabel, StressTensor};

/// Errors of the fitted solution against truth, minimized over the 48
/// joint gauge images (sigma -> P sigma P^T, every B -> P B, fields
/// also compared up to sign).
fn gauge_aligned_errors(
    fitted: &nv_odmr::inversion::FitParameters,
    truth_sigma: &StressTensor,
    truth_fields: &[Option<[f64; 3]>],
) -> (f64, f64) {
    use nalgebra::Matrix3;
    let c = fitted.sigma.components();
    let s = Matrix3::new(c[0], c[3], c[4], c[3], c[1], c[5], c[4], c[5], c[2]);
    let tc = truth_sigma.components();
    let perms = [[0usize, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut best = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    for p in perms {
        for smask in 0..8u8 {
            let mut m = Matrix3::zeros();
            for (row, &col) in p.iter().enumerate() {
                m[(row, col)] = if smask & (1 << row) == 0 { 1.0 } else { -1.0 };
            }
            let s2 = m * s * m.transpose();
            let img = [s2[(0, 0)], s2[(1, 1)], s2[(2, 2)], s2[(0, 1)], s2[(0, 2)], s2[(1, 2)]];
            let mut max_s = 0.0f64;
            for (a, b) in img.iter().zip(tc) {
                max_s = max_s.max((a - b).abs());
            }
            let mut max_f = 0.0f64;
            for (i, f) in truth_fields.iter().enumerate() {
                let Some(t) = f else { continue };
                let g = m * Vector3::from(fitted.fields.field(i).unwrap());
                let t = Vector3::from(*t);
                max_f = max_f.max((g - t).norm().min((g + t).norm()));
            }
            let score = (max_s / 1.0).max(max_f / 2.0);
            if score < best.0 {
                best = (score, max_s, max_f);
            }
        }
    }
    (best.1, best.2)
}

fn main() {
    let cfg = ToolkitConfig::default();
    for trial in 0..6u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0000 + trial);
        let base = reference_stress_tensor().components();
        let truth_sigma = StressTensor::from_components(std::array::from_fn(|i| {
            base[i] * rng.gen_range(0.7..1.3)
        }));

        let dir = loop {
            let v = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if v.norm() > 0.2 {
                break v.normalize();
            }
        };
        let mut fields: Vec<Option<[f64; 3]>> = vec![None];
        for _ in 0..4 {
            let mag = rng.gen_range(40.0..120.0);
            let v = dir * mag;
            fields.push(Some([v.x, v.y, v.z]));
        }

        let line = LineShapeParams { baseline: 1.0, contrast_per_group: 0.03, lorentz_width: 3.0 };
        let sigma_p = 0.2;
        let p = hydrostatic_pressure(&truth_sigma);
        let broadening = BroadeningModel { sigma_p, dd_dp: cfg.calibration.slope(p) };
        let noise_sigma = (line.contrast_per_group / 2.0) / 50.0;

        let mut spectra = Vec::new();
        let mut meta = Vec::new();
        for (i, f) in fields.iter().enumerate() {
            let b = f.unwrap_or([0.0; 3]);
            let scene = EnsembleScene {
                sigma: truth_sigma,
                b_crystal: b,
                alive_groups: OrientationLabel::ALL.to_vec(),
                line,
                broadening,
            };
            let lines = resonance_lines(&scene, &cfg.constants, &cfg.coupling).unwrap();
            let span: Vec<f64> = lines.iter().flat_map(|l| [l.f_minus, l.f_plus]).collect();
            let lo = span.iter().cloned().fold(f64::INFINITY, f64::min) - 80.0;
            let hi = span.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 80.0;
            let grid = linear_grid(lo, hi, 360).unwrap();
            let clean = synthesize_spectrum(&scene, &grid, &cfg.constants, &cfg.coupling).unwrap();
            spectra.push(add_gaussian_noise(&clean.trace, noise_sigma, &mut rng));
            meta.push(if f.is_some() {
                SpectrumMeta { scan: ScanKind::FieldStrength { index: i as u32 }, known_field: None }
            } else {
                SpectrumMeta { scan: ScanKind::ZeroField, known_field: Some([0.0; 3]) }
            });
        }
        let dataset =
            ExperimentDataset { spectra, meta, alive_groups: OrientationLabel::ALL.to_vec() };
        for (i, t) in dataset.spectra.iter().enumerate() {
            let n = nv_odmr::spectrum::count_resolved_dips(t, 0.01).unwrap();
            let scene = EnsembleScene {
                sigma: truth_sigma,
                b_crystal: fields[i].unwrap_or([0.0; 3]),
                alive_groups: OrientationLabel::ALL.to_vec(),
                line,
                broadening,
            };
            let lines = resonance_lines(&scene, &cfg.constants, &cfg.coupling).unwrap();
            let mut fs: Vec<f64> = lines.iter().flat_map(|l| [l.f_minus, l.f_plus]).collect();
            fs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let gaps: Vec<f64> = fs.windows(2).map(|w| (w[1] - w[0]).round()).collect();
            println!("  spec {i}: dips={n} line gaps {gaps:?}");
        }

        let t0 = std::time::Instant::now();
        let cands = match nv_odmr::inversion::seed_candidates(&dataset, &cfg) {
            Ok(s) => s,
            Err(e) => {
                println!("trial {trial}: seed failed: {e}");
                continue;
            }
        };
        println!("  seed_candidates took {:.2} s", t0.elapsed().as_secs_f64());
        let tc = nv_odmr::inversion::debug_position_cost(&dataset, &truth_sigma, &fields, &cfg);
        println!(
            "  truth position cost per spectrum: {:?}",
            tc.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>()
        );
        for (ci, c) in cands.iter().enumerate() {
            let (se, fe) = gauge_aligned_errors(c, &truth_sigma, &fields);
            let cf: Vec<Option<[f64; 3]>> =
                (0..fields.len()).map(|i| c.fields.field(i)).collect();
            let cc = nv_odmr::inversion::debug_position_cost(&dataset, &c.sigma, &cf, &cfg);
            println!(
                "  cand {ci}: sigma_err={se:.2} GPa field_err={fe:.2} G poscost={:?}",
                cc.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>()
            );
        }
        let seed = cands[0].clone();
        println!(
            "trial {trial}: truth sigma {:?}",
            truth_sigma.components().map(|v| (v * 100.0).round() / 100.0)
        );
        println!("  seed sigma  {:?}", seed.sigma.components().map(|v| (v * 10.0).round() / 10.0));
        let (seed_s_err, _) = gauge_aligned_errors(&seed, &truth_sigma, &[]);
        println!("  seed sigma gauge-aligned max err = {seed_s_err:.2} GPa");
        println!("  seed fields variant: {}", match &seed.fields {
            nv_odmr::inversion::FieldParameters::Free(_) => "Free",
            nv_odmr::inversion::FieldParameters::SharedMagnitude { .. } => "SharedMagnitude",
            nv_odmr::inversion::FieldParameters::SharedDirection { .. } => "SharedDirection",
        });
        for (i, f) in fields.iter().enumerate() {
            let Some(t) = f else { continue };
            let s = seed.fields.field(i).unwrap();
            let tv = Vector3::from(*t);
            let sv = Vector3::from(s);
            // per-spectrum gauge freedom: best error over the 48 images
            let mut best = f64::INFINITY;
            let perms = [[0usize, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            for p in perms {
                for smask in 0..8u8 {
                    let img = Vector3::new(
                        if smask & 1 == 0 { sv[p[0]] } else { -sv[p[0]] },
                        if smask & 2 == 0 { sv[p[1]] } else { -sv[p[1]] },
                        if smask & 4 == 0 { sv[p[2]] } else { -sv[p[2]] },
                    );
                    best = best.min((img - tv).norm().min((img + tv).norm()));
                }
            }
            println!(
                "  field {i}: truth |B|={:.1} seed |B|={:.1} gauge-aligned vec err={:.2} G",
                tv.norm(),
                sv.norm(),
                best
            );
        }
        // sanity: fit started exactly at the truth parameters
        let truth_params = nv_odmr::inversion::FitParameters {
            sigma: truth_sigma,
            fields: nv_odmr::inversion::FieldParameters::Free(fields.clone()),
            line,
            sigma_p,
        };
        match fit_global(&dataset, &truth_params, &cfg.fit, &cfg, None) {
            Ok(fit) => {
                let (ms, mf) = gauge_aligned_errors(&fit.parameters, &truth_sigma, &fields);
                println!(
                    "  from truth: iters={} rnorm={:.3e} max_stress_err={:.3} max_field_err={:.3}",
                    fit.iterations, fit.residual_norm, ms, mf
                );
            }
            Err(e) => println!("  from truth: fit failed: {e}"),
        }
        let opts = nv_odmr::optimize::LmOptions { max_iterations: 800, ..cfg.fit.clone() };
        let t1 = std::time::Instant::now();
        let res = fit_global(&dataset, &seed, &opts, &cfg, None);
        println!("  fit_global took {:.2} s", t1.elapsed().as_secs_f64());
        match res {
            Ok(fit) => {
                let (max_s, max_f) = gauge_aligned_errors(&fit.parameters, &truth_sigma, &fields);
                println!(
                    "  fit: iters={} term={:?} rnorm={:.3e} max_stress_err={:.3} max_field_err={:.3}",
                    fit.iterations, fit.termination, fit.residual_norm, max_s, max_f
                );
            }
            Err(e) => println!("  fit failed: {e}"),
        }
    }
}

#[allow(dead_code)]
fn probe() {}
