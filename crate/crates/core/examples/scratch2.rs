//! Check whether (sigma, B) -> (P sigma P^T, P B) is an exact model
//! symmetry for signed permutations P.

use nalgebra::{Matrix3, Vector3};
use nv_odmr::config::ToolkitConfig;
use nv_odmr::spectrum::{resonance_lines, BroadeningModel, EnsembleScene, LineShapeParams};
use nv_odmr::stress::{reference_stress_tensor, OrientationLabel, StressTensor};

fn lines_sorted(sigma: StressTensor, b: [f64; 3], cfg: &ToolkitConfig) -> Vec<f64> {
    let scene = EnsembleScene {
        sigma,
        b_crystal: b,
        alive_groups: OrientationLabel::ALL.to_vec(),
        line: LineShapeParams { baseline: 1.0, contrast_per_group: 0.03, lorentz_width: 6.0 },
        broadening: BroadeningModel { sigma_p: 0.5, dd_dp: 14.58 },
    };
    let mut v: Vec<f64> = resonance_lines(&scene, &cfg.constants, &cfg.coupling)
        .unwrap()
        .iter()
        .flat_map(|l| [l.f_minus, l.f_plus])
        .collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

fn main() {
    let cfg = ToolkitConfig::default();
    let sigma = reference_stress_tensor();
    let b = [37.0, -52.0, 81.0];
    let base = lines_sorted(sigma, b, &cfg);

    let perms = [[0usize, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let s = {
        let c = sigma.components(); // sxx syy szz sxy sxz syz
        Matrix3::new(c[0], c[3], c[4], c[3], c[1], c[5], c[4], c[5], c[2])
    };
    let bv = Vector3::new(b[0], b[1], b[2]);
    let mut worst_per_p = Vec::new();
    for p in perms {
        for smask in 0..8u8 {
            let mut m = Matrix3::zeros();
            for (row, &col) in p.iter().enumerate() {
                m[(row, col)] = if smask & (1 << row) == 0 { 1.0 } else { -1.0 };
            }
            let s2 = m * s * m.transpose();
            let b2 = m * bv;
            let sig2 = StressTensor::from_components([
                s2[(0, 0)],
                s2[(1, 1)],
                s2[(2, 2)],
                s2[(0, 1)],
                s2[(0, 2)],
                s2[(1, 2)],
            ]);
            let l2 = lines_sorted(sig2, [b2.x, b2.y, b2.z], &cfg);
            let worst = base
                .iter()
                .zip(&l2)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            worst_per_p.push(worst);
        }
    }
    worst_per_p.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!("48 images, sorted worst line deviation (MHz):");
    for chunk in worst_per_p.chunks(8) {
        println!("{:?}", chunk.iter().map(|v| (v * 1e6).round() / 1e6).collect::<Vec<_>>());
    }
}
