//! Randomized checks shared by the property suite and the acceptance report.

use std::f64::consts::PI;

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use eigenmeasure::eigen::{constrained_lambda_k, solve_eigen, spectral_index, EigenOptions, Spectrum};
use eigenmeasure::mesh::{build_flat_torus, build_round_sphere, Density, SimplicialMesh};
use eigenmeasure::optimizer::project_capped_simplex;

pub const CASES: u32 = 256;

/// Small meshes: a 4×4 flat torus (32 cells) and the once-refined icosahedron (80 cells).
pub fn small_mesh(sphere: bool) -> SimplicialMesh {
    if sphere {
        build_round_sphere(2, 1).unwrap()
    } else {
        build_flat_torus(2, 4, 2.0 * PI).unwrap()
    }
}

pub fn density_values(sphere: bool) -> impl Strategy<Value = Vec<f64>> {
    let cells = small_mesh(sphere).num_cells();
    prop::collection::vec(0.1f64..10.0, cells)
}

pub fn solve(mesh: &SimplicialMesh, values: &[f64], k: usize) -> Spectrum {
    let m = mesh.assemble_mass(&Density::uncapped(values.to_vec()).unwrap()).unwrap();
    solve_eigen(&mesh.assemble_stiffness(), &m, k, &EigenOptions::default()).unwrap()
}

pub fn mesh_and_density() -> impl Strategy<Value = (bool, Vec<f64>)> {
    any::<bool>().prop_flat_map(|sphere| (Just(sphere), density_values(sphere)))
}

/// Exhaustive search over which coordinates sit at 0, at their cap, or in between.
pub fn brute_force_projection(v: &[f64], upper: &[f64], total: f64) -> Vec<f64> {
    let n = v.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for code in 0..3usize.pow(n as u32) {
        let mut state = Vec::with_capacity(n);
        let mut c = code;
        for _ in 0..n {
            state.push(c % 3);
            c /= 3;
        }
        if state.iter().zip(upper).any(|(s, u)| *s == 2 && u.is_infinite()) {
            continue;
        }
        let fixed: f64 = state.iter().zip(upper).filter(|(s, _)| **s == 2).map(|(_, u)| u).sum();
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 1).collect();
        if free.is_empty() {
            continue;
        }
        let shift = (free.iter().map(|&i| v[i]).sum::<f64>() + fixed - total) / free.len() as f64;
        let x: Vec<f64> = (0..n)
            .map(|i| match state[i] {
                0 => 0.0,
                1 => v[i] - shift,
                _ => upper[i],
            })
            .collect();
        if free.iter().any(|&i| x[i] < 0.0 || x[i] > upper[i]) {
            continue;
        }
        let dist: f64 = x.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, x));
        }
    }
    best.expect("a feasible face exists").1
}

pub fn projection_instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
    (1usize..=12)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(-2.0f64..2.0, n),
                prop::collection::vec(prop_oneof![4 => 0.05f64..1.0, 1 => Just(f64::INFINITY)], n),
                0.05f64..0.95,
            )
        })
        .prop_map(|(v, upper, fraction)| {
            let finite: f64 = upper.iter().filter(|u| u.is_finite()).sum();
            let total = if upper.iter().any(|u| u.is_infinite()) { 1.0 } else { fraction * finite };
            (v, upper, total)
        })
}

/// Mesh choice (sphere or torus) with cell densities.
pub type DensityCase = (bool, Vec<f64>);

pub fn scale_invariance((sphere, values): DensityCase, log_c: f64, k: usize) -> Result<(), TestCaseError> {
    let mesh = small_mesh(sphere);
    let c = 10f64.powf(log_c);
    let scaled: Vec<f64> = values.iter().map(|v| c * v).collect();
    let base = solve(&mesh, &values, k);
    let other = solve(&mesh, &scaled, k);
    let a = base.eigenvalues[k] * Density::uncapped(values).unwrap().mass(&mesh);
    let b = other.eigenvalues[k] * Density::uncapped(scaled).unwrap().mass(&mesh);
    prop_assert!((a / b - 1.0).abs() < 1e-10, "{} vs {}", a, b);
    Ok(())
}

pub fn monotonicity((sphere, values): DensityCase, extra: Vec<f64>) -> Result<(), TestCaseError> {
    let mesh = small_mesh(sphere);
    let heavier: Vec<f64> = values.iter().zip(&extra).map(|(v, e)| v + e).collect();
    let light = solve(&mesh, &values, 5);
    let heavy = solve(&mesh, &heavier, 5);
    for k in 0..=5 {
        prop_assert!(
            light.eigenvalues[k] >= heavy.eigenvalues[k] * (1.0 - 1e-10) - 1e-12,
            "k = {}: {} < {}",
            k,
            light.eigenvalues[k],
            heavy.eigenvalues[k]
        );
    }
    Ok(())
}

pub fn index_bound((sphere, values): DensityCase, k: usize) -> Result<(), TestCaseError> {
    let mesh = small_mesh(sphere);
    let s = solve(&mesh, &values, k);
    let scaled: Vec<f64> = values.iter().map(|v| s.eigenvalues[k] * v).collect();
    let weighted = mesh.assemble_mass(&Density::uncapped(scaled).unwrap()).unwrap();
    let reference = mesh.assemble_mass(&Density::uniform(&mesh, 1.0).unwrap()).unwrap();
    let report = spectral_index(&mesh.assemble_stiffness(), &weighted, &reference, &EigenOptions::default()).unwrap();
    prop_assert!(report.count <= k, "index {} > {}", report.count, k);
    Ok(())
}

pub fn constrained_consistency((sphere, values): DensityCase, k: usize) -> Result<(), TestCaseError> {
    let mesh = small_mesh(sphere);
    let s = solve(&mesh, &values, k);
    let m = mesh.assemble_mass(&Density::uncapped(values).unwrap()).unwrap();
    let value =
        constrained_lambda_k(&mesh.assemble_stiffness(), &m, &s.eigenvectors[..k], &EigenOptions::default()).unwrap();
    prop_assert!((value / s.eigenvalues[k] - 1.0).abs() < 1e-8, "{} vs {}", value, s.eigenvalues[k]);
    Ok(())
}

pub fn projection((v, upper, total): (Vec<f64>, Vec<f64>, f64)) -> Result<(), TestCaseError> {
    let fast = project_capped_simplex(&v, &upper, total).unwrap();
    let slow = brute_force_projection(&v, &upper, total);
    for (a, b) in fast.iter().zip(&slow) {
        prop_assert!((a - b).abs() < 1e-9, "{:?} vs {:?}", fast, slow);
    }
    prop_assert!((fast.iter().sum::<f64>() - total).abs() < 1e-12 * total.max(1.0));
    prop_assert!(fast.iter().zip(&upper).all(|(x, u)| *x >= 0.0 && x <= u));
    Ok(())
}

/// Extra density mass added cellwise, zero on a random subset.
pub fn extra_mass() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..5.0], 80)
}
