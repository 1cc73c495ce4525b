use std::f64::consts::PI;

use eigenmeasure::eigen::{constrained_lambda_k, lambda_bar, solve_eigen, spectral_index, EigenOptions};
use eigenmeasure::mesh::{build_flat_torus, build_round_sphere, Density, SimplicialMesh};

fn torus(n: usize) -> SimplicialMesh {
    build_flat_torus(2, n, 2.0 * PI).unwrap()
}

fn mass(mesh: &SimplicialMesh, value: f64) -> eigenmeasure::sparse::CsrMatrix {
    mesh.assemble_mass(&Density::uniform(mesh, value).unwrap()).unwrap()
}

/// Lowest nonzero eigenvalues of the flat `2π` torus, `|v|²` over `v ∈ ℤ²`.
fn torus_spectrum(count: usize) -> Vec<f64> {
    let mut out: Vec<f64> = (-4i32..=4)
        .flat_map(|a| (-4i32..=4).map(move |b| (a * a + b * b) as f64))
        .collect();
    out.sort_by(f64::total_cmp);
    out.truncate(count);
    out
}

#[test]
fn probability_torus_cluster_approaches_four_pi_squared() {
    let mesh = torus(32);
    let rho = 1.0 / (4.0 * PI * PI);
    let s = solve_eigen(&mesh.assemble_stiffness(), &mass(&mesh, rho), 4, &EigenOptions::default()).unwrap();
    for &l in &s.eigenvalues[1..=4] {
        assert!((l / (4.0 * PI * PI) - 1.0).abs() < 1e-2, "{l}");
    }
    assert_eq!(s.cluster(1), 1..5);
}

#[test]
fn ground_state_is_constant() {
    let mesh = build_round_sphere(2, 2).unwrap();
    let m = mass(&mesh, 2.0);
    let s = solve_eigen(&mesh.assemble_stiffness(), &m, 2, &EigenOptions::default()).unwrap();
    assert!(s.eigenvalues[0].abs() < 1e-10);
    let phi = &s.eigenvectors[0];
    let spread = phi.iter().fold(0.0f64, |a, v| a.max((v - phi[0]).abs()));
    assert!(spread < 1e-8 * phi[0].abs());
}

#[test]
fn sphere_first_cluster_near_two() {
    let mesh = build_round_sphere(2, 4).unwrap();
    let s = solve_eigen(&mesh.assemble_stiffness(), &mass(&mesh, 1.0), 3, &EigenOptions::default()).unwrap();
    assert_eq!(s.cluster(1), 1..4);
    for &l in &s.eigenvalues[1..4] {
        assert!((l / 2.0 - 1.0).abs() < 1e-2, "{l}");
    }
    let vol = mesh.total_volume();
    assert!((lambda_bar(&s, vol, 1) / (8.0 * PI) - 1.0).abs() < 1e-2);
}

#[test]
fn returned_pairs_are_orthonormal_with_small_residuals() {
    let mesh = build_round_sphere(2, 3).unwrap();
    let values: Vec<f64> = (0..mesh.num_cells()).map(|c| 1.0 + 0.5 * mesh.cell_centroid(c)[2]).collect();
    let k = mesh.assemble_stiffness();
    let m = mesh.assemble_mass(&Density::uncapped(values).unwrap()).unwrap();
    let s = solve_eigen(&k, &m, 6, &EigenOptions::default()).unwrap();
    for (i, u) in s.eigenvectors.iter().enumerate() {
        for (j, v) in s.eigenvectors.iter().enumerate() {
            let expect = if i == j { 1.0 } else { 0.0 };
            assert!((m.bilinear(u, v) - expect).abs() < 1e-8);
        }
        let ku = k.mul_vec(u);
        let mu = m.mul_vec(u);
        let r: f64 = ku.iter().zip(&mu).map(|(a, b)| (a - s.eigenvalues[i] * b).powi(2)).sum::<f64>().sqrt();
        let scale = ku.iter().map(|a| a * a).sum::<f64>().sqrt().max(mu.iter().map(|b| b * b).sum::<f64>().sqrt());
        assert!(r < 1e-8 * scale.max(1.0), "pair {i}: residual {r}");
    }
}

#[test]
fn torus_index_matches_lattice_count() {
    let mesh = torus(16);
    let k = mesh.assemble_stiffness();
    let reference = mass(&mesh, 1.0);
    let opts = EigenOptions::default();
    let exact = torus_spectrum(40);
    for level in [0.5, 1.5, 3.0] {
        let expect = exact.iter().filter(|&&l| l < level).count();
        let report = spectral_index(&k, &mass(&mesh, level), &reference, &opts).unwrap();
        assert_eq!(report.count, expect, "potential {level}");
    }
    let zero = spectral_index(&k, &mass(&mesh, 0.0), &reference, &opts).unwrap();
    assert_eq!(zero.count, 0);
}

#[test]
fn constrained_minimum_reproduces_eigenvalues() {
    let mesh = torus(16);
    let k = mesh.assemble_stiffness();
    let m = mass(&mesh, 1.0);
    let opts = EigenOptions::default();
    assert!(constrained_lambda_k(&k, &m, &[], &opts).unwrap().abs() < 1e-10);

    let ones = vec![1.0; mesh.num_vertices()];
    let first = constrained_lambda_k(&k, &m, &[ones], &opts).unwrap();
    assert!((first - 1.0).abs() < 2e-2, "{first}");

    let s = solve_eigen(&k, &m, 6, &opts).unwrap();
    for kk in 1..=5 {
        let value = constrained_lambda_k(&k, &m, &s.eigenvectors[..kk], &opts).unwrap();
        assert!((value / s.eigenvalues[kk] - 1.0).abs() < 1e-8, "k = {kk}");
    }
}

#[test]
fn normalized_eigenvalue_is_scale_free() {
    let mesh = torus(16);
    let k = mesh.assemble_stiffness();
    let opts = EigenOptions::default();
    let base = solve_eigen(&k, &mass(&mesh, 1.0), 2, &opts).unwrap();
    let scaled = solve_eigen(&k, &mass(&mesh, 7.5), 2, &opts).unwrap();
    let vol = mesh.total_volume();
    let (a, b) = (lambda_bar(&base, vol, 1), lambda_bar(&scaled, 7.5 * vol, 1));
    assert!((a / b - 1.0).abs() < 1e-12);
    // discrete first torus eigenvalue times area
    assert!((a / (4.0 * PI * PI) - 1.0).abs() < 2e-2);
}
