use std::f64::consts::PI;

use eigenmeasure::eigen::{lambda_bar, solve_eigen, EigenOptions};
use eigenmeasure::mesh::{build_round_sphere, Density};
use eigenmeasure::sphere::{
    analytic_index, center_of_mass_normalize, conformal_map, hersch_upper_bound_check, jacobi_spectrum, sphere_volume,
    EquatorMap, OracleError,
};

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

#[test]
fn sphere_volumes_match_closed_forms() {
    assert!(rel(sphere_volume(2), 4.0 * PI) < 1e-15);
    assert!(rel(sphere_volume(3), 2.0 * PI * PI) < 1e-15);
    assert!(rel(sphere_volume(7), PI.powi(4) / 3.0) < 1e-14);
    for m in 2..=12 {
        let recursive = 2.0 * PI * sphere_volume(m - 2) / (m as f64 - 1.0);
        assert!(rel(sphere_volume(m), recursive) < 1e-14);
    }
}

#[test]
fn equator_energies_match_hand_values() {
    let e = |m, k| EquatorMap::new(m, k).unwrap().energy();
    assert!(rel(e(7, 0), 2.4 * PI.powi(4)) < 1e-14);
    assert!(rel(e(9, 2), 0.8 * PI.powi(5)) < 1e-14);
    assert!(rel(e(3, 0), 8.0 * PI * PI) < 1e-14);
}

#[test]
fn point_singularity_energy_exceeds_first_eigenvalue_bound() {
    for m in 3..=12 {
        let energy = EquatorMap::new(m, 0).unwrap().energy();
        let mf = m as f64;
        assert!(rel(energy, (mf - 1.0).powi(2) / (mf - 2.0) * sphere_volume(m)) < 1e-14);
        assert!(energy > mf * sphere_volume(m));
    }
}

#[test]
fn energy_density_values() {
    let map = EquatorMap::new(7, 0).unwrap();
    assert_eq!(map.density(0.0).unwrap(), 6.0);
    assert_eq!(map.density(0.5).unwrap(), 12.0);
    assert!(map.density(0.999).unwrap() > 1e3);
    assert!(matches!(map.density(1.0), Err(OracleError::OutOfRange(_))));
}

#[test]
fn energy_quadrature_matches_closed_form() {
    for m in 3..=12 {
        for k in 0..=m - 3 {
            let map = EquatorMap::new(m, k).unwrap();
            let q = map.energy_by_quadrature(1e-12);
            assert!(rel(q, map.energy()) < 1e-8, "m = {m}, k = {k}: {q} vs {}", map.energy());
        }
    }
}

#[test]
fn jacobi_spectrum_values() {
    assert_eq!(jacobi_spectrum(1.0, 1.0, 4), vec![0.0, 4.0, 10.0, 18.0]);
    for (a, b) in [(0.5, 3.0), (2.5, 2.5), (-0.5, 0.2)] {
        let s = jacobi_spectrum(a, b, 6);
        assert_eq!(s[0], 0.0);
        assert!(s.windows(2).all(|w| w[1] > w[0]));
    }
}

#[test]
fn index_hand_evaluations() {
    let r70 = analytic_index(&EquatorMap::new(7, 0).unwrap()).unwrap();
    assert!((r70.alpha_minus - 2.0).abs() < 1e-15);
    assert_eq!(r70.total, 2);

    let r81 = analytic_index(&EquatorMap::new(8, 1).unwrap()).unwrap();
    assert!((r81.alpha_minus - 2.0).abs() < 1e-15);
    let counts: Vec<(usize, usize, u64)> = r81.per_ell.iter().map(|c| (c.ell, c.count, c.multiplicity)).collect();
    assert_eq!(&counts[..2], &[(0, 1, 1), (1, 1, 2)]);
    assert!(counts[2..].iter().all(|c| c.1 == 0));
    assert_eq!(r81.total, 3);

    let r91 = analytic_index(&EquatorMap::new(9, 1).unwrap()).unwrap();
    assert!((r91.alpha_minus - (3.0 - 2f64.sqrt())).abs() < 1e-14);
    assert_eq!(r91.total, 3);
}

#[test]
fn index_totals_over_the_finite_range() {
    for m in 3..=12 {
        for k in 0..=m - 3 {
            let result = analytic_index(&EquatorMap::new(m, k).unwrap());
            if m >= k + 7 {
                assert_eq!(result.unwrap().total, k as u64 + 2, "m = {m}, k = {k}");
            } else {
                assert!(matches!(result, Err(OracleError::IndexInfinite { .. })), "m = {m}, k = {k}");
            }
        }
    }
}

#[test]
fn symmetric_configurations_are_balanced() {
    let antipodal = vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.0, -1.0], vec![0.6, 0.8, 0.0], vec![-0.6, -0.8, 0.0]];
    let c = center_of_mass_normalize(&antipodal, &[1.0, 1.0, 3.0, 3.0]).unwrap();
    assert!(c.p.iter().all(|x| x.abs() < 1e-12), "{:?}", c.p);

    let s = 1.0 / 3f64.sqrt();
    let tetra = vec![vec![s, s, s], vec![s, -s, -s], vec![-s, s, -s], vec![-s, -s, s]];
    let c = center_of_mass_normalize(&tetra, &[1.0; 4]).unwrap();
    assert!(c.p.iter().all(|x| x.abs() < 1e-12), "{:?}", c.p);
}

#[test]
fn two_point_heavy_atom_has_no_center() {
    let points = vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.0, -1.0]];
    assert!(center_of_mass_normalize(&points, &[2.0, 1.0]).is_err());
}

#[test]
fn axial_center_matches_bisection() {
    // poles weighted 2 and 1 plus a balanced equatorial pair: the center lies on the axis
    let points = vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.0, -1.0], vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]];
    let weights = [2.0, 1.0, 1.0, 1.0];
    let c = center_of_mass_normalize(&points, &weights).unwrap();
    assert!(c.p[0].abs() < 1e-12 && c.p[1].abs() < 1e-12);

    let balance = |z: f64| -> f64 {
        let p = [0.0, 0.0, z];
        points.iter().zip(&weights).map(|(x, w)| w * conformal_map(&p, x)[2]).sum()
    };
    let (mut lo, mut hi) = (-0.999_999, 0.999_999);
    assert!(balance(lo) < 0.0 && balance(hi) > 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if balance(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    assert!((c.p[2] - 0.5 * (lo + hi)).abs() < 1e-9, "{} vs {}", c.p[2], lo);
    assert!(c.residual < 1e-10);
}

#[test]
fn hersch_bound_for_uniform_and_bumped_densities() {
    let mesh = build_round_sphere(2, 4).unwrap();
    let eight_pi = 8.0 * PI;
    let opts = EigenOptions::default();

    let uniform = Density::uniform(&mesh, 1.0).unwrap();
    let b = hersch_upper_bound_check(&mesh, &uniform, 1).unwrap();
    assert!(rel(b.bound, eight_pi) < 1e-2);
    assert!(rel(b.reference, eight_pi) < 1e-15);

    let bump: Vec<f64> = (0..mesh.num_cells())
        .map(|c| {
            let p = mesh.cell_centroid(c);
            let polar = (p[2] / p.iter().map(|x| x * x).sum::<f64>().sqrt()).acos();
            1.0 + 6.0 * (-(polar / 0.4).powi(2)).exp()
        })
        .collect();
    for density in [uniform, Density::uncapped(bump).unwrap()] {
        let b = hersch_upper_bound_check(&mesh, &density, 1).unwrap();
        assert!(b.bound <= eight_pi * 1.02, "{}", b.bound);
        let s = solve_eigen(&mesh.assemble_stiffness(), &mesh.assemble_mass(&density).unwrap(), 1, &opts).unwrap();
        let lb = lambda_bar(&s, density.mass(&mesh), 1);
        assert!(b.bound >= lb * (1.0 - 1e-9), "{} < {lb}", b.bound);
        assert!(b.center.residual < 1e-10);
    }
}
