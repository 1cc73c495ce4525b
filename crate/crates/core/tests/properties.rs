mod common;

use std::f64::consts::PI;

use proptest::prelude::*;

use common::*;
use eigenmeasure::eigen::cluster_of;
use eigenmeasure::optimizer::{energy_density, extract_eigenmap};
use eigenmeasure::sphere::center_of_mass_normalize;

fn unit_vector() -> impl Strategy<Value = Vec<f64>> {
    (-1.0f64..1.0, 0.0f64..2.0 * PI).prop_map(|(z, phi)| {
        let r = (1.0 - z * z).sqrt();
        vec![r * phi.cos(), r * phi.sin(), z]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn eigenvalues_scale_inversely_with_density(density in mesh_and_density(), log_c in -3.0f64..3.0, k in 1usize..=4) {
        scale_invariance(density, log_c, k)?;
    }

    #[test]
    fn heavier_density_lowers_eigenvalues(density in mesh_and_density(), extra in extra_mass()) {
        monotonicity(density, extra)?;
    }

    #[test]
    fn index_at_kth_eigenvalue_is_at_most_k(density in mesh_and_density(), k in 1usize..=5) {
        index_bound(density, k)?;
    }

    #[test]
    fn constrained_minimum_matches_the_spectrum(density in mesh_and_density(), k in 1usize..=4) {
        constrained_consistency(density, k)?;
    }

    #[test]
    fn projection_matches_exhaustive_search(instance in projection_instance()) {
        projection(instance)?;
    }

    #[test]
    fn eigenmap_rank_is_bounded_by_the_cluster(
        (sphere, values) in mesh_and_density(),
        k in 1usize..=4,
    ) {
        let mesh = small_mesh(sphere);
        let s = solve(&mesh, &values, k + 3);
        let tol = 1e-2;
        let cluster = cluster_of(&s.eigenvalues, tol, k);
        let map = extract_eigenmap(&s, k, tol, 1e-2).unwrap();
        prop_assert!(map.rank >= 1 && map.rank <= cluster.len() && map.rank <= cluster.end - k);
    }

    #[test]
    fn dirichlet_energy_equals_integrated_energy_density(
        (sphere, values) in mesh_and_density(),
        coefficients in prop::collection::vec(-1.0f64..1.0, 9),
    ) {
        let mesh = small_mesh(sphere);
        let s = solve(&mesh, &values, 3);
        let components: Vec<Vec<f64>> = coefficients
            .chunks(3)
            .map(|c| (0..mesh.num_vertices()).map(|v| (0..3).map(|i| c[i] * s.eigenvectors[i + 1][v]).sum()).collect())
            .collect();
        let k = mesh.assemble_stiffness();
        let dirichlet: f64 = components.iter().map(|u| k.bilinear(u, u)).sum();
        let integrated: f64 = energy_density(&mesh, &components).iter().zip(mesh.cell_volumes()).map(|(e, v)| e * v).sum();
        prop_assert!((dirichlet - integrated).abs() <= 1e-6 * dirichlet.max(1e-300));
    }

    #[test]
    fn balanced_center_is_label_free(
        points in prop::collection::vec(unit_vector(), 4..12),
        raw_weights in prop::collection::vec(0.5f64..2.0, 12),
        rotation in 1usize..11,
    ) {
        let weights = &raw_weights[..points.len()];
        let total: f64 = weights.iter().sum();
        prop_assume!(weights.iter().all(|w| *w < 0.45 * total));
        let c = center_of_mass_normalize(&points, weights).unwrap();
        prop_assert!(c.residual < 1e-10);
        let shift = rotation % points.len();
        let mut p2 = points.clone();
        let mut w2 = weights.to_vec();
        p2.rotate_left(shift);
        w2.rotate_left(shift);
        let c2 = center_of_mass_normalize(&p2, &w2).unwrap();
        for (a, b) in c.p.iter().zip(&c2.p) {
            prop_assert!((a - b).abs() < 1e-8, "{:?} vs {:?}", c.p, c2.p);
        }
    }
}
