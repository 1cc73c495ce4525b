use std::f64::consts::PI;

use eigenmeasure::eigen::{solve_eigen, EigenOptions};
use eigenmeasure::mesh::{build_flat_torus, build_round_sphere, Density, SimplicialMesh};
use eigenmeasure::sparse::CsrMatrix;

fn uniform_mass(mesh: &SimplicialMesh) -> CsrMatrix {
    mesh.assemble_mass(&Density::uniform(mesh, 1.0).unwrap()).unwrap()
}

/// Edge length of the icosahedron inscribed in the unit sphere.
fn icosahedron_edge() -> f64 {
    4.0 / (10.0 + 2.0 * 5f64.sqrt()).sqrt()
}

#[test]
fn torus_volumes_are_exact() {
    let t8 = build_flat_torus(2, 8, 2.0 * PI).unwrap();
    assert!((t8.total_volume() - 4.0 * PI * PI).abs() < 1e-12);
    let t16 = build_flat_torus(2, 16, 2.0 * PI).unwrap();
    assert!((t16.total_volume() - t8.total_volume()).abs() < 1e-12);
    let cube = build_flat_torus(3, 6, 1.0).unwrap();
    assert!((cube.total_volume() - 1.0).abs() < 1e-13);
    cube.check_closed().unwrap();
}

#[test]
fn icosahedron_area_is_exact() {
    let ico = build_round_sphere(2, 0).unwrap();
    assert_eq!(ico.num_cells(), 20);
    let a = icosahedron_edge();
    assert!((ico.total_volume() - 20.0 * 3f64.sqrt() / 4.0 * a * a).abs() < 1e-13);
}

#[test]
fn sphere_volumes_converge() {
    let s2 = build_round_sphere(2, 4).unwrap();
    let deficit = 1.0 - s2.total_volume() / (4.0 * PI);
    assert!(deficit > 0.0 && deficit < 5e-3, "S2 level 4 deficit {deficit}");

    // inscribed polytopes: deficits shrink by about 4 per level once the
    // coarsest cross-polytope is refined away
    let s3: Vec<f64> = (1..=4)
        .map(|l| 1.0 - build_round_sphere(3, l).unwrap().total_volume() / (2.0 * PI * PI))
        .collect();
    assert!(s3[2] > 0.0 && s3[2] < 0.035, "S3 level 3 deficit {}", s3[2]);
    assert!(s3[0] / s3[1] > 2.5);
    for w in s3[1..].windows(2) {
        let rate = w[0] / w[1];
        assert!((3.0..5.0).contains(&rate), "S3 deficit ratio {rate}");
    }
}

#[test]
fn generated_meshes_are_closed() {
    for level in 0..=3 {
        build_round_sphere(2, level).unwrap().check_closed().unwrap();
    }
    for level in 0..=2 {
        build_round_sphere(3, level).unwrap().check_closed().unwrap();
    }
    for n in [3, 4, 9] {
        build_flat_torus(2, n, 1.0).unwrap().check_closed().unwrap();
        build_flat_torus(3, n, 1.0).unwrap().check_closed().unwrap();
    }
}

#[test]
fn stiffness_is_symmetric_and_annihilates_constants() {
    for mesh in [build_flat_torus(2, 8, 2.0 * PI).unwrap(), build_round_sphere(2, 2).unwrap()] {
        let k = mesh.assemble_stiffness();
        assert!(k.asymmetry() < 1e-14);
        let k1 = k.mul_vec(&vec![1.0; mesh.num_vertices()]);
        assert!(k1.iter().all(|v| v.abs() < 1e-12), "{:?}", k1.iter().fold(0.0f64, |a, b| a.max(b.abs())));
    }
}

#[test]
fn constants_are_the_whole_kernel() {
    let mesh = build_flat_torus(2, 8, 2.0 * PI).unwrap();
    let spectrum =
        solve_eigen(&mesh.assemble_stiffness(), &uniform_mass(&mesh), 1, &EigenOptions::default()).unwrap();
    assert!(spectrum.eigenvalues[0].abs() < 1e-10);
    assert!(spectrum.eigenvalues[1] > 0.9);
}

#[test]
fn coordinate_rayleigh_quotient_on_sphere() {
    let mesh = build_round_sphere(2, 4).unwrap();
    let k = mesh.assemble_stiffness();
    let m = uniform_mass(&mesh);
    let x: Vec<f64> = mesh.vertices().iter().map(|v| v[0]).collect();
    let q = k.bilinear(&x, &x) / m.bilinear(&x, &x);
    assert!((q / 2.0 - 1.0).abs() < 1e-2, "Rayleigh quotient {q}");
}

#[test]
fn mass_totals_and_linearity() {
    let mesh = build_flat_torus(2, 8, 2.0 * PI).unwrap();
    let ones = vec![1.0; mesh.num_vertices()];
    assert!((uniform_mass(&mesh).bilinear(&ones, &ones) - 4.0 * PI * PI).abs() < 1e-12);

    let n = mesh.num_cells();
    let r1: Vec<f64> = (0..n).map(|c| 1.0 + (c % 5) as f64).collect();
    let r2: Vec<f64> = (0..n).map(|c| 0.5 + (c % 3) as f64).collect();
    let (a, b) = (2.5, 0.75);
    let mix: Vec<f64> = r1.iter().zip(&r2).map(|(x, y)| a * x + b * y).collect();
    let m1 = mesh.assemble_mass(&Density::uncapped(r1).unwrap()).unwrap();
    let m2 = mesh.assemble_mass(&Density::uncapped(r2).unwrap()).unwrap();
    let mm = mesh.assemble_mass(&Density::uncapped(mix).unwrap()).unwrap();
    for (i, j, v) in mm.entries() {
        let expect = a * m1.get(i, j) + b * m2.get(i, j);
        assert!((v - expect).abs() <= 1e-15 * expect.abs().max(1.0));
    }
}

#[test]
fn half_zero_density_leaves_a_kernel_on_unsupported_vertices() {
    let mesh = build_flat_torus(2, 8, 2.0 * PI).unwrap();
    // zero density on cells whose centroid has x below pi
    let values: Vec<f64> = (0..mesh.num_cells()).map(|c| if mesh.cell_centroid(c)[0] < PI { 0.0 } else { 1.0 }).collect();
    let supported: Vec<bool> = {
        let mut s = vec![false; mesh.num_vertices()];
        for (cell, rho) in mesh.cells().iter().zip(&values) {
            if *rho > 0.0 {
                cell.iter().for_each(|&v| s[v] = true);
            }
        }
        s
    };
    let m = mesh.assemble_mass(&Density::uncapped(values).unwrap()).unwrap();
    let unsupported = supported.iter().filter(|s| !**s).count();
    assert!(unsupported > 0);
    assert_eq!(eigenmeasure::eigen::mass_rank(&m), mesh.num_vertices() - unsupported);
    for (v, s) in supported.iter().enumerate() {
        let row_sum: f64 = m.row(v).map(|(_, x)| x.abs()).sum();
        assert_eq!(row_sum == 0.0, !s);
    }
}

#[test]
fn scaling_density_scales_mass_exactly() {
    let mesh = build_round_sphere(2, 2).unwrap();
    let m = uniform_mass(&mesh);
    let m3 = mesh.assemble_mass(&Density::uniform(&mesh, 3.0).unwrap()).unwrap();
    for (i, j, v) in m3.entries() {
        assert!((v - 3.0 * m.get(i, j)).abs() <= 1e-16 * v.abs().max(1e-300) * 4.0);
    }
}

#[test]
fn torus_first_eigenvalue_converges_at_second_order() {
    let errors: Vec<f64> = [8, 16, 32]
        .iter()
        .map(|&n| {
            let mesh = build_flat_torus(2, n, 2.0 * PI).unwrap();
            let s = solve_eigen(&mesh.assemble_stiffness(), &uniform_mass(&mesh), 1, &EigenOptions::default()).unwrap();
            (s.eigenvalues[1] - 1.0).abs()
        })
        .collect();
    for w in errors.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((1.8..2.2).contains(&order), "observed order {order} from {errors:?}");
    }
}
