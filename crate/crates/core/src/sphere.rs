//! Closed-form quantities on round spheres: volumes, generalized equator
//! maps, Jacobi-operator spectra, analytic indices, and the conformal
//! center-of-mass normalization.

use serde::Serialize;
use thiserror::Error;

use crate::eigen::EigenError;
use crate::mesh::{Density, MeshError, SimplicialMesh};
use crate::quadrature::tanh_sinh_unit;
use crate::sparse::dot;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("invalid equator map (m = {m}, k = {k}): need m >= 3 and k <= m - 3")]
    InvalidSpec { m: usize, k: usize },
    #[error("index infinite (n = {n} < 6)")]
    IndexInfinite { n: usize },
    #[error("coordinate t = {0} outside [0, 1)")]
    OutOfRange(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("center of mass did not converge (best residual {residual:e})")]
    NotConverged { residual: f64 },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
}

/// Volume of the unit round `m`-sphere, `2π^{(m+1)/2} / Γ((m+1)/2)`.
///
/// Evaluated through `σ_m = 2π σ_{m-2} / (m-1)` from `σ_0 = 2`, `σ_1 = 2π`,
/// which keeps the rounding error to a few ulps.
pub fn sphere_volume(m: usize) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut v = if m % 2 == 0 { 2.0 } else { two_pi };
    for d in (2 + m % 2..=m).step_by(2) {
        v *= two_pi / (d as f64 - 1.0);
    }
    v
}

/// Radial projection `S^m → S^n` away from a great `k`-sphere, `n = m - 1 - k`.
///
/// Points are written as `(√(1-t) θ, √t ω)` with `θ ∈ S^n`, `ω ∈ S^k`,
/// `t ∈ [0, 1]`; the map sends such a point to `θ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EquatorMap {
    m: usize,
    k: usize,
}

impl EquatorMap {
    pub fn new(m: usize, k: usize) -> Result<Self, OracleError> {
        if m < 3 || k + 3 > m {
            return Err(OracleError::InvalidSpec { m, k });
        }
        Ok(Self { m, k })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Target sphere dimension `m - 1 - k`.
    pub fn n(&self) -> usize {
        self.m - 1 - self.k
    }

    /// Dirichlet energy `n(m-1)/(n-1) σ_m`.
    pub fn energy(&self) -> f64 {
        let (n, m) = (self.n() as f64, self.m as f64);
        n * (m - 1.0) / (n - 1.0) * sphere_volume(self.m)
    }

    /// Energy density `|dΣ|² = n / (1 - t)`.
    pub fn density(&self, t: f64) -> Result<f64, OracleError> {
        if !(0.0..1.0).contains(&t) {
            return Err(OracleError::OutOfRange(t));
        }
        Ok(self.n() as f64 / (1.0 - t))
    }

    /// Volume element in the `t` coordinate after integrating out `θ` and `ω`.
    pub fn volume_weight(&self, t: f64) -> f64 {
        self.weight_from(t, 1.0 - t)
    }

    fn weight_from(&self, t: f64, one_minus_t: f64) -> f64 {
        let (n, k) = (self.n() as f64, self.k as f64);
        0.5 * sphere_volume(self.n())
            * sphere_volume(self.k)
            * one_minus_t.powf((n - 1.0) / 2.0)
            * t.powf((k - 1.0) / 2.0)
    }

    /// Energy by numerical integration of the density against the volume weight.
    pub fn energy_by_quadrature(&self, rel_tol: f64) -> f64 {
        let n = self.n() as f64;
        tanh_sinh_unit(|t, c| n / c * self.weight_from(t, c), rel_tol)
    }

    /// Volume of `S^m` from the same coordinate weight (consistency check).
    pub fn volume_by_quadrature(&self, rel_tol: f64) -> f64 {
        tanh_sinh_unit(|t, c| self.weight_from(t, c), rel_tol)
    }
}

/// First `count` eigenvalues `s(s + a + b + 1)` of the Jacobi operator.
pub fn jacobi_spectrum(a: f64, b: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|s| {
            let s = s as f64;
            s * (s + a + b + 1.0)
        })
        .collect()
}

fn binomial(top: i64, bottom: i64) -> u64 {
    if bottom < 0 || top < bottom {
        return 0;
    }
    let bottom = bottom.min(top - bottom);
    (0..bottom).fold(1u64, |acc, i| acc * (top - i) as u64 / (i + 1) as u64)
}

/// Dimension of degree-`ell` spherical harmonics on `S^k`.
pub fn harmonic_dim(k: usize, ell: usize) -> u64 {
    let (k, l) = (k as i64, ell as i64);
    binomial(k + l, k) - binomial(k + l - 2, k)
}

/// Least root of `α² - (n-1)α + n = 0`, if real.
pub fn least_root(n: usize) -> Option<f64> {
    let nf = n as f64;
    let disc = nf * nf - 6.0 * nf + 1.0;
    (disc >= 0.0).then(|| ((nf - 1.0) - disc.sqrt()) / 2.0)
}

/// Contribution of one angular degree to the index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeContribution {
    pub ell: usize,
    /// Number of integers `s >= 0` strictly below the threshold.
    pub count: usize,
    pub multiplicity: u64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JacobiIndexReport {
    pub alpha_minus: f64,
    pub per_ell: Vec<ModeContribution>,
    pub total: u64,
    /// Set when a threshold lies within 1e-9 of an integer; counting is strict.
    pub boundary_flag: bool,
}

fn strict_count(threshold: f64) -> (usize, bool) {
    let near = (threshold - threshold.round()).abs() < 1e-9;
    let count = if threshold <= 0.0 {
        0
    } else if near {
        threshold.round() as usize
    } else {
        threshold.ceil() as usize
    };
    (count, near)
}

/// Analytic index of an equator map, counted mode by mode.
pub fn analytic_index(map: &EquatorMap) -> Result<JacobiIndexReport, OracleError> {
    let n = map.n();
    let alpha = match least_root(n) {
        Some(a) if n >= 6 => a,
        _ => return Err(OracleError::IndexInfinite { n }),
    };
    if map.k() == 0 {
        let (count, flag) = strict_count(alpha);
        return Ok(JacobiIndexReport {
            alpha_minus: alpha,
            per_ell: vec![ModeContribution { ell: 0, count, multiplicity: 1, threshold: alpha }],
            total: count as u64,
            boundary_flag: flag,
        });
    }
    let mut per_ell = Vec::new();
    let mut flag = false;
    for ell in 0.. {
        let threshold = (alpha - ell as f64) / 2.0;
        let (count, near) = strict_count(threshold);
        flag |= near;
        if threshold <= 0.0 && !near {
            break;
        }
        per_ell.push(ModeContribution { ell, count, multiplicity: harmonic_dim(map.k(), ell), threshold });
        if threshold <= 0.0 {
            break;
        }
    }
    let total = per_ell.iter().map(|c| c.count as u64 * c.multiplicity).sum();
    Ok(JacobiIndexReport { alpha_minus: alpha, per_ell, total, boundary_flag: flag })
}

/// Conformal dilation `T_p(x) = (1-|p|²)(x+p)/|x+p|² + p` of the unit sphere.
pub fn conformal_map(p: &[f64], x: &[f64]) -> Vec<f64> {
    let xp: Vec<f64> = x.iter().zip(p).map(|(a, b)| a + b).collect();
    let s = (1.0 - dot(p, p)) / dot(&xp, &xp);
    xp.iter().zip(p).map(|(v, pi)| s * v + pi).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CenterOfMass {
    pub p: Vec<f64>,
    /// `‖Σ w_i T_p(x_i)‖ / Σ w_i` at the returned point.
    pub residual: f64,
    pub iterations: usize,
}

fn weighted_center(p: &[f64], points: &[Vec<f64>], weights: &[f64], total: f64) -> Vec<f64> {
    let mut acc = vec![0.0; p.len()];
    for (x, w) in points.iter().zip(weights) {
        if *w == 0.0 {
            continue;
        }
        for (a, y) in acc.iter_mut().zip(conformal_map(p, x)) {
            *a += w * y;
        }
    }
    acc.iter_mut().for_each(|a| *a /= total);
    acc
}

/// Finds `p` in the open unit ball with `Σ w_i T_p(x_i) = 0`.
pub fn center_of_mass_normalize(points: &[Vec<f64>], weights: &[f64]) -> Result<CenterOfMass, OracleError> {
    const TOL: f64 = 1e-10;
    const MAX_ITER: usize = 20_000;
    if points.is_empty() || points.len() != weights.len() {
        return Err(OracleError::InvalidInput("points and weights must be nonempty and equal in length".into()));
    }
    let d = points[0].len();
    if points.iter().any(|x| x.len() != d || (dot(x, x) - 1.0).abs() > 1e-9) {
        return Err(OracleError::InvalidInput("points must be unit vectors of one dimension".into()));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(OracleError::InvalidInput("weights must be finite and nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(OracleError::InvalidInput("weights must have positive sum".into()));
    }
    // an atom carrying at least half of the mass cannot be balanced
    for (i, x) in points.iter().enumerate() {
        let atom: f64 = points
            .iter()
            .zip(weights)
            .filter(|(y, _)| y.iter().zip(x).all(|(a, b)| (a - b).abs() < 1e-12))
            .map(|(_, w)| w)
            .sum();
        if weights[i] > 0.0 && atom >= 0.5 * total * (1.0 - 1e-12) {
            let antipodal_pair = atom <= 0.5 * total * (1.0 + 1e-12)
                && points.iter().zip(weights).all(|(y, w)| {
                    *w == 0.0
                        || y.iter().zip(x).all(|(a, b)| (a - b).abs() < 1e-12)
                        || y.iter().zip(x).all(|(a, b)| (a + b).abs() < 1e-12)
                });
            if !antipodal_pair {
                return Err(OracleError::InvalidInput(format!(
                    "point {i} carries {atom} of total weight {total}"
                )));
            }
        }
    }

    let mut p = vec![0.0; d];
    let mut r = weighted_center(&p, points, weights, total);
    let mut rn = dot(&r, &r).sqrt();
    let mut eta = 0.5;
    let mut iterations = 0;
    while rn > TOL && iterations < MAX_ITER {
        iterations += 1;
        let trial: Vec<f64> = p.iter().zip(&r).map(|(a, b)| a - eta * b).collect();
        let inside = dot(&trial, &trial) < 1.0;
        let accepted = inside.then(|| {
            let rt = weighted_center(&trial, points, weights, total);
            let rtn = dot(&rt, &rt).sqrt();
            (rtn < rn).then_some((rt, rtn))
        });
        match accepted.flatten() {
            Some((rt, rtn)) => {
                p = trial;
                r = rt;
                rn = rtn;
                eta = (eta * 1.5).min(4.0);
            }
            None => {
                eta *= 0.5;
                if eta < 1e-300 {
                    break;
                }
            }
        }
    }
    if rn > TOL {
        return Err(OracleError::NotConverged { residual: rn });
    }
    Ok(CenterOfMass { p, residual: rn, iterations })
}

/// Upper bound on `λ_1 · mass` from conformally balanced coordinate functions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HerschBound {
    /// `mass · Σ_i ψ_iᵀKψ_i / Σ_i ψ_iᵀMψ_i`.
    pub bound: f64,
    /// `mass · ψ_iᵀKψ_i / ψ_iᵀMψ_i` for each coordinate.
    pub per_coordinate: Vec<f64>,
    /// `m σ_m`, the value for the round measure.
    pub reference: f64,
    pub center: CenterOfMass,
}

/// Evaluates the balanced coordinate test functions on a sphere mesh.
pub fn hersch_upper_bound_check(
    mesh: &SimplicialMesh,
    density: &Density,
    k_test: usize,
) -> Result<HerschBound, OracleError> {
    if k_test != 1 {
        return Err(OracleError::InvalidInput(format!("only k_test = 1 is supported, got {k_test}")));
    }
    if mesh.period().is_some() || mesh.vertices()[0].len() != mesh.dim() + 1 {
        return Err(OracleError::InvalidInput("mesh is not a round sphere".into()));
    }
    let stiffness = mesh.assemble_stiffness();
    let mass_matrix = mesh.assemble_mass(density)?;
    let nv = mesh.num_vertices();
    let weights = mass_matrix.mul_vec(&vec![1.0; nv]);
    let points: Vec<Vec<f64>> = mesh
        .vertices()
        .iter()
        .map(|v| {
            let r = dot(v, v).sqrt();
            v.iter().map(|x| x / r).collect()
        })
        .collect();
    let center = center_of_mass_normalize(&points, &weights)?;
    let images: Vec<Vec<f64>> = points.iter().map(|x| conformal_map(&center.p, x)).collect();
    let mass = density.mass(mesh);
    let mut energy_sum = 0.0;
    let mut norm_sum = 0.0;
    let mut per_coordinate = Vec::with_capacity(mesh.dim() + 1);
    for i in 0..=mesh.dim() {
        let psi: Vec<f64> = images.iter().map(|y| y[i]).collect();
        let e = stiffness.bilinear(&psi, &psi);
        let n = mass_matrix.bilinear(&psi, &psi);
        energy_sum += e;
        norm_sum += n;
        per_coordinate.push(mass * e / n);
    }
    Ok(HerschBound {
        bound: mass * energy_sum / norm_sum,
        per_coordinate,
        reference: mesh.dim() as f64 * sphere_volume(mesh.dim()),
        center,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn harmonic_dimensions() {
        // S^2: 2l+1
        for l in 0..6 {
            assert_eq!(harmonic_dim(2, l), 2 * l as u64 + 1);
        }
        // S^1: 1, 2, 2, ...
        assert_eq!(harmonic_dim(1, 0), 1);
        assert_eq!(harmonic_dim(1, 3), 2);
        assert_eq!(harmonic_dim(0, 1), 1);
        assert_eq!(harmonic_dim(0, 2), 0);
        // l = 1 on S^k has k+1 harmonics
        assert_eq!(harmonic_dim(5, 1), 6);
    }

    #[test]
    fn strict_counting_excludes_boundary() {
        assert_eq!(strict_count(1.0), (1, true));
        assert_eq!(strict_count(0.5), (1, false));
        assert_eq!(strict_count(0.0), (0, true));
        assert_eq!(strict_count(-0.3), (0, false));
        assert_eq!(strict_count(1.5858), (2, false));
    }

    #[test]
    fn equator_density_values() {
        let map = EquatorMap::new(7, 0).unwrap();
        assert_eq!(map.density(0.0).unwrap(), 6.0);
        assert_eq!(map.density(0.5).unwrap(), 12.0);
        assert!(map.density(1.0).is_err());
        assert!(EquatorMap::new(5, 3).is_err());
    }

    #[test]
    fn coordinate_weight_reproduces_sphere_volume() {
        for m in 3..=8 {
            for k in 0..=m - 3 {
                let map = EquatorMap::new(m, k).unwrap();
                let v = map.volume_by_quadrature(1e-14);
                assert!((v / sphere_volume(m) - 1.0).abs() < 1e-10, "m={m} k={k}");
            }
        }
        assert!((sphere_volume(2) - 4.0 * PI).abs() < 1e-14);
    }

    #[test]
    fn volume_matches_gamma_form() {
        use statrs::function::gamma::gamma;
        for m in 1..=20 {
            let h = (m as f64 + 1.0) / 2.0;
            let closed = 2.0 * PI.powf(h) / gamma(h);
            assert!((sphere_volume(m) / closed - 1.0).abs() < 1e-13, "m={m}");
        }
        assert!((sphere_volume(3) - 2.0 * PI * PI).abs() < 1e-14);
        assert!((sphere_volume(7) - PI.powi(4) / 3.0).abs() < 1e-13);
    }

    #[test]
    fn infinite_index_below_six() {
        let map = EquatorMap::new(6, 0).unwrap();
        assert_eq!(analytic_index(&map).unwrap_err(), OracleError::IndexInfinite { n: 5 });
    }

    #[test]
    fn conformal_map_preserves_sphere() {
        let p = [0.3, -0.2, 0.5];
        let x = [0.0, 0.6, 0.8];
        let y = conformal_map(&p, &x);
        assert!((dot(&y, &y) - 1.0).abs() < 1e-14);
        // T_0 is the identity
        assert_eq!(conformal_map(&[0.0; 3], &x), x.to_vec());
    }

    #[test]
    fn heavy_atom_rejected() {
        let pts = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(matches!(
            center_of_mass_normalize(&pts, &[2.0, 1.0]),
            Err(OracleError::InvalidInput(_))
        ));
        // an antipodal pair with equal weights is already balanced
        let pair = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        let c = center_of_mass_normalize(&pair, &[1.0, 1.0]).unwrap();
        assert_eq!(c.p, vec![0.0, 0.0]);
    }
}
