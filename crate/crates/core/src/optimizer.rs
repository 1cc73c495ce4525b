//! Ascent of `λ_k · mass` over capped densities, the bang-bang optimality
//! test, and extraction of sphere-valued maps from eigenvalue clusters.
//!
//! The ascent works with cell masses `x_c = ρ_c · vol_c`. For a
//! stiffness-normalized eigenfunction `φ` the derivative of `1/λ` along
//! `x_c` is the cell mean `g_c` of `φ²`, so the derivative of `λ · mass` is
//! `λ (1 - λ g_c)`. Every member of a cluster has `Σ x_c g_c = 1/λ`, hence
//! the minimum-norm hull element in the `L²(μ)` norm is the steepest ascent
//! direction for relative changes of the cell masses.

use std::ops::Range;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::eigen::{cluster_of, solve_eigen, spectral_index, EigenError, EigenOptions, Spectrum};
use crate::mesh::{Density, MeshError, SimplicialMesh};
use crate::sparse::CsrMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("cap {cap} times volume {volume} must exceed 1 for a feasible probability density")]
    InfeasibleCap { cap: f64, volume: f64 },
    #[error("capped simplex is empty: upper bounds sum to {capacity} < {total}")]
    EmptySimplex { capacity: f64, total: f64 },
    #[error("non-finite eigenvalue at iteration {0}")]
    NonFinite(usize),
    #[error("eigenvalue {k} is not positive ({value})")]
    NonPositive { k: usize, value: f64 },
    #[error("index {k} is outside the computed spectrum of {len} pairs")]
    OutOfRange { k: usize, len: usize },
    #[error("empty eigenvalue cluster")]
    EmptyCluster,
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Hull element `Σ c_i φ_i²` of squared stiffness-normalized eigenfunctions
/// over the cluster of `λ_k` whose supergradient `1 - λ_k Σ c_i φ_i²` (at unit
/// mass) has minimum `L²(μ)` norm.
///
/// The hull ranges over all unit vectors of the cluster eigenspace, so it is
/// parametrized by trace-one PSD matrices `G` on the returned basis; `G`'s
/// eigen-decomposition gives the convex weights and the rotated eigenfunctions.
#[derive(Debug, Clone)]
pub struct Supergradient {
    pub cluster: Range<usize>,
    pub gram: DMatrix<f64>,
    /// Convex weights, the eigenvalues of `gram`.
    pub weights: Vec<f64>,
    /// Cell means of `Σ c_i φ_i²`.
    pub values: Vec<f64>,
}

pub fn supergradient_direction(
    mesh: &SimplicialMesh,
    density: &Density,
    spectrum: &Spectrum,
    k: usize,
    cluster_tol: f64,
) -> Result<Supergradient, OptimizerError> {
    if k >= spectrum.len() {
        return Err(OptimizerError::OutOfRange { k, len: spectrum.len() });
    }
    let cluster = cluster_of(&spectrum.eigenvalues, cluster_tol, k);
    if cluster.is_empty() {
        return Err(OptimizerError::EmptyCluster);
    }
    let mut basis = Vec::with_capacity(cluster.len());
    for i in cluster.clone() {
        let lambda = spectrum.eigenvalues[i];
        if !(lambda > 0.0) {
            return Err(OptimizerError::NonPositive { k: i, value: lambda });
        }
        let s = lambda.sqrt();
        basis.push(spectrum.eigenvectors[i].iter().map(|v| v / s).collect::<Vec<f64>>());
    }
    mesh.check_density_len(density.values())?;
    let products = cell_products(mesh, &basis);
    let cell_mass: Vec<f64> = density.values().iter().zip(mesh.cell_volumes()).map(|(r, v)| r * v).collect();
    // supergradients of λ_k · mass are 1 - λ_k g with the mass normalized to 1
    let scale = spectrum.eigenvalues[k] * density.mass(mesh);
    let shifted: Vec<((usize, usize), Vec<f64>)> = products
        .iter()
        .map(|&((i, j), ref w)| {
            let unit = if i == j { 1.0 } else { 0.0 };
            ((i, j), w.iter().map(|x| unit - scale * x).collect())
        })
        .collect();
    let gram = min_norm_spectraplex(&shifted, &cell_mass);
    let values = apply_gram(&products, &gram, mesh.num_cells());
    let weights = SymmetricEigen::new(gram.clone()).eigenvalues.iter().map(|w| w.max(0.0)).collect();
    Ok(Supergradient { cluster, gram, weights, values })
}

/// Cell means of `φ_i φ_j` for `i ≤ j`, keyed in row-major upper order.
fn cell_products(mesh: &SimplicialMesh, basis: &[Vec<f64>]) -> Vec<((usize, usize), Vec<f64>)> {
    let r = basis.len();
    let scale = 1.0 / ((mesh.dim() + 1) * (mesh.dim() + 2)) as f64;
    let mut out = Vec::with_capacity(r * (r + 1) / 2);
    for i in 0..r {
        for j in i..r {
            let (a, b) = (&basis[i], &basis[j]);
            let values = mesh
                .cells()
                .iter()
                .map(|vs| {
                    // P1 cell mean of a product: (Σ a_v b_v + Σa Σb) / ((m+1)(m+2))
                    let (mut ab, mut sa, mut sb) = (0.0, 0.0, 0.0);
                    for &v in vs {
                        ab += a[v] * b[v];
                        sa += a[v];
                        sb += b[v];
                    }
                    (ab + sa * sb) * scale
                })
                .collect();
            out.push(((i, j), values));
        }
    }
    out
}

fn apply_gram(products: &[((usize, usize), Vec<f64>)], gram: &DMatrix<f64>, cells: usize) -> Vec<f64> {
    let mut values = vec![0.0; cells];
    for ((i, j), w) in products {
        let c = if i == j { gram[(*i, *j)] } else { 2.0 * gram[(*i, *j)] };
        values.iter_mut().zip(w).for_each(|(v, x)| *v += c * x);
    }
    values
}

/// Trace-one PSD `G` minimizing `Σ_c x_c (Σ_ij G_ij w_ij,c)²` by accelerated
/// projected gradient.
fn min_norm_spectraplex(products: &[((usize, usize), Vec<f64>)], cell_mass: &[f64]) -> DMatrix<f64> {
    let r = products.iter().map(|((_, j), _)| j + 1).max().unwrap_or(0);
    if r == 1 {
        return DMatrix::identity(1, 1);
    }
    // objective in the upper-triangle coordinates with off-diagonals doubled
    let p = products.len();
    let q = DMatrix::from_fn(p, p, |a, b| {
        products[a].1.iter().zip(&products[b].1).zip(cell_mass).map(|((x, y), w)| w * x * y).sum::<f64>()
    });
    let factor = |a: usize| if products[a].0 .0 == products[a].0 .1 { 1.0 } else { 2.0 };
    let objective = |g: &DMatrix<f64>| -> (f64, DMatrix<f64>) {
        let coords = DVector::from_fn(p, |a, _| factor(a) * g[products[a].0]);
        let qc = &q * &coords;
        let mut grad = DMatrix::<f64>::zeros(r, r);
        for (a, ((i, j), _)) in products.iter().enumerate() {
            // d/dG_ij of cᵀQc; symmetric split of the doubled off-diagonal
            grad[(*i, *j)] = 2.0 * qc[a];
            grad[(*j, *i)] = 2.0 * qc[a];
        }
        (coords.dot(&qc), grad)
    };
    // Lipschitz bound of the gradient in the Frobenius metric
    let lipschitz = 8.0 * SymmetricEigen::new(q.clone()).eigenvalues.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if !(lipschitz > 0.0) {
        return DMatrix::identity(r, r) / r as f64;
    }
    let mut x = DMatrix::identity(r, r) / r as f64;
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut best = (objective(&x).0, x.clone());
    for _ in 0..20000 {
        let (_, grad) = objective(&y);
        let next = project_spectraplex(&(&y - grad / lipschitz));
        let value = objective(&next).0;
        if value < best.0 {
            best = (value, next.clone());
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let moved = (&next - &x).norm();
        y = &next + (&next - &x) * ((t - 1.0) / t_next);
        x = next;
        t = t_next;
        if moved < 1e-14 {
            break;
        }
    }
    best.1
}

/// Frobenius projection onto `{G ⪰ 0, tr G = 1}`.
fn project_spectraplex(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let ones = vec![1.0; values.len()];
    let clipped = project_capped_simplex(&values, &ones, 1.0).expect("unit simplex is nonempty");
    &eig.eigenvectors * DMatrix::from_diagonal(&DVector::from_vec(clipped)) * eig.eigenvectors.transpose()
}

/// Euclidean projection of `v` onto `{x : 0 ≤ x ≤ upper, Σ x = total}`.
///
/// The solution is `clamp(v - τ, 0, upper)`; the piecewise-linear sum is
/// inverted exactly between sorted breakpoints.
pub fn project_capped_simplex(v: &[f64], upper: &[f64], total: f64) -> Result<Vec<f64>, OptimizerError> {
    let capacity: f64 = upper.iter().sum();
    if !(total >= 0.0) || capacity < total {
        return Err(OptimizerError::EmptySimplex { capacity, total });
    }
    if v.is_empty() {
        return Ok(Vec::new());
    }
    let clamp_sum = |tau: f64| -> f64 { v.iter().zip(upper).map(|(x, u)| (x - tau).clamp(0.0, *u)).sum() };
    let mut breaks: Vec<f64> = v.iter().zip(upper).flat_map(|(x, u)| [*x, x - u]).filter(|b| b.is_finite()).collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    // the sum is nonincreasing in τ; find adjacent breakpoints bracketing `total`
    let (mut lo, mut hi) = (0usize, breaks.len() - 1);
    if clamp_sum(breaks[lo]) < total {
        // only reachable when some upper bound is infinite
        let slope = upper.iter().filter(|u| u.is_infinite()).count() as f64;
        let tau = breaks[0] - (total - clamp_sum(breaks[0])) / slope;
        return Ok(v.iter().zip(upper).map(|(x, u)| (x - tau).clamp(0.0, *u)).collect());
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if clamp_sum(breaks[mid]) >= total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (a, b) = (breaks[lo], breaks[hi]);
    let (fa, fb) = (clamp_sum(a), clamp_sum(b));
    let tau = if fa == fb { a } else { a + (fa - total) / (fa - fb) * (b - a) };
    let mut x: Vec<f64> = v.iter().zip(upper).map(|(x, u)| (x - tau).clamp(0.0, *u)).collect();
    // remove the rounding residue on a free coordinate
    let residue = total - x.iter().sum::<f64>();
    if let Some(i) = (0..x.len()).filter(|&i| x[i] > 0.0 && x[i] < upper[i]).max_by(|&i, &j| x[i].total_cmp(&x[j])) {
        x[i] = (x[i] + residue).clamp(0.0, upper[i]);
    }
    Ok(x)
}

/// Tolerances of the bang-bang test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateOptions {
    pub cluster_tol: f64,
    /// Cells within this relative distance of the maximum are exempt.
    pub tol_s: f64,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        Self { cluster_tol: 1e-2, tol_s: 1e-2 }
    }
}

/// Mass of cells below the cap where the hull combination is not near its maximum.
pub fn bang_bang_certificate(
    mesh: &SimplicialMesh,
    density: &Density,
    spectrum: &Spectrum,
    k: usize,
    opts: &CertificateOptions,
) -> Result<f64, OptimizerError> {
    let dir = supergradient_direction(mesh, density, spectrum, k, opts.cluster_tol)?;
    Ok(violation_mass(mesh, density, &dir.values, opts.tol_s))
}

fn violation_mass(mesh: &SimplicialMesh, density: &Density, values: &[f64], tol_s: f64) -> f64 {
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = (1.0 - tol_s) * top;
    let cap = density.cap();
    let violating: f64 = values
        .iter()
        .zip(density.values())
        .zip(mesh.cell_volumes())
        .filter(|((s, &rho), _)| **s < threshold && rho < cap * (1.0 - 1e-12))
        .map(|((_, rho), vol)| rho * vol)
        .sum();
    // adding zero turns the empty sum's -0.0 into 0.0
    violating / density.mass(mesh) + 0.0
}

/// How the ascent starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialDensity {
    Uniform,
    /// Uniform times `1 + amplitude · f` with `f` a seeded combination of low
    /// Laplace eigenfunctions scaled to unit sup norm.
    Perturbed { amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentOptions {
    pub max_iterations: usize,
    pub tol_cert: f64,
    pub certificate: CertificateOptions,
    /// Allowed decrease of `λ̄_k` between accepted iterates.
    pub slack: f64,
    /// Largest relative change of a cell mass in the first trial step.
    pub initial_step: f64,
    pub min_step: f64,
    pub initial: InitialDensity,
    pub eigen: EigenOptions,
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tol_cert: 1e-3,
            certificate: CertificateOptions::default(),
            slack: 1e-10,
            initial_step: 0.5,
            min_step: 1e-9,
            initial: InitialDensity::Uniform,
            eigen: EigenOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub lambda_bar: f64,
    pub certificate: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Certified,
    Budget,
    Stalled,
}

#[derive(Debug, Clone)]
pub struct AscentState {
    pub density: Density,
    pub k: usize,
    pub history: Vec<HistoryEntry>,
    pub step_rule: String,
    pub stop: StopReason,
    pub spectrum: Spectrum,
    pub lambda_bar: f64,
    pub certificate: f64,
}

struct Evaluation {
    spectrum: Spectrum,
    lambda_bar: f64,
    direction: Supergradient,
    certificate: f64,
}

struct Objective<'a> {
    mesh: &'a SimplicialMesh,
    stiffness: CsrMatrix,
    k: usize,
    opts: &'a AscentOptions,
}

impl Objective<'_> {
    fn evaluate(&self, density: &Density, iteration: usize) -> Result<Evaluation, OptimizerError> {
        let mass_matrix = self.mesh.assemble_mass(density)?;
        let mass = density.mass(self.mesh);
        let tol = self.opts.certificate.cluster_tol;
        let mut wanted = self.k + 4;
        let spectrum = loop {
            let s = solve_eigen(&self.stiffness, &mass_matrix, wanted.min(mass_rank_limit(&mass_matrix)), &self.opts.eigen)?;
            let cluster = cluster_of(&s.eigenvalues, tol, self.k);
            if cluster.end < s.len() || s.len() == s.available {
                break s;
            }
            wanted *= 2;
        };
        let lambda = spectrum.eigenvalues[self.k];
        if !lambda.is_finite() {
            return Err(OptimizerError::NonFinite(iteration));
        }
        let direction = supergradient_direction(self.mesh, density, &spectrum, self.k, tol)?;
        let certificate = violation_mass(self.mesh, density, &direction.values, self.opts.certificate.tol_s);
        Ok(Evaluation { lambda_bar: lambda * mass, spectrum, direction, certificate })
    }
}

fn mass_rank_limit(m: &CsrMatrix) -> usize {
    crate::eigen::mass_rank(m).saturating_sub(1)
}

/// Maximizes `λ_k · mass` over densities bounded by `cap`, starting as configured.
pub fn maximize(mesh: &SimplicialMesh, k: usize, cap: f64, opts: &AscentOptions) -> Result<AscentState, OptimizerError> {
    let volume = mesh.total_volume();
    if !(cap * volume > 1.0) {
        return Err(OptimizerError::InfeasibleCap { cap, volume });
    }
    let initial = initial_density(mesh, cap, opts)?;
    maximize_from(mesh, k, initial, opts)
}

fn initial_density(mesh: &SimplicialMesh, cap: f64, opts: &AscentOptions) -> Result<Density, OptimizerError> {
    let volume = mesh.total_volume();
    let mut shape = vec![1.0; mesh.num_cells()];
    if let InitialDensity::Perturbed { amplitude } = opts.initial {
        let field = smooth_field(mesh, opts.eigen.seed, &opts.eigen)?;
        shape.iter_mut().zip(&field).for_each(|(s, f)| *s = (1.0 + amplitude * f).max(0.0));
    }
    let masses: Vec<f64> = shape.iter().zip(mesh.cell_volumes()).map(|(s, v)| s * v).collect();
    let total: f64 = masses.iter().sum();
    let upper: Vec<f64> = mesh.cell_volumes().iter().map(|v| cap * v).collect();
    let target: Vec<f64> = masses.iter().map(|m| m / total).collect();
    let x = project_capped_simplex(&target, &upper, 1.0)?;
    debug_assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12 * volume.max(1.0));
    Ok(Density::new(to_density(mesh, &x, cap), cap)?)
}

/// Seeded combination of the first nonconstant eigenfunctions, cell-averaged.
fn smooth_field(mesh: &SimplicialMesh, seed: u64, eigen: &EigenOptions) -> Result<Vec<f64>, OptimizerError> {
    let stiffness = mesh.assemble_stiffness();
    let mass = mesh.assemble_mass(&Density::uniform(mesh, 1.0)?)?;
    let modes = 6.min(mass_rank_limit(&mass));
    let spectrum = solve_eigen(&stiffness, &mass, modes, eigen)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vertex = vec![0.0; mesh.num_vertices()];
    for phi in spectrum.eigenvectors.iter().skip(1).take(modes) {
        let c: f64 = rng.random_range(-1.0..1.0);
        vertex.iter_mut().zip(phi).for_each(|(v, p)| *v += c * p);
    }
    let cell: Vec<f64> = mesh
        .cells()
        .iter()
        .map(|vs| vs.iter().map(|&v| vertex[v]).sum::<f64>() / vs.len() as f64)
        .collect();
    let top = cell.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    Ok(cell.iter().map(|c| if top > 0.0 { c / top } else { 0.0 }).collect())
}

fn to_density(mesh: &SimplicialMesh, masses: &[f64], cap: f64) -> Vec<f64> {
    masses.iter().zip(mesh.cell_volumes()).map(|(x, v)| (x / v).min(cap)).collect()
}

/// Ascent from a given density, which is first rescaled to unit mass.
pub fn maximize_from(
    mesh: &SimplicialMesh,
    k: usize,
    initial: Density,
    opts: &AscentOptions,
) -> Result<AscentState, OptimizerError> {
    let cap = initial.cap();
    let volume = mesh.total_volume();
    if !(cap * volume > 1.0) {
        return Err(OptimizerError::InfeasibleCap { cap, volume });
    }
    let upper: Vec<f64> = mesh.cell_volumes().iter().map(|v| cap * v).collect();
    let total = initial.mass(mesh);
    if !(total > 0.0) {
        return Err(MeshError::Density("initial density has zero mass".into()).into());
    }
    let start: Vec<f64> = initial.values().iter().zip(mesh.cell_volumes()).map(|(r, v)| r * v / total).collect();
    let mut masses = project_capped_simplex(&start, &upper, 1.0)?;
    let mut density = Density::new(to_density(mesh, &masses, cap), cap)?;

    let objective = Objective { mesh, stiffness: mesh.assemble_stiffness(), k, opts };
    let mut current = objective.evaluate(&density, 0)?;
    let mut history = vec![HistoryEntry {
        iteration: 0,
        lambda_bar: current.lambda_bar,
        certificate: current.certificate,
        step: 0.0,
    }];
    let mut step = opts.initial_step;
    let mut stop = StopReason::Budget;

    for iteration in 1..=opts.max_iterations {
        if current.certificate < opts.tol_cert {
            stop = StopReason::Certified;
            break;
        }
        // relative ascent direction 1 - λ g, scaled to unit sup norm
        let lambda = current.spectrum.eigenvalues[k];
        let h: Vec<f64> = current.direction.values.iter().map(|g| 1.0 - lambda * g).collect();
        let spread = h.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if !(spread > 0.0) {
            stop = StopReason::Stalled;
            break;
        }
        let mut accepted = None;
        while step >= opts.min_step {
            let trial: Vec<f64> = masses.iter().zip(&h).map(|(x, hi)| x * (1.0 + step * hi / spread)).collect();
            let trial = project_capped_simplex(&trial, &upper, 1.0)?;
            let trial_density = Density::new(to_density(mesh, &trial, cap), cap)?;
            let eval = objective.evaluate(&trial_density, iteration)?;
            if eval.lambda_bar >= current.lambda_bar - opts.slack * current.lambda_bar.abs() {
                accepted = Some((trial, trial_density, eval));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, trial_density, eval)) = accepted else {
            stop = StopReason::Stalled;
            break;
        };
        masses = trial;
        density = trial_density;
        current = eval;
        history.push(HistoryEntry {
            iteration,
            lambda_bar: current.lambda_bar,
            certificate: current.certificate,
            step,
        });
        step = (1.5 * step).min(opts.initial_step);
    }
    if stop == StopReason::Budget && current.certificate < opts.tol_cert {
        stop = StopReason::Certified;
    }
    Ok(AscentState {
        density,
        k,
        history,
        step_rule: format!(
            "projected minimum-norm supergradient step on cell masses; relative step starts at {}, grows by 1.5 on acceptance, halves on rejection down to {}",
            opts.initial_step, opts.min_step
        ),
        stop,
        lambda_bar: current.lambda_bar,
        certificate: current.certificate,
        spectrum: current.spectrum,
    })
}

/// Vertex-sampled map into a sphere built from one eigenvalue cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigenmap {
    pub components: Vec<Vec<f64>>,
    pub pointwise_norm: Vec<f64>,
    pub rank: usize,
    /// Sup-norm distance of `pointwise_norm` from 1.
    pub defect: f64,
    pub spherical: bool,
    /// Indices of the eigenvectors the components combine.
    pub basis: Range<usize>,
}

impl Eigenmap {
    pub fn from_components(components: Vec<Vec<f64>>, basis: Range<usize>, threshold: f64) -> Self {
        let n = components.first().map_or(0, Vec::len);
        let pointwise_norm: Vec<f64> = (0..n).map(|v| components.iter().map(|u| u[v] * u[v]).sum()).collect();
        let defect = pointwise_norm.iter().fold(0.0f64, |a, s| a.max((s - 1.0).abs()));
        Self { rank: components.len(), components, pointwise_norm, defect, spherical: defect <= threshold, basis }
    }
}

/// Low-rank Gram factorization over eigenvectors `k..=k_max` whose pointwise
/// quadratic form is as close to 1 as possible in the sup norm.
pub fn extract_eigenmap(
    spectrum: &Spectrum,
    k: usize,
    cluster_tol: f64,
    defect_threshold: f64,
) -> Result<Eigenmap, OptimizerError> {
    if k >= spectrum.len() {
        return Err(OptimizerError::OutOfRange { k, len: spectrum.len() });
    }
    let cluster = cluster_of(&spectrum.eigenvalues, cluster_tol, k);
    let basis = k..cluster.end;
    let phis: Vec<&Vec<f64>> = spectrum.eigenvectors[basis.clone()].iter().collect();
    let gram = sup_norm_gram(&phis);
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let n = phis[0].len();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let components: Vec<Vec<f64>> = order
        .into_iter()
        .filter(|&a| eig.eigenvalues[a] > 1e-10 * top)
        .map(|a| {
            let s = eig.eigenvalues[a].sqrt();
            let mut u = vec![0.0; n];
            for (i, phi) in phis.iter().enumerate() {
                let c = s * eig.eigenvectors[(i, a)];
                u.iter_mut().zip(phi.iter()).for_each(|(x, p)| *x += c * p);
            }
            u
        })
        .collect();
    Ok(Eigenmap::from_components(components, basis, defect_threshold))
}

/// PSD matrix `G` minimizing `max_v |φ(v)ᵀ G φ(v) - 1|`.
///
/// Weighted least squares with Lawson reweighting toward the minimax
/// solution; every iterate is projected onto the PSD cone and rescaled by
/// the optimal scalar.
fn sup_norm_gram(phis: &[&Vec<f64>]) -> DMatrix<f64> {
    let r = phis.len();
    let n = phis[0].len();
    let pairs: Vec<(usize, usize)> = (0..r).flat_map(|i| (i..r).map(move |j| (i, j))).collect();
    let features = |v: usize| -> Vec<f64> {
        pairs.iter().map(|&(i, j)| if i == j { phis[i][v] * phis[i][v] } else { 2.0 * phis[i][v] * phis[j][v] }).collect()
    };
    let rows: Vec<Vec<f64>> = (0..n).map(features).collect();
    let to_matrix = |g: &DVector<f64>| {
        let mut m = DMatrix::<f64>::zeros(r, r);
        for (p, &(i, j)) in pairs.iter().enumerate() {
            m[(i, j)] = g[p];
            m[(j, i)] = g[p];
        }
        m
    };
    let evaluate = |m: &DMatrix<f64>| -> Vec<f64> {
        (0..n)
            .map(|v| {
                let mut s = 0.0;
                for i in 0..r {
                    for j in 0..r {
                        s += m[(i, j)] * phis[i][v] * phis[j][v];
                    }
                }
                s
            })
            .collect()
    };
    let finish = |m: DMatrix<f64>| -> (DMatrix<f64>, f64) {
        let mut m = project_psd(m);
        let q = evaluate(&m);
        let (lo, hi) = q.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
        if hi > 0.0 {
            m *= 2.0 / (lo + hi);
        }
        let defect = evaluate(&m).iter().fold(0.0f64, |a, x| a.max((x - 1.0).abs()));
        (m, defect)
    };

    let mut weights = vec![1.0; n];
    let mut best: Option<(DMatrix<f64>, f64)> = None;
    for _ in 0..60 {
        let p = pairs.len();
        let mut normal = DMatrix::<f64>::zeros(p, p);
        let mut rhs = DVector::<f64>::zeros(p);
        for (row, w) in rows.iter().zip(&weights) {
            for a in 0..p {
                rhs[a] += w * row[a];
                for b in 0..p {
                    normal[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        let Some(g) = normal.clone().cholesky().map(|c| c.solve(&rhs)).or_else(|| normal.lu().solve(&rhs)) else {
            break;
        };
        let (m, defect) = finish(to_matrix(&g));
        let residual: Vec<f64> = evaluate(&m).iter().map(|x| (x - 1.0).abs()).collect();
        if best.as_ref().is_none_or(|(_, d)| defect < *d) {
            best = Some((m, defect));
        }
        let total: f64 = weights.iter().zip(&residual).map(|(w, e)| w * e).sum();
        if !(total > 0.0) {
            break;
        }
        weights.iter_mut().zip(&residual).for_each(|(w, e)| *w *= e / total * n as f64);
    }
    best.map(|(m, _)| m).unwrap_or_else(|| DMatrix::identity(r, r))
}

fn project_psd(m: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m);
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()
}

/// Cellwise `|du|²` summed over components.
pub fn energy_density(mesh: &SimplicialMesh, components: &[Vec<f64>]) -> Vec<f64> {
    (0..mesh.num_cells())
        .map(|c| components.iter().map(|u| mesh.cell_gradient_sq(c, u)).sum())
        .collect()
}

/// Relative residual of `K u = M(|du|²) u` over all components.
pub fn harmonic_residual(mesh: &SimplicialMesh, map: &Eigenmap) -> f64 {
    let stiffness = mesh.assemble_stiffness();
    let weighted = mesh.mass_from_weights(&energy_density(mesh, &map.components));
    let (mut num, mut den, mut size) = (0.0, 0.0, 0.0);
    for u in &map.components {
        let ku = stiffness.mul_vec(u);
        let mu = weighted.mul_vec(u);
        num += ku.iter().zip(&mu).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        den += ku.iter().map(|a| a * a).sum::<f64>().max(mu.iter().map(|b| b * b).sum::<f64>());
        size += u.iter().map(|a| a * a).sum::<f64>();
    }
    // both sides at roundoff level of K: the map is numerically constant
    let roundoff = 1e3 * f64::EPSILON * stiffness.norm_inf() * size.sqrt();
    if den.sqrt() <= roundoff {
        0.0
    } else {
        (num / den).sqrt()
    }
}

/// Number of negative directions of `K - M(|du|²)` in the uniform mass inner product.
pub fn eigenmap_index(mesh: &SimplicialMesh, map: &Eigenmap, opts: &EigenOptions) -> Result<usize, OptimizerError> {
    let stiffness = mesh.assemble_stiffness();
    let weighted = mesh.mass_from_weights(&energy_density(mesh, &map.components));
    let reference = mesh.assemble_mass(&Density::uniform(mesh, 1.0)?)?;
    Ok(spectral_index(&stiffness, &weighted, &reference, opts)?.count)
}
