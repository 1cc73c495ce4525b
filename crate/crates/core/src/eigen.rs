//! Lowest eigenpairs of symmetric pencils `A x = λ B x` with `B` positive
//! semidefinite, spectral indices, and constrained (deflated) minimization.
//!
//! Small problems are solved densely. Larger ones use a restarted block
//! Krylov method on the shift-inverted operator `(A + σB)⁻¹ B`, with
//! Rayleigh-Ritz extraction on the original pencil so that Ritz values are
//! upper bounds of the discrete eigenvalues.

use std::ops::Range;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::sparse::{axpy, dot, norm2, CsrMatrix, EnvelopeCholesky, SparseError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EigenError {
    #[error("operand dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("mass matrix is numerically zero")]
    ZeroMass,
    #[error("requested {requested} eigenpairs but only {available} are available")]
    TooMany { requested: usize, available: usize },
    #[error("deflation by {constraints} vectors exhausts the {available}-dimensional space")]
    DeflationExhausted { constraints: usize, available: usize },
    #[error("constraint vector {0} is null for the mass inner product")]
    NullConstraint(usize),
    #[error("eigen-solver did not converge (worst residual {residual:e})")]
    NotConverged { residual: f64 },
    #[error("shifted operator could not be factored: {0}")]
    Factorization(#[from] SparseError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenOptions {
    pub seed: u64,
    /// Relative residual target for returned pairs.
    pub tol: f64,
    /// Relative gap below which consecutive eigenvalues form one cluster.
    pub cluster_tol: f64,
    pub max_restarts: usize,
    /// Problems whose mass rank is at most this are solved densely.
    pub dense_limit: usize,
    /// Index cutoff relative to `‖A‖∞ / ‖B‖∞`.
    pub index_cutoff: f64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            tol: 1e-11,
            cluster_tol: 1e-6,
            max_restarts: 400,
            dense_limit: 300,
            index_cutoff: 1e-9,
        }
    }
}

/// Ascending eigenpairs with mass-orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub cluster_tol: f64,
    /// Number of finite eigenvalues of the pencil (rank of the mass matrix).
    pub available: usize,
}

#[derive(Debug, Serialize)]
struct SpectrumJson<'a> {
    eigenvalues: &'a [f64],
    residuals: &'a [f64],
    clusters: Vec<[usize; 2]>,
    cluster_tol: f64,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Consecutive index ranges of numerically equal eigenvalues.
    pub fn clusters(&self) -> Vec<Range<usize>> {
        cluster_ranges(&self.eigenvalues, self.cluster_tol)
    }

    /// Cluster containing index `k`.
    pub fn cluster(&self, k: usize) -> Range<usize> {
        cluster_of(&self.eigenvalues, self.cluster_tol, k)
    }

    /// Largest index in the cluster of `k`.
    pub fn k_max(&self, k: usize) -> usize {
        self.cluster(k).end - 1
    }

    /// False when the cluster of `k` reaches the last computed pair and more
    /// eigenvalues exist, so it may continue past the computed range.
    pub fn cluster_is_complete(&self, k: usize) -> bool {
        self.cluster(k).end < self.len() || self.len() == self.available
    }

    pub fn to_json(&self) -> String {
        crate::json::to_string(&SpectrumJson {
            eigenvalues: &self.eigenvalues,
            residuals: &self.residuals,
            clusters: self.clusters().into_iter().map(|r| [r.start, r.end - 1]).collect(),
            cluster_tol: self.cluster_tol,
        })
    }
}

pub fn cluster_ranges(values: &[f64], tol: f64) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=values.len() {
        let split = i == values.len() || {
            let (a, b) = (values[i - 1], values[i]);
            let scale = a.abs().max(b.abs());
            (b - a) > tol * scale
        };
        if split {
            out.push(start..i);
            start = i;
        }
    }
    out
}

pub fn cluster_of(values: &[f64], tol: f64, k: usize) -> Range<usize> {
    cluster_ranges(values, tol)
        .into_iter()
        .find(|r| r.contains(&k))
        .unwrap_or(k..k + 1)
}

/// Count of negative eigenvalues of `(K - M, M_ref)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexReport {
    pub count: usize,
    pub tested_form: String,
    pub cutoff_tol: f64,
    /// Lowest computed pencil eigenvalues, used to decide the count.
    pub lowest: Vec<f64>,
}

/// Eigenpairs `0 = λ_0 ≤ λ_1 ≤ ...` of `K φ = λ M φ`, at least `k_max_wanted + 1`.
pub fn solve_eigen(
    k: &CsrMatrix,
    m: &CsrMatrix,
    k_max_wanted: usize,
    opts: &EigenOptions,
) -> Result<Spectrum, EigenError> {
    check_dims(k, m)?;
    let available = mass_rank(m);
    if available == 0 {
        return Err(EigenError::ZeroMass);
    }
    let wanted = k_max_wanted + 1;
    if wanted > available {
        return Err(EigenError::TooMany { requested: wanted, available });
    }
    // a few extra pairs let callers see whether the last cluster is complete
    let nev = (wanted + 3).min(available);
    let shift = default_shift(k, m);
    let pairs = lowest_pairs(k, m, nev, shift, &[], opts)?;
    Ok(Spectrum {
        eigenvalues: pairs.values,
        eigenvectors: pairs.vectors,
        residuals: pairs.residuals,
        cluster_tol: opts.cluster_tol,
        available,
    })
}

/// Number of eigenvalues of `(K - M, M_ref)` below `-cutoff`.
pub fn spectral_index(
    k: &CsrMatrix,
    m: &CsrMatrix,
    m_ref: &CsrMatrix,
    opts: &EigenOptions,
) -> Result<IndexReport, EigenError> {
    check_dims(k, m)?;
    check_dims(k, m_ref)?;
    let a = k.add_scaled(m, -1.0)?;
    let available = mass_rank(m_ref);
    if available == 0 {
        return Err(EigenError::ZeroMass);
    }
    let cutoff = opts.index_cutoff * (a.norm_inf() / m_ref.norm_inf()).max(1.0);
    let tested_form = "stiffness minus weighted mass, reference uniform mass".to_string();

    let ratio = m
        .diagonal()
        .iter()
        .zip(m_ref.diagonal())
        .filter(|(_, r)| *r > 0.0)
        .map(|(d, r)| d / r)
        .fold(0.0, f64::max);
    let base_shift = 2.0 * ratio + 1.0;

    let mut nev = 8.min(available);
    loop {
        let mut shift = base_shift;
        let pairs = loop {
            match lowest_pairs(&a, m_ref, nev, shift, &[], opts) {
                Err(EigenError::Factorization(_)) if shift < 1e12 * base_shift => shift *= 2.0,
                other => break other?,
            }
        };
        let count = pairs.values.iter().filter(|&&v| v < -cutoff).count();
        if count < pairs.values.len() || nev == available {
            return Ok(IndexReport { count, tested_form, cutoff_tol: cutoff, lowest: pairs.values });
        }
        nev = (2 * nev).min(available);
    }
}

/// Minimum Rayleigh quotient of `(K, M)` over vectors `M`-orthogonal to `constraints`.
pub fn constrained_lambda_k(
    k: &CsrMatrix,
    m: &CsrMatrix,
    constraints: &[Vec<f64>],
    opts: &EigenOptions,
) -> Result<f64, EigenError> {
    check_dims(k, m)?;
    let available = mass_rank(m);
    if available == 0 {
        return Err(EigenError::ZeroMass);
    }
    let y = b_orthonormal_constraints(m, constraints)?;
    if y.len() >= available {
        return Err(EigenError::DeflationExhausted { constraints: y.len(), available });
    }
    let pairs = lowest_pairs(k, m, 1, default_shift(k, m), &y, opts)?;
    Ok(pairs.values[0])
}

/// `λ_k · mass`.
pub fn lambda_bar(spectrum: &Spectrum, mass: f64, k: usize) -> f64 {
    spectrum.eigenvalues[k] * mass
}

fn check_dims(a: &CsrMatrix, b: &CsrMatrix) -> Result<(), EigenError> {
    if a.dim() != b.dim() {
        return Err(EigenError::DimensionMismatch(a.dim(), b.dim()));
    }
    Ok(())
}

/// Rows of a P1 mass matrix with a positive diagonal span its range.
pub fn mass_rank(m: &CsrMatrix) -> usize {
    let d = m.diagonal();
    let scale = d.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    d.iter().filter(|&&v| v > 1e-14 * scale).count()
}

fn default_shift(a: &CsrMatrix, b: &CsrMatrix) -> f64 {
    let ta: f64 = a.diagonal().iter().sum();
    let tb: f64 = b.diagonal().iter().sum();
    let ratio = ta / tb;
    if ratio > 0.0 && ratio.is_finite() {
        1e-3 * ratio
    } else {
        1.0
    }
}

struct Pairs {
    values: Vec<f64>,
    vectors: Vec<Vec<f64>>,
    residuals: Vec<f64>,
}

fn b_orthonormal_constraints(b: &CsrMatrix, vectors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, EigenError> {
    let scale = b.diagonal().iter().sum::<f64>() / b.dim() as f64;
    let mut out: Vec<Vec<f64>> = Vec::new();
    for (i, v) in vectors.iter().enumerate() {
        if v.len() != b.dim() {
            return Err(EigenError::DimensionMismatch(v.len(), b.dim()));
        }
        let nb = b.bilinear(v, v);
        if !(nb > 1e-12 * scale * dot(v, v)) {
            return Err(EigenError::NullConstraint(i));
        }
        let mut w = v.clone();
        for _ in 0..2 {
            let bw = b.mul_vec(&w);
            for y in &out {
                let c = dot(y, &bw);
                axpy(-c, y, &mut w);
            }
        }
        let n = b.bilinear(&w, &w);
        // dependent constraints add nothing
        if n > 1e-20 * nb {
            let s = 1.0 / n.sqrt();
            out.push(w.iter().map(|x| x * s).collect());
        }
    }
    Ok(out)
}

fn relative_residual(a: &CsrMatrix, b: &CsrMatrix, norms: (f64, f64), theta: f64, x: &[f64]) -> f64 {
    let mut r = a.mul_vec(x);
    let bx = b.mul_vec(x);
    axpy(-theta, &bx, &mut r);
    norm2(&r) / ((norms.0 + theta.abs() * norms.1) * norm2(x))
}

fn normalize_sign(x: &mut [f64]) {
    let (idx, _) = x
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |(bi, bv), (i, &v)| if v.abs() > bv + 1e-12 * bv { (i, v.abs()) } else { (bi, bv) });
    if x[idx] < 0.0 {
        x.iter_mut().for_each(|v| *v = -*v);
    }
}

/// Lowest `nev` eigenpairs of `(A, B)` restricted to `{x : Yᵀ B x = 0}`,
/// with `Y` given `B`-orthonormal. `A + shift B` must be positive definite.
fn lowest_pairs(
    a: &CsrMatrix,
    b: &CsrMatrix,
    nev: usize,
    shift: f64,
    y: &[Vec<f64>],
    opts: &EigenOptions,
) -> Result<Pairs, EigenError> {
    let available = mass_rank(b) - y.len();
    if nev > available {
        return Err(EigenError::TooMany { requested: nev, available });
    }
    let f = a.add_scaled(b, shift)?;
    let pairs = if available <= opts.dense_limit || a.dim() <= opts.dense_limit {
        dense_pairs(a, b, &f, nev, available, y)?
    } else {
        let chol = EnvelopeCholesky::factor(&f)?;
        KrylovSolver::new(a, b, &chol, y, opts).run(nev, available)?
    };
    Ok(pairs)
}

fn to_dense(a: &CsrMatrix) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(a.dim(), a.dim());
    for (i, j, v) in a.entries() {
        d[(i, j)] += v;
    }
    d
}

fn dense_pairs(
    a: &CsrMatrix,
    b: &CsrMatrix,
    f: &CsrMatrix,
    nev: usize,
    available: usize,
    y: &[Vec<f64>],
) -> Result<Pairs, EigenError> {
    let n = a.dim();
    let fd = to_dense(f);
    let bd = to_dense(b);
    let chol = fd.cholesky().ok_or(SparseError::NotPositiveDefinite { row: 0, pivot: f64::NAN })?;
    let l = chol.l();
    // C = L⁻¹ B L⁻ᵀ
    let linv_b = l.solve_lower_triangular(&bd).expect("nonsingular factor");
    let c_t = l.solve_lower_triangular(&linv_b.transpose()).expect("nonsingular factor");
    let mut c = (&c_t + c_t.transpose()) * 0.5;
    if !y.is_empty() {
        // constraint Yᵀ B x = 0 with x = L⁻ᵀ z reads (L⁻¹ B Y)ᵀ z = 0
        let ym = DMatrix::from_fn(n, y.len(), |i, j| y[j][i]);
        let w = l.solve_lower_triangular(&(&bd * ym)).expect("nonsingular factor");
        let q = w.qr().q();
        let p = DMatrix::<f64>::identity(n, n) - &q * q.transpose();
        c = &p * c * &p;
        c = (&c + c.transpose()) * 0.5;
    }
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let take = (nev + 4).min(available);
    let lt = l.transpose();
    let xs: Vec<Vec<f64>> = order[..take]
        .iter()
        .map(|&i| {
            let z = eig.eigenvectors.column(i).into_owned();
            lt.solve_upper_triangular(&z).expect("nonsingular factor").iter().copied().collect()
        })
        .collect();
    let mut pairs = rayleigh_ritz(a, b, &xs)?;
    truncate_pairs(&mut pairs, nev);
    let norms = (a.norm_inf(), b.norm_inf());
    pairs.residuals = pairs
        .values
        .iter()
        .zip(&pairs.vectors)
        .map(|(&t, x)| relative_residual(a, b, norms, t, x))
        .collect();
    Ok(pairs)
}

fn truncate_pairs(p: &mut Pairs, nev: usize) {
    p.values.truncate(nev);
    p.vectors.truncate(nev);
    p.residuals.truncate(nev);
}

/// Rayleigh-Ritz on the span of `xs` (assumed `B`-nondegenerate).
fn rayleigh_ritz(a: &CsrMatrix, b: &CsrMatrix, xs: &[Vec<f64>]) -> Result<Pairs, EigenError> {
    let s = xs.len();
    let ax: Vec<Vec<f64>> = xs.iter().map(|x| a.mul_vec(x)).collect();
    let bx: Vec<Vec<f64>> = xs.iter().map(|x| b.mul_vec(x)).collect();
    let ha = DMatrix::from_fn(s, s, |i, j| 0.5 * (dot(&xs[i], &ax[j]) + dot(&xs[j], &ax[i])));
    let hb = DMatrix::from_fn(s, s, |i, j| 0.5 * (dot(&xs[i], &bx[j]) + dot(&xs[j], &bx[i])));
    let chol = hb.cholesky().ok_or(EigenError::NotConverged { residual: f64::INFINITY })?;
    let l = chol.l();
    let t1 = l.solve_lower_triangular(&ha).expect("nonsingular");
    let t2 = l.solve_lower_triangular(&t1.transpose()).expect("nonsingular");
    let h = (&t2 + t2.transpose()) * 0.5;
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let lt = l.transpose();
    let mut values = Vec::with_capacity(s);
    let mut vectors = Vec::with_capacity(s);
    for &i in &order {
        let z = eig.eigenvectors.column(i).into_owned();
        let coef = lt.solve_upper_triangular(&z).expect("nonsingular");
        let mut v = vec![0.0; xs[0].len()];
        for (c, x) in coef.iter().zip(xs) {
            axpy(*c, x, &mut v);
        }
        let nb = b.bilinear(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= nb);
        normalize_sign(&mut v);
        values.push(eig.eigenvalues[i]);
        vectors.push(v);
    }
    Ok(Pairs { values, vectors, residuals: vec![f64::NAN; s] })
}

struct KrylovSolver<'a> {
    a: &'a CsrMatrix,
    b: &'a CsrMatrix,
    chol: &'a EnvelopeCholesky,
    y: &'a [Vec<f64>],
    // Z = F⁻¹ B Y and the factor of S = Yᵀ B Z
    z: Vec<Vec<f64>>,
    s_inv: DMatrix<f64>,
    opts: &'a EigenOptions,
    norms: (f64, f64),
    mass_scale: f64,
}

impl<'a> KrylovSolver<'a> {
    fn new(
        a: &'a CsrMatrix,
        b: &'a CsrMatrix,
        chol: &'a EnvelopeCholesky,
        y: &'a [Vec<f64>],
        opts: &'a EigenOptions,
    ) -> Self {
        let z: Vec<Vec<f64>> = y.iter().map(|v| chol.solve(&b.mul_vec(v))).collect();
        let r = y.len();
        let s = DMatrix::from_fn(r, r, |i, j| b.bilinear(&y[i], &z[j]));
        let s = (&s + s.transpose()) * 0.5;
        let s_inv = s.try_inverse().unwrap_or_else(|| DMatrix::zeros(r, r));
        let mass_scale = b.diagonal().iter().sum::<f64>() / b.dim() as f64;
        Self { a, b, chol, y, z, s_inv, opts, norms: (a.norm_inf(), b.norm_inf()), mass_scale }
    }

    /// Constrained shift-invert operator.
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut w = self.chol.solve(&self.b.mul_vec(v));
        if !self.y.is_empty() {
            let bw = self.b.mul_vec(&w);
            let g: Vec<f64> = self.y.iter().map(|yi| dot(yi, &bw)).collect();
            for i in 0..self.y.len() {
                let c: f64 = (0..self.y.len()).map(|j| self.s_inv[(i, j)] * g[j]).sum();
                axpy(-c, &self.z[i], &mut w);
            }
        }
        w
    }

    /// Orthonormalizes `w` against `basis` (and the constraints) in the `B`
    /// inner product, twice. Returns `None` for numerically dependent vectors.
    fn orthonormalize(&self, mut w: Vec<f64>, basis: &[Vec<f64>], b_basis: &[Vec<f64>]) -> Option<(Vec<f64>, Vec<f64>)> {
        let before = self.b.bilinear(&w, &w).sqrt();
        if !(before > 0.0) {
            return None;
        }
        for _ in 0..2 {
            let bw = self.b.mul_vec(&w);
            for yi in self.y {
                let c = dot(yi, &bw);
                axpy(-c, yi, &mut w);
            }
            for (v, bv) in basis.iter().zip(b_basis) {
                let c = dot(bv, &w);
                axpy(-c, v, &mut w);
            }
        }
        let bw = self.b.mul_vec(&w);
        let nb2 = dot(&w, &bw);
        let floor = 1e-12 * self.mass_scale * dot(&w, &w);
        if !(nb2 > floor) || nb2.sqrt() < 1e-10 * before {
            return None;
        }
        let s = 1.0 / nb2.sqrt();
        Some((w.iter().map(|x| x * s).collect(), bw.iter().map(|x| x * s).collect()))
    }

    fn run(&self, nev: usize, available: usize) -> Result<Pairs, EigenError> {
        let n = self.a.dim();
        let block = (nev + nev.div_ceil(2).max(4)).min(available);
        let max_basis = (3 * block).max(block + 30).min(available);
        let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed);

        let mut basis: Vec<Vec<f64>> = Vec::new();
        let mut b_basis: Vec<Vec<f64>> = Vec::new();
        let fill_random = |basis: &mut Vec<Vec<f64>>, b_basis: &mut Vec<Vec<f64>>, rng: &mut ChaCha8Rng, target: usize| {
            let mut attempts = 0;
            while basis.len() < target && attempts < 4 * target + 10 {
                attempts += 1;
                let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
                let w = self.apply(&v);
                if let Some((q, bq)) = self.orthonormalize(w, basis, b_basis) {
                    basis.push(q);
                    b_basis.push(bq);
                }
            }
        };
        fill_random(&mut basis, &mut b_basis, &mut rng, block);

        let mut worst = f64::INFINITY;
        for _ in 0..self.opts.max_restarts {
            // block Krylov expansion of the current basis
            let mut frontier: Range<usize> = 0..basis.len();
            while basis.len() < max_basis {
                let start = basis.len();
                for i in frontier.clone() {
                    if basis.len() >= max_basis {
                        break;
                    }
                    let w = self.apply(&basis[i]);
                    if let Some((q, bq)) = self.orthonormalize(w, &basis, &b_basis) {
                        basis.push(q);
                        b_basis.push(bq);
                    }
                }
                if basis.len() == start {
                    fill_random(&mut basis, &mut b_basis, &mut rng, (start + 1).min(max_basis));
                    if basis.len() == start {
                        break;
                    }
                }
                frontier = start..basis.len();
            }

            let mut pairs = rayleigh_ritz(self.a, self.b, &basis)?;
            let residuals: Vec<f64> = (0..nev)
                .map(|i| relative_residual(self.a, self.b, self.norms, pairs.values[i], &pairs.vectors[i]))
                .collect();
            worst = residuals.iter().copied().fold(0.0, f64::max);
            if worst < self.opts.tol || basis.len() == available {
                truncate_pairs(&mut pairs, nev);
                pairs.residuals = residuals;
                return Ok(pairs);
            }
            // thick restart from the lowest Ritz vectors
            basis.clear();
            b_basis.clear();
            for v in pairs.vectors.into_iter().take(block) {
                if let Some((q, bq)) = self.orthonormalize(v, &basis, &b_basis) {
                    basis.push(q);
                    b_basis.push(bq);
                }
            }
        }
        Err(EigenError::NotConverged { residual: worst })
    }
}
