//! One-dimensional weighted Sturm-Liouville forms on `(-1, 1)` obtained by
//! separating variables around an equator map, discretized with P1 elements.
//!
//! A weight term is `c (1-t)^x (1+t)^y`. The discrete form lives on the nodes
//! `-1 < t_1 < ... < t_N < 1` plus the two endpoints; an endpoint value is
//! kept free unless a positive potential term is not integrable there, in
//! which case it is pinned to zero (the only choice with finite energy).
//! Negative directions are counted through Sylvester's law of inertia on the
//! tridiagonal form matrix, so Galerkin monotonicity applies: counts never
//! exceed the continuous index and never decrease under nested refinement.

use serde::Serialize;
use thiserror::Error;

use crate::quadrature::{gauss_jacobi, AdaptiveGauss, GaussRule};
use crate::sphere::least_root;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReducedError {
    #[error("grid must be strictly increasing inside (-1, 1)")]
    BadGrid,
    #[error("unsupported mode: {0}")]
    BadMode(String),
    #[error("weight exponent {exponent} is not integrable at t = {end}")]
    NonIntegrable { end: f64, exponent: f64 },
    #[error("unstable count: {coarse} on the grid, {fine} after refinement")]
    UnstableCount { coarse: usize, fine: usize },
}

/// `coef · (1-t)^upper · (1+t)^lower`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightTerm {
    pub coef: f64,
    /// Exponent of `(1 - t)`, singular or degenerate at `t = 1`.
    pub upper: f64,
    /// Exponent of `(1 + t)`, singular or degenerate at `t = -1`.
    pub lower: f64,
}

impl WeightTerm {
    pub fn new(coef: f64, upper: f64, lower: f64) -> Self {
        Self { coef, upper, lower }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.eval_split(1.0 + t, 1.0 - t)
    }

    /// Evaluates from the distances to both ends, which callers can form
    /// without cancellation near the boundary.
    pub fn eval_split(&self, from_lower: f64, from_upper: f64) -> f64 {
        self.coef * from_upper.powf(self.upper) * from_lower.powf(self.lower)
    }

    fn exponent_at(&self, end: End) -> f64 {
        match end {
            End::Lower => self.lower,
            End::Upper => self.upper,
        }
    }
}

/// `∫ stiffness φ'² + Σ potential φ²`, with `mass` as the reference inner product.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightedForm {
    pub stiffness: WeightTerm,
    pub potential: Vec<WeightTerm>,
    pub mass: WeightTerm,
    pub grid: Vec<f64>,
}

/// Symmetric tridiagonal matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl Tridiagonal {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Number of negative eigenvalues of `self - shift · other`.
    pub fn inertia_below(&self, other: &Tridiagonal, shift: f64) -> usize {
        let n = self.dim();
        let mut count = 0;
        let mut d_prev = 1.0;
        let mut scale = 0.0f64;
        for i in 0..n {
            let a = self.diag[i] - shift * other.diag[i];
            scale = scale.max(a.abs());
            let mut d = if i == 0 {
                a
            } else {
                let e = self.off[i - 1] - shift * other.off[i - 1];
                a - e * e / d_prev
            };
            if d == 0.0 {
                d = -f64::EPSILON * scale.max(f64::MIN_POSITIVE);
            }
            if d < 0.0 {
                count += 1;
            }
            d_prev = d;
        }
        count
    }

    /// Number of negative eigenvalues.
    pub fn negative_count(&self) -> usize {
        let zero = Tridiagonal { diag: vec![0.0; self.dim()], off: vec![0.0; self.off.len()] };
        self.inertia_below(&zero, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum End {
    Lower,
    Upper,
}

/// Assembled form and mass matrices over the free degrees of freedom.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledForm {
    pub form: Tridiagonal,
    pub mass: Tridiagonal,
    /// Endpoints whose value is pinned to zero, as `(t = -1, t = 1)`.
    pub pinned: (bool, bool),
}

const END_RULE_POINTS: usize = 24;

impl WeightedForm {
    pub fn new(
        stiffness: WeightTerm,
        potential: Vec<WeightTerm>,
        mass: WeightTerm,
        grid: Vec<f64>,
    ) -> Result<Self, ReducedError> {
        check_grid(&grid)?;
        Ok(Self { stiffness, potential, mass, grid })
    }

    /// Adds `-shift · mass` to the potential.
    pub fn shifted(&self, shift: f64) -> Self {
        let mut out = self.clone();
        out.potential.push(WeightTerm { coef: -shift * self.mass.coef, ..self.mass });
        out
    }

    /// Nested refinement: every interval, including the two end pieces, is halved.
    pub fn refined(&self) -> Self {
        let mut nodes = vec![-1.0];
        nodes.extend(&self.grid);
        nodes.push(1.0);
        let mut grid = Vec::with_capacity(2 * self.grid.len() + 1);
        for w in nodes.windows(2) {
            if w[0] > -1.0 {
                grid.push(w[0]);
            }
            grid.push(0.5 * (w[0] + w[1]));
        }
        Self { grid, ..self.clone() }
    }

    fn pinned_at(&self, end: End) -> Result<bool, ReducedError> {
        let at = if end == End::Lower { -1.0 } else { 1.0 };
        let mut pinned = false;
        for term in &self.potential {
            let e = term.exponent_at(end);
            if e <= -1.0 && term.coef != 0.0 {
                if term.coef < 0.0 {
                    return Err(ReducedError::NonIntegrable { end: at, exponent: e });
                }
                pinned = true;
            }
        }
        for term in [&self.stiffness, &self.mass] {
            let e = term.exponent_at(end);
            if e <= -1.0 {
                return Err(ReducedError::NonIntegrable { end: at, exponent: e });
            }
        }
        Ok(pinned)
    }

    pub fn assemble(&self) -> Result<AssembledForm, ReducedError> {
        check_grid(&self.grid)?;
        let pinned = (self.pinned_at(End::Lower)?, self.pinned_at(End::Upper)?);
        let mut nodes = vec![-1.0];
        nodes.extend(&self.grid);
        nodes.push(1.0);
        let total = nodes.len();
        let mut form = Tridiagonal { diag: vec![0.0; total], off: vec![0.0; total - 1] };
        let mut mass = form.clone();

        let adaptive = AdaptiveGauss::new(1e-12);
        for e in 0..total - 1 {
            let a = nodes[e];
            let h = nodes[e + 1] - a;
            // local entries: stiffness integral, then (N0², N0N1, N1²) for
            // the potential and for the mass
            let local = if e == 0 {
                self.end_element(End::Lower, h)
            } else if e == total - 2 {
                self.end_element(End::Upper, h)
            } else {
                // integrate in the local coordinate so the hats stay exact
                let (lo, up) = (1.0 + a, 1.0 - a);
                let f = |n1: f64, out: &mut [f64]| {
                    let (dl, du) = (lo + h * n1, up - h * n1);
                    let n0 = 1.0 - n1;
                    out[0] = self.stiffness.eval_split(dl, du);
                    let v: f64 = self.potential.iter().map(|p| p.eval_split(dl, du)).sum();
                    let w = self.mass.eval_split(dl, du);
                    out[1] = v * n0 * n0;
                    out[2] = v * n0 * n1;
                    out[3] = v * n1 * n1;
                    out[4] = w * n0 * n0;
                    out[5] = w * n0 * n1;
                    out[6] = w * n1 * n1;
                };
                let mut v = adaptive.integrate(0.0, 1.0, 7, &f);
                v.iter_mut().for_each(|x| *x *= h);
                v
            };
            let ks = local[0] / (h * h);
            form.diag[e] += ks + local[1];
            form.off[e] += -ks + local[2];
            form.diag[e + 1] += ks + local[3];
            mass.diag[e] += local[4];
            mass.off[e] += local[5];
            mass.diag[e + 1] += local[6];
        }

        let keep_first = usize::from(pinned.0);
        let keep_last = total - usize::from(pinned.1);
        let restrict = |t: &Tridiagonal| Tridiagonal {
            diag: t.diag[keep_first..keep_last].to_vec(),
            off: t.off[keep_first..keep_last - 1].to_vec(),
        };
        Ok(AssembledForm { form: restrict(&form), mass: restrict(&mass), pinned })
    }

    /// Integrals on an end piece, written with `R = (1±t)/h` so that each
    /// basis product is `R^e · P(R)` and Gauss-Jacobi absorbs the singular part.
    fn end_element(&self, end: End, h: f64) -> Vec<f64> {
        // (power of R factored out, remaining polynomial in R) for the products
        // of (end-node hat, inner-node hat): N_end = 1 - R, N_in = R
        let products: [(i32, fn(f64) -> f64); 3] = [
            (0, |r| (1.0 - r) * (1.0 - r)),
            (1, |r| 1.0 - r),
            (2, |_| 1.0),
        ];
        let mut rules: Vec<(f64, GaussRule)> = Vec::new();
        let mut rule_for = |beta: f64| -> GaussRule {
            if let Some((_, r)) = rules.iter().find(|(b, _)| *b == beta) {
                return r.clone();
            }
            let r = gauss_jacobi(END_RULE_POINTS, 0.0, beta);
            rules.push((beta, r.clone()));
            r
        };
        // ∫ over the end piece of term · R^e · P(R)
        let mut integrate = |term: &WeightTerm, e: i32, poly: fn(f64) -> f64| -> f64 {
            if term.coef == 0.0 {
                return 0.0;
            }
            let y = term.exponent_at(end) + e as f64;
            if y <= -1.0 {
                // only reached for the pinned end node, whose row is dropped
                return 0.0;
            }
            let rule = rule_for(y);
            let mut acc = 0.0;
            for (s, w) in rule.nodes.iter().zip(&rule.weights) {
                let r = 0.5 * (1.0 + s);
                let dist = h * r;
                let t = match end {
                    End::Lower => -1.0 + dist,
                    End::Upper => 1.0 - dist,
                };
                let smooth = match end {
                    End::Lower => (1.0 - t).powf(term.upper),
                    End::Upper => (1.0 + t).powf(term.lower),
                };
                acc += w * smooth * poly(r);
            }
            term.coef * acc * (0.5 * h).powf(y + 1.0) / h.powi(e)
        };

        let stiff = integrate(&self.stiffness, 0, |_| 1.0);
        let mut pot = [0.0; 3];
        let mut mass = [0.0; 3];
        for (i, &(e, poly)) in products.iter().enumerate() {
            pot[i] = self.potential.iter().map(|p| integrate(p, e, poly)).sum();
            mass[i] = integrate(&self.mass, e, poly);
        }
        // order local entries as (left node, right node)
        match end {
            End::Lower => vec![stiff, pot[0], pot[1], pot[2], mass[0], mass[1], mass[2]],
            End::Upper => vec![stiff, pot[2], pot[1], pot[0], mass[2], mass[1], mass[0]],
        }
    }
}

fn check_grid(grid: &[f64]) -> Result<(), ReducedError> {
    let ok = !grid.is_empty()
        && grid.iter().all(|t| *t > -1.0 && *t < 1.0)
        && grid.windows(2).all(|w| w[0] < w[1]);
    if ok {
        Ok(())
    } else {
        Err(ReducedError::BadGrid)
    }
}

/// `nodes` points clustered quadratically toward both endpoints.
pub fn graded_grid(nodes: usize) -> Vec<f64> {
    (1..=nodes)
        .map(|i| {
            let u = -1.0 + 2.0 * i as f64 / (nodes + 1) as f64;
            u.signum() * (1.0 - (1.0 - u.abs()).powi(2))
        })
        .collect()
}

/// Form for the mode with angular eigenvalues `nu` on `S^k` and `rho` on `S^n`.
pub fn build_mode_form_with(m: usize, k: usize, nu: f64, rho: f64, grid: Vec<f64>) -> Result<WeightedForm, ReducedError> {
    if k == 0 || k + 3 > m {
        return Err(ReducedError::BadMode(format!("need 1 <= k <= m - 3, got m = {m}, k = {k}")));
    }
    let n = (m - 1 - k) as f64;
    let kf = k as f64;
    WeightedForm::new(
        WeightTerm::new(1.0, (n + 1.0) / 2.0, (kf + 1.0) / 2.0),
        vec![
            WeightTerm::new(nu / 2.0, (n - 1.0) / 2.0, (kf - 3.0) / 2.0),
            WeightTerm::new((rho - n) / 2.0, (n - 3.0) / 2.0, (kf - 1.0) / 2.0),
        ],
        WeightTerm::new(1.0, (n - 1.0) / 2.0, (kf - 1.0) / 2.0),
        grid,
    )
}

/// Form for degree `ell` harmonics on `S^k` times degree `j` harmonics on `S^n`.
pub fn build_mode_form(m: usize, k: usize, ell: usize, j: usize, grid: Vec<f64>) -> Result<WeightedForm, ReducedError> {
    if k + 3 > m {
        return Err(ReducedError::BadMode(format!("k = {k} too large for m = {m}")));
    }
    let n = (m - 1 - k) as f64;
    let nu = (ell * (k - 1 + ell)) as f64;
    let rho = j as f64 * (j as f64 + n - 1.0);
    build_mode_form_with(m, k, nu, rho, grid)
}

/// Form along the axis for the equator map with a point singular set.
pub fn build_axis_form(m: usize, grid: Vec<f64>) -> Result<WeightedForm, ReducedError> {
    if m < 3 {
        return Err(ReducedError::BadMode(format!("m = {m} < 3")));
    }
    let h = m as f64 / 2.0;
    WeightedForm::new(
        WeightTerm::new(1.0, h, h),
        vec![WeightTerm::new(-(m as f64 - 1.0), h - 2.0, h - 2.0)],
        WeightTerm::new(1.0, h - 1.0, h - 1.0),
        grid,
    )
}

/// Pencil eigenvalues above `-ZERO_CUTOFF` count as zero. Forms with a
/// kernel (constants when the potential vanishes) put roundoff of about 1e-8
/// there, while genuine negative modes lie below -0.1.
pub const ZERO_CUTOFF: f64 = 1e-6;

/// Negative directions of the discrete form on its own grid, measured
/// against the mass form.
pub fn negative_count_on_grid(form: &WeightedForm) -> Result<usize, ReducedError> {
    let asm = form.assemble()?;
    Ok(asm.form.inertia_below(&asm.mass, -ZERO_CUTOFF))
}

/// Negative directions, required to agree on the grid and its refinement.
pub fn negative_count(form: &WeightedForm) -> Result<usize, ReducedError> {
    let coarse = negative_count_on_grid(form)?;
    let fine = negative_count_on_grid(&form.refined())?;
    if coarse != fine {
        return Err(ReducedError::UnstableCount { coarse, fine });
    }
    Ok(fine)
}

/// Lowest `count` eigenvalues of `-((1-t)^{a+1}(1+t)^{b+1} u')' = λ (1-t)^a (1+t)^b u`.
pub fn jacobi_eigen_check(a: f64, b: f64, count: usize, grid: Vec<f64>) -> Result<Vec<f64>, ReducedError> {
    let form = WeightedForm::new(WeightTerm::new(1.0, a + 1.0, b + 1.0), vec![], WeightTerm::new(1.0, a, b), grid)?;
    let asm = form.assemble()?;
    if count > asm.form.dim() {
        return Err(ReducedError::BadMode(format!("{count} eigenvalues from {} unknowns", asm.form.dim())));
    }
    Ok((0..count).map(|i| bisect_eigenvalue(&asm.form, &asm.mass, i)).collect())
}

/// `i`-th eigenvalue (0-based) of the pencil by Sturm-count bisection.
fn bisect_eigenvalue(a: &Tridiagonal, b: &Tridiagonal, i: usize) -> f64 {
    let mut lo = -1.0;
    while a.inertia_below(b, lo) > i {
        lo *= 2.0;
    }
    let mut hi = 1.0;
    while a.inertia_below(b, hi) <= i {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if a.inertia_below(b, mid) > i {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(lo.abs()).max(1e-300) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Numeric count for one angular degree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeCount {
    pub ell: usize,
    pub multiplicity: u64,
    pub count: usize,
}

/// Degree at which the scan over angular modes gives up.
const MAX_DEGREE: usize = 256;

/// Counts negative directions of all contributing modes for the equator
/// map `S^m → S^{m-1-k}`, scanning angular degrees until a mode has none.
pub fn numeric_index(m: usize, k: usize, grid: &[f64]) -> Result<Vec<ModeCount>, ReducedError> {
    if k == 0 {
        let count = negative_count(&build_axis_form(m, grid.to_vec())?)?;
        return Ok(vec![ModeCount { ell: 0, multiplicity: 1, count }]);
    }
    let mut out = Vec::new();
    for ell in 0..=MAX_DEGREE {
        if ell == MAX_DEGREE {
            return Err(ReducedError::BadMode(format!("negative modes persist up to degree {MAX_DEGREE}")));
        }
        let count = negative_count(&build_mode_form(m, k, ell, 0, grid.to_vec())?)?;
        if count == 0 {
            break;
        }
        out.push(ModeCount { ell, multiplicity: crate::sphere::harmonic_dim(k, ell), count });
    }
    Ok(out)
}

/// Both sides of the substitution `φ = ψ (1-t)^{-α/2} (1+t)^{β/2}` for a
/// compactly supported `ψ`: the original mode form at `φ` and the transformed
/// form at `ψ`. Returns `(original, transformed)`.
pub fn substitution_sides(
    m: usize,
    k: usize,
    ell: usize,
    psi: &dyn Fn(f64) -> (f64, f64),
    support: (f64, f64),
) -> Result<(f64, f64), ReducedError> {
    let n = m.checked_sub(1 + k).ok_or_else(|| ReducedError::BadMode("k too large".into()))?;
    let alpha = least_root(n).ok_or_else(|| ReducedError::BadMode(format!("n = {n} has no real root")))?;
    let (nf, kf, lf, mf) = (n as f64, k as f64, ell as f64, m as f64);
    let q = AdaptiveGauss::new(1e-12);
    if k == 0 {
        // φ = ψ ⟨t⟩^{-α/2}_{-α/2}
        let h = mf / 2.0;
        let f = |t: f64, out: &mut [f64]| {
            let (p, dp) = psi(t);
            let w = (1.0 - t * t).powf(-alpha / 2.0);
            let dw = w * alpha * t / (1.0 - t * t);
            let phi = p * w;
            let dphi = dp * w + p * dw;
            let s = 1.0 - t * t;
            out[0] = dphi * dphi * s.powf(h);
            out[1] = -(mf - 1.0) * phi * phi * s.powf(h - 2.0);
            out[2] = dp * dp * s.powf(h - alpha);
            out[3] = -(alpha + mf - 1.0) * p * p * s.powf(h - 1.0 - alpha);
        };
        let r = q.integrate(support.0, support.1, 4, &f);
        return Ok((r[0] + r[1], r[2] + r[3]));
    }
    let nu = lf * (kf - 1.0 + lf);
    let beta = lf;
    let big_l = 0.25 * ((nu - nf) + beta * (nf + 1.0) - alpha * (kf + 1.0) - 2.0 * alpha * beta);
    let f = |t: f64, out: &mut [f64]| {
        let (p, dp) = psi(t);
        let (um, up) = (1.0 - t, 1.0 + t);
        let w = um.powf(-alpha / 2.0) * up.powf(beta / 2.0);
        let dw = w * (alpha / (2.0 * um) + beta / (2.0 * up));
        let phi = p * w;
        let dphi = dp * w + p * dw;
        let bracket = 0.5 * (nu / up - nf / um);
        // kinetic and potential parts are integrated separately so the
        // relative tolerance never applies to a cancelling sum
        out[0] = dphi * dphi * um.powf((nf + 1.0) / 2.0) * up.powf((kf + 1.0) / 2.0);
        out[1] = phi * phi * bracket * um.powf((nf - 1.0) / 2.0) * up.powf((kf - 1.0) / 2.0);
        out[2] = dp * dp * um.powf((nf + 1.0) / 2.0 - alpha) * up.powf((kf + 1.0) / 2.0 + beta);
        out[3] = big_l * p * p * um.powf((nf - 1.0) / 2.0 - alpha) * up.powf((kf - 1.0) / 2.0 + beta);
    };
    let r = q.integrate(support.0, support.1, 4, &f);
    Ok((r[0] + r[1], r[2] + r[3]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graded_grid_is_symmetric_and_clustered() {
        let g = graded_grid(9);
        assert_eq!(g.len(), 9);
        assert!(g[4].abs() < 1e-15);
        assert!((g[0] + g[8]).abs() < 1e-15);
        assert!(1.0 + g[0] < (g[1] - g[0]));
    }

    #[test]
    fn refinement_is_nested() {
        let form = build_axis_form(7, graded_grid(5)).unwrap();
        let fine = form.refined();
        assert_eq!(fine.grid.len(), 11);
        for t in &form.grid {
            assert!(fine.grid.contains(t));
        }
    }

    #[test]
    fn grid_touching_boundary_rejected() {
        assert_eq!(build_axis_form(7, vec![-1.0, 0.0]).unwrap_err(), ReducedError::BadGrid);
        assert_eq!(build_axis_form(7, vec![0.2, 0.1]).unwrap_err(), ReducedError::BadGrid);
    }

    #[test]
    fn pinned_endpoint_for_singular_positive_potential() {
        // k = 1, ell = 1 has a (1+t)^{-1} term with positive coefficient
        let form = build_mode_form(8, 1, 1, 0, graded_grid(20)).unwrap();
        let asm = form.assemble().unwrap();
        assert_eq!(asm.pinned, (true, false));
        assert_eq!(asm.form.dim(), 21);
    }

    #[test]
    fn tridiagonal_inertia_matches_dense() {
        let t = Tridiagonal { diag: vec![2.0, -1.0, 3.0, 0.5], off: vec![1.0, 0.5, 2.0] };
        let dense = nalgebra::DMatrix::from_fn(4, 4, |i, j| {
            if i == j {
                t.diag[i]
            } else if i + 1 == j {
                t.off[i]
            } else if j + 1 == i {
                t.off[j]
            } else {
                0.0
            }
        });
        let neg = dense.symmetric_eigenvalues().iter().filter(|v| **v < 0.0).count();
        assert_eq!(t.negative_count(), neg);
    }
}
