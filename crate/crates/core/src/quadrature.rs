//! One-dimensional quadrature: Gauss rules from their Jacobi matrices,
//! adaptive Gauss-Legendre, and double-exponential integration on `[0, 1]`.

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::function::gamma::ln_gamma;

/// Nodes and weights of a Gauss rule, nodes ascending.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    /// Applies the rule on `[a, b]` (affine change of variables, unweighted rules only).
    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }
}

// Golub-Welsch: eigenvalues of the Jacobi matrix are the nodes, squared first
// eigenvector components times the zeroth moment are the weights.
fn golub_welsch(diag: &[f64], off: &[f64], mu0: f64) -> GaussRule {
    let n = diag.len();
    let mut j = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        j[(i, i)] = diag[i];
        if i + 1 < n {
            j[(i, i + 1)] = off[i];
            j[(i + 1, i)] = off[i];
        }
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    GaussRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> GaussRule {
    assert!(n >= 1);
    let diag = vec![0.0; n];
    let off: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    let mut rule = golub_welsch(&diag, &off, 2.0);
    // symmetrize to remove eigen-solver noise
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (rule.nodes[j] - rule.nodes[i]);
        let w = 0.5 * (rule.weights[i] + rule.weights[j]);
        rule.nodes[i] = -x;
        rule.nodes[j] = x;
        rule.weights[i] = w;
        rule.weights[j] = w;
    }
    if n % 2 == 1 {
        rule.nodes[n / 2] = 0.0;
    }
    rule
}

/// `n`-point Gauss-Jacobi rule for the weight `(1-x)^alpha (1+x)^beta` on `[-1, 1]`.
pub fn gauss_jacobi(n: usize, alpha: f64, beta: f64) -> GaussRule {
    assert!(n >= 1 && alpha > -1.0 && beta > -1.0);
    let ab = alpha + beta;
    let diag: Vec<f64> = (0..n)
        .map(|k| {
            let k = k as f64;
            if k == 0.0 {
                (beta - alpha) / (ab + 2.0)
            } else {
                let s = 2.0 * k + ab;
                (beta * beta - alpha * alpha) / (s * (s + 2.0))
            }
        })
        .collect();
    let off: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            let s = 2.0 * k + ab;
            let num = 4.0 * k * (k + alpha) * (k + beta) * (k + ab);
            let den = s * s * (s + 1.0) * (s - 1.0);
            if k == 1.0 {
                // closed form avoids 0/0 when alpha + beta = -1
                (4.0 * (1.0 + alpha) * (1.0 + beta) / ((2.0 + ab).powi(2) * (3.0 + ab))).sqrt()
            } else {
                (num / den).sqrt()
            }
        })
        .collect();
    let ln_mu0 = (ab + 1.0) * std::f64::consts::LN_2 + ln_gamma(alpha + 1.0) + ln_gamma(beta + 1.0)
        - ln_gamma(ab + 2.0);
    golub_welsch(&diag, &off, ln_mu0.exp())
}

/// Adaptive Gauss-Legendre integration of a vector-valued integrand.
pub struct AdaptiveGauss {
    rule: GaussRule,
    tol: f64,
    max_depth: usize,
}

impl AdaptiveGauss {
    pub fn new(tol: f64) -> Self {
        Self { rule: gauss_legendre(12), tol, max_depth: 30 }
    }

    pub fn integrate<F>(&self, a: f64, b: f64, dim: usize, f: &F) -> Vec<f64>
    where
        F: Fn(f64, &mut [f64]),
    {
        let whole = self.panel(a, b, dim, f);
        let mut out = vec![0.0; dim];
        let scale = whole.iter().map(|v| v.abs()).fold(0.0, f64::max);
        self.refine(a, b, whole, dim, f, 0, scale, &mut out);
        out
    }

    fn panel<F: Fn(f64, &mut [f64])>(&self, a: f64, b: f64, dim: usize, f: &F) -> Vec<f64> {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = vec![0.0; dim];
        let mut buf = vec![0.0; dim];
        for (x, w) in self.rule.nodes.iter().zip(&self.rule.weights) {
            buf.iter_mut().for_each(|v| *v = 0.0);
            f(mid + half * x, &mut buf);
            for (a, v) in acc.iter_mut().zip(&buf) {
                *a += w * half * v;
            }
        }
        acc
    }

    #[allow(clippy::too_many_arguments)]
    fn refine<F: Fn(f64, &mut [f64])>(
        &self,
        a: f64,
        b: f64,
        whole: Vec<f64>,
        dim: usize,
        f: &F,
        depth: usize,
        global: f64,
        out: &mut [f64],
    ) {
        let mid = 0.5 * (a + b);
        let left = self.panel(a, mid, dim, f);
        let right = self.panel(mid, b, dim, f);
        let err = whole
            .iter()
            .zip(left.iter().zip(&right))
            .map(|(w, (l, r))| (w - l - r).abs())
            .fold(0.0, f64::max);
        let local = whole.iter().map(|v| v.abs()).fold(0.0, f64::max);
        // error is measured against the whole-interval magnitude; below a few
        // ulps of the panel sum the difference is rounding noise
        let target = self.tol * global.max(local);
        let floor = 64.0 * f64::EPSILON * local;
        if err <= target.max(floor) || err == 0.0 || !err.is_finite() || depth >= self.max_depth {
            for (o, (l, r)) in out.iter_mut().zip(left.iter().zip(&right)) {
                *o += l + r;
            }
            return;
        }
        self.refine(a, mid, left, dim, f, depth + 1, global, out);
        self.refine(mid, b, right, dim, f, depth + 1, global, out);
    }
}

/// Double-exponential (tanh-sinh) integration over `[0, 1]`.
///
/// The integrand receives `(t, 1 - t)` with the complement computed without
/// cancellation, so endpoint singularities of the form `t^a (1-t)^b` with
/// `a, b > -1` are handled to full precision.
pub fn tanh_sinh_unit<F: Fn(f64, f64) -> f64>(f: F, rel_tol: f64) -> f64 {
    let node = |u: f64| -> Option<(f64, f64, f64)> {
        let s = std::f64::consts::PI * u.sinh();
        // t = 1/(1+e^{-s}), 1-t = 1/(1+e^{s})
        let t = 1.0 / (1.0 + (-s).exp());
        let c = 1.0 / (1.0 + s.exp());
        let w = std::f64::consts::PI * u.cosh() * t * c;
        if t <= 0.0 || c <= 0.0 || !w.is_finite() {
            None
        } else {
            Some((t, c, w))
        }
    };
    let eval = |u: f64| node(u).map(|(t, c, w)| w * f(t, c)).unwrap_or(0.0);

    let u_max = 6.5;
    let mut h = 0.5;
    let mut sum = eval(0.0);
    let mut k = 1;
    while (k as f64) * h <= u_max {
        let u = k as f64 * h;
        sum += eval(u) + eval(-u);
        k += 1;
    }
    let mut estimate = h * sum;
    for _ in 0..12 {
        h *= 0.5;
        let mut extra = 0.0;
        let mut k = 1;
        while (k as f64) * h <= u_max {
            let u = k as f64 * h;
            extra += eval(u) + eval(-u);
            k += 2;
        }
        sum += extra;
        let next = h * sum;
        let done = (next - estimate).abs() <= rel_tol * next.abs();
        estimate = next;
        if done {
            break;
        }
    }
    estimate
}
