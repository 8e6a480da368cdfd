//! Gauss rules and orthogonal-function recurrences.
//!
//! Legendre rules are used along the interface direction, Hermite rules across it.
//! Hermite functions are L²-normalized (Gaussian weight included) and evaluated by
//! the three-term recurrence, so no factorials are ever formed.

use std::f64::consts::PI;

use faer::{Mat, Side};

/// Nodes and weights of a one-dimensional quadrature rule.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Affine map of a rule on [-1, 1] onto [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> GaussRule {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        GaussRule {
            nodes: self.nodes.iter().map(|t| mid + half * t).collect(),
            weights: self.weights.iter().map(|w| w * half).collect(),
        }
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Legendre polynomials P_0..=P_{n_max} at t.
pub fn legendre_values(n_max: usize, t: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_max + 1);
    legendre_values_into(n_max, t, &mut out);
    out
}

pub(crate) fn legendre_values_into(n_max: usize, t: f64, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    if n_max == 0 {
        return;
    }
    out.push(t);
    for k in 1..n_max {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * t * out[k] - kf * out[k - 1]) / (kf + 1.0);
        out.push(next);
    }
}

/// Value and derivative of P_n at t.
fn legendre_with_derivative(n: usize, t: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = t;
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * t * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let dp = nf * (t * p1 - p0) / (t * t - 1.0);
    (p1, dp)
}

/// n-point Gauss–Legendre rule on [-1, 1], nodes ascending.
pub fn gauss_legendre(n: usize) -> GaussRule {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    if n == 1 {
        return GaussRule {
            nodes: vec![0.0],
            weights: vec![2.0],
        };
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut t = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, t);
            let step = p / dp;
            t -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, t);
        let w = 2.0 / ((1.0 - t * t) * dp * dp);
        nodes[n - 1 - i] = t;
        nodes[i] = -t;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    GaussRule { nodes, weights }
}

/// L²-normalized Hermite functions φ_0..=φ_{n_max} at y.
pub fn hermite_functions(n_max: usize, y: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_max + 1);
    hermite_functions_into(n_max, y, &mut out);
    out
}

pub(crate) fn hermite_functions_into(n_max: usize, y: f64, out: &mut Vec<f64>) {
    out.clear();
    out.push(PI.powf(-0.25) * (-0.5 * y * y).exp());
    if n_max == 0 {
        return;
    }
    out.push(2f64.sqrt() * y * out[0]);
    for k in 1..n_max {
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * y * out[k] - (kf / (kf + 1.0)).sqrt() * out[k - 1];
        out.push(next);
    }
}

/// Derivatives φ_n' for n = 0..=n_max, from φ_n' = √(n/2) φ_{n-1} − √((n+1)/2) φ_{n+1}.
pub fn hermite_derivatives(n_max: usize, y: f64) -> Vec<f64> {
    let phi = hermite_functions(n_max + 1, y);
    (0..=n_max)
        .map(|n| {
            let nf = n as f64;
            let down = if n > 0 { (nf / 2.0).sqrt() * phi[n - 1] } else { 0.0 };
            down - ((nf + 1.0) / 2.0).sqrt() * phi[n + 1]
        })
        .collect()
}

/// n-point Gauss–Hermite rule with weights rescaled by e^{y²}.
///
/// `Σ w_j f(y_j)` approximates `∫ f(y) dy` for f = e^{-y²}·polynomial, which is the form
/// taken by products of two Hermite functions. Nodes come from the Jacobi matrix and
/// are Newton-polished; weights use 1/(n φ_{n-1}(y_j)²), which stays accurate in the tails.
pub fn gauss_hermite_scaled(n: usize) -> GaussRule {
    assert!(n >= 1, "Gauss-Hermite rule needs at least one node");
    let jacobi = Mat::<f64>::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut nodes = jacobi
        .self_adjoint_eigenvalues(Side::Lower)
        .expect("symmetric tridiagonal eigenvalues");
    let nf = n as f64;
    let mut weights = Vec::with_capacity(n);
    for y in nodes.iter_mut() {
        for _ in 0..8 {
            let phi = hermite_functions(n, *y);
            if phi[n - 1] == 0.0 {
                break;
            }
            let step = phi[n] / ((2.0 * nf).sqrt() * phi[n - 1]);
            *y -= step;
            if step.abs() < 1e-15 * (1.0 + y.abs()) {
                break;
            }
        }
        let phi = hermite_functions(n - 1, *y);
        weights.push(1.0 / (nf * phi[n - 1] * phi[n - 1]));
    }
    GaussRule { nodes, weights }
}
