//! Band-level classification: spectral flow of branches through an energy window,
//! conductivity and Z2 index from flows, and the two-branch gap-opening construction.

use std::fmt;
use std::sync::Arc;

use faer::{Mat, Side};

use crate::error::{Error, Result};
use crate::model::BlockModel;
use crate::spectral::{branch_energy, ladder_coeff, Sign};
use crate::C64;

/// Tolerance on endpoint energies sitting on the window edges.
pub const ENDPOINT_TOL: f64 = 1e-9;

#[derive(Clone)]
enum Evaluation {
    Closed(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    Tabulated { xi: Vec<f64>, energy: Vec<f64> },
}

/// A spectral branch ξ ↦ E(ξ) on Ξ = (ξ₋, ξ₊) whose endpoint energies lie on the window edges.
#[derive(Clone)]
pub struct BranchCurve {
    pub label: String,
    pub domain: (f64, f64),
    /// Energy window [E₋, E₊].
    pub window: (f64, f64),
    eval: Evaluation,
}

impl fmt::Debug for BranchCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BranchCurve")
            .field("label", &self.label)
            .field("domain", &self.domain)
            .field("window", &self.window)
            .field("endpoints", &self.endpoint_energies())
            .finish()
    }
}

impl BranchCurve {
    /// Branch given in closed form.
    pub fn closed(
        label: impl Into<String>,
        domain: (f64, f64),
        window: (f64, f64),
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let curve = BranchCurve { label: label.into(), domain, window, eval: Evaluation::Closed(Arc::new(f)) };
        curve.validate()?;
        Ok(curve)
    }

    /// Branch from samples (ξ increasing), linearly interpolated.
    pub fn tabulated(label: impl Into<String>, xi: Vec<f64>, energy: Vec<f64>, window: (f64, f64)) -> Result<Self> {
        if xi.len() < 2 || xi.len() != energy.len() {
            return Err(Error::Empty("branch samples"));
        }
        let domain = (xi[0], xi[xi.len() - 1]);
        let curve = BranchCurve { label: label.into(), domain, window, eval: Evaluation::Tabulated { xi, energy } };
        curve.validate()?;
        Ok(curve)
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.window;
        for e in [self.energy(self.domain.0), self.energy(self.domain.1)] {
            if (e - lo).abs() > ENDPOINT_TOL && (e - hi).abs() > ENDPOINT_TOL {
                return Err(Error::BranchEndpoint { energy: e, e_minus: lo, e_plus: hi });
            }
        }
        Ok(())
    }

    pub fn energy(&self, xi: f64) -> f64 {
        match &self.eval {
            Evaluation::Closed(f) => f(xi),
            Evaluation::Tabulated { xi: xs, energy } => {
                let k = xs.partition_point(|&x| x <= xi).clamp(1, xs.len() - 1);
                let t = (xi - xs[k - 1]) / (xs[k] - xs[k - 1]);
                energy[k - 1] + t * (energy[k] - energy[k - 1])
            }
        }
    }

    pub fn endpoint_energies(&self) -> (f64, f64) {
        (self.energy(self.domain.0), self.energy(self.domain.1))
    }
}

/// sgn(E(ξ₊) − E(ξ₋)): +1 for an upward crossing, −1 downward, 0 otherwise.
pub fn spectral_flow(branch: &BranchCurve) -> i32 {
    let (e0, e1) = branch.endpoint_energies();
    let (lo, hi) = branch.window;
    let snap = |e: f64| if (e - lo).abs() <= (e - hi).abs() { lo } else { hi };
    let (s0, s1) = (snap(e0), snap(e1));
    if s0 == s1 {
        0
    } else if s1 > s0 {
        1
    } else {
        -1
    }
}

/// 2πσ_I of the selected half: the sum of flows.
pub fn sigma_from_flows(branches: &[BranchCurve]) -> i32 {
    branches.iter().map(spectral_flow).sum()
}

/// (−1)^σ for an integer σ.
pub fn parity_sign(sigma: i32) -> i8 {
    if sigma.rem_euclid(2) == 0 {
        1
    } else {
        -1
    }
}

/// Z2 index (−1)^{2πσ_I} of the half selected by `branches`.
pub fn index2_from_flows(branches: &[BranchCurve]) -> i8 {
    parity_sign(sigma_from_flows(branches))
}

/// Closed-form branches of the h-blocks (or all blocks) of a model inside [E₋, E₊].
///
/// Linear branches are cut to the crossing segment. Each hyperbola band is kept whole over
/// the ξ-interval where it stays on the window's side of its band edge, so both endpoints sit
/// on the same window edge and the flow is 0.
pub fn dirac_branches(model: &BlockModel, window: (f64, f64), all_blocks: bool) -> Result<Vec<BranchCurve>> {
    let (lo, hi) = window;
    if !(hi > lo) {
        return Err(Error::Empty("energy window"));
    }
    let p = model.p;
    let blocks = if all_blocks { model.num_blocks() } else { model.m };
    let mut out = Vec::new();
    for s in 0..blocks {
        let conj = model.is_conjugated(s);
        for n in 0..p {
            let domain = if conj { (lo, hi) } else { (-hi, -lo) };
            out.push(BranchCurve::closed(format!("s{s} n{n} linear"), domain, window, move |xi| {
                branch_energy(n, p, conj, Sign::Plus, xi)
            })?);
        }
        let mut n = p;
        loop {
            let beta = ladder_coeff(n, p);
            if beta >= hi.abs().max(lo.abs()) {
                break;
            }
            for band in [Sign::Plus, Sign::Minus] {
                let edge = if band == Sign::Plus { hi } else { lo };
                if band.value() * edge <= beta {
                    continue;
                }
                let k = (edge * edge - beta * beta).sqrt();
                out.push(BranchCurve::closed(format!("s{s} n{n} {band}"), (-k, k), window, move |xi| {
                    branch_energy(n, p, conj, band, xi)
                })?);
            }
            n += 1;
        }
    }
    Ok(out)
}

/// Index₂ of an FTR model read off the branches of its h-blocks in a window.
pub fn model_index2(model: &BlockModel, window: (f64, f64)) -> Result<i8> {
    if !model.ftr_symmetric() {
        return Err(Error::NotFtrModel { m: model.m, n: model.n });
    }
    Ok(index2_from_flows(&dirac_branches(model, window, false)?))
}

/// |α|(ξ) = ((E₊ − E₋ − 2δ)/2) √(1 − ξ²/δ²) on [−δ, δ].
pub fn gap_alpha(xi: f64, e_minus: f64, e_plus: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0) || !(e_plus - e_minus > 2.0 * delta) {
        return Err(Error::InvalidGap { e_minus, e_plus, delta });
    }
    if xi.abs() > delta {
        return Err(Error::OutsideGapWindow { xi, delta });
    }
    let half = (e_plus - e_minus - 2.0 * delta) / 2.0;
    Ok(half * (1.0 - (xi / delta).powi(2)).max(0.0).sqrt())
}

/// The coupling α(ξ) between two crossing branches, optionally scaled by μ ∈ [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapCoupling {
    pub e_minus: f64,
    pub e_plus: f64,
    pub delta: f64,
    pub scale: f64,
}

impl GapCoupling {
    pub fn new(e_minus: f64, e_plus: f64, delta: f64) -> Result<Self> {
        gap_alpha(0.0, e_minus, e_plus, delta)?;
        Ok(Self { e_minus, e_plus, delta, scale: 1.0 })
    }

    pub fn scaled(self, mu: f64) -> Self {
        Self { scale: mu, ..self }
    }

    pub fn alpha(&self, xi: f64) -> Result<f64> {
        Ok(self.scale * gap_alpha(xi, self.e_minus, self.e_plus, self.delta)?)
    }

    /// Slope of the affine crossing branches E₁,₂ = ∓cξ + (E₊ + E₋)/2.
    fn slope(&self) -> f64 {
        (self.e_plus - self.e_minus - 2.0 * self.delta) / (2.0 * self.delta)
    }

    /// The affine pair (E₁, E₂) at ξ.
    pub fn affine_branches(&self, xi: f64) -> (f64, f64) {
        let mid = (self.e_plus + self.e_minus) / 2.0;
        let c = self.slope();
        (mid - c * xi, mid + c * xi)
    }

    /// Coupled spectrum of the affine pair at ξ.
    pub fn spectrum(&self, xi: f64) -> Result<CoupledSpectrum> {
        let (e1, e2) = self.affine_branches(xi);
        Ok(coupled_spectrum(e1, e2, self.alpha(xi)?))
    }
}

/// Density of H + Q₁₂ in the basis (ψ₁, ψ₂, θψ₁, θψ₂).
pub fn coupling_matrix(e1: f64, e2: f64, alpha: C64) -> Mat<C64> {
    let z = C64::new(0.0, 0.0);
    let (r1, r2) = (C64::new(e1, 0.0), C64::new(e2, 0.0));
    let rows = [
        [r1, z, z, alpha],
        [z, r2, -alpha, z],
        [z, -alpha.conj(), r1, z],
        [alpha.conj(), z, z, r2],
    ];
    Mat::from_fn(4, 4, |i, j| rows[i][j])
}

/// Numerical eigen-decomposition of [`coupling_matrix`] next to its closed form.
#[derive(Debug, Clone)]
pub struct CoupledSpectrum {
    /// Closed-form λ₋, λ₊.
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    /// Numerical eigenvalues, nondecreasing.
    pub eigenvalues: [f64; 4],
    /// Eigenvectors as columns, matching `eigenvalues`.
    pub eigenvectors: Mat<C64>,
}

impl CoupledSpectrum {
    /// max |numerical − closed form| over the four eigenvalues (two per λ).
    pub fn closed_form_defect(&self) -> f64 {
        let expect = [self.lambda_minus, self.lambda_minus, self.lambda_plus, self.lambda_plus];
        self.eigenvalues.iter().zip(expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Largest of ‖(D − λ)θv‖ and |⟨v, θv⟩| over the eigenvectors v: each eigenvector's θ-image
    /// is an orthogonal partner with the same eigenvalue.
    pub fn doublet_defect(&self, e1: f64, e2: f64, alpha: C64) -> f64 {
        let d = coupling_matrix(e1, e2, alpha);
        let mut worst: f64 = 0.0;
        for k in 0..4 {
            let v: Vec<C64> = (0..4).map(|i| self.eigenvectors[(i, k)]).collect();
            let tv = theta_basis(&v);
            let mut res: f64 = 0.0;
            for i in 0..4 {
                let mut acc = -tv[i] * self.eigenvalues[k];
                for j in 0..4 {
                    acc += d[(i, j)] * tv[j];
                }
                res += acc.norm_sqr();
            }
            let overlap: C64 = v.iter().zip(&tv).map(|(a, b)| a.conj() * b).sum();
            worst = worst.max(res.sqrt()).max(overlap.norm());
        }
        worst
    }
}

/// θ in the basis (ψ₁, ψ₂, θψ₁, θψ₂): antiunitary with θ² = −1.
fn theta_basis(v: &[C64]) -> [C64; 4] {
    [-v[2].conj(), -v[3].conj(), v[0].conj(), v[1].conj()]
}

/// λ± = (E₁+E₂)/2 ± √(α² + (E₁−E₂)²/4), each doubly degenerate, plus the numerical spectrum.
pub fn coupled_spectrum(e1: f64, e2: f64, alpha: f64) -> CoupledSpectrum {
    let mid = (e1 + e2) / 2.0;
    let rad = (alpha * alpha + (e1 - e2).powi(2) / 4.0).sqrt();
    let d = coupling_matrix(e1, e2, C64::new(alpha, 0.0));
    let eig = d.self_adjoint_eigen(Side::Lower).expect("4x4 Hermitian eigendecomposition");
    let s = eig.S().column_vector();
    let eigenvalues = [s[0].re, s[1].re, s[2].re, s[3].re];
    CoupledSpectrum {
        lambda_minus: mid - rad,
        lambda_plus: mid + rad,
        eigenvalues,
        eigenvectors: eig.U().to_owned(),
    }
}

/// Result of gapping branches pairwise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pairing {
    /// Indices of non-crossing branches deformed away.
    pub removed: Vec<usize>,
    /// Pairs of crossing branches gapped against each other.
    pub pairs: Vec<(usize, usize)>,
    /// Crossing branches left over (0 or 1).
    pub residual: usize,
    pub index2: i8,
}

/// Removes non-crossing branches, pairs crossing ones off in order, and reports the leftover
/// parity. The result agrees with (−1)^{Σ flows} for any flows in {−1, 0, 1}.
pub fn gap_pairing(flows: &[i32]) -> Pairing {
    let mut removed = Vec::new();
    let mut crossing = Vec::new();
    for (i, &f) in flows.iter().enumerate() {
        if f == 0 {
            removed.push(i);
        } else {
            crossing.push(i);
        }
    }
    let pairs: Vec<(usize, usize)> = crossing.chunks_exact(2).map(|c| (c[0], c[1])).collect();
    let residual = crossing.len() % 2;
    let index2 = if residual == 0 { 1 } else { -1 };
    debug_assert_eq!(index2, parity_sign(flows.iter().sum()));
    Pairing { removed, pairs, residual, index2 }
}

/// [`gap_pairing`] on branch curves.
pub fn gap_pairing_branches(branches: &[BranchCurve]) -> Pairing {
    let flows: Vec<i32> = branches.iter().map(spectral_flow).collect();
    gap_pairing(&flows)
}

/// Index₂ of the sorted coupled branches λ±(ξ) on the inner window [E₋+δ, E₊−δ], for each
/// coupling scale μ. The affine pair has flows (−1, +1), so every entry should be +1.
pub fn deformation_parities(coupling: &GapCoupling, mus: &[f64], samples: usize) -> Result<Vec<i8>> {
    let inner = (coupling.e_minus + coupling.delta, coupling.e_plus - coupling.delta);
    let samples = samples.max(2);
    let xs: Vec<f64> =
        (0..samples)
            .map(|k| (-coupling.delta + 2.0 * coupling.delta * k as f64 / (samples - 1) as f64).min(coupling.delta))
            .collect();
    let mut out = Vec::with_capacity(mus.len());
    for &mu in mus {
        let c = coupling.scaled(mu);
        let mut lower = Vec::with_capacity(samples);
        let mut upper = Vec::with_capacity(samples);
        for &x in &xs {
            let sp = c.spectrum(x)?;
            lower.push(sp.eigenvalues[0]);
            upper.push(sp.eigenvalues[3]);
        }
        let curves = [
            BranchCurve::tabulated("lambda-", xs.clone(), lower, inner)?,
            BranchCurve::tabulated("lambda+", xs.clone(), upper, inner)?,
        ];
        out.push(index2_from_flows(&curves));
    }
    Ok(out)
}
