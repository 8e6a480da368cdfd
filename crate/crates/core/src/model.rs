//! Block Dirac models and the fermionic time-reversal operator.
//!
//! A model is `h_p^{⊕M} ⊕ conj(h_p)^{⊕N}` acting on spinors of dimension 2(M+N).
//! Components are laid out block by block, h-blocks first; block `s` owns components
//! `2s` (upper, Hermite level n−p) and `2s+1` (lower, level n).

use faer::Mat;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::perturbation::PerturbationSpec;

/// Unperturbed block Hamiltonian and its structural metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockModel {
    /// Ladder power of each block.
    pub p: usize,
    /// Number of h_p blocks.
    pub m: usize,
    /// Number of conjugate blocks.
    pub n: usize,
}

/// Validates the block counts and builds the model.
pub fn build_model(m: usize, n: usize, p: usize) -> Result<BlockModel> {
    if m + n == 0 {
        return Err(Error::InvalidModel { m, n, p, reason: "at least one block is required" });
    }
    if p < 1 {
        return Err(Error::InvalidModel { m, n, p, reason: "ladder power must be at least 1" });
    }
    Ok(BlockModel { p, m, n })
}

impl BlockModel {
    pub fn num_blocks(&self) -> usize {
        self.m + self.n
    }

    pub fn spinor_dim(&self) -> usize {
        2 * (self.m + self.n)
    }

    pub fn ftr_symmetric(&self) -> bool {
        self.m == self.n
    }

    /// Whether block `s` is a conjugate block.
    pub fn is_conjugated(&self, s: usize) -> bool {
        s >= self.m
    }
}

/// θ = K·J with J = [[0, I],[−I, 0]] in the h/h̄ block layout.
///
/// J sends the h-half of a spinor to the h̄-half: block s is paired with block M+s.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThetaStructure {
    half: usize,
}

impl ThetaStructure {
    pub fn new(model: &BlockModel) -> Result<Self> {
        if !model.ftr_symmetric() {
            return Err(Error::NotFtrModel { m: model.m, n: model.n });
        }
        Ok(Self { half: 2 * model.m })
    }

    pub fn dim(&self) -> usize {
        2 * self.half
    }

    /// Block paired with `s` under θ.
    pub fn partner_block(&self, s: usize) -> usize {
        let m = self.half / 2;
        if s < m {
            s + m
        } else {
            s - m
        }
    }

    /// The real matrix J.
    pub fn j_matrix(&self) -> Mat<C64> {
        let h = self.half;
        Mat::from_fn(2 * h, 2 * h, |i, j| {
            if i < h && j == i + h {
                C64::new(1.0, 0.0)
            } else if i >= h && j + h == i {
                C64::new(-1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }

    /// θv = conj(Jv), with (Jv)_+ = v_- and (Jv)_- = −v_+.
    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let h = self.half;
        assert_eq!(v.len(), 2 * h);
        let mut out = Vec::with_capacity(2 * h);
        out.extend(v[h..].iter().map(|z| z.conj()));
        out.extend(v[..h].iter().map(|z| -z.conj()));
        out
    }

    /// θ applied column by column: J·conj(A).
    pub fn apply_columns(&self, a: &Mat<C64>) -> Mat<C64> {
        let h = self.half;
        Mat::from_fn(a.nrows(), a.ncols(), |i, j| {
            if i < h {
                a[(i + h, j)].conj()
            } else {
                -a[(i - h, j)].conj()
            }
        })
    }

    /// θ*Aθ = −J·conj(A)·J.
    pub fn conjugate_operator(&self, a: &Mat<C64>) -> Mat<C64> {
        let h = self.half;
        let n = 2 * h;
        assert_eq!(a.nrows(), n);
        // (J Ā J)_{ij} = Σ J_ik Ā_kl J_lj; J_ik = ±1 at k = i ± h.
        Mat::from_fn(n, n, |i, j| {
            let (k, sk) = if i < h { (i + h, 1.0) } else { (i - h, -1.0) };
            let (l, sl) = if j < h { (j + h, -1.0) } else { (j - h, 1.0) };
            -a[(k, l)].conj() * (sk * sl)
        })
    }
}

/// Relative Frobenius norm of `a`.
fn frob(a: &Mat<C64>) -> f64 {
    a.norm_l2()
}

/// max over the grid of ‖θ*Vθ − V‖_F / (1 + ‖V‖_F).
pub fn ftr_residual(v: &PerturbationSpec, model: &BlockModel, grid: &[(f64, f64)]) -> Result<f64> {
    let theta = ThetaStructure::new(model)?;
    if grid.is_empty() {
        return Err(Error::Empty("sample grid"));
    }
    check_dim(v, model)?;
    let mut worst = 0.0f64;
    for &(x, y) in grid {
        let a = v.evaluate(x, y);
        let diff = theta.conjugate_operator(&a) - &a;
        worst = worst.max(frob(&diff) / (1.0 + frob(&a)));
    }
    Ok(worst)
}

/// max over the grid of ‖V − V*‖_F / (1 + ‖V‖_F).
pub fn hermiticity_residual(v: &PerturbationSpec, grid: &[(f64, f64)]) -> f64 {
    grid.iter()
        .map(|&(x, y)| {
            let a = v.evaluate(x, y);
            let diff = &a - a.adjoint();
            frob(&diff) / (1.0 + frob(&a))
        })
        .fold(0.0, f64::max)
}

/// Uniform n×n grid over [0, l] × [−y_max, y_max].
pub fn support_grid(l: f64, y_max: f64, n: usize) -> Vec<(f64, f64)> {
    let step = |k: usize, lo: f64, hi: f64| lo + (hi - lo) * k as f64 / (n.max(2) - 1) as f64;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push((step(i, 0.0, l), step(j, -y_max, y_max)));
        }
    }
    out
}

pub(crate) fn check_dim(v: &PerturbationSpec, model: &BlockModel) -> Result<()> {
    if v.dim != model.spinor_dim() {
        return Err(Error::DimensionMismatch {
            name: v.name.clone(),
            needed: v.dim,
            have: model.spinor_dim(),
        });
    }
    Ok(())
}
