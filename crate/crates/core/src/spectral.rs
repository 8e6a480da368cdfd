//! Hermite basis, exact branches of the block symbols and mode enumeration.
//!
//! Block symbols in the working basis:
//! `ĥ_p(ξ) = [[ξ, 𝔞^p], [(𝔞*)^p, −ξ]]` and `conj(ĥ_p)(ξ) = [[−ξ, 𝔞^p], [(𝔞*)^p, ξ]]`
//! with `𝔞 = ∂_y + y`. On Hermite functions `𝔞^p φ_n = β_n φ_{n−p}`.

use std::fmt;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::model::BlockModel;
use crate::quadrature::{gauss_hermite_scaled, hermite_functions, GaussRule};

/// Band-edge rejection tolerance on |E| − β_n.
pub const BAND_EDGE_TOL: f64 = 1e-9;

/// Hermite functions φ_0..=φ_{n_max} tabulated on a scaled Gauss–Hermite rule.
#[derive(Debug, Clone)]
pub struct HermiteBasis {
    pub n_max: usize,
    pub rule: GaussRule,
    /// `values[q][n] = φ_n(y_q)`.
    pub values: Vec<Vec<f64>>,
}

impl HermiteBasis {
    pub fn new(n_max: usize, n_quad: usize) -> Self {
        let rule = gauss_hermite_scaled(n_quad);
        let values = rule.nodes.iter().map(|&y| hermite_functions(n_max, y)).collect();
        Self { n_max, rule, values }
    }

    /// Quadrature inner product ⟨φ_a, φ_b⟩.
    pub fn inner(&self, a: usize, b: usize) -> f64 {
        self.values
            .iter()
            .zip(&self.rule.weights)
            .map(|(v, w)| w * v[a] * v[b])
            .sum()
    }

    /// max |⟨φ_a, φ_b⟩ − δ_ab| over a, b ≤ n_max.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for a in 0..=self.n_max {
            for b in a..=self.n_max {
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((self.inner(a, b) - target).abs());
            }
        }
        worst
    }
}

/// β_n = √(2^p n!/(n−p)!), zero for n < p.
pub fn ladder_coeff(n: usize, p: usize) -> f64 {
    if n < p {
        return 0.0;
    }
    ((n - p + 1)..=n).map(|k| 2.0 * k as f64).product::<f64>().sqrt()
}

/// Branch sign ε.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sign {
    Minus,
    Plus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Plus => "+",
            Sign::Minus => "-",
        })
    }
}

/// ξ for branch (n, ε): ε√(E²−β_n²) on the principal branch, or εE when n < p.
pub fn branch_xi(e: f64, n: usize, p: usize, sign: Sign) -> Result<C64> {
    if n < p {
        return Ok(C64::new(sign.value() * e, 0.0));
    }
    let beta = ladder_coeff(n, p);
    let gap = e * e - beta * beta;
    if gap.abs() <= 1e-12 {
        return Err(Error::BandEdge { energy: e, level: n, gap: gap.abs() });
    }
    let root = if gap > 0.0 {
        C64::new(gap.sqrt(), 0.0)
    } else {
        C64::new(0.0, (-gap).sqrt())
    };
    Ok(root * sign.value())
}

/// Whether branch (n, ε) exists on an h-block (`conjugated = false`) or a conjugate block.
pub fn branch_exists(n: usize, p: usize, sign: Sign, conjugated: bool) -> bool {
    n >= p || sign == if conjugated { Sign::Plus } else { Sign::Minus }
}

/// Normalized spinor profile (upper on level n−p, lower on level n).
///
/// h-blocks use c(β_n, E−ξ); conjugate blocks c(β_n, E+ξ).
pub fn mode_profile(e: f64, n: usize, p: usize, sign: Sign, conjugated: bool) -> Result<(C64, C64)> {
    if !branch_exists(n, p, sign, conjugated) {
        return Err(Error::NoSuchMode { level: n, sign: sign.as_i8() });
    }
    let xi = branch_xi(e, n, p, sign)?;
    Ok(profile_from_xi(e, n, p, xi, conjugated))
}

fn profile_from_xi(e: f64, n: usize, p: usize, xi: C64, conjugated: bool) -> (C64, C64) {
    if n < p {
        return (C64::new(0.0, 0.0), C64::new(e.signum(), 0.0));
    }
    let beta = C64::new(ladder_coeff(n, p), 0.0);
    let lower = if conjugated { e + xi } else { e - xi };
    let norm = (beta.norm_sqr() + lower.norm_sqr()).sqrt();
    (beta / norm, lower / norm)
}

/// Direction and decay class of a mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModeKind {
    PropRight,
    PropLeft,
    EvanRight,
    EvanLeft,
}

impl ModeKind {
    pub fn is_propagating(self) -> bool {
        matches!(self, ModeKind::PropRight | ModeKind::PropLeft)
    }

    pub fn is_right_going(self) -> bool {
        matches!(self, ModeKind::PropRight | ModeKind::EvanRight)
    }
}

/// One branch of the unperturbed model at a fixed energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub block: usize,
    pub conjugated: bool,
    pub level: usize,
    pub sign: Sign,
    pub xi: C64,
    /// Current ∂_ξE along the branch; zero for evanescent modes.
    pub current: f64,
    /// Coefficient on Hermite level n−p of the upper component.
    pub upper_coeff: C64,
    /// Coefficient on Hermite level n of the lower component.
    pub lower_coeff: C64,
    pub kind: ModeKind,
}

impl Mode {
    /// Builds mode (n, ε) on block `block` of `model`.
    pub fn new(model: &BlockModel, e: f64, block: usize, level: usize, sign: Sign) -> Result<Mode> {
        let conjugated = model.is_conjugated(block);
        let p = model.p;
        if !branch_exists(level, p, sign, conjugated) {
            return Err(Error::NoSuchMode { level, sign: sign.as_i8() });
        }
        let xi = branch_xi(e, level, p, sign)?;
        let (upper_coeff, lower_coeff) = profile_from_xi(e, level, p, xi, conjugated);
        let mut mode = Mode {
            block,
            conjugated,
            level,
            sign,
            xi,
            current: 0.0,
            upper_coeff,
            lower_coeff,
            kind: ModeKind::EvanRight,
        };
        mode.current = mode_current(&mode, e);
        mode.kind = if mode.is_propagating() {
            if mode.current > 0.0 {
                ModeKind::PropRight
            } else {
                ModeKind::PropLeft
            }
        } else if xi.im > 0.0 {
            ModeKind::EvanRight
        } else {
            ModeKind::EvanLeft
        };
        Ok(mode)
    }

    pub fn is_propagating(&self) -> bool {
        self.xi.im == 0.0
    }

    /// Decay rate |Im ξ|.
    pub fn decay(&self) -> f64 {
        self.xi.im.abs()
    }

    /// Identity of the branch independent of the energy-dependent data.
    pub fn key(&self) -> (usize, usize, Sign) {
        (self.block, self.level, self.sign)
    }
}

/// ∂_ξE on the branch: ξ/E on dispersive branches, ∓1 on linear ones, 0 if evanescent.
pub fn mode_current(mode: &Mode, e: f64) -> f64 {
    if mode.xi.im != 0.0 {
        return 0.0;
    }
    // Only linear branches (n < p) have a vanishing upper component.
    if mode.upper_coeff.norm() == 0.0 {
        return if mode.conjugated { 1.0 } else { -1.0 };
    }
    mode.xi.re / e
}

/// Energy of band `band` (±) on branch level n at wavenumber ξ.
///
/// Linear branches (n < p) ignore `band`: E = −ξ on h-blocks, E = ξ on conjugate blocks.
pub fn branch_energy(n: usize, p: usize, conjugated: bool, band: Sign, xi: f64) -> f64 {
    if n < p {
        return if conjugated { xi } else { -xi };
    }
    let beta = ladder_coeff(n, p);
    band.value() * (xi * xi + beta * beta).sqrt()
}

/// All modes of a model at one energy, in canonical order.
#[derive(Debug, Clone)]
pub struct ModeBasis {
    pub energy: f64,
    pub modes: Vec<Mode>,
    pub n_plus: usize,
    pub n_minus: usize,
    pub n_evan: usize,
    pub n_mode_max: usize,
}

impl ModeBasis {
    fn of_kind(&self, pred: impl Fn(ModeKind) -> bool) -> Vec<Mode> {
        self.modes.iter().filter(|m| pred(m.kind)).copied().collect()
    }

    /// Right-going channels: propagating first, then evanescent.
    pub fn right_going(&self) -> Vec<Mode> {
        self.of_kind(ModeKind::is_right_going)
    }

    /// Left-going channels: propagating first, then evanescent.
    pub fn left_going(&self) -> Vec<Mode> {
        self.of_kind(|k| !k.is_right_going())
    }

    pub fn propagating_right(&self) -> Vec<Mode> {
        self.of_kind(|k| k == ModeKind::PropRight)
    }

    pub fn propagating_left(&self) -> Vec<Mode> {
        self.of_kind(|k| k == ModeKind::PropLeft)
    }
}

/// Enumerates every admitted (s, n ≤ n_mode_max, ε) mode at energy `e`.
pub fn enumerate_modes(model: &BlockModel, e: f64, n_mode_max: usize) -> Result<ModeBasis> {
    let p = model.p;
    for n in p..=n_mode_max {
        let gap = (e.abs() - ladder_coeff(n, p)).abs();
        if gap <= BAND_EDGE_TOL {
            return Err(Error::BandEdge { energy: e, level: n, gap });
        }
    }
    let mut top = 0;
    while ladder_coeff(top + 1, p) < e.abs() {
        top += 1;
    }
    if top > n_mode_max {
        return Err(Error::TruncationTooSmall { n_mode_max, level: top });
    }
    let mut modes = Vec::new();
    for block in 0..model.num_blocks() {
        for level in 0..=n_mode_max {
            for sign in [Sign::Minus, Sign::Plus] {
                if branch_exists(level, p, sign, model.is_conjugated(block)) {
                    modes.push(Mode::new(model, e, block, level, sign)?);
                }
            }
        }
    }
    let group = |m: &Mode| match m.kind {
        ModeKind::PropRight => 0,
        ModeKind::PropLeft => 1,
        _ => 2,
    };
    modes.sort_by(|a, b| {
        group(a)
            .cmp(&group(b))
            .then_with(|| a.decay().total_cmp(&b.decay()))
            .then_with(|| a.key().cmp(&b.key()))
    });
    let count = |k: ModeKind| modes.iter().filter(|m| m.kind == k).count();
    let n_plus = count(ModeKind::PropRight);
    let n_minus = count(ModeKind::PropLeft);
    let n_evan = modes.len() - n_plus - n_minus;
    Ok(ModeBasis { energy: e, modes, n_plus, n_minus, n_evan, n_mode_max })
}
