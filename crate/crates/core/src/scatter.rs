//! Transmission/reflection matrices, the star product and the scattering matrix.
//!
//! Amplitudes are edge-referenced: on an interval [a, b] a right-going channel enters
//! with phase e^{iξ(x−a)} and leaves with e^{iξ(x−b)}; left-going channels mirror this.
//! Evanescent channels then never carry growing exponentials.
//!
//! Block layout follows the scattering matrix `S = [[T₊, R₋], [R₊, T₋]]`: columns are
//! incoming amplitudes (right-going from the left, then left-going from the right), rows
//! are outgoing amplitudes (right-going at the right edge, then left-going at the left).

use std::collections::HashMap;
use std::fmt::Write as _;

use faer::linalg::solvers::DenseSolveCore;
use faer::Mat;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::model::{BlockModel, ThetaStructure};
use crate::perturbation::PerturbationSpec;
use crate::solver::{Edge, LeafDiscretization, LeafSystem};
use crate::spectral::{Mode, ModeBasis, Sign};

const I: C64 = C64::new(0.0, 1.0);

/// Default cap on κ·ℓ for evanescent channels kept in a TR matrix.
pub const EVANESCENT_CAP: f64 = 36.0;

/// Transmission/reflection blocks of one interval.
#[derive(Debug, Clone)]
pub struct TRMatrix {
    pub a: f64,
    pub b: f64,
    /// Right-going channels (propagating first, then evanescent).
    pub right: Vec<Mode>,
    /// Left-going channels (propagating first, then evanescent).
    pub left: Vec<Mode>,
    pub t_plus: Mat<C64>,
    pub r_minus: Mat<C64>,
    pub r_plus: Mat<C64>,
    pub t_minus: Mat<C64>,
    pub convention: &'static str,
}

impl TRMatrix {
    /// TR matrix of an interval without perturbation.
    pub fn free(a: f64, b: f64, right: Vec<Mode>, left: Vec<Mode>) -> Self {
        let len = b - a;
        let nr = right.len();
        let nl = left.len();
        let t_plus = Mat::from_fn(nr, nr, |i, j| if i == j { (I * right[i].xi * len).exp() } else { C64::new(0.0, 0.0) });
        let t_minus = Mat::from_fn(nl, nl, |i, j| if i == j { (-I * left[i].xi * len).exp() } else { C64::new(0.0, 0.0) });
        Self {
            a,
            b,
            right,
            left,
            t_plus,
            r_minus: Mat::zeros(nr, nl),
            r_plus: Mat::zeros(nl, nr),
            t_minus,
            convention: "edge",
        }
    }

    /// Full matrix [[T₊, R₋], [R₊, T₋]].
    pub fn to_matrix(&self) -> Mat<C64> {
        stack_blocks(&self.t_plus, &self.r_minus, &self.r_plus, &self.t_minus)
    }

    fn same_channels(&self, other: &TRMatrix) -> bool {
        let keys = |v: &[Mode]| v.iter().map(Mode::key).collect::<Vec<_>>();
        keys(&self.right) == keys(&other.right) && keys(&self.left) == keys(&other.left)
    }
}

fn stack_blocks(tl: &Mat<C64>, tr: &Mat<C64>, bl: &Mat<C64>, br: &Mat<C64>) -> Mat<C64> {
    let (r1, c1) = (tl.nrows(), tl.ncols());
    let n_rows = r1 + bl.nrows();
    let n_cols = c1 + tr.ncols();
    Mat::from_fn(n_rows, n_cols, |i, j| match (i < r1, j < c1) {
        (true, true) => tl[(i, j)],
        (true, false) => tr[(i, j - c1)],
        (false, true) => bl[(i - r1, j)],
        (false, false) => br[(i - r1, j - c1)],
    })
}

/// Channels of `basis` kept on an interval of length `len`.
pub fn retained_channels(basis: &ModeBasis, len: f64, cap: f64) -> (Vec<Mode>, Vec<Mode>) {
    let keep = |m: &Mode| m.decay() * len <= cap;
    (
        basis.right_going().into_iter().filter(keep).collect(),
        basis.left_going().into_iter().filter(keep).collect(),
    )
}

/// Splits level fields (F_u, F_l) of one (block, channel) pair into mode amplitudes.
struct Splitter {
    keys: Vec<(usize, usize, Sign)>,
    /// Inverse of the profile matrix (columns are the mode profiles).
    inv: [[C64; 2]; 2],
}

impl Splitter {
    fn new(modes: &[&Mode]) -> Result<Self> {
        let zero = C64::new(0.0, 0.0);
        let keys = modes.iter().map(|m| m.key()).collect();
        match modes {
            [m] => Ok(Self { keys, inv: [[zero, 1.0 / m.lower_coeff], [zero, zero]] }),
            [m0, m1] => {
                let (a, b, c, d) = (m0.upper_coeff, m1.upper_coeff, m0.lower_coeff, m1.lower_coeff);
                let det = a * d - b * c;
                if det.norm() < 1e-10 {
                    return Err(Error::DegenerateProfile { block: m0.block, level: m0.level });
                }
                Ok(Self { keys, inv: [[d / det, -b / det], [-c / det, a / det]] })
            }
            _ => unreachable!("a channel holds one or two modes"),
        }
    }

    fn amplitudes(&self, f: [C64; 2]) -> [C64; 2] {
        let r = |k: usize| self.inv[k][0] * f[0] + self.inv[k][1] * f[1];
        if self.keys.len() == 1 {
            [f[1] * self.inv[0][1], C64::new(0.0, 0.0)]
        } else {
            [r(0), r(1)]
        }
    }
}

/// TR matrix of one leaf, keeping evanescent channels with κ·ℓ ≤ [`EVANESCENT_CAP`].
pub fn leaf_tr(
    model: &BlockModel,
    v: &PerturbationSpec,
    e: f64,
    disc: &LeafDiscretization,
    basis: &ModeBasis,
) -> Result<TRMatrix> {
    leaf_tr_with_cap(model, v, e, disc, basis, EVANESCENT_CAP)
}

pub fn leaf_tr_with_cap(
    model: &BlockModel,
    v: &PerturbationSpec,
    e: f64,
    disc: &LeafDiscretization,
    basis: &ModeBasis,
    cap: f64,
) -> Result<TRMatrix> {
    if basis.n_mode_max >= disc.n_chan {
        return Err(Error::InvalidDiscretization(format!(
            "mode basis reaches level {} but only {} channels are represented",
            basis.n_mode_max, disc.n_chan
        )));
    }
    if v.vanishes_on(disc.a, disc.b) {
        let (right, left) = retained_channels(basis, disc.length(), cap);
        return Ok(TRMatrix::free(disc.a, disc.b, right, left));
    }
    let sys = LeafSystem::new(model, v, e, disc)?;
    leaf_tr_from_system(&sys, basis, cap)
}

/// TR matrix from an already factored leaf system.
pub fn leaf_tr_from_system(sys: &LeafSystem, basis: &ModeBasis, cap: f64) -> Result<TRMatrix> {
    let disc = sys.disc;
    let (right, left) = retained_channels(basis, disc.length(), cap);
    let mut tr = TRMatrix::free(disc.a, disc.b, right, left);
    if sys.is_trivial() {
        return Ok(tr);
    }
    let n_chan = disc.n_chan;
    let mut by_channel: HashMap<(usize, usize), Vec<&Mode>> = HashMap::new();
    for m in &basis.modes {
        by_channel.entry((m.block, m.level)).or_default().push(m);
    }
    let mut splitters = HashMap::new();
    for (key, modes) in &by_channel {
        splitters.insert(*key, Splitter::new(modes)?);
    }
    let row_of = |modes: &[Mode]| -> HashMap<(usize, usize, Sign), usize> {
        modes.iter().enumerate().map(|(i, m)| (m.key(), i)).collect()
    };
    let right_rows = row_of(&tr.right);
    let left_rows = row_of(&tr.left);

    let inputs: Vec<Mode> = tr.right.iter().chain(&tr.left).copied().collect();
    let nodal = sys.solve_modes(&inputs);
    let nr = tr.right.len();
    for (k, _) in inputs.iter().enumerate() {
        let at_a = sys.edge_fields(nodal.as_ref(), k, Edge::Left);
        let at_b = sys.edge_fields(nodal.as_ref(), k, Edge::Right);
        for ((block, level), split) in &splitters {
            let idx = block * n_chan + level;
            for (fields, rows, outgoing_right) in [(&at_b, &right_rows, true), (&at_a, &left_rows, false)] {
                let amps = split.amplitudes(fields[idx]);
                for (key, amp) in split.keys.iter().zip(amps) {
                    let Some(&row) = rows.get(key) else { continue };
                    match (outgoing_right, k < nr) {
                        (true, true) => tr.t_plus[(row, k)] += amp,
                        (true, false) => tr.r_minus[(row, k - nr)] += amp,
                        (false, true) => tr.r_plus[(row, k)] += amp,
                        (false, false) => tr.t_minus[(row, k - nr)] += amp,
                    }
                }
            }
        }
    }
    Ok(tr)
}

fn invert_checked(m: &Mat<C64>) -> Result<Mat<C64>> {
    let n = m.nrows();
    let inv = m.partial_piv_lu().inverse();
    let condition = m.norm_l2() * inv.norm_l2() / n.max(1) as f64;
    if !condition.is_finite() || condition > 1e14 {
        return Err(Error::SingularMerge { condition });
    }
    Ok(inv)
}

/// Star product of adjacent TR matrices (`left` on [a, c], `right` on [c, b]).
pub fn merge_tr(left: &TRMatrix, right: &TRMatrix) -> Result<TRMatrix> {
    if (left.b - right.a).abs() > 1e-12 {
        return Err(Error::NotAdjacent { left_end: left.b, right_start: right.a });
    }
    if !left.same_channels(right) {
        return Err(Error::IndexMapMismatch);
    }
    let nr = left.right.len();
    let nl = left.left.len();
    let id_r = Mat::<C64>::identity(nr, nr);
    let id_l = Mat::<C64>::identity(nl, nl);
    let x = invert_checked(&(&id_r - &left.r_minus * &right.r_plus))?;
    let y = invert_checked(&(&id_l - &right.r_plus * &left.r_minus))?;
    let t2x = &right.t_plus * &x;
    let t1y = &left.t_minus * &y;
    Ok(TRMatrix {
        a: left.a,
        b: right.b,
        right: left.right.clone(),
        left: left.left.clone(),
        t_plus: &t2x * &left.t_plus,
        r_minus: &right.r_minus + &t2x * &left.r_minus * &right.t_minus,
        r_plus: &left.r_plus + &t1y * &right.r_plus * &left.t_plus,
        t_minus: &t1y * &right.t_minus,
        convention: left.convention,
    })
}

/// Balanced pairwise reduction of adjacent leaves.
pub fn binary_merge(leaves: Vec<TRMatrix>) -> Result<TRMatrix> {
    if leaves.is_empty() {
        return Err(Error::Empty("leaf list"));
    }
    let mut level = leaves;
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        let mut iter = level.into_iter();
        while let Some(first) = iter.next() {
            match iter.next() {
                Some(second) => next.push(merge_tr(&first, &second)?),
                None => next.push(first),
            }
        }
        level = next;
    }
    Ok(level.pop().expect("nonempty"))
}

/// Sequential left-to-right reduction.
pub fn left_fold(leaves: &[TRMatrix]) -> Result<TRMatrix> {
    let (first, rest) = leaves.split_first().ok_or(Error::Empty("leaf list"))?;
    rest.iter().try_fold(first.clone(), |acc, leaf| merge_tr(&acc, leaf))
}

/// Current-normalized scattering matrix over propagating channels.
#[derive(Debug, Clone)]
pub struct SMatrix {
    pub energy: f64,
    pub right: Vec<Mode>,
    pub left: Vec<Mode>,
    pub s: Mat<C64>,
}

impl SMatrix {
    pub fn n_plus(&self) -> usize {
        self.right.len()
    }

    pub fn n_minus(&self) -> usize {
        self.left.len()
    }

    fn block(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Mat<C64> {
        let (r0, c0) = (rows.start, cols.start);
        Mat::from_fn(rows.len(), cols.len(), |i, j| self.s[(r0 + i, c0 + j)])
    }

    pub fn t_plus(&self) -> Mat<C64> {
        self.block(0..self.n_plus(), 0..self.n_plus())
    }

    pub fn r_minus(&self) -> Mat<C64> {
        let (np, nm) = (self.n_plus(), self.n_minus());
        self.block(0..np, np..np + nm)
    }

    pub fn r_plus(&self) -> Mat<C64> {
        let (np, nm) = (self.n_plus(), self.n_minus());
        self.block(np..np + nm, 0..np)
    }

    pub fn t_minus(&self) -> Mat<C64> {
        let (np, nm) = (self.n_plus(), self.n_minus());
        self.block(np..np + nm, np..np + nm)
    }

    /// ‖S*S − I‖_F.
    pub fn unitarity_residual(&self) -> f64 {
        let n = self.s.ncols();
        (self.s.adjoint() * &self.s - Mat::<C64>::identity(n, n)).norm_l2()
    }

    /// Structured text: header, dimensions, channel labels, then row-major (re, im) pairs.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "smatrix v1");
        let _ = writeln!(out, "energy {:e}", self.energy);
        let _ = writeln!(out, "dims {} {}", self.n_plus(), self.n_minus());
        for (tag, modes) in [("right", &self.right), ("left", &self.left)] {
            for m in modes.iter() {
                let _ = writeln!(out, "{tag} {} {} {} {:e} {:e}", m.block, m.level, m.sign.as_i8(), m.xi.re, m.current);
            }
        }
        let _ = writeln!(out, "data");
        for i in 0..self.s.nrows() {
            let row: Vec<String> = (0..self.s.ncols())
                .map(|j| format!("{:e} {:e}", self.s[(i, j)].re, self.s[(i, j)].im))
                .collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }
}

/// Parsed form of [`SMatrix::to_text`].
#[derive(Debug, Clone, PartialEq)]
pub struct SMatrixRecord {
    pub energy: f64,
    /// (block, level, sign) per right-going channel.
    pub right: Vec<(usize, usize, i8)>,
    pub left: Vec<(usize, usize, i8)>,
    pub s: Mat<C64>,
}

impl SMatrixRecord {
    pub fn parse(text: &str) -> Option<Self> {
        let mut lines = text.lines();
        if lines.next()? != "smatrix v1" {
            return None;
        }
        let energy = lines.next()?.strip_prefix("energy ")?.parse().ok()?;
        let dims: Vec<usize> = lines.next()?.strip_prefix("dims ")?.split(' ').map(|t| t.parse().ok()).collect::<Option<_>>()?;
        let (np, nm) = (*dims.first()?, *dims.get(1)?);
        let mut right = Vec::new();
        let mut left = Vec::new();
        for _ in 0..np + nm {
            let line = lines.next()?;
            let f: Vec<&str> = line.split(' ').collect();
            let label = (f.get(1)?.parse().ok()?, f.get(2)?.parse().ok()?, f.get(3)?.parse().ok()?);
            match *f.first()? {
                "right" => right.push(label),
                "left" => left.push(label),
                _ => return None,
            }
        }
        if lines.next()? != "data" {
            return None;
        }
        let n = np + nm;
        let mut s = Mat::<C64>::zeros(n, n);
        for i in 0..n {
            let vals: Vec<f64> = lines.next()?.split(' ').map(|t| t.parse().ok()).collect::<Option<_>>()?;
            if vals.len() != 2 * n {
                return None;
            }
            for j in 0..n {
                s[(i, j)] = C64::new(vals[2 * j], vals[2 * j + 1]);
            }
        }
        Some(Self { energy, right, left, s })
    }
}

/// Restricts a TR matrix to propagating channels and normalizes by currents.
pub fn extract_smatrix(tr: &TRMatrix, basis: &ModeBasis) -> Result<SMatrix> {
    let right = basis.propagating_right();
    let left = basis.propagating_left();
    let prefix_ok = |have: &[Mode], want: &[Mode]| {
        have.len() >= want.len() && have.iter().zip(want).all(|(a, b)| a.key() == b.key())
    };
    if !prefix_ok(&tr.right, &right) || !prefix_ok(&tr.left, &left) {
        return Err(Error::MissingChannel);
    }
    let (np, nm) = (right.len(), left.len());
    let currents: Vec<f64> = right.iter().chain(&left).map(|m| m.current.abs()).collect();
    let s = Mat::from_fn(np + nm, np + nm, |i, j| {
        let raw = match (i < np, j < np) {
            (true, true) => tr.t_plus[(i, j)],
            (true, false) => tr.r_minus[(i, j - np)],
            (false, true) => tr.r_plus[(i - np, j)],
            (false, false) => tr.t_minus[(i - np, j - np)],
        };
        raw * (currents[i] / currents[j]).sqrt()
    });
    Ok(SMatrix { energy: basis.energy, right, left, s })
}

/// Derived invariants of a scattering matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Observables {
    pub tr_t_plus: f64,
    pub tr_t_minus: f64,
    /// tr T₊*T₊ − tr T₋*T₋.
    pub sigma2pi: f64,
    pub n_plus: usize,
    pub n_minus: usize,
    /// (−1)^{n₊} for M = N, (−1)^{round σ} for N = 0, otherwise undefined.
    pub index2: Option<i8>,
    pub unitarity_residual: f64,
    /// max(‖R₊′ + R₊′ᵀ‖_F, ‖R₋′ + R₋′ᵀ‖_F) in the Kramers frame (M = N only).
    pub skew_residual: Option<f64>,
    /// ‖T₋′ − T₊ᵀ‖_F in the Kramers frame (M = N only).
    pub covariance_residual: Option<f64>,
}

impl Observables {
    /// Flat key/value record.
    pub fn records(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:e}"));
        vec![
            ("trT_plus", format!("{:.15e}", self.tr_t_plus)),
            ("trT_minus", format!("{:.15e}", self.tr_t_minus)),
            ("sigma2pi", format!("{:.15e}", self.sigma2pi)),
            ("n_plus", self.n_plus.to_string()),
            ("n_minus", self.n_minus.to_string()),
            ("index2", self.index2.map_or("NA".to_string(), |v| v.to_string())),
            ("unitarity_residual", format!("{:e}", self.unitarity_residual)),
            ("skew_residual", opt(self.skew_residual)),
            ("covariance_residual", opt(self.covariance_residual)),
        ]
    }
}

/// Kramers map Π on propagating channels: Π[i][j] = σ_i δ_{j, π(i)}, rows over right-going
/// channels, columns over left-going ones, with θψ_{R_i} = σ_i ψ_{L_π(i)}.
pub fn kramers_map(s: &SMatrix, theta: &ThetaStructure) -> Result<Mat<C64>> {
    let index: HashMap<_, _> = s.left.iter().enumerate().map(|(j, m)| (m.key(), j)).collect();
    let mut pi = Mat::<C64>::zeros(s.n_plus(), s.n_minus());
    for (i, m) in s.right.iter().enumerate() {
        let partner = (theta.partner_block(m.block), m.level, flip(m.sign));
        let &j = index.get(&partner).ok_or(Error::MissingChannel)?;
        pi[(i, j)] = C64::new(if m.conjugated { 1.0 } else { -1.0 }, 0.0);
    }
    Ok(pi)
}

fn flip(s: Sign) -> Sign {
    match s {
        Sign::Plus => Sign::Minus,
        Sign::Minus => Sign::Plus,
    }
}

/// (skew residual, covariance residual) of S in the Kramers frame.
pub fn ftr_residuals(s: &SMatrix, model: &BlockModel) -> Result<(f64, f64)> {
    let theta = ThetaStructure::new(model)?;
    let pi = kramers_map(s, &theta)?;
    let r_plus = &pi * s.r_plus();
    let r_minus = s.r_minus() * pi.transpose();
    let t_minus = &pi * s.t_minus() * pi.transpose();
    let skew = (&r_plus + r_plus.transpose()).norm_l2().max((&r_minus + r_minus.transpose()).norm_l2());
    let cov = (t_minus - s.t_plus().transpose()).norm_l2();
    Ok((skew, cov))
}

/// Traces, conductivity, index and residuals of a scattering matrix.
pub fn observables(s: &SMatrix, model: &BlockModel) -> Observables {
    let tr_t_plus = s.t_plus().squared_norm_l2();
    let tr_t_minus = s.t_minus().squared_norm_l2();
    let sigma2pi = tr_t_plus - tr_t_minus;
    let parity = |k: i64| if k.rem_euclid(2) == 0 { 1 } else { -1 };
    let index2 = if model.ftr_symmetric() {
        Some(parity(s.n_plus() as i64))
    } else if model.n == 0 {
        Some(parity(sigma2pi.round() as i64))
    } else {
        None
    };
    let (skew, cov) = match ftr_residuals(s, model) {
        Ok((a, b)) => (Some(a), Some(b)),
        Err(_) => (None, None),
    };
    Observables {
        tr_t_plus,
        tr_t_minus,
        sigma2pi,
        n_plus: s.n_plus(),
        n_minus: s.n_minus(),
        index2,
        unitarity_residual: s.unitarity_residual(),
        skew_residual: skew,
        covariance_residual: cov,
    }
}

/// |(tr T₊*T₊ − tr T₋*T₋) − (n₊ − n₋)|.
pub fn trace_identity_check(s: &SMatrix, basis: &ModeBasis) -> f64 {
    let sigma = s.t_plus().squared_norm_l2() - s.t_minus().squared_norm_l2();
    (sigma - (basis.n_plus as f64 - basis.n_minus as f64)).abs()
}
