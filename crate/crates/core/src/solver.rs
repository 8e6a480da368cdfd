//! Outgoing Green's kernel and the density equation on one x-interval.
//!
//! On each block the Green's kernel decouples into channels n: the pair
//! (upper level n−p, lower level n) is mapped to itself by the 2×2 kernel
//!
//! ```text
//! h:      [[(D_x+E) g_n, β_n g_n], [β_n g_n, (E−D_x) g_n]]
//! conj h: [[(E−D_x) g_n, β_n g_n], [β_n g_n, (E+D_x) g_n]]
//! ```
//!
//! with `g_n(x) = −e^{θ_n|x|}/(2θ_n)`. Linear channels (n < p) keep only the lower entry.
//!
//! The density ρ solves `ρ + V·Gρ = −V·ψ_in`. It is discretized by collocation at
//! Gauss–Legendre nodes in x and a Hermite projection in y (levels below n_y, sampled
//! on a Gauss–Hermite rule with at least n_y + 8 nodes), giving a square dense system
//! of size spinor_dim·n_x·n_y that is factored once per leaf.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::lu::partial_pivoting::{factor, solve};
use faer::{Conj, Mat, MatRef, Par};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::model::{check_dim, BlockModel};
use crate::perturbation::PerturbationSpec;
use crate::quadrature::{gauss_legendre, hermite_functions, legendre_values_into, GaussRule};
use crate::spectral::{ladder_coeff, HermiteBasis, Mode};

const I: C64 = C64::new(0.0, 1.0);

/// Condition estimate above which a leaf solve is rejected.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Right-hand sides per triangular-solve panel.
pub const SOLVE_PANEL: usize = 16;

/// One Hermite channel of the scalar kernel `−e^{θ|x|}/(2θ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenChannel {
    pub level: usize,
    /// Re θ ≤ 0: i·sgn(E)·√(E²−β²) when propagating, −√(β²−E²) when evanescent.
    pub theta: C64,
    pub weight: C64,
    pub beta: f64,
}

impl GreenChannel {
    pub fn new(e: f64, level: usize, p: usize) -> Result<Self> {
        let beta = ladder_coeff(level, p);
        let gap = e * e - beta * beta;
        if gap.abs() <= 1e-12 {
            return Err(Error::BandEdge { energy: e, level, gap: gap.abs() });
        }
        let theta = if gap > 0.0 {
            C64::new(0.0, e.signum() * gap.sqrt())
        } else {
            C64::new(-(-gap).sqrt(), 0.0)
        };
        Ok(Self { level, theta, weight: -1.0 / (2.0 * theta), beta })
    }

    pub fn is_propagating(&self) -> bool {
        self.theta.re == 0.0
    }
}

/// ∫_a^b P_j(x₀) e^{θ|x−x₀|} dx₀, or with the extra factor sgn(x−x₀) when `signed`.
///
/// P_j is the Legendre polynomial mapped to [a, b]. The integral is split at the kink.
pub fn xkernel(theta: C64, x: f64, a: f64, b: f64, j: usize, signed: bool) -> C64 {
    let order = j + 16 + (theta.norm() * (b - a)).ceil() as usize;
    let rule = gauss_legendre(order);
    let (u, s) = kernel_row(theta, x, a, b, j + 1, &rule);
    if signed {
        s[j]
    } else {
        u[j]
    }
}

/// Unsigned and signed kernel integrals against P_0..P_{n−1} for one target x.
fn kernel_row(theta: C64, x: f64, a: f64, b: f64, n: usize, rule: &GaussRule) -> (Vec<C64>, Vec<C64>) {
    let mut u = vec![C64::new(0.0, 0.0); n];
    let mut s = vec![C64::new(0.0, 0.0); n];
    let mut pieces = Vec::with_capacity(2);
    if x > a {
        pieces.push((a, x.min(b), 1.0));
    }
    if x < b {
        pieces.push((x.max(a), b, -1.0));
    }
    let mut leg = Vec::with_capacity(n);
    for (lo, hi, sgn) in pieces {
        if hi <= lo {
            continue;
        }
        let mapped = rule.mapped(lo, hi);
        for (&x0, &w) in mapped.nodes.iter().zip(&mapped.weights) {
            let t = (2.0 * x0 - a - b) / (b - a);
            legendre_values_into(n - 1, t, &mut leg);
            let val = (theta * (x - x0).abs()).exp() * w;
            for i in 0..n {
                u[i] += val * leg[i];
                s[i] += val * (sgn * leg[i]);
            }
        }
    }
    (u, s)
}

/// Discretization of one leaf.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafDiscretization {
    pub a: f64,
    pub b: f64,
    /// Gauss–Legendre nodes in x.
    pub n_x: usize,
    /// Hermite levels per spinor component.
    pub n_y: usize,
    /// Gauss–Hermite nodes used for the y projection.
    pub n_quad_y: usize,
    /// Green's kernel channels per block.
    pub n_chan: usize,
}

impl LeafDiscretization {
    /// Defaults: n_y + 24 quadrature nodes in y and n_y + p channels.
    pub fn new(a: f64, b: f64, n_x: usize, n_y: usize, p: usize) -> Self {
        Self { a, b, n_x, n_y, n_quad_y: n_y + 24, n_chan: n_y + p }
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    /// Same discretization on another interval.
    pub fn on(&self, a: f64, b: f64) -> Self {
        Self { a, b, ..*self }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidDiscretization(msg));
        if !(self.b > self.a) {
            return fail(format!("empty interval [{}, {}]", self.a, self.b));
        }
        if self.n_x == 0 || self.n_y == 0 {
            return fail("n_x and n_y must be positive".into());
        }
        if self.n_quad_y < self.n_y + 8 {
            return fail(format!("{} y nodes for {} levels; need at least n_y + 8", self.n_quad_y, self.n_y));
        }
        if self.n_chan < self.n_y + p {
            return fail(format!("{} channels drop sources; need at least n_y + p = {}", self.n_chan, self.n_y + p));
        }
        Ok(())
    }
}

/// Legendre coefficients ρ_{i,n,c} of a density on one leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityCoeffs {
    pub a: f64,
    pub b: f64,
    pub n_x: usize,
    pub n_y: usize,
    pub dim: usize,
    data: Vec<C64>,
}

impl DensityCoeffs {
    pub fn zeros(disc: &LeafDiscretization, dim: usize) -> Self {
        Self {
            a: disc.a,
            b: disc.b,
            n_x: disc.n_x,
            n_y: disc.n_y,
            dim,
            data: vec![C64::new(0.0, 0.0); dim * disc.n_x * disc.n_y],
        }
    }

    fn index(&self, i: usize, n: usize, c: usize) -> usize {
        (c * self.n_x + i) * self.n_y + n
    }

    /// Coefficient of P_i(x)·φ_n(y) in component c.
    pub fn get(&self, i: usize, n: usize, c: usize) -> C64 {
        self.data[self.index(i, n, c)]
    }

    pub fn set(&mut self, i: usize, n: usize, c: usize, value: C64) {
        let k = self.index(i, n, c);
        self.data[k] = value;
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &DensityCoeffs) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    /// Density value ρ_c(x, y).
    pub fn evaluate(&self, c: usize, x: f64, y: f64) -> C64 {
        let t = (2.0 * x - self.a - self.b) / (self.b - self.a);
        let leg = crate::quadrature::legendre_values(self.n_x - 1, t);
        let phi = hermite_functions(self.n_y - 1, y);
        let mut acc = C64::new(0.0, 0.0);
        for (i, li) in leg.iter().enumerate() {
            for (n, pn) in phi.iter().enumerate() {
                acc += self.get(i, n, c) * (li * pn);
            }
        }
        acc
    }
}

/// Channel kernel rows: `plus = E w U + (i/2) S`, `minus = E w U − (i/2) S`, `off = β w U`.
#[derive(Debug, Clone)]
struct ChannelRows {
    plus: Vec<C64>,
    minus: Vec<C64>,
    off: Vec<C64>,
}

impl ChannelRows {
    fn new(ch: &GreenChannel, e: f64, u: &[C64], s: &[C64]) -> Self {
        let ew = ch.weight * e;
        let bw = ch.weight * ch.beta;
        Self {
            plus: u.iter().zip(s).map(|(&u, &s)| ew * u + 0.5 * I * s).collect(),
            minus: u.iter().zip(s).map(|(&u, &s)| ew * u - 0.5 * I * s).collect(),
            off: u.iter().map(|&u| bw * u).collect(),
        }
    }

    /// (upper←upper, lower←lower) rows for a block.
    fn diagonal(&self, conjugated: bool) -> (&[C64], &[C64]) {
        if conjugated {
            (&self.minus, &self.plus)
        } else {
            (&self.plus, &self.minus)
        }
    }
}

/// Level fields (F_u on level n−p, F_l on level n) per (block, channel) from kernel rows.
///
/// `density(c, j, level)` returns the density coefficient against basis function j.
fn level_fields(
    model: &BlockModel,
    n_y: usize,
    rows: &[ChannelRows],
    n_basis: usize,
    density: impl Fn(usize, usize, usize) -> C64,
) -> Vec<[C64; 2]> {
    let p = model.p;
    let n_chan = rows.len();
    let zero = C64::new(0.0, 0.0);
    let mut out = vec![[zero; 2]; model.num_blocks() * n_chan];
    for s in 0..model.num_blocks() {
        let conj = model.is_conjugated(s);
        for (n, row) in rows.iter().enumerate() {
            let (uu, ll) = row.diagonal(conj);
            let mut f = [zero; 2];
            let upper_src = (n >= p && n - p < n_y).then(|| n - p);
            let lower_src = (n < n_y).then_some(n);
            for j in 0..n_basis {
                if let Some(k) = upper_src {
                    let r = density(2 * s, j, k);
                    f[0] += uu[j] * r;
                    f[1] += row.off[j] * r;
                }
                if let Some(k) = lower_src {
                    let r = density(2 * s + 1, j, k);
                    f[1] += ll[j] * r;
                    if n >= p {
                        f[0] += row.off[j] * r;
                    }
                }
            }
            out[s * n_chan + n] = f;
        }
    }
    out
}

/// Field ψ_out = Gρ at arbitrary points, one spinor per target.
pub fn apply_green(
    model: &BlockModel,
    e: f64,
    disc: &LeafDiscretization,
    rho: &DensityCoeffs,
    targets: &[(f64, f64)],
) -> Result<Vec<Vec<C64>>> {
    disc.validate(model.p)?;
    if rho.n_x != disc.n_x || rho.n_y != disc.n_y || rho.dim != model.spinor_dim() {
        return Err(Error::InvalidDiscretization("density does not match discretization".into()));
    }
    let channels = (0..disc.n_chan)
        .map(|n| GreenChannel::new(e, n, model.p))
        .collect::<Result<Vec<_>>>()?;
    let p = model.p;
    let mut out = Vec::with_capacity(targets.len());
    for &(x, y) in targets {
        let rows: Vec<ChannelRows> = channels
            .iter()
            .map(|ch| {
                let order = disc.n_x + 16 + (ch.theta.norm() * disc.length()).ceil() as usize;
                let rule = gauss_legendre(order);
                let (u, s) = kernel_row(ch.theta, x, disc.a, disc.b, disc.n_x, &rule);
                ChannelRows::new(ch, e, &u, &s)
            })
            .collect();
        let fields = level_fields(model, disc.n_y, &rows, disc.n_x, |c, i, n| rho.get(i, n, c));
        let phi = hermite_functions(disc.n_chan, y);
        let mut psi = vec![C64::new(0.0, 0.0); model.spinor_dim()];
        for s in 0..model.num_blocks() {
            for n in 0..disc.n_chan {
                let f = fields[s * disc.n_chan + n];
                if n >= p {
                    psi[2 * s] += f[0] * phi[n - p];
                }
                psi[2 * s + 1] += f[1] * phi[n];
            }
        }
        out.push(psi);
    }
    Ok(out)
}

/// Pointwise 2×2 kernel G(x, y; x₀, y₀) of one block, truncated to `n_chan` channels.
pub fn green_kernel(
    e: f64,
    p: usize,
    conjugated: bool,
    n_chan: usize,
    (x, y): (f64, f64),
    (x0, y0): (f64, f64),
) -> Result<[[C64; 2]; 2]> {
    let phi = hermite_functions(n_chan, y);
    let phi0 = hermite_functions(n_chan, y0);
    let d = x - x0;
    let zero = C64::new(0.0, 0.0);
    let mut g = [[zero; 2]; 2];
    for n in 0..n_chan {
        let ch = GreenChannel::new(e, n, p)?;
        let decay = (ch.theta * d.abs()).exp();
        let scalar = ch.weight * decay;
        let dx = 0.5 * I * d.signum() * decay;
        let (uu, ll) = if conjugated { (e * scalar - dx, e * scalar + dx) } else { (e * scalar + dx, e * scalar - dx) };
        g[1][1] += ll * (phi[n] * phi0[n]);
        if n >= p {
            let off = ch.beta * scalar;
            g[0][0] += uu * (phi[n - p] * phi0[n - p]);
            g[0][1] += off * (phi[n - p] * phi0[n]);
            g[1][0] += off * (phi[n] * phi0[n - p]);
        }
    }
    Ok(g)
}

/// Which edge of a leaf a field is read at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    Left,
    Right,
}

/// Factored leaf system with its kernel tables.
pub struct LeafSystem {
    pub model: BlockModel,
    pub energy: f64,
    pub disc: LeafDiscretization,
    pub x_nodes: Vec<f64>,
    /// Nodal → Legendre coefficient map, `to_coeff[i * n_x + j]`.
    to_coeff: Vec<f64>,
    /// Kernel rows per channel for targets: the n_x nodes, then edge a, then edge b.
    rows: Vec<Vec<ChannelRows>>,
    /// Projected perturbation, see [`LeafSystem::proj_index`].
    proj: Vec<C64>,
    n_lev: usize,
    active: Vec<bool>,
    lu: Option<Mat<C64>>,
    perm_fwd: Vec<usize>,
    perm_bwd: Vec<usize>,
    /// ‖A‖₂ · ‖A⁻¹‖₂ estimate (1 for a leaf where V vanishes).
    pub condition: f64,
}

impl LeafSystem {
    /// Samples V on the leaf, assembles and factors the density system.
    pub fn new(model: &BlockModel, v: &PerturbationSpec, e: f64, disc: &LeafDiscretization) -> Result<Self> {
        Self::with_levels(model, v, e, disc, disc.n_chan)
    }

    /// As [`new`](Self::new), with V projected onto `n_lev` ≥ n_chan Hermite levels so
    /// incoming modes up to level n_lev − 1 can be used.
    pub fn with_levels(
        model: &BlockModel,
        v: &PerturbationSpec,
        e: f64,
        disc: &LeafDiscretization,
        n_lev: usize,
    ) -> Result<Self> {
        disc.validate(model.p)?;
        check_dim(v, model)?;
        let n_lev = n_lev.max(disc.n_chan);
        let nx = disc.n_x;
        let dim = model.spinor_dim();
        let gl = gauss_legendre(nx);
        let x_rule = gl.mapped(disc.a, disc.b);
        let mut to_coeff = vec![0.0; nx * nx];
        let mut leg = Vec::new();
        for j in 0..nx {
            legendre_values_into(nx - 1, gl.nodes[j], &mut leg);
            for i in 0..nx {
                to_coeff[i * nx + j] = gl.weights[j] * leg[i] * (2 * i + 1) as f64 / 2.0;
            }
        }
        let mut sys = LeafSystem {
            model: *model,
            energy: e,
            disc: *disc,
            x_nodes: x_rule.nodes.clone(),
            to_coeff,
            rows: Vec::new(),
            proj: Vec::new(),
            n_lev,
            active: vec![false; dim * dim],
            lu: None,
            perm_fwd: Vec::new(),
            perm_bwd: Vec::new(),
            condition: 1.0,
        };
        sys.build_kernels()?;
        sys.project(v);
        if sys.active.iter().any(|&a| a) {
            let a = sys.assemble();
            sys.factor(a)?;
        }
        Ok(sys)
    }

    pub fn unknowns(&self) -> usize {
        self.model.spinor_dim() * self.disc.n_x * self.disc.n_y
    }

    /// Whether V vanishes on the leaf (ρ = 0 for every incoming field).
    pub fn is_trivial(&self) -> bool {
        self.lu.is_none()
    }

    fn unknown_index(&self, c: usize, j: usize, n: usize) -> usize {
        (c * self.disc.n_x + j) * self.disc.n_y + n
    }

    fn proj_index(&self, c: usize, c2: usize, a: usize, lev: usize) -> usize {
        let dim = self.model.spinor_dim();
        (((c * dim + c2) * self.disc.n_x + a) * self.n_lev + lev) * self.disc.n_y
    }

    fn build_kernels(&mut self) -> Result<()> {
        let d = self.disc;
        let nx = d.n_x;
        let mut targets = self.x_nodes.clone();
        targets.push(d.a);
        targets.push(d.b);
        let mut rows = Vec::with_capacity(d.n_chan);
        for n in 0..d.n_chan {
            let ch = GreenChannel::new(self.energy, n, self.model.p)?;
            let order = nx + 8 + (ch.theta.norm() * d.length()).ceil() as usize;
            let rule = gauss_legendre(order);
            let mut per_target = Vec::with_capacity(targets.len());
            for &x in &targets {
                let (u_leg, s_leg) = kernel_row(ch.theta, x, d.a, d.b, nx, &rule);
                let mut u = vec![C64::new(0.0, 0.0); nx];
                let mut s = vec![C64::new(0.0, 0.0); nx];
                for j in 0..nx {
                    for i in 0..nx {
                        let t = self.to_coeff[i * nx + j];
                        u[j] += u_leg[i] * t;
                        s[j] += s_leg[i] * t;
                    }
                }
                per_target.push(ChannelRows::new(&ch, self.energy, &u, &s));
            }
            rows.push(per_target);
        }
        // Store as rows[target][channel].
        let n_targets = targets.len();
        let mut by_target: Vec<Vec<ChannelRows>> = (0..n_targets).map(|_| Vec::with_capacity(d.n_chan)).collect();
        for per_target in rows {
            for (t, r) in per_target.into_iter().enumerate() {
                by_target[t].push(r);
            }
        }
        self.rows = by_target;
        Ok(())
    }

    /// M_{cc'}(a)[n][lev] = Σ_q w_q φ_n(y_q) V_{cc'}(x_a, y_q) φ_lev(y_q).
    fn project(&mut self, v: &PerturbationSpec) {
        let d = self.disc;
        let dim = self.model.spinor_dim();
        let basis = HermiteBasis::new(self.n_lev - 1, d.n_quad_y.max(self.n_lev + 8));
        let nq = basis.rule.len();
        self.proj = vec![C64::new(0.0, 0.0); dim * dim * d.n_x * self.n_lev * d.n_y];
        let samples: Vec<Vec<Mat<C64>>> = self
            .x_nodes
            .iter()
            .map(|&x| basis.rule.nodes.iter().map(|&y| v.evaluate(x, y)).collect())
            .collect();
        for c in 0..dim {
            for c2 in 0..dim {
                let nonzero = samples.iter().flatten().any(|m| m[(c, c2)] != C64::new(0.0, 0.0));
                if !nonzero {
                    continue;
                }
                self.active[c * dim + c2] = true;
                for a in 0..d.n_x {
                    let weighted: Vec<C64> = (0..nq).map(|q| samples[a][q][(c, c2)] * basis.rule.weights[q]).collect();
                    for lev in 0..self.n_lev {
                        let base = self.proj_index(c, c2, a, lev);
                        for n in 0..d.n_y {
                            let mut acc = C64::new(0.0, 0.0);
                            for q in 0..nq {
                                let vals = &basis.values[q];
                                acc += weighted[q] * (vals[n] * vals[lev]);
                            }
                            self.proj[base + n] = acc;
                        }
                    }
                }
            }
        }
    }

    fn assemble(&self) -> Mat<C64> {
        let d = self.disc;
        let (nx, ny, p) = (d.n_x, d.n_y, self.model.p);
        let dim = self.model.spinor_dim();
        let size = self.unknowns();
        let mut a = Mat::<C64>::zeros(size, size);
        for i in 0..size {
            a[(i, i)] = C64::new(1.0, 0.0);
        }
        for s in 0..self.model.num_blocks() {
            let conj = self.model.is_conjugated(s);
            for src in [2 * s, 2 * s + 1] {
                for k in 0..ny {
                    // (output component, output level, channel, selector of the kernel row)
                    let mut outputs: Vec<(usize, usize, usize, u8)> = Vec::with_capacity(2);
                    if src == 2 * s {
                        outputs.push((2 * s, k, k + p, 0));
                        outputs.push((2 * s + 1, k + p, k + p, 2));
                    } else {
                        outputs.push((2 * s + 1, k, k, 1));
                        if k >= p {
                            outputs.push((2 * s, k - p, k, 2));
                        }
                    }
                    for j in 0..nx {
                        let col = self.unknown_index(src, j, k);
                        let mut column = a.col_mut(col);
                        for &(out_c, out_lev, ch, sel) in &outputs {
                            for c in 0..dim {
                                if !self.active[c * dim + out_c] {
                                    continue;
                                }
                                for xa in 0..nx {
                                    let rows = &self.rows[xa][ch];
                                    let (uu, ll) = rows.diagonal(conj);
                                    let kv = match sel {
                                        0 => uu[j],
                                        1 => ll[j],
                                        _ => rows.off[j],
                                    };
                                    let base = self.proj_index(c, out_c, xa, out_lev);
                                    let row0 = self.unknown_index(c, xa, 0);
                                    for n in 0..ny {
                                        column[row0 + n] += self.proj[base + n] * kv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        a
    }

    fn factor(&mut self, mut a: Mat<C64>) -> Result<()> {
        let n = a.nrows();
        let norm_a = spectral_norm_estimate(a.as_ref());
        let mut fwd = vec![0usize; n];
        let mut bwd = vec![0usize; n];
        {
            let mut buf = MemBuffer::new(factor::lu_in_place_scratch::<usize, C64>(n, n, Par::Seq, Default::default()));
            factor::lu_in_place(a.as_mut(), &mut fwd, &mut bwd, Par::Seq, MemStack::new(&mut buf), Default::default());
        }
        self.lu = Some(a);
        self.perm_fwd = fwd;
        self.perm_bwd = bwd;
        let norm_inv = self.inverse_norm_estimate();
        self.condition = norm_a * norm_inv;
        if !self.condition.is_finite() || self.condition > CONDITION_LIMIT {
            return Err(Error::IllConditioned { a: self.disc.a, b: self.disc.b, condition: self.condition });
        }
        Ok(())
    }

    fn perm(&self) -> faer::perm::PermRef<'_, usize> {
        faer::perm::PermRef::new_checked(&self.perm_fwd, &self.perm_bwd, self.perm_fwd.len())
    }

    /// Solves A X = B in place.
    ///
    /// Columns go through zero-padded panels of [`SOLVE_PANEL`] columns, so every column
    /// takes the same blocked kernel path whether it is solved alone or in a batch.
    pub fn solve_in_place(&self, rhs: &mut Mat<C64>) {
        let Some(lu) = &self.lu else {
            rhs.fill(C64::new(0.0, 0.0));
            return;
        };
        let n = lu.nrows();
        let mut buf = MemBuffer::new(solve::solve_in_place_scratch::<usize, C64>(n, SOLVE_PANEL, Par::Seq));
        let mut panel = Mat::<C64>::zeros(n, SOLVE_PANEL);
        for start in (0..rhs.ncols()).step_by(SOLVE_PANEL) {
            let width = SOLVE_PANEL.min(rhs.ncols() - start);
            panel.fill(C64::new(0.0, 0.0));
            panel.as_mut().subcols_mut(0, width).copy_from(rhs.as_ref().subcols(start, width));
            solve::solve_in_place_with_conj(
                lu.as_ref(),
                lu.as_ref(),
                self.perm(),
                Conj::No,
                panel.as_mut(),
                Par::Seq,
                MemStack::new(&mut buf),
            );
            rhs.as_mut().subcols_mut(start, width).copy_from(panel.as_ref().subcols(0, width));
        }
    }

    fn solve_adjoint_in_place(&self, rhs: &mut Mat<C64>) {
        let lu = self.lu.as_ref().expect("factored system");
        let n = lu.nrows();
        let mut buf = MemBuffer::new(solve::solve_transpose_in_place_scratch::<usize, C64>(n, rhs.ncols(), Par::Seq));
        solve::solve_transpose_in_place_with_conj(
            lu.as_ref(),
            lu.as_ref(),
            self.perm(),
            Conj::Yes,
            rhs.as_mut(),
            Par::Seq,
            MemStack::new(&mut buf),
        );
    }

    /// Power iteration on A^{-*}A^{-1}.
    fn inverse_norm_estimate(&self) -> f64 {
        let n = self.unknowns();
        let mut v = Mat::<C64>::from_fn(n, 1, |i, _| C64::from_polar(1.0, 0.7 * i as f64));
        let mut est = 0.0;
        for _ in 0..8 {
            let norm = v.norm_l2();
            if norm == 0.0 || !norm.is_finite() {
                return f64::INFINITY;
            }
            v = v * faer::Scale(C64::new(1.0 / norm, 0.0));
            self.solve_in_place(&mut v);
            self.solve_adjoint_in_place(&mut v);
            est = v.norm_l2().sqrt();
        }
        est
    }

    /// Right-hand side −V·ψ_in for incoming modes, edge-referenced:
    /// right-going modes carry e^{iξ(x−a)}, left-going modes e^{iξ(x−b)}.
    pub fn rhs(&self, modes: &[Mode]) -> Mat<C64> {
        let d = self.disc;
        let (nx, ny, p) = (d.n_x, d.n_y, self.model.p);
        let dim = self.model.spinor_dim();
        let mut b = Mat::<C64>::zeros(self.unknowns(), modes.len());
        for (col, m) in modes.iter().enumerate() {
            assert!(m.level < self.n_lev, "incoming mode level exceeds projected levels");
            let reference = if m.kind.is_right_going() { d.a } else { d.b };
            let parts = [
                (2 * m.block, m.upper_coeff, m.level.checked_sub(p)),
                (2 * m.block + 1, m.lower_coeff, Some(m.level)),
            ];
            for xa in 0..nx {
                let phase = (I * m.xi * (self.x_nodes[xa] - reference)).exp();
                for c in 0..dim {
                    let row0 = self.unknown_index(c, xa, 0);
                    for &(c2, coeff, lev) in &parts {
                        let Some(lev) = lev else { continue };
                        if !self.active[c * dim + c2] || coeff == C64::new(0.0, 0.0) {
                            continue;
                        }
                        let f = -coeff * phase;
                        let base = self.proj_index(c, c2, xa, lev);
                        for n in 0..ny {
                            b[(row0 + n, col)] += self.proj[base + n] * f;
                        }
                    }
                }
            }
        }
        b
    }

    /// Nodal densities for a batch of incoming modes, one column each.
    pub fn solve_modes(&self, modes: &[Mode]) -> Mat<C64> {
        let mut b = self.rhs(modes);
        self.solve_in_place(&mut b);
        b
    }

    /// Legendre coefficients of a nodal density column.
    pub fn coefficients(&self, nodal: MatRef<'_, C64>, col: usize) -> DensityCoeffs {
        let d = self.disc;
        let nx = d.n_x;
        let mut out = DensityCoeffs::zeros(&d, self.model.spinor_dim());
        for c in 0..self.model.spinor_dim() {
            for n in 0..d.n_y {
                for i in 0..nx {
                    let mut acc = C64::new(0.0, 0.0);
                    for j in 0..nx {
                        acc += nodal[(self.unknown_index(c, j, n), col)] * self.to_coeff[i * nx + j];
                    }
                    out.set(i, n, c, acc);
                }
            }
        }
        out
    }

    /// Densities for several incoming modes sharing one factorization.
    pub fn densities(&self, modes: &[Mode]) -> Vec<DensityCoeffs> {
        let nodal = self.solve_modes(modes);
        (0..modes.len()).map(|k| self.coefficients(nodal.as_ref(), k)).collect()
    }

    /// Level fields of Gρ at an edge, indexed `[block * n_chan + channel]`.
    pub fn edge_fields(&self, nodal: MatRef<'_, C64>, col: usize, edge: Edge) -> Vec<[C64; 2]> {
        let t = match edge {
            Edge::Left => self.disc.n_x,
            Edge::Right => self.disc.n_x + 1,
        };
        level_fields(&self.model, self.disc.n_y, &self.rows[t], self.disc.n_x, |c, j, n| {
            nodal[(self.unknown_index(c, j, n), col)]
        })
    }
}

/// Power iteration on A*A.
fn spectral_norm_estimate(a: MatRef<'_, C64>) -> f64 {
    let n = a.ncols();
    let mut v = Mat::<C64>::from_fn(n, 1, |i, _| C64::from_polar(1.0, 0.3 * i as f64));
    let mut est = 0.0;
    for _ in 0..8 {
        let norm = v.norm_l2();
        v = v * faer::Scale(C64::new(1.0 / norm, 0.0));
        let w = a * &v;
        v = a.adjoint() * &w;
        est = v.norm_l2().sqrt();
    }
    est
}

/// Density for one incoming mode (edge-referenced as in [`LeafSystem::rhs`]).
pub fn solve_leaf(
    model: &BlockModel,
    v: &PerturbationSpec,
    e: f64,
    disc: &LeafDiscretization,
    incoming: &Mode,
) -> Result<DensityCoeffs> {
    let sys = LeafSystem::with_levels(model, v, e, disc, incoming.level + 1)?;
    Ok(sys.densities(std::slice::from_ref(incoming)).remove(0))
}
