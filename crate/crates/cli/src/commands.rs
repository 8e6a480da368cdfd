//! Subcommand implementations. Each returns its table or report; `main` decides where it goes.

use std::io::Write;

use anyhow::{bail, Result};
use ftr_scatter::scatter::{ftr_residuals, trace_identity_check, SMatrix, TRMatrix};
use ftr_scatter::spectral::branch_energy;
use ftr_scatter::theory::{dirac_branches, gap_pairing_branches, sigma_from_flows, spectral_flow};
use ftr_scatter::{enumerate_modes, ladder_coeff, model_index2, BlockModel, Sign};
use serde::Serialize;

use crate::config::RunConfig;
use crate::pipeline::{sweep, Problem};

/// Version tag written in the first line of every CSV.
pub const CSV_VERSION: &str = "ftr-scatter-csv v1";

/// A CSV table with a versioned header comment.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub kind: &'static str,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(kind: &'static str, columns: &[&'static str]) -> Self {
        Self { kind, columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut out = out;
        writeln!(out, "# {CSV_VERSION} {}", self.kind)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let k = self.columns.iter().position(|c| *c == name)?;
        Some(self.rows.iter().map(|r| r[k].as_str()).collect())
    }
}

fn num(x: f64) -> String {
    format!("{x:.15e}")
}

/// Samples of every branch E(ξ) of the model for |ξ| ≤ xi_max.
pub fn cmd_branches(model: &BlockModel, xi_max: f64, samples: usize, levels: usize) -> Table {
    let mut t = Table::new("branches", &["block", "conjugated", "level", "band", "xi", "energy"]);
    let samples = samples.max(2);
    for s in 0..model.num_blocks() {
        let conj = model.is_conjugated(s);
        for n in 0..levels {
            let bands: &[(Sign, &str)] =
                if n < model.p { &[(Sign::Plus, "linear")] } else { &[(Sign::Plus, "+"), (Sign::Minus, "-")] };
            for &(band, tag) in bands {
                for k in 0..samples {
                    let xi = -xi_max + 2.0 * xi_max * k as f64 / (samples - 1) as f64;
                    t.rows.push(vec![
                        s.to_string(),
                        conj.to_string(),
                        n.to_string(),
                        tag.to_string(),
                        num(xi),
                        num(branch_energy(n, model.p, conj, band, xi)),
                    ]);
                }
            }
        }
    }
    t
}

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: Option<f64>,
    pub tolerance: Option<f64>,
    /// `None` when skipped.
    pub passed: Option<bool>,
    pub note: String,
}

impl Check {
    fn measured(name: &str, value: f64, tol: f64) -> Self {
        Self { name: name.into(), value: Some(value), tolerance: Some(tol), passed: Some(value <= tol), note: String::new() }
    }

    fn skipped(name: &str, note: &str) -> Self {
        Self { name: name.into(), value: None, tolerance: None, passed: None, note: note.into() }
    }

    pub fn line(&self) -> String {
        let status = match self.passed {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        match (self.value, self.tolerance) {
            (Some(v), Some(t)) => format!("{status} {:<22} {v:.3e} (tol {t:.0e}) {}", self.name, self.note),
            _ => format!("{status} {:<22} {}", self.name, self.note),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed != Some(false))
    }

    pub fn render(&self) -> String {
        self.checks.iter().map(|c| c.line() + "\n").collect()
    }
}

/// Free-propagation S-matrix of [0, l]: diag(e^{iξl}) on both transmission blocks.
fn free_smatrix_defect(s: &SMatrix, l: f64) -> f64 {
    let np = s.n_plus();
    let mut worst: f64 = 0.0;
    let i = ftr_scatter::C64::new(0.0, 1.0);
    for r in 0..s.s.nrows() {
        for c in 0..s.s.ncols() {
            let expect = if r != c {
                ftr_scatter::C64::new(0.0, 0.0)
            } else if r < np {
                (i * s.right[r].xi * l).exp()
            } else {
                (-i * s.left[r - np].xi * l).exp()
            };
            worst = worst.max((s.s[(r, c)] - expect).norm());
        }
    }
    worst
}

/// Runs the invariant suite on [0, l].
pub fn cmd_verify(cfg: &RunConfig) -> Result<VerifyReport> {
    let l = cfg.perturbation.length;
    let problem = Problem::from_config(cfg, l)?;
    let tol = &cfg.tolerances;
    let tr = problem.interval_tr(0.0, l)?;
    let s = problem.smatrix(&tr)?;
    let mut checks = vec![
        Check::measured("unitarity", s.unitarity_residual(), tol.unitarity),
        Check::measured("trace_identity", trace_identity_check(&s, &problem.basis), tol.trace),
    ];
    if cfg.perturbation.name == "zero" {
        checks.push(Check::measured("free_smatrix", free_smatrix_defect(&s, l), tol.merge));
    }
    let leaves = problem.partition(0.0, l);
    if leaves.len() > 1 {
        let trs = problem.solve_leaves(&leaves)?;
        let folded = ftr_scatter::scatter::left_fold(&trs)?;
        let d = (problem.smatrix(&folded)?.s - &s.s).norm_l2();
        checks.push(Check::measured("merge_order", d, tol.merge));
    } else {
        checks.push(Check::skipped("merge_order", "single leaf"));
    }
    if cfg.perturbation_is_ftr(&problem.model, &problem.v) {
        let (skew, cov) = ftr_residuals(&s, &problem.model)?;
        let o = problem.observables(&s);
        checks.push(Check::measured("conductivity", o.sigma2pi.abs(), tol.skew));
        checks.push(Check::measured("skew_reflection", skew, tol.skew));
        checks.push(Check::measured("kramers_covariance", cov, tol.skew));
    } else {
        let why = if problem.model.ftr_symmetric() { "perturbation breaks FTR symmetry" } else { "model has no theta" };
        checks.push(Check::skipped("skew_reflection", why));
    }
    Ok(VerifyReport { checks })
}

/// What a convergence ladder varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
pub enum Ladder {
    /// Legendre nodes per leaf, single leaf.
    Nx,
    /// Hermite levels, single leaf.
    Ny,
    /// Binary merge levels L (2^L leaves) at the configured n_x.
    Levels,
}

/// Relative Frobenius error of S against a reference computed on one leaf at
/// (reference_n_x, reference_n_y).
pub fn cmd_converge(cfg: &RunConfig, ladder: Ladder) -> Result<Table> {
    let l = cfg.perturbation.length;
    let d = &cfg.discretization;
    let sw = &cfg.sweep;
    let base = Problem::from_config(cfg, l)?;
    let refine = |n_x: usize, n_y: usize| -> Result<Problem> {
        let mut c = cfg.clone();
        c.discretization.n_x = n_x;
        c.discretization.n_y = n_y;
        c.discretization.n_chan = None;
        c.discretization.n_quad_y = None;
        Problem::from_config(&c, l)
    };
    let ref_ny = if ladder == Ladder::Ny { sw.reference_n_y } else { d.n_y };
    let max_rung = sw.ladder.iter().copied().max().unwrap_or(0);
    match ladder {
        Ladder::Nx if max_rung >= sw.reference_n_x => bail!("reference n_x must exceed every ladder value"),
        Ladder::Ny if max_rung >= sw.reference_n_y => bail!("reference n_y must exceed every ladder value"),
        _ => {}
    }
    let reference = {
        let p = refine(sw.reference_n_x, ref_ny)?;
        p.smatrix(&p.direct_tr(0.0, l)?)?
    };
    let norm = reference.s.norm_l2();
    let mut t = Table::new("converge", &["ladder", "value", "error", "ratio", "converged"]);
    let mut prev: Option<f64> = None;
    for &v in &sw.ladder {
        let s = match ladder {
            Ladder::Nx => {
                let p = refine(v, d.n_y)?;
                p.smatrix(&p.direct_tr(0.0, l)?)?
            }
            Ladder::Ny => {
                let p = refine(d.n_x, v)?;
                p.smatrix(&p.direct_tr(0.0, l)?)?
            }
            Ladder::Levels => base.smatrix(&base.leveled_tr(0.0, l, v as u32)?)?,
        };
        if s.s.nrows() != reference.s.nrows() {
            bail!("channel sets differ between rung {v} and the reference");
        }
        let err = (&s.s - &reference.s).norm_l2() / norm;
        let ratio = prev.map(|p| err / p);
        t.rows.push(vec![
            format!("{ladder:?}").to_lowercase(),
            v.to_string(),
            num(err),
            ratio.map_or("NA".into(), num),
            (err < 1e-12).to_string(),
        ]);
        prev = Some(err);
    }
    Ok(t)
}

#[derive(Debug, Clone, Serialize)]
pub struct SMatrixDump {
    pub energy: f64,
    pub length: f64,
    /// (block, level, sign) of each right-going then left-going channel.
    pub channels: Vec<(String, usize, usize, i8)>,
    /// Row-major [re, im] pairs.
    pub s: Vec<Vec<[f64; 2]>>,
    pub observables: Vec<(String, String)>,
}

/// Single S-matrix with its observables.
pub fn cmd_scatter(cfg: &RunConfig) -> Result<(SMatrix, SMatrixDump)> {
    let l = cfg.perturbation.length;
    let problem = Problem::from_config(cfg, l)?;
    let tr: TRMatrix = problem.interval_tr(0.0, l)?;
    let s = problem.smatrix(&tr)?;
    let o = problem.observables(&s);
    let channels = s
        .right
        .iter()
        .map(|m| ("right".to_string(), m.block, m.level, m.sign.as_i8()))
        .chain(s.left.iter().map(|m| ("left".to_string(), m.block, m.level, m.sign.as_i8())))
        .collect();
    let rows = (0..s.s.nrows()).map(|i| (0..s.s.ncols()).map(|j| [s.s[(i, j)].re, s.s[(i, j)].im]).collect()).collect();
    let dump = SMatrixDump {
        energy: cfg.energy,
        length: l,
        channels,
        s: rows,
        observables: o.records().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
    };
    Ok((s, dump))
}

/// One row per length: transmissions, conductivity and residuals.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<Table> {
    let lengths = &cfg.sweep.lengths;
    let Some(&l_max) = lengths.last() else { bail!("no sweep lengths") };
    let problem = Problem::from_config(cfg, l_max)?;
    let mut t = Table::new(
        "sweep",
        &[
            "l",
            "trT_plus",
            "neg_trT_minus",
            "sigma2pi",
            "unitarity_residual",
            "skew_residual",
            "runtime_s",
            "flag",
        ],
    );
    for point in sweep(&problem, lengths) {
        let row = match point.result {
            Ok((_, o)) => {
                let flag = if o.unitarity_residual > cfg.tolerances.flag_unitarity { "unitarity" } else { "" };
                vec![
                    num(point.length),
                    num(o.tr_t_plus),
                    num(-o.tr_t_minus),
                    num(o.sigma2pi),
                    format!("{:e}", o.unitarity_residual),
                    o.skew_residual.map_or("NA".into(), |v| format!("{v:e}")),
                    format!("{:.3}", point.seconds),
                    flag.to_string(),
                ]
            }
            Err(e) => {
                let mut r = vec![num(point.length)];
                r.extend(std::iter::repeat_n("NA".to_string(), 5));
                r.push(format!("{:.3}", point.seconds));
                r.push(format!("error: {e}"));
                r
            }
        };
        t.rows.push(row);
    }
    Ok(t)
}

/// Flows of the h-block branches in a window, the conductivity and Index₂.
pub fn cmd_index(model: &BlockModel, window: (f64, f64), energy: Option<f64>) -> Result<String> {
    let branches = dirac_branches(model, window, false)?;
    let mut out = String::new();
    out.push_str(&format!("window [{}, {}]\n", window.0, window.1));
    for b in &branches {
        out.push_str(&format!("  {:<16} flow {:+}\n", b.label, spectral_flow(b)));
    }
    let sigma = sigma_from_flows(&branches);
    let pairing = gap_pairing_branches(&branches);
    out.push_str(&format!("2pi sigma_I(H1) = {sigma}\n"));
    out.push_str(&format!("gapped pairs {}, residual crossings {}\n", pairing.pairs.len(), pairing.residual));
    match model_index2(model, window) {
        Ok(i) => out.push_str(&format!("index2 = {i}\n")),
        Err(e) => out.push_str(&format!("index2 undefined: {e}\n")),
    }
    if let Some(e) = energy {
        let top = (0..).find(|&n| ladder_coeff(n, model.p) > e.abs()).unwrap_or(model.p);
        let basis = enumerate_modes(model, e, top)?;
        out.push_str(&format!(
            "modes at E = {e}: n_plus {}, n_minus {}, (-1)^n_plus = {}\n",
            basis.n_plus,
            basis.n_minus,
            if basis.n_plus % 2 == 0 { 1 } else { -1 }
        ));
    }
    Ok(out)
}
