//! Problem setup, parallel leaf solves, and interval TR matrices built by merging.

use std::collections::HashMap;
use std::time::Instant;

use anyhow::{Context, Result};
use ftr_scatter::scatter::{binary_merge, extract_smatrix, leaf_tr, merge_tr, observables, Observables, SMatrix, TRMatrix};
use ftr_scatter::solver::LeafDiscretization;
use ftr_scatter::{enumerate_modes, BlockModel, ModeBasis, PerturbationSpec};
use rayon::prelude::*;

use crate::config::RunConfig;

/// Everything needed to solve leaves of one perturbed model at one energy.
pub struct Problem {
    pub model: BlockModel,
    pub energy: f64,
    pub v: PerturbationSpec,
    /// Discretization template; the interval is set per leaf.
    pub disc: LeafDiscretization,
    pub basis: ModeBasis,
    pub leaf_max_length: f64,
    pool: rayon::ThreadPool,
}

impl Problem {
    pub fn new(
        model: BlockModel,
        energy: f64,
        v: PerturbationSpec,
        n_x: usize,
        n_y: usize,
        leaf_max_length: f64,
        workers: usize,
    ) -> Result<Self> {
        let disc = LeafDiscretization::new(0.0, 1.0, n_x, n_y, model.p);
        Self::with_discretization(model, energy, v, disc, leaf_max_length, workers)
    }

    pub fn with_discretization(
        model: BlockModel,
        energy: f64,
        v: PerturbationSpec,
        disc: LeafDiscretization,
        leaf_max_length: f64,
        workers: usize,
    ) -> Result<Self> {
        disc.validate(model.p)?;
        let basis = enumerate_modes(&model, energy, disc.n_chan - 1)?;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
        Ok(Self { model, energy, v, disc, basis, leaf_max_length, pool })
    }

    /// Problem described by a run configuration, with V supported on [0, l].
    pub fn from_config(cfg: &RunConfig, l: f64) -> Result<Self> {
        let model = cfg.block_model()?;
        let v = cfg.perturbation_for(&model, l)?;
        let d = &cfg.discretization;
        let mut disc = LeafDiscretization::new(0.0, 1.0, d.n_x, d.n_y, model.p);
        if let Some(c) = d.n_chan {
            disc.n_chan = c;
        }
        if let Some(q) = d.n_quad_y {
            disc.n_quad_y = q;
        }
        Self::with_discretization(model, cfg.energy, v, disc, d.leaf_max_length, cfg.workers)
    }

    /// Same problem with a different perturbation.
    pub fn with_perturbation(&self, v: PerturbationSpec) -> Result<Self> {
        Self::with_discretization(self.model, self.energy, v, self.disc, self.leaf_max_length, self.pool.current_num_threads())
    }

    /// Equal leaves of length at most `leaf_max_length` covering [a, b].
    pub fn partition(&self, a: f64, b: f64) -> Vec<(f64, f64)> {
        partition(a, b, self.leaf_max_length)
    }

    /// Solves the given leaves in parallel, preserving order.
    pub fn solve_leaves(&self, leaves: &[(f64, f64)]) -> Result<Vec<TRMatrix>> {
        self.pool.install(|| {
            leaves
                .par_iter()
                .map(|&(a, b)| {
                    leaf_tr(&self.model, &self.v, self.energy, &self.disc.on(a, b), &self.basis)
                        .with_context(|| format!("leaf [{a}, {b}]"))
                })
                .collect()
        })
    }

    /// TR matrix of [a, b] by binary merging of its leaves.
    pub fn interval_tr(&self, a: f64, b: f64) -> Result<TRMatrix> {
        let leaves = self.solve_leaves(&self.partition(a, b))?;
        Ok(binary_merge(leaves)?)
    }

    /// TR matrix of [a, b] as one leaf with the template discretization.
    pub fn direct_tr(&self, a: f64, b: f64) -> Result<TRMatrix> {
        Ok(leaf_tr(&self.model, &self.v, self.energy, &self.disc.on(a, b), &self.basis)?)
    }

    /// TR matrix of [a, b] split into 2^levels equal leaves.
    pub fn leveled_tr(&self, a: f64, b: f64, levels: u32) -> Result<TRMatrix> {
        let k = 1usize << levels;
        let h = (b - a) / k as f64;
        let leaves: Vec<(f64, f64)> = (0..k).map(|i| (a + i as f64 * h, if i + 1 == k { b } else { a + (i + 1) as f64 * h })).collect();
        Ok(binary_merge(self.solve_leaves(&leaves)?)?)
    }

    pub fn smatrix(&self, tr: &TRMatrix) -> Result<SMatrix> {
        Ok(extract_smatrix(tr, &self.basis)?)
    }

    pub fn observables(&self, s: &SMatrix) -> Observables {
        observables(s, &self.model)
    }
}

/// Equal pieces of length at most `h` covering [a, b] (endpoints exact).
pub fn partition(a: f64, b: f64, h: f64) -> Vec<(f64, f64)> {
    let k = (((b - a) / h) - 1e-9).ceil().max(1.0) as usize;
    let step = (b - a) / k as f64;
    (0..k).map(|i| (a + i as f64 * step, if i + 1 == k { b } else { a + (i + 1) as f64 * step })).collect()
}

/// One sweep point.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub length: f64,
    pub result: std::result::Result<(SMatrix, Observables), String>,
    pub seconds: f64,
}

/// S-matrices of [0, l] for increasing lengths l.
///
/// Each leaf is solved once: the TR matrix of [0, l_k] is that of [0, l_{k−1}] merged with
/// the segment [l_{k−1}, l_k]. The perturbation is built for the largest length, so V on
/// [0, l_k] is the restriction of one field. A failing segment is recorded and the sweep
/// restarts its prefix at the next length.
pub fn sweep(problem: &Problem, lengths: &[f64]) -> Vec<SweepPoint> {
    let mut out = Vec::with_capacity(lengths.len());
    let mut prefix: Option<TRMatrix> = None;
    let mut start = 0.0;
    for &l in lengths {
        let t0 = Instant::now();
        let step = (|| -> Result<(SMatrix, Observables, TRMatrix)> {
            let (a, base) = match &prefix {
                Some(tr) => (start, Some(tr)),
                None => (0.0, None),
            };
            let segment = problem.interval_tr(a, l)?;
            let tr = match base {
                Some(prev) => merge_tr(prev, &segment)?,
                None => segment,
            };
            let s = problem.smatrix(&tr)?;
            let o = problem.observables(&s);
            Ok((s, o, tr))
        })();
        let result = match step {
            Ok((s, o, tr)) => {
                prefix = Some(tr);
                Ok((s, o))
            }
            Err(e) => {
                prefix = None;
                Err(format!("{e:#}"))
            }
        };
        start = l;
        out.push(SweepPoint { length: l, result, seconds: t0.elapsed().as_secs_f64() });
    }
    out
}

/// Cache of leaf TR matrices keyed by interval.
#[derive(Default)]
pub struct LeafCache {
    map: HashMap<(u64, u64), TRMatrix>,
}

impl LeafCache {
    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// TR matrix of [a, b] from cached or newly solved leaves.
    pub fn interval_tr(&mut self, problem: &Problem, a: f64, b: f64) -> Result<TRMatrix> {
        let leaves = problem.partition(a, b);
        let key = |&(a, b): &(f64, f64)| (a.to_bits(), b.to_bits());
        let missing: Vec<(f64, f64)> = leaves.iter().filter(|iv| !self.map.contains_key(&key(iv))).copied().collect();
        for (iv, tr) in missing.iter().zip(problem.solve_leaves(&missing)?) {
            self.map.insert(key(iv), tr);
        }
        let trs = leaves.iter().map(|iv| self.map[&key(iv)].clone()).collect();
        Ok(binary_merge(trs)?)
    }
}
