//! Compactly supported matrix perturbations.
//!
//! Every catalogued perturbation is an analytic closed form `v(x, y)·C` with a constant
//! spinor matrix `C`, multiplied by the indicator of `[0, l]` in x. Perturbations are
//! evaluated on demand, so any quadrature order samples them exactly.

use std::fmt;
use std::sync::Arc;

use faer::Mat;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{check_dim, BlockModel, ThetaStructure};

type Field = Arc<dyn Fn(f64, f64) -> Mat<C64> + Send + Sync>;

/// Names accepted by [`perturbation_library`].
pub const CATALOGUE: &[&str] = &[
    "v1_scalar",
    "v2_scalar",
    "V1",
    "V_TR",
    "V_NTR",
    "V_TRS_M2",
    "p2_V2",
    "p2_V1_sigma3",
    "p2_h_sigma3",
    "M3_exchange",
    "M3_nonexchange",
];

/// A Hermitian matrix field V(x, y) supported on x ∈ [0, l].
#[derive(Clone)]
pub struct PerturbationSpec {
    pub name: String,
    pub dim: usize,
    pub support_length: f64,
    /// Coefficient of y² in the Gaussian envelope e^{−a y²}.
    pub y_decay: f64,
    pub declared_ftr: bool,
    field: Field,
}

impl fmt::Debug for PerturbationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PerturbationSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("support_length", &self.support_length)
            .field("declared_ftr", &self.declared_ftr)
            .finish()
    }
}

impl PerturbationSpec {
    /// Wraps an arbitrary field; the support cutoff is applied by [`evaluate`](Self::evaluate).
    pub fn from_fn<F>(name: impl Into<String>, dim: usize, support_length: f64, declared_ftr: bool, f: F) -> Self
    where
        F: Fn(f64, f64) -> Mat<C64> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim,
            support_length,
            y_decay: 1.0,
            declared_ftr,
            field: Arc::new(f),
        }
    }

    pub fn zero(dim: usize, support_length: f64) -> Self {
        Self::from_fn("zero", dim, support_length, true, move |_, _| Mat::zeros(dim, dim))
    }

    /// V(x, y), zero outside the support.
    pub fn evaluate(&self, x: f64, y: f64) -> Mat<C64> {
        if !(0.0..=self.support_length).contains(&x) {
            return Mat::zeros(self.dim, self.dim);
        }
        (self.field)(x, y)
    }

    /// Same field multiplied by a real factor.
    pub fn scaled(&self, factor: f64) -> Self {
        let inner = self.field.clone();
        let mut out = self.clone();
        out.field = Arc::new(move |x, y| {
            let mut m = inner(x, y);
            for j in 0..m.ncols() {
                for i in 0..m.nrows() {
                    m[(i, j)] *= factor;
                }
            }
            m
        });
        out
    }

    /// Same field with a different support length.
    pub fn with_support(&self, support_length: f64) -> Self {
        let mut out = self.clone();
        out.support_length = support_length;
        out
    }

    /// Scalar value of a 1×1 perturbation.
    pub fn scalar(&self, x: f64, y: f64) -> f64 {
        assert_eq!(self.dim, 1, "scalar() needs a 1x1 perturbation");
        self.evaluate(x, y)[(0, 0)].re
    }

    /// Whether V vanishes identically on [a, b].
    pub fn vanishes_on(&self, a: f64, b: f64) -> bool {
        b <= 0.0 || a >= self.support_length
    }
}

/// e^{−y²}(y cos((−E−k)x) + y cos((−E+k)x) + cos(2kx) + cos(2Ex)) with k = √(E²−2).
pub fn v1(e: f64, x: f64, y: f64) -> f64 {
    let k = (e * e - 2.0).sqrt();
    (-y * y).exp()
        * (y * ((-e - k) * x).cos() + y * ((-e + k) * x).cos() + (2.0 * k * x).cos() + (2.0 * e * x).cos())
}

/// (1+y)e^{−y²}(cos((−E−k)x) + cos((−E+k)x) + cos(2kx) + cos(2Ex)) with k = √(E²−8).
pub fn v2(e: f64, x: f64, y: f64) -> f64 {
    let k = (e * e - 8.0).sqrt();
    (1.0 + y)
        * (-y * y).exp()
        * (((-e - k) * x).cos() + ((-e + k) * x).cos() + (2.0 * k * x).cos() + (2.0 * e * x).cos())
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn sigma(k: usize) -> Mat<C64> {
    let z = c(0.0, 0.0);
    let one = c(1.0, 0.0);
    let i = c(0.0, 1.0);
    let entries = match k {
        0 => [one, z, z, one],
        1 => [z, one, one, z],
        2 => [z, -i, i, z],
        3 => [one, z, z, -one],
        _ => unreachable!(),
    };
    Mat::from_fn(2, 2, |r, s| entries[2 * r + s])
}

fn kron(a: &Mat<C64>, b: &Mat<C64>) -> Mat<C64> {
    let (p, q) = (b.nrows(), b.ncols());
    Mat::from_fn(a.nrows() * p, a.ncols() * q, |i, j| a[(i / p, j / q)] * b[(i % p, j % q)])
}

fn real_mat(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Mat<C64> {
    Mat::from_fn(rows, cols, |i, j| c(f(i, j), 0.0))
}

fn scale(m: &Mat<C64>, s: C64) -> Mat<C64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * s)
}

/// Assembles [[V1, −conj(V2)], [V2, conj(V1)]].
pub fn ftr_form(v1_block: &Mat<C64>, v2_block: &Mat<C64>) -> Mat<C64> {
    let h = v1_block.nrows();
    Mat::from_fn(2 * h, 2 * h, |i, j| match (i < h, j < h) {
        (true, true) => v1_block[(i, j)],
        (true, false) => -v2_block[(i, j - h)].conj(),
        (false, true) => v2_block[(i - h, j)],
        (false, false) => v1_block[(i - h, j - h)].conj(),
    })
}

/// Builds blocks from a 2×2 grid of blocks of equal size.
fn block_matrix(blocks: &[Vec<Option<Mat<C64>>>], bs: usize) -> Mat<C64> {
    let n = blocks.len() * bs;
    Mat::from_fn(n, n, |i, j| match &blocks[i / bs][j / bs] {
        Some(b) => b[(i % bs, j % bs)],
        None => c(0.0, 0.0),
    })
}

fn constant_times(
    name: &str,
    l: f64,
    declared_ftr: bool,
    scalar: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    matrix: Mat<C64>,
) -> PerturbationSpec {
    let dim = matrix.nrows();
    PerturbationSpec::from_fn(name, dim, l, declared_ftr, move |x, y| {
        let s = scalar(x, y);
        Mat::from_fn(dim, dim, |i, j| matrix[(i, j)] * s)
    })
}

/// Catalogued perturbation `name` with oscillation frequencies built from energy `e`.
pub fn perturbation_library(name: &str, e: f64, l: f64) -> Result<PerturbationSpec> {
    if l <= 0.0 {
        return Err(Error::InvalidPerturbation { name: name.into(), reason: "support length must be positive".into() });
    }
    let needs = |threshold: f64| -> Result<()> {
        if e * e <= threshold {
            Err(Error::InvalidPerturbation {
                name: name.into(),
                reason: format!("requires E^2 > {threshold}, got E = {e}"),
            })
        } else {
            Ok(())
        }
    };
    let f1 = move |x: f64, y: f64| v1(e, x, y);
    let f2 = move |x: f64, y: f64| v2(e, x, y);
    let one = c(1.0, 0.0);
    let one_minus_i = c(1.0, -1.0);
    let one_plus_i = c(1.0, 1.0);
    let i2 = sigma(0);
    let s2 = sigma(2);
    let spec = match name {
        "v1_scalar" => {
            needs(2.0)?;
            constant_times(name, l, true, f1, real_mat(1, 1, |_, _| 1.0))
        }
        "v2_scalar" => {
            needs(8.0)?;
            constant_times(name, l, true, f2, real_mat(1, 1, |_, _| 1.0))
        }
        "V1" => {
            needs(2.0)?;
            let swap = real_mat(2, 2, |i, j| if i != j { 1.0 } else { 0.0 });
            let ones = real_mat(2, 2, |_, _| 1.0);
            let coupling = kron(&kron(&swap, &ones), &s2);
            let mat = Mat::<C64>::identity(8, 8) + coupling;
            constant_times(name, l, true, f1, mat)
        }
        "V_TR" | "V_NTR" => {
            needs(2.0)?;
            let corner = if name == "V_TR" { scale(&i2, one) } else { scale(&i2, -one) };
            let mat = block_matrix(
                &[
                    vec![Some(i2.clone()), Some(scale(&s2, one_minus_i))],
                    vec![Some(scale(&s2, one_plus_i)), Some(corner)],
                ],
                2,
            );
            constant_times(name, l, name == "V_TR", f1, mat)
        }
        "V_TRS_M2" => {
            needs(2.0)?;
            let up = scale(&s2, one_minus_i);
            let dn = scale(&s2, one_plus_i);
            let neg = scale(&i2, -one);
            let mat = block_matrix(
                &[
                    vec![Some(i2.clone()), None, None, Some(up.clone())],
                    vec![None, Some(neg.clone()), Some(up), None],
                    vec![None, Some(dn.clone()), Some(i2.clone()), None],
                    vec![Some(dn), None, None, Some(neg)],
                ],
                2,
            );
            constant_times(name, l, true, f1, mat)
        }
        "p2_V2" | "p2_V1_sigma3" => {
            needs(8.0)?;
            let v2_block = scale(&s2, one_plus_i);
            let v1_block = if name == "p2_V2" { Mat::zeros(2, 2) } else { sigma(3) };
            constant_times(name, l, true, f2, ftr_form(&v1_block, &v2_block))
        }
        "p2_h_sigma3" => {
            needs(8.0)?;
            constant_times(name, l, false, f2, sigma(3))
        }
        "M3_exchange" | "M3_nonexchange" => {
            needs(2.0)?;
            let diag = if name == "M3_exchange" { [1.0, 1.0, 1.0] } else { [1.0, -1.0, 2.0] };
            let v1_block = kron(&real_mat(3, 3, |i, j| if i == j { diag[i] } else { 0.0 }), &i2);
            let v2_block = kron(&real_mat(3, 3, |_, _| 1.0), &s2);
            constant_times(name, l, true, f1, ftr_form(&v1_block, &v2_block))
        }
        _ => return Err(Error::UnknownPerturbation(name.into())),
    };
    Ok(spec)
}

/// Seeded random FTR perturbation `[[V1, −conj(V2)], [V2, conj(V1)]]·envelope(x, y)`.
///
/// V1 is Hermitian and V2 antisymmetric; real and imaginary parts of the independent
/// entries are uniform on [−1, 1], drawn from ChaCha8 seeded with `seed` in row-major
/// order (V1 upper triangle first, then V2 strict upper triangle).
pub fn random_ftr(seed: u64, model: &BlockModel, envelope: &PerturbationSpec) -> Result<PerturbationSpec> {
    ThetaStructure::new(model)?;
    if envelope.dim != 1 {
        return Err(Error::InvalidPerturbation {
            name: envelope.name.clone(),
            reason: "envelope must be scalar".into(),
        });
    }
    let h = 2 * model.m;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| c(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
    let mut a = Mat::<C64>::zeros(h, h);
    for i in 0..h {
        for j in i..h {
            let z = draw(&mut rng);
            if i == j {
                a[(i, i)] = c(z.re, 0.0);
            } else {
                a[(i, j)] = z;
                a[(j, i)] = z.conj();
            }
        }
    }
    let mut b = Mat::<C64>::zeros(h, h);
    for i in 0..h {
        for j in (i + 1)..h {
            let z = draw(&mut rng);
            b[(i, j)] = z;
            b[(j, i)] = -z;
        }
    }
    let mat = ftr_form(&a, &b);
    let env = envelope.clone();
    let mut spec = constant_times(
        &format!("random_ftr:{seed}"),
        envelope.support_length,
        true,
        move |x, y| env.evaluate(x, y)[(0, 0)].re,
        mat,
    );
    spec.y_decay = envelope.y_decay;
    check_dim(&spec, model)?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ftr_residual, hermiticity_residual, support_grid};
    use approx::assert_abs_diff_eq;

    #[test]
    fn v1_at_origin() {
        let v = perturbation_library("v1_scalar", 1.8, 1.0).unwrap();
        assert_abs_diff_eq!(v.scalar(0.0, 0.0), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn outside_support_is_zero() {
        for name in CATALOGUE {
            let e = if name.starts_with("p2") || *name == "v2_scalar" { 3.0 } else { 1.8 };
            let v = perturbation_library(name, e, 2.0).unwrap();
            assert_eq!(v.evaluate(2.1, 0.3).norm_l2(), 0.0, "{name}");
            assert_eq!(v.evaluate(-0.1, 0.3).norm_l2(), 0.0, "{name}");
        }
    }

    #[test]
    fn ntr_is_flagged() {
        assert!(!perturbation_library("V_NTR", 1.8, 1.0).unwrap().declared_ftr);
        assert!(perturbation_library("V_TR", 1.8, 1.0).unwrap().declared_ftr);
    }

    #[test]
    fn unknown_name_rejected() {
        assert!(matches!(perturbation_library("nope", 1.8, 1.0), Err(Error::UnknownPerturbation(_))));
    }

    #[test]
    fn v2_needs_large_energy() {
        assert!(perturbation_library("p2_V2", 1.8, 1.0).is_err());
    }

    #[test]
    fn ntr_breaks_symmetry() {
        let model = build_model(1, 1, 1).unwrap();
        let v = perturbation_library("V_NTR", 1.8, 1.0).unwrap();
        let grid = support_grid(1.0, 2.0, 10);
        assert!(ftr_residual(&v, &model, &grid).unwrap() > 0.1);
        assert!(hermiticity_residual(&v, &grid) < 1e-12);
    }

    #[test]
    fn random_ftr_is_deterministic_and_seed_sensitive() {
        let model = build_model(2, 2, 1).unwrap();
        let env = perturbation_library("v1_scalar", 1.8, 1.0).unwrap();
        let a = random_ftr(7, &model, &env).unwrap();
        let b = random_ftr(7, &model, &env).unwrap();
        let d = random_ftr(8, &model, &env).unwrap();
        let (x, y) = (0.3, 0.2);
        assert_eq!(a.evaluate(x, y), b.evaluate(x, y));
        assert!((a.evaluate(x, y) - d.evaluate(x, y)).norm_l2() > 1e-3);
    }
}
