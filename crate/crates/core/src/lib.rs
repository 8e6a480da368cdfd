//! Scattering of Dirac-type edge Hamiltonians by compactly supported perturbations.
//!
//! The unperturbed model is a direct sum of generalized Dirac blocks
//! `h_p = D_x σ3 − D_y σ2 + y σ1` (with `𝔞^p` in place of `𝔞` off the diagonal) and their
//! conjugates. Perturbations are handled by a Lippmann–Schwinger density equation solved
//! on short x-intervals ("leaves") with a spectral Legendre × Hermite discretization; leaf
//! transmission/reflection matrices are combined by a star product into the scattering
//! matrix, from which one-sided transmissions, the interface conductivity and the Z2
//! index are read off.

pub mod error;
pub mod model;
pub mod perturbation;
pub mod quadrature;
pub mod scatter;
pub mod solver;
pub mod spectral;
pub mod theory;

pub use error::{Error, Result};
pub use model::{build_model, ftr_residual, hermiticity_residual, BlockModel, ThetaStructure};
pub use perturbation::{perturbation_library, random_ftr, PerturbationSpec};
pub use spectral::{
    branch_xi, enumerate_modes, ladder_coeff, mode_current, mode_profile, HermiteBasis, Mode, ModeBasis,
    ModeKind, Sign,
};

pub use theory::{
    parity_sign,
    coupled_spectrum, dirac_branches, gap_alpha, gap_pairing, index2_from_flows, model_index2, sigma_from_flows,
    spectral_flow, BranchCurve, GapCoupling,
};

pub use num_complex::Complex64 as C64;
