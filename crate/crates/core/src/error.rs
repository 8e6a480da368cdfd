//! Error type shared by the library modules.

use thiserror::Error;

/// Failures reported by model construction, mode enumeration, leaf solves and merging.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model (M={m}, N={n}, p={p}): {reason}")]
    InvalidModel {
        m: usize,
        n: usize,
        p: usize,
        reason: &'static str,
    },
    #[error("energy {energy} lies at the band edge of level {level} (|E^2 - beta^2| = {gap:e})")]
    BandEdge { energy: f64, level: usize, gap: f64 },
    #[error("mode (n={level}, eps={sign}) does not exist on this block")]
    NoSuchMode { level: usize, sign: i8 },
    #[error("mode truncation {n_mode_max} cuts off propagating level {level}")]
    TruncationTooSmall { n_mode_max: usize, level: usize },
    #[error("theta pairing undefined for M={m}, N={n}")]
    NotFtrModel { m: usize, n: usize },
    #[error("unknown perturbation '{0}'")]
    UnknownPerturbation(String),
    #[error("perturbation '{name}' needs {needed} spinor components, model has {have}")]
    DimensionMismatch {
        name: String,
        needed: usize,
        have: usize,
    },
    #[error("invalid perturbation parameters for '{name}': {reason}")]
    InvalidPerturbation { name: String, reason: String },
    #[error("invalid discretization: {0}")]
    InvalidDiscretization(String),
    #[error("leaf [{a}, {b}] ill-conditioned (condition estimate {condition:e})")]
    IllConditioned { a: f64, b: f64, condition: f64 },
    #[error("profile system for block {block}, level {level} is degenerate")]
    DegenerateProfile { block: usize, level: usize },
    #[error("intervals do not abut: left ends at {left_end}, right starts at {right_start}")]
    NotAdjacent { left_end: f64, right_start: f64 },
    #[error("mode index maps differ between merged TR matrices")]
    IndexMapMismatch,
    #[error("singular merge factor (condition estimate {condition:e})")]
    SingularMerge { condition: f64 },
    #[error("propagating channel missing from TR index map")]
    MissingChannel,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("branch endpoint energy {energy} not on window [{e_minus}, {e_plus}]")]
    BranchEndpoint {
        energy: f64,
        e_minus: f64,
        e_plus: f64,
    },
    #[error("gap construction needs E+ - E- > 2 delta > 0 (E- = {e_minus}, E+ = {e_plus}, delta = {delta})")]
    InvalidGap { e_minus: f64, e_plus: f64, delta: f64 },
    #[error("xi = {xi} outside [-delta, delta] with delta = {delta}")]
    OutsideGapWindow { xi: f64, delta: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
