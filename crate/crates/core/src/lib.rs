//! Fronthaul signal-compression simulator for uplink distributed MIMO C-RAN.
//!
//! `K` single-antenna users are served by `L` distributed receivers with `M`
//! antennas each, every receiver forwarding its signal to a central processor
//! over a fronthaul link of `R` bits per channel use. This crate implements
//! the two-stage compression pipeline studied here — a linear dimension
//! reduction filter at each receiver followed by local transform coding with
//! a uniform quantization noise level — together with the filter design
//! algorithms (truncated KLT, conditional-KLT block coordinate ascent),
//! capacity evaluation under SIC and LMMSE detection, the imperfect-CSI
//! variant, and a reproducible Monte-Carlo experiment harness.
//!
//! Modules follow the pipeline order:
//!
//! * [`numerics`] — Hermitian eigendecomposition, log-determinants, bisection
//! * [`scenario`] — geometry, path loss, power control, fading, pilot estimation
//! * [`dimred`] — dimension-reduction filter banks and mutual-information diagnostics
//! * [`compression`] — quantization noise levels, rate allocation, Lloyd-Max
//! * [`capacity`] — achievable-rate formulas and bounds
//! * [`imperfect_csi`] — error whitening and the estimated-CSI pipeline
//! * [`harness`] — Monte-Carlo experiments and CSV/manifest output
//! * [`selftest`] — runtime invariant suites behind the `selftest` CLI command

pub mod capacity;
pub mod compression;
pub mod dimred;
pub mod harness;
pub mod imperfect_csi;
pub mod numerics;
pub mod scenario;
pub mod selftest;

use thiserror::Error;

/// Complex scalar used throughout.
pub type C64 = nalgebra::Complex<f64>;
/// Dense complex matrix.
pub type CMat = nalgebra::DMatrix<C64>;
/// Dense complex vector.
pub type CVec = nalgebra::DVector<C64>;
/// Dense real matrix.
pub type RMat = nalgebra::DMatrix<f64>;
/// Dense real vector.
pub type RVec = nalgebra::DVector<f64>;

/// Error type shared by all modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid bisection bracket: {0}")]
    Bracket(String),
    #[error("iteration cap exceeded: {0}")]
    Convergence(String),
    #[error("rank-deficient matrix: {0}")]
    RankDeficient(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
