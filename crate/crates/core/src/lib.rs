//! Lagrangian compressible-Euler solver on 2D quadrilateral meshes together with
//! a projection-based reduced-order model: POD bases, Galerkin projection,
//! SNS/DEIM hyper-reduction, time windows and parametric offsets.
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`]: dense kernels (SVD, pivoted QR, Cholesky, pseudo-inverse).
//! - [`mesh_fem`]: Cartesian quad mesh, Q1/Q0 spaces, mass matrices.
//! - [`fom`]: force assembly, RK2-average/RK4 stepping, adaptive Δt control.
//! - [`pod`], [`hyper_reduction`], [`time_windows`], [`offsets`]: offline ROM building blocks.
//! - [`rom`]: reduced operators and the online solver.
//! - [`diagnostics`]: error metrics and residual indicators.
//! - [`problems`]: Gresho, Sedov and Taylor–Green initial conditions.
//! - [`cli_io`]: artifact containers and the offline/merge/online/restore workflow.

pub mod cli_io;
pub mod diagnostics;
pub mod fom;
pub mod hyper_reduction;
pub mod linalg;
pub mod mesh_fem;
pub mod offsets;
pub mod pod;
pub mod problems;
pub mod rom;
pub mod time_windows;
pub mod training;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
    #[error("mesh tangled at zone {zone} (det J = {det:e})")]
    Tangled { zone: usize, det: f64 },
    #[error("vanishing time step: dt = {dt:e} at t = {t}{}", window.map(|w| format!(" in window {w}")).unwrap_or_default())]
    VanishingTimeStep { t: f64, dt: f64, window: Option<usize> },
    #[error("empty window {window} for parameter {param}")]
    EmptyWindow { window: usize, param: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for failures of the numerics (as opposed to bad input or IO).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Linalg(_) | Error::Tangled { .. } | Error::VanishingTimeStep { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
