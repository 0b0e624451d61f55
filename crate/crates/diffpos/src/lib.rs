//! Numerical certification of differential positivity on compact sets.
//!
//! A system `ẋ = f(x)` is differentially positive when its linearization
//! along trajectories leaves a cone field invariant; strict positivity
//! contracts the cone and forces low-dimensional asymptotics (fixed points,
//! one-dimensional attractors, limit cycles, synchronization). This crate
//! provides:
//!
//! * [`dynamics`] — system models on ℝⁿ and flat tori, fixed-step RK4 for
//!   the plain, prolonged (variational) and normalized projective flows,
//!   and a forward-invariance screen for candidate regions.
//! * [`cones`] — polyhedral and quadratic cone fields given by smooth
//!   constraint functions, membership tests, boundary sampling, and the
//!   Hilbert projective metric computed by bisection.
//! * [`checker`] — sampling-based verification of the pointwise geometric
//!   positivity conditions, direct invariance testing along the flow, and
//!   Hilbert contraction-rate estimation.
//! * [`attractors`] — detectors for fixed-point convergence, invariant
//!   vector fields, unique limit cycles, and Kuramoto synchronization.
//! * [`zoo`] — ready-made model/cone/region bundles (pendulum, cooperative
//!   network, linear positive systems, all-to-all Kuramoto).
//!
//! Verdicts are sampling-based: a PASS certifies the inequalities at the
//! reported sample resolution, never symbolically. Every report echoes the
//! densities and tolerances it was produced with.
//!
//! Grid sweeps run on rayon when the `parallel` feature (default) is
//! enabled; disable it for a fully sequential build. Reports are
//! deterministic for a fixed seed in either mode.

pub mod attractors;
pub mod checker;
pub mod cones;
pub mod dynamics;
pub mod error;
pub mod report;
pub mod sweep;
pub mod zoo;

pub use error::Error;

/// Shorthand used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
