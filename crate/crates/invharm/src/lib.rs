//! Condition monitoring for three-phase grid-tied inverters through the
//! harmonic fingerprint that device on-state degradation leaves on the
//! current controller's output references.
//!
//! A growing on-resistance in one switch or diode perturbs the bridge
//! voltage only during that device's conduction intervals. The current
//! loop absorbs the perturbation into its reference voltages, so the
//! rotating-frame references pick up a characteristic harmonic series
//! whose magnitudes grow linearly with the resistance increase. This
//! crate provides:
//!
//! - a closed-loop simulator of the current-controlled inverter at two
//!   fidelities (cycle-averaged and fully switched with deadtime),
//! - an analytic model of the degradation harmonics and the loop response
//!   that shapes them,
//! - a least-squares estimator that inverts measured difference spectra
//!   into an on-resistance increase, locates the degraded phase leg, and
//!   grades the result against an end-of-life budget,
//! - a command-line front end (`invharm`) that exports every stage as
//!   deterministic CSV.

pub mod analytic;
pub mod cli;
pub mod control;
pub mod error;
pub mod estimate;
pub mod params;
pub mod plant;
pub mod sim;
pub mod spectrum;

pub use error::{Error, Result};
// Spectra expose complex coefficients, so callers need the same complex
// type the crate builds against.
pub use num_complex;
