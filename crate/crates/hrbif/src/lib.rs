//! # hrbif
//!
//! A bifurcation-analysis toolkit built around the Hindmarsh-Rose bursting
//! neuron. It provides, at desk scale:
//!
//! * the model, its fast subsystem, critical manifold and equilibrium
//!   eigenstructure ([`model`]);
//! * adaptive Runge-Kutta integration with dense output, Poincare-section
//!   event location, spike/burst extraction and a largest-Lyapunov-exponent
//!   estimator ([`integrate`]);
//! * brute-force two-parameter behaviour maps over the (b, I) plane
//!   ([`sweep`]);
//! * generic pseudo-arclength continuation with fold/Hopf detection and the
//!   fast-subsystem bifurcation diagram ([`continuation`]);
//! * orthogonal-collocation boundary-value solvers for periodic and
//!   homoclinic orbits, Floquet analysis, and two-parameter homoclinic
//!   continuation with orbit-flip, inclination-flip, Belyakov and resonance
//!   test functions ([`bvp`]);
//! * unstable-manifold sweeps and the folded first-return map ([`manifold`]);
//! * the reduced analytical Poincare return map near the turning point of a
//!   homoclinic branch, with its fold and homoclinic curves ([`retmap`]).
//!
//! The `examples/` directory contains one runnable example per capability;
//! the `hrbif` binary exposes the same experiments behind a JSON-configured
//! command-line interface (see [`cli`]).

pub mod bvp;
pub mod cli;
pub mod continuation;
pub mod error;
pub mod integrate;
pub mod manifold;
pub mod model;
pub mod retmap;
pub mod sweep;

pub use error::{Error, Result};
pub use model::{ModelParams, State};
