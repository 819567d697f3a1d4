//! devlab: a numerical laboratory for renormalization of interval exchange
//! transformations and the deviation spectrum of special flows.
//!
//! The pipeline follows the classical renormalization route: exact IETs
//! (`iet`), Rauzy-Veech/Zorich induction with arbitrary-precision cocycle
//! matrices (`renorm`), Lyapunov spectra and Oseledets flags (`oseledets`),
//! cocycles with polynomial singularities (`singular`), special Birkhoff
//! sums (`birkhoff`), the piecewise-constant correction operator
//! (`correction`), special flows and deviation estimators (`flow`), and the
//! local saddle calculus that predicts edge constants and exponents
//! (`saddle`). `harness` drives seeded, reproducible experiments.

pub mod error;
pub mod linalg;

pub mod iet;
pub mod renorm;

pub mod oseledets;
pub mod singular;

pub mod birkhoff;
pub mod correction;

pub mod flow;
pub mod saddle;

pub mod harness;

pub use error::{Error, Result};
