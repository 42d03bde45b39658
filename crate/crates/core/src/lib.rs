//! Simulation and estimation toolkit for optically assisted polarization of
//! the ¹⁴N nuclear spin of a single NV center.
//!
//! Units are MHz, mT and ns throughout; conversions only happen in [`io`].

pub mod spin;
pub mod rates;
pub mod pulse;
pub mod readout;
pub mod estimation;
pub mod optimizer;
pub mod io;
mod lm;
