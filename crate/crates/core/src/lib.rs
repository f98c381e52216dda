//! TV-JKO steps and flows for densities on an interval and for radially
//! symmetric densities on a ball.

pub mod analytic;
pub mod certificate;
pub mod cli;
pub mod error;
pub mod flow;
pub mod grid;
pub mod io;
pub mod jko;
pub mod oracle;
pub mod properties;
pub mod prox;
pub mod radial;
pub mod transport;

pub use error::{Error, Result};
