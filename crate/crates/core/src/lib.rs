//! Collar-region solver for the vacuum Einstein equations in the maximal
//! gauge, with a timelike boundary carrying conformal boundary data.

pub mod analytic;
pub mod boundary;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod evolution;
pub mod geometry;
pub mod grid;
pub mod jet;
pub mod lapse;
pub mod mms;
pub mod output;
pub mod run;
pub mod tensor;

pub use error::{Error, Result};
