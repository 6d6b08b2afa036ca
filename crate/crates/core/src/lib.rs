//! Nonnegative, time-smoothed low-rank factor models for collections of
//! period-aligned time series with missing periods.

pub mod analytics;
pub mod error;
pub mod ingest;
pub mod io;
pub mod series;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
pub use series::{Dataset, DayRows, DayTable, Grid, SeriesMatrix};
pub use solver::{BasisSet, CoefficientSet, FactorModel};
