//! Degradation index from multi-channel sensor histories: a cumulative
//! exposure model with spline sensor effects, censored log-location-scale
//! likelihood and adaptive group LASSO selection.

pub mod basis;
pub mod benchmark;
pub mod cli;
pub mod estimation;
pub mod evaluation;
pub mod exposure;
pub mod ingestion;
pub mod likelihood;
pub mod model;
pub mod optim;
pub mod simulation;
