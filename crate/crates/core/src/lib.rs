//! Battery degradation diagnostics: histogram features from telemetry,
//! hidden-physics regression of degradation modes, and knee-phase
//! classification.

pub mod autodiff;
pub mod data;
pub mod deephpm;
pub mod features;
pub mod gbt;
pub mod knee;
pub mod optim;
pub mod pipeline;
pub mod seeds;
pub mod synth;
