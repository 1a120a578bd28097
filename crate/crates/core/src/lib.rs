//! Exact event-driven simulation of a locally regulated birth, death,
//! competition and dispersal population, together with solvers for its
//! deterministic large-population limit and its Gaussian fluctuation limit,
//! and a statistical harness that checks the limit laws at desk scale.

pub mod bounds;
pub mod fluctuation;
pub mod harness;
pub mod meanfield;
pub mod model;
pub mod ou1d;
pub mod quad;
pub mod sim;
pub mod stats;
pub mod tolerances;

pub use model::{
    DispersalKernel, ModelError, ModelSpec, Observable, ScalarField, SeparableKernel, TraitSpace,
};
pub use sim::{
    init_population, simulate, simulate_population, EventKind, EventLog, InitMode,
    InitialCondition, MeasurePath, Population, SimError, SpatialLaw,
};
