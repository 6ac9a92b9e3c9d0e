//! Compound lens design by sampling.
//!
//! Continuous parameters are optimized by gradient steps through a
//! differentiable sequential ray tracer, while topology changes (adding,
//! removing, gluing and splitting elements) are handled by a rejection-free
//! regenerating sampler. Mutated lenses are refined by a paraxial
//! projection that keeps their first-order behavior unchanged.

pub mod ad;
pub mod baselines;
pub mod io;
pub mod lens;
pub mod loss;
pub mod mutate;
pub mod paraxial;
pub mod restore;
pub mod toy;
pub mod trace;

pub use lens::{ElementKind, Field, LensError, LensSystem, SurfaceSpec};
pub use paraxial::{paraxial_equal, paraxial_project, paraxial_state, TransferMatrix};
pub use trace::{trace, BlockReason, DirectionGrid, Ray, TraceOutcome};
