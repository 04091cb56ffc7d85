//! Explicit stabilized integrators for stiff Ito SDEs.

pub mod cheb;
pub mod cli;
pub mod error;
pub mod harness;
pub mod integrators;
pub mod model;
pub mod noise;
pub mod problems;
pub mod stability;

pub use cheb::{build_coefficients, build_postprocessor, cheb_eval, stage_selection, MethodCoefficients};
pub use cli::cli_main;
pub use error::{Error, Result};
pub use integrators::{integrate, Integrator, IntegratorConfig, Method, StageMode, TrajectorySummary};
pub use model::{Diffusion, SdeProblem};
pub use noise::{NoiseKind, NoiseStream};
