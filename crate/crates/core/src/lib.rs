//! Conditioned Hilbert-space Gaussian-process bases for learning unknown
//! functions nested inside nonlinear state-space models.
//!
//! The offline side fits reduced-rank GP expansions to several realizations
//! of a function family ([`hilbert_gp`]) and compresses the coefficient stack
//! into a low-dimensional orthonormal basis ([`conditioning`]). The online
//! side runs a noise-adaptive particle filter over the physical state and the
//! subspace coefficients ([`filter`]). [`harness`] ties both to configurable
//! experiments and [`validate`] holds the self-check suite.

pub mod conditioning;
pub mod error;
pub mod filter;
pub mod harness;
pub mod hilbert_gp;
pub mod io;
pub mod models;
pub mod quadrature;
pub mod simplex;
pub mod validate;

pub use conditioning::{svd_condition, CoefficientStack, ConditionedBasis};
pub use error::{Error, Result};
pub use filter::{FilterSettings, NoiseStats, Particle, ParticleFilter, ParticleSet, StepRecord};
pub use hilbert_gp::{BasisSpec, Domain, HilbertGpModel, Hyperparameters, RegressionData};
pub use models::{BatteryParams, BatterySystem, NestedSystem, TargetFamily};
