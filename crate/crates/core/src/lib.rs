//! Particle-system simulation for point-delay McKean–Vlasov SDEs.
//!
//! The crate provides
//!
//! * delay structures and nested uniform meshes ([`grid`]),
//! * coefficient interfaces, taming and built-in test models ([`model`]),
//! * Brownian lattices, the antithetic half-step swap and truncated Fourier
//!   Lévy areas with Chen aggregation ([`brownian`]),
//! * particle ensembles with empirical-measure summaries ([`particles`]),
//! * tamed Euler, tamed Milstein and the antithetic coarse operator
//!   ([`schemes`]),
//! * antithetic and standard multilevel Monte Carlo ([`mlmc`]).
//!
//! Everything is `no_std` with `alloc`. Randomness is derived from a master
//! seed and integer indices only, so results are reproducible regardless of
//! how work is scheduled by an [`exec::Executor`].

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod brownian;
pub mod error;
pub mod exec;
pub mod grid;
pub mod math;
pub mod mlmc;
pub mod model;
pub mod particles;
pub mod rng;
pub mod schemes;
pub mod stats;

pub use error::{Error, Result};
pub use exec::{Executor, Sequential};
pub use grid::{DelaySpec, LevelHierarchy, TimeGrid};
pub use model::{BuiltinModel, DelayCoefficients, ModelHandle, OnePointDelayModel, Taming};
