//! Exact simulation and benchmarking of Metropolis-Hastings sampling on
//! Sherrington-Kirkpatrick spin glasses with local, uniform and
//! quantum-annealing proposals.
//!
//! Everything is computed by full enumeration of the `2^n` basis states, so
//! supported sizes stop at [`sk::MAX_SPINS`]. The numerical modules are
//! generic over the scalar type; the aliases below fix it to `f64`, which
//! is what all documented tolerances assume.

pub mod chain;
pub mod error;
pub mod gibbs;
pub mod harness;
pub mod kernel;
pub mod qa;
pub mod rng;
pub mod scalar;
pub mod sk;
pub mod spectral;

pub use error::{QamcError, Result};
pub use kernel::{Kernel as KernelOf, KernelKind};
pub use scalar::Real;
pub use sk::SpinConfig;

pub type SkInstance = sk::SkInstance<f64>;
pub type TargetDistribution = gibbs::TargetDistribution<f64>;
pub type QuantumState = qa::QuantumState<f64>;
pub type AnnealSpec = qa::AnnealSpec<f64>;
pub type ProposalDistribution = qa::ProposalDistribution<f64>;
pub type Kernel = kernel::Kernel<f64>;
pub type ChainTrace = chain::ChainTrace<f64>;
pub type ObservableSeries = chain::ObservableSeries<f64>;
pub type TransitionMatrix = spectral::TransitionMatrix<f64>;
pub type SpectralReport = spectral::SpectralReport<f64>;
