//! Proposal kernels and Metropolis-Hastings acceptance.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;

use crate::error::QamcError;
use crate::gibbs::TargetDistribution;
use crate::qa::ProposalDistribution;
use crate::scalar::Real;
use crate::sk::SpinConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KernelKind {
    /// Single uniformly chosen spin flip.
    Local,
    /// Uniform over all basis states.
    Uniform,
    /// Born distribution of the annealed state.
    Qa,
    /// Independence proposal equal to the target itself. Debug reference:
    /// every move is accepted and samples are i.i.d.
    Exact,
}

impl KernelKind {
    pub const PAPER_KERNELS: [KernelKind; 3] = [KernelKind::Local, KernelKind::Uniform, KernelKind::Qa];

    pub fn as_str(self) -> &'static str {
        match self {
            KernelKind::Local => "local",
            KernelKind::Uniform => "uniform",
            KernelKind::Qa => "qa",
            KernelKind::Exact => "exact",
        }
    }

    pub fn code(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelKind {
    type Err = QamcError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "local" => Ok(KernelKind::Local),
            "uniform" => Ok(KernelKind::Uniform),
            "qa" => Ok(KernelKind::Qa),
            "exact" => Ok(KernelKind::Exact),
            other => Err(QamcError::Config(format!(
                "unknown kernel '{other}' (expected local, uniform, qa or exact)"
            ))),
        }
    }
}

/// A proposal mechanism. Independence kernels share their distribution
/// read-only between chains.
#[derive(Debug, Clone)]
pub enum Kernel<F> {
    Local { n: usize },
    Uniform { n: usize },
    Qa(Arc<ProposalDistribution<F>>),
    Exact(Arc<ProposalDistribution<F>>),
}

impl<F: Real> Kernel<F> {
    pub fn local(n: usize) -> Self {
        Kernel::Local { n }
    }

    pub fn uniform(n: usize) -> Self {
        Kernel::Uniform { n }
    }

    pub fn qa(proposal: ProposalDistribution<F>) -> Self {
        Kernel::Qa(Arc::new(proposal))
    }

    /// Independence kernel proposing from the target itself.
    pub fn exact(target: &TargetDistribution<F>) -> Self {
        let q = ProposalDistribution::from_probs(target.probs().to_vec())
            .expect("target is a normalized distribution");
        Kernel::Exact(Arc::new(q))
    }

    pub fn kind(&self) -> KernelKind {
        match self {
            Kernel::Local { .. } => KernelKind::Local,
            Kernel::Uniform { .. } => KernelKind::Uniform,
            Kernel::Qa(_) => KernelKind::Qa,
            Kernel::Exact(_) => KernelKind::Exact,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Kernel::Local { n } | Kernel::Uniform { n } => *n,
            Kernel::Qa(q) | Kernel::Exact(q) => q.dim().trailing_zeros() as usize,
        }
    }

    /// The state-independent proposal, if any. The uniform kernel has one
    /// implicitly but it is never materialized.
    pub fn independent_proposal(&self) -> Option<&ProposalDistribution<F>> {
        match self {
            Kernel::Qa(q) | Kernel::Exact(q) => Some(q),
            _ => None,
        }
    }

    pub fn is_independence(&self) -> bool {
        !matches!(self, Kernel::Local { .. })
    }

    pub fn propose<R: Rng + ?Sized>(&self, current: SpinConfig, rng: &mut R) -> SpinConfig {
        match self {
            Kernel::Local { n } => current.flip(rng.random_range(0..*n)),
            Kernel::Uniform { n } => SpinConfig::new(rng.random_range(0..1usize << n)),
            Kernel::Qa(q) | Kernel::Exact(q) => q.sample(rng),
        }
    }

    /// `Q(to | from)`.
    pub fn proposal_prob(&self, to: SpinConfig, from: SpinConfig) -> F {
        match self {
            Kernel::Local { n } => {
                if to.hamming(from) == 1 {
                    F::one() / F::from_usize_lossy(*n)
                } else {
                    F::zero()
                }
            }
            Kernel::Uniform { n } => F::one() / F::from_usize_lossy(1 << n),
            Kernel::Qa(q) | Kernel::Exact(q) => q.probs()[to.index()],
        }
    }

    /// `log A(proposal | current)`, always `<= 0`.
    ///
    /// Symmetric kernels use the plain Metropolis ratio; independence kernels
    /// add `log Q(current) - log Q(proposal)`.
    pub fn log_acceptance(
        &self,
        target: &TargetDistribution<F>,
        current: SpinConfig,
        proposal: SpinConfig,
    ) -> F {
        if current == proposal {
            return F::zero();
        }
        let log_mu = target.log_ratio(proposal, current);
        let log_a = match self {
            Kernel::Local { .. } | Kernel::Uniform { .. } => log_mu,
            Kernel::Qa(q) | Kernel::Exact(q) => log_mu + q.log_prob(current) - q.log_prob(proposal),
        };
        if log_a.is_nan() {
            // Only possible when both Q terms are -inf; such a move can never be proposed.
            F::neg_infinity()
        } else {
            log_a.min(F::zero())
        }
    }
}

/// Accept with probability `exp(log_a)`. Consumes exactly one uniform draw;
/// underflow of `exp` rejects.
pub fn accept_step<F: Real, R: Rng + ?Sized>(log_a: F, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    if log_a >= F::zero() {
        return true;
    }
    u < log_a.as_f64().exp()
}
