//! Exact Gibbs-Boltzmann target by full enumeration, kept in log domain.

use crate::error::{QamcError, Result};
use crate::scalar::{log_sum_exp, Real};
use crate::sk::{SkInstance, SpinConfig};

/// `μ(σ) = exp(-βE(σ)) / Z` over all basis states.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDistribution<F> {
    beta: F,
    log_weights: Vec<F>,
    log_z: F,
    log_probs: Vec<F>,
    probs: Vec<F>,
}

impl<F: Real> TargetDistribution<F> {
    /// Target at temperature `T`. `T = +inf` gives the uniform distribution.
    pub fn new(inst: &SkInstance<F>, temperature: F) -> Result<Self> {
        Self::from_energies(&inst.all_energies(), beta_from_temperature(temperature)?)
    }

    /// Target from a precomputed energy table (length must be a power of two).
    pub fn from_energies(energies: &[F], beta: F) -> Result<Self> {
        if !(beta >= F::zero() && beta.is_finite()) {
            return Err(QamcError::Domain(format!("inverse temperature {beta} must be finite and >= 0")));
        }
        if energies.is_empty() || !energies.len().is_power_of_two() {
            return Err(QamcError::Domain(format!(
                "energy table length {} is not a power of two",
                energies.len()
            )));
        }
        let log_weights: Vec<F> = energies.iter().map(|&e| -beta * e).collect();
        let log_z = log_sum_exp(&log_weights);
        let log_probs: Vec<F> = log_weights.iter().map(|&w| w - log_z).collect();
        let mut probs: Vec<F> = log_probs.iter().map(|&lp| lp.exp()).collect();
        // exp of the shifted logs sums to 1 up to rounding; fold the residue back in.
        let total: F = probs.iter().copied().sum();
        probs.iter_mut().for_each(|p| *p = *p / total);
        Ok(TargetDistribution {
            beta,
            log_weights,
            log_z,
            log_probs,
            probs,
        })
    }

    pub fn beta(&self) -> F {
        self.beta
    }

    pub fn temperature(&self) -> F {
        F::one() / self.beta
    }

    pub fn dim(&self) -> usize {
        self.probs.len()
    }

    pub fn n(&self) -> usize {
        self.probs.len().trailing_zeros() as usize
    }

    /// `-βE(σ)` per state.
    pub fn log_weights(&self) -> &[F] {
        &self.log_weights
    }

    pub fn log_z(&self) -> F {
        self.log_z
    }

    pub fn log_probs(&self) -> &[F] {
        &self.log_probs
    }

    pub fn probs(&self) -> &[F] {
        &self.probs
    }

    #[inline]
    pub fn log_prob(&self, cfg: SpinConfig) -> F {
        self.log_probs[cfg.index()]
    }

    /// `log μ(to) - log μ(from)` computed from the unnormalized weights.
    #[inline]
    pub fn log_ratio(&self, to: SpinConfig, from: SpinConfig) -> F {
        self.log_weights[to.index()] - self.log_weights[from.index()]
    }

    /// `Σ_σ μ(σ) E(σ)`.
    pub fn mean_energy(&self, energies: &[F]) -> Result<F> {
        if energies.len() != self.dim() {
            return Err(QamcError::Domain(format!(
                "energy table has {} entries, target has {}",
                energies.len(),
                self.dim()
            )));
        }
        Ok(self.probs.iter().zip(energies).map(|(&p, &e)| p * e).sum())
    }

    /// `min_σ μ(σ)`, always positive for finite energies.
    pub fn min_probability(&self) -> F {
        self.probs.iter().copied().fold(F::infinity(), F::min)
    }
}

pub fn beta_from_temperature<F: Real>(temperature: F) -> Result<F> {
    if temperature.is_nan() || temperature <= F::zero() {
        return Err(QamcError::Domain(format!("temperature {temperature} must be positive")));
    }
    Ok(if temperature.is_infinite() {
        F::zero()
    } else {
        F::one() / temperature
    })
}

/// All states attaining the minimum energy. Degenerate minima are returned
/// together rather than picking one.
pub fn ground_states<F: Real>(energies: &[F]) -> Vec<SpinConfig> {
    let min = energies.iter().copied().fold(F::infinity(), F::min);
    let tol = F::lit(1e-12) * F::one().max(min.abs());
    energies
        .iter()
        .enumerate()
        .filter(|(_, &e)| e - min <= tol)
        .map(|(k, _)| SpinConfig::new(k))
        .collect()
}
