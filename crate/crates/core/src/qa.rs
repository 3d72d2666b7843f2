//! State-vector simulation of the annealing Hamiltonian
//! `H(t) = s(t) H0 - (1 - s(t)) Σ σx_i` with the linear schedule `s = t/τ`,
//! and the Born-rule proposal distribution it produces.
//!
//! The integrator is Strang splitting: a diagonal phase for `H0`, an exact
//! product of single-qubit x-rotations for the driver, and the diagonal
//! phase again, with the schedule sampled at each step midpoint.

use std::fmt::Write as _;

use num_complex::Complex;
use rand::Rng;

use crate::error::{QamcError, Result};
use crate::scalar::Real;
use crate::sk::{SkInstance, SpinConfig};

/// Phase advance bound per step, `dt * Λ`.
pub const DEFAULT_PHASE_BUDGET: f64 = 0.05;
/// Minimum number of steps over the full anneal.
pub const MIN_STEPS: usize = 1000;
pub const NORM_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_BORN_FLOOR: f64 = 1e-300;
// Diagonal phasors are advanced by complex multiplication and recomputed
// exactly this often.
const REANCHOR_EVERY: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState<F> {
    n: usize,
    amplitudes: Vec<Complex<F>>,
}

impl<F: Real> QuantumState<F> {
    /// Uniform superposition, the ground state of `-Σ σx_i`.
    pub fn uniform(n: usize) -> Self {
        let dim = 1usize << n;
        let a = F::one() / F::from_usize_lossy(dim).sqrt();
        QuantumState {
            n,
            amplitudes: vec![Complex::new(a, F::zero()); dim],
        }
    }

    /// Computational basis state `|k>`.
    pub fn basis(n: usize, k: SpinConfig) -> Self {
        let mut amplitudes = vec![Complex::new(F::zero(), F::zero()); 1 << n];
        amplitudes[k.index()] = Complex::new(F::one(), F::zero());
        QuantumState { n, amplitudes }
    }

    pub fn from_amplitudes(amplitudes: Vec<Complex<F>>) -> Result<Self> {
        if amplitudes.is_empty() || !amplitudes.len().is_power_of_two() {
            return Err(QamcError::Domain("amplitude vector length must be a power of two".into()));
        }
        let n = amplitudes.len().trailing_zeros() as usize;
        Ok(QuantumState { n, amplitudes })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[Complex<F>] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> F {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `<ψ| Σ σx_i |ψ>`.
    pub fn driver_expectation(&self) -> F {
        let mut total = F::zero();
        for bit in 0..self.n {
            let stride = 1 << bit;
            for (k, a) in self.amplitudes.iter().enumerate() {
                total = total + (a.conj() * self.amplitudes[k ^ stride]).re;
            }
        }
        total
    }

    fn renormalize(&mut self) {
        let inv = F::one() / self.norm_sqr().sqrt();
        self.amplitudes.iter_mut().for_each(|a| *a = *a * inv);
    }
}

pub fn initial_state<F: Real>(n: usize) -> QuantumState<F> {
    QuantumState::uniform(n)
}

/// Annealing time and integrator step limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSpec<F> {
    tau: F,
    dt_max: F,
    phase_budget: F,
}

impl<F: Real> AnnealSpec<F> {
    /// `tau = 0` is accepted and means no evolution at all.
    pub fn new(tau: F) -> Result<Self> {
        if !(tau >= F::zero() && tau.is_finite()) {
            return Err(QamcError::Domain(format!("annealing time {tau} must be finite and >= 0")));
        }
        Ok(AnnealSpec {
            tau,
            dt_max: tau,
            phase_budget: F::lit(DEFAULT_PHASE_BUDGET),
        })
    }

    pub fn with_dt_max(mut self, dt_max: F) -> Result<Self> {
        if !(dt_max > F::zero() && dt_max <= self.tau) {
            return Err(QamcError::Domain(format!(
                "dt_max {dt_max} must lie in (0, tau={}]",
                self.tau
            )));
        }
        self.dt_max = dt_max;
        Ok(self)
    }

    pub fn with_phase_budget(mut self, budget: F) -> Result<Self> {
        if !(budget > F::zero() && budget.is_finite()) {
            return Err(QamcError::Domain(format!("phase budget {budget} must be positive")));
        }
        self.phase_budget = budget;
        Ok(self)
    }

    pub fn tau(&self) -> F {
        self.tau
    }

    pub fn dt_max(&self) -> F {
        self.dt_max
    }

    /// Number of Strang steps for a Hamiltonian of scale `scale`:
    /// `dt <= min(dt_max, τ/1000, budget/scale)`.
    pub fn step_count(&self, scale: F) -> usize {
        if self.tau == F::zero() {
            return 0;
        }
        let dt = self
            .dt_max
            .min(self.tau / F::from_usize_lossy(MIN_STEPS))
            .min(self.phase_budget / scale);
        (self.tau / dt).ceil().to_usize().unwrap_or(usize::MAX).max(1)
    }
}

/// Hamiltonian scale `Λ = max(spectral range of H0, n)`.
pub fn hamiltonian_scale<F: Real>(energies: &[F], n: usize) -> F {
    let (lo, hi) = energies
        .iter()
        .fold((F::infinity(), F::neg_infinity()), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    (hi - lo).max(F::from_usize_lossy(n))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvolveStats {
    pub steps: usize,
    pub dt: f64,
    /// Largest `|‖ψ‖² - 1|` observed at any checkpoint before renormalizing.
    pub max_norm_drift: f64,
    pub renormalizations: usize,
}

/// Schedule sampled at step midpoints: `s_k = offset + slope * (k + 1/2)`.
#[derive(Debug, Clone, Copy)]
struct AffineSchedule<F> {
    offset: F,
    slope: F,
}

impl<F: Real> AffineSchedule<F> {
    fn at_step(&self, k: usize) -> F {
        self.offset + self.slope * (F::from_usize_lossy(k) + F::lit(0.5))
    }
}

/// Runs the annealing evolution from the uniform superposition.
pub fn evolve<F: Real>(inst: &SkInstance<F>, spec: &AnnealSpec<F>) -> Result<QuantumState<F>> {
    evolve_with_stats(inst, spec).map(|(s, _)| s)
}

pub fn evolve_with_stats<F: Real>(
    inst: &SkInstance<F>,
    spec: &AnnealSpec<F>,
) -> Result<(QuantumState<F>, EvolveStats)> {
    evolve_energies(&inst.all_energies(), inst.n(), spec)
}

/// Annealing evolution for an arbitrary diagonal `H0` given as an energy table.
pub fn evolve_energies<F: Real>(
    energies: &[F],
    n: usize,
    spec: &AnnealSpec<F>,
) -> Result<(QuantumState<F>, EvolveStats)> {
    check_table(energies, n)?;
    let steps = spec.step_count(hamiltonian_scale(energies, n));
    let mut state = QuantumState::uniform(n);
    if steps == 0 {
        return Ok((state, EvolveStats::default()));
    }
    let dt = spec.tau / F::from_usize_lossy(steps);
    let schedule = AffineSchedule {
        offset: F::zero(),
        slope: F::one() / F::from_usize_lossy(steps),
    };
    let stats = strang(&mut state, energies, steps, dt, schedule)?;
    Ok((state, stats))
}

/// Evolves `state` for total time `total` under the time-independent
/// Hamiltonian `s H0 - (1 - s) Σ σx` with `steps` Strang steps.
pub fn evolve_frozen<F: Real>(
    state: &mut QuantumState<F>,
    energies: &[F],
    s: F,
    total: F,
    steps: usize,
) -> Result<EvolveStats> {
    check_table(energies, state.n)?;
    if steps == 0 {
        return Ok(EvolveStats::default());
    }
    let dt = total / F::from_usize_lossy(steps);
    strang(
        state,
        energies,
        steps,
        dt,
        AffineSchedule {
            offset: s,
            slope: F::zero(),
        },
    )
}

fn check_table<F>(energies: &[F], n: usize) -> Result<()> {
    if energies.len() != 1 << n {
        return Err(QamcError::Domain(format!(
            "energy table has {} entries, expected 2^{n}",
            energies.len()
        )));
    }
    Ok(())
}

#[inline]
fn phasor<F: Real>(angle: F) -> Complex<F> {
    let (s, c) = angle.sin_cos();
    Complex::new(c, s)
}

/// Applies `exp(iθ σx)` to every qubit.
fn apply_driver<F: Real>(amps: &mut [Complex<F>], n: usize, theta: F) {
    let (s, c) = theta.sin_cos();
    for bit in 0..n {
        let stride = 1 << bit;
        for block in amps.chunks_exact_mut(2 * stride) {
            let (lo, hi) = block.split_at_mut(stride);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (ar, ai, br, bi) = (a.re, a.im, b.re, b.im);
                // a' = c a + i s b, b' = i s a + c b
                *a = Complex::new(c * ar - s * bi, c * ai + s * br);
                *b = Complex::new(c * br - s * ai, c * bi + s * ar);
            }
        }
    }
}

fn strang<F: Real>(
    state: &mut QuantumState<F>,
    energies: &[F],
    steps: usize,
    dt: F,
    schedule: AffineSchedule<F>,
) -> Result<EvolveStats> {
    let n = state.n;
    let half = F::lit(0.5);
    let mut stats = EvolveStats {
        steps,
        dt: dt.as_f64(),
        ..Default::default()
    };

    // Leading half step of the diagonal term.
    let lead = dt * half * schedule.at_step(0);
    for (a, &e) in state.amplitudes.iter_mut().zip(energies) {
        *a = *a * phasor(-lead * e);
    }

    // Between driver steps k and k+1 the two diagonal half steps merge into
    // one phase with coefficient c_k = dt (s_k + s_{k+1}) / 2, affine in k.
    let merged = |k: usize| dt * half * (schedule.at_step(k) + schedule.at_step(k + 1));
    let increment: Vec<Complex<F>> = energies
        .iter()
        .map(|&e| phasor(-dt * schedule.slope * e))
        .collect();
    let mut phases: Vec<Complex<F>> = Vec::with_capacity(energies.len());

    for k in 0..steps {
        let s = schedule.at_step(k);
        apply_driver(&mut state.amplitudes, n, (F::one() - s) * dt);

        if k + 1 == steps {
            let trail = dt * half * s;
            for (a, &e) in state.amplitudes.iter_mut().zip(energies) {
                *a = *a * phasor(-trail * e);
            }
        } else {
            if k % REANCHOR_EVERY == 0 {
                let c = merged(k);
                phases.clear();
                phases.extend(energies.iter().map(|&e| phasor(-c * e)));
            } else {
                for (p, &w) in phases.iter_mut().zip(&increment) {
                    *p = *p * w;
                }
            }
            for (a, &p) in state.amplitudes.iter_mut().zip(&phases) {
                *a = *a * p;
            }
        }

        if (k + 1) % REANCHOR_EVERY == 0 || k + 1 == steps {
            check_norm(state, &mut stats, dt, k + 1)?;
        }
    }
    Ok(stats)
}

fn check_norm<F: Real>(
    state: &mut QuantumState<F>,
    stats: &mut EvolveStats,
    dt: F,
    done: usize,
) -> Result<()> {
    let norm = state.norm_sqr();
    if !norm.is_finite() {
        return Err(QamcError::Integrator {
            t: (dt * F::from_usize_lossy(done)).as_f64(),
            dt: dt.as_f64(),
        });
    }
    let drift = (norm - F::one()).abs().as_f64();
    stats.max_norm_drift = stats.max_norm_drift.max(drift);
    if drift > NORM_TOLERANCE {
        state.renormalize();
        stats.renormalizations += 1;
    }
    Ok(())
}

/// A state-independent proposal `Q(σ)` with cached logs and CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalDistribution<F> {
    probs: Vec<F>,
    log_probs: Vec<F>,
    cdf: Vec<F>,
    floor_applied: bool,
}

impl<F: Real> ProposalDistribution<F> {
    /// Validates a probability vector: nonnegative, power-of-two length,
    /// summing to 1 within 1e-9. The vector is renormalized exactly.
    pub fn from_probs(probs: Vec<F>) -> Result<Self> {
        if probs.is_empty() || !probs.len().is_power_of_two() {
            return Err(QamcError::Domain("proposal length must be a power of two".into()));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= F::zero())) {
            return Err(QamcError::Domain("proposal has negative or non-finite entries".into()));
        }
        let total: F = probs.iter().copied().sum();
        if (total - F::one()).abs() > F::lit(NORM_TOLERANCE) {
            return Err(QamcError::Domain(format!("proposal sums to {total}, not 1")));
        }
        Ok(Self::normalized(probs, false))
    }

    pub fn uniform(n: usize) -> Self {
        let dim = 1usize << n;
        Self::normalized(vec![F::one() / F::from_usize_lossy(dim); dim], false)
    }

    fn normalized(mut probs: Vec<F>, floor_applied: bool) -> Self {
        let total: F = probs.iter().copied().sum();
        probs.iter_mut().for_each(|p| *p = *p / total);
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        let mut acc = F::zero();
        let mut cdf: Vec<F> = probs
            .iter()
            .map(|&p| {
                acc = acc + p;
                acc
            })
            .collect();
        *cdf.last_mut().unwrap() = F::one();
        ProposalDistribution {
            probs,
            log_probs,
            cdf,
            floor_applied,
        }
    }

    pub fn probs(&self) -> &[F] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[F] {
        &self.log_probs
    }

    #[inline]
    pub fn log_prob(&self, cfg: SpinConfig) -> F {
        self.log_probs[cfg.index()]
    }

    pub fn floor_applied(&self) -> bool {
        self.floor_applied
    }

    pub fn dim(&self) -> usize {
        self.probs.len()
    }

    /// Inverse-CDF draw using one uniform variate from `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SpinConfig {
        let u = F::lit(rng.random::<f64>());
        let k = self.cdf.partition_point(|&c| c <= u);
        SpinConfig::new(k.min(self.cdf.len() - 1))
    }

    /// `index,prob` CSV with a header row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,prob\n");
        for (k, p) in self.probs.iter().enumerate() {
            writeln!(s, "{k},{p}").unwrap();
        }
        s
    }
}

/// `Q(σ) = max(|<σ|ψ>|², floor)`, renormalized.
pub fn born_distribution<F: Real>(state: &QuantumState<F>, floor: F) -> ProposalDistribution<F> {
    let mut floor_applied = false;
    let probs = state
        .amplitudes
        .iter()
        .map(|a| {
            let p = a.norm_sqr();
            if p < floor {
                floor_applied = true;
                floor
            } else {
                p
            }
        })
        .collect();
    ProposalDistribution::normalized(probs, floor_applied)
}

/// Convenience: anneal for `tau` with default step control and return `Q_QA`.
pub fn qa_proposal<F: Real>(inst: &SkInstance<F>, tau: F) -> Result<ProposalDistribution<F>> {
    let spec = AnnealSpec::new(tau)?;
    let state = evolve(inst, &spec)?;
    Ok(born_distribution(&state, F::lit(DEFAULT_BORN_FLOOR)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn uniform_superposition() {
        let s = initial_state::<f64>(1);
        for a in s.amplitudes() {
            assert!((a.re - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
            assert_eq!(a.im, 0.0);
        }
        let s10 = initial_state::<f64>(10);
        assert!(s10.amplitudes().iter().all(|a| (a.norm_sqr() - 1.0 / 1024.0).abs() < 1e-18));
        // -Σσx has eigenvalue -n on the uniform state.
        let s4 = initial_state::<f64>(4);
        assert!((-s4.driver_expectation() + 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_time_is_identity() {
        let inst = SkInstance::<f64>::generate(5, 1).unwrap();
        let (state, stats) = evolve_with_stats(&inst, &AnnealSpec::new(0.0).unwrap()).unwrap();
        assert_eq!(stats.steps, 0);
        assert_eq!(state, initial_state(5));
        let q = born_distribution(&state, DEFAULT_BORN_FLOOR);
        assert!(q.probs().iter().all(|&p| (p - 1.0 / 32.0).abs() < 1e-15));
    }

    #[test]
    fn step_control_takes_the_tightest_limit() {
        let spec = AnnealSpec::new(10.0).unwrap();
        // τ/1000 = 0.01 vs 0.05/50 = 0.001
        assert_eq!(spec.step_count(50.0), 10_000);
        assert_eq!(spec.step_count(1.0), 1000);
        let tight = spec.with_dt_max(0.001).unwrap();
        assert_eq!(tight.step_count(1.0), 10_000);
        assert!(spec.with_dt_max(20.0).is_err());
        assert!(AnnealSpec::new(-1.0).is_err());
    }

    #[test]
    fn evolution_preserves_norm() {
        let inst = SkInstance::<f64>::generate(6, 3).unwrap();
        for tau in [0.01, 1.0, 30.0] {
            let (state, stats) = evolve_with_stats(&inst, &AnnealSpec::new(tau).unwrap()).unwrap();
            assert!(stats.max_norm_drift < 1e-9, "{stats:?}");
            assert_eq!(stats.renormalizations, 0);
            assert!((state.norm_sqr() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn born_distribution_of_basis_state_is_an_indicator() {
        let q = born_distribution(&QuantumState::<f64>::basis(3, SpinConfig::new(5)), DEFAULT_BORN_FLOOR);
        assert!(q.floor_applied());
        assert!((q.probs()[5] - 1.0).abs() < 1e-15);
        let mut r = rng::stream(1, rng::purpose::TEST);
        for _ in 0..1000 {
            assert_eq!(q.sample(&mut r), SpinConfig::new(5));
        }
        let u = born_distribution(&initial_state::<f64>(4), DEFAULT_BORN_FLOOR);
        assert!(!u.floor_applied());
        assert!(u.probs().iter().all(|&p| (p - 1.0 / 16.0).abs() < 1e-15));
    }

    #[test]
    fn sampling_is_reproducible_and_unbiased() {
        let q = ProposalDistribution::<f64>::uniform(4);
        let draw = |seed| {
            let mut r = rng::stream(seed, rng::purpose::TEST);
            (0..100_000).map(|_| q.sample(&mut r).index()).collect::<Vec<_>>()
        };
        let a = draw(9);
        assert_eq!(a, draw(9));
        let mut counts = [0usize; 16];
        a.iter().for_each(|&k| counts[k] += 1);
        let (n, p) = (100_000.0, 1.0 / 16.0);
        let sigma = (n * p * (1.0 - p) as f64).sqrt();
        for c in counts {
            assert!((c as f64 - n * p).abs() < 5.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn from_probs_validates() {
        assert!(ProposalDistribution::<f64>::from_probs(vec![0.5, 0.6]).is_err());
        assert!(ProposalDistribution::<f64>::from_probs(vec![1.5, -0.5]).is_err());
        assert!(ProposalDistribution::<f64>::from_probs(vec![1.0, 0.0, 0.0]).is_err());
        let q = ProposalDistribution::<f64>::from_probs(vec![0.25, 0.75]).unwrap();
        assert_eq!(q.to_csv(), "index,prob\n0,0.25\n1,0.75\n");
    }

    #[test]
    fn f32_evolution_runs() {
        let inst = SkInstance::<f32>::generate(4, 2).unwrap();
        let (state, _) = evolve_with_stats(&inst, &AnnealSpec::new(1.0f32).unwrap()).unwrap();
        assert!((state.norm_sqr() - 1.0).abs() < 1e-4);
    }
}
