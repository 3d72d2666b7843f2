//! Metropolis-Hastings chains and trajectory observables.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{QamcError, Result};
use crate::gibbs::TargetDistribution;
use crate::kernel::{accept_step, Kernel};
use crate::scalar::Real;
use crate::sk::SpinConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalRecord<F> {
    /// State the proposal was made from.
    pub from: SpinConfig,
    pub proposed: SpinConfig,
    pub accepted: bool,
    pub log_acceptance: F,
}

/// `states[0]` is the initial state; `states[t]` for `t >= 1` is the state
/// after step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace<F> {
    pub states: Vec<SpinConfig>,
    pub proposals: Vec<ProposalRecord<F>>,
    pub seed: u64,
}

impl<F: Real> ChainTrace<F> {
    pub fn steps(&self) -> usize {
        self.proposals.len()
    }

    pub fn initial(&self) -> SpinConfig {
        self.states[0]
    }

    /// Post-step samples `σ^(1) … σ^(τ_MCS)`.
    pub fn samples(&self) -> &[SpinConfig] {
        &self.states[1..]
    }

    pub fn acceptance_rate(&self) -> f64 {
        let acc = self.proposals.iter().filter(|p| p.accepted).count();
        acc as f64 / self.proposals.len().max(1) as f64
    }

    /// Mean of `exp(log A)` over all proposals, the Rao-Blackwellized
    /// acceptance estimate.
    pub fn mean_acceptance_probability(&self) -> f64 {
        let s: f64 = self.proposals.iter().map(|p| p.log_acceptance.as_f64().exp()).sum();
        s / self.proposals.len().max(1) as f64
    }
}

/// Runs `steps` Metropolis-Hastings steps from `init`.
pub fn run_chain<F: Real, R: Rng + ?Sized>(
    target: &TargetDistribution<F>,
    kernel: &Kernel<F>,
    steps: usize,
    init: SpinConfig,
    rng: &mut R,
    seed: u64,
) -> Result<ChainTrace<F>> {
    if steps == 0 {
        return Err(QamcError::Config("a chain needs at least one step".into()));
    }
    if init.index() >= target.dim() || kernel.n() != target.n() {
        return Err(QamcError::Domain(format!(
            "initial state {} or kernel size {} incompatible with a {}-spin target",
            init.index(),
            kernel.n(),
            target.n()
        )));
    }
    let mut states = Vec::with_capacity(steps + 1);
    let mut proposals = Vec::with_capacity(steps);
    let mut current = init;
    states.push(current);
    for _ in 0..steps {
        let proposed = kernel.propose(current, rng);
        let log_acceptance = kernel.log_acceptance(target, current, proposed);
        let accepted = accept_step(log_acceptance, rng);
        proposals.push(ProposalRecord {
            from: current,
            proposed,
            accepted,
            log_acceptance,
        });
        if accepted {
            current = proposed;
        }
        states.push(current);
    }
    Ok(ChainTrace {
        states,
        proposals,
        seed,
    })
}

/// Normalized histogram of post-step samples after discarding `burn_in`.
pub fn empirical_distribution<F: Real>(trace: &ChainTrace<F>, dim: usize, burn_in: usize) -> Result<Vec<F>> {
    let samples = trace.samples();
    if burn_in >= samples.len() {
        return Err(QamcError::Config(format!(
            "burn-in {burn_in} leaves no samples out of {}",
            samples.len()
        )));
    }
    let mut counts = vec![0usize; dim];
    for s in &samples[burn_in..] {
        counts[s.index()] += 1;
    }
    let total = F::from_usize_lossy(samples.len() - burn_in);
    Ok(counts.into_iter().map(|c| F::from_usize_lossy(c) / total).collect())
}

/// Half the L1 distance between two probability vectors.
pub fn tv_distance<F: Real>(p: &[F], q: &[F]) -> Result<F> {
    if p.len() != q.len() {
        return Err(QamcError::Domain(format!(
            "distributions have different lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    let tol = F::lit(1e-9);
    for (name, v) in [("p", p), ("q", q)] {
        let total: F = v.iter().copied().sum();
        if (total - F::one()).abs() > tol || v.iter().any(|x| *x < F::zero()) {
            return Err(QamcError::Domain(format!("{name} is not normalized (sum {total})")));
        }
    }
    Ok(tv_unchecked(p, q))
}

fn tv_unchecked<F: Real>(p: &[F], q: &[F]) -> F {
    p.iter().zip(q).map(|(&a, &b)| (a - b).abs()).sum::<F>() * F::lit(0.5)
}

/// Cumulative Hamming-distance distribution of proposals, indexed by `d = 0..=n`.
pub fn hamming_cumulative<F: Real>(trace: &ChainTrace<F>, n: usize) -> Result<Vec<F>> {
    if trace.proposals.is_empty() {
        return Err(QamcError::Domain("empty trace".into()));
    }
    let mut counts = vec![0usize; n + 1];
    for p in &trace.proposals {
        counts[p.from.hamming(p.proposed) as usize] += 1;
    }
    Ok(cumulate(&counts, trace.proposals.len()))
}

pub(crate) fn cumulate<F: Real>(counts: &[usize], total: usize) -> Vec<F> {
    let mut acc = 0usize;
    counts
        .iter()
        .map(|&c| {
            acc += c;
            F::from_usize_lossy(acc) / F::from_usize_lossy(total)
        })
        .collect()
}

/// Exact empirical CDF: `cdf[k] = P(X <= support[k])` over a sorted, deduplicated support.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf<F> {
    pub support: Vec<F>,
    pub cdf: Vec<F>,
}

impl<F: Real> EmpiricalCdf<F> {
    pub fn from_samples(mut xs: Vec<F>) -> Result<Self> {
        if xs.is_empty() {
            return Err(QamcError::Domain("empirical CDF of no samples".into()));
        }
        if xs.iter().any(|x| x.is_nan()) {
            return Err(QamcError::Domain("NaN sample".into()));
        }
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let total = F::from_usize_lossy(xs.len());
        let mut support = Vec::new();
        let mut cdf = Vec::new();
        for (i, &x) in xs.iter().enumerate() {
            if support.last() == Some(&x) {
                *cdf.last_mut().unwrap() = F::from_usize_lossy(i + 1) / total;
            } else {
                support.push(x);
                cdf.push(F::from_usize_lossy(i + 1) / total);
            }
        }
        Ok(EmpiricalCdf { support, cdf })
    }

    /// `P(X <= x)`.
    pub fn eval(&self, x: F) -> F {
        let k = self.support.partition_point(|&s| s <= x);
        if k == 0 {
            F::zero()
        } else {
            self.cdf[k - 1]
        }
    }

    /// Smallest support point with CDF at least one half.
    pub fn median(&self) -> F {
        let k = self.cdf.partition_point(|&c| c < F::lit(0.5));
        self.support[k.min(self.support.len() - 1)]
    }
}

/// CDF of `|E(current) - E(proposed)|` over all proposal events.
pub fn energy_gap_cumulative<F: Real>(trace: &ChainTrace<F>, energies: &[F]) -> Result<EmpiricalCdf<F>> {
    let gaps = trace
        .proposals
        .iter()
        .map(|p| (energies[p.from.index()] - energies[p.proposed.index()]).abs())
        .collect();
    EmpiricalCdf::from_samples(gaps)
}

/// Powers of two up to `steps`, plus `steps` itself.
pub fn checkpoints(steps: usize) -> Vec<usize> {
    let mut out: Vec<usize> = std::iter::successors(Some(1usize), |&c| c.checked_mul(2))
        .take_while(|&c| c <= steps)
        .collect();
    if out.last() != Some(&steps) && steps > 0 {
        out.push(steps);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservableSeries<F> {
    /// `Ē(t)` for `t = 1..=τ_MCS` at index `t - 1`.
    pub running_mean_energy: Vec<F>,
    pub abs_error: Vec<F>,
    /// `(t, TV(μ, empirical distribution of σ^(1..t)))`.
    pub tv_to_target: Vec<(usize, F)>,
    pub acceptance_rate: f64,
}

impl<F: Real> ObservableSeries<F> {
    pub fn from_trace(trace: &ChainTrace<F>, energies: &[F], target: &TargetDistribution<F>) -> Result<Self> {
        let exact = target.mean_energy(energies)?;
        let samples = trace.samples();
        let mut running = Vec::with_capacity(samples.len());
        let mut sum = F::zero();
        let mut comp = F::zero();
        for (t, s) in samples.iter().enumerate() {
            // Kahan summation keeps the prefix mean accurate over 10^6 steps in f32 too.
            let y = energies[s.index()] - comp;
            let next = sum + y;
            comp = (next - sum) - y;
            sum = next;
            running.push(sum / F::from_usize_lossy(t + 1));
        }
        let abs_error = running.iter().map(|&m| (m - exact).abs()).collect();

        let marks = checkpoints(samples.len());
        let mut counts = vec![0usize; target.dim()];
        let mut tv = Vec::with_capacity(marks.len());
        let mut seen = 0;
        for &m in &marks {
            for s in &samples[seen..m] {
                counts[s.index()] += 1;
            }
            seen = m;
            let total = F::from_usize_lossy(m);
            let d: F = counts
                .iter()
                .zip(target.probs())
                .map(|(&c, &p)| (F::from_usize_lossy(c) / total - p).abs())
                .sum::<F>()
                * F::lit(0.5);
            tv.push((m, d));
        }

        Ok(ObservableSeries {
            running_mean_energy: running,
            abs_error,
            tv_to_target: tv,
            acceptance_rate: trace.acceptance_rate(),
        })
    }

    /// `step,energy_running_mean,abs_error` rows at the given steps (1-based).
    pub fn energy_csv(&self, steps: &[usize]) -> String {
        let mut s = String::from("step,energy_running_mean,abs_error\n");
        for &t in steps {
            writeln!(s, "{t},{},{}", self.running_mean_energy[t - 1], self.abs_error[t - 1]).unwrap();
        }
        s
    }

    pub fn tv_csv(&self) -> String {
        let mut s = String::from("checkpoint,tv\n");
        for (t, d) in &self.tv_to_target {
            writeln!(s, "{t},{d}").unwrap();
        }
        s
    }
}

/// First 1-based step at which `curve` is at or below `threshold`.
pub fn crossing_step<F: Real>(curve: &[F], threshold: F) -> Option<usize> {
    curve.iter().position(|&v| v <= threshold).map(|i| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::sk::SkInstance;

    fn stuck_trace(k: usize, steps: usize) -> ChainTrace<f64> {
        let c = SpinConfig::new(k);
        ChainTrace {
            states: vec![c; steps + 1],
            proposals: vec![
                ProposalRecord {
                    from: c,
                    proposed: c,
                    accepted: true,
                    log_acceptance: 0.0,
                };
                steps
            ],
            seed: 0,
        }
    }

    #[test]
    fn single_step_with_flat_target_moves_to_proposal() {
        let tgt = TargetDistribution::from_energies(&[0.0; 16], 1.0).unwrap();
        let k = Kernel::uniform(4);
        let mut r = rng::stream(4, rng::purpose::TEST);
        let tr = run_chain(&tgt, &k, 1, SpinConfig::new(0), &mut r, 4).unwrap();
        assert!(tr.proposals[0].accepted);
        assert_eq!(tr.states[1], tr.proposals[0].proposed);
    }

    #[test]
    fn traces_are_consistent_and_reproducible() {
        let inst = SkInstance::<f64>::generate(6, 2).unwrap();
        let tgt = TargetDistribution::new(&inst, 1.0).unwrap();
        let k = Kernel::local(6);
        let run = |seed| {
            let mut r = rng::stream(seed, rng::purpose::CHAIN);
            run_chain(&tgt, &k, 2000, SpinConfig::new(5), &mut r, seed).unwrap()
        };
        let tr = run(3);
        assert_eq!(tr, run(3));
        assert_ne!(tr, run(4));
        for (t, p) in tr.proposals.iter().enumerate() {
            assert_eq!(p.from, tr.states[t]);
            let want = if p.accepted { p.proposed } else { tr.states[t] };
            assert_eq!(tr.states[t + 1], want);
        }
    }

    #[test]
    fn empirical_distribution_edges() {
        let tr = stuck_trace(2, 10);
        assert_eq!(empirical_distribution(&tr, 4, 0).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(empirical_distribution(&tr, 4, 9).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
        assert!(empirical_distribution(&tr, 4, 10).is_err());
    }

    #[test]
    fn tv_distance_examples() {
        let p = [0.7f64, 0.3];
        assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
        assert!((tv_distance(&p, &[0.5, 0.5]).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!(tv_distance(&[0.7, 0.4], &[0.5, 0.5]).is_err());
        assert!(tv_distance(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn hamming_cumulative_step_function() {
        let mut tr = stuck_trace(0, 1);
        tr.proposals[0].proposed = SpinConfig::new(0b0111);
        let cum = hamming_cumulative(&tr, 4).unwrap();
        assert_eq!(cum, vec![0.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn energy_gap_cdf() {
        let tr = stuck_trace(0, 5);
        let es = [0.0, 1.0, 3.0, 2.0];
        let cdf = energy_gap_cumulative(&tr, &es).unwrap();
        assert_eq!(cdf.support, vec![0.0]);
        assert_eq!(cdf.eval(0.0), 1.0);

        let cdf = EmpiricalCdf::from_samples(vec![3.0, 1.0]).unwrap();
        assert_eq!(cdf.eval(1.0), 0.5);
        assert_eq!(cdf.eval(2.9), 0.5);
        assert_eq!(cdf.eval(3.0), 1.0);
        assert_eq!(cdf.eval(0.5), 0.0);
        assert_eq!(cdf.median(), 1.0);
    }

    #[test]
    fn checkpoint_grid() {
        assert_eq!(checkpoints(1), vec![1]);
        assert_eq!(checkpoints(8), vec![1, 2, 4, 8]);
        assert_eq!(checkpoints(10), vec![1, 2, 4, 8, 10]);
    }

    #[test]
    fn crossing_definition() {
        assert_eq!(crossing_step(&[1.0, 0.5, 0.05, 0.2, 0.05, 0.01], 0.1), Some(3));
        assert_eq!(crossing_step(&[0.01, 0.2], 0.1), Some(1));
        assert_eq!(crossing_step(&[0.3, 0.2], 0.1), None);
        assert_eq!(crossing_step::<f64>(&[], 0.1), None);
    }

    #[test]
    fn running_mean_is_prefix_mean() {
        let inst = SkInstance::<f64>::generate(5, 7).unwrap();
        let es = inst.all_energies();
        let tgt = TargetDistribution::new(&inst, 1.0).unwrap();
        let mut r = rng::stream(1, rng::purpose::CHAIN);
        let tr = run_chain(&tgt, &Kernel::uniform(5), 500, SpinConfig::new(0), &mut r, 1).unwrap();
        let obs = ObservableSeries::from_trace(&tr, &es, &tgt).unwrap();
        for t in [1, 17, 256, 500] {
            let direct: f64 = tr.samples()[..t].iter().map(|s| es[s.index()]).sum::<f64>() / t as f64;
            assert!((obs.running_mean_energy[t - 1] - direct).abs() < 1e-12);
        }
        let last = obs.tv_to_target.last().unwrap();
        assert_eq!(last.0, 500);
        let emp = empirical_distribution(&tr, 32, 0).unwrap();
        assert!((last.1 - tv_distance(&emp, tgt.probs()).unwrap()).abs() < 1e-12);
    }
}
