//! Exact transition matrices, absolute spectral gaps, mixing-time bounds and
//! the annealing-time search that maximizes the QA kernel's gap.

use std::fmt::Write as _;

use nalgebra::{DMatrix, RealField, SymmetricEigen};
use num_traits::Float;
use rayon::prelude::*;

use crate::error::{QamcError, Result};
use crate::gibbs::TargetDistribution;
use crate::kernel::{Kernel, KernelKind};
use crate::qa::ProposalDistribution;
use crate::scalar::Real;
use crate::sk::SkInstance;

pub const ROW_SUM_TOLERANCE: f64 = 1e-12;
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;
pub const UNIT_VECTOR_COSINE: f64 = 1e-8;

/// Dense row-stochastic matrix `P[σ][σ'] = P(σ' | σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix<F> {
    dim: usize,
    entries: Vec<F>,
    kind: KernelKind,
}

impl<F: Real> TransitionMatrix<F> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    #[inline]
    pub fn get(&self, from: usize, to: usize) -> F {
        self.entries[from * self.dim + to]
    }

    pub fn row(&self, from: usize) -> &[F] {
        &self.entries[from * self.dim..(from + 1) * self.dim]
    }

    pub fn entries(&self) -> &[F] {
        &self.entries
    }

    /// `max_σ |Σ_σ' P(σ'|σ) - 1|`.
    pub fn row_sum_residual(&self) -> F {
        (0..self.dim)
            .map(|i| (self.row(i).iter().copied().sum::<F>() - F::one()).abs())
            .fold(F::zero(), F::max)
    }

    /// Largest `|μ(σ)P(σ'|σ) - μ(σ')P(σ|σ')| / max(both)` over all pairs.
    pub fn detailed_balance_residual(&self, target: &TargetDistribution<F>) -> F {
        let mu = target.probs();
        let mut worst = F::zero();
        for i in 0..self.dim {
            for j in i + 1..self.dim {
                let a = mu[i] * self.get(i, j);
                let b = mu[j] * self.get(j, i);
                let m = a.max(b);
                if m > F::zero() {
                    worst = worst.max((a - b).abs() / m);
                }
            }
        }
        worst
    }

    /// `v ↦ vP` for a row vector `v`.
    pub fn left_apply(&self, v: &[F]) -> Vec<F> {
        let mut out = vec![F::zero(); self.dim];
        for (i, &vi) in v.iter().enumerate() {
            if vi == F::zero() {
                continue;
            }
            for (o, &p) in out.iter_mut().zip(self.row(i)) {
                *o = *o + vi * p;
            }
        }
        out
    }

    /// `‖μP - μ‖₁`.
    pub fn stationarity_residual(&self, target: &TargetDistribution<F>) -> F {
        self.left_apply(target.probs())
            .iter()
            .zip(target.probs())
            .map(|(&a, &b)| (a - b).abs())
            .sum()
    }
}

/// Assembles the Metropolis-Hastings matrix for `kernel` against `target`.
///
/// Off-diagonal entries are `Q(σ'|σ) A(σ'|σ)`, formed as a single
/// exponential of a log-domain expression; the diagonal collects the
/// remaining mass.
pub fn build_transition_matrix<F: Real>(
    target: &TargetDistribution<F>,
    kernel: &Kernel<F>,
) -> Result<TransitionMatrix<F>> {
    let dim = target.dim();
    let n = target.n();
    if kernel.n() != n {
        return Err(QamcError::Domain(format!(
            "kernel for {} spins used with a {n}-spin target",
            kernel.n()
        )));
    }
    let lw = target.log_weights();
    let log_q: Option<Vec<F>> = match kernel {
        Kernel::Local { .. } => None,
        Kernel::Uniform { .. } => Some(vec![-F::from_usize_lossy(n) * F::LN_2(); dim]),
        Kernel::Qa(q) | Kernel::Exact(q) => Some(q.log_probs().to_vec()),
    };
    let inv_n = F::one() / F::from_usize_lossy(n);

    let mut entries = vec![F::zero(); dim * dim];
    entries.par_chunks_mut(dim).enumerate().for_each(|(i, row)| {
        match &log_q {
            None => {
                for bit in 0..n {
                    let j = i ^ (1 << bit);
                    row[j] = inv_n * (lw[j] - lw[i]).min(F::zero()).exp();
                }
            }
            Some(lq) => {
                for j in 0..dim {
                    if j != i {
                        // Q(j) min(1, μ_j Q_i / (μ_i Q_j)) = exp(min(lq_j, lw_j - lw_i + lq_i))
                        row[j] = lq[j].min(lw[j] - lw[i] + lq[i]).exp();
                    }
                }
            }
        }
        let off: F = row.iter().copied().sum();
        row[i] = F::one() - off;
    });

    for i in 0..dim {
        let d = entries[i * dim + i];
        if d < -F::lit(ROW_SUM_TOLERANCE) {
            return Err(QamcError::Consistency(format!(
                "row {i} has off-diagonal mass exceeding one by {:e}",
                -d.as_f64()
            )));
        }
        if d < F::zero() {
            entries[i * dim + i] = F::zero();
        }
    }
    Ok(TransitionMatrix {
        dim,
        entries,
        kind: kernel.kind(),
    })
}

/// Spectral summary of a reversible transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralReport<F> {
    /// Absolute spectral gap `1 - max_{λ≠1} |λ|`.
    pub gap: F,
    pub second_eigenvalue_magnitude: F,
    /// The eigenvalue whose eigenvector matched `√μ`.
    pub unit_eigenvalue: F,
    /// `|<v, √μ>|` for that eigenvector, or the norm of the projection of
    /// `√μ` on its eigenvalue cluster when resolution limited.
    pub stationary_overlap: F,
    /// Full spectrum in ascending order (empty for iterative methods).
    pub spectrum: Vec<F>,
    /// Set when eigenvalues adjacent to 1 are numerically degenerate with it,
    /// so the gap is below what double precision can resolve.
    pub resolution_limited: bool,
}

impl<F: Real> SpectralReport<F> {
    pub fn mixing_bounds(&self, epsilon: F, min_mu: F) -> Result<MixingBounds<F>> {
        mixing_bounds(self.gap, epsilon, min_mu)
    }
}

/// Symmetrizes `P` with `D^{1/2} P D^{-1/2}` and runs a dense symmetric
/// eigensolve.
pub fn spectral_gap<F>(tm: &TransitionMatrix<F>, target: &TargetDistribution<F>) -> Result<SpectralReport<F>>
where
    F: Real + RealField,
{
    let dim = tm.dim;
    let lmu = target.log_probs();
    let half = F::lit(0.5);
    let mut s = DMatrix::<F>::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            let p = tm.get(i, j);
            s[(i, j)] = if i == j || p == F::zero() {
                p
            } else {
                p * Float::exp((lmu[i] - lmu[j]) * half)
            };
        }
    }
    let mut asym = F::zero();
    for i in 0..dim {
        for j in i + 1..dim {
            let d = Float::abs(s[(i, j)] - s[(j, i)]);
            asym = Float::max(asym, d);
            let avg = (s[(i, j)] + s[(j, i)]) * half;
            s[(i, j)] = avg;
            s[(j, i)] = avg;
        }
    }
    if asym > F::lit(SYMMETRY_TOLERANCE) {
        return Err(QamcError::Reversibility {
            asymmetry: asym.as_f64(),
            tolerance: SYMMETRY_TOLERANCE,
        });
    }

    let eig = SymmetricEigen::new(s);
    let sqrt_mu: Vec<F> = target.probs().iter().map(|&p| Float::sqrt(p)).collect();
    let overlaps: Vec<F> = (0..dim)
        .map(|k| {
            let col = eig.eigenvectors.column(k);
            Float::abs(col.iter().zip(&sqrt_mu).map(|(&a, &b)| a * b).sum::<F>())
        })
        .collect();
    let unit = (0..dim)
        .max_by(|&a, &b| overlaps[a].partial_cmp(&overlaps[b]).unwrap())
        .expect("non-empty spectrum");
    let unit_eigenvalue = eig.eigenvalues[unit];
    let threshold = F::one() - F::lit(UNIT_VECTOR_COSINE);

    let mut resolution_limited = false;
    let mut stationary_overlap = overlaps[unit];
    if stationary_overlap < threshold {
        // √μ may be smeared across eigenvectors whose eigenvalues are
        // indistinguishable from 1 in floating point.
        let cluster: Vec<usize> = (0..dim)
            .filter(|&k| Float::abs(eig.eigenvalues[k] - unit_eigenvalue) <= F::lit(SYMMETRY_TOLERANCE))
            .collect();
        let captured = Float::sqrt(cluster.iter().map(|&k| overlaps[k] * overlaps[k]).sum::<F>());
        if cluster.len() < 2 || captured < threshold {
            return Err(QamcError::Consistency(format!(
                "no eigenvector of the symmetrized matrix matches the stationary distribution (best cosine {})",
                stationary_overlap
            )));
        }
        resolution_limited = true;
        stationary_overlap = captured;
    }

    let second = (0..dim)
        .filter(|&k| k != unit)
        .map(|k| Float::abs(eig.eigenvalues[k]))
        .fold(F::zero(), Float::max);
    let mut spectrum: Vec<F> = eig.eigenvalues.iter().copied().collect();
    spectrum.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tol = F::lit(SYMMETRY_TOLERANCE);
    if spectrum[0] < -F::one() - tol || spectrum[dim - 1] > F::one() + tol {
        return Err(QamcError::Consistency(format!(
            "spectrum [{}, {}] leaves [-1, 1]",
            spectrum[0],
            spectrum[dim - 1]
        )));
    }
    Ok(SpectralReport {
        gap: clamp_unit(F::one() - second),
        second_eigenvalue_magnitude: second,
        unit_eigenvalue,
        stationary_overlap,
        spectrum,
        resolution_limited,
    })
}

fn clamp_unit<F: Real>(x: F) -> F {
    x.max(F::zero()).min(F::one())
}

/// Closed-form absolute gap of a Metropolized independence sampler,
/// `min_σ Q(σ)/μ(σ)`.
///
/// Its non-unit eigenvalues are all nonnegative and the largest is
/// `1 - 1/max_σ(μ(σ)/Q(σ))`.
pub fn independence_gap<F: Real>(target: &TargetDistribution<F>, log_q: impl Fn(usize) -> F) -> F {
    let lmu = target.log_probs();
    let min_log_ratio = (0..target.dim())
        .map(|k| log_q(k) - lmu[k])
        .fold(F::infinity(), F::min);
    clamp_unit(min_log_ratio.exp())
}

pub fn proposal_gap<F: Real>(target: &TargetDistribution<F>, q: &ProposalDistribution<F>) -> F {
    independence_gap(target, |k| q.log_probs()[k])
}

pub fn uniform_gap<F: Real>(target: &TargetDistribution<F>) -> F {
    let lq = -F::from_usize_lossy(target.n()) * F::LN_2();
    independence_gap(target, |_| lq)
}

/// Absolute gap of the single-flip Metropolis chain by Lanczos iteration on
/// the symmetrized sparse operator, with `√μ` deflated.
pub fn local_gap_lanczos<F>(target: &TargetDistribution<F>) -> Result<F>
where
    F: Real + RealField,
{
    let n = target.n();
    let dim = target.dim();
    let lw = target.log_weights();
    let inv_n = F::one() / F::from_usize_lossy(n);
    let half = F::lit(0.5);

    // S[σ][σ^bit] = (1/n) exp(-|Δ|/2); diagonal is the rejection mass.
    let mut off = vec![F::zero(); dim * n];
    let mut diag = vec![F::zero(); dim];
    for s in 0..dim {
        let mut out = F::zero();
        for bit in 0..n {
            let t = s ^ (1 << bit);
            let d = lw[t] - lw[s];
            out = out + inv_n * Float::exp(Float::min(d, F::zero()));
            off[s * n + bit] = inv_n * Float::exp(-Float::abs(d) * half);
        }
        diag[s] = Float::max(F::one() - out, F::zero());
    }
    let apply = |x: &[F], y: &mut [F]| {
        for s in 0..dim {
            let mut acc = diag[s] * x[s];
            for bit in 0..n {
                acc = acc + off[s * n + bit] * x[s ^ (1 << bit)];
            }
            y[s] = acc;
        }
    };
    let u0: Vec<F> = target.probs().iter().map(|&p| Float::sqrt(p)).collect();
    let (lo, hi) = lanczos_extremes(apply, dim, &u0)?;
    Ok(clamp_unit(F::one() - Float::max(Float::abs(lo), Float::abs(hi))))
}

fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn orthogonalize<F: Real>(v: &mut [F], against: &[F]) {
    let c = dot(v, against);
    v.iter_mut().zip(against).for_each(|(x, &a)| *x = *x - c * a);
}

/// Extreme eigenvalues of a symmetric operator restricted to the orthogonal
/// complement of the unit vector `deflate`. Full reorthogonalization.
fn lanczos_extremes<F, A>(apply: A, dim: usize, deflate: &[F]) -> Result<(F, F)>
where
    F: Real + RealField,
    A: Fn(&[F], &mut [F]),
{
    let max_iter = (dim - 1).min(1500);
    let tol = F::lit(1e-13);
    // Deterministic, non-degenerate start vector.
    let mut v: Vec<F> = (0..dim)
        .map(|k| F::lit(((k as f64 + 1.0) * 0.618_033_988_749_895).fract() - 0.5))
        .collect();
    orthogonalize(&mut v, deflate);
    let norm = Float::sqrt(dot(&v, &v));
    v.iter_mut().for_each(|x| *x = *x / norm);

    let mut basis: Vec<Vec<F>> = vec![v];
    let mut alphas: Vec<F> = Vec::new();
    let mut betas: Vec<F> = Vec::new();
    let mut w = vec![F::zero(); dim];
    let mut result = (F::zero(), F::zero());
    for k in 0..max_iter {
        apply(&basis[k], &mut w);
        let a = dot(&w, &basis[k]);
        alphas.push(a);
        for _ in 0..2 {
            orthogonalize(&mut w, deflate);
            for b in &basis {
                orthogonalize(&mut w, b);
            }
        }
        let beta = Float::sqrt(dot(&w, &w));
        let m = alphas.len();
        let check = m % 10 == 0 || beta <= tol || k + 1 == max_iter;
        if check {
            let mut t = DMatrix::<F>::zeros(m, m);
            for i in 0..m {
                t[(i, i)] = alphas[i];
                if i + 1 < m {
                    t[(i, i + 1)] = betas[i];
                    t[(i + 1, i)] = betas[i];
                }
            }
            let eig = SymmetricEigen::new(t);
            let (mut imin, mut imax) = (0, 0);
            for i in 0..m {
                if eig.eigenvalues[i] < eig.eigenvalues[imin] {
                    imin = i;
                }
                if eig.eigenvalues[i] > eig.eigenvalues[imax] {
                    imax = i;
                }
            }
            let resid = |i: usize| Float::abs(beta * eig.eigenvectors[(m - 1, i)]);
            result = (eig.eigenvalues[imin], eig.eigenvalues[imax]);
            if beta <= tol || (resid(imin) <= tol && resid(imax) <= tol) {
                return Ok(result);
            }
        }
        betas.push(beta);
        basis.push(w.iter().map(|&x| x / beta).collect());
    }
    if max_iter + 1 >= dim {
        // The Krylov space spans the whole deflated space.
        return Ok(result);
    }
    Err(QamcError::Consistency(format!(
        "Lanczos did not converge in {max_iter} iterations"
    )))
}

/// How to obtain an absolute spectral gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GapMethod {
    /// Dense transition matrix and full symmetric eigensolve.
    Dense,
    /// Closed form for independence kernels, dense for the local kernel up to
    /// 1024 states and Lanczos above that.
    #[default]
    Auto,
}

pub const DENSE_LOCAL_LIMIT: usize = 1024;

pub fn kernel_gap<F>(target: &TargetDistribution<F>, kernel: &Kernel<F>, method: GapMethod) -> Result<F>
where
    F: Real + RealField,
{
    match (method, kernel) {
        (GapMethod::Auto, Kernel::Uniform { .. }) => Ok(uniform_gap(target)),
        (GapMethod::Auto, Kernel::Qa(q) | Kernel::Exact(q)) => Ok(proposal_gap(target, q)),
        (GapMethod::Auto, Kernel::Local { .. }) if target.dim() > DENSE_LOCAL_LIMIT => local_gap_lanczos(target),
        _ => {
            let tm = build_transition_matrix(target, kernel)?;
            Ok(spectral_gap(&tm, target)?.gap)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingBounds<F> {
    pub lower: F,
    pub upper: F,
}

/// `(1/δ - 1) ln(1/(2ε)) <= τ_ε <= ln(1/(ε min μ)) / δ`, lower bound floored at 0.
pub fn mixing_bounds<F: Real>(gap: F, epsilon: F, min_mu: F) -> Result<MixingBounds<F>> {
    if !(epsilon > F::zero() && epsilon < F::lit(0.5)) {
        return Err(QamcError::Domain(format!("epsilon {epsilon} must lie in (0, 1/2)")));
    }
    if !(min_mu > F::zero() && min_mu <= F::one()) {
        return Err(QamcError::Domain(format!("min probability {min_mu} must lie in (0, 1]")));
    }
    if !(gap >= F::zero() && gap <= F::one()) {
        return Err(QamcError::Domain(format!("gap {gap} must lie in [0, 1]")));
    }
    if gap == F::zero() {
        return Err(QamcError::NonMixing);
    }
    let lower = ((F::one() - F::one() / gap) * (F::lit(2.0) * epsilon).ln()).max(F::zero());
    let upper = -(epsilon * min_mu).ln() / gap;
    Ok(MixingBounds { lower, upper })
}

/// Smallest `t` with `max_σ TV(P^t(σ, ·), μ) <= ε`, by repeated
/// multiplication of the full distribution matrix. `None` if not reached
/// within `max_steps`.
pub fn mixing_time_by_powering<F: Real>(
    tm: &TransitionMatrix<F>,
    target: &TargetDistribution<F>,
    epsilon: F,
    max_steps: usize,
) -> Option<usize> {
    let dim = tm.dim;
    let mu = target.probs();
    let worst = |m: &[F]| {
        (0..dim)
            .map(|i| {
                m[i * dim..(i + 1) * dim]
                    .iter()
                    .zip(mu)
                    .map(|(&a, &b)| (a - b).abs())
                    .sum::<F>()
                    * F::lit(0.5)
            })
            .fold(F::zero(), F::max)
    };
    let mut current = tm.entries.clone();
    let mut next = vec![F::zero(); dim * dim];
    for t in 1..=max_steps {
        if worst(&current) <= epsilon {
            return Some(t);
        }
        next.par_chunks_mut(dim).enumerate().for_each(|(i, row)| {
            row.iter_mut().for_each(|x| *x = F::zero());
            for k in 0..dim {
                let c = current[i * dim + k];
                if c != F::zero() {
                    for (x, &p) in row.iter_mut().zip(tm.row(k)) {
                        *x = *x + c * p;
                    }
                }
            }
        });
        std::mem::swap(&mut current, &mut next);
    }
    None
}

/// Deterministic replacement for a stochastic hyperparameter search over τ:
/// a log-spaced grid, then golden-section refinement around the best point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauSearch {
    pub tau_min: f64,
    pub tau_max: f64,
    pub per_decade: usize,
    /// Total objective evaluations allowed, grid included.
    pub budget: usize,
    /// Refinement stops once `(hi - lo) / τ < rel_tol`.
    pub rel_tol: f64,
}

pub const TAU_LOWER_LIMIT: f64 = 1e-2;
pub const TAU_UPPER_LIMIT: f64 = 1e3;

impl Default for TauSearch {
    fn default() -> Self {
        TauSearch {
            tau_min: TAU_LOWER_LIMIT,
            tau_max: TAU_UPPER_LIMIT,
            per_decade: 8,
            budget: 60,
            rel_tol: 0.05,
        }
    }
}

impl TauSearch {
    pub fn grid(&self) -> Vec<f64> {
        let (a, b) = (self.tau_min.log10(), self.tau_max.log10());
        let intervals = ((b - a) * self.per_decade as f64).ceil().max(1.0) as usize;
        (0..=intervals)
            .map(|k| {
                if k == intervals {
                    self.tau_max
                } else {
                    10f64.powf(a + (b - a) * k as f64 / intervals as f64)
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let eps = 1e-12;
        if !(self.tau_min >= TAU_LOWER_LIMIT * (1.0 - eps)
            && self.tau_max <= TAU_UPPER_LIMIT * (1.0 + eps)
            && self.tau_min < self.tau_max)
        {
            return Err(QamcError::Config(format!(
                "tau range [{}, {}] must be a non-empty subrange of [{TAU_LOWER_LIMIT}, {TAU_UPPER_LIMIT}]",
                self.tau_min, self.tau_max
            )));
        }
        if self.per_decade == 0 || !(self.rel_tol > 0.0) {
            return Err(QamcError::Config("grid density and tolerance must be positive".into()));
        }
        if self.budget < 10 {
            return Err(QamcError::Config(format!(
                "tau search budget {} is below the minimum of 10 evaluations",
                self.budget
            )));
        }
        let grid = self.grid().len();
        if self.budget < grid {
            return Err(QamcError::Config(format!(
                "tau search budget {} cannot cover the {grid}-point grid",
                self.budget
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TauScan {
    pub tau_star: f64,
    pub gap_star: f64,
    /// Every evaluation as `(τ, gap)`, sorted by τ.
    pub table: Vec<(f64, f64)>,
}

impl TauScan {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tau,gap\n");
        for (t, g) in &self.table {
            writeln!(s, "{t},{g}").unwrap();
        }
        s
    }
}

/// Maximizes `objective(τ)` over the search range. Ties keep the smallest τ.
pub fn optimize_tau(search: &TauSearch, mut objective: impl FnMut(f64) -> Result<f64>) -> Result<TauScan> {
    search.validate()?;
    let grid = search.grid();
    let mut table = Vec::with_capacity(search.budget);
    for &t in &grid {
        table.push((t, objective(t)?));
    }
    let best = table
        .iter()
        .enumerate()
        .fold(0, |b, (i, e)| if e.1 > table[b].1 { i } else { b });
    let (mut best_tau, mut best_gap) = table[best];

    // Golden section on log τ within the neighbouring grid points.
    let mut lo = grid[best.saturating_sub(1)].ln();
    let mut hi = grid[(best + 1).min(grid.len() - 1)].ln();
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut evals = table.len();
    let mut probe = |x: f64, table: &mut Vec<(f64, f64)>, evals: &mut usize| -> Result<f64> {
        let t = x.exp();
        let g = objective(t)?;
        table.push((t, g));
        *evals += 1;
        Ok(g)
    };
    if hi > lo && evals + 2 <= search.budget {
        let mut x1 = hi - inv_phi * (hi - lo);
        let mut x2 = lo + inv_phi * (hi - lo);
        let mut f1 = probe(x1, &mut table, &mut evals)?;
        let mut f2 = probe(x2, &mut table, &mut evals)?;
        while (hi.exp() - lo.exp()) / ((lo + hi) * 0.5).exp() >= search.rel_tol && evals < search.budget {
            if f1 >= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - inv_phi * (hi - lo);
                f1 = probe(x1, &mut table, &mut evals)?;
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + inv_phi * (hi - lo);
                f2 = probe(x2, &mut table, &mut evals)?;
            }
        }
        for &(t, g) in &table {
            if g > best_gap || (g == best_gap && t < best_tau) {
                best_gap = g;
                best_tau = t;
            }
        }
    }
    table.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(TauScan {
        tau_star: best_tau,
        gap_star: best_gap,
        table,
    })
}

/// The QA kernel's gap as a function of τ for one instance.
pub fn qa_gap_at<F>(inst: &SkInstance<F>, target: &TargetDistribution<F>, tau: f64, method: GapMethod) -> Result<F>
where
    F: Real + RealField,
{
    let q = crate::qa::qa_proposal(inst, F::lit(tau))?;
    kernel_gap(target, &Kernel::qa(q), method)
}

/// Tunes τ for the QA kernel on `inst` at the temperature of `target`.
pub fn optimize_qa_tau<F>(
    inst: &SkInstance<F>,
    target: &TargetDistribution<F>,
    search: &TauSearch,
    method: GapMethod,
) -> Result<TauScan>
where
    F: Real + RealField,
{
    optimize_tau(search, |tau| qa_gap_at(inst, target, tau, method).map(|g| g.as_f64()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_spin_target(h: f64, beta: f64) -> TargetDistribution<f64> {
        TargetDistribution::from_energies(&[h, -h], beta).unwrap()
    }

    #[test]
    fn uniform_at_infinite_temperature_is_rank_one() {
        let inst = SkInstance::<f64>::generate(4, 0).unwrap();
        let tgt = TargetDistribution::new(&inst, f64::INFINITY).unwrap();
        let tm = build_transition_matrix(&tgt, &Kernel::uniform(4)).unwrap();
        assert!(tm.entries().iter().all(|&p| (p - 1.0 / 16.0).abs() < 1e-15));
        let rep = spectral_gap(&tm, &tgt).unwrap();
        assert!((rep.gap - 1.0).abs() < 1e-12);
        assert!((rep.unit_eigenvalue - 1.0).abs() < 1e-12);
        assert!(rep.spectrum[..15].iter().all(|l| l.abs() < 1e-12));
    }

    #[test]
    fn single_spin_local_chain_is_periodic() {
        let tgt = one_spin_target(0.0, 0.0);
        let tm = build_transition_matrix(&tgt, &Kernel::local(1)).unwrap();
        assert_eq!(tm.entries(), &[0.0, 1.0, 1.0, 0.0]);
        let rep = spectral_gap(&tm, &tgt).unwrap();
        assert!(rep.gap.abs() < 1e-12);
        assert!((rep.spectrum[0] + 1.0).abs() < 1e-12);
        assert!(matches!(rep.mixing_bounds(0.25, 0.5), Err(QamcError::NonMixing)));
    }

    #[test]
    fn mixing_bound_formulas() {
        let b = mixing_bounds(1.0, 0.01, 0.125).unwrap();
        assert_eq!(b.lower, 0.0);
        assert!((b.upper + (0.01f64 * 0.125).ln()).abs() < 1e-12);
        let b = mixing_bounds(0.5, 0.25, 1.0 / 16.0).unwrap();
        assert!((b.upper - 12.0 * 2f64.ln()).abs() < 1e-12);
        assert!((b.upper - 8.3178).abs() < 1e-4);
        assert!((b.lower - 2f64.ln()).abs() < 1e-12);
        assert!(mixing_bounds(0.5, 0.5, 0.1).is_err());
        assert!(mixing_bounds(1.5, 0.1, 0.1).is_err());
    }

    #[test]
    fn closed_form_independence_gap_matches_dense() {
        let inst = SkInstance::<f64>::generate(5, 17).unwrap();
        for t in [0.3, 1.0, 5.0] {
            let tgt = TargetDistribution::new(&inst, t).unwrap();
            let dense = spectral_gap(&build_transition_matrix(&tgt, &Kernel::uniform(5)).unwrap(), &tgt)
                .unwrap()
                .gap;
            assert!((dense - uniform_gap(&tgt)).abs() < 1e-10, "T={t}: {dense} vs {}", uniform_gap(&tgt));
        }
    }

    #[test]
    fn lanczos_local_gap_matches_dense() {
        let inst = SkInstance::<f64>::generate(7, 23).unwrap();
        for t in [0.7, 2.0] {
            let tgt = TargetDistribution::new(&inst, t).unwrap();
            let dense = spectral_gap(&build_transition_matrix(&tgt, &Kernel::local(7)).unwrap(), &tgt)
                .unwrap()
                .gap;
            let lz = local_gap_lanczos(&tgt).unwrap();
            assert!((dense - lz).abs() < 1e-9, "T={t}: {dense} vs {lz}");
        }
    }

    #[test]
    fn grid_and_budget_validation() {
        let s = TauSearch::default();
        let g = s.grid();
        assert_eq!(g.len(), 41);
        assert!((g[0] - 0.01).abs() < 1e-15 && g[40] == 1000.0);
        assert!((g[16] - 1.0).abs() < 1e-12);
        assert!(TauSearch { budget: 9, ..s }.validate().is_err());
        assert!(TauSearch { budget: 30, ..s }.validate().is_err());
        assert!(TauSearch { tau_max: 1e4, ..s }.validate().is_err());
        assert!(TauSearch { tau_min: 1e-3, ..s }.validate().is_err());
    }

    #[test]
    fn planted_single_peak_is_recovered() {
        let scan = optimize_tau(&TauSearch::default(), |t| Ok((-(t.ln()).powi(2)).exp())).unwrap();
        assert!((scan.tau_star - 1.0).abs() < 0.05);
        let off = optimize_tau(&TauSearch::default(), |t| Ok((-(t.ln() - 1.3).powi(2)).exp())).unwrap();
        assert!((off.tau_star / 1.3f64.exp() - 1.0).abs() < 0.05, "{}", off.tau_star);
        assert!(off.table.windows(2).all(|w| w[0].0 <= w[1].0));
        assert!(off.table.len() <= TauSearch::default().budget);
    }

    #[test]
    fn flat_objective_prefers_smallest_tau() {
        let scan = optimize_tau(&TauSearch::default(), |_| Ok(1.0)).unwrap();
        assert_eq!(scan.tau_star, 0.01);
    }
}
