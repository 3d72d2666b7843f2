//! Ensemble sweeps over instances, temperatures and kernels, with
//! aggregation, power-law fits and CSV output.
//!
//! Every task derives its randomness from the master seed and its own
//! coordinates, so results do not depend on scheduling or on the order in
//! which tasks are listed.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::chain::{self, EmpiricalCdf, ObservableSeries};
use crate::error::{QamcError, Result, ResultExt};
use crate::gibbs::TargetDistribution;
use crate::kernel::{Kernel, KernelKind};
use crate::qa;
use crate::rng::{self, purpose};
use crate::sk::{self, SkInstance, SpinConfig};
use crate::spectral::{self, GapMethod, TauSearch};

/// Threshold on `|Ē(t) - Ē_ex|` used for the crossing step.
pub const DEFAULT_CROSSING_THRESHOLD: f64 = 0.1;
/// A hard instance has at least this many states above [`HARD_STATE_MASS`].
pub const HARD_MIN_STATES: usize = 5;
pub const HARD_STATE_MASS: f64 = 0.1;
/// Candidates examined per requested hard instance before giving up.
pub const HARD_SCAN_FACTOR: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauMode {
    Fixed(f64),
    Optimize,
}

impl fmt::Display for TauMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TauMode::Fixed(v) => write!(f, "fixed:{v}"),
            TauMode::Optimize => f.write_str("optimize"),
        }
    }
}

impl FromStr for TauMode {
    type Err = QamcError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "optimize" {
            return Ok(TauMode::Optimize);
        }
        let v = s
            .strip_prefix("fixed:")
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| QamcError::Config(format!("tau mode '{s}' is neither 'optimize' nor 'fixed:<value>'")))?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(QamcError::Config(format!("fixed tau {v} must be finite and >= 0")));
        }
        Ok(TauMode::Fixed(v))
    }
}

/// Which generated instances enter an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InstanceSelection {
    #[default]
    All,
    /// Only instances whose target has at least [`HARD_MIN_STATES`] states
    /// with probability above [`HARD_STATE_MASS`].
    Hard,
}

impl fmt::Display for InstanceSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InstanceSelection::All => "all",
            InstanceSelection::Hard => "hard",
        })
    }
}

impl FromStr for InstanceSelection {
    type Err = QamcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all" => Ok(InstanceSelection::All),
            "hard" => Ok(InstanceSelection::Hard),
            other => Err(QamcError::Config(format!("instance selection '{other}' is neither 'all' nor 'hard'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub n_values: Vec<usize>,
    pub temperatures: Vec<f64>,
    pub instances_per_point: usize,
    pub kernels: Vec<KernelKind>,
    pub chain_steps: usize,
    pub chain_replicas: usize,
    pub master_seed: u64,
    pub tau: TauMode,
    pub tau_search: TauSearch,
    pub gap_method: GapMethod,
    pub selection: InstanceSelection,
    pub crossing_threshold: f64,
    pub run_gap: bool,
    pub run_convergence: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            n_values: vec![4, 6, 8, 10, 12],
            temperatures: vec![1.0],
            instances_per_point: 20,
            kernels: KernelKind::PAPER_KERNELS.to_vec(),
            chain_steps: 10_000,
            chain_replicas: 32,
            master_seed: 0,
            tau: TauMode::Optimize,
            tau_search: TauSearch::default(),
            gap_method: GapMethod::Auto,
            selection: InstanceSelection::All,
            crossing_threshold: DEFAULT_CROSSING_THRESHOLD,
            run_gap: true,
            run_convergence: true,
        }
    }
}

fn parse_list<T: FromStr>(value: &str, line: usize) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|v| {
            v.trim().parse::<T>().map_err(|_| QamcError::Parse {
                line,
                msg: format!("cannot parse list element '{}'", v.trim()),
            })
        })
        .collect()
}

fn parse_one<T: FromStr>(value: &str, line: usize) -> Result<T> {
    value.trim().parse::<T>().map_err(|_| QamcError::Parse {
        line,
        msg: format!("cannot parse value '{}'", value.trim()),
    })
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl EnsembleConfig {
    /// Parses flat `key = value` text. Unset keys keep their defaults; `#`
    /// starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = EnsembleConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| QamcError::Parse {
                line,
                msg: format!("expected 'key = value', got '{content}'"),
            })?;
            let value = value.trim();
            let at = |e: QamcError| match e {
                QamcError::Parse { .. } => e,
                other => QamcError::Parse {
                    line,
                    msg: other.to_string(),
                },
            };
            match key.trim() {
                "n_values" => cfg.n_values = parse_list(value, line)?,
                "temperatures" => cfg.temperatures = parse_list(value, line)?,
                "instances_per_point" => cfg.instances_per_point = parse_one(value, line)?,
                "kernels" => cfg.kernels = value.split(',').map(str::parse).collect::<Result<_>>().map_err(at)?,
                "chain_steps" => cfg.chain_steps = parse_one(value, line)?,
                "chain_replicas" => cfg.chain_replicas = parse_one(value, line)?,
                "master_seed" => cfg.master_seed = parse_one(value, line)?,
                "tau" => cfg.tau = value.parse().map_err(at)?,
                "tau_min" => cfg.tau_search.tau_min = parse_one(value, line)?,
                "tau_max" => cfg.tau_search.tau_max = parse_one(value, line)?,
                "tau_per_decade" => cfg.tau_search.per_decade = parse_one(value, line)?,
                "tau_budget" => cfg.tau_search.budget = parse_one(value, line)?,
                "tau_rel_tol" => cfg.tau_search.rel_tol = parse_one(value, line)?,
                "gap_method" => {
                    cfg.gap_method = match value {
                        "auto" => GapMethod::Auto,
                        "dense" => GapMethod::Dense,
                        other => {
                            return Err(QamcError::Parse {
                                line,
                                msg: format!("gap method '{other}' is neither 'auto' nor 'dense'"),
                            })
                        }
                    }
                }
                "instances" => cfg.selection = value.parse().map_err(at)?,
                "crossing_threshold" => cfg.crossing_threshold = parse_one(value, line)?,
                "sweeps" => {
                    let names: Vec<String> = parse_list(value, line)?;
                    cfg.run_gap = false;
                    cfg.run_convergence = false;
                    for name in names {
                        match name.as_str() {
                            "gap" => cfg.run_gap = true,
                            "convergence" => cfg.run_convergence = true,
                            other => {
                                return Err(QamcError::Parse {
                                    line,
                                    msg: format!("unknown sweep '{other}' (expected gap or convergence)"),
                                })
                            }
                        }
                    }
                }
                other => {
                    return Err(QamcError::Parse {
                        line,
                        msg: format!("unknown key '{other}'"),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; parsing it back yields an equal config.
    pub fn to_text(&self) -> String {
        let mut sweeps = Vec::new();
        if self.run_gap {
            sweeps.push("gap");
        }
        if self.run_convergence {
            sweeps.push("convergence");
        }
        let s = &self.tau_search;
        format!(
            "n_values = {}\ntemperatures = {}\ninstances_per_point = {}\nkernels = {}\nchain_steps = {}\n\
             chain_replicas = {}\nmaster_seed = {}\ntau = {}\ntau_min = {}\ntau_max = {}\ntau_per_decade = {}\n\
             tau_budget = {}\ntau_rel_tol = {}\ngap_method = {}\ninstances = {}\ncrossing_threshold = {}\nsweeps = {}\n",
            join(&self.n_values),
            join(&self.temperatures),
            self.instances_per_point,
            join(&self.kernels),
            self.chain_steps,
            self.chain_replicas,
            self.master_seed,
            self.tau,
            s.tau_min,
            s.tau_max,
            s.per_decade,
            s.budget,
            s.rel_tol,
            match self.gap_method {
                GapMethod::Auto => "auto",
                GapMethod::Dense => "dense",
            },
            self.selection,
            self.crossing_threshold,
            sweeps.join(","),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() || self.temperatures.is_empty() || self.kernels.is_empty() {
            return Err(QamcError::Config("n_values, temperatures and kernels must be non-empty".into()));
        }
        for &n in &self.n_values {
            sk::check_spin_count(n)?;
        }
        for &t in &self.temperatures {
            if !(t > 0.0) {
                return Err(QamcError::Config(format!("temperature {t} must be positive")));
            }
        }
        if self.instances_per_point == 0 || self.chain_steps == 0 || self.chain_replicas == 0 {
            return Err(QamcError::Config(
                "instances_per_point, chain_steps and chain_replicas must all be at least 1".into(),
            ));
        }
        if self.tau == TauMode::Optimize && self.kernels.contains(&KernelKind::Qa) {
            self.tau_search.validate()?;
        }
        if !(self.crossing_threshold > 0.0) {
            return Err(QamcError::Config("crossing_threshold must be positive".into()));
        }
        if !(self.run_gap || self.run_convergence) {
            return Err(QamcError::Config("no sweep selected".into()));
        }
        Ok(())
    }

    /// Seed of the `index`-th generated instance of size `n`. The same
    /// instances are used at every temperature.
    pub fn instance_seed(&self, n: usize, index: usize) -> u64 {
        rng::derive_seed(self.master_seed, &[purpose::INSTANCE, n as u64, index as u64])
    }
}

/// `(mean, population standard deviation)`.
pub fn aggregate(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(QamcError::Config("cannot aggregate an empty set of values".into()));
    }
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
    Ok((mean, var.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FitModel {
    /// `δ ~ 2^{-αN}`; the exponent is `α`.
    GapVsN,
    /// `TV ~ t^{-α}`; the exponent is `α`.
    TvVsSteps,
    /// `TV ~ 2^{γN}`; the exponent is `γ`.
    TvVsN,
}

impl FitModel {
    pub fn as_str(self) -> &'static str {
        match self {
            FitModel::GapVsN => "gap_vs_n",
            FitModel::TvVsSteps => "tv_vs_steps",
            FitModel::TvVsN => "tv_vs_n",
        }
    }
}

impl fmt::Display for FitModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FitModel {
    type Err = QamcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "gap_vs_n" => Ok(FitModel::GapVsN),
            "tv_vs_steps" => Ok(FitModel::TvVsSteps),
            "tv_vs_n" => Ok(FitModel::TvVsN),
            other => Err(QamcError::Config(format!(
                "unknown fit model '{other}' (expected gap_vs_n, tv_vs_steps or tv_vs_n)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub exponent: f64,
    pub std_error: f64,
    pub model: FitModel,
}

/// Ordinary least squares on the linearized model: `log2 y` against `N`
/// for the size models, `ln y` against `ln t` for the step model.
pub fn fit_power_law(points: &[(f64, f64)], model: FitModel) -> Result<FitResult> {
    if points.len() < 3 {
        return Err(QamcError::Config(format!(
            "a power-law fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if let Some((x, y)) = points.iter().find(|(_, y)| !(*y > 0.0)) {
        return Err(QamcError::Domain(format!("non-positive value {y} at x = {x} cannot be log-transformed")));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = match model {
        FitModel::GapVsN | FitModel::TvVsN => points.iter().map(|&(x, y)| (x, y.log2())).unzip(),
        FitModel::TvVsSteps => {
            if let Some((x, _)) = points.iter().find(|(x, _)| !(*x > 0.0)) {
                return Err(QamcError::Domain(format!("step {x} must be positive")));
            }
            points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip()
        }
    };
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(QamcError::Domain("all x values coincide".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let std_error = if points.len() > 2 { (rss / (m - 2.0) / sxx).sqrt() } else { 0.0 };
    let exponent = match model {
        FitModel::GapVsN | FitModel::TvVsSteps => -slope,
        FitModel::TvVsN => slope,
    };
    Ok(FitResult {
        exponent,
        std_error,
        model,
    })
}

/// True when at least [`HARD_MIN_STATES`] states carry more than
/// [`HARD_STATE_MASS`] of the target.
pub fn is_hard(target: &TargetDistribution<f64>) -> bool {
    target.probs().iter().filter(|&&p| p > HARD_STATE_MASS).count() >= HARD_MIN_STATES
}

/// One instance of an ensemble together with its exact target.
#[derive(Debug, Clone)]
pub struct Member {
    /// Position in the candidate sequence the instance was drawn from.
    pub index: usize,
    pub instance: SkInstance<f64>,
    pub energies: Vec<f64>,
    pub target: TargetDistribution<f64>,
}

/// The instances used at `(n, T)`.
pub fn ensemble_members(cfg: &EnsembleConfig, n: usize, temperature: f64) -> Result<Vec<Member>> {
    let make = |index: usize| -> Result<Member> {
        let instance = SkInstance::generate(n, cfg.instance_seed(n, index))?;
        let energies = instance.all_energies();
        let beta = crate::gibbs::beta_from_temperature(temperature)?;
        let target = TargetDistribution::from_energies(&energies, beta)?;
        Ok(Member {
            index,
            instance,
            energies,
            target,
        })
    };
    let members: Vec<Member> = match cfg.selection {
        InstanceSelection::All => (0..cfg.instances_per_point)
            .into_par_iter()
            .map(make)
            .collect::<Result<_>>()?,
        InstanceSelection::Hard => {
            let mut found = Vec::with_capacity(cfg.instances_per_point);
            let limit = cfg.instances_per_point * HARD_SCAN_FACTOR;
            let mut next = 0;
            while found.len() < cfg.instances_per_point {
                if next >= limit {
                    return Err(QamcError::Validation(format!(
                        "only {} of {} hard instances found among {limit} candidates at n={n}, T={temperature}",
                        found.len(),
                        cfg.instances_per_point
                    )));
                }
                let batch: Vec<Member> = (next..next + 256)
                    .into_par_iter()
                    .map(make)
                    .collect::<Result<Vec<_>>>()?;
                next += 256;
                found.extend(batch.into_iter().filter(|m| is_hard(&m.target)));
            }
            found.truncate(cfg.instances_per_point);
            found
        }
    };
    let mut seeds: Vec<u64> = members.iter().map(|m| m.instance.seed()).collect();
    seeds.sort_unstable();
    seeds.dedup();
    if seeds.len() != members.len() {
        return Err(QamcError::Consistency(format!("derived instance seeds collide at n={n}")));
    }
    Ok(members)
}

/// The QA proposal for `member` under `mode`, with the τ used.
pub fn qa_kernel_for(
    member: &Member,
    mode: TauMode,
    search: &TauSearch,
    method: GapMethod,
) -> Result<(f64, Option<spectral::TauScan>, Kernel<f64>)> {
    let (tau, scan) = match mode {
        TauMode::Fixed(t) => (t, None),
        TauMode::Optimize => {
            let scan = spectral::optimize_qa_tau(&member.instance, &member.target, search, method)?;
            (scan.tau_star, Some(scan))
        }
    };
    let spec = qa::AnnealSpec::new(tau)?;
    let (state, _) = qa::evolve_energies(&member.energies, member.instance.n(), &spec)?;
    let q = qa::born_distribution(&state, qa::DEFAULT_BORN_FLOOR);
    Ok((tau, scan, Kernel::qa(q)))
}

fn classical_kernel(kind: KernelKind, member: &Member) -> Kernel<f64> {
    let n = member.instance.n();
    match kind {
        KernelKind::Local => Kernel::local(n),
        KernelKind::Uniform => Kernel::uniform(n),
        KernelKind::Exact => Kernel::exact(&member.target),
        KernelKind::Qa => unreachable!("QA kernels are built by qa_kernel_for"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapRow {
    pub n: usize,
    pub temperature: f64,
    pub kernel: KernelKind,
    pub instance: String,
    pub tau_star: Option<f64>,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapSummary {
    pub n: usize,
    pub temperature: f64,
    pub kernel: KernelKind,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GapSweep {
    pub rows: Vec<GapRow>,
    pub summary: Vec<GapSummary>,
}

fn member_gaps(cfg: &EnsembleConfig, n: usize, temperature: f64, member: &Member) -> Result<Vec<GapRow>> {
    let id = member.instance.instance_id();
    cfg.kernels
        .iter()
        .map(|&kind| {
            let (tau_star, gap) = match kind {
                KernelKind::Qa => {
                    let (tau, scan, kernel) = qa_kernel_for(member, cfg.tau, &cfg.tau_search, cfg.gap_method)?;
                    let gap = match scan {
                        Some(s) => s.gap_star,
                        None => spectral::kernel_gap(&member.target, &kernel, cfg.gap_method)?,
                    };
                    (Some(tau), gap)
                }
                other => (
                    None,
                    spectral::kernel_gap(&member.target, &classical_kernel(other, member), cfg.gap_method)?,
                ),
            };
            Ok(GapRow {
                n,
                temperature,
                kernel: kind,
                instance: id.clone(),
                tau_star,
                gap,
            })
        })
        .collect::<Result<Vec<_>>>()
        .with_context(|| format!("n={n}, T={temperature}, instance {id}"))
}

/// Spectral gaps for every `(n, T, instance, kernel)` of the config.
pub fn run_gap_sweep(cfg: &EnsembleConfig) -> Result<GapSweep> {
    cfg.validate()?;
    let mut sweep = GapSweep::default();
    for &n in &cfg.n_values {
        for &temperature in &cfg.temperatures {
            let members = ensemble_members(cfg, n, temperature)?;
            let rows: Vec<Vec<GapRow>> = members
                .par_iter()
                .map(|m| member_gaps(cfg, n, temperature, m))
                .collect::<Result<_>>()?;
            let rows: Vec<GapRow> = rows.into_iter().flatten().collect();
            for &kernel in &cfg.kernels {
                let gaps: Vec<f64> = rows.iter().filter(|r| r.kernel == kernel).map(|r| r.gap).collect();
                let (mean, std) = aggregate(&gaps)?;
                sweep.summary.push(GapSummary {
                    n,
                    temperature,
                    kernel,
                    mean,
                    std,
                    count: gaps.len(),
                });
            }
            sweep.rows.extend(rows);
        }
    }
    Ok(sweep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TauBin {
    pub n: usize,
    pub temperature: f64,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

pub const TAU_BINS_PER_DECADE: usize = 4;

/// Histogram of optimized τ on log-spaced bins spanning the search range.
pub fn tau_histogram(sweep: &GapSweep, search: &TauSearch) -> Vec<TauBin> {
    let (a, b) = (search.tau_min.log10(), search.tau_max.log10());
    let bins = (((b - a) * TAU_BINS_PER_DECADE as f64).ceil() as usize).max(1);
    let edge = |k: usize| 10f64.powf(a + (b - a) * k as f64 / bins as f64);
    let mut points: Vec<(usize, f64)> = Vec::new();
    for r in &sweep.rows {
        if r.tau_star.is_some() && !points.iter().any(|&(n, t)| n == r.n && t == r.temperature) {
            points.push((r.n, r.temperature));
        }
    }
    let mut out = Vec::new();
    for (n, temperature) in points {
        let mut counts = vec![0usize; bins];
        for r in sweep.rows.iter().filter(|r| r.n == n && r.temperature == temperature) {
            if let Some(t) = r.tau_star {
                let k = ((t.log10() - a) / (b - a) * bins as f64).floor();
                counts[(k.max(0.0) as usize).min(bins - 1)] += 1;
            }
        }
        for (k, count) in counts.into_iter().enumerate() {
            out.push(TauBin {
                n,
                temperature,
                lo: edge(k),
                hi: edge(k + 1),
                count,
            });
        }
    }
    out
}

/// Per-replica observables at the checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaRecord {
    pub seed: u64,
    pub initial: SpinConfig,
    pub running_mean: Vec<f64>,
    pub abs_err: Vec<f64>,
    pub tv: Vec<f64>,
    pub acceptance: f64,
}

/// Outcome of independent replica chains on one instance with one kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaSet {
    pub kernel: KernelKind,
    pub steps: usize,
    pub checkpoints: Vec<usize>,
    pub exact_mean_energy: f64,
    pub replicas: Vec<ReplicaRecord>,
    /// Settling step of the replica-mean `|Ē(t) - Ē_ex|` curve.
    pub crossing_step: Option<usize>,
    /// Pooled Hamming-distance counts of proposals, `d = 0..=n`.
    pub hamming_counts: Vec<usize>,
    /// Pooled `|E(proposed) - E(current)|` over all proposals.
    pub delta_e: EmpiricalCdf<f64>,
}

impl ReplicaSet {
    pub fn mean_acceptance(&self) -> f64 {
        self.replicas.iter().map(|r| r.acceptance).sum::<f64>() / self.replicas.len() as f64
    }

    /// Replica mean of a per-checkpoint series.
    pub fn mean_at_checkpoints(&self, pick: impl Fn(&ReplicaRecord) -> &[f64]) -> Vec<f64> {
        let m = self.replicas.len() as f64;
        (0..self.checkpoints.len())
            .map(|k| self.replicas.iter().map(|r| pick(r)[k]).sum::<f64>() / m)
            .collect()
    }

    pub fn final_tv(&self) -> f64 {
        *self.mean_at_checkpoints(|r| &r.tv).last().unwrap()
    }

    pub fn final_abs_err(&self) -> f64 {
        *self.mean_at_checkpoints(|r| &r.abs_err).last().unwrap()
    }

    pub fn hamming_cumulative(&self) -> Vec<f64> {
        let total = self.hamming_counts.iter().sum();
        chain::cumulate(&self.hamming_counts, total)
    }
}

struct ReplicaOutcome {
    record: ReplicaRecord,
    abs_error: Vec<f64>,
    hamming: Vec<usize>,
    delta_e: Vec<f64>,
}

/// Seed of replica `replica` of `kernel` on the instance seeded `instance_seed`.
pub fn replica_seed(instance_seed: u64, temperature: f64, kernel: KernelKind, replica: usize) -> u64 {
    rng::derive_seed(
        instance_seed,
        &[purpose::CHAIN, temperature.to_bits(), kernel.code(), replica as u64],
    )
}

/// Runs `replicas` independent chains, each from a uniformly random
/// initial state, and pools their diagnostics.
#[allow(clippy::too_many_arguments)]
pub fn run_replicas(
    energies: &[f64],
    target: &TargetDistribution<f64>,
    kernel: &Kernel<f64>,
    steps: usize,
    replicas: usize,
    seed_of: impl Fn(usize) -> u64 + Sync,
    threshold: f64,
) -> Result<ReplicaSet> {
    if replicas == 0 {
        return Err(QamcError::Config("at least one replica is required".into()));
    }
    let n = target.n();
    let marks = chain::checkpoints(steps);
    let outcomes: Vec<ReplicaOutcome> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let seed = seed_of(r);
            let init = {
                use rand::Rng;
                SpinConfig::new(rng::stream(seed, purpose::INIT_STATE).random_range(0..target.dim()))
            };
            let mut chain_rng = rng::stream(seed, purpose::CHAIN);
            let trace = chain::run_chain(target, kernel, steps, init, &mut chain_rng, seed)?;
            let obs = ObservableSeries::from_trace(&trace, energies, target)?;
            let mut hamming = vec![0usize; n + 1];
            let mut delta_e = Vec::with_capacity(steps);
            for p in &trace.proposals {
                hamming[p.from.hamming(p.proposed) as usize] += 1;
                delta_e.push((energies[p.proposed.index()] - energies[p.from.index()]).abs());
            }
            Ok(ReplicaOutcome {
                record: ReplicaRecord {
                    seed,
                    initial: init,
                    running_mean: marks.iter().map(|&t| obs.running_mean_energy[t - 1]).collect(),
                    abs_err: marks.iter().map(|&t| obs.abs_error[t - 1]).collect(),
                    tv: obs.tv_to_target.iter().map(|&(_, d)| d).collect(),
                    acceptance: obs.acceptance_rate,
                },
                abs_error: obs.abs_error,
                hamming,
                delta_e,
            })
        })
        .collect::<Result<_>>()?;

    let mut mean_curve = vec![0.0; steps];
    let mut hamming_counts = vec![0usize; n + 1];
    let mut delta_e = Vec::with_capacity(steps * replicas);
    let mut records = Vec::with_capacity(replicas);
    for o in outcomes {
        mean_curve.iter_mut().zip(&o.abs_error).for_each(|(m, e)| *m += e);
        hamming_counts.iter_mut().zip(&o.hamming).for_each(|(a, b)| *a += b);
        delta_e.extend(o.delta_e);
        records.push(o.record);
    }
    mean_curve.iter_mut().for_each(|m| *m /= replicas as f64);
    Ok(ReplicaSet {
        kernel: kernel.kind(),
        steps,
        checkpoints: marks,
        exact_mean_energy: target.mean_energy(energies)?,
        replicas: records,
        crossing_step: chain::crossing_step(&mean_curve, threshold),
        hamming_counts,
        delta_e: EmpiricalCdf::from_samples(delta_e)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRecord {
    pub n: usize,
    pub temperature: f64,
    pub instance: String,
    pub tau: Option<f64>,
    pub set: ReplicaSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceSummary {
    pub n: usize,
    pub temperature: f64,
    pub kernel: KernelKind,
    /// Mean crossing step over instances; an instance that never crosses
    /// counts as the full chain length.
    pub mean_crossing_step: f64,
    pub uncrossed: usize,
    pub final_tv: (f64, f64),
    pub final_abs_err: (f64, f64),
    pub acceptance: f64,
    pub median_delta_e: f64,
    /// Ensemble-mean TV at each checkpoint.
    pub tv_curve: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceSweep {
    pub records: Vec<ConvergenceRecord>,
    pub summary: Vec<ConvergenceSummary>,
}

/// Replica chains for every `(n, T, instance, kernel)` of the config.
pub fn run_convergence_sweep(cfg: &EnsembleConfig) -> Result<ConvergenceSweep> {
    cfg.validate()?;
    let mut sweep = ConvergenceSweep::default();
    for &n in &cfg.n_values {
        for &temperature in &cfg.temperatures {
            let members = ensemble_members(cfg, n, temperature)?;
            let qa_kernels: Vec<Option<(f64, Kernel<f64>)>> = members
                .par_iter()
                .map(|m| {
                    if cfg.kernels.contains(&KernelKind::Qa) {
                        qa_kernel_for(m, cfg.tau, &cfg.tau_search, cfg.gap_method)
                            .map(|(tau, _, k)| Some((tau, k)))
                            .with_context(|| format!("n={n}, T={temperature}, instance {}", m.instance.instance_id()))
                    } else {
                        Ok(None)
                    }
                })
                .collect::<Result<_>>()?;
            let mut records = Vec::new();
            for (member, qa_kernel) in members.iter().zip(&qa_kernels) {
                let id = member.instance.instance_id();
                for &kind in &cfg.kernels {
                    let (tau, kernel) = match kind {
                        KernelKind::Qa => {
                            let (tau, k) = qa_kernel.as_ref().expect("built above");
                            (Some(*tau), k.clone())
                        }
                        other => (None, classical_kernel(other, member)),
                    };
                    let seed = member.instance.seed();
                    let set = run_replicas(
                        &member.energies,
                        &member.target,
                        &kernel,
                        cfg.chain_steps,
                        cfg.chain_replicas,
                        |r| replica_seed(seed, temperature, kind, r),
                        cfg.crossing_threshold,
                    )
                    .with_context(|| format!("n={n}, T={temperature}, instance {id}, kernel {kind}"))?;
                    records.push(ConvergenceRecord {
                        n,
                        temperature,
                        instance: id.clone(),
                        tau,
                        set,
                    });
                }
            }
            for &kind in &cfg.kernels {
                let sets: Vec<&ReplicaSet> = records.iter().map(|r| &r.set).filter(|s| s.kernel == kind).collect();
                sweep.summary.push(summarize(n, temperature, kind, &sets)?);
            }
            sweep.records.extend(records);
        }
    }
    Ok(sweep)
}

fn summarize(n: usize, temperature: f64, kernel: KernelKind, sets: &[&ReplicaSet]) -> Result<ConvergenceSummary> {
    let steps = sets.first().map(|s| s.steps).unwrap_or(0);
    let crossing: Vec<f64> = sets
        .iter()
        .map(|s| s.crossing_step.unwrap_or(s.steps) as f64)
        .collect();
    let tvs: Vec<f64> = sets.iter().map(|s| s.final_tv()).collect();
    let errs: Vec<f64> = sets.iter().map(|s| s.final_abs_err()).collect();
    let acc: Vec<f64> = sets.iter().map(|s| s.mean_acceptance()).collect();
    let med: Vec<f64> = sets.iter().map(|s| s.delta_e.median()).collect();
    let marks = chain::checkpoints(steps);
    let curves: Vec<Vec<f64>> = sets.iter().map(|s| s.mean_at_checkpoints(|r| &r.tv)).collect();
    let tv_curve = marks
        .iter()
        .enumerate()
        .map(|(k, &t)| (t, curves.iter().map(|c| c[k]).sum::<f64>() / curves.len() as f64))
        .collect();
    Ok(ConvergenceSummary {
        n,
        temperature,
        kernel,
        mean_crossing_step: aggregate(&crossing)?.0,
        uncrossed: sets.iter().filter(|s| s.crossing_step.is_none()).count(),
        final_tv: aggregate(&tvs)?,
        final_abs_err: aggregate(&errs)?,
        acceptance: aggregate(&acc)?.0,
        median_delta_e: aggregate(&med)?.0,
        tv_curve,
    })
}

/// A fit together with the label written in the `model` column of `fits.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFit {
    pub label: String,
    /// Empty for series that are not tied to a kernel.
    pub kernel: Option<KernelKind>,
    pub fit: FitResult,
}

/// Checkpoints below this step are transient and left out of step fits.
pub const TV_FIT_MIN_STEP: usize = 10;

/// Every fit the sweep data supports. Series with fewer than three points
/// are skipped.
pub fn sweep_fits(gap: Option<&GapSweep>, conv: Option<&ConvergenceSweep>) -> Result<Vec<LabeledFit>> {
    let mut fits = Vec::new();
    if let Some(g) = gap {
        let temps = distinct(g.summary.iter().map(|s| s.temperature));
        let kernels = distinct(g.summary.iter().map(|s| s.kernel));
        for &t in &temps {
            for &k in &kernels {
                let pts: Vec<(f64, f64)> = g
                    .summary
                    .iter()
                    .filter(|s| s.temperature == t && s.kernel == k)
                    .map(|s| (s.n as f64, s.mean))
                    .collect();
                if pts.len() >= 3 {
                    let label = if temps.len() > 1 {
                        format!("gap_vs_n@T={t}")
                    } else {
                        "gap_vs_n".into()
                    };
                    fits.push(LabeledFit {
                        label,
                        kernel: Some(k),
                        fit: fit_power_law(&pts, FitModel::GapVsN)?,
                    });
                }
            }
        }
    }
    if let Some(c) = conv {
        let temps = distinct(c.summary.iter().map(|s| s.temperature));
        let ns = distinct(c.summary.iter().map(|s| s.n));
        let kernels = distinct(c.summary.iter().map(|s| s.kernel));
        for s in &c.summary {
            let pts: Vec<(f64, f64)> = s
                .tv_curve
                .iter()
                .filter(|(t, _)| *t >= TV_FIT_MIN_STEP)
                .map(|&(t, d)| (t as f64, d))
                .collect();
            if pts.len() >= 3 && pts.iter().all(|p| p.1 > 0.0) {
                let label = if temps.len() > 1 || ns.len() > 1 {
                    format!("tv_vs_steps@n={};T={}", s.n, s.temperature)
                } else {
                    "tv_vs_steps".into()
                };
                fits.push(LabeledFit {
                    label,
                    kernel: Some(s.kernel),
                    fit: fit_power_law(&pts, FitModel::TvVsSteps)?,
                });
            }
        }
        for &t in &temps {
            for &k in &kernels {
                let pts: Vec<(f64, f64)> = c
                    .summary
                    .iter()
                    .filter(|s| s.temperature == t && s.kernel == k)
                    .map(|s| (s.n as f64, s.final_tv.0))
                    .collect();
                if pts.len() >= 3 && pts.iter().all(|p| p.1 > 0.0) {
                    let label = if temps.len() > 1 {
                        format!("tv_vs_n@T={t}")
                    } else {
                        "tv_vs_n".into()
                    };
                    fits.push(LabeledFit {
                        label,
                        kernel: Some(k),
                        fit: fit_power_law(&pts, FitModel::TvVsN)?,
                    });
                }
            }
        }
    }
    Ok(fits)
}

fn distinct<T: PartialEq + Copy>(it: impl Iterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for x in it {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

pub fn gap_sweep_csv(sweep: &GapSweep) -> String {
    let mut s = String::from("n,T,kernel,instance,tau_star,gap\n");
    for r in &sweep.rows {
        let tau = r.tau_star.map(|t| t.to_string()).unwrap_or_default();
        writeln!(s, "{},{},{},{},{tau},{}", r.n, r.temperature, r.kernel, r.instance, r.gap).unwrap();
    }
    s
}

pub fn tau_hist_csv(bins: &[TauBin]) -> String {
    let mut s = String::from("n,T,tau_lo,tau_hi,count\n");
    for b in bins {
        writeln!(s, "{},{},{},{},{}", b.n, b.temperature, b.lo, b.hi, b.count).unwrap();
    }
    s
}

pub fn convergence_csv(sweep: &ConvergenceSweep) -> String {
    let mut s = String::from("n,T,instance,kernel,replica,checkpoint,abs_err,tv\n");
    for rec in &sweep.records {
        for (r, rep) in rec.set.replicas.iter().enumerate() {
            for (k, &t) in rec.set.checkpoints.iter().enumerate() {
                writeln!(
                    s,
                    "{},{},{},{},{r},{t},{},{}",
                    rec.n, rec.temperature, rec.instance, rec.set.kernel, rep.abs_err[k], rep.tv[k]
                )
                .unwrap();
            }
        }
    }
    s
}

pub fn fits_csv(fits: &[LabeledFit]) -> String {
    let mut s = String::from("model,kernel,exponent,std_error\n");
    for f in fits {
        let kernel = f.kernel.map(KernelKind::as_str).unwrap_or_default();
        writeln!(s, "{},{kernel},{},{}", f.label, f.fit.exponent, f.fit.std_error).unwrap();
    }
    s
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepOutput {
    pub gap: Option<GapSweep>,
    pub convergence: Option<ConvergenceSweep>,
    pub fits: Vec<LabeledFit>,
}

pub const GAP_SWEEP_FILE: &str = "gap_sweep.csv";
pub const TAU_HIST_FILE: &str = "tau_hist.csv";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const FITS_FILE: &str = "fits.csv";

/// Runs the selected sweeps and writes the four CSV files into `out_dir`.
/// A sweep that is switched off still gets a header-only file.
pub fn run_sweep(cfg: &EnsembleConfig, out_dir: &Path) -> Result<SweepOutput> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let gap = if cfg.run_gap { Some(run_gap_sweep(cfg)?) } else { None };
    let bins = gap.as_ref().map(|g| tau_histogram(g, &cfg.tau_search)).unwrap_or_default();
    fs::write(out_dir.join(GAP_SWEEP_FILE), gap_sweep_csv(gap.as_ref().unwrap_or(&GapSweep::default())))?;
    fs::write(out_dir.join(TAU_HIST_FILE), tau_hist_csv(&bins))?;
    let convergence = if cfg.run_convergence {
        Some(run_convergence_sweep(cfg)?)
    } else {
        None
    };
    fs::write(
        out_dir.join(CONVERGENCE_FILE),
        convergence_csv(convergence.as_ref().unwrap_or(&ConvergenceSweep::default())),
    )?;
    let fits = sweep_fits(gap.as_ref(), convergence.as_ref())?;
    fs::write(out_dir.join(FITS_FILE), fits_csv(&fits))?;
    Ok(SweepOutput {
        gap,
        convergence,
        fits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(&[4.5]).unwrap(), (4.5, 0.0));
        assert_eq!(aggregate(&[1.0, 3.0]).unwrap(), (2.0, 1.0));
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn planted_slopes_are_recovered() {
        let pts: Vec<(f64, f64)> = (4..=12).step_by(2).map(|n| (n as f64, 2f64.powf(-0.5 * n as f64))).collect();
        let f = fit_power_law(&pts, FitModel::GapVsN).unwrap();
        assert!((f.exponent - 0.5).abs() < 1e-10);
        assert!(f.std_error < 1e-10);

        let pts: Vec<(f64, f64)> = [10.0, 100.0, 1000.0, 1e4].iter().map(|&t| (t, 1.0 / t)).collect();
        let f = fit_power_law(&pts, FitModel::TvVsSteps).unwrap();
        assert!((f.exponent - 1.0).abs() < 1e-10);

        let pts: Vec<(f64, f64)> = (4..=8).map(|n| (n as f64, 2f64.powf(0.3 * n as f64))).collect();
        assert!((fit_power_law(&pts, FitModel::TvVsN).unwrap().exponent - 0.3).abs() < 1e-10);
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(matches!(
            fit_power_law(&[(1.0, 1.0), (2.0, 0.5)], FitModel::GapVsN),
            Err(QamcError::Config(_))
        ));
        assert!(matches!(
            fit_power_law(&[(1.0, 1.0), (2.0, 0.0), (3.0, 0.1)], FitModel::GapVsN),
            Err(QamcError::Domain(_))
        ));
    }

    #[test]
    fn config_text_round_trips() {
        let mut cfg = EnsembleConfig::default();
        cfg.tau = TauMode::Fixed(0.01);
        cfg.temperatures = vec![0.1, 1.0, 100.0];
        cfg.selection = InstanceSelection::Hard;
        cfg.run_gap = false;
        assert_eq!(EnsembleConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn config_errors_carry_line_numbers() {
        let err = EnsembleConfig::from_text("n_values = 4\n\nkernels = local,metropolis\n").unwrap_err();
        assert!(matches!(err, QamcError::Parse { line: 3, .. }), "{err}");
        let err = EnsembleConfig::from_text("bogus = 1").unwrap_err();
        assert!(matches!(err, QamcError::Parse { line: 1, .. }));
        assert!(EnsembleConfig::from_text("n_values = 20").is_err());
        assert!(EnsembleConfig::from_text("chain_replicas = 0").is_err());
    }

    #[test]
    fn tau_modes_parse() {
        assert_eq!("optimize".parse::<TauMode>().unwrap(), TauMode::Optimize);
        assert_eq!("fixed:0.01".parse::<TauMode>().unwrap(), TauMode::Fixed(0.01));
        assert!("fixed:".parse::<TauMode>().is_err());
        assert!("fixed:-1".parse::<TauMode>().is_err());
    }

    #[test]
    fn instance_seeds_are_distinct() {
        let cfg = EnsembleConfig::default();
        let mut seeds: Vec<u64> = cfg
            .n_values
            .iter()
            .flat_map(|&n| (0..1000).map(move |i| (n, i)))
            .map(|(n, i)| cfg.instance_seed(n, i))
            .collect();
        let len = seeds.len();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), len);
    }

    #[test]
    fn hard_members_satisfy_the_criterion() {
        let cfg = EnsembleConfig {
            instances_per_point: 2,
            selection: InstanceSelection::Hard,
            ..EnsembleConfig::default()
        };
        let members = ensemble_members(&cfg, 10, 1.0).unwrap();
        assert_eq!(members.len(), 2);
        assert!(members.iter().all(|m| is_hard(&m.target)));
        assert!(members[0].index < members[1].index);
    }
}
