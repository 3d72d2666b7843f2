use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qamc::chain::EmpiricalCdf;
use qamc::harness::{self, EnsembleConfig, FitModel, TauMode};
use qamc::rng::{self, purpose};
use qamc::sk;
use qamc::spectral::{self, GapMethod, TauSearch};
use qamc::{Kernel, KernelKind, QamcError, SkInstance, TargetDistribution};

mod fit;
mod svg;

#[derive(Parser, Debug)]
#[command(name = "qamc", version, about = "Exact MCMC experiments with quantum-annealing proposals on SK spin glasses")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "QAMC_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate random SK instances.
    Gen(GenArgs),
    /// Spectral gap and mixing bounds of one kernel on one instance.
    Gap(GapArgs),
    /// Run replica chains and write convergence diagnostics.
    Run(RunArgs),
    /// Run an ensemble sweep described by a config file.
    Sweep(SweepArgs),
    /// Fit power laws to sweep output.
    Fit(FitArgs),
}

fn parse_spin_count(s: &str) -> Result<usize, String> {
    let n: usize = s.parse().map_err(|_| format!("'{s}' is not a spin count"))?;
    sk::check_spin_count(n).map_err(|e| e.to_string())?;
    Ok(n)
}

fn parse_tau(s: &str) -> Result<TauMode, String> {
    s.parse().map_err(|e: QamcError| e.to_string())
}

fn parse_kernel(s: &str) -> Result<KernelKind, String> {
    s.parse().map_err(|e: QamcError| e.to_string())
}

fn parse_method(s: &str) -> Result<GapMethod, String> {
    match s {
        "auto" => Ok(GapMethod::Auto),
        "dense" => Ok(GapMethod::Dense),
        other => Err(format!("'{other}' is neither 'auto' nor 'dense'")),
    }
}

fn parse_temperature(s: &str) -> Result<f64, String> {
    let t: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if t > 0.0 {
        Ok(t)
    } else {
        Err(format!("temperature {t} must be positive"))
    }
}

fn parse_positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(format!("'{s}' is not a positive integer")),
    }
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, value_parser = parse_spin_count)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1, value_parser = parse_positive)]
    count: usize,
    #[arg(long, default_value = "instances")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TauArgs {
    /// `optimize` or `fixed:<tau>`; only used by the qa kernel.
    #[arg(long, default_value = "optimize", value_parser = parse_tau)]
    tau: TauMode,
    #[arg(long, default_value_t = spectral::TAU_LOWER_LIMIT)]
    tau_min: f64,
    #[arg(long, default_value_t = spectral::TAU_UPPER_LIMIT)]
    tau_max: f64,
    #[arg(long, default_value_t = 60)]
    tau_budget: usize,
    /// `auto` or `dense`.
    #[arg(long, default_value = "auto", value_parser = parse_method)]
    method: GapMethod,
}

impl TauArgs {
    fn search(&self) -> TauSearch {
        TauSearch {
            tau_min: self.tau_min,
            tau_max: self.tau_max,
            budget: self.tau_budget,
            ..TauSearch::default()
        }
    }
}

#[derive(Args, Debug)]
struct GapArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, value_parser = parse_temperature)]
    temp: f64,
    #[arg(long, value_parser = parse_kernel)]
    kernel: KernelKind,
    #[command(flatten)]
    tau: TauArgs,
    #[arg(long, default_value_t = 0.01)]
    eps: f64,
    #[arg(long, default_value = "gap-out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, value_parser = parse_temperature)]
    temp: f64,
    #[arg(long, value_parser = parse_kernel)]
    kernel: KernelKind,
    #[arg(long, default_value_t = 100_000, value_parser = parse_positive)]
    steps: usize,
    #[arg(long, default_value_t = 32, value_parser = parse_positive)]
    replicas: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    tau: TauArgs,
    #[arg(long, default_value_t = harness::DEFAULT_CROSSING_THRESHOLD)]
    threshold: f64,
    /// Also write SVG line plots.
    #[arg(long)]
    plot: bool,
    #[arg(long, default_value = "run-out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "sweep-out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// `gap_sweep.csv`, `convergence.csv` or a plain `x,y` table.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_parser = |s: &str| s.parse::<FitModel>().map_err(|e| e.to_string()))]
    model: FitModel,
    #[arg(long, default_value = "fit-out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot start {threads} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(&cli, a),
        Command::Gap(a) => cmd_gap(&cli, a),
        Command::Run(a) => cmd_run(&cli, a),
        Command::Sweep(a) => cmd_sweep(&cli, a),
        Command::Fit(a) => cmd_fit(&cli, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

type CmdResult = Result<(), QamcError>;

/// Records everything needed to replay the run. Written before any work.
fn write_manifest(cli: &Cli, out: &Path, name: &str, seed: Option<u64>, extra: &str) -> CmdResult {
    fs::create_dir_all(out)?;
    let mut s = String::new();
    writeln!(s, "command = {name}").unwrap();
    writeln!(s, "version = {}", env!("CARGO_PKG_VERSION")).unwrap();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    writeln!(s, "argv = {}", argv.join(" ")).unwrap();
    writeln!(s, "flags = {:?}", cli.command).unwrap();
    if let Some(seed) = seed {
        writeln!(s, "master_seed = {seed}").unwrap();
    }
    if let Some(t) = cli.threads {
        writeln!(s, "threads = {t}").unwrap();
    }
    writeln!(s, "out = {}", out.display()).unwrap();
    s.push_str(extra);
    fs::write(out.join("manifest.txt"), s)?;
    Ok(())
}

fn cmd_gen(cli: &Cli, a: &GenArgs) -> CmdResult {
    write_manifest(cli, &a.out, "gen", Some(a.seed), "")?;
    let cfg = EnsembleConfig {
        master_seed: a.seed,
        ..EnsembleConfig::default()
    };
    for k in 0..a.count {
        let inst = SkInstance::generate(a.n, cfg.instance_seed(a.n, k))?;
        let path = a.out.join(format!("{}.txt", inst.instance_id()));
        inst.save(&path)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn load(path: &Path) -> Result<SkInstance, QamcError> {
    SkInstance::load(path).map_err(|e| e.context(format!("reading instance {}", path.display())))
}

/// The kernel to use plus the τ it was built with, writing `scan.csv` when τ is optimized.
fn build_kernel(
    kind: KernelKind,
    inst: &SkInstance,
    target: &TargetDistribution,
    tau: &TauArgs,
    out: &Path,
) -> Result<(Kernel, Option<f64>), QamcError> {
    let n = inst.n();
    Ok(match kind {
        KernelKind::Local => (Kernel::local(n), None),
        KernelKind::Uniform => (Kernel::uniform(n), None),
        KernelKind::Exact => (Kernel::exact(target), None),
        KernelKind::Qa => {
            let member = harness::Member {
                index: 0,
                instance: inst.clone(),
                energies: inst.all_energies(),
                target: target.clone(),
            };
            let (t, scan, kernel) = harness::qa_kernel_for(&member, tau.tau, &tau.search(), tau.method)?;
            if let Some(scan) = scan {
                fs::write(out.join("scan.csv"), scan.to_csv())?;
            }
            (kernel, Some(t))
        }
    })
}

fn cmd_gap(cli: &Cli, a: &GapArgs) -> CmdResult {
    write_manifest(cli, &a.out, "gap", None, "")?;
    let inst = load(&a.instance)?;
    let target = TargetDistribution::new(&inst, a.temp)?;
    let (kernel, tau) = build_kernel(a.kernel, &inst, &target, &a.tau, &a.out)?;
    let gap = spectral::kernel_gap(&target, &kernel, a.tau.method).map_err(|e| e.context("spectral gap"))?;
    let (lower, upper) = match spectral::mixing_bounds(gap, a.eps, target.min_probability()) {
        Ok(b) => (b.lower, b.upper),
        Err(QamcError::NonMixing) => (f64::INFINITY, f64::INFINITY),
        Err(e) => return Err(e),
    };
    let mut report = String::from("kernel,temperature,n,gap,lambda2,mix_lower,mix_upper\n");
    writeln!(
        report,
        "{},{},{},{gap},{},{lower},{upper}",
        a.kernel,
        a.temp,
        inst.n(),
        1.0 - gap
    )
    .unwrap();
    fs::write(a.out.join("report.csv"), &report)?;
    if let Some(t) = tau {
        println!("tau = {t}");
    }
    print!("{report}");
    Ok(())
}

/// At most `rows` points of an empirical CDF, spread evenly by rank.
fn thin_cdf(cdf: &EmpiricalCdf<f64>, rows: usize) -> Vec<(f64, f64)> {
    let len = cdf.support.len();
    if len <= rows {
        return cdf.support.iter().copied().zip(cdf.cdf.iter().copied()).collect();
    }
    let mut picks: Vec<usize> = (0..rows).map(|k| k * (len - 1) / (rows - 1)).collect();
    picks.dedup();
    picks.into_iter().map(|k| (cdf.support[k], cdf.cdf[k])).collect()
}

fn cmd_run(cli: &Cli, a: &RunArgs) -> CmdResult {
    write_manifest(cli, &a.out, "run", Some(a.seed), "")?;
    let inst = load(&a.instance)?;
    let target = TargetDistribution::new(&inst, a.temp)?;
    let energies = inst.all_energies();
    let (kernel, tau) = build_kernel(a.kernel, &inst, &target, &a.tau, &a.out)?;
    if let Some(q) = kernel.independent_proposal() {
        fs::write(a.out.join("proposal.csv"), q.to_csv())?;
    }
    let code = a.kernel.code();
    let set = harness::run_replicas(
        &energies,
        &target,
        &kernel,
        a.steps,
        a.replicas,
        |r| rng::derive_seed(a.seed, &[purpose::CHAIN, code, r as u64]),
        a.threshold,
    )?;

    let mut conv = String::from("replica,checkpoint,energy_running_mean,abs_err,tv\n");
    for (r, rep) in set.replicas.iter().enumerate() {
        for (k, t) in set.checkpoints.iter().enumerate() {
            writeln!(conv, "{r},{t},{},{},{}", rep.running_mean[k], rep.abs_err[k], rep.tv[k]).unwrap();
        }
    }
    fs::write(a.out.join("convergence.csv"), conv)?;

    let mut ham = String::from("d,p_cum\n");
    for (d, p) in set.hamming_cumulative().iter().enumerate() {
        writeln!(ham, "{d},{p}").unwrap();
    }
    fs::write(a.out.join("hamming.csv"), ham)?;

    let mut de = String::from("delta_e,p_cum\n");
    for (x, p) in thin_cdf(&set.delta_e, 1000) {
        writeln!(de, "{x},{p}").unwrap();
    }
    fs::write(a.out.join("delta_e.csv"), de)?;

    let mut acc = String::from("replica,acceptance\n");
    for (r, rep) in set.replicas.iter().enumerate() {
        writeln!(acc, "{r},{}", rep.acceptance).unwrap();
    }
    fs::write(a.out.join("acceptance.csv"), acc)?;

    if a.plot {
        let err = set.mean_at_checkpoints(|r| &r.abs_err);
        let tv = set.mean_at_checkpoints(|r| &r.tv);
        let xs: Vec<f64> = set.checkpoints.iter().map(|&t| t as f64).collect();
        fs::write(
            a.out.join("energy_error.svg"),
            svg::log_log_plot("|E(t) - E_ex|", "steps", &[(a.kernel.as_str(), &xs, &err)]),
        )?;
        fs::write(
            a.out.join("tv.svg"),
            svg::log_log_plot("total variation distance", "steps", &[(a.kernel.as_str(), &xs, &tv)]),
        )?;
    }

    if let Some(t) = tau {
        println!("tau = {t}");
    }
    println!("exact mean energy = {}", set.exact_mean_energy);
    println!("final |E - E_ex| = {}", set.final_abs_err());
    println!("final TV = {}", set.final_tv());
    println!("mean acceptance = {}", set.mean_acceptance());
    match set.crossing_step {
        Some(s) => println!("crossing step = {s}"),
        None => println!("crossing step = not reached"),
    }
    Ok(())
}

fn cmd_sweep(cli: &Cli, a: &SweepArgs) -> CmdResult {
    let text = fs::read_to_string(&a.config)
        .map_err(|e| QamcError::from(e).context(format!("reading config {}", a.config.display())))?;
    let cfg = EnsembleConfig::from_text(&text).map_err(|e| e.context(format!("config {}", a.config.display())))?;
    write_manifest(cli, &a.out, "sweep", Some(cfg.master_seed), &format!("[config]\n{}", cfg.to_text()))?;
    let out = harness::run_sweep(&cfg, &a.out)?;
    if let Some(g) = &out.gap {
        println!("n,T,kernel,mean_gap,std_gap");
        for s in &g.summary {
            println!("{},{},{},{},{}", s.n, s.temperature, s.kernel, s.mean, s.std);
        }
    }
    if let Some(c) = &out.convergence {
        println!("n,T,kernel,crossing_step,final_tv,acceptance");
        for s in &c.summary {
            println!(
                "{},{},{},{},{},{}",
                s.n, s.temperature, s.kernel, s.mean_crossing_step, s.final_tv.0, s.acceptance
            );
        }
    }
    for f in &out.fits {
        println!("{} {}: {} ± {}", f.label, f.kernel.map(KernelKind::as_str).unwrap_or("-"), f.fit.exponent, f.fit.std_error);
    }
    Ok(())
}

fn cmd_fit(cli: &Cli, a: &FitArgs) -> CmdResult {
    write_manifest(cli, &a.out, "fit", None, "")?;
    let fits = fit::fit_file(&a.input, a.model)?;
    let csv = harness::fits_csv(&fits);
    fs::write(a.out.join(harness::FITS_FILE), &csv)?;
    print!("{csv}");
    Ok(())
}
