//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::algebra::{C64, CVector};
use crate::analysis::{self, Variant};
use crate::ensemble::{run_ensemble, EnsembleConfig, Method, PTable, PTableSink};
use crate::error::{Error, Result};
use crate::kernel::{self, fit_kernel, read_kernel_file, write_kernel, Mode, MemoryKernel};
use crate::models::{self, ModelSpec};
use crate::nmqsd::{self, NmqsdOptions, Sample, TimeGrid, Tolerances, TrajectoryOutput};
use crate::noise::{estimate_covariance, FrequencySign};
use crate::oracle::{self, TotalSystem};
use crate::{mqsd, csv_row};

pub const WORKERS_ENV: &str = "NMQSD_WORKERS";
/// Trajectories whose full sample CSV is written by `simulate`.
pub const TRAJECTORY_FILES: usize = 6;

#[derive(Debug, Parser)]
#[command(name = "nmqsd", version, about = "Quantum state diffusion for open systems with exponential-sum bath memory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a trajectory ensemble and write a run directory.
    Simulate(SimulateArgs),
    /// Histogram, lineshape fit and peak-area ratio for a run directory.
    Analyze(AnalyzeArgs),
    /// Memory-kernel utilities.
    #[command(subcommand)]
    Kernel(KernelCommand),
    /// Compare an NMQSD ensemble with the exact few-mode solution.
    OracleCompare(OracleArgs),
    /// Monte Carlo covariance of the generated noise against the kernel.
    NoiseCheck(NoiseArgs),
    /// Final-time populations of one ensemble at dt, dt/2, dt/4, ...
    Convergence(ConvergenceArgs),
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    #[arg(long, default_value = "mg24")]
    pub model: String,
    #[arg(long, default_value = "mqsd")]
    pub method: Method,
    #[arg(long, default_value_t = 2000)]
    pub ntraj: usize,
    #[arg(long, default_value_t = 20.0)]
    pub t_max: f64,
    /// Coarsest step; the method's default when omitted.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Number of times the step is halved.
    #[arg(long, default_value_t = 2)]
    pub halvings: u32,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub initial_level: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Preset (`mg24`, `rabi`) or model config file.
    #[arg(long, default_value = "mg24")]
    pub model: String,
    #[arg(long, default_value = "nmqsd")]
    pub method: Method,
    #[arg(long, default_value_t = 100)]
    pub ntraj: usize,
    #[arg(long, default_value_t = 1000.0)]
    pub t_max: f64,
    /// Integration step; the method's default when omitted.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub sample_every: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    /// Basis level the system starts in.
    #[arg(long, default_value_t = 0)]
    pub initial_level: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub soft_tol: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub hard_tol: f64,
    /// `kernel-covariance` (default) or `as-written`.
    #[arg(long, default_value = "kernel-covariance")]
    pub noise_sign: String,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Run directory written by `simulate`.
    pub run: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    pub delta_p: f64,
    /// `t_min,t_max`; defaults to the last 90% of the run.
    #[arg(long, value_parser = parse_window)]
    pub t_window: Option<(f64, f64)>,
    /// `nonmarkov` or `markov`; follows the run's method when omitted.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Output directory; the run directory when omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum KernelCommand {
    /// Memory time, closed form and quadrature.
    Tau {
        /// Kernel file, or `mg24` for the built-in table.
        #[arg(default_value = "mg24")]
        kernel: String,
    },
    /// Fit an exponential sum to `t,re,im` samples.
    Fit {
        samples: PathBuf,
        #[arg(long, short = 'm', default_value_t = 1)]
        terms: usize,
        /// Kernel file with starting terms.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Write `t,re,im` samples of `alpha(t, 0)`.
    Sample {
        #[arg(default_value = "mg24")]
        kernel: String,
        #[arg(long, default_value_t = 1000.0)]
        t_max: f64,
        #[arg(long, default_value_t = 200)]
        n: usize,
    },
    /// Noise covariance table with a 5-sigma verdict.
    Check(NoiseArgs),
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    #[arg(default_value = "mg24")]
    pub kernel: String,
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 10.0, 50.0, 100.0, 200.0])]
    pub lags: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "kernel-covariance")]
    pub noise_sign: String,
    /// Write the CSV here instead of stdout.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OracleCase {
    /// `L = sigma_z`, three modes.
    Dephasing,
    /// `L = |g><e|`, two modes.
    Decay,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, value_enum, default_value = "dephasing")]
    pub case: OracleCase,
    #[arg(long, default_value_t = 2000)]
    pub ntraj: usize,
    #[arg(long, default_value_t = 3.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    #[arg(long, default_value_t = 0.5)]
    pub sample_every: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    #[arg(long, default_value_t = 3.0)]
    pub sigmas: f64,
}

fn parse_window(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected t_min,t_max")?;
    let a: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((a, b))
}

fn parse_sign(s: &str) -> Result<FrequencySign> {
    match s {
        "kernel-covariance" => Ok(FrequencySign::KernelCovariance),
        "as-written" => Ok(FrequencySign::AsWritten),
        other => Err(Error::invalid(format!("unknown noise sign {other:?}"))),
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn resolve_kernel(name: &str) -> Result<MemoryKernel> {
    if name == "mg24" {
        Ok(MemoryKernel::mg24())
    } else {
        read_kernel_file(name)
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Parse and run; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => simulate(&a).map(|dir| println!("{}", dir.display())),
        Command::Analyze(a) => {
            let report = analyze(&a)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Kernel(k) => kernel_command(k),
        Command::OracleCompare(a) => {
            let (table, verdict) = oracle_compare(&a)?;
            print!("{table}");
            println!("{verdict}");
            Ok(())
        }
        Command::Convergence(a) => {
            print!("{}", convergence(&a)?);
            Ok(())
        }
        Command::NoiseCheck(a) => {
            let (csv, _) = noise_check(&a)?;
            match &a.out {
                Some(p) => write(p, &csv),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
    }
}

/// Run the ensemble and write `manifest.json`, `rho.csv`, `ptable.csv` and
/// `traj_000.csv` .. for the first few trajectories.
pub fn simulate(a: &SimulateArgs) -> Result<PathBuf> {
    let model: ModelSpec = models::resolve(&a.model)?;
    if a.initial_level >= model.dim() {
        return Err(Error::invalid(format!(
            "initial level {} outside a {}-level model",
            a.initial_level,
            model.dim()
        )));
    }
    let dt = a.dt.unwrap_or_else(|| method_dt(a.method));
    let grid = TimeGrid::new(a.t_max, dt, a.sample_every)?;
    let mut cfg = EnsembleConfig::new(a.method, a.ntraj, grid, a.seed);
    cfg.workers = a.workers.unwrap_or_else(default_workers);
    cfg.nmqsd = NmqsdOptions {
        sign: parse_sign(&a.noise_sign)?,
        tolerances: Tolerances {
            soft: a.soft_tol,
            hard: a.hard_tol,
        },
    };
    cfg.validate()?;

    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let psi0 = CVector::basis(model.dim(), a.initial_level);
    let ptable_path = a.out.join("ptable.csv");
    let result = run_ensemble(&model, &psi0, &cfg, PTableSink::Csv(ptable_path.clone()))?;
    write(&a.out.join("rho.csv"), &result.rho_csv())?;

    let mut traj_files = Vec::new();
    for i in 0..a.ntraj.min(TRAJECTORY_FILES) {
        let mut out = TrajectoryOutput::default();
        let sink = |s: &Sample| out.push(s);
        let status = match a.method {
            Method::Nmqsd => nmqsd::run_trajectory_with(&model, &psi0, &grid, &cfg.nmqsd, a.seed, i as u64, sink),
            Method::Mqsd => mqsd::run_trajectory_markov_with(&model, &psi0, &grid, a.seed, i as u64, sink),
        };
        let name = format!("traj_{i:03}.csv");
        write(&a.out.join(&name), &out.to_csv())?;
        traj_files.push(json!({
            "file": name,
            "samples": out.times.len(),
            "aborted": status.as_ref().err().map(|e| e.to_string()),
        }));
    }

    let manifest = json!({
        "program": "nmqsd",
        "version": env!("CARGO_PKG_VERSION"),
        "command": "simulate",
        "model_source": a.model,
        "model_config": models::to_config(&model)?,
        "method": a.method,
        "n_traj": a.ntraj,
        "grid": grid,
        "seed": a.seed,
        "workers": cfg.workers,
        "initial_level": a.initial_level,
        "nmqsd": cfg.nmqsd,
        "n_ok": result.n_ok,
        "failures": result.failures,
        "failure_reasons": result.failure_reasons,
        "max_inv_residual": result.max_inv_residual,
        "max_norm_deviation": result.max_norm_deviation,
        "soft_violations": result.soft_violations,
        "trajectories": traj_files,
        "files": ["rho.csv", "ptable.csv"],
    });
    write(&a.out.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)?;
    Ok(a.out.clone())
}

fn run_variant(run: &Path) -> Option<Variant> {
    let text = fs::read_to_string(run.join("manifest.json")).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    match v.get("method")?.as_str()? {
        "mqsd" => Some(Variant::Markov),
        _ => Some(Variant::NonMarkov),
    }
}

/// Write `chi.csv` and `fit.json`. A failed fit is still recorded in
/// `fit.json` under `error` before the error is returned.
pub fn analyze(a: &AnalyzeArgs) -> Result<serde_json::Value> {
    let ptable = PTable::read_csv(a.run.join("ptable.csv"))?;
    let out = a.out.clone().unwrap_or_else(|| a.run.clone());
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let hist = analysis::histogram(&ptable, a.delta_p, a.t_window)?;
    write(&out.join("chi.csv"), &hist.to_csv())?;

    let variant = a.variant.or_else(|| run_variant(&a.run)).unwrap_or(Variant::NonMarkov);
    let peaks = hist.peaks();
    let mut record = json!({
        "variant": variant,
        "delta_p": a.delta_p,
        "t_window": hist.t_window,
        "n_trajectories": hist.n_trajectories,
        "peaks": peaks,
        "bimodal": peaks.is_bimodal(),
    });
    let fitted = analysis::fit_lineshape(&hist, variant).and_then(|fit| {
        let areas = analysis::peak_area_ratio(&fit)?;
        Ok((fit, areas))
    });
    match fitted {
        Ok((fit, areas)) => {
            record["params"] = serde_json::to_value(fit.params)?;
            record["param_stderr"] = serde_json::to_value(fit.stderr())?;
            record["residual_rms"] = json!(fit.rms);
            record["peak_height"] = json!(fit.peak_height);
            record["areas"] = serde_json::to_value(areas)?;
            record["ratio"] = json!(areas.ratio);
        }
        Err(e) => {
            record["error"] = json!(e.to_string());
            write(&out.join("fit.json"), &serde_json::to_string_pretty(&record)?)?;
            return Err(e);
        }
    }
    write(&out.join("fit.json"), &serde_json::to_string_pretty(&record)?)?;
    Ok(record)
}

fn kernel_command(k: KernelCommand) -> Result<()> {
    match k {
        KernelCommand::Tau { kernel } => {
            let kern = resolve_kernel(&kernel)?;
            let closed = kern.memory_time()?;
            let quad = kern.memory_time_quadrature(1e-10)?;
            println!("tau = {closed:.6}");
            println!("quadrature = {quad:.6} (relative difference {:.3e})", ((quad - closed) / closed).abs());
        }
        KernelCommand::Fit { samples, terms, init } => {
            let data = read_samples(&samples)?;
            let init = init.map(read_kernel_file).transpose()?;
            let fit = fit_kernel(&data, terms, init.as_ref().map(|k| k.terms.as_slice()))?;
            print!("# rms residual {:e}\n{}", fit.rms, write_kernel(&fit.kernel));
        }
        KernelCommand::Sample { kernel, t_max, n } => {
            let kern = resolve_kernel(&kernel)?;
            print!("{}", sample_kernel(&kern, t_max, n)?);
        }
        KernelCommand::Check(a) => {
            let (csv, worst) = noise_check(&a)?;
            print!("{csv}");
            let verdict = if worst <= 5.0 { "PASS" } else { "FAIL" };
            println!("# {verdict}: largest deviation {worst:.2} standard errors");
        }
    }
    Ok(())
}

/// `t,re,im` rows of `alpha(t, 0)` on `n` points in `[0, t_max]`.
pub fn sample_kernel(kernel: &MemoryKernel, t_max: f64, n: usize) -> Result<String> {
    if n < 2 || !(t_max > 0.0) {
        return Err(Error::invalid("need n >= 2 and t_max > 0"));
    }
    let mut out = String::from("t,re,im\n");
    for k in 0..n {
        let t = t_max * k as f64 / (n - 1) as f64;
        let a = kernel.eval(t, 0.0);
        out.push_str(&csv_row(&[t, a.re, a.im]));
    }
    Ok(out)
}

pub fn read_samples(path: &Path) -> Result<Vec<(f64, C64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let origin = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with('t')) {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|e| Error::Parse {
                path: origin.clone(),
                line: i + 1,
                message: format!("bad number {s:?}: {e}"),
            })
        };
        if f.len() != 3 {
            return Err(Error::Parse {
                path: origin.clone(),
                line: i + 1,
                message: format!("expected t,re,im, found {} fields", f.len()),
            });
        }
        out.push((parse(f[0])?, C64::new(parse(f[1])?, parse(f[2])?)));
    }
    Ok(out)
}

/// CSV `lag,re_alpha,im_alpha,re_cov,im_cov,stderr_re,stderr_im` and the
/// largest deviation in standard errors over both correlators.
pub fn noise_check(a: &NoiseArgs) -> Result<(String, f64)> {
    let kern = resolve_kernel(&a.kernel)?;
    let est = estimate_covariance(&kern, parse_sign(&a.noise_sign)?, a.paths, &a.lags, a.seed)?;
    let mut out = String::from("lag,re_alpha,im_alpha,re_cov,im_cov,stderr_re,stderr_im\n");
    let mut worst: f64 = 0.0;
    let z = |d: f64, se: f64| if se > 0.0 { d.abs() / se } else if d == 0.0 { 0.0 } else { f64::INFINITY };
    for (k, &lag) in est.lags.iter().enumerate() {
        let alpha = kern.eval(lag, 0.0);
        let (c, (sr, si)) = (est.cov[k], est.cov_stderr[k]);
        out.push_str(&csv_row(&[lag, alpha.re, alpha.im, c.re, c.im, sr, si]));
        let (p, (pr, pi)) = (est.pseudo_cov[k], est.pseudo_stderr[k]);
        worst = worst
            .max(z(c.re - alpha.re, sr))
            .max(z(c.im - alpha.im, si))
            .max(z(p.re, pr))
            .max(z(p.im, pi));
    }
    Ok((out, worst))
}

fn method_dt(method: Method) -> f64 {
    match method {
        Method::Nmqsd => nmqsd::DEFAULT_DT,
        Method::Mqsd => mqsd::DEFAULT_DT,
    }
}

/// CSV `dt,rho_ii...,se_ii...,max_sigma`: the populations at `t_max` for each
/// step, and the largest change against the next finer step in units of the
/// combined standard error.
pub fn convergence(a: &ConvergenceArgs) -> Result<String> {
    let model = models::resolve(&a.model)?;
    if a.initial_level >= model.dim() {
        return Err(Error::invalid("initial level outside the model"));
    }
    let d = model.dim();
    let psi0 = CVector::basis(d, a.initial_level);
    let dt0 = a.dt.unwrap_or_else(|| method_dt(a.method));
    let mut rows = Vec::new();
    for h in 0..=a.halvings {
        let dt = dt0 / 2f64.powi(h as i32);
        let grid = TimeGrid::new(a.t_max, dt, a.t_max)?;
        let mut cfg = EnsembleConfig::new(a.method, a.ntraj, grid, a.seed);
        cfg.workers = a.workers.unwrap_or_else(default_workers);
        let r = run_ensemble(&model, &psi0, &cfg, PTableSink::Discard)?;
        let k = r.times.len() - 1;
        let pops: Vec<f64> = (0..d).map(|i| r.rho[k][(i, i)].re).collect();
        rows.push((dt, pops, r.diag_stderr(k)));
    }
    let mut out = String::from("dt");
    for prefix in ["rho", "se"] {
        for i in 0..d {
            out.push_str(&format!(",{prefix}_{i}{i}"));
        }
    }
    out.push_str(",max_sigma\n");
    for (n, (dt, pops, se)) in rows.iter().enumerate() {
        let mut fields = vec![*dt];
        fields.extend(pops);
        fields.extend(se);
        let change = rows.get(n + 1).map_or(f64::NAN, |(_, p2, s2)| {
            (0..d)
                .map(|i| {
                    let s = se[i].hypot(s2[i]);
                    let diff = (pops[i] - p2[i]).abs();
                    if diff <= 1e-12 { 0.0 } else if s > 0.0 { diff / s } else { f64::INFINITY }
                })
                .fold(0.0, f64::max)
        });
        fields.push(change);
        out.push_str(&csv_row(&fields));
    }
    Ok(out)
}

/// The two few-mode systems used for exactness checks, with their initial state.
pub fn oracle_case(case: OracleCase) -> (TotalSystem, CVector) {
    let psi0 = CVector::from_vec(vec![C64::new(0.8, 0.0), C64::new(0.6, 0.0)]);
    let mode = |g, w| Mode { coupling: g, frequency: w };
    match case {
        OracleCase::Dephasing => {
            let mut s = oracle::dephasing_system(1.0, vec![mode(0.2, 1.0), mode(0.2, 2.0), mode(0.15, 3.0)]);
            s.n_max = 6;
            (s, psi0)
        }
        OracleCase::Decay => {
            let mut s = oracle::decay_system(1.0, vec![mode(0.3, 0.8), mode(0.3, 1.2)]);
            s.n_max = 2;
            (s, psi0)
        }
    }
}

pub fn oracle_compare(a: &OracleArgs) -> Result<(String, String)> {
    let (spec, psi0) = oracle_case(a.case);
    let grid = TimeGrid::new(a.t_max, a.dt, a.sample_every)?;
    let mut cfg = EnsembleConfig::new(Method::Nmqsd, a.ntraj, grid, a.seed);
    cfg.workers = a.workers.unwrap_or_else(default_workers);
    let report = oracle::compare_nmqsd_to_exact(&spec, &psi0, &cfg)?;
    let verdict = format!(
        "# {}: max deviation {:.2} standard errors (limit {}), {} failed trajectories",
        if report.within(a.sigmas) { "PASS" } else { "FAIL" },
        report.max_sigma,
        a.sigmas,
        report.failures
    );
    Ok((report.to_table(), verdict))
}

/// Kernel helpers re-exported for the binary's tests.
pub use kernel::KernelTerm;
