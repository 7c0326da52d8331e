//! Parallel Monte Carlo driver: many trajectories, one mean density matrix.
//!
//! Trajectories are grouped into fixed-size chunks by index. Chunks run in
//! parallel, and their partial sums are folded in chunk order. Results
//! therefore do not depend on the worker count.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{CMatrix, CVector, C64, ZERO};
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::mqsd::run_trajectory_markov_with;
use crate::nmqsd::{run_trajectory_with, NmqsdOptions, Sample, TimeGrid, TrajectoryStats};

/// Trajectories per reduction chunk. Part of the summation order, so
/// changing it changes results in the last bits.
const CHUNK: usize = 8;

/// Largest tolerated fraction of aborted trajectories.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Nmqsd,
    Mqsd,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nmqsd" => Ok(Method::Nmqsd),
            "mqsd" => Ok(Method::Mqsd),
            other => Err(Error::invalid(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleConfig {
    pub method: Method,
    pub n_traj: usize,
    pub grid: TimeGrid,
    pub seed: u64,
    pub workers: usize,
    pub nmqsd: NmqsdOptions,
}

impl EnsembleConfig {
    pub fn new(method: Method, n_traj: usize, grid: TimeGrid, seed: u64) -> Self {
        Self {
            method,
            n_traj,
            grid,
            seed,
            workers: 1,
            nmqsd: NmqsdOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_traj == 0 {
            return Err(Error::invalid("n_traj must be at least 1"));
        }
        if self.workers == 0 {
            return Err(Error::invalid("workers must be at least 1"));
        }
        self.grid.validate()
    }
}

/// Where per-trajectory `P(t)` rows go.
pub enum PTableSink {
    /// Keep nothing.
    Discard,
    Memory,
    /// Append CSV rows (`traj,P(t_0),P(t_1),...`) as chunks complete.
    Csv(PathBuf),
}

/// Trajectory-major table of bright populations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PTable {
    pub times: Vec<f64>,
    /// `(trajectory index, P samples)`, failed trajectories omitted.
    pub rows: Vec<(usize, Vec<f64>)>,
}

impl PTable {
    pub fn header(times: &[f64]) -> String {
        let mut h = String::from("traj");
        for t in times {
            h.push_str(&format!(",{t:.16e}"));
        }
        h.push('\n');
        h
    }

    pub fn row_csv(index: usize, p: &[f64]) -> String {
        let mut line = index.to_string();
        for v in p {
            line.push_str(&format!(",{v:.16e}"));
        }
        line.push('\n');
        line
    }

    pub fn to_csv(&self) -> String {
        let mut out = Self::header(&self.times);
        for (i, r) in &self.rows {
            out.push_str(&Self::row_csv(*i, r));
        }
        out
    }

    pub fn parse_csv(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty P table".into()))?;
        let mut cols = header.split(',');
        if cols.next().map(str::trim) != Some("traj") {
            return Err(err(1, "header must start with `traj`".into()));
        }
        let times = cols
            .map(|c| c.trim().parse::<f64>().map_err(|e| err(1, format!("bad time {c:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut f = line.split(',');
            let idx = f
                .next()
                .unwrap_or("")
                .trim()
                .parse::<usize>()
                .map_err(|e| err(i + 1, format!("bad trajectory index: {e}")))?;
            let vals = f
                .map(|c| c.trim().parse::<f64>().map_err(|e| err(i + 1, format!("bad value {c:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != times.len() {
                return Err(err(
                    i + 1,
                    format!("expected {} values, found {}", times.len(), vals.len()),
                ));
            }
            rows.push((idx, vals));
        }
        Ok(Self { times, rows })
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, &path.display().to_string())
    }

    /// Mean over trajectories at each time.
    pub fn row_means(&self) -> Vec<f64> {
        let n = self.rows.len() as f64;
        (0..self.times.len())
            .map(|k| self.rows.iter().map(|(_, r)| r[k]).sum::<f64>() / n)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub times: Vec<f64>,
    /// Mean of `|psi><psi|` at each time.
    pub rho: Vec<CMatrix>,
    /// Standard error of every `rho` entry's real and imaginary part,
    /// `(se_re, se_im)` in row-major order.
    pub rho_stderr: Vec<Vec<(f64, f64)>>,
    pub n_ok: usize,
    pub failures: usize,
    /// First few abort messages, for diagnostics.
    pub failure_reasons: Vec<(usize, String)>,
    pub ptable: Option<PTable>,
    pub max_inv_residual: f64,
    pub max_norm_deviation: f64,
    pub soft_violations: usize,
}

impl EnsembleResult {
    /// Standard errors of the diagonal entries.
    pub fn diag_stderr(&self, k: usize) -> Vec<f64> {
        let d = self.rho[k].dim();
        (0..d).map(|i| self.rho_stderr[k][i * d + i].0).collect()
    }

    /// `rho.csv`: `t`, real and imaginary parts of every entry, then the
    /// standard errors of the diagonal.
    pub fn rho_csv(&self) -> String {
        let d = self.rho.first().map_or(0, |r| r.dim());
        let mut out = String::from("t");
        for i in 0..d {
            for j in 0..d {
                out.push_str(&format!(",re_rho{i}{j},im_rho{i}{j}"));
            }
        }
        for i in 0..d {
            out.push_str(&format!(",se_rho{i}{i}"));
        }
        out.push('\n');
        for (k, t) in self.times.iter().enumerate() {
            let mut vals = vec![*t];
            for z in self.rho[k].as_slice() {
                vals.push(z.re);
                vals.push(z.im);
            }
            vals.extend(self.diag_stderr(k));
            out.push_str(&crate::csv_row(&vals));
        }
        out
    }
}

/// Moment sums over a set of trajectories, per time and matrix entry.
#[derive(Clone)]
struct Partial {
    n: usize,
    sum: Vec<C64>,
    /// Sum of squares of the real and imaginary parts separately.
    sumsq: Vec<(f64, f64)>,
    rows: Vec<(usize, Vec<f64>)>,
    failures: Vec<(usize, String)>,
    stats: Vec<TrajectoryStats>,
}

impl Partial {
    fn new(len: usize) -> Self {
        Self {
            n: 0,
            sum: vec![ZERO; len],
            sumsq: vec![(0.0, 0.0); len],
            rows: Vec::new(),
            failures: Vec::new(),
            stats: Vec::new(),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_one(
    model: &ModelSpec,
    psi0: &CVector,
    cfg: &EnsembleConfig,
    index: usize,
    d: usize,
    n_samples: usize,
    keep_p: bool,
    into: &mut Partial,
) {
    // Stage into per-trajectory buffers so an abort leaves `into` untouched.
    let mut diadics = vec![ZERO; n_samples * d * d];
    let mut p = Vec::with_capacity(if keep_p { n_samples } else { 0 });
    let mut sink = |s: &Sample<'_>| {
        if s.index >= n_samples {
            return;
        }
        let base = s.index * d * d;
        for i in 0..d {
            for j in 0..d {
                diadics[base + i * d + j] = s.psi[i] * s.psi[j].conj();
            }
        }
        if keep_p {
            p.push(s.p);
        }
    };
    let res = match cfg.method {
        Method::Nmqsd => run_trajectory_with(model, psi0, &cfg.grid, &cfg.nmqsd, cfg.seed, index as u64, &mut sink),
        Method::Mqsd => run_trajectory_markov_with(model, psi0, &cfg.grid, cfg.seed, index as u64, &mut sink),
    };
    match res {
        Ok(stats) => {
            into.n += 1;
            for (k, v) in diadics.iter().enumerate() {
                into.sum[k] += v;
                into.sumsq[k].0 += v.re * v.re;
                into.sumsq[k].1 += v.im * v.im;
            }
            if keep_p {
                into.rows.push((index, p));
            }
            into.stats.push(stats);
        }
        Err(e) => into.failures.push((index, e.to_string())),
    }
}

/// Run `cfg.n_traj` trajectories and reduce them in trajectory-index order.
pub fn run_ensemble(model: &ModelSpec, psi0: &CVector, cfg: &EnsembleConfig, sink: PTableSink) -> Result<EnsembleResult> {
    cfg.validate()?;
    let d = model.dim();
    if psi0.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: psi0.dim(),
        });
    }
    let times = cfg.grid.times();
    let n_samples = times.len();
    let len = n_samples * d * d;
    let keep_p = !matches!(sink, PTableSink::Discard);

    let mut csv = match &sink {
        PTableSink::Csv(path) => {
            let f = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(f);
            w.write_all(PTable::header(&times).as_bytes())
                .map_err(|e| Error::io(path, e))?;
            Some((path.clone(), w))
        }
        _ => None,
    };
    let mut memory_rows = Vec::new();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;

    let n_chunks = cfg.n_traj.div_ceil(CHUNK);
    let batch = cfg.workers.max(1) * 2;
    let mut total = Partial::new(len);
    let mut all_stats = Vec::new();

    let mut next = 0;
    while next < n_chunks {
        let end = (next + batch).min(n_chunks);
        let parts: Vec<Partial> = pool.install(|| {
            (next..end)
                .into_par_iter()
                .map(|c| {
                    let mut part = Partial::new(len);
                    for i in c * CHUNK..((c + 1) * CHUNK).min(cfg.n_traj) {
                        run_one(model, psi0, cfg, i, d, n_samples, keep_p, &mut part);
                    }
                    part
                })
                .collect()
        });
        for part in parts {
            total.n += part.n;
            for k in 0..len {
                total.sum[k] += part.sum[k];
                total.sumsq[k].0 += part.sumsq[k].0;
                total.sumsq[k].1 += part.sumsq[k].1;
            }
            total.failures.extend(part.failures);
            all_stats.extend(part.stats);
            if let Some((path, w)) = &mut csv {
                for (i, r) in &part.rows {
                    w.write_all(PTable::row_csv(*i, r).as_bytes())
                        .map_err(|e| Error::io(path.clone(), e))?;
                }
            } else {
                memory_rows.extend(part.rows);
            }
        }
        next = end;
    }
    if let Some((path, mut w)) = csv {
        w.flush().map_err(|e| Error::io(path, e))?;
    }

    let failures = total.failures.len();
    if failures as f64 > MAX_FAILURE_FRACTION * cfg.n_traj as f64 {
        return Err(Error::TooManyFailures {
            failed: failures,
            total: cfg.n_traj,
        });
    }

    let n = total.n as f64;
    let mut rho = Vec::with_capacity(n_samples);
    let mut rho_stderr = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        let block = k * d * d..(k + 1) * d * d;
        let mean: Vec<C64> = total.sum[block.clone()].iter().map(|s| s / n).collect();
        let se = block
            .clone()
            .zip(&mean)
            .map(|(idx, m)| {
                if total.n < 2 {
                    return (0.0, 0.0);
                }
                let var_re = ((total.sumsq[idx].0 / n - m.re * m.re) * n / (n - 1.0)).max(0.0);
                let var_im = ((total.sumsq[idx].1 / n - m.im * m.im) * n / (n - 1.0)).max(0.0);
                ((var_re / n).sqrt(), (var_im / n).sqrt())
            })
            .collect();
        rho.push(CMatrix::from_row_major(&mean)?);
        rho_stderr.push(se);
    }

    let ptable = matches!(sink, PTableSink::Memory).then(|| PTable {
        times: times.clone(),
        rows: memory_rows,
    });
    Ok(EnsembleResult {
        times,
        rho,
        rho_stderr,
        n_ok: total.n,
        failures,
        failure_reasons: total.failures.into_iter().take(10).collect(),
        ptable,
        max_inv_residual: all_stats.iter().map(|s| s.max_inv_residual).fold(0.0, f64::max),
        max_norm_deviation: all_stats.iter().map(|s| s.max_norm_deviation).fold(0.0, f64::max),
        soft_violations: all_stats.iter().map(|s| s.soft_violations).sum(),
    })
}

/// `P(t)` samples per trajectory, from an in-memory table.
pub fn signal_matrix(result: &EnsembleResult) -> Result<&PTable> {
    result
        .ptable
        .as_ref()
        .ok_or_else(|| Error::invalid("ensemble was run without an in-memory P table"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::MemoryKernel;
    use crate::models::{build_dephasing, build_mg24, build_rabi, Mg24Params};

    fn grid(t: f64, dt: f64, every: f64) -> TimeGrid {
        TimeGrid::new(t, dt, every).unwrap()
    }

    #[test]
    fn single_trajectory_is_its_diadic() {
        let m = build_mg24(&Mg24Params::defaults()).unwrap();
        let g = grid(20.0, 0.01, 1.0);
        let cfg = EnsembleConfig::new(Method::Mqsd, 1, g, 3);
        let res = run_ensemble(&m, &CVector::basis(3, 0), &cfg, PTableSink::Memory).unwrap();
        let traj = crate::mqsd::run_trajectory_markov(&m, &CVector::basis(3, 0), &g, 3, 0).unwrap();
        for (k, psi) in traj.psi.iter().enumerate() {
            assert!((&res.rho[k] - &psi.projector()).max_abs() < 1e-15);
        }
        assert_eq!(res.n_ok, 1);
        assert!(res.rho_stderr[5].iter().all(|s| *s == (0.0, 0.0)));
    }

    #[test]
    fn rabi_ensemble_is_exact() {
        let m = build_rabi(2.0).unwrap();
        let cfg = EnsembleConfig::new(Method::Nmqsd, 5, grid(3.0, 1e-3, 0.5), 0);
        let res = run_ensemble(&m, &CVector::basis(2, 0), &cfg, PTableSink::Discard).unwrap();
        for (t, rho) in res.times.iter().zip(&res.rho) {
            assert!((rho[(0, 0)].re - t.cos().powi(2)).abs() < 1e-10);
        }
        assert!(res.diag_stderr(3).iter().all(|s| *s < 1e-7));
    }

    #[test]
    fn trace_and_hermiticity() {
        let m = build_mg24(&Mg24Params::defaults()).unwrap();
        let cfg = EnsembleConfig::new(Method::Nmqsd, 12, grid(20.0, 0.025, 1.0), 9);
        let res = run_ensemble(&m, &CVector::basis(3, 0), &cfg, PTableSink::Memory).unwrap();
        for rho in &res.rho {
            assert!((rho.trace().re - 1.0).abs() < 1e-8);
            assert!(rho.hermiticity_error() < 1e-10);
        }
        // Row means equal the bright population of the reduction.
        let pt = signal_matrix(&res).unwrap();
        for (k, mean) in pt.row_means().iter().enumerate() {
            let r = &res.rho[k];
            assert!((mean - (r[(0, 0)].re + r[(1, 1)].re)).abs() < 1e-12);
        }
    }

    #[test]
    fn scheduling_invariance() {
        let m = build_mg24(&Mg24Params::defaults()).unwrap();
        let mut cfg = EnsembleConfig::new(Method::Mqsd, 30, grid(10.0, 0.01, 1.0), 21);
        let mut results = Vec::new();
        for w in [1, 4, 8] {
            cfg.workers = w;
            results.push(run_ensemble(&m, &CVector::basis(3, 0), &cfg, PTableSink::Memory).unwrap());
        }
        for r in &results[1..] {
            assert_eq!(r.ptable, results[0].ptable);
            for (a, b) in r.rho.iter().zip(&results[0].rho) {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn dephasing_conserves_populations() {
        let k = MemoryKernel::single(0.1, 0.5, 0.3).unwrap();
        let m = build_dephasing(1.0, k).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let psi0 = CVector::from_vec(vec![C64::new(s, 0.0), C64::new(s, 0.0)]);
        let cfg = EnsembleConfig::new(Method::Nmqsd, 200, grid(4.0, 0.01, 0.5), 1);
        let res = run_ensemble(&m, &psi0, &cfg, PTableSink::Discard).unwrap();
        for (k, rho) in res.rho.iter().enumerate() {
            let se = res.diag_stderr(k)[0];
            assert!((rho[(0, 0)].re - 0.5).abs() <= 3.0 * se + 1e-9, "k={k}");
        }
    }

    #[test]
    fn standard_error_scales_as_inverse_sqrt_n() {
        let m = build_mg24(&Mg24Params::defaults()).unwrap();
        let se = |n: usize| {
            let cfg = EnsembleConfig::new(Method::Mqsd, n, grid(5.0, 0.01, 5.0), 8);
            let res = run_ensemble(&m, &CVector::basis(3, 0), &cfg, PTableSink::Discard).unwrap();
            res.diag_stderr(1)[0]
        };
        let ratio = se(500) / se(2000);
        assert!((ratio - 2.0).abs() <= 0.4, "{ratio}");
    }

    #[test]
    fn failures_are_capped() {
        let m = build_mg24(&Mg24Params::defaults()).unwrap();
        let mut cfg = EnsembleConfig::new(Method::Nmqsd, 4, grid(10.0, 0.5, 0.5), 2);
        cfg.nmqsd.tolerances.hard = 1e-15;
        let r = run_ensemble(&m, &CVector::basis(3, 0), &cfg, PTableSink::Discard);
        assert!(matches!(r, Err(Error::TooManyFailures { failed: 4, total: 4 })), "{r:?}");
    }

    #[test]
    fn validation() {
        let m = build_rabi(1.0).unwrap();
        let cfg = EnsembleConfig::new(Method::Mqsd, 0, grid(1.0, 0.1, 0.1), 0);
        assert!(run_ensemble(&m, &CVector::basis(2, 0), &cfg, PTableSink::Discard).is_err());
        assert!("nmqsd".parse::<Method>().is_ok());
        assert!("hops".parse::<Method>().is_err());
    }

    #[test]
    fn ptable_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ptable.csv");
        let m = build_mg24(&Mg24Params::defaults()).unwrap();
        let cfg = EnsembleConfig::new(Method::Mqsd, 10, grid(5.0, 0.01, 1.0), 4);
        run_ensemble(&m, &CVector::basis(3, 0), &cfg, PTableSink::Csv(path.clone())).unwrap();
        let mem = run_ensemble(&m, &CVector::basis(3, 0), &cfg, PTableSink::Memory).unwrap();
        let disk = PTable::read_csv(&path).unwrap();
        assert_eq!(&disk, mem.ptable.as_ref().unwrap());
    }
}
