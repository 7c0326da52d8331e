//! Signal histogram χ(P), peak lineshapes, and the bright/dark area ratio.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ensemble::PTable;
use crate::error::{Error, Result};
use crate::lsq::{self, LmOptions, Residuals};
use crate::quad::adaptive_simpson;

pub const MIN_FIT_BINS: usize = 50;
pub const AREA_TOLERANCE: f64 = 1e-10;

/// Density-normalized occupancy histogram of P over `[0, 1]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
    /// Standard error of each density from the spread between trajectories.
    pub stderr: Vec<f64>,
    pub counts: Vec<u64>,
    pub t_window: (f64, f64),
    pub n_trajectories: usize,
}

impl Histogram {
    pub fn n_bins(&self) -> usize {
        self.density.len()
    }

    pub fn width(&self, b: usize) -> f64 {
        self.edges[b + 1] - self.edges[b]
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect()
    }

    pub fn mass(&self) -> f64 {
        (0..self.n_bins()).map(|b| self.density[b] * self.width(b)).sum()
    }

    /// Tallest bin below P = 1/2, tallest at or above it, and the lowest bin between.
    pub fn peaks(&self) -> Peaks {
        let c = self.centers();
        let split = c.iter().position(|&p| p >= 0.5).unwrap_or(c.len());
        let argmax = |r: std::ops::Range<usize>| {
            r.fold(None, |best: Option<usize>, b| match best {
                Some(k) if self.density[k] >= self.density[b] => Some(k),
                _ => Some(b),
            })
        };
        let low = argmax(0..split).unwrap_or(0);
        let high = argmax(split..c.len()).unwrap_or(c.len() - 1);
        let valley = if high > low + 1 {
            (low + 1..high).fold(low + 1, |k, b| if self.density[b] < self.density[k] { b } else { k })
        } else {
            low
        };
        Peaks {
            low_p: c[low],
            low_density: self.density[low],
            high_p: c[high],
            high_density: self.density[high],
            valley_p: c[valley],
            valley_density: self.density[valley],
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("P,chi,stderr\n");
        for (b, p) in self.centers().into_iter().enumerate() {
            out.push_str(&crate::csv_row(&[p, self.density[b], self.stderr[b]]));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Peaks {
    pub low_p: f64,
    pub low_density: f64,
    pub high_p: f64,
    pub high_density: f64,
    pub valley_p: f64,
    pub valley_density: f64,
}

impl Peaks {
    /// Two separated maxima with a strictly lower bin between them.
    pub fn is_bimodal(&self) -> bool {
        self.valley_density < self.low_density && self.valley_density < self.high_density
    }
}

/// Default window drops the first tenth of the run.
pub fn default_window(times: &[f64]) -> (f64, f64) {
    let t_max = times.last().copied().unwrap_or(0.0);
    (0.1 * t_max, t_max)
}

/// Bin the samples of `ptable` inside `t_window` into `round(1/delta_p)` equal bins.
///
/// Each trajectory contributes its own normalized occupancy and the result is
/// their mean, so the standard error comes from the spread across trajectories.
pub fn histogram(ptable: &PTable, delta_p: f64, t_window: Option<(f64, f64)>) -> Result<Histogram> {
    if !(delta_p > 0.0 && delta_p <= 0.1) {
        return Err(Error::invalid(format!("delta_P must lie in (0, 0.1], got {delta_p}")));
    }
    let n_bins = (1.0 / delta_p).round() as usize;
    if ((n_bins as f64) * delta_p - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("1/delta_P must be an integer, got {}", 1.0 / delta_p)));
    }
    let (t0, t1) = t_window.unwrap_or_else(|| default_window(&ptable.times));
    let t_end = ptable.times.last().copied().unwrap_or(f64::NEG_INFINITY);
    if !(t0 <= t1) || t1 > t_end * (1.0 + 1e-12) + 1e-12 {
        return Err(Error::invalid(format!("time window [{t0}, {t1}] outside run [0, {t_end}]")));
    }
    let slack = 1e-9 * t1.abs().max(1.0);
    let cols: Vec<usize> = (0..ptable.times.len())
        .filter(|&k| ptable.times[k] >= t0 - slack && ptable.times[k] <= t1 + slack)
        .collect();
    if cols.is_empty() || ptable.rows.is_empty() {
        return Err(Error::invalid(format!("no samples in time window [{t0}, {t1}]")));
    }

    let width = 1.0 / n_bins as f64;
    let mut counts = vec![0u64; n_bins];
    let mut sum = vec![0.0; n_bins];
    let mut sum_sq = vec![0.0; n_bins];
    let mut own = vec![0u64; n_bins];
    for (_, row) in &ptable.rows {
        own.iter_mut().for_each(|c| *c = 0);
        for &k in &cols {
            let p = row[k];
            if !p.is_finite() {
                return Err(Error::invalid("non-finite P sample"));
            }
            let b = ((p * n_bins as f64).floor().max(0.0) as usize).min(n_bins - 1);
            own[b] += 1;
        }
        for b in 0..n_bins {
            counts[b] += own[b];
            let d = own[b] as f64 / cols.len() as f64 / width;
            sum[b] += d;
            sum_sq[b] += d * d;
        }
    }
    let n = ptable.rows.len() as f64;
    let density: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let stderr = (0..n_bins)
        .map(|b| {
            if ptable.rows.len() < 2 {
                return 0.0;
            }
            let var = (sum_sq[b] - n * density[b] * density[b]).max(0.0) / (n - 1.0);
            (var / n).sqrt()
        })
        .collect();
    Ok(Histogram {
        edges: (0..=n_bins).map(|b| b as f64 * width).collect(),
        density,
        stderr,
        counts,
        t_window: (t0, t1),
        n_trajectories: ptable.rows.len(),
    })
}

/// Time spent above `bright` and below `dark` by one P(t) series.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Residence {
    pub bright_fraction: f64,
    pub dark_fraction: f64,
    pub longest_bright: f64,
    pub longest_dark: f64,
    pub bright_intervals: usize,
    pub dark_intervals: usize,
}

/// Sample-based residence statistics on a uniform time grid.
pub fn residence(times: &[f64], p: &[f64], bright: f64, dark: f64) -> Residence {
    assert_eq!(times.len(), p.len());
    let dt = if times.len() > 1 { times[1] - times[0] } else { 0.0 };
    let n = p.len().max(1) as f64;
    let mut r = Residence {
        bright_fraction: 0.0,
        dark_fraction: 0.0,
        longest_bright: 0.0,
        longest_dark: 0.0,
        bright_intervals: 0,
        dark_intervals: 0,
    };
    let (mut run_b, mut run_d) = (0usize, 0usize);
    for &v in p {
        if v > bright {
            if run_b == 0 {
                r.bright_intervals += 1;
            }
            run_b += 1;
            r.bright_fraction += 1.0;
        } else {
            run_b = 0;
        }
        if v < dark {
            if run_d == 0 {
                r.dark_intervals += 1;
            }
            run_d += 1;
            r.dark_fraction += 1.0;
        } else {
            run_d = 0;
        }
        r.longest_bright = r.longest_bright.max(run_b as f64 * dt);
        r.longest_dark = r.longest_dark.max(run_d as f64 * dt);
    }
    r.bright_fraction /= n;
    r.dark_fraction /= n;
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    NonMarkov,
    Markov,
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nonmarkov" | "non-markov" | "nmqsd" => Ok(Variant::NonMarkov),
            "markov" | "mqsd" => Ok(Variant::Markov),
            _ => Err(Error::invalid(format!("unknown lineshape variant '{s}'"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::NonMarkov => "nonmarkov",
            Variant::Markov => "markov",
        })
    }
}

pub const N_PARAMS: usize = 14;

/// Lineshape parameters. `h[3]` is the background amplitude.
///
/// Non-Markov: χ₁ uses w₁, χ₂ uses w₂..w₆. Markov: χ₁ uses w₁, w₂, χ₂ uses w₃..w₆.
/// The background uses w₇, w₈, P₁, P₂ in both.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineshapeParams {
    pub h: [f64; 4],
    pub w: [f64; 8],
    pub p1: f64,
    pub p2: f64,
}

impl LineshapeParams {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(N_PARAMS);
        v.extend_from_slice(&self.h);
        v.extend_from_slice(&self.w);
        v.push(self.p1);
        v.push(self.p2);
        v
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert_eq!(v.len(), N_PARAMS);
        let mut h = [0.0; 4];
        let mut w = [0.0; 8];
        h.copy_from_slice(&v[..4]);
        w.copy_from_slice(&v[4..12]);
        Self { h, w, p1: v[12], p2: v[13] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.h.iter().any(|h| !h.is_finite() || *h < 0.0) {
            return Err(Error::invalid("lineshape heights must be finite and >= 0"));
        }
        if self.w.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::invalid("lineshape widths must be finite and > 0"));
        }
        if !self.p1.is_finite() || !self.p2.is_finite() {
            return Err(Error::invalid("background edges must be finite"));
        }
        Ok(())
    }
}

const H1: usize = 0;
const H2: usize = 1;
const H3: usize = 2;
const H4: usize = 3;
const W: usize = 4;
const P1: usize = 12;
const P2: usize = 13;

fn w(p: &[f64], i: usize) -> f64 {
    p[W + i - 1]
}

/// `h P / D(q)` with `D = sum_k (q / w_k)^{e_k} + 1`, accumulating the gradient.
fn rational(p: &[f64], x: f64, q: f64, hi: usize, powers: &[(usize, i32)], grad: Option<&mut [f64]>) -> f64 {
    let mut d = 1.0;
    for &(i, e) in powers {
        d += (q / w(p, i)).powi(e);
    }
    let v = p[hi] * x / d;
    if let Some(g) = grad {
        g[hi] += x / d;
        for &(i, e) in powers {
            let wi = w(p, i);
            // dD/dw = -e q^e / w^{e+1}
            let dd = -(e as f64) * q.powi(e) / wi.powi(e + 1);
            g[W + i - 1] += -v / d * dd;
        }
    }
    v
}

fn low_impl(variant: Variant, p: &[f64], x: f64, grad: Option<&mut [f64]>) -> f64 {
    match variant {
        Variant::NonMarkov => rational(p, x.max(0.0).sqrt(), x, H1, &[(1, 2)], grad),
        Variant::Markov => rational(p, x, x, H1, &[(1, 2), (2, 1)], grad),
    }
}

fn high_impl(variant: Variant, p: &[f64], x: f64, mut grad: Option<&mut [f64]>) -> f64 {
    let q = 1.0 - x;
    let first = match variant {
        Variant::NonMarkov => rational(p, x, q, H2, &[(2, 3), (3, 2), (4, 1)], grad.as_deref_mut()),
        Variant::Markov => rational(p, x, q, H2, &[(3, 2), (4, 1)], grad.as_deref_mut()),
    };
    first + rational(p, x, q, H3, &[(5, 2), (6, 1)], grad)
}

fn background_impl(p: &[f64], x: f64, grad: Option<&mut [f64]>) -> f64 {
    let (w7, w8) = (w(p, 7), w(p, 8));
    let u1 = (x - p[P1]) / w7;
    let u2 = (x - p[P2]) / w8;
    let bracket = libm::erf(u1) - libm::erf(u2);
    if let Some(g) = grad {
        let h4 = p[H4];
        let k = 2.0 / std::f64::consts::PI.sqrt();
        let e1 = k * (-u1 * u1).exp();
        let e2 = k * (-u2 * u2).exp();
        g[H4] += bracket;
        g[P1] += -h4 * e1 / w7;
        g[W + 6] += -h4 * e1 * u1 / w7;
        g[P2] += h4 * e2 / w8;
        g[W + 7] += h4 * e2 * u2 / w8;
    }
    p[H4] * bracket
}

/// Low-signal (dark) peak χ₁.
pub fn chi_low(variant: Variant, params: &LineshapeParams, x: f64) -> f64 {
    low_impl(variant, &params.to_vec(), x, None)
}

/// High-signal (bright) peak χ₂.
pub fn chi_high(variant: Variant, params: &LineshapeParams, x: f64) -> f64 {
    high_impl(variant, &params.to_vec(), x, None)
}

pub fn chi_background(params: &LineshapeParams, x: f64) -> f64 {
    background_impl(&params.to_vec(), x, None)
}

pub fn eval_lineshape(variant: Variant, params: &LineshapeParams, x: f64) -> f64 {
    let p = params.to_vec();
    low_impl(variant, &p, x, None) + high_impl(variant, &p, x, None) + background_impl(&p, x, None)
}

/// Value and parameter gradient of the full lineshape.
pub fn eval_with_gradient(variant: Variant, p: &[f64], x: f64, grad: &mut [f64]) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    low_impl(variant, p, x, Some(grad)) + high_impl(variant, p, x, Some(grad)) + background_impl(p, x, Some(grad))
}

struct LineshapeProblem<'a> {
    variant: Variant,
    x: &'a [f64],
    y: &'a [f64],
}

impl Residuals for LineshapeProblem<'_> {
    fn n_params(&self) -> usize {
        N_PARAMS
    }
    fn n_residuals(&self) -> usize {
        self.x.len()
    }
    fn residuals(&self, params: &[f64], out: &mut [f64]) {
        let mut g = [0.0; N_PARAMS];
        for (i, (&x, &y)) in self.x.iter().zip(self.y).enumerate() {
            out[i] = eval_with_gradient(self.variant, params, x, &mut g) - y;
        }
    }
    fn jacobian(&self, params: &[f64], jac: &mut [f64]) {
        for (i, &x) in self.x.iter().enumerate() {
            eval_with_gradient(self.variant, params, x, &mut jac[i * N_PARAMS..(i + 1) * N_PARAMS]);
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineshapeFit {
    pub variant: Variant,
    pub params: LineshapeParams,
    pub rms: f64,
    /// Tallest histogram bin, for judging `rms`.
    pub peak_height: f64,
    pub iterations: usize,
    /// Row-major parameter covariance, when `J^T J` is invertible.
    pub covariance: Option<Vec<f64>>,
}

impl LineshapeFit {
    pub fn stderr(&self) -> Option<Vec<f64>> {
        self.covariance
            .as_ref()
            .map(|c| (0..N_PARAMS).map(|i| c[i * N_PARAMS + i].max(0.0).sqrt()).collect())
    }
}

fn fit_options() -> LmOptions {
    let mut lower = vec![0.0; N_PARAMS];
    let mut upper = vec![f64::INFINITY; N_PARAMS];
    for i in W..W + 8 {
        lower[i] = 1e-4;
        upper[i] = 100.0;
    }
    lower[P1] = -1.0;
    upper[P1] = 2.0;
    lower[P2] = -1.0;
    upper[P2] = 2.0;
    LmOptions {
        max_iterations: 3000,
        ftol: 1e-8,
        xtol: 1e-10,
        cost_floor: 1e-28,
        initial_damping: 1e-3,
        lower: Some(lower),
        upper: Some(upper),
    }
}

/// Deterministic starting points read off the histogram's peaks and shoulders.
fn starts(hist: &Histogram, variant: Variant) -> Vec<Vec<f64>> {
    let c = hist.centers();
    let pk = hist.peaks();
    let bin = 1.0 / hist.n_bins() as f64;
    let low_pos = pk.low_p.max(bin);
    let low_h = pk.low_density.max(1e-12);
    let high_h = pk.high_density.max(1e-12);

    // Distance from P = 1 at which the bright peak falls to half height.
    let mut half = bin;
    for (b, &x) in c.iter().enumerate().rev() {
        if x < 0.5 {
            break;
        }
        if hist.density[b] < 0.5 * high_h {
            half = (1.0 - x).max(bin);
            break;
        }
    }
    let mid: Vec<f64> = c
        .iter()
        .zip(&hist.density)
        .filter(|(x, _)| **x > 0.3 && **x < 0.7)
        .map(|(_, d)| *d)
        .collect();
    let bg = if mid.is_empty() { 0.0 } else { mid.iter().sum::<f64>() / mid.len() as f64 };

    let mut out = Vec::new();
    for &scale in &[1.0, 0.5, 2.0] {
        for &(e1, e2) in &[(0.15, 0.85), (0.05, 0.95)] {
            let mut p = vec![0.0; N_PARAMS];
            match variant {
                Variant::NonMarkov => {
                    // sqrt(P)/(1+(P/w)^2) peaks at P = w/sqrt(3) with value (3/4) sqrt(P).
                    let w1 = 3f64.sqrt() * low_pos * scale;
                    p[W] = w1;
                    p[H1] = low_h / (0.75 * (w1 / 3f64.sqrt()).sqrt());
                    p[W + 1] = half * scale;
                    p[W + 2] = half * scale;
                    p[W + 3] = half * scale;
                }
                Variant::Markov => {
                    // With w2 = w1, P/(1+P/w2+(P/w1)^2) peaks at P = w1 with value w1/3.
                    let w1 = low_pos * scale;
                    p[W] = w1;
                    p[W + 1] = w1;
                    p[H1] = 3.0 * low_h / w1;
                    p[W + 2] = half * scale;
                    p[W + 3] = half * scale;
                }
            }
            p[H2] = 0.5 * high_h;
            p[H3] = 0.5 * high_h;
            p[W + 4] = 2.0 * half * scale;
            p[W + 5] = 2.0 * half * scale;
            p[H4] = 0.5 * bg;
            p[W + 6] = 0.05;
            p[W + 7] = 0.05;
            p[P1] = e1;
            p[P2] = e2;
            out.push(p);
        }
    }
    out
}

fn nonnegative_on_unit(variant: Variant, p: &[f64], scale: f64) -> bool {
    let mut g = [0.0; N_PARAMS];
    (0..=1000).all(|k| eval_with_gradient(variant, p, k as f64 / 1000.0, &mut g) >= -1e-9 * scale)
}

/// Least-squares fit of χ₁ + χ₂ + background to the bin densities.
///
/// Every start is run; the lowest-cost fit that stays non-negative on `[0, 1]`
/// wins. Fails if that fit did not converge.
pub fn fit_lineshape(hist: &Histogram, variant: Variant) -> Result<LineshapeFit> {
    fit_lineshape_from(hist, variant, &starts(hist, variant))
}

pub fn fit_lineshape_from(hist: &Histogram, variant: Variant, starts: &[Vec<f64>]) -> Result<LineshapeFit> {
    if hist.n_bins() < MIN_FIT_BINS {
        return Err(Error::invalid(format!(
            "lineshape fit needs at least {MIN_FIT_BINS} bins, histogram has {}",
            hist.n_bins()
        )));
    }
    let x = hist.centers();
    let problem = LineshapeProblem { variant, x: &x, y: &hist.density };
    let opts = fit_options();
    let peak_height = hist.density.iter().cloned().fold(0.0, f64::max);

    let mut best: Option<lsq::LmReport> = None;
    for s in starts {
        let report = lsq::minimize_report(&problem, s, &opts);
        if !report.cost.is_finite() || !nonnegative_on_unit(variant, &report.params, peak_height) {
            continue;
        }
        if best.as_ref().map_or(true, |b| report.cost < b.cost) {
            best = Some(report);
        }
    }
    let best = best.ok_or_else(|| Error::invalid("no lineshape start produced a non-negative fit"))?;
    if !best.converged {
        return Err(Error::FitNotConverged {
            iterations: best.iterations,
            rms: best.rms,
            best: best.params,
        });
    }
    Ok(LineshapeFit {
        variant,
        params: LineshapeParams::from_slice(&best.params),
        rms: best.rms,
        peak_height,
        iterations: best.iterations,
        covariance: best.covariance(x.len()),
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AreaReport {
    pub area_bright: f64,
    pub area_dark: f64,
    pub ratio: f64,
    pub background_area: f64,
}

/// Areas under χ₂ and χ₁ on `[0, 1]`, background excluded from both.
pub fn peak_area_ratio(fit: &LineshapeFit) -> Result<AreaReport> {
    area_report(fit.variant, &fit.params)
}

pub fn area_report(variant: Variant, params: &LineshapeParams) -> Result<AreaReport> {
    params.validate()?;
    let p = params.to_vec();
    let area_dark = adaptive_simpson(|x| low_impl(variant, &p, x, None), 0.0, 1.0, AREA_TOLERANCE);
    let area_bright = adaptive_simpson(|x| high_impl(variant, &p, x, None), 0.0, 1.0, AREA_TOLERANCE);
    let background_area = adaptive_simpson(|x| background_impl(&p, x, None), 0.0, 1.0, AREA_TOLERANCE);
    if area_dark < 10.0 * f64::EPSILON {
        return Err(Error::invalid(format!("degenerate fit: dark peak area {area_dark:.3e}")));
    }
    Ok(AreaReport {
        area_bright,
        area_dark,
        ratio: area_bright / area_dark,
        background_area,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(times: Vec<f64>, rows: Vec<Vec<f64>>) -> PTable {
        PTable {
            times,
            rows: rows.into_iter().enumerate().collect(),
        }
    }

    fn reference(variant: Variant) -> LineshapeParams {
        match variant {
            Variant::NonMarkov => LineshapeParams {
                h: [3.0, 30.0, 12.0, 0.2],
                w: [0.03, 0.02, 0.03, 0.05, 0.04, 0.06, 0.05, 0.04],
                p1: 0.1,
                p2: 0.9,
            },
            Variant::Markov => LineshapeParams {
                h: [40.0, 30.0, 12.0, 0.2],
                w: [0.04, 0.05, 0.03, 0.05, 0.04, 0.06, 0.05, 0.04],
                p1: 0.1,
                p2: 0.9,
            },
        }
    }

    fn synthetic(variant: Variant, params: &LineshapeParams, n_bins: usize) -> Histogram {
        let edges: Vec<f64> = (0..=n_bins).map(|b| b as f64 / n_bins as f64).collect();
        let density = edges
            .windows(2)
            .map(|e| eval_lineshape(variant, params, 0.5 * (e[0] + e[1])))
            .collect();
        Histogram {
            edges,
            density,
            stderr: vec![0.0; n_bins],
            counts: vec![0; n_bins],
            t_window: (0.0, 1.0),
            n_trajectories: 1,
        }
    }

    #[test]
    fn constant_one_fills_top_bin() {
        let times: Vec<f64> = (0..=10).map(|k| k as f64).collect();
        let h = histogram(&table(times, vec![vec![1.0; 11]; 3]), 0.01, None).unwrap();
        assert_eq!(h.n_bins(), 100);
        assert_eq!(h.counts[99], 3 * 10);
        assert!((h.density[99] - 100.0).abs() < 1e-12);
        assert!(h.density[..99].iter().all(|d| *d == 0.0));
        assert_eq!(h.t_window, (1.0, 10.0));
    }

    #[test]
    fn uniform_samples_are_flat() {
        let n = 20_000;
        let times: Vec<f64> = (0..n).map(|k| k as f64).collect();
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|r| (0..n).map(|k| ((k * 7919 + r * 104_729) % n) as f64 / n as f64).collect())
            .collect();
        let h = histogram(&table(times, rows), 0.05, Some((0.0, (n - 1) as f64))).unwrap();
        let total = (4 * n) as f64;
        for b in 0..20 {
            let p = 0.05;
            let sigma = (total * p * (1.0 - p)).sqrt();
            assert!((h.counts[b] as f64 - total * p).abs() < 5.0 * sigma, "bin {b}");
        }
        assert!((h.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_errors() {
        let t = table(vec![0.0, 1.0], vec![vec![0.5, 0.5]]);
        assert!(histogram(&t, 0.0, None).is_err());
        assert!(histogram(&t, 0.2, None).is_err());
        assert!(histogram(&t, 0.03, None).is_err());
        assert!(histogram(&t, 0.1, Some((0.2, 0.8))).is_err());
        assert!(histogram(&t, 0.1, Some((0.0, 5.0))).is_err());
        assert!(histogram(&table(vec![0.0, 1.0], vec![]), 0.1, None).is_err());
    }

    #[test]
    fn peaks_and_residence() {
        let times: Vec<f64> = (0..100).map(|k| k as f64).collect();
        let p: Vec<f64> = (0..100).map(|k| if k % 20 < 15 { 0.99 } else { 0.01 }).collect();
        let h = histogram(&table(times.clone(), vec![p.clone()]), 0.02, Some((0.0, 99.0))).unwrap();
        let pk = h.peaks();
        assert!(pk.is_bimodal());
        assert!(pk.low_p < 0.05 && pk.high_p > 0.95);
        let r = residence(&times, &p, 0.9, 0.1);
        assert!((r.bright_fraction - 0.75).abs() < 1e-12);
        assert!((r.dark_fraction - 0.25).abs() < 1e-12);
        assert_eq!(r.bright_intervals, 5);
        assert_eq!(r.dark_intervals, 5);
        assert!((r.longest_bright - 15.0).abs() < 1e-12);
    }

    #[test]
    fn lineshape_limits() {
        for v in [Variant::NonMarkov, Variant::Markov] {
            let p = reference(v);
            assert_eq!(chi_low(v, &p, 0.0), 0.0);
            assert_eq!(chi_high(v, &p, 0.0), 0.0);
            let mut q = p;
            q.p2 = q.p1;
            q.w[7] = q.w[6];
            for k in 0..=20 {
                assert_eq!(chi_background(&q, k as f64 / 20.0), 0.0);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for v in [Variant::NonMarkov, Variant::Markov] {
            let p = reference(v).to_vec();
            let mut g = [0.0; N_PARAMS];
            let mut scratch = [0.0; N_PARAMS];
            for &x in &[0.02, 0.13, 0.5, 0.87, 0.995] {
                eval_with_gradient(v, &p, x, &mut g);
                for i in 0..N_PARAMS {
                    let h = 1e-6 * p[i].abs().max(1e-3);
                    let mut a = p.clone();
                    let mut b = p.clone();
                    a[i] += h;
                    b[i] -= h;
                    let fd = (eval_with_gradient(v, &a, x, &mut scratch) - eval_with_gradient(v, &b, x, &mut scratch))
                        / (2.0 * h);
                    assert!((fd - g[i]).abs() < 1e-5 * (1.0 + fd.abs()), "{v} x={x} i={i}: {fd} vs {}", g[i]);
                }
            }
        }
    }

    #[test]
    fn synthetic_recovery() {
        for v in [Variant::NonMarkov, Variant::Markov] {
            let truth = reference(v);
            let hist = synthetic(v, &truth, 200);
            let fit = fit_lineshape(&hist, v).unwrap();
            assert!(fit.rms < 1e-6 * fit.peak_height, "{v}: rms {}", fit.rms);
            let want = area_report(v, &truth).unwrap();
            let got = peak_area_ratio(&fit).unwrap();
            assert!((got.ratio / want.ratio - 1.0).abs() < 0.01, "{v}: {} vs {}", got.ratio, want.ratio);
            for (a, b) in fit.params.to_vec().iter().zip(truth.to_vec()) {
                assert!((a / b - 1.0).abs() < 0.01, "{v}: {:?}", fit.params);
            }
        }
    }

    #[test]
    fn bin_doubling_is_stable() {
        let v = Variant::NonMarkov;
        let truth = reference(v);
        let a = peak_area_ratio(&fit_lineshape(&synthetic(v, &truth, 100), v).unwrap()).unwrap();
        let b = peak_area_ratio(&fit_lineshape(&synthetic(v, &truth, 200), v).unwrap()).unwrap();
        assert!((a.ratio / b.ratio - 1.0).abs() < 1e-3, "{} vs {}", a.ratio, b.ratio);
    }

    #[test]
    fn fit_rejects_coarse_histograms() {
        let v = Variant::Markov;
        assert!(fit_lineshape(&synthetic(v, &reference(v), 20), v).is_err());
    }

    /// Composite Simpson on `P = s^2`, which removes the sqrt cusp at zero.
    fn independent_area<F: Fn(f64) -> f64>(f: F) -> f64 {
        let n = 200_000;
        let h = 1.0 / n as f64;
        let g = |s: f64| 2.0 * s * f(s * s);
        let mut acc = g(0.0) + g(1.0);
        for k in 1..n {
            acc += if k % 2 == 1 { 4.0 } else { 2.0 } * g(k as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn constructed_ratio_sixteen() {
        for v in [Variant::NonMarkov, Variant::Markov] {
            let mut p = reference(v);
            let dark = independent_area(|x| chi_low(v, &p, x));
            p.h[1] = 1.0;
            p.h[2] = 0.0;
            let unit = independent_area(|x| chi_high(v, &p, x));
            p.h[1] = 16.0 * dark / unit;
            let r = area_report(v, &p).unwrap();
            assert!((r.ratio - 16.0).abs() < 1e-6, "{v}: {}", r.ratio);
        }
    }

    #[test]
    fn degenerate_dark_peak_is_an_error() {
        let mut p = reference(Variant::Markov);
        p.h[0] = 0.0;
        assert!(area_report(Variant::Markov, &p).is_err());
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("markov".parse::<Variant>().unwrap(), Variant::Markov);
        assert_eq!("NonMarkov".parse::<Variant>().unwrap(), Variant::NonMarkov);
        assert!("other".parse::<Variant>().is_err());
        assert_eq!(serde_json::to_string(&Variant::NonMarkov).unwrap(), "\"nonmarkov\"");
    }

    proptest! {
        #[test]
        fn histogram_mass_is_one(
            rows in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 12), 1..6),
            nb in prop::sample::select(vec![10usize, 20, 50, 100]),
        ) {
            let times: Vec<f64> = (0..12).map(|k| k as f64).collect();
            let h = histogram(&table(times, rows), 1.0 / nb as f64, Some((0.0, 11.0))).unwrap();
            prop_assert!((h.mass() - 1.0).abs() < 1e-12);
            prop_assert!(h.density.iter().all(|d| *d >= 0.0));
        }

        #[test]
        fn area_ratio_scales_with_amplitudes(a in 0.1f64..10.0, b in 0.1f64..10.0) {
            let v = Variant::NonMarkov;
            let base = area_report(v, &reference(v)).unwrap();
            let mut p = reference(v);
            p.h[0] *= a;
            p.h[1] *= b;
            p.h[2] *= b;
            let r = area_report(v, &p).unwrap();
            prop_assert!((r.ratio / (base.ratio * b / a) - 1.0).abs() < 1e-8);
        }
    }
}
