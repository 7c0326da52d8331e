//! Least-squares fit of an exponential sum to sampled `alpha(t, 0)` values.

use serde::Serialize;

use super::{KernelTerm, MemoryKernel};
use crate::algebra::C64;
use crate::error::{Error, Result};
use crate::lsq::{self, LmOptions, LmReport, Residuals};

#[derive(Debug, Clone, Serialize)]
pub struct KernelFit {
    /// Fitted terms, sorted by descending amplitude.
    pub kernel: MemoryKernel,
    /// `sqrt(mean_i |alpha_fit(t_i) - sample_i|^2)`.
    pub rms: f64,
    pub iterations: usize,
    /// Index of the start point that produced the fit.
    pub start: usize,
}

struct ExpSum<'a> {
    samples: &'a [(f64, C64)],
    terms: usize,
}

impl Residuals for ExpSum<'_> {
    fn n_params(&self) -> usize {
        3 * self.terms
    }

    fn n_residuals(&self) -> usize {
        2 * self.samples.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for (i, &(t, y)) in self.samples.iter().enumerate() {
            let model: C64 = p
                .chunks_exact(3)
                .map(|c| C64::from_polar(c[0] * (-c[1] * t.abs()).exp(), -c[2] * t))
                .sum();
            let r = model - y;
            out[2 * i] = r.re;
            out[2 * i + 1] = r.im;
        }
    }

    fn jacobian(&self, p: &[f64], jac: &mut [f64]) {
        let np = self.n_params();
        for (i, &(t, _)) in self.samples.iter().enumerate() {
            let (re_row, im_row) = jac[2 * i * np..(2 * i + 2) * np].split_at_mut(np);
            for (j, c) in p.chunks_exact(3).enumerate() {
                let e = C64::from_polar((-c[1] * t.abs()).exp(), -c[2] * t);
                let d_amp = e;
                let d_decay = e * (-c[0] * t.abs());
                let d_freq = e * C64::new(0.0, -c[0] * t);
                for (k, d) in [d_amp, d_decay, d_freq].into_iter().enumerate() {
                    re_row[3 * j + k] = d.re;
                    im_row[3 * j + k] = d.im;
                }
            }
        }
    }
}

fn pack(terms: &[KernelTerm]) -> Vec<f64> {
    terms
        .iter()
        .flat_map(|t| [t.amplitude, t.decay, t.frequency])
        .collect()
}

fn unpack(p: &[f64]) -> Vec<KernelTerm> {
    p.chunks_exact(3)
        .map(|c| KernelTerm {
            amplitude: c[0],
            decay: c[1],
            frequency: c[2],
        })
        .collect()
}

/// Local maxima of `|sum_i w_i y_i e^{i omega t_i}|` over a uniform frequency
/// grid, strongest first.
fn spectral_peaks(samples: &[(f64, C64)], min_spacing: f64, span: f64) -> Vec<f64> {
    let omega_max = std::f64::consts::PI / min_spacing;
    let n_grid = ((8.0 * span / min_spacing) as usize).clamp(64, 4096);
    let grid: Vec<f64> = (0..=n_grid)
        .map(|k| -omega_max + 2.0 * omega_max * k as f64 / n_grid as f64)
        .collect();
    let power: Vec<f64> = grid
        .iter()
        .map(|&w| {
            samples
                .iter()
                .map(|&(t, y)| y * C64::from_polar(1.0, w * t))
                .sum::<C64>()
                .norm()
        })
        .collect();
    let mut peaks: Vec<(f64, f64)> = (1..grid.len() - 1)
        .filter(|&k| power[k] >= power[k - 1] && power[k] >= power[k + 1])
        .map(|k| (power[k], grid[k]))
        .collect();
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0));
    peaks.into_iter().map(|(_, w)| w).collect()
}

fn default_starts(samples: &[(f64, C64)], m: usize) -> Vec<Vec<KernelTerm>> {
    let mut times: Vec<f64> = samples.iter().map(|s| s.0).collect();
    times.sort_by(f64::total_cmp);
    let span = (times[times.len() - 1] - times[0]).max(f64::MIN_POSITIVE);
    let min_spacing = times
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| *d > 0.0)
        .fold(span, f64::min);

    let y0 = samples
        .iter()
        .min_by(|a, b| a.0.abs().total_cmp(&b.0.abs()))
        .map(|s| s.1.norm())
        .unwrap_or(1.0);
    let amp = (y0 / m as f64).max(1e-12);

    let mut omegas = spectral_peaks(samples, min_spacing, span);
    if omegas.is_empty() {
        omegas.push(0.0);
    }
    while omegas.len() < m {
        omegas.push(omegas[omegas.len() % omegas.len().max(1)]);
    }
    omegas.truncate(m);

    let gamma_lo = 1.0 / span;
    let gamma_hi = (0.1 / min_spacing).max(gamma_lo);
    let gammas = |scale: f64| -> Vec<f64> {
        (0..m)
            .map(|j| {
                let frac = if m == 1 { 0.5 } else { j as f64 / (m - 1) as f64 };
                scale * gamma_lo * (gamma_hi / gamma_lo).powf(frac)
            })
            .collect()
    };

    let build = |g: Vec<f64>, w: &[f64]| -> Vec<KernelTerm> {
        g.into_iter()
            .zip(w)
            .map(|(decay, &frequency)| KernelTerm {
                amplitude: amp,
                decay,
                frequency,
            })
            .collect()
    };
    let reversed: Vec<f64> = omegas.iter().rev().copied().collect();
    vec![
        build(gammas(1.0), &omegas),
        build(gammas(0.3), &omegas),
        build(gammas(3.0), &omegas),
        build(gammas(1.0), &reversed),
    ]
}

/// Fit an `m`-term exponential sum to `(t, alpha(t, 0))` samples by damped
/// Gauss–Newton. Without `init`, a fixed set of deterministic start points is
/// tried and the lowest residual wins.
pub fn fit_kernel(samples: &[(f64, C64)], m: usize, init: Option<&[KernelTerm]>) -> Result<KernelFit> {
    if m == 0 {
        return Err(Error::invalid("term count must be at least 1"));
    }
    if samples.len() < 4 * m {
        return Err(Error::invalid(format!(
            "{} samples are too few for {m} terms (need {})",
            samples.len(),
            4 * m
        )));
    }
    if samples
        .iter()
        .any(|(t, y)| !t.is_finite() || !y.re.is_finite() || !y.im.is_finite())
    {
        return Err(Error::invalid("non-finite kernel sample"));
    }

    let starts = match init {
        Some(terms) => {
            if terms.len() != m {
                return Err(Error::invalid(format!(
                    "init has {} terms, expected {m}",
                    terms.len()
                )));
            }
            vec![terms.to_vec()]
        }
        None => default_starts(samples, m),
    };

    let problem = ExpSum { samples, terms: m };
    let scale: f64 = samples.iter().map(|s| s.1.norm_sqr()).sum::<f64>().max(f64::MIN_POSITIVE);
    let opts = LmOptions {
        max_iterations: 2000,
        cost_floor: 1e-30 * scale,
        lower: Some(
            (0..m)
                .flat_map(|_| [0.0, 0.0, f64::NEG_INFINITY])
                .collect(),
        ),
        ..Default::default()
    };

    let mut best: Option<(usize, LmReport)> = None;
    for (index, start) in starts.iter().enumerate() {
        let rep = lsq::minimize_report(&problem, &pack(start), &opts);
        let better = match &best {
            None => true,
            Some((_, b)) => (rep.converged && !b.converged) || (rep.converged == b.converged && rep.cost < b.cost),
        };
        if better {
            best = Some((index, rep));
        }
    }
    let (start, rep) = best.expect("at least one start");
    let rms = (2.0 * rep.cost / samples.len() as f64).sqrt();
    if !rep.converged {
        return Err(Error::FitNotConverged {
            iterations: rep.iterations,
            rms,
            best: rep.params,
        });
    }
    let mut terms = unpack(&rep.params);
    terms.sort_by(|a, b| b.amplitude.total_cmp(&a.amplitude));
    Ok(KernelFit {
        kernel: MemoryKernel { terms },
        rms,
        iterations: rep.iterations,
        start,
    })
}
