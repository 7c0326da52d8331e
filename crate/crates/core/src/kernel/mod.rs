//! Bath memory kernels as sums of complex exponentials,
//!
//! ```text
//! alpha(t, s) = sum_j A_j exp(-gamma_j |t - s|) exp(-i omega_j (t - s))
//! ```
//!
//! plus the finite-mode bath kernels used by the exact oracle. Units are
//! `hbar = k_B = 1` throughout.

mod fit;
mod io;

pub use fit::{fit_kernel, KernelFit};
pub use io::{parse_kernel, read_kernel_file, write_kernel};

use serde::{Deserialize, Serialize};

use crate::algebra::C64;
use crate::error::{Error, Result};
use crate::quad;

/// One exponential term of a memory kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelTerm {
    pub amplitude: f64,
    pub decay: f64,
    pub frequency: f64,
}

impl KernelTerm {
    pub fn new(amplitude: f64, decay: f64, frequency: f64) -> Result<Self> {
        let t = Self {
            amplitude,
            decay,
            frequency,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude.is_finite() && self.decay.is_finite() && self.frequency.is_finite()) {
            return Err(Error::invalid(format!("non-finite kernel term {self:?}")));
        }
        if self.amplitude < 0.0 {
            return Err(Error::invalid(format!("negative kernel amplitude {}", self.amplitude)));
        }
        if self.decay < 0.0 {
            return Err(Error::invalid(format!("negative kernel decay {}", self.decay)));
        }
        Ok(())
    }

    /// `A exp(-gamma |tau|) exp(-i omega tau)` at lag `tau = t - s`.
    #[inline]
    pub fn eval_lag(&self, tau: f64) -> C64 {
        let mag = self.amplitude * (-self.decay * tau.abs()).exp();
        C64::from_polar(mag, -self.frequency * tau)
    }

    /// `-(gamma + i omega)`, the rate of the auxiliary operators.
    #[inline]
    pub fn rate(&self) -> C64 {
        C64::new(-self.decay, -self.frequency)
    }
}

/// Anything that evaluates a bath correlation `alpha(t, s)`.
pub trait KernelSampler {
    fn eval(&self, t: f64, s: f64) -> C64;
}

/// A finite sum of [`KernelTerm`]s.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryKernel {
    pub terms: Vec<KernelTerm>,
}

impl MemoryKernel {
    pub fn new(terms: Vec<KernelTerm>) -> Result<Self> {
        for t in &terms {
            t.validate()?;
        }
        Ok(Self { terms })
    }

    pub fn single(amplitude: f64, decay: f64, frequency: f64) -> Result<Self> {
        Self::new(vec![KernelTerm::new(amplitude, decay, frequency)?])
    }

    /// The five-term kernel of the three-level magnesium model.
    pub fn mg24() -> Self {
        let rows = [
            (2.46740754, 0.00437729384, -0.0934233663),
            (5.52627445, 0.010808938, -0.0766453125),
            (10.0, 0.0271137624, 0.00120546934),
            (9.58905445, 0.0205613891, -0.0457549602),
            (8.16208273, 0.0269287619, 0.0599005113),
        ];
        Self {
            terms: rows
                .iter()
                .map(|&(a, g, w)| KernelTerm {
                    amplitude: a,
                    decay: g,
                    frequency: w,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// True when every amplitude is zero, i.e. the channel is decoupled.
    pub fn is_null(&self) -> bool {
        self.terms.iter().all(|t| t.amplitude == 0.0)
    }

    pub fn eval(&self, t: f64, s: f64) -> C64 {
        let tau = t - s;
        self.terms.iter().map(|term| term.eval_lag(tau)).sum()
    }

    /// `alpha(t, t) = sum_j A_j`.
    pub fn total_amplitude(&self) -> f64 {
        self.terms.iter().map(|t| t.amplitude).sum()
    }

    /// `tau = int_0^inf Re alpha(t, 0) dt = sum_j A_j gamma_j / (gamma_j^2 + omega_j^2)`.
    ///
    /// Undamped oscillating terms contribute zero; an undamped static term
    /// makes the integral diverge.
    pub fn memory_time(&self) -> Result<f64> {
        let mut sum = 0.0;
        for (index, t) in self.terms.iter().enumerate() {
            let denom = t.decay * t.decay + t.frequency * t.frequency;
            if denom == 0.0 {
                if t.amplitude > 0.0 {
                    return Err(Error::DivergentMemoryTime { index });
                }
                continue;
            }
            sum += t.amplitude * t.decay / denom;
        }
        Ok(sum)
    }

    /// Numerical `int_0^{50/gamma_min} Re alpha(t, 0) dt`, used to cross-check
    /// [`MemoryKernel::memory_time`]. Requires every term to be damped.
    pub fn memory_time_quadrature(&self, tol: f64) -> Result<f64> {
        let gamma_min = self
            .terms
            .iter()
            .filter(|t| t.amplitude > 0.0)
            .map(|t| t.decay)
            .fold(f64::INFINITY, f64::min);
        if !(gamma_min > 0.0) || !gamma_min.is_finite() {
            return Err(Error::invalid(
                "quadrature memory time needs every nonzero term damped",
            ));
        }
        let upper = 50.0 / gamma_min;
        Ok(quad::adaptive_simpson(|t| self.eval(t, 0.0).re, 0.0, upper, tol))
    }

    /// Same kernel with every frequency negated.
    pub fn conjugated(&self) -> Self {
        Self {
            terms: self
                .terms
                .iter()
                .map(|t| KernelTerm {
                    frequency: -t.frequency,
                    ..*t
                })
                .collect(),
        }
    }

    /// Same kernel with every amplitude multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.terms
                .iter()
                .map(|t| KernelTerm {
                    amplitude: t.amplitude * factor,
                    ..*t
                })
                .collect(),
        )
    }
}

impl KernelSampler for MemoryKernel {
    fn eval(&self, t: f64, s: f64) -> C64 {
        MemoryKernel::eval(self, t, s)
    }
}

/// A discrete bosonic mode coupled with strength `coupling`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub coupling: f64,
    pub frequency: f64,
}

/// A finite set of bath modes at temperature `temperature` (`k_B = hbar = 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeBath {
    pub modes: Vec<Mode>,
    pub temperature: f64,
}

impl ModeBath {
    pub fn zero_temperature(modes: Vec<Mode>) -> Self {
        Self {
            modes,
            temperature: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(Error::invalid(format!("bad temperature {}", self.temperature)));
        }
        for m in &self.modes {
            if !m.coupling.is_finite() || !m.frequency.is_finite() {
                return Err(Error::invalid(format!("non-finite mode {m:?}")));
            }
            if self.temperature > 0.0 && m.frequency <= 0.0 {
                return Err(Error::invalid(format!(
                    "mode frequency {} must be positive at T > 0",
                    m.frequency
                )));
            }
        }
        Ok(())
    }

    /// Boltzmann factor `w_j = exp(-omega_j / T)`; zero at `T = 0`.
    pub fn thermal_weight(&self, mode: &Mode) -> f64 {
        if self.temperature == 0.0 {
            0.0
        } else {
            (-mode.frequency / self.temperature).exp()
        }
    }
}

/// `alpha(t, s) = sum_j g_j^2 exp(-i omega_j (t - s))` for a vacuum bath.
pub fn mode_kernel_zero_t(bath: &ModeBath) -> Result<MemoryKernel> {
    for m in &bath.modes {
        if !m.coupling.is_finite() || !m.frequency.is_finite() {
            return Err(Error::invalid(format!("non-finite mode {m:?}")));
        }
    }
    Ok(MemoryKernel {
        terms: bath
            .modes
            .iter()
            .map(|m| KernelTerm {
                amplitude: m.coupling * m.coupling,
                decay: 0.0,
                frequency: m.frequency,
            })
            .collect(),
    })
}

/// Thermal kernel for Hermitian coupling,
/// `sum_j g_j^2 [coth(omega_j / 2T) cos omega_j tau - i sin omega_j tau]`.
///
/// Returned as the equivalent exponential sum: each mode becomes the pair
/// `g^2 (coth+1)/2 e^{-i omega tau} + g^2 (coth-1)/2 e^{+i omega tau}`.
pub fn mode_kernel_thermal(bath: &ModeBath) -> Result<MemoryKernel> {
    bath.validate()?;
    if bath.temperature == 0.0 {
        return mode_kernel_zero_t(bath);
    }
    let mut terms = Vec::with_capacity(2 * bath.modes.len());
    for m in &bath.modes {
        let g2 = m.coupling * m.coupling;
        let coth = 1.0 / (m.frequency / (2.0 * bath.temperature)).tanh();
        terms.push(KernelTerm {
            amplitude: g2 * (coth + 1.0) / 2.0,
            decay: 0.0,
            frequency: m.frequency,
        });
        terms.push(KernelTerm {
            amplitude: g2 * (coth - 1.0) / 2.0,
            decay: 0.0,
            frequency: -m.frequency,
        });
    }
    MemoryKernel::new(terms)
}

/// The pair `(alpha^-, alpha^+)` for non-Hermitian coupling at temperature T:
///
/// ```text
/// alpha^-(t,s) = sum_j g_j^2 / (1 - w_j)   e^{-i omega_j (t-s)}
/// alpha^+(t,s) = sum_j g_j^2 w_j/(1 - w_j) e^{+i omega_j (t-s)}
/// ```
pub fn mode_kernels_pm(bath: &ModeBath) -> Result<(MemoryKernel, MemoryKernel)> {
    bath.validate()?;
    let mut minus = Vec::with_capacity(bath.modes.len());
    let mut plus = Vec::with_capacity(bath.modes.len());
    for m in &bath.modes {
        let w = bath.thermal_weight(m);
        if (1.0 - w).abs() < f64::EPSILON {
            return Err(Error::invalid(format!(
                "thermal weight of mode at frequency {} is 1",
                m.frequency
            )));
        }
        let g2 = m.coupling * m.coupling;
        minus.push(KernelTerm {
            amplitude: g2 / (1.0 - w),
            decay: 0.0,
            frequency: m.frequency,
        });
        plus.push(KernelTerm {
            amplitude: g2 * w / (1.0 - w),
            decay: 0.0,
            frequency: -m.frequency,
        });
    }
    Ok((MemoryKernel::new(minus)?, MemoryKernel::new(plus)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn approx(a: C64, b: C64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn constant_kernel() {
        let k = MemoryKernel::single(1.0, 0.0, 0.0).unwrap();
        for &(t, s) in &[(0.0, 0.0), (3.0, -1.0), (-7.5, 2.0)] {
            assert_eq!(k.eval(t, s), C64::new(1.0, 0.0));
        }
    }

    #[test]
    fn mg24_diagonal_is_amplitude_sum() {
        let k = MemoryKernel::mg24();
        // Column sum of the amplitude table.
        let sum = 2.46740754 + 5.52627445 + 10.0 + 9.58905445 + 8.16208273;
        assert!((sum - 35.74481917f64).abs() < 1e-12);
        let v = k.eval(12.0, 12.0);
        assert!((v.re - sum).abs() < 1e-12 && v.im == 0.0);
    }

    #[test]
    fn mg24_memory_time() {
        let tau = MemoryKernel::mg24().memory_time().unwrap();
        assert!((tau - 508.6).abs() < 0.05, "tau = {tau}");
    }

    #[test]
    fn unit_exponential_memory_time() {
        let k = MemoryKernel::single(1.0, 1.0, 0.0).unwrap();
        assert!((k.memory_time().unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn memory_time_divergence() {
        let k = MemoryKernel::single(1.0, 0.0, 0.0).unwrap();
        assert!(matches!(k.memory_time(), Err(Error::DivergentMemoryTime { index: 0 })));
        let osc = MemoryKernel::single(1.0, 0.0, 2.0).unwrap();
        assert_eq!(osc.memory_time().unwrap(), 0.0);
    }

    #[test]
    fn memory_time_quadrature_agrees_for_mg24() {
        let k = MemoryKernel::mg24();
        let closed = k.memory_time().unwrap();
        let numeric = k.memory_time_quadrature(1e-9).unwrap();
        assert!(((numeric - closed) / closed).abs() < 1e-6, "{numeric} vs {closed}");
    }

    #[test]
    fn invalid_terms_rejected() {
        assert!(KernelTerm::new(-1.0, 0.1, 0.0).is_err());
        assert!(KernelTerm::new(1.0, -0.1, 0.0).is_err());
        assert!(KernelTerm::new(f64::NAN, 0.1, 0.0).is_err());
    }

    #[test]
    fn zero_t_mode_kernel() {
        let one = ModeBath::zero_temperature(vec![Mode {
            coupling: 1.0,
            frequency: 0.0,
        }]);
        let k = mode_kernel_zero_t(&one).unwrap();
        assert_eq!(k.eval(4.0, 1.0), C64::new(1.0, 0.0));

        let two = ModeBath::zero_temperature(vec![
            Mode {
                coupling: 0.3,
                frequency: 1.1,
            },
            Mode {
                coupling: -0.7,
                frequency: -0.4,
            },
        ]);
        let k = mode_kernel_zero_t(&two).unwrap();
        assert!((k.eval(0.0, 0.0).re - (0.09 + 0.49)).abs() < 1e-15);
        for &(t, s) in &[(0.3, 0.1), (2.0, 5.0), (-1.0, 0.7)] {
            let direct: C64 = two
                .modes
                .iter()
                .map(|m| m.coupling.powi(2) * C64::from_polar(1.0, -m.frequency * (t - s)))
                .sum();
            assert!(approx(k.eval(t, s), direct, 1e-15));
        }
    }

    fn thermal_direct(bath: &ModeBath, tau: f64) -> C64 {
        bath.modes
            .iter()
            .map(|m| {
                let coth = 1.0 / (m.frequency / (2.0 * bath.temperature)).tanh();
                m.coupling.powi(2)
                    * C64::new(coth * (m.frequency * tau).cos(), -(m.frequency * tau).sin())
            })
            .sum()
    }

    #[test]
    fn thermal_kernel_matches_formula() {
        let bath = ModeBath {
            modes: vec![
                Mode {
                    coupling: 0.2,
                    frequency: 0.8,
                },
                Mode {
                    coupling: 0.5,
                    frequency: 1.7,
                },
            ],
            temperature: 0.6,
        };
        let k = mode_kernel_thermal(&bath).unwrap();
        for tau in [0.0, 0.4, -2.2, 9.0] {
            assert!(approx(k.eval(tau, 0.0), thermal_direct(&bath, tau), 1e-13));
        }
    }

    #[test]
    fn thermal_kernel_low_temperature_limit() {
        let modes = vec![Mode {
            coupling: 0.4,
            frequency: 1.0,
        }];
        let cold = mode_kernel_thermal(&ModeBath {
            modes: modes.clone(),
            temperature: 1e-3,
        })
        .unwrap();
        let zero = mode_kernel_zero_t(&ModeBath::zero_temperature(modes.clone())).unwrap();
        for tau in [0.0, 0.3, 2.0] {
            assert!(approx(cold.eval(tau, 0.0), zero.eval(tau, 0.0), 1e-12));
        }
        // Imaginary part is T independent.
        let hot = mode_kernel_thermal(&ModeBath {
            modes,
            temperature: 5.0,
        })
        .unwrap();
        for tau in [0.3, 2.0, -1.4] {
            assert!((hot.eval(tau, 0.0).im - zero.eval(tau, 0.0).im).abs() < 1e-14);
        }
    }

    #[test]
    fn thermal_kernel_high_temperature() {
        // k_B T = 100 omega: Re alpha(0,0) ~ 2T sum g^2 / omega.
        let modes = vec![
            Mode {
                coupling: 0.1,
                frequency: 1.0,
            },
            Mode {
                coupling: 0.3,
                frequency: 2.0,
            },
        ];
        let t = 100.0 * 2.0;
        let bath = ModeBath {
            modes: modes.clone(),
            temperature: t,
        };
        let re = mode_kernel_thermal(&bath).unwrap().eval(0.0, 0.0).re;
        let approx_val: f64 = modes
            .iter()
            .map(|m| 2.0 * t * m.coupling.powi(2) / m.frequency)
            .sum();
        // coth x = 1/x + x/3 + ...; with x <= 1/200 the relative error is < 1e-4.
        assert!(((re - approx_val) / approx_val).abs() < 1e-4);
        assert!(mode_kernel_thermal(&ModeBath {
            modes: vec![Mode {
                coupling: 1.0,
                frequency: 0.0
            }],
            temperature: 1.0
        })
        .is_err());
    }

    #[test]
    fn pm_kernels() {
        let mode = Mode {
            coupling: 0.6,
            frequency: 1.3,
        };
        let (minus, plus) = mode_kernels_pm(&ModeBath::zero_temperature(vec![mode])).unwrap();
        for tau in [0.0, 1.0, -3.0] {
            assert_eq!(plus.eval(tau, 0.0), C64::new(0.0, 0.0));
        }
        let zero = mode_kernel_zero_t(&ModeBath::zero_temperature(vec![mode])).unwrap();
        assert!(approx(minus.eval(0.7, 0.0), zero.eval(0.7, 0.0), 1e-15));

        // w = exp(-omega/T) = 1/2.
        let t = mode.frequency / 2f64.ln();
        let (minus, plus) = mode_kernels_pm(&ModeBath {
            modes: vec![mode],
            temperature: t,
        })
        .unwrap();
        let ratio = plus.eval(0.0, 0.0).re / minus.eval(0.0, 0.0).re;
        assert!((ratio - 0.5).abs() < 1e-14);
        for &(a, b) in &[(0.2, 1.9), (4.0, -1.0)] {
            assert!(approx(plus.eval(b, a), plus.eval(a, b).conj(), 1e-15));
        }
        // Explicit e^{+i omega tau} dependence of alpha^+.
        let direct = 0.36 * (0.5 / 0.5) * C64::from_polar(1.0, mode.frequency * 0.9);
        assert!(approx(plus.eval(0.9, 0.0), direct, 1e-14));

        assert!(mode_kernels_pm(&ModeBath {
            modes: vec![Mode {
                coupling: 1.0,
                frequency: 0.0
            }],
            temperature: 1.0
        })
        .is_err());
    }

    proptest! {
        #[test]
        fn hermitian_symmetry(t in -500.0f64..500.0, s in -500.0f64..500.0) {
            let k = MemoryKernel::mg24();
            prop_assert!(approx(k.eval(s, t), k.eval(t, s).conj(), 1e-12));
        }

        #[test]
        fn closed_form_matches_quadrature(
            terms in proptest::collection::vec((0.1f64..5.0, 0.05f64..2.0, -3.0f64..3.0), 1..4)
        ) {
            let k = MemoryKernel::new(
                terms.into_iter().map(|(a, g, w)| KernelTerm::new(a, g, w).unwrap()).collect()
            ).unwrap();
            let closed = k.memory_time().unwrap();
            let numeric = k.memory_time_quadrature(1e-11).unwrap();
            // Oscillating terms can make tau tiny; compare against the kernel scale too.
            let scale = closed.abs().max(1e-3 * k.total_amplitude());
            prop_assert!((numeric - closed).abs() / scale < 1e-6, "{} vs {}", numeric, closed);
        }
    }
}
