//! Complex colored noise `z_t = sum_j xi_t^j` whose covariance reproduces a
//! memory kernel. Each `xi^j` is a complex Ornstein–Uhlenbeck process
//! advanced with its exact transition law, so any step size is unbiased.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::algebra::C64;
use crate::error::{Error, Result};
use crate::kernel::{KernelTerm, MemoryKernel};

/// Per-trajectory random stream.
pub type StreamRng = ChaCha8Rng;

/// Independent stream `stream` under `master_seed`. Streams never overlap,
/// so trajectory `i` sees the same numbers no matter which worker runs it.
pub fn stream_rng(master_seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// `(eta1 + i eta2) / sqrt(2)`: unit variance, zero pseudo-variance.
#[inline]
pub fn standard_complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Complex Wiener increment with `M[dW dW] = 0`, `M[|dW|^2] = dt`.
#[inline]
pub fn complex_wiener_increment<R: Rng + ?Sized>(rng: &mut R, dt: f64) -> C64 {
    debug_assert!(dt > 0.0);
    standard_complex_normal(rng) * dt.sqrt()
}

/// Which way the oscillation of each OU term turns.
///
/// `KernelCovariance` makes the measured `M[z_t^* z_s]` equal
/// `alpha(t, s)`. `AsWritten` integrates
/// `dxi = -(gamma + i omega) xi dt + sqrt(2 gamma A) dW` literally, which gives
/// `M[z_t z_s^*] = alpha(t, s)` instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrequencySign {
    #[default]
    KernelCovariance,
    AsWritten,
}

/// Noise generator for one coupling channel.
#[derive(Debug, Clone)]
pub struct NoiseChannel {
    terms: Vec<KernelTerm>,
    states: Vec<C64>,
    sign: FrequencySign,
}

impl NoiseChannel {
    /// All states start at zero; call one of the `init_*` methods before use.
    pub fn new(kernel: &MemoryKernel, sign: FrequencySign) -> Self {
        Self {
            terms: kernel.terms.clone(),
            states: vec![C64::new(0.0, 0.0); kernel.len()],
            sign,
        }
    }

    pub fn terms(&self) -> &[KernelTerm] {
        &self.terms
    }

    pub fn states(&self) -> &[C64] {
        &self.states
    }

    pub fn sign(&self) -> FrequencySign {
        self.sign
    }

    /// Draw every term from its stationary law (Re, Im independent with
    /// variance `A/2`). Equivalent to integrating from the infinite past.
    pub fn init_stationary<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        if let Some(t) = self.terms.iter().find(|t| t.decay == 0.0) {
            return Err(Error::invalid(format!(
                "undamped noise term {t:?} has no stationary state"
            )));
        }
        self.init_equilibrium(rng);
        Ok(())
    }

    /// Like [`init_stationary`](Self::init_stationary) but also accepts
    /// undamped terms, which become a static Gaussian of variance `A` rotating
    /// at their frequency (the finite-bath case).
    pub fn init_equilibrium<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for (x, t) in self.states.iter_mut().zip(&self.terms) {
            *x = if t.amplitude == 0.0 {
                C64::new(0.0, 0.0)
            } else {
                standard_complex_normal(rng) * t.amplitude.sqrt()
            };
        }
    }

    /// Start from zero and run the exact update for `10 / gamma_min`.
    pub fn init_burn_in<R: Rng + ?Sized>(&mut self, rng: &mut R, dt: f64) -> Result<()> {
        let gamma_min = self.terms.iter().map(|t| t.decay).fold(f64::INFINITY, f64::min);
        if !(gamma_min > 0.0) {
            return Err(Error::invalid("burn-in needs every term damped"));
        }
        if !(dt > 0.0) {
            return Err(Error::invalid("burn-in step must be positive"));
        }
        self.states.iter_mut().for_each(|x| *x = C64::new(0.0, 0.0));
        let steps = (10.0 / gamma_min / dt).ceil() as usize;
        for _ in 0..steps {
            self.step(dt, rng);
        }
        Ok(())
    }

    /// Exact OU transition over `dt`:
    /// `xi <- e^{-(gamma -/+ i omega) dt} xi + sqrt(A (1 - e^{-2 gamma dt})) eta`.
    pub fn step<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) {
        debug_assert!(dt > 0.0);
        let turn = match self.sign {
            FrequencySign::KernelCovariance => 1.0,
            FrequencySign::AsWritten => -1.0,
        };
        for (x, t) in self.states.iter_mut().zip(&self.terms) {
            let decay = (-t.decay * dt).exp();
            let rot = C64::from_polar(decay, turn * t.frequency * dt);
            *x *= rot;
            if t.decay > 0.0 && t.amplitude > 0.0 {
                let sd = (t.amplitude * -(-2.0 * t.decay * dt).exp_m1()).sqrt();
                *x += standard_complex_normal(rng) * sd;
            }
        }
    }

    /// `z = sum_j xi_j`.
    pub fn z(&self) -> C64 {
        self.states.iter().sum()
    }
}

/// Monte Carlo estimate of the two noise correlators at a set of lags.
#[derive(Debug, Clone, Serialize)]
pub struct CovarianceEstimate {
    pub lags: Vec<f64>,
    /// `M[z_{s+lag}^* z_s]`.
    pub cov: Vec<C64>,
    /// `M[z_{s+lag} z_s]`.
    pub pseudo_cov: Vec<C64>,
    /// Standard errors of `cov` (re, im).
    pub cov_stderr: Vec<(f64, f64)>,
    pub pseudo_stderr: Vec<(f64, f64)>,
    pub n_paths: usize,
}

#[derive(Default, Clone, Copy)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn stderr(&self) -> f64 {
        if self.n < 2.0 {
            return f64::INFINITY;
        }
        (self.m2 / (self.n - 1.0) / self.n).sqrt()
    }
}

/// Estimate `M[z_t^* z_s]` and `M[z_t z_s]` over `n_paths` independent
/// stationary paths, one stream per path.
pub fn estimate_covariance(
    kernel: &MemoryKernel,
    sign: FrequencySign,
    n_paths: usize,
    lags: &[f64],
    master_seed: u64,
) -> Result<CovarianceEstimate> {
    if n_paths < 2 {
        return Err(Error::invalid("need at least two noise paths"));
    }
    if lags.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::invalid("lags must be finite and non-negative"));
    }
    let mut order: Vec<usize> = (0..lags.len()).collect();
    order.sort_by(|&a, &b| lags[a].total_cmp(&lags[b]));

    let mut acc = vec![[Moments::default(); 4]; lags.len()];
    for path in 0..n_paths {
        let mut rng = stream_rng(master_seed, path as u64);
        let mut ch = NoiseChannel::new(kernel, sign);
        ch.init_stationary(&mut rng)?;
        let z_s = ch.z();
        let mut now = 0.0;
        for &k in &order {
            let lag = lags[k];
            if lag > now {
                ch.step(lag - now, &mut rng);
                now = lag;
            }
            let z_t = ch.z();
            let c = z_t.conj() * z_s;
            let p = z_t * z_s;
            acc[k][0].push(c.re);
            acc[k][1].push(c.im);
            acc[k][2].push(p.re);
            acc[k][3].push(p.im);
        }
    }
    Ok(CovarianceEstimate {
        lags: lags.to_vec(),
        cov: acc.iter().map(|m| C64::new(m[0].mean, m[1].mean)).collect(),
        pseudo_cov: acc.iter().map(|m| C64::new(m[2].mean, m[3].mean)).collect(),
        cov_stderr: acc.iter().map(|m| (m[0].stderr(), m[1].stderr())).collect(),
        pseudo_stderr: acc.iter().map(|m| (m[2].stderr(), m[3].stderr())).collect(),
        n_paths,
    })
}
