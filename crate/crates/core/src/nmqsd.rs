//! Norm-preserving propagator form of non-Markovian quantum state diffusion.
//!
//! The state vector is never integrated directly. Instead the propagator
//! `U_t` (with `psi_t = U_t psi_0`), its inverse, one auxiliary operator
//! `V^{j,k}` and one scalar shift `y^{j,k}` per kernel term are advanced as a
//! closed ODE driven by the colored noises of each channel.

use serde::Serialize;

use crate::algebra::{kern, CMatrix, CVector, C64, ONE, ZERO};
use crate::error::{Error, Result};
use crate::kernel::KernelTerm;
use crate::models::{Channel, ModelSpec};
use crate::noise::{stream_rng, FrequencySign, NoiseChannel, StreamRng};

/// Default step for the magnesium kernel, from a step-halving study of the
/// inverse residual.
pub const DEFAULT_DT: f64 = 0.025;

/// Step size, duration and output cadence of one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    pub t_max: f64,
    pub dt: f64,
    pub sample_every: f64,
}

impl TimeGrid {
    pub fn new(t_max: f64, dt: f64, sample_every: f64) -> Result<Self> {
        let g = Self {
            t_max,
            dt,
            sample_every,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_max > 0.0) || !self.t_max.is_finite() {
            return Err(Error::invalid("t_max must be positive"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::invalid("dt must be positive"));
        }
        if !(self.sample_every >= self.dt * (1.0 - 1e-9)) {
            return Err(Error::invalid("sample_every must be at least dt"));
        }
        let ratio = self.sample_every / self.dt;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio {
            return Err(Error::invalid("sample_every must be a multiple of dt"));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_max / self.dt - 1e-9).ceil() as usize
    }

    /// Steps between recorded samples.
    pub fn stride(&self) -> usize {
        ((self.sample_every / self.dt).round() as usize).max(1)
    }

    pub fn n_samples(&self) -> usize {
        self.n_steps() / self.stride() + 1
    }

    pub fn sample_time(&self, k: usize) -> f64 {
        (k * self.stride()) as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_samples()).map(|k| self.sample_time(k)).collect()
    }
}

/// Health thresholds on `||U U^{-1} - I||_F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    pub soft: f64,
    pub hard: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            soft: 1e-6,
            hard: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct NmqsdOptions {
    pub sign: FrequencySign,
    pub tolerances: Tolerances,
}

/// One recorded point of a trajectory.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub index: usize,
    pub t: f64,
    /// Normalized state.
    pub psi: &'a [C64],
    pub p: f64,
    pub norm: f64,
    pub inv_residual: f64,
    pub c: C64,
}

/// Per-trajectory health summary.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct TrajectoryStats {
    pub steps: usize,
    pub max_inv_residual: f64,
    /// Steps whose residual exceeded the soft tolerance.
    pub soft_violations: usize,
    pub max_norm_deviation: f64,
}

/// Fully materialized trajectory.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryOutput {
    pub times: Vec<f64>,
    pub psi: Vec<CVector>,
    pub p: Vec<f64>,
    pub norm: Vec<f64>,
    pub inv_residual: Vec<f64>,
    pub c: Vec<C64>,
    pub stats: TrajectoryStats,
}

impl TrajectoryOutput {
    pub(crate) fn push(&mut self, s: &Sample<'_>) {
        self.times.push(s.t);
        self.psi.push(CVector::from_slice(s.psi));
        self.p.push(s.p);
        self.norm.push(s.norm);
        self.inv_residual.push(s.inv_residual);
        self.c.push(s.c);
    }

    /// CSV with columns `t,P,norm,inv_residual,re_C,im_C`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,P,norm,inv_residual,re_C,im_C\n");
        for i in 0..self.times.len() {
            out.push_str(&crate::csv_row(&[
                self.times[i],
                self.p[i],
                self.norm[i],
                self.inv_residual[i],
                self.c[i].re,
                self.c[i].im,
            ]));
        }
        out
    }
}

struct ChannelPlan {
    l: Vec<C64>,
    ld: Vec<C64>,
    active: bool,
    minus: Vec<KernelTerm>,
    plus: Vec<KernelTerm>,
    v_minus: usize,
    v_plus: usize,
    y_minus: usize,
    y_plus: usize,
}

/// Precomputed operator data and flat-state layout for one model.
///
/// Layout: `U`, `U^{-1}`, then every channel's `V^-` blocks followed by its
/// `V^+` blocks, then all `y^-`/`y^+` scalars.
pub struct Propagator {
    d: usize,
    minus_ih: Vec<C64>,
    channels: Vec<ChannelPlan>,
    psi0: Vec<C64>,
    len: usize,
}

#[derive(Clone)]
struct Work {
    psi: Vec<C64>,
    phi: Vec<C64>,
    tmpv: Vec<C64>,
    lu: Vec<C64>,
    ldu: Vec<C64>,
    a: Vec<C64>,
    b: Vec<C64>,
    s: Vec<C64>,
    m: Vec<C64>,
    w: Vec<C64>,
    du: Vec<C64>,
}

impl Work {
    fn new(d: usize) -> Self {
        let b = d * d;
        Self {
            psi: vec![ZERO; d],
            phi: vec![ZERO; d],
            tmpv: vec![ZERO; d],
            lu: vec![ZERO; b],
            ldu: vec![ZERO; b],
            a: vec![ZERO; b],
            b: vec![ZERO; b],
            s: vec![ZERO; b],
            m: vec![ZERO; b],
            w: vec![ZERO; b],
            du: vec![ZERO; b],
        }
    }
}

fn sum_blocks(data: &[C64], start: usize, count: usize, b: usize, out: &mut [C64]) {
    out.fill(ZERO);
    for j in 0..count {
        for (o, v) in out.iter_mut().zip(&data[start + j * b..start + (j + 1) * b]) {
            *o += v;
        }
    }
}

/// `-(gamma - i omega)`, the decay of the shifts `y`.
fn shift_rate(t: &KernelTerm) -> C64 {
    C64::new(-t.decay, t.frequency)
}

impl Propagator {
    pub fn new(model: &ModelSpec, psi0: &CVector) -> Result<Self> {
        model.validate()?;
        let d = model.dim();
        if psi0.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: psi0.dim(),
            });
        }
        if (psi0.norm() - 1.0).abs() > 1e-10 {
            return Err(Error::invalid("initial state must be normalized"));
        }
        let b = d * d;
        let mut offset = 2 * b;
        let mut plans: Vec<ChannelPlan> = model
            .channels
            .iter()
            .map(|ch: &Channel| {
                let minus = ch.minus_kernel.terms.clone();
                let plus = ch
                    .plus_kernel
                    .as_ref()
                    .map(|k| k.terms.clone())
                    .unwrap_or_default();
                let v_minus = offset;
                offset += minus.len() * b;
                let v_plus = offset;
                offset += plus.len() * b;
                ChannelPlan {
                    l: ch.l.as_slice().to_vec(),
                    ld: ch.l.adjoint().as_slice().to_vec(),
                    active: !ch.l.is_zero(),
                    minus,
                    plus,
                    v_minus,
                    v_plus,
                    y_minus: 0,
                    y_plus: 0,
                }
            })
            .collect();
        for p in &mut plans {
            p.y_minus = offset;
            offset += p.minus.len();
            p.y_plus = offset;
            offset += p.plus.len();
        }
        Ok(Self {
            d,
            minus_ih: model.h.scale(C64::new(0.0, -1.0)).as_slice().to_vec(),
            channels: plans,
            psi0: psi0.as_slice().to_vec(),
            len: offset,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Length of the flat augmented state.
    pub fn state_len(&self) -> usize {
        self.len
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    /// `U = U^{-1} = I`, all `V` and `y` zero.
    pub fn initial_state(&self) -> Vec<C64> {
        let mut x = vec![ZERO; self.len];
        let b = self.d * self.d;
        for i in 0..self.d {
            x[i * self.d + i] = ONE;
            x[b + i * self.d + i] = ONE;
        }
        x
    }

    pub fn u<'a>(&self, x: &'a [C64]) -> &'a [C64] {
        &x[..self.d * self.d]
    }

    pub fn u_inv<'a>(&self, x: &'a [C64]) -> &'a [C64] {
        let b = self.d * self.d;
        &x[b..2 * b]
    }

    /// `V^{j,k}_-` (or `_+` when `plus`).
    pub fn v_block<'a>(&self, x: &'a [C64], k: usize, j: usize, plus: bool) -> &'a [C64] {
        let b = self.d * self.d;
        let p = &self.channels[k];
        let start = if plus { p.v_plus } else { p.v_minus } + j * b;
        &x[start..start + b]
    }

    pub fn y_value(&self, x: &[C64], k: usize, j: usize, plus: bool) -> C64 {
        let p = &self.channels[k];
        x[if plus { p.y_plus } else { p.y_minus } + j]
    }

    /// Time derivative of the augmented state for fixed noise values; returns
    /// the `C_t` used in the assembly.
    fn drift_into(&self, x: &[C64], zm: &[C64], zp: &[C64], out: &mut [C64], w: &mut Work) -> C64 {
        let d = self.d;
        let b = d * d;
        let (u, rest) = x.split_at(b);
        let uinv = &rest[..b];

        kern::matvec(u, &self.psi0, &mut w.psi, d);
        let n2: f64 = w.psi.iter().map(|z| z.norm_sqr()).sum();
        let inv_n = 1.0 / n2.sqrt();
        for (f, p) in w.phi.iter_mut().zip(&w.psi) {
            *f = p * inv_n;
        }

        kern::matmul(&self.minus_ih, u, &mut w.du, d);
        let mut c = ZERO;

        for (k, ch) in self.channels.iter().enumerate() {
            if !ch.active {
                out[ch.v_minus..ch.v_minus + ch.minus.len() * b].fill(ZERO);
                out[ch.v_plus..ch.v_plus + ch.plus.len() * b].fill(ZERO);
                for (j, t) in ch.minus.iter().enumerate() {
                    out[ch.y_minus + j] = shift_rate(t) * x[ch.y_minus + j];
                }
                for (j, t) in ch.plus.iter().enumerate() {
                    out[ch.y_plus + j] = shift_rate(t) * x[ch.y_plus + j];
                }
                for (j, t) in ch.minus.iter().enumerate() {
                    let s = ch.v_minus + j * b;
                    kern::axpy(t.rate(), &x[s..s + b], &mut out[s..s + b]);
                }
                for (j, t) in ch.plus.iter().enumerate() {
                    let s = ch.v_plus + j * b;
                    kern::axpy(t.rate(), &x[s..s + b], &mut out[s..s + b]);
                }
                continue;
            }
            let el = kern::sandwich(&w.phi, &ch.l, d);
            let eld = el.conj();

            kern::matmul(&ch.l, u, &mut w.lu, d);
            kern::matmul(&ch.ld, u, &mut w.ldu, d);
            // a = (L - <L>) U, b = (L^dag - <L^dag>) U
            for i in 0..b {
                w.a[i] = w.lu[i] - el * u[i];
                w.b[i] = w.ldu[i] - eld * u[i];
            }

            let y_m: C64 = x[ch.y_minus..ch.y_minus + ch.minus.len()].iter().sum();
            kern::axpy(zm[k] + y_m, &w.a, &mut w.du);
            if !ch.minus.is_empty() {
                sum_blocks(x, ch.v_minus, ch.minus.len(), b, &mut w.s);
                kern::matmul(&w.b, &w.s, &mut w.m, d);
                kern::axpy(-ONE, &w.m, &mut w.du);
                kern::matvec(&w.m, &self.psi0, &mut w.tmpv, d);
                c += kern::dot(&w.psi, &w.tmpv);
            }

            if !ch.plus.is_empty() {
                let y_p: C64 = x[ch.y_plus..ch.y_plus + ch.plus.len()].iter().sum();
                kern::axpy(zp[k] + y_p, &w.b, &mut w.du);
                sum_blocks(x, ch.v_plus, ch.plus.len(), b, &mut w.s);
                kern::matmul(&w.a, &w.s, &mut w.m, d);
                kern::axpy(-ONE, &w.m, &mut w.du);
                kern::matvec(&w.m, &self.psi0, &mut w.tmpv, d);
                c += kern::dot(&w.psi, &w.tmpv);
            }

            // dV^- = rate V^- + A U^{-1} L U
            kern::matmul(uinv, &w.lu, &mut w.w, d);
            for (j, t) in ch.minus.iter().enumerate() {
                let s = ch.v_minus + j * b;
                let rate = t.rate();
                for i in 0..b {
                    out[s + i] = rate * x[s + i] + w.w[i] * t.amplitude;
                }
                out[ch.y_minus + j] = shift_rate(t) * x[ch.y_minus + j] + eld * t.amplitude;
            }
            if !ch.plus.is_empty() {
                kern::matmul(uinv, &w.ldu, &mut w.w, d);
                for (j, t) in ch.plus.iter().enumerate() {
                    let s = ch.v_plus + j * b;
                    let rate = t.rate();
                    for i in 0..b {
                        out[s + i] = rate * x[s + i] + w.w[i] * t.amplitude;
                    }
                    out[ch.y_plus + j] = shift_rate(t) * x[ch.y_plus + j] + el * t.amplitude;
                }
            }
        }

        kern::axpy(c, u, &mut w.du);
        out[..b].copy_from_slice(&w.du);
        // dU^{-1} = -U^{-1} dU U^{-1}
        kern::matmul(&w.du, uinv, &mut w.m, d);
        kern::matmul(uinv, &w.m, &mut out[b..2 * b], d);
        for v in &mut out[b..2 * b] {
            *v = -*v;
        }
        c
    }

    /// Allocating wrapper around the drift, for inspection and tests.
    pub fn drift(&self, x: &[C64], z_minus: &[C64], z_plus: &[C64]) -> Result<(Vec<C64>, C64)> {
        self.check_inputs(x, z_minus, z_plus)?;
        let mut out = vec![ZERO; self.len];
        let mut w = Work::new(self.d);
        let c = self.drift_into(x, z_minus, z_plus, &mut out, &mut w);
        Ok((out, c))
    }

    /// `C_t` of the given state.
    pub fn c_function(&self, x: &[C64]) -> Result<C64> {
        let zeros = vec![ZERO; self.channels.len()];
        Ok(self.drift(x, &zeros, &zeros)?.1)
    }

    fn check_inputs(&self, x: &[C64], zm: &[C64], zp: &[C64]) -> Result<()> {
        if x.len() != self.len {
            return Err(Error::DimensionMismatch {
                expected: self.len,
                got: x.len(),
            });
        }
        for z in [zm, zp] {
            if z.len() != self.channels.len() {
                return Err(Error::DimensionMismatch {
                    expected: self.channels.len(),
                    got: z.len(),
                });
            }
        }
        Ok(())
    }

    /// `psi = U psi_0` (unnormalized).
    pub fn psi(&self, x: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; self.d];
        kern::matvec(self.u(x), &self.psi0, &mut out, self.d);
        out
    }

    /// `||U U^{-1} - I||_F`.
    pub fn inverse_residual(&self, x: &[C64]) -> f64 {
        let d = self.d;
        let mut prod = vec![ZERO; d * d];
        kern::matmul(self.u(x), self.u_inv(x), &mut prod, d);
        for i in 0..d {
            prod[i * d + i] -= ONE;
        }
        prod.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// RK4 integrator with preallocated stage buffers.
pub struct Stepper<'p> {
    prop: &'p Propagator,
    k: [Vec<C64>; 4],
    tmp: Vec<C64>,
    work: Work,
    last_c: C64,
}

impl<'p> Stepper<'p> {
    pub fn new(prop: &'p Propagator) -> Self {
        let n = prop.len;
        Self {
            prop,
            k: std::array::from_fn(|_| vec![ZERO; n]),
            tmp: vec![ZERO; n],
            work: Work::new(prop.d),
            last_c: ZERO,
        }
    }

    /// `C_t` from the first stage of the last step.
    pub fn last_c(&self) -> C64 {
        self.last_c
    }

    /// One classical RK4 step with the noise held fixed.
    pub fn rk4(&mut self, x: &mut [C64], zm: &[C64], zp: &[C64], dt: f64) {
        let p = self.prop;
        let [k1, k2, k3, k4] = &mut self.k;
        self.last_c = p.drift_into(x, zm, zp, k1, &mut self.work);
        for i in 0..x.len() {
            self.tmp[i] = x[i] + k1[i] * (0.5 * dt);
        }
        p.drift_into(&self.tmp, zm, zp, k2, &mut self.work);
        for i in 0..x.len() {
            self.tmp[i] = x[i] + k2[i] * (0.5 * dt);
        }
        p.drift_into(&self.tmp, zm, zp, k3, &mut self.work);
        for i in 0..x.len() {
            self.tmp[i] = x[i] + k3[i] * dt;
        }
        p.drift_into(&self.tmp, zm, zp, k4, &mut self.work);
        let s = dt / 6.0;
        for i in 0..x.len() {
            x[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * s;
        }
    }
}

/// Noise generators of every channel, advanced in a fixed order.
pub struct ChannelNoise {
    minus: Vec<NoiseChannel>,
    plus: Vec<Option<NoiseChannel>>,
    zm: Vec<C64>,
    zp: Vec<C64>,
}

impl ChannelNoise {
    /// Equilibrium start for every term (stationary law; undamped terms are
    /// static Gaussians).
    pub fn new(model: &ModelSpec, sign: FrequencySign, rng: &mut StreamRng) -> Self {
        let mut minus = Vec::with_capacity(model.channels.len());
        let mut plus = Vec::with_capacity(model.channels.len());
        for ch in &model.channels {
            let mut m = NoiseChannel::new(&ch.minus_kernel, sign);
            m.init_equilibrium(rng);
            minus.push(m);
            plus.push(ch.plus_kernel.as_ref().map(|k| {
                let mut p = NoiseChannel::new(k, sign);
                p.init_equilibrium(rng);
                p
            }));
        }
        let n = minus.len();
        Self {
            minus,
            plus,
            zm: vec![ZERO; n],
            zp: vec![ZERO; n],
        }
    }

    fn advance(&mut self, dt: f64, rng: &mut StreamRng) {
        for (m, p) in self.minus.iter_mut().zip(&mut self.plus) {
            m.step(dt, rng);
            if let Some(p) = p {
                p.step(dt, rng);
            }
        }
    }

    /// Advance by `dt` and return the noise values at the midpoint.
    pub fn step_midpoint(&mut self, dt: f64, rng: &mut StreamRng) -> (&[C64], &[C64]) {
        self.advance(0.5 * dt, rng);
        for (k, (m, p)) in self.minus.iter().zip(&self.plus).enumerate() {
            self.zm[k] = m.z();
            self.zp[k] = p.as_ref().map_or(ZERO, |p| p.z());
        }
        self.advance(0.5 * dt, rng);
        (&self.zm, &self.zp)
    }
}

/// Integrate one trajectory, handing every sample to `sink`.
///
/// The random stream is `(master_seed, stream)`, so a trajectory is fully
/// determined by its index regardless of which thread runs it.
pub fn run_trajectory_with<F>(
    model: &ModelSpec,
    psi0: &CVector,
    grid: &TimeGrid,
    options: &NmqsdOptions,
    master_seed: u64,
    stream: u64,
    mut sink: F,
) -> Result<TrajectoryStats>
where
    F: FnMut(&Sample<'_>),
{
    grid.validate()?;
    let prop = Propagator::new(model, psi0)?;
    let mut rng = stream_rng(master_seed, stream);
    let mut noise = ChannelNoise::new(model, options.sign, &mut rng);
    let mut stepper = Stepper::new(&prop);
    let mut x = prop.initial_state();
    let mut stats = TrajectoryStats::default();

    let stride = grid.stride();
    let n_steps = grid.n_steps();
    let mut psi_n = vec![ZERO; prop.d];
    let mut record = |step: usize, x: &[C64], c: C64, residual: f64, stats: &mut TrajectoryStats| {
        kern::matvec(prop.u(x), &prop.psi0, &mut psi_n, prop.d);
        let norm = psi_n.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for v in &mut psi_n {
            *v /= norm;
        }
        stats.max_norm_deviation = stats.max_norm_deviation.max((norm - 1.0).abs());
        sink(&Sample {
            index: step / stride,
            t: step as f64 * grid.dt,
            psi: &psi_n,
            p: model.bright_population(&psi_n),
            norm,
            inv_residual: residual,
            c,
        });
    };
    record(0, &x, ZERO, 0.0, &mut stats);

    for step in 1..=n_steps {
        let (zm, zp) = noise.step_midpoint(grid.dt, &mut rng);
        stepper.rk4(&mut x, zm, zp, grid.dt);
        let t = step as f64 * grid.dt;
        let residual = prop.inverse_residual(&x);
        if !residual.is_finite() || x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::TrajectoryAborted {
                t: (step - 1) as f64 * grid.dt,
                reason: "state became non-finite (t is the last good time)".into(),
            });
        }
        stats.steps = step;
        stats.max_inv_residual = stats.max_inv_residual.max(residual);
        if residual > options.tolerances.hard {
            return Err(Error::TrajectoryAborted {
                t,
                reason: format!(
                    "||U U^-1 - I||_F = {residual:.3e} exceeds {:.1e}",
                    options.tolerances.hard
                ),
            });
        }
        if residual > options.tolerances.soft {
            stats.soft_violations += 1;
        }
        if step % stride == 0 {
            let c = prop.c_function_fast(&x, &mut stepper.work);
            record(step, &x, c, residual, &mut stats);
        }
    }
    Ok(stats)
}

impl Propagator {
    fn c_function_fast(&self, x: &[C64], w: &mut Work) -> C64 {
        let zeros = vec![ZERO; self.channels.len()];
        let mut out = vec![ZERO; self.len];
        self.drift_into(x, &zeros, &zeros, &mut out, w)
    }
}

/// Integrate one trajectory and keep every sample.
pub fn run_trajectory(
    model: &ModelSpec,
    psi0: &CVector,
    grid: &TimeGrid,
    options: &NmqsdOptions,
    master_seed: u64,
    stream: u64,
) -> Result<TrajectoryOutput> {
    let mut out = TrajectoryOutput::default();
    let stats = run_trajectory_with(model, psi0, grid, options, master_seed, stream, |s| out.push(s))?;
    out.stats = stats;
    Ok(out)
}

/// Deterministic propagation for models whose kernels all have zero
/// amplitude or whose channels are all zero; returns the final `U`.
pub fn propagate_deterministic(model: &ModelSpec, t: f64, dt: f64) -> Result<CMatrix> {
    let d = model.dim();
    let prop = Propagator::new(model, &CVector::basis(d, 0))?;
    let mut x = prop.initial_state();
    propagate_state_deterministic(&prop, &mut x, t, dt)?;
    CMatrix::from_row_major(prop.u(&x))
}

/// Advance `x` by `t` with all noises zero.
pub fn propagate_state_deterministic(prop: &Propagator, x: &mut [C64], t: f64, dt: f64) -> Result<()> {
    if !(t >= 0.0) || !(dt > 0.0) {
        return Err(Error::invalid("need t >= 0 and dt > 0"));
    }
    let n = (t / dt - 1e-9).ceil().max(0.0) as usize;
    if n == 0 {
        return Ok(());
    }
    let h = t / n as f64;
    let zeros = vec![ZERO; prop.n_channels()];
    let mut st = Stepper::new(prop);
    for _ in 0..n {
        st.rk4(x, &zeros, &zeros, h);
    }
    Ok(())
}
