//! Markovian limit: the Lindblad master equation as a deterministic ODE and
//! the norm-preserving quantum state diffusion unraveling of it.

use rand::Rng;

use crate::algebra::{kern, CMatrix, CVector, C64, ONE, ZERO};
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::nmqsd::{Sample, TimeGrid, TrajectoryOutput, TrajectoryStats};
use crate::noise::{complex_wiener_increment, stream_rng};

/// Default Euler–Maruyama step.
pub const DEFAULT_DT: f64 = 0.01;

/// Hermitian, unit-trace, positive (within tolerance) matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(CMatrix);

impl DensityMatrix {
    pub const HERMITICITY_TOL: f64 = 1e-12;
    pub const TRACE_TOL: f64 = 1e-10;
    pub const POSITIVITY_TOL: f64 = 1e-8;

    pub fn new(m: CMatrix) -> Result<Self> {
        if let Some(what) = violation(&m) {
            return Err(Error::invalid(format!("not a density matrix: {what}")));
        }
        Ok(Self(m))
    }

    pub fn pure(psi: &CVector) -> Result<Self> {
        Self::new(psi.normalized()?.projector())
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn population(&self, i: usize) -> f64 {
        self.0[(i, i)].re
    }
}

/// First violated invariant, if any.
fn violation(m: &CMatrix) -> Option<String> {
    if !m.is_finite() {
        return Some("non-finite entries".into());
    }
    let h = m.hermiticity_error();
    if h > DensityMatrix::HERMITICITY_TOL {
        return Some(format!("hermiticity error {h:.3e}"));
    }
    let tr = m.trace();
    if (tr - ONE).norm() > DensityMatrix::TRACE_TOL {
        return Some(format!("trace {tr}"));
    }
    if !is_positive_shifted(m, DensityMatrix::POSITIVITY_TOL) {
        return Some("eigenvalue below -1e-8".into());
    }
    None
}

/// Cholesky of `m + shift I`; success means every eigenvalue exceeds `-shift`.
fn is_positive_shifted(m: &CMatrix, shift: f64) -> bool {
    let d = m.dim();
    let mut l = vec![ZERO; d * d];
    for j in 0..d {
        let mut diag = m[(j, j)].re + shift;
        for k in 0..j {
            diag -= l[j * d + k].norm_sqr();
        }
        if diag <= 0.0 {
            return false;
        }
        let ljj = diag.sqrt();
        l[j * d + j] = C64::new(ljj, 0.0);
        for i in j + 1..d {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k].conj();
            }
            l[i * d + j] = s / ljj;
        }
    }
    true
}

/// `L rho = -i[H, rho] + sum_k r_k (L_k rho L_k^dag - 1/2 {L_k^dag L_k, rho})`.
#[derive(Debug, Clone)]
pub struct Lindbladian {
    h: CMatrix,
    ls: Vec<CMatrix>,
    lds: Vec<CMatrix>,
    ldls: Vec<CMatrix>,
    rates: Vec<f64>,
}

impl Lindbladian {
    pub fn new(h: CMatrix, ls: Vec<CMatrix>, rates: Vec<f64>) -> Result<Self> {
        let d = h.dim();
        if ls.len() != rates.len() {
            return Err(Error::invalid("one rate per coupling operator"));
        }
        if let Some(l) = ls.iter().find(|l| l.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: l.dim(),
            });
        }
        if rates.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::invalid("rates must be finite and non-negative"));
        }
        let lds: Vec<CMatrix> = ls.iter().map(CMatrix::adjoint).collect();
        let ldls = ls.iter().zip(&lds).map(|(l, ld)| ld * l).collect();
        Ok(Self {
            h,
            ls,
            lds,
            ldls,
            rates,
        })
    }

    /// Markovian limit of a model: each channel's rate is its kernel's
    /// memory time.
    pub fn from_model(model: &ModelSpec) -> Result<Self> {
        let rates = model.markov_rates()?;
        Self::new(
            model.h.clone(),
            model.channels.iter().map(|c| c.l.clone()).collect(),
            rates,
        )
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let mut out = self.h.commutator(rho).expect("dimension checked").scale(C64::new(0.0, -1.0));
        for k in 0..self.ls.len() {
            let r = self.rates[k];
            if r == 0.0 {
                continue;
            }
            let jump = &(&self.ls[k] * rho) * &self.lds[k];
            let anti = &(&self.ldls[k] * rho) + &(rho * &self.ldls[k]);
            out = &out + &(&jump - &anti.scale_real(0.5)).scale_real(r);
        }
        out
    }

    /// Row-major superoperator acting on row-major `vec(rho)`.
    pub fn superoperator(&self) -> Vec<C64> {
        let d = self.dim();
        let n = d * d;
        let mut s = vec![ZERO; n * n];
        for col in 0..n {
            let e = CMatrix::dyad(d, col / d, col % d);
            let img = self.apply(&e);
            for (row, v) in img.as_slice().iter().enumerate() {
                s[row * n + col] = *v;
            }
        }
        s
    }

    /// Unique steady state from `L rho = 0` with one equation replaced by
    /// `tr rho = 1`.
    pub fn steady_state(&self) -> Result<DensityMatrix> {
        let d = self.dim();
        let n = d * d;
        let mut a = self.superoperator();
        let mut b = vec![ZERO; n];
        for c in 0..n {
            a[c] = if c / d == c % d { ONE } else { ZERO };
        }
        b[0] = ONE;
        let x = solve_dense(&mut a, &mut b, n)?;
        let m = CMatrix::from_row_major(&x)?;
        // Symmetrize away rounding before validation.
        let m = (&m + &m.adjoint()).scale_real(0.5);
        DensityMatrix::new(m)
    }
}

/// Gaussian elimination with partial pivoting; `a` is row-major `n x n`.
fn solve_dense(a: &mut [C64], b: &mut [C64], n: usize) -> Result<Vec<C64>> {
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].norm().total_cmp(&a[j * n + col].norm()))
            .unwrap_or(col);
        if a[piv * n + col].norm() < 1e-300 {
            return Err(Error::invalid("singular system (steady state not unique)"));
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            b.swap(col, piv);
        }
        let p = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / p;
            if f == ZERO {
                continue;
            }
            for k in col..n {
                let v = a[col * n + k];
                a[r * n + k] -= f * v;
            }
            let v = b[col];
            b[r] -= f * v;
        }
    }
    let mut x = vec![ZERO; n];
    for r in (0..n).rev() {
        let mut s = b[r];
        for k in r + 1..n {
            s -= a[r * n + k] * x[k];
        }
        x[r] = s / a[r * n + r];
    }
    Ok(x)
}

/// Right-hand side of the master equation with one common memory time.
pub fn lindblad_rhs(rho: &DensityMatrix, h: &CMatrix, ls: &[CMatrix], tau: f64) -> Result<CMatrix> {
    if !(tau > 0.0) {
        return Err(Error::invalid("tau must be positive"));
    }
    if h.dim() != rho.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            got: h.dim(),
        });
    }
    let gen = Lindbladian::new(h.clone(), ls.to_vec(), vec![tau; ls.len()])?;
    Ok(gen.apply(rho.matrix()))
}

/// RK4 integration of the master equation, sampled on `grid`. Every output
/// is checked against the density-matrix invariants.
pub fn propagate_lindblad(
    rho0: &DensityMatrix,
    gen: &Lindbladian,
    grid: &TimeGrid,
) -> Result<Vec<(f64, DensityMatrix)>> {
    grid.validate()?;
    if rho0.dim() != gen.dim() {
        return Err(Error::DimensionMismatch {
            expected: gen.dim(),
            got: rho0.dim(),
        });
    }
    let dt = grid.dt;
    let stride = grid.stride();
    let mut rho = rho0.matrix().clone();
    let mut out = Vec::with_capacity(grid.n_samples());
    out.push((0.0, rho0.clone()));
    for step in 1..=grid.n_steps() {
        let k1 = gen.apply(&rho);
        let k2 = gen.apply(&(&rho + &k1.scale_real(0.5 * dt)));
        let k3 = gen.apply(&(&rho + &k2.scale_real(0.5 * dt)));
        let k4 = gen.apply(&(&rho + &k3.scale_real(dt)));
        let incr = &(&k1 + &k4) + &(&k2 + &k3).scale_real(2.0);
        rho = &rho + &incr.scale_real(dt / 6.0);
        if step % stride == 0 {
            let t = step as f64 * dt;
            let snapshot = DensityMatrix::new(rho.clone()).map_err(|e| Error::InvariantViolation {
                t,
                what: e.to_string(),
            })?;
            out.push((t, snapshot));
        }
    }
    Ok(out)
}

/// Operator stored as its non-zero entries.
#[derive(Debug, Clone)]
struct SparseOp {
    entries: Vec<(usize, usize, C64)>,
}

impl SparseOp {
    fn from_dense(m: &CMatrix) -> Self {
        let d = m.dim();
        let mut entries = Vec::new();
        for i in 0..d {
            for j in 0..d {
                let v = m[(i, j)];
                if v != ZERO {
                    entries.push((i, j, v));
                }
            }
        }
        Self { entries }
    }

    #[inline]
    fn apply(&self, x: &[C64], out: &mut [C64]) {
        out.fill(ZERO);
        for &(i, j, v) in &self.entries {
            out[i] += v * x[j];
        }
    }
}

/// Preallocated stepper for the QSD Itô equation
/// `dpsi = [-iH + sum r_k(<L^dag>L - L^dag L/2 - |<L>|^2/2)] psi dt
///        + sum sqrt(r_k) (L - <L>) psi dW_k`.
///
/// Each step applies `exp(-iH dt)` exactly, then one Euler–Maruyama step of
/// the dissipative and noise terms, then renormalizes. A plain Euler step of
/// `-iH` inflates the norm of the driven subspace by `1 + <H^2> dt^2`, and
/// renormalizing turns that into a population drain of rate `<H^2> dt` out of
/// undriven levels.
pub struct QsdStepper {
    d: usize,
    h: CMatrix,
    /// `exp(-iH u_dt)`, row-major.
    u: Vec<C64>,
    u_dt: f64,
    ls: Vec<SparseOp>,
    ldls: Vec<SparseOp>,
    rates: Vec<f64>,
    lpsi: Vec<C64>,
    tmp: Vec<C64>,
    next: Vec<C64>,
}

impl QsdStepper {
    pub fn new(gen: &Lindbladian) -> Self {
        let d = gen.dim();
        Self {
            d,
            h: gen.h.clone(),
            u: Vec::new(),
            u_dt: f64::NAN,
            ls: gen.ls.iter().map(SparseOp::from_dense).collect(),
            ldls: gen.ldls.iter().map(SparseOp::from_dense).collect(),
            rates: gen.rates.clone(),
            lpsi: vec![ZERO; d],
            tmp: vec![ZERO; d],
            next: vec![ZERO; d],
        }
    }

    /// Advance a normalized `psi` in place.
    pub fn step<R: Rng + ?Sized>(&mut self, psi: &mut [C64], dt: f64, rng: &mut R) -> Result<()> {
        debug_assert_eq!(psi.len(), self.d);
        if dt != self.u_dt {
            self.u = self.h.scale(C64::new(0.0, -dt)).expm().as_slice().to_vec();
            self.u_dt = dt;
        }
        kern::matvec(&self.u, psi, &mut self.tmp, self.d);
        psi.copy_from_slice(&self.tmp);
        self.next.fill(ZERO);
        for k in 0..self.ls.len() {
            let r = self.rates[k];
            // The Wiener increment is drawn even for r = 0 so the random
            // stream does not depend on which channels are active.
            let dw = complex_wiener_increment(rng, dt);
            if r == 0.0 {
                continue;
            }
            self.ls[k].apply(psi, &mut self.lpsi);
            let el: C64 = psi.iter().zip(&self.lpsi).map(|(p, l)| p.conj() * l).sum();
            self.ldls[k].apply(psi, &mut self.tmp);
            let c_drift = el.conj() * r * dt;
            let c_norm = -0.5 * r * el.norm_sqr() * dt;
            let sr = r.sqrt();
            for i in 0..self.d {
                self.next[i] += self.lpsi[i] * c_drift - self.tmp[i] * (0.5 * r * dt) + psi[i] * c_norm;
                self.next[i] += (self.lpsi[i] - el * psi[i]) * (sr * dw);
            }
        }
        let mut n2 = 0.0;
        for (p, dp) in psi.iter_mut().zip(&self.next) {
            *p += dp;
            n2 += p.norm_sqr();
        }
        if !(n2.is_finite() && n2 > 0.0) {
            return Err(Error::invalid("QSD step produced a non-finite or zero state"));
        }
        let inv = 1.0 / n2.sqrt();
        for p in psi.iter_mut() {
            *p *= inv;
        }
        Ok(())
    }
}

/// One QSD step (exact unitary part, Euler–Maruyama noise) with a common
/// memory time `tau`.
pub fn qsd_step<R: Rng + ?Sized>(
    psi: &CVector,
    h: &CMatrix,
    ls: &[CMatrix],
    tau: f64,
    dt: f64,
    rng: &mut R,
) -> Result<CVector> {
    if !(dt > 0.0) || !(tau >= 0.0) {
        return Err(Error::invalid("need dt > 0 and tau >= 0"));
    }
    if h.dim() != psi.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            got: psi.dim(),
        });
    }
    let gen = Lindbladian::new(h.clone(), ls.to_vec(), vec![tau; ls.len()])?;
    let mut st = QsdStepper::new(&gen);
    let mut out = psi.normalized()?;
    st.step(out.as_mut_slice(), dt, rng)?;
    Ok(out)
}

/// QSD trajectory in the Markovian limit of `model`; samples go to `sink`.
pub fn run_trajectory_markov_with<F>(
    model: &ModelSpec,
    psi0: &CVector,
    grid: &TimeGrid,
    master_seed: u64,
    stream: u64,
    mut sink: F,
) -> Result<TrajectoryStats>
where
    F: FnMut(&Sample<'_>),
{
    grid.validate()?;
    if psi0.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: psi0.dim(),
        });
    }
    if (psi0.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::invalid("initial state must be normalized"));
    }
    let gen = Lindbladian::from_model(model)?;
    let mut st = QsdStepper::new(&gen);
    let mut rng = stream_rng(master_seed, stream);
    let mut psi = psi0.as_slice().to_vec();
    let stride = grid.stride();
    let emit = |step: usize, psi: &[C64], sink: &mut F| {
        sink(&Sample {
            index: step / stride,
            t: step as f64 * grid.dt,
            psi,
            p: model.bright_population(psi),
            norm: 1.0,
            inv_residual: 0.0,
            c: ZERO,
        })
    };
    emit(0, &psi, &mut sink);
    let n_steps = grid.n_steps();
    for step in 1..=n_steps {
        st.step(&mut psi, grid.dt, &mut rng).map_err(|e| Error::TrajectoryAborted {
            t: (step - 1) as f64 * grid.dt,
            reason: e.to_string(),
        })?;
        if step % stride == 0 {
            emit(step, &psi, &mut sink);
        }
    }
    Ok(TrajectoryStats {
        steps: n_steps,
        ..Default::default()
    })
}

pub fn run_trajectory_markov(
    model: &ModelSpec,
    psi0: &CVector,
    grid: &TimeGrid,
    master_seed: u64,
    stream: u64,
) -> Result<TrajectoryOutput> {
    let mut out = TrajectoryOutput::default();
    out.stats = run_trajectory_markov_with(model, psi0, grid, master_seed, stream, |s| out.push(s))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::models::{build_mg24, build_rabi, Mg24Params};
    use crate::noise::StreamRng;
    use proptest::prelude::*;

    fn random_density(rng: &mut StreamRng, d: usize) -> DensityMatrix {
        let a = CMatrix::from_fn(d, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let m = &a * &a.adjoint();
        let tr = m.trace().re;
        let m = m.scale_real(1.0 / tr);
        DensityMatrix::new((&m + &m.adjoint()).scale_real(0.5)).unwrap()
    }

    fn mg24_gen() -> (Mg24Params, Lindbladian) {
        let p = Mg24Params::defaults();
        let m = build_mg24(&p).unwrap();
        (p, Lindbladian::from_model(&m).unwrap())
    }

    #[test]
    fn density_matrix_validation() {
        assert!(DensityMatrix::new(CMatrix::identity(2).scale_real(0.5)).is_ok());
        assert!(DensityMatrix::new(CMatrix::identity(2)).is_err());
        assert!(DensityMatrix::new(CMatrix::dyad(2, 0, 1)).is_err());
        let neg = CMatrix::diagonal(&[C64::new(1.1, 0.0), C64::new(-0.1, 0.0)]);
        assert!(DensityMatrix::new(neg).is_err());
        assert!(DensityMatrix::pure(&CVector::basis(3, 2)).is_ok());
    }

    #[test]
    fn empty_generator_is_zero() {
        let mut rng = stream_rng(1, 0);
        let rho = random_density(&mut rng, 3);
        let out = lindblad_rhs(&rho, &CMatrix::zeros(3), &[], 1.0).unwrap();
        assert!(out.is_zero());
    }

    #[test]
    fn mg24_diagonal_equations() {
        // rho11' = Omega Im rho21 + tau l12^2 rho22 + tau l13^2 rho33 - tau l31^2 rho11
        // rho22' = -Omega Im rho21 - tau l12^2 rho22
        // rho33' = tau l31^2 rho11 - tau l13^2 rho33
        let (p, gen) = mg24_gen();
        let mut rng = stream_rng(2, 0);
        let rho = random_density(&mut rng, 3);
        let r = rho.matrix();
        let out = gen.apply(r);
        let t = p.tau;
        let (g12, g13, g31) = (t * p.lambda_12().powi(2), t * p.lambda_13().powi(2), t * p.lambda_31().powi(2));
        let im21 = r[(1, 0)].im;
        let e11 = p.omega * im21 + g12 * r[(1, 1)].re + g13 * r[(2, 2)].re - g31 * r[(0, 0)].re;
        let e22 = -p.omega * im21 - g12 * r[(1, 1)].re;
        let e33 = g31 * r[(0, 0)].re - g13 * r[(2, 2)].re;
        assert!((out[(0, 0)].re - e11).abs() < 1e-14, "{} {}", out[(0, 0)], e11);
        assert!((out[(1, 1)].re - e22).abs() < 1e-14);
        assert!((out[(2, 2)].re - e33).abs() < 1e-14);
        // rates are gamma, R-, R+
        assert!((g12 - p.gamma_scaled).abs() < 1e-15);
        assert!((g13 - p.r_minus()).abs() < 1e-17);
        assert!((g31 - p.r_plus()).abs() < 1e-18);
    }

    #[test]
    fn rabi_populations() {
        let m = build_rabi(2.0).unwrap();
        let gen = Lindbladian::from_model(&m).unwrap();
        let grid = TimeGrid::new(5.0, 0.01, 0.5).unwrap();
        let series = propagate_lindblad(&DensityMatrix::pure(&CVector::basis(2, 0)).unwrap(), &gen, &grid).unwrap();
        for (t, rho) in &series {
            let expect = (t).cos().powi(2);
            assert!((rho.population(0) - expect).abs() < 1e-8, "t={t}");
        }
    }

    #[test]
    fn mg24_steady_state() {
        let (p, gen) = mg24_gen();
        let ss = gen.steady_state().unwrap();
        let r = ss.matrix();
        assert!(gen.apply(r).frobenius_norm() < 1e-9);
        let ratio_13 = r[(0, 0)].re / r[(2, 2)].re;
        assert!((ratio_13 - p.r_minus() / p.r_plus()).abs() < 1e-6, "{ratio_13}");
        // The bright-to-dark ratio is about twice that because the drive
        // saturates the 1-2 transition.
        let bright = (r[(0, 0)].re + r[(1, 1)].re) / r[(2, 2)].re;
        assert!((bright - 32.0).abs() < 0.01, "{bright}");
    }

    #[test]
    fn integration_approaches_steady_state() {
        // Shorter relaxation: speed up incoherent rates.
        let mut p = Mg24Params::defaults();
        p.gamma_scaled = 0.5;
        let m = build_mg24(&p).unwrap();
        let gen = Lindbladian::from_model(&m).unwrap();
        let ss = gen.steady_state().unwrap();
        let grid = TimeGrid::new(3000.0, 0.05, 3000.0).unwrap();
        let series = propagate_lindblad(&DensityMatrix::pure(&CVector::basis(3, 0)).unwrap(), &gen, &grid).unwrap();
        let last = &series.last().unwrap().1;
        let dev = (last.matrix() - ss.matrix()).max_abs();
        assert!(dev < 1e-6, "{dev}");
    }

    #[test]
    fn empty_qsd_step_is_exact_unitary() {
        // H = a I + bx sx + bz sz, so exp(-iHt) = e^{-iat}(cos(bt) - i sin(bt)(bx sx + bz sz)/b).
        let h = CMatrix::from_real_rows(&[&[0.3, 1.0], &[1.0, -0.2]]);
        let (a, bx, bz) = (0.05, 1.0, 0.25);
        let b = f64::hypot(bx, bz);
        let psi = CVector::from_vec(vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)]);
        let mut rng = stream_rng(3, 0);
        let dt = 0.37;
        let out = qsd_step(&psi, &h, &[], 1.0, dt, &mut rng).unwrap();
        let (c, s) = ((b * dt).cos(), (b * dt).sin());
        let ph = C64::from_polar(1.0, -a * dt);
        let mi = C64::new(0.0, -s / b);
        let expect = [
            ph * ((c + mi * bz) * psi[0] + mi * bx * psi[1]),
            ph * (mi * bx * psi[0] + (c - mi * bz) * psi[1]),
        ];
        for i in 0..2 {
            assert!((out[i] - expect[i]).norm() < 1e-14, "{i}");
        }
    }

    #[test]
    fn undriven_level_keeps_its_population() {
        let h = (&CMatrix::dyad(3, 0, 1) + &CMatrix::dyad(3, 1, 0)).scale_real(1.0);
        let gen = Lindbladian::new(h, Vec::new(), Vec::new()).unwrap();
        let mut st = QsdStepper::new(&gen);
        let mut psi = vec![C64::new(0.6, 0.0), ZERO, C64::new(0.8, 0.0)];
        let mut rng = stream_rng(1, 0);
        for _ in 0..100_000 {
            st.step(&mut psi, 0.01, &mut rng).unwrap();
        }
        assert!((psi[2].norm_sqr() - 0.64).abs() < 1e-10, "{}", psi[2].norm_sqr());
    }

    #[test]
    fn two_level_decay_matches_exponential() {
        let l = CMatrix::dyad(2, 0, 1);
        let tau = 2.0;
        let lam: f64 = 0.5;
        let gen = Lindbladian::new(CMatrix::zeros(2), vec![l.scale_real(lam)], vec![tau]).unwrap();
        let mut st = QsdStepper::new(&gen);
        let n = 500;
        let dt = 0.01;
        let t_end = 1.0;
        let mut pops = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = stream_rng(4, i as u64);
            let mut psi = vec![ZERO, ONE];
            for _ in 0..(t_end / dt) as usize {
                st.step(&mut psi, dt, &mut rng).unwrap();
            }
            pops.push(psi[1].norm_sqr());
        }
        let mean = pops.iter().sum::<f64>() / n as f64;
        let var = pops.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let expect = (-tau * lam * lam * t_end).exp();
        assert!((mean - expect).abs() < 3.0 * se + 1e-3, "{mean} vs {expect} (se {se})");
    }

    #[test]
    fn markov_trajectory_basics() {
        let m = build_mg24(&Mg24Params::defaults()).unwrap();
        let grid = TimeGrid::new(50.0, 0.01, 1.0).unwrap();
        let a = run_trajectory_markov(&m, &CVector::basis(3, 0), &grid, 5, 1).unwrap();
        let b = run_trajectory_markov(&m, &CVector::basis(3, 0), &grid, 5, 1).unwrap();
        assert_eq!(a.p[0], 1.0);
        assert_eq!(a.p, b.p);
        assert_eq!(a.times.len(), 51);
        assert!(a.norm.iter().all(|n| *n == 1.0));
        assert!(a.psi.iter().all(|v| (v.norm() - 1.0).abs() < 1e-14));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn rhs_is_traceless_and_hermitian(seed in 0u64..10_000) {
            let (_, gen) = mg24_gen();
            let mut rng = stream_rng(seed, 7);
            let rho = random_density(&mut rng, 3);
            let out = gen.apply(rho.matrix());
            prop_assert!(out.trace().norm() < 1e-12);
            prop_assert!(out.hermiticity_error() < 1e-12);
            let h = CMatrix::from_fn(2, |i, j| C64::new((i + j) as f64, if i < j { 0.5 } else if i > j { -0.5 } else { 0.0 }));
            let l = CMatrix::from_fn(2, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            let rho2 = random_density(&mut rng, 2);
            let out2 = lindblad_rhs(&rho2, &h, &[l], 0.7).unwrap();
            prop_assert!(out2.trace().norm() < 1e-12);
            prop_assert!(out2.hermiticity_error() < 1e-12);
        }
    }
}
