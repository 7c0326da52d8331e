//! Brute-force reference: the subsystem plus a few truncated bosonic modes,
//! propagated as one closed system and traced over the bath.

use serde::Serialize;

use crate::algebra::{C64, CMatrix, CVector};
use crate::ensemble::{run_ensemble, EnsembleConfig, EnsembleResult, Method, PTableSink};
use crate::error::{Error, Result};
use crate::kernel::{mode_kernel_zero_t, Mode, ModeBath};
use crate::models::{Channel, ModelSpec};
use crate::nmqsd::TimeGrid;

pub const MAX_TOTAL_DIM: usize = 4096;
pub const DEFAULT_N_MAX: usize = 4;
pub const LEAKAGE_LIMIT: f64 = 1e-6;
/// Absolute slack for integrator error when a standard error is zero.
pub const ABS_FLOOR: f64 = 1e-8;

/// `H_tot = H + sum_j g_j (L a_j^+ + L^+ a_j) + sum_j omega_j a_j^+ a_j`.
#[derive(Debug, Clone)]
pub struct TotalSystem {
    pub h: CMatrix,
    pub l: CMatrix,
    pub modes: Vec<Mode>,
    pub n_max: usize,
}

impl TotalSystem {
    pub fn new(h: CMatrix, l: CMatrix, modes: Vec<Mode>) -> Self {
        Self { h, l, modes, n_max: DEFAULT_N_MAX }
    }

    pub fn system_dim(&self) -> usize {
        self.h.dim()
    }

    pub fn bath_dim(&self) -> usize {
        (self.n_max + 1).pow(self.modes.len() as u32)
    }

    pub fn total_dim(&self) -> usize {
        self.system_dim() * self.bath_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.system_dim();
        if d == 0 || self.l.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: self.l.dim() });
        }
        if !self.h.is_hermitian(1e-12) {
            return Err(Error::invalid("system Hamiltonian must be Hermitian"));
        }
        if self.n_max == 0 {
            return Err(Error::invalid("n_max must be at least 1"));
        }
        if self.modes.iter().any(|m| !m.coupling.is_finite() || !m.frequency.is_finite()) {
            return Err(Error::invalid("mode parameters must be finite"));
        }
        let total = (self.n_max as f64 + 1.0).powi(self.modes.len() as i32) * d as f64;
        if total > MAX_TOTAL_DIM as f64 {
            return Err(Error::invalid(format!(
                "total dimension {total} exceeds the cap of {MAX_TOTAL_DIM}"
            )));
        }
        Ok(())
    }

    /// The NMQSD model with the matching vacuum kernel `sum_j g_j^2 e^{-i omega_j (t-s)}`.
    pub fn nmqsd_model(&self) -> Result<ModelSpec> {
        let kernel = mode_kernel_zero_t(&ModeBath::zero_temperature(self.modes.clone()))?;
        ModelSpec::custom(
            "oracle",
            self.h.clone(),
            vec![Channel::zero_temperature("bath", self.l.clone(), kernel)],
            vec![0],
        )
    }

    /// Occupation digit of mode `j` in bath index `b`; mode 0 is the most significant.
    fn digit(&self, b: usize, j: usize) -> usize {
        let stride = (self.n_max + 1).pow((self.modes.len() - 1 - j) as u32);
        (b / stride) % (self.n_max + 1)
    }

    fn stride(&self, j: usize) -> usize {
        (self.n_max + 1).pow((self.modes.len() - 1 - j) as u32)
    }

    /// Row-major triplets of `H_tot`, index `s * bath_dim + b`.
    fn triplets(&self) -> Vec<(usize, usize, C64)> {
        let d = self.system_dim();
        let nb = self.bath_dim();
        let mut out = Vec::new();
        for s in 0..d {
            for b in 0..nb {
                let row = s * nb + b;
                let mut diag = C64::new(0.0, 0.0);
                for (j, m) in self.modes.iter().enumerate() {
                    diag += m.frequency * self.digit(b, j) as f64;
                }
                for s2 in 0..d {
                    let mut v = self.h[(s, s2)];
                    if s2 == s {
                        v += diag;
                    }
                    if v != C64::new(0.0, 0.0) {
                        out.push((row, s2 * nb + b, v));
                    }
                }
                for (j, m) in self.modes.iter().enumerate() {
                    let n = self.digit(b, j);
                    let st = self.stride(j);
                    for s2 in 0..d {
                        // <s, n| L a^+ |s2, n-1> = L[s, s2] sqrt(n)
                        if n > 0 {
                            let v = self.l[(s, s2)] * (m.coupling * (n as f64).sqrt());
                            if v != C64::new(0.0, 0.0) {
                                out.push((row, s2 * nb + b - st, v));
                            }
                        }
                        // <s, n| L^+ a |s2, n+1> = conj(L[s2, s]) sqrt(n+1)
                        if n < self.n_max {
                            let v = self.l[(s2, s)].conj() * (m.coupling * ((n + 1) as f64).sqrt());
                            if v != C64::new(0.0, 0.0) {
                                out.push((row, s2 * nb + b + st, v));
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Product state `psi0 (x) |0...0>`.
    pub fn vacuum_state(&self, psi0: &CVector) -> Result<CVector> {
        let d = self.system_dim();
        if psi0.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: psi0.dim() });
        }
        let nb = self.bath_dim();
        let mut v = CVector::zeros(d * nb);
        for s in 0..d {
            v.as_mut_slice()[s * nb] = psi0.as_slice()[s];
        }
        Ok(v)
    }

    /// `Tr_bath |Psi><Psi|`.
    pub fn reduce(&self, psi: &[C64]) -> CMatrix {
        let d = self.system_dim();
        let nb = self.bath_dim();
        CMatrix::from_fn(d, |s, s2| {
            let a = &psi[s * nb..(s + 1) * nb];
            let b = &psi[s2 * nb..(s2 + 1) * nb];
            a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
        })
    }

    /// Largest population of any mode's top Fock level.
    pub fn leakage(&self, psi: &[C64]) -> f64 {
        let nb = self.bath_dim();
        (0..self.modes.len())
            .map(|j| {
                psi.iter()
                    .enumerate()
                    .filter(|(i, _)| self.digit(i % nb, j) == self.n_max)
                    .map(|(_, z)| z.norm_sqr())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

/// Dense `H_tot` on the truncated tensor-product space.
pub fn build_total_hamiltonian(spec: &TotalSystem) -> Result<CMatrix> {
    spec.validate()?;
    let n = spec.total_dim();
    let mut m = CMatrix::zeros(n);
    for (r, c, v) in spec.triplets() {
        m[(r, c)] += v;
    }
    Ok(m)
}

/// Compressed sparse rows of `H_tot`.
pub struct SparseHamiltonian {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseHamiltonian {
    pub fn new(spec: &TotalSystem) -> Result<Self> {
        spec.validate()?;
        let mut t = spec.triplets();
        t.sort_by_key(|&(r, c, _)| (r, c));
        let dim = spec.total_dim();
        let mut row_ptr = vec![0; dim + 1];
        let mut cols: Vec<usize> = Vec::with_capacity(t.len());
        let mut vals: Vec<C64> = Vec::with_capacity(t.len());
        let mut last = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self { dim, row_ptr, cols, vals })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn apply(&self, x: &[C64], out: &mut [C64]) {
        for r in 0..self.dim {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            out[r] = acc;
        }
    }

    /// Gershgorin bound on the spectral radius.
    pub fn norm_bound(&self) -> f64 {
        (0..self.dim)
            .map(|r| (self.row_ptr[r]..self.row_ptr[r + 1]).map(|k| self.vals[k].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn energy(&self, x: &[C64]) -> f64 {
        let mut hx = vec![C64::new(0.0, 0.0); self.dim];
        self.apply(x, &mut hx);
        x.iter().zip(&hx).map(|(a, b)| (a.conj() * b).re).sum()
    }
}

/// Full-state trajectory: reduced densities plus conservation diagnostics.
#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub times: Vec<f64>,
    pub rho: Vec<CMatrix>,
    pub max_norm_error: f64,
    pub max_energy_error: f64,
    pub max_leakage: f64,
    pub steps: usize,
}

/// RK4 on the total Schrödinger equation, sampled on `grid`.
///
/// The internal step is the largest divisor of the sample interval with
/// `N (|H| dt)^6 / 72 < 1e-12`, which bounds the norm loss of RK4.
pub fn exact_reduced_density(spec: &TotalSystem, psi0: &CVector, grid: &TimeGrid) -> Result<ExactSolution> {
    grid.validate()?;
    if (psi0.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::invalid("initial state must be normalized"));
    }
    let h = SparseHamiltonian::new(spec)?;
    let mut psi = spec.vacuum_state(psi0)?.as_slice().to_vec();
    let n = h.dim();
    let interval = grid.sample_every;
    let hn = h.norm_bound().max(1e-12);
    let total_steps_budget = |dt: f64| grid.t_max / dt * (hn * dt).powi(6) / 72.0;
    let mut sub = ((interval * hn) / 0.5).ceil().max(1.0) as usize;
    while total_steps_budget(interval / sub as f64) > 1e-12 {
        sub *= 2;
    }
    let dt = interval / sub as f64;
    let e0 = h.energy(&psi);

    let mut out = ExactSolution {
        times: grid.times(),
        rho: Vec::with_capacity(grid.n_samples()),
        max_norm_error: 0.0,
        max_energy_error: 0.0,
        max_leakage: 0.0,
        steps: 0,
    };
    out.rho.push(spec.reduce(&psi));

    let zero = C64::new(0.0, 0.0);
    let mi = C64::new(0.0, -1.0);
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![zero; n], vec![zero; n], vec![zero; n], vec![zero; n], vec![zero; n]);
    let rhs = |x: &[C64], o: &mut [C64]| {
        h.apply(x, o);
        o.iter_mut().for_each(|v| *v *= mi);
    };
    for _ in 1..grid.n_samples() {
        for _ in 0..sub {
            rhs(&psi, &mut k1);
            for i in 0..n {
                tmp[i] = psi[i] + k1[i] * (0.5 * dt);
            }
            rhs(&tmp, &mut k2);
            for i in 0..n {
                tmp[i] = psi[i] + k2[i] * (0.5 * dt);
            }
            rhs(&tmp, &mut k3);
            for i in 0..n {
                tmp[i] = psi[i] + k3[i] * dt;
            }
            rhs(&tmp, &mut k4);
            for i in 0..n {
                psi[i] += (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (dt / 6.0);
            }
            out.steps += 1;
            let leak = spec.leakage(&psi);
            out.max_leakage = out.max_leakage.max(leak);
            if leak > LEAKAGE_LIMIT {
                return Err(Error::TruncationLeakage { leakage: leak });
            }
        }
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        out.max_norm_error = out.max_norm_error.max((norm - 1.0).abs());
        out.max_energy_error = out.max_energy_error.max((h.energy(&psi) - e0).abs());
        out.rho.push(spec.reduce(&psi));
    }
    Ok(out)
}

/// Largest deviation of one real component of `rho` across time.
#[derive(Debug, Clone, Serialize)]
pub struct EntryDeviation {
    pub entry: String,
    pub max_abs: f64,
    pub max_sigma: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub n_traj: usize,
    pub failures: usize,
    pub entries: Vec<EntryDeviation>,
    pub max_sigma: f64,
    pub max_abs: f64,
    #[serde(skip)]
    pub exact: ExactSolution,
    #[serde(skip)]
    pub ensemble: EnsembleResult,
}

impl ComparisonReport {
    pub fn within(&self, sigmas: f64) -> bool {
        self.max_sigma <= sigmas
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("entry,max_abs,max_sigma\n");
        for e in &self.entries {
            out.push_str(&format!("{},{:.6e},{:.4}\n", e.entry, e.max_abs, e.max_sigma));
        }
        out
    }
}

/// Deviation in standard errors after removing `ABS_FLOOR`.
fn sigma_units(delta: f64, se: f64) -> f64 {
    let excess = (delta.abs() - ABS_FLOOR).max(0.0);
    if excess == 0.0 {
        0.0
    } else if se > 0.0 {
        excess / se
    } else {
        f64::INFINITY
    }
}

/// Compare an NMQSD ensemble driven by the vacuum mode kernel against the
/// exact reduced density, entry by entry and time by time.
pub fn compare_nmqsd_to_exact(spec: &TotalSystem, psi0: &CVector, cfg: &EnsembleConfig) -> Result<ComparisonReport> {
    if cfg.method != Method::Nmqsd {
        return Err(Error::invalid("oracle comparison runs the NMQSD method"));
    }
    let exact = exact_reduced_density(spec, psi0, &cfg.grid)?;
    let model = spec.nmqsd_model()?;
    let ensemble = run_ensemble(&model, psi0, cfg, PTableSink::Discard)?;
    let d = spec.system_dim();
    let mut entries = Vec::new();
    for i in 0..d {
        for j in i..d {
            let parts: &[(&str, bool)] = if i == j { &[("re", true)] } else { &[("re", true), ("im", false)] };
            for &(name, re) in parts {
                let mut dev = EntryDeviation {
                    entry: format!("{name}_rho{i}{j}"),
                    max_abs: 0.0,
                    max_sigma: 0.0,
                };
                for k in 0..exact.times.len() {
                    let a = ensemble.rho[k][(i, j)];
                    let b = exact.rho[k][(i, j)];
                    let (delta, se) = if re {
                        (a.re - b.re, ensemble.rho_stderr[k][i * d + j].0)
                    } else {
                        (a.im - b.im, ensemble.rho_stderr[k][i * d + j].1)
                    };
                    dev.max_abs = dev.max_abs.max(delta.abs());
                    dev.max_sigma = dev.max_sigma.max(sigma_units(delta, se));
                }
                entries.push(dev);
            }
        }
    }
    let max_sigma = entries.iter().map(|e| e.max_sigma).fold(0.0, f64::max);
    let max_abs = entries.iter().map(|e| e.max_abs).fold(0.0, f64::max);
    Ok(ComparisonReport {
        n_traj: cfg.n_traj,
        failures: ensemble.failures,
        entries,
        max_sigma,
        max_abs,
        exact,
        ensemble,
    })
}

/// Two-level system `H = (omega0/2) sigma_z` dephased by `sigma_z`.
pub fn dephasing_system(omega0: f64, modes: Vec<Mode>) -> TotalSystem {
    TotalSystem::new(
        crate::models::sigma_z().scale_real(omega0 / 2.0),
        crate::models::sigma_z(),
        modes,
    )
}

/// Two-level system decaying through `L = |1><0|` (level 0 excited).
pub fn decay_system(omega0: f64, modes: Vec<Mode>) -> TotalSystem {
    TotalSystem::new(
        crate::models::sigma_z().scale_real(omega0 / 2.0),
        CMatrix::dyad(2, 1, 0),
        modes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn mode(g: f64, w: f64) -> Mode {
        Mode { coupling: g, frequency: w }
    }

    #[test]
    fn no_modes_is_system_hamiltonian() {
        let s = dephasing_system(1.3, vec![]);
        let h = build_total_hamiltonian(&s).unwrap();
        assert_eq!(h, s.h);
    }

    #[test]
    fn uncoupled_mode_is_block_diagonal() {
        let mut s = dephasing_system(1.0, vec![mode(0.0, 0.7)]);
        s.n_max = 3;
        let h = build_total_hamiltonian(&s).unwrap();
        for r in 0..8 {
            for col in 0..8 {
                let (sr, nr) = (r / 4, r % 4);
                let (sc, nc) = (col / 4, col % 4);
                let want = if r == col { s.h[(sr, sc)] + 0.7 * nr as f64 } else { c(0.0, 0.0) };
                assert!((h[(r, col)] - want).norm() < 1e-15, "{r} {col}");
                let _ = nc;
            }
        }
    }

    #[test]
    fn total_hamiltonian_is_hermitian_and_matches_sparse() {
        let mut s = decay_system(1.0, vec![mode(0.3, 0.9), mode(0.2, 1.4)]);
        s.l = CMatrix::from_fn(2, |i, j| c(0.1 * (i + 1) as f64, 0.2 * j as f64 - 0.05));
        s.n_max = 3;
        let h = build_total_hamiltonian(&s).unwrap();
        assert!(h.hermiticity_error() < 1e-14);
        let sp = SparseHamiltonian::new(&s).unwrap();
        let x = CVector::from_vec((0..h.dim()).map(|i| c((i as f64).sin(), (0.3 * i as f64).cos())).collect());
        let dense = h.matvec(&x).unwrap();
        let mut out = vec![c(0.0, 0.0); h.dim()];
        sp.apply(x.as_slice(), &mut out);
        for (a, b) in dense.as_slice().iter().zip(&out) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn cap_is_enforced() {
        let mut s = dephasing_system(1.0, vec![mode(0.1, 1.0); 5]);
        s.n_max = 5;
        assert!(build_total_hamiltonian(&s).is_err());
    }

    #[test]
    fn zero_coupling_is_free_evolution() {
        let s = dephasing_system(1.7, vec![mode(0.0, 1.0), mode(0.0, 2.0)]);
        let psi0 = CVector::from_vec(vec![c(0.6, 0.0), c(0.0, 0.8)]);
        let sol = exact_reduced_density(&s, &psi0, &TimeGrid::new(3.0, 0.01, 0.5).unwrap()).unwrap();
        for (t, rho) in sol.times.iter().zip(&sol.rho) {
            // e^{-iHt} psi0 with H = diag(w/2, -w/2)
            let a = psi0.as_slice()[0] * C64::from_polar(1.0, -0.85 * t);
            let b = psi0.as_slice()[1] * C64::from_polar(1.0, 0.85 * t);
            let want = CVector::from_vec(vec![a, b]).projector();
            assert!((rho - &want).max_abs() < 1e-10, "t = {t}");
        }
        assert!(sol.max_norm_error < 1e-10);
    }

    #[test]
    fn vacuum_rabi_oscillation() {
        // Resonant Jaynes-Cummings from |e, 0>: P_e(t) = cos^2(g t).
        let g = 0.25;
        let mut s = decay_system(1.0, vec![mode(g, 1.0)]);
        s.n_max = 2;
        let psi0 = CVector::basis(2, 0);
        let sol = exact_reduced_density(&s, &psi0, &TimeGrid::new(20.0, 0.01, 0.25).unwrap()).unwrap();
        for (t, rho) in sol.times.iter().zip(&sol.rho) {
            let want = (g * t).cos().powi(2);
            assert!((rho[(0, 0)].re - want).abs() < 1e-9, "t = {t}");
            assert!((rho.trace() - c(1.0, 0.0)).norm() < 1e-12);
            assert!(rho.hermiticity_error() < 1e-12);
        }
        assert!(sol.max_norm_error < 1e-10);
        assert!(sol.max_energy_error < 1e-8);
        assert_eq!(sol.max_leakage, 0.0);
    }

    #[test]
    fn dephasing_keeps_populations() {
        let mut s = dephasing_system(1.0, vec![mode(0.2, 1.0), mode(0.2, 2.0), mode(0.15, 3.0)]);
        s.n_max = 6;
        let psi0 = CVector::from_vec(vec![c(0.8, 0.0), c(0.6, 0.0)]);
        let sol = exact_reduced_density(&s, &psi0, &TimeGrid::new(4.0, 0.01, 0.5).unwrap()).unwrap();
        for rho in &sol.rho {
            assert!((rho[(0, 0)].re - 0.64).abs() < 1e-10);
            assert!((rho[(1, 1)].re - 0.36).abs() < 1e-10);
        }
        assert!(sol.max_norm_error < 1e-10);
        assert!(sol.max_energy_error < 1e-8);
        // Coherence is reduced by the bath.
        assert!(sol.rho.last().unwrap()[(0, 1)].norm() < 0.48);
    }

    #[test]
    fn leakage_is_reported() {
        let mut s = dephasing_system(1.0, vec![mode(1.0, 0.5)]);
        s.n_max = 2;
        let psi0 = CVector::basis(2, 0);
        let err = exact_reduced_density(&s, &psi0, &TimeGrid::new(5.0, 0.01, 0.5).unwrap()).unwrap_err();
        assert!(matches!(err, Error::TruncationLeakage { .. }));
    }

    #[test]
    fn zero_coupling_comparison_is_exact() {
        let s = dephasing_system(1.0, vec![mode(0.0, 1.0)]);
        let psi0 = CVector::from_vec(vec![c(0.6, 0.0), c(0.8, 0.0)]);
        let cfg = EnsembleConfig::new(Method::Nmqsd, 8, TimeGrid::new(2.0, 0.01, 0.25).unwrap(), 3);
        let r = compare_nmqsd_to_exact(&s, &psi0, &cfg).unwrap();
        assert!(r.max_abs < 1e-8, "{}", r.max_abs);
        assert_eq!(r.max_sigma, 0.0);
    }

    #[test]
    fn nmqsd_matches_exact_dephasing() {
        let mut s = dephasing_system(1.0, vec![mode(0.2, 1.0), mode(0.2, 2.0), mode(0.15, 3.0)]);
        s.n_max = 6;
        let psi0 = CVector::from_vec(vec![c(0.8, 0.0), c(0.6, 0.0)]);
        let cfg = EnsembleConfig::new(Method::Nmqsd, 400, TimeGrid::new(3.0, 0.01, 0.5).unwrap(), 11);
        let r = compare_nmqsd_to_exact(&s, &psi0, &cfg).unwrap();
        assert!(r.within(4.5), "{}", r.to_table());
    }

    #[test]
    fn nmqsd_matches_exact_decay() {
        let mut s = decay_system(1.0, vec![mode(0.3, 0.8), mode(0.3, 1.2)]);
        s.n_max = 2;
        let psi0 = CVector::from_vec(vec![c(0.8, 0.0), c(0.6, 0.0)]);
        let cfg = EnsembleConfig::new(Method::Nmqsd, 400, TimeGrid::new(3.0, 0.01, 0.5).unwrap(), 12);
        let r = compare_nmqsd_to_exact(&s, &psi0, &cfg).unwrap();
        assert!(r.within(4.5), "{}", r.to_table());
    }
}
