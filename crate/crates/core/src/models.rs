//! Model presets: the three-level magnesium ion and small verification
//! systems, plus the `key = value` model config format.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::algebra::{CMatrix, C64};
use crate::error::{Error, Result};
use crate::kernel::{self, KernelTerm, MemoryKernel};

/// A system operator coupled to its own bath.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub name: String,
    pub l: CMatrix,
    /// `alpha^k` (zero temperature) or `alpha^{k-}`.
    pub minus_kernel: MemoryKernel,
    /// `alpha^{k+}`; `None` means zero temperature.
    pub plus_kernel: Option<MemoryKernel>,
}

impl Channel {
    pub fn zero_temperature(name: impl Into<String>, l: CMatrix, kernel: MemoryKernel) -> Self {
        Self {
            name: name.into(),
            l,
            minus_kernel: kernel,
            plus_kernel: None,
        }
    }

    pub fn thermal(name: impl Into<String>, l: CMatrix, minus: MemoryKernel, plus: MemoryKernel) -> Self {
        Self {
            name: name.into(),
            l,
            minus_kernel: minus,
            plus_kernel: Some(plus),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mg24Params {
    /// Rabi frequency of the 1-2 drive (scaled units).
    pub omega: f64,
    /// Spontaneous decay rate out of level 2; `1e-3` by choice of time unit.
    pub gamma_scaled: f64,
    /// Zeeman shift.
    pub alpha_zeeman: f64,
    /// Photodetector coupling `lambda` of `L4`.
    pub lambda_det: f64,
    pub kernel: MemoryKernel,
    /// Memory time entering the Markovian rates.
    pub tau: f64,
}

impl Mg24Params {
    /// `Omega = 2`, `alpha = 12.1`, `gamma = 1e-3`, the tabulated kernel, its
    /// memory time, and `lambda = 0.22 / sqrt(tau)`.
    pub fn defaults() -> Self {
        let kernel = MemoryKernel::mg24();
        let tau = kernel.memory_time().expect("tabulated kernel is damped");
        Self {
            omega: 2.0,
            gamma_scaled: 1e-3,
            alpha_zeeman: 12.1,
            lambda_det: 0.22 / tau.sqrt(),
            kernel,
            tau,
        }
    }

    /// Rate out of the dark state, `R- = 8 Omega^2 gamma / (9 alpha^2)`.
    pub fn r_minus(&self) -> f64 {
        8.0 * self.omega.powi(2) * self.gamma_scaled / (9.0 * self.alpha_zeeman.powi(2))
    }

    /// Rate into the dark state, `R+ = Omega^2 gamma / (18 alpha^2)`.
    pub fn r_plus(&self) -> f64 {
        self.omega.powi(2) * self.gamma_scaled / (18.0 * self.alpha_zeeman.powi(2))
    }

    pub fn lambda_12(&self) -> f64 {
        (self.gamma_scaled / self.tau).sqrt()
    }

    pub fn lambda_13(&self) -> f64 {
        (self.r_minus() / self.tau).sqrt()
    }

    pub fn lambda_31(&self) -> f64 {
        (self.r_plus() / self.tau).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    Mg24(Mg24Params),
    Rabi { omega: f64 },
    Dephasing { omega0: f64, kernel: MemoryKernel },
    Custom,
}

/// Subsystem Hamiltonian plus coupling channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub label: String,
    pub h: CMatrix,
    pub channels: Vec<Channel>,
    /// Levels whose summed population is the monitored signal `P(t)`.
    pub bright_levels: Vec<usize>,
    pub kind: ModelKind,
}

impl ModelSpec {
    pub fn custom(
        label: impl Into<String>,
        h: CMatrix,
        channels: Vec<Channel>,
        bright_levels: Vec<usize>,
    ) -> Result<Self> {
        let spec = Self {
            label: label.into(),
            h,
            channels,
            bright_levels,
            kind: ModelKind::Custom,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::invalid("model dimension must be positive"));
        }
        if !self.h.is_finite() || !self.h.is_hermitian(1e-12) {
            return Err(Error::invalid("Hamiltonian must be finite and Hermitian"));
        }
        for ch in &self.channels {
            if ch.l.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: ch.l.dim(),
                });
            }
            if !ch.l.is_finite() {
                return Err(Error::invalid(format!("channel {} is not finite", ch.name)));
            }
            for t in ch
                .minus_kernel
                .terms
                .iter()
                .chain(ch.plus_kernel.iter().flat_map(|k| k.terms.iter()))
            {
                t.validate()?;
            }
        }
        if self.bright_levels.iter().any(|&i| i >= d) {
            return Err(Error::invalid("bright level index out of range"));
        }
        Ok(())
    }

    /// `P = sum_{i in bright} |psi_i|^2 / |psi|^2`.
    pub fn bright_population(&self, psi: &[C64]) -> f64 {
        let n: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if n == 0.0 {
            return 0.0;
        }
        self.bright_levels.iter().map(|&i| psi[i].norm_sqr()).sum::<f64>() / n
    }

    /// Effective Markovian rate of each channel, `int_0^inf Re alpha(t,0) dt`.
    pub fn markov_rates(&self) -> Result<Vec<f64>> {
        self.channels
            .iter()
            .map(|ch| {
                let minus = ch.minus_kernel.memory_time()?;
                let plus = match &ch.plus_kernel {
                    Some(k) => k.memory_time()?,
                    None => 0.0,
                };
                if plus != 0.0 {
                    return Err(Error::invalid(
                        "Markovian limit is only defined for zero-temperature channels",
                    ));
                }
                Ok(minus)
            })
            .collect()
    }
}

fn dyad3(i: usize, j: usize) -> CMatrix {
    CMatrix::dyad(3, i, j)
}

/// The driven three-level ion: levels 1, 2 bright (indices 0, 1), level 3 dark.
pub fn build_mg24(params: &Mg24Params) -> Result<ModelSpec> {
    if !(params.tau > 0.0) {
        return Err(Error::invalid("tau must be positive"));
    }
    if !(params.gamma_scaled > 0.0) {
        return Err(Error::invalid("gamma must be positive"));
    }
    if params.alpha_zeeman == 0.0 || !params.alpha_zeeman.is_finite() {
        return Err(Error::invalid("Zeeman shift must be finite and non-zero"));
    }
    if !params.omega.is_finite() || !params.lambda_det.is_finite() {
        return Err(Error::invalid("non-finite model parameter"));
    }
    let h = (&dyad3(0, 1) + &dyad3(1, 0)).scale_real(params.omega / 2.0);
    let k = &params.kernel;
    let channels = vec![
        Channel::zero_temperature("L1", dyad3(0, 1).scale_real(params.lambda_12()), k.clone()),
        Channel::zero_temperature("L2", dyad3(0, 2).scale_real(params.lambda_13()), k.clone()),
        Channel::zero_temperature("L3", dyad3(2, 0).scale_real(params.lambda_31()), k.clone()),
        Channel::zero_temperature(
            "L4",
            (&dyad3(0, 0) - &dyad3(2, 2)).scale_real(params.lambda_det),
            k.clone(),
        ),
    ];
    Ok(ModelSpec {
        label: "mg24".into(),
        h,
        channels,
        bright_levels: vec![0, 1],
        kind: ModelKind::Mg24(params.clone()),
    })
}

/// Two-level Rabi drive `H = (Omega/2)(|1><2| + |2><1|)` without coupling.
pub fn build_rabi(omega: f64) -> Result<ModelSpec> {
    if !omega.is_finite() {
        return Err(Error::invalid("Rabi frequency must be finite"));
    }
    let h = (&CMatrix::dyad(2, 0, 1) + &CMatrix::dyad(2, 1, 0)).scale_real(omega / 2.0);
    Ok(ModelSpec {
        label: "rabi".into(),
        h,
        channels: Vec::new(),
        bright_levels: vec![0],
        kind: ModelKind::Rabi { omega },
    })
}

pub fn sigma_z() -> CMatrix {
    CMatrix::diagonal(&[C64::new(1.0, 0.0), C64::new(-1.0, 0.0)])
}

/// Pure dephasing: `H = (omega0/2) sigma_z`, one Hermitian channel `L = sigma_z`.
pub fn build_dephasing(omega0: f64, kernel: MemoryKernel) -> Result<ModelSpec> {
    if !omega0.is_finite() {
        return Err(Error::invalid("omega0 must be finite"));
    }
    for t in &kernel.terms {
        t.validate()?;
    }
    Ok(ModelSpec {
        label: "dephasing".into(),
        h: sigma_z().scale_real(omega0 / 2.0),
        channels: vec![Channel::zero_temperature("sz", sigma_z(), kernel.clone())],
        bright_levels: vec![0],
        kind: ModelKind::Dephasing { omega0, kernel },
    })
}

/// Render a preset model as a config file with its kernel inlined.
pub fn to_config(model: &ModelSpec) -> Result<String> {
    let mut out = String::new();
    let kernel_lines = |out: &mut String, k: &MemoryKernel| {
        for t in &k.terms {
            let _ = writeln!(out, "kernel_term = {:?} {:?} {:?}", t.amplitude, t.decay, t.frequency);
        }
    };
    match &model.kind {
        ModelKind::Mg24(p) => {
            let _ = writeln!(out, "model = mg24");
            let _ = writeln!(out, "omega = {:?}", p.omega);
            let _ = writeln!(out, "gamma = {:?}", p.gamma_scaled);
            let _ = writeln!(out, "alpha = {:?}", p.alpha_zeeman);
            let _ = writeln!(out, "lambda_det = {:?}", p.lambda_det);
            let _ = writeln!(out, "tau = {:?}", p.tau);
            kernel_lines(&mut out, &p.kernel);
        }
        ModelKind::Rabi { omega } => {
            let _ = writeln!(out, "model = rabi");
            let _ = writeln!(out, "omega = {omega:?}");
        }
        ModelKind::Dephasing { omega0, kernel } => {
            let _ = writeln!(out, "model = dephasing");
            let _ = writeln!(out, "omega0 = {omega0:?}");
            kernel_lines(&mut out, kernel);
        }
        ModelKind::Custom => {
            return Err(Error::invalid("custom models have no config representation"));
        }
    }
    Ok(out)
}

/// Parse a model config. `kernel = <path>` is resolved relative to `base_dir`.
pub fn parse_config(text: &str, origin: &str, base_dir: Option<&Path>) -> Result<ModelSpec> {
    let mut model: Option<String> = None;
    let mut nums: Vec<(String, f64, usize)> = Vec::new();
    let mut inline_terms: Vec<KernelTerm> = Vec::new();
    let mut kernel_path: Option<(String, usize)> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let err = |message: String| Error::Parse {
            path: origin.to_string(),
            line: line_no,
            message,
        };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err("expected `key = value`".into()))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "model" => model = Some(value.to_string()),
            "kernel" => kernel_path = Some((value.to_string(), line_no)),
            "kernel_term" => {
                let k = kernel::parse_kernel(value, origin).map_err(|e| err(e.to_string()))?;
                inline_terms.extend(k.terms);
            }
            "omega" | "gamma" | "alpha" | "lambda_det" | "tau" | "omega0" => {
                let v: f64 = value
                    .parse()
                    .map_err(|e| err(format!("bad number {value:?}: {e}")))?;
                nums.push((key.to_string(), v, line_no));
            }
            other => return Err(err(format!("unknown key {other:?}"))),
        }
    }

    let kernel = match (kernel_path, inline_terms.is_empty()) {
        (Some(_), false) => {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: 0,
                message: "give either `kernel` or `kernel_term` lines, not both".into(),
            })
        }
        (Some((p, _)), true) => {
            let path = match base_dir {
                Some(b) => b.join(&p),
                None => p.into(),
            };
            Some(kernel::read_kernel_file(path)?)
        }
        (None, false) => Some(MemoryKernel::new(inline_terms)?),
        (None, true) => None,
    };
    let get = |k: &str| nums.iter().rev().find(|(n, _, _)| n == k).map(|(_, v, _)| *v);
    let reject_unused = |allowed: &[&str]| -> Result<()> {
        if let Some((n, _, line)) = nums.iter().find(|(n, _, _)| !allowed.contains(&n.as_str())) {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: *line,
                message: format!("key {n:?} does not apply to this model"),
            });
        }
        Ok(())
    };

    match model.as_deref() {
        Some("mg24") => {
            reject_unused(&["omega", "gamma", "alpha", "lambda_det", "tau"])?;
            let mut p = Mg24Params::defaults();
            if let Some(k) = kernel {
                p.kernel = k;
                p.tau = p.kernel.memory_time()?;
                p.lambda_det = 0.22 / p.tau.sqrt();
            }
            if let Some(v) = get("tau") {
                p.tau = v;
                p.lambda_det = 0.22 / v.sqrt();
            }
            if let Some(v) = get("omega") {
                p.omega = v;
            }
            if let Some(v) = get("gamma") {
                p.gamma_scaled = v;
            }
            if let Some(v) = get("alpha") {
                p.alpha_zeeman = v;
            }
            if let Some(v) = get("lambda_det") {
                p.lambda_det = v;
            }
            build_mg24(&p)
        }
        Some("rabi") => {
            reject_unused(&["omega"])?;
            build_rabi(get("omega").unwrap_or(2.0))
        }
        Some("dephasing") => {
            reject_unused(&["omega0"])?;
            let kernel = kernel.ok_or_else(|| Error::Parse {
                path: origin.to_string(),
                line: 0,
                message: "dephasing model needs a kernel".into(),
            })?;
            build_dephasing(get("omega0").unwrap_or(0.0), kernel)
        }
        Some(other) => Err(Error::Parse {
            path: origin.to_string(),
            line: 0,
            message: format!("unknown model {other:?} (expected mg24, rabi or dephasing)"),
        }),
        None => Err(Error::Parse {
            path: origin.to_string(),
            line: 0,
            message: "missing `model = ...`".into(),
        }),
    }
}

pub fn read_config(path: impl AsRef<Path>) -> Result<ModelSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, &path.display().to_string(), path.parent())
}

/// Resolve a preset name (`mg24`, `rabi`) or a config file path.
pub fn resolve(name_or_path: &str) -> Result<ModelSpec> {
    match name_or_path {
        "mg24" => build_mg24(&Mg24Params::defaults()),
        "rabi" => build_rabi(2.0),
        other => read_config(other),
    }
}
