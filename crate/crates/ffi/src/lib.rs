//! C ABI for the trajectory engine.
//!
//! Objects cross the boundary as opaque pointers. Models come from
//! `nmqsd_model_mg24`, `nmqsd_model_rabi` or `nmqsd_model_load`, ensembles
//! from `nmqsd_run_ensemble`, and each is released by the matching `*_free`.
//! Every fallible call returns an [`NmqsdStatus`]; the message of the most
//! recent failure on the calling thread is available from [`nmqsd_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nmqsd_core::algebra::CVector;
use nmqsd_core::analysis::{self, Variant};
use nmqsd_core::ensemble::{run_ensemble, EnsembleConfig, EnsembleResult, Method, PTableSink};
use nmqsd_core::kernel::{KernelTerm, MemoryKernel};
use nmqsd_core::models::{self, Mg24Params, ModelSpec};
use nmqsd_core::nmqsd::TimeGrid;
use nmqsd_core::{mqsd, nmqsd, Error};

/// Result codes. The numeric values match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NmqsdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Io = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NmqsdMethod {
    Nmqsd = 0,
    Mqsd = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NmqsdVariant {
    NonMarkov = 0,
    Markov = 1,
}

/// Opaque model handle.
pub struct NmqsdModel {
    spec: ModelSpec,
}

/// Opaque ensemble result handle.
pub struct NmqsdEnsemble {
    result: EnsembleResult,
}

/// Integration and sampling settings for [`nmqsd_run_ensemble`].
/// A `dt` of zero selects the method's default step.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct NmqsdRunConfig {
    pub method: NmqsdMethod,
    pub n_traj: usize,
    pub t_max: f64,
    pub dt: f64,
    pub sample_every: f64,
    pub seed: u64,
    pub workers: usize,
    pub initial_level: usize,
    /// Keep per-trajectory P(t) rows so the result can be analyzed.
    pub keep_ptable: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> NmqsdStatus {
    match e.exit_code() {
        2 => NmqsdStatus::InvalidArgument,
        3 => NmqsdStatus::Numerical,
        4 => NmqsdStatus::Io,
        _ => NmqsdStatus::Numerical,
    }
}

fn guard<F: FnOnce() -> Result<(), (NmqsdStatus, String)>>(f: F) -> NmqsdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NmqsdStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("panic inside nmqsd");
            NmqsdStatus::Panic
        }
    }
}

fn core<T>(r: nmqsd_core::Result<T>) -> Result<T, (NmqsdStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (NmqsdStatus, String) {
    (NmqsdStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (NmqsdStatus, String) {
    (NmqsdStatus::InvalidArgument, msg.into())
}

/// Copy the last error message into `buf` (NUL-terminated, truncated to
/// `len`). Returns the full message length excluding the terminator.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn nmqsd_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nmqsd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

unsafe fn out_ptr<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// The default three-level magnesium model.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn nmqsd_model_mg24(out: *mut *mut NmqsdModel) -> NmqsdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = core(models::build_mg24(&Mg24Params::defaults()))?;
        out_ptr(out, NmqsdModel { spec });
        Ok(())
    })
}

/// Driven two-level system without a bath.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn nmqsd_model_rabi(omega: f64, out: *mut *mut NmqsdModel) -> NmqsdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = core(models::build_rabi(omega))?;
        out_ptr(out, NmqsdModel { spec });
        Ok(())
    })
}

/// Load a model: a preset name or a config file path.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn nmqsd_model_load(name: *const c_char, out: *mut *mut NmqsdModel) -> NmqsdStatus {
    guard(|| {
        if name.is_null() {
            return Err(null("name"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let name = CStr::from_ptr(name).to_str().map_err(|_| invalid("name is not UTF-8"))?;
        let spec = core(models::resolve(name))?;
        out_ptr(out, NmqsdModel { spec });
        Ok(())
    })
}

/// Hilbert-space dimension of `model`, or 0 if it is null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nmqsd_model_dim(model: *const NmqsdModel) -> usize {
    model.as_ref().map_or(0, |m| m.spec.dim())
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nmqsd_model_free(model: *mut NmqsdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Memory time of the exponential sum given as three parallel arrays.
///
/// # Safety
/// Each array must hold `n` values; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn nmqsd_kernel_memory_time(
    amplitude: *const f64,
    decay: *const f64,
    frequency: *const f64,
    n: usize,
    out: *mut f64,
) -> NmqsdStatus {
    guard(|| {
        if amplitude.is_null() || decay.is_null() || frequency.is_null() {
            return Err(null("kernel array"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let a = std::slice::from_raw_parts(amplitude, n);
        let g = std::slice::from_raw_parts(decay, n);
        let w = std::slice::from_raw_parts(frequency, n);
        let terms = (0..n)
            .map(|i| KernelTerm::new(a[i], g[i], w[i]))
            .collect::<nmqsd_core::Result<Vec<_>>>();
        let kernel = core(terms.and_then(MemoryKernel::new))?;
        *out = core(kernel.memory_time())?;
        Ok(())
    })
}

/// Run a trajectory ensemble from basis level `cfg.initial_level`.
///
/// # Safety
/// `model` must be a live handle, `cfg` readable, `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn nmqsd_run_ensemble(
    model: *const NmqsdModel,
    cfg: *const NmqsdRunConfig,
    out: *mut *mut NmqsdEnsemble,
) -> NmqsdStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let method = match cfg.method {
            NmqsdMethod::Nmqsd => Method::Nmqsd,
            NmqsdMethod::Mqsd => Method::Mqsd,
        };
        let dt = if cfg.dt == 0.0 {
            match method {
                Method::Nmqsd => nmqsd::DEFAULT_DT,
                Method::Mqsd => mqsd::DEFAULT_DT,
            }
        } else {
            cfg.dt
        };
        let d = model.spec.dim();
        if cfg.initial_level >= d {
            return Err(invalid(format!("initial level {} outside dimension {d}", cfg.initial_level)));
        }
        let grid = core(TimeGrid::new(cfg.t_max, dt, cfg.sample_every))?;
        let mut ec = EnsembleConfig::new(method, cfg.n_traj, grid, cfg.seed);
        ec.workers = cfg.workers.max(1);
        let sink = if cfg.keep_ptable { PTableSink::Memory } else { PTableSink::Discard };
        let psi0 = CVector::basis(d, cfg.initial_level);
        let result = core(run_ensemble(&model.spec, &psi0, &ec, sink))?;
        out_ptr(out, NmqsdEnsemble { result });
        Ok(())
    })
}

/// Number of output times, or 0 if `ens` is null.
///
/// # Safety
/// `ens` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nmqsd_ensemble_n_times(ens: *const NmqsdEnsemble) -> usize {
    ens.as_ref().map_or(0, |e| e.result.times.len())
}

/// Trajectories that completed and that aborted.
///
/// # Safety
/// `ens` must be a live handle; outputs must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn nmqsd_ensemble_counts(
    ens: *const NmqsdEnsemble,
    n_ok: *mut usize,
    failures: *mut usize,
) -> NmqsdStatus {
    guard(|| {
        let e = ens.as_ref().ok_or_else(|| null("ensemble"))?;
        if n_ok.is_null() || failures.is_null() {
            return Err(null("output"));
        }
        *n_ok = e.result.n_ok;
        *failures = e.result.failures;
        Ok(())
    })
}

/// Copy the output times into `times` (length `len`, at least `n_times`).
///
/// # Safety
/// `ens` must be a live handle; `times` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn nmqsd_ensemble_times(ens: *const NmqsdEnsemble, times: *mut f64, len: usize) -> NmqsdStatus {
    guard(|| {
        let e = ens.as_ref().ok_or_else(|| null("ensemble"))?;
        if times.is_null() {
            return Err(null("times"));
        }
        let t = &e.result.times;
        if len < t.len() {
            return Err(invalid(format!("buffer holds {len} values, need {}", t.len())));
        }
        ptr::copy_nonoverlapping(t.as_ptr(), times, t.len());
        Ok(())
    })
}

/// Copy the mean density matrix at output `k` as row-major real and
/// imaginary parts, each `dim * dim` long.
///
/// # Safety
/// `ens` must be a live handle; `re` and `im` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn nmqsd_ensemble_rho(
    ens: *const NmqsdEnsemble,
    k: usize,
    re: *mut f64,
    im: *mut f64,
    len: usize,
) -> NmqsdStatus {
    guard(|| {
        let e = ens.as_ref().ok_or_else(|| null("ensemble"))?;
        if re.is_null() || im.is_null() {
            return Err(null("output"));
        }
        let rho = e.result.rho.get(k).ok_or_else(|| invalid(format!("time index {k} out of range")))?;
        let entries = rho.as_slice();
        if len < entries.len() {
            return Err(invalid(format!("buffer holds {len} values, need {}", entries.len())));
        }
        for (i, z) in entries.iter().enumerate() {
            *re.add(i) = z.re;
            *im.add(i) = z.im;
        }
        Ok(())
    })
}

/// Histogram the kept P(t) rows, fit the lineshape and report the
/// bright/dark peak-area ratio. A zero `t_min` and `t_max` selects the
/// default window.
///
/// # Safety
/// `ens` must be a live handle; `ratio` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn nmqsd_ensemble_area_ratio(
    ens: *const NmqsdEnsemble,
    delta_p: f64,
    t_min: f64,
    t_max: f64,
    variant: NmqsdVariant,
    ratio: *mut f64,
) -> NmqsdStatus {
    guard(|| {
        let e = ens.as_ref().ok_or_else(|| null("ensemble"))?;
        if ratio.is_null() {
            return Err(null("ratio"));
        }
        let table = e
            .result
            .ptable
            .as_ref()
            .ok_or_else(|| invalid("ensemble was run without keep_ptable"))?;
        let window = if t_min == 0.0 && t_max == 0.0 { None } else { Some((t_min, t_max)) };
        let v = match variant {
            NmqsdVariant::NonMarkov => Variant::NonMarkov,
            NmqsdVariant::Markov => Variant::Markov,
        };
        let hist = core(analysis::histogram(table, delta_p, window))?;
        let fit = core(analysis::fit_lineshape(&hist, v))?;
        *ratio = core(analysis::peak_area_ratio(&fit))?.ratio;
        Ok(())
    })
}

/// # Safety
/// `ens` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nmqsd_ensemble_free(ens: *mut NmqsdEnsemble) {
    if !ens.is_null() {
        drop(Box::from_raw(ens));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        let mut buf = vec![0 as c_char; 256];
        let n = unsafe { nmqsd_last_error(buf.as_mut_ptr(), buf.len()) };
        let s = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_string();
        assert_eq!(s.len(), n.min(255));
        s
    }

    #[test]
    fn memory_time_of_table() {
        let k = MemoryKernel::mg24();
        let a: Vec<f64> = k.terms.iter().map(|t| t.amplitude).collect();
        let g: Vec<f64> = k.terms.iter().map(|t| t.decay).collect();
        let w: Vec<f64> = k.terms.iter().map(|t| t.frequency).collect();
        let mut tau = 0.0;
        let s = unsafe { nmqsd_kernel_memory_time(a.as_ptr(), g.as_ptr(), w.as_ptr(), a.len(), &mut tau) };
        assert_eq!(s, NmqsdStatus::Ok);
        assert!((tau - 508.6).abs() < 0.05);
    }

    #[test]
    fn errors_are_reported() {
        let mut tau = 0.0;
        let (a, g, w) = (1.0, 0.0, 0.0);
        let s = unsafe { nmqsd_kernel_memory_time(&a, &g, &w, 1, &mut tau) };
        assert_eq!(s, NmqsdStatus::InvalidArgument);
        assert!(last_error().contains("diverges"));
        let s = unsafe { nmqsd_kernel_memory_time(ptr::null(), &g, &w, 1, &mut tau) };
        assert_eq!(s, NmqsdStatus::NullPointer);
        let mut m = ptr::null_mut();
        let name = b"/no/such/model\0";
        let s = unsafe { nmqsd_model_load(name.as_ptr() as *const c_char, &mut m) };
        assert_eq!(s, NmqsdStatus::Io);
        assert!(m.is_null());
    }

    #[test]
    fn rabi_ensemble_round_trip() {
        let mut m = ptr::null_mut();
        assert_eq!(unsafe { nmqsd_model_rabi(2.0, &mut m) }, NmqsdStatus::Ok);
        assert_eq!(unsafe { nmqsd_model_dim(m) }, 2);
        let cfg = NmqsdRunConfig {
            method: NmqsdMethod::Nmqsd,
            n_traj: 3,
            t_max: 1.0,
            dt: 0.001,
            sample_every: 0.25,
            seed: 1,
            workers: 1,
            initial_level: 0,
            keep_ptable: false,
        };
        let mut e = ptr::null_mut();
        assert_eq!(unsafe { nmqsd_run_ensemble(m, &cfg, &mut e) }, NmqsdStatus::Ok);
        let n = unsafe { nmqsd_ensemble_n_times(e) };
        assert_eq!(n, 5);
        let mut t = vec![0.0; n];
        assert_eq!(unsafe { nmqsd_ensemble_times(e, t.as_mut_ptr(), n) }, NmqsdStatus::Ok);
        assert_eq!(t[4], 1.0);
        let (mut re, mut im) = ([0.0; 4], [0.0; 4]);
        assert_eq!(unsafe { nmqsd_ensemble_rho(e, 4, re.as_mut_ptr(), im.as_mut_ptr(), 4) }, NmqsdStatus::Ok);
        assert!((re[0] - 1f64.cos().powi(2)).abs() < 1e-8);
        assert_eq!(
            unsafe { nmqsd_ensemble_rho(e, 9, re.as_mut_ptr(), im.as_mut_ptr(), 4) },
            NmqsdStatus::InvalidArgument
        );
        let mut r = 0.0;
        assert_eq!(
            unsafe { nmqsd_ensemble_area_ratio(e, 0.01, 0.0, 0.0, NmqsdVariant::Markov, &mut r) },
            NmqsdStatus::InvalidArgument
        );
        unsafe {
            nmqsd_ensemble_free(e);
            nmqsd_model_free(m);
            nmqsd_model_free(ptr::null_mut());
        }
    }
}
