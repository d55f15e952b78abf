//! C ABI over amp-lab.
//!
//! Every function returns an [`AmpStatus`]; on failure the message is
//! available from [`amp_last_error_message`] on the same thread. Handles are
//! opaque and released with their `_free` function. Panics are caught at the
//! boundary and reported as `AMP_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use amp_lab::amp::{run_amp, AmpOptions, AmpTrace, Mode};
use amp_lab::config::parse_config;
use amp_lab::decomp::{decompose, DecompOptions};
use amp_lab::diag::HFamily;
use amp_lab::model::{LinearModel, ModelSpec, NoiseSpec, SignalSpec};
use amp_lab::se::{run_se, SeTrace};
use amp_lab::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    InvalidSparsity = 3,
    InvalidFraction = 4,
    DimensionMismatch = 5,
    NumericFailure = 6,
    CalibrationFailure = 7,
    DegenerateDirection = 8,
    DegenerateNorm = 9,
    InvalidData = 10,
    Config = 11,
    Format = 12,
    Io = 13,
    OutOfRange = 14,
    Panic = 15,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmpMode {
    Sparse = 0,
    Robust = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmpHFamily {
    LassoH1 = 0,
    LassoH2 = 1,
    RobustH1 = 2,
    RobustH2 = 3,
}

/// A generated problem instance.
pub struct AmpModel(LinearModel);

/// An AMP run (t = 0, …, t_max).
pub struct AmpRun {
    trace: AmpTrace,
    model: LinearModel,
}

/// A state-evolution run (t = 1, …, t_max).
pub struct AmpSe(SeTrace);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> AmpStatus {
    match e {
        Error::InvalidParameter { .. } => AmpStatus::InvalidParameter,
        Error::InvalidSparsity { .. } => AmpStatus::InvalidSparsity,
        Error::InvalidFraction(_) => AmpStatus::InvalidFraction,
        Error::DimensionMismatch(_) => AmpStatus::DimensionMismatch,
        Error::NumericFailure { .. } => AmpStatus::NumericFailure,
        Error::CalibrationFailure { .. } => AmpStatus::CalibrationFailure,
        Error::DegenerateDirection { .. } => AmpStatus::DegenerateDirection,
        Error::DegenerateNorm { .. } => AmpStatus::DegenerateNorm,
        Error::InvalidData(_) => AmpStatus::InvalidData,
        Error::Config { .. } => AmpStatus::Config,
        Error::Format(_) => AmpStatus::Format,
        Error::Io(_) => AmpStatus::Io,
    }
}

enum Fail {
    Lib(Error),
    Status(AmpStatus, String),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(AmpStatus::NullPointer, format!("{what} is null"))
}

fn range(what: String) -> Fail {
    Fail::Status(AmpStatus::OutOfRange, what)
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AmpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AmpStatus::Ok
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            AmpStatus::Panic
        }
    }
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn mode_of(mode: AmpMode, lambda: f64, n: usize) -> Mode {
    match mode {
        AmpMode::Sparse => Mode::Sparse,
        AmpMode::Robust => Mode::Robust {
            lambda: if lambda > 0.0 { lambda } else { 1.0 / (n as f64).sqrt() },
        },
    }
}

/// Copies `src` into `buf` (capacity `len`); fails if it does not fit.
unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), Fail> {
    if buf.is_null() {
        return Err(null("buf"));
    }
    if len < src.len() {
        return Err(Fail::Status(
            AmpStatus::DimensionMismatch,
            format!("buffer holds {len}, need {}", src.len()),
        ));
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn amp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn amp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Sparse instance: k-sparse ±1/√k signal, Gaussian noise with ‖ε‖₂ ≈ `noise_norm`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn amp_model_new_sparse(
    n: usize,
    p: usize,
    k: usize,
    noise_norm: f64,
    seed: u64,
    trial: u64,
    out_model: *mut *mut AmpModel,
) -> AmpStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let spec = ModelSpec {
            n,
            p,
            k,
            signal: SignalSpec::default(),
            noise: NoiseSpec::gaussian_with_norm(n.max(1), noise_norm),
        };
        *slot = Box::into_raw(Box::new(AmpModel(spec.generate(seed, trial)?)));
        Ok(())
    })
}

/// Robust instance: dense ‖θ*‖₂ = 1 signal, σ² = 1/n noise with a fraction
/// `eps_h` replaced by a point mass at 5σ.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn amp_model_new_robust(
    n: usize,
    p: usize,
    eps_h: f64,
    seed: u64,
    trial: u64,
    out_model: *mut *mut AmpModel,
) -> AmpStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let spec = ModelSpec {
            n,
            p,
            k: p,
            signal: SignalSpec::default(),
            noise: NoiseSpec::robust_default(n.max(1), eps_h),
        };
        *slot = Box::into_raw(Box::new(AmpModel(spec.generate(seed, trial)?)));
        Ok(())
    })
}

/// Instance described by a TOML experiment config (base size) for `trial`.
///
/// # Safety
/// `config` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn amp_model_from_config(
    config: *const c_char,
    trial: u64,
    out_model: *mut *mut AmpModel,
) -> AmpStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        if config.is_null() {
            return Err(null("config"));
        }
        let text = CStr::from_ptr(config)
            .to_str()
            .map_err(|e| Fail::Status(AmpStatus::Format, format!("config is not UTF-8: {e}")))?;
        let cfg = parse_config(text)?;
        let model = cfg.model_spec(cfg.sizes()[0]).generate(cfg.seed, trial)?;
        *slot = Box::into_raw(Box::new(AmpModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from an `amp_model_new_*` call, or be null.
#[no_mangle]
pub unsafe extern "C" fn amp_model_free(model: *mut AmpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; the out pointers valid or null.
#[no_mangle]
pub unsafe extern "C" fn amp_model_dims(
    model: *const AmpModel,
    n: *mut usize,
    p: *mut usize,
    k: *mut usize,
) -> AmpStatus {
    guard(|| {
        let m = &get(model, "model")?.0;
        for (ptr, v) in [(n, m.n), (p, m.p), (k, m.k)] {
            if let Some(slot) = ptr.as_mut() {
                *slot = v;
            }
        }
        Ok(())
    })
}

/// Copies θ* (length p) into `buf`.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn amp_model_copy_signal(model: *const AmpModel, buf: *mut f64, len: usize) -> AmpStatus {
    guard(|| copy_out(&get(model, "model")?.0.signal, buf, len))
}

/// Copies ε (length n) into `buf`.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn amp_model_copy_noise(model: *const AmpModel, buf: *mut f64, len: usize) -> AmpStatus {
    guard(|| copy_out(&get(model, "model")?.0.noise, buf, len))
}

/// Runs AMP for `t_max` iterations. In robust mode a non-positive `lambda`
/// means 1/√n.
///
/// # Safety
/// `model` must be a live handle and `out_run` valid.
#[no_mangle]
pub unsafe extern "C" fn amp_run(
    model: *const AmpModel,
    mode: AmpMode,
    lambda: f64,
    t_max: usize,
    out_run: *mut *mut AmpRun,
) -> AmpStatus {
    guard(|| {
        let m = &get(model, "model")?.0;
        let slot = out(out_run, "out_run")?;
        let trace = run_amp(m, mode_of(mode, lambda, m.n), t_max, AmpOptions::default())?;
        *slot = Box::into_raw(Box::new(AmpRun { trace, model: m.clone() }));
        Ok(())
    })
}

/// # Safety
/// `run` must come from `amp_run`, or be null.
#[no_mangle]
pub unsafe extern "C" fn amp_run_free(run: *mut AmpRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn amp_run_t_max(run: *const AmpRun, t_max: *mut usize) -> AmpStatus {
    guard(|| {
        *out(t_max, "t_max")? = get(run, "run")?.trace.t_max();
        Ok(())
    })
}

/// ‖θ_t − θ*‖₂, ‖F_t(β_t)‖₂ and ‖G_t(s_t)‖₂ at iteration t (any out pointer
/// may be null).
///
/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn amp_run_norms(
    run: *const AmpRun,
    t: usize,
    risk: *mut f64,
    gamma_norm: *mut f64,
    alpha_norm: *mut f64,
) -> AmpStatus {
    guard(|| {
        let r = get(run, "run")?;
        let st = r
            .trace
            .states
            .get(t)
            .ok_or_else(|| range(format!("t = {t} beyond t_max = {}", r.trace.t_max())))?;
        for (ptr, v) in [(risk, st.risk), (gamma_norm, st.gamma_norm), (alpha_norm, st.alpha_norm)] {
            if let Some(slot) = ptr.as_mut() {
                *slot = v;
            }
        }
        Ok(())
    })
}

/// τ_t or b_t; `defined` is set to 0 where the iteration has none.
///
/// # Safety
/// `run` must be a live handle; `value` and `defined` valid.
#[no_mangle]
pub unsafe extern "C" fn amp_run_param(run: *const AmpRun, t: usize, value: *mut f64, defined: *mut i32) -> AmpStatus {
    guard(|| {
        let r = get(run, "run")?;
        let st = r
            .trace
            .states
            .get(t)
            .ok_or_else(|| range(format!("t = {t} beyond t_max = {}", r.trace.t_max())))?;
        *out(defined, "defined")? = st.param.is_some() as i32;
        *out(value, "value")? = st.param.unwrap_or(f64::NAN);
        Ok(())
    })
}

/// Copies θ_t (length p), t ≤ t_max + 1.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn amp_run_copy_theta(run: *const AmpRun, t: usize, buf: *mut f64, len: usize) -> AmpStatus {
    guard(|| {
        let r = get(run, "run")?;
        if t > r.trace.t_max() + 1 {
            return Err(range(format!("t = {t} beyond t_max + 1 = {}", r.trace.t_max() + 1)));
        }
        copy_out(r.trace.theta(t), buf, len)
    })
}

/// Builds the exact decomposition of the run and reports the worst relative
/// deviation over its exactness checks (identities, span membership, basis
/// orthonormality) and the number of completed steps.
///
/// # Safety
/// `run` must be a live handle; out pointers valid or null.
#[no_mangle]
pub unsafe extern "C" fn amp_run_decomp_check(
    run: *const AmpRun,
    aux_seed: u64,
    worst: *mut f64,
    steps: *mut usize,
) -> AmpStatus {
    guard(|| {
        let r = get(run, "run")?;
        let opts = DecompOptions { aux_seed, ..DecompOptions::default() };
        let dec = decompose(&r.model, &r.trace, &opts)?;
        let w = dec
            .checks
            .iter()
            .flat_map(|c| [c.xi_span, c.zeta_span, c.xi_formula, c.zeta_formula, c.orthonormality])
            .fold(0.0, f64::max);
        if let Some(s) = worst.as_mut() {
            *s = w;
        }
        if let Some(s) = steps.as_mut() {
            *s = dec.len();
        }
        Ok(())
    })
}

/// State evolution for the model's θ* and ε.
///
/// # Safety
/// `model` must be a live handle and `out_se` valid.
#[no_mangle]
pub unsafe extern "C" fn amp_se_run(
    model: *const AmpModel,
    mode: AmpMode,
    lambda: f64,
    t_max: usize,
    out_se: *mut *mut AmpSe,
) -> AmpStatus {
    guard(|| {
        let m = &get(model, "model")?.0;
        let slot = out(out_se, "out_se")?;
        if t_max == 0 {
            return Err(Fail::Status(AmpStatus::InvalidParameter, "t_max must be >= 1".into()));
        }
        let se = run_se(m, mode_of(mode, lambda, m.n), t_max)?;
        *slot = Box::into_raw(Box::new(AmpSe(se)));
        Ok(())
    })
}

/// # Safety
/// `se` must come from `amp_se_run`, or be null.
#[no_mangle]
pub unsafe extern "C" fn amp_se_free(se: *mut AmpSe) {
    if !se.is_null() {
        drop(Box::from_raw(se));
    }
}

/// γ*_t for 1 ≤ t ≤ t_max + 1 and α*_t for 1 ≤ t ≤ t_max (α is NaN at
/// t_max + 1).
///
/// # Safety
/// `se` must be a live handle; out pointers valid or null.
#[no_mangle]
pub unsafe extern "C" fn amp_se_values(se: *const AmpSe, t: usize, gamma: *mut f64, alpha: *mut f64) -> AmpStatus {
    guard(|| {
        let s = &get(se, "se")?.0;
        let len = s.entries.len();
        if t == 0 || t > len + 1 {
            return Err(range(format!("t = {t} outside 1..={}", len + 1)));
        }
        if let Some(g) = gamma.as_mut() {
            *g = s.gamma(t);
        }
        if let Some(a) = alpha.as_mut() {
            *a = if t <= len { s.alpha(t) } else { f64::NAN };
        }
        Ok(())
    })
}

/// One H-function value at ω (lasso) or τ (robust) with default inner grids.
///
/// # Safety
/// `value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn amp_h_value(family: AmpHFamily, x: f64, value: *mut f64) -> AmpStatus {
    guard(|| {
        let slot = out(value, "value")?;
        let fam = match family {
            AmpHFamily::LassoH1 => HFamily::LassoH1,
            AmpHFamily::LassoH2 => HFamily::LassoH2,
            AmpHFamily::RobustH1 => HFamily::RobustH1,
            AmpHFamily::RobustH2 => HFamily::RobustH2,
        };
        *slot = fam.eval(x, &Default::default())?.value;
        Ok(())
    })
}
