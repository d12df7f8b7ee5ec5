//! C ABI for `manifold-diffusion`.
//!
//! Models and datasets are opaque heap handles created by `*_new`/`*_sample`
//! and released by the matching `*_free`. Every fallible call returns an
//! [`MfdStatus`]; on failure [`mfd_last_error`] describes the cause for the
//! calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use manifold_diffusion::collapse::{self, CollapseMethod};
use manifold_diffusion::diffusion::{EmpiricalScore, Score};
use manifold_diffusion::model::{
    sample_dataset, Activation, Center, Dataset, Ensemble, ManifoldModel,
};
use manifold_diffusion::{speciation, Error};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfdStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8 or a buffer of the wrong length.
    InvalidArgument = 1,
    /// A model or algorithm parameter is out of its domain.
    InvalidParameter = 2,
    Unsupported = 3,
    /// No root or no speciation signal in the admissible range.
    NoSolution = 4,
    /// Solver, quadrature or integration failure.
    Numerical = 5,
    Panic = 6,
}

/// Method that produced a collapse time.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfdCollapseMethod {
    GlmGeneral = 0,
    LinearIsometryClosedForm = 1,
    LinearRmt = 2,
}

impl From<CollapseMethod> for MfdCollapseMethod {
    fn from(m: CollapseMethod) -> Self {
        match m {
            CollapseMethod::GlmGeneral => Self::GlmGeneral,
            CollapseMethod::LinearIsometryClosedForm => Self::LinearIsometryClosedForm,
            CollapseMethod::LinearRmt => Self::LinearRmt,
        }
    }
}

/// Opaque model handle.
pub struct MfdModel {
    inner: ManifoldModel,
}

/// Opaque dataset handle.
pub struct MfdDataset {
    inner: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(err: &Error) -> MfdStatus {
    match err {
        Error::InvalidParameter { .. } | Error::Activation { .. } | Error::Config(_) => {
            MfdStatus::InvalidParameter
        }
        Error::Unsupported(_) => MfdStatus::Unsupported,
        Error::NoSpeciationSignal(_) | Error::NoCollapseTime { .. } => MfdStatus::NoSolution,
        _ => MfdStatus::Numerical,
    }
}

struct Fail(MfdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn arg_err(msg: &str) -> Fail {
    Fail(MfdStatus::InvalidArgument, msg.to_string())
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> MfdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MfdStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MfdStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(arg_err(&format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| arg_err(&format!("{name} is not valid UTF-8")))
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| arg_err(&format!("{name} is null")))
}

unsafe fn model_ref<'a>(p: *const MfdModel) -> Result<&'a ManifoldModel, Fail> {
    p.as_ref()
        .map(|m| &m.inner)
        .ok_or_else(|| arg_err("model is null"))
}

unsafe fn dataset_ref<'a>(p: *const MfdDataset) -> Result<&'a Dataset, Fail> {
    p.as_ref()
        .map(|m| &m.inner)
        .ok_or_else(|| arg_err("dataset is null"))
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mfd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mfd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a model with center μ = m·1_p.
///
/// `activation`: linear, tanh, relu or sigmoid; `ensemble`:
/// gaussian_iid or isometry.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mfd_model_new(
    d: usize,
    p: usize,
    alpha: f64,
    rho: f64,
    m: f64,
    activation: *const c_char,
    ensemble: *const c_char,
    seed: u64,
    out_model: *mut *mut MfdModel,
) -> MfdStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        *slot = std::ptr::null_mut();
        let act: Activation = str_arg(activation, "activation")?.parse()?;
        let ens: Ensemble = str_arg(ensemble, "ensemble")?.parse()?;
        let inner = ManifoldModel::new(d, p, alpha, rho, Center::Scale(m), act, ens, seed)?;
        *slot = Box::into_raw(Box::new(MfdModel { inner }));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from [`mfd_model_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mfd_model_free(model: *mut MfdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mfd_model_dims(
    model: *const MfdModel,
    out_d: *mut usize,
    out_p: *mut usize,
) -> MfdStatus {
    guard(|| {
        let m = model_ref(model)?;
        *out(out_d, "out_d")? = m.d();
        *out(out_p, "out_p")? = m.p();
        Ok(())
    })
}

/// Finite-d and large-d speciation times.
///
/// # Safety
/// `model` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mfd_speciation_time(
    model: *const MfdModel,
    out_finite: *mut f64,
    out_asymptotic: *mut f64,
) -> MfdStatus {
    guard(|| {
        let s = speciation::summarize(model_ref(model)?)?;
        *out(out_finite, "out_finite")? = s.t_s_finite;
        *out(out_asymptotic, "out_asymptotic")? = s.t_s_asymptotic;
        Ok(())
    })
}

/// Collapse time of the model at sample exponent `alpha`: isometric closed
/// form for linear isometric models, Marchenko–Pastur for linear gaussian
/// models, replica GLM otherwise.
///
/// # Safety
/// `model` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mfd_collapse_time(
    model: *const MfdModel,
    alpha: f64,
    out_t_c: *mut f64,
    out_method: *mut MfdCollapseMethod,
) -> MfdStatus {
    guard(|| {
        let m = model_ref(model)?;
        let res = match (m.activation().is_linear(), m.ensemble()) {
            (true, Ensemble::DeterministicIsometry) => {
                collapse::collapse_result_linear_isometry(alpha, m.beta())?
            }
            (true, Ensemble::GaussianIid) => collapse::collapse_time_linear_rmt(alpha, m.beta())?,
            _ => collapse::collapse_time_glm(m, alpha)?,
        };
        *out(out_t_c, "out_t_c")? = res.t_c;
        if !out_method.is_null() {
            *out_method = res.method.into();
        }
        Ok(())
    })
}

/// ½log(1 + 1/(e^{2α/β} − 1)).
///
/// # Safety
/// `out_t_c` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mfd_collapse_time_linear_isometry(
    alpha: f64,
    beta: f64,
    out_t_c: *mut f64,
) -> MfdStatus {
    guard(|| {
        *out(out_t_c, "out_t_c")? = collapse::collapse_time_linear_isometry(alpha, beta)?;
        Ok(())
    })
}

/// # Safety
/// `out_t_c` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mfd_collapse_time_linear_rmt(
    alpha: f64,
    beta: f64,
    out_t_c: *mut f64,
) -> MfdStatus {
    guard(|| {
        *out(out_t_c, "out_t_c")? = collapse::collapse_time_linear_rmt(alpha, beta)?.t_c;
        Ok(())
    })
}

/// Large-d (1/d)log det(η FFᵀ/p + I) for i.i.d. gaussian F.
#[no_mangle]
pub extern "C" fn mfd_mp_logdet(eta: f64, beta: f64) -> f64 {
    collapse::mp_logdet(eta, beta)
}

/// Draws `n` samples from the model.
///
/// # Safety
/// `model` must be a live handle; `out_dataset` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mfd_dataset_sample(
    model: *const MfdModel,
    n: usize,
    seed: u64,
    out_dataset: *mut *mut MfdDataset,
) -> MfdStatus {
    guard(|| {
        let slot = out(out_dataset, "out_dataset")?;
        *slot = std::ptr::null_mut();
        let inner = sample_dataset(model_ref(model)?, n, seed)?;
        *slot = Box::into_raw(Box::new(MfdDataset { inner }));
        Ok(())
    })
}

/// Releases a dataset; null is ignored.
///
/// # Safety
/// `dataset` must come from [`mfd_dataset_sample`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mfd_dataset_free(dataset: *mut MfdDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// # Safety
/// `dataset` must be a live handle; `out_n` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mfd_dataset_len(
    dataset: *const MfdDataset,
    out_n: *mut usize,
) -> MfdStatus {
    guard(|| {
        *out(out_n, "out_n")? = dataset_ref(dataset)?.len();
        Ok(())
    })
}

/// Copies ambient point `i` into `buf` (length must equal d).
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mfd_dataset_point(
    dataset: *const MfdDataset,
    i: usize,
    buf: *mut f64,
    len: usize,
) -> MfdStatus {
    guard(|| {
        let ds = dataset_ref(dataset)?;
        if i >= ds.len() {
            return Err(Fail(
                MfdStatus::InvalidParameter,
                format!("index {i} out of range"),
            ));
        }
        if buf.is_null() || len != ds.d() {
            return Err(arg_err("buffer must be non-null with length d"));
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(ds.point(i));
        Ok(())
    })
}

/// Empirical score at (x, t): writes the gradient into `grad` and the
/// log-normalizer log Σ_i exp(−‖x − a_t x_i‖²/2h_t) into `out_log_norm`
/// (which may be null).
///
/// # Safety
/// `x` and `grad` must point to `len` doubles, `len` equal to d.
#[no_mangle]
pub unsafe extern "C" fn mfd_empirical_score(
    dataset: *const MfdDataset,
    x: *const f64,
    t: f64,
    grad: *mut f64,
    len: usize,
    out_log_norm: *mut f64,
) -> MfdStatus {
    guard(|| {
        let ds = dataset_ref(dataset)?;
        if x.is_null() || grad.is_null() || len != ds.d() {
            return Err(arg_err("x and grad must be non-null with length d"));
        }
        let xs = std::slice::from_raw_parts(x, len);
        let gs = std::slice::from_raw_parts_mut(grad, len);
        let log_norm = EmpiricalScore::new(ds)?.eval_into(xs, t, gs)?;
        if !out_log_norm.is_null() {
            *out_log_norm = log_norm;
        }
        Ok(())
    })
}
