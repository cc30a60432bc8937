//! C ABI over the `dualsolve` library.
//!
//! Conventions: every fallible function returns a [`DsStatus`] and writes its
//! result through an out-pointer. On failure a message is kept per thread and
//! can be read with [`ds_last_error`]. Handles are opaque; each `*_free`
//! function accepts null. Strings returned to the caller are released with
//! [`ds_string_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use dualsolve::backbone::{AnalyticModel, Backbone, GaussianModel, MixtureModel};
use dualsolve::interp::interp_params;
use dualsolve::learning::draw_inputs;
use dualsolve::params_file::{decode_params, ParamsFile, ParamsMeta, Provenance};
use dualsolve::schedule::{ScheduleKind, ScheduleSpec};
use dualsolve::solver::{sample_batch, Mode, SolverConfig, SolverParams};
use dualsolve::Error;

/// Result codes shared by all functions.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    Numerical = 5,
    Backbone = 6,
    Panic = 7,
}

/// Learned (or default) per-step parameters together with their schedule.
pub struct DsParams {
    file: ParamsFile,
}

/// An analytic denoiser with a closed-form score.
pub struct DsModel {
    model: AnalyticModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DsStatus {
    match e {
        Error::Parse(_) | Error::Version { .. } => DsStatus::Parse,
        Error::Io(_) => DsStatus::Io,
        Error::NonFinite(_)
        | Error::Overflow(_)
        | Error::Diverged { .. }
        | Error::DegenerateStep(_)
        | Error::DegenerateSchedule(_)
        | Error::Convergence(_) => DsStatus::Numerical,
        Error::Backbone(_) | Error::Oracle(_) => DsStatus::Backbone,
        _ => DsStatus::InvalidArgument,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> DsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => DsStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer passed for `{what}`"));
            DsStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            DsStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Lib(Error::Argument(format!("`{what}` is not valid UTF-8"))))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ds_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ds_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn ds_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn ds_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Data-prediction defaults for `steps` steps.
///
/// `schedule` is one of "ot", "vp-cosine", "vp-linear", "ve". `mode` may be
/// null (no mode recorded) or one of "p1", "p1c2", "p2", "p2c2".
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_params_default(
    steps: usize,
    schedule: *const c_char,
    mode: *const c_char,
    out: *mut *mut DsParams,
) -> DsStatus {
    guard(|| {
        let name = text(schedule, "schedule")?;
        let spec = ScheduleSpec::new(ScheduleKind::from_parts(name, &Default::default())?);
        let mode: Option<Mode> = if mode.is_null() {
            None
        } else {
            Some(text(mode, "mode")?.parse()?)
        };
        if steps == 0 {
            return Err(Error::Argument("steps must be at least 1".into()).into());
        }
        let mut meta = ParamsMeta::new(spec);
        meta.mode = mode;
        let file = ParamsFile::new(&SolverParams::default_init(steps), &meta)?;
        put(out, DsParams { file })
    })
}

/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_params_from_json(json: *const c_char, out: *mut *mut DsParams) -> DsStatus {
    guard(|| {
        let file = decode_params(text(json, "json")?)?;
        put(out, DsParams { file })
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_params_load(path: *const c_char, out: *mut *mut DsParams) -> DsStatus {
    guard(|| {
        let file = ParamsFile::read(Path::new(text(path, "path")?))?;
        put(out, DsParams { file })
    })
}

/// Atomically write the parameter file.
///
/// # Safety
/// `params` must be a live handle; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ds_params_save(params: *const DsParams, path: *const c_char) -> DsStatus {
    guard(|| {
        let p = handle(params, "params")?;
        p.file.write(Path::new(text(path, "path")?))?;
        Ok(())
    })
}

/// Serialise to JSON; free the result with [`ds_string_free`].
///
/// # Safety
/// `params` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_params_to_json(params: *const DsParams, out: *mut *mut c_char) -> DsStatus {
    guard(|| {
        let p = handle(params, "params")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let s = serde_json_string(&p.file)?;
        *out = CString::new(s).map_err(|e| Error::Parse(e.to_string()))?.into_raw();
        Ok(())
    })
}

fn serde_json_string(file: &ParamsFile) -> Result<String, Error> {
    let meta = ParamsMeta {
        schedule: file.schedule_spec()?,
        mode: file.mode,
        provenance: file.provenance.clone(),
    };
    dualsolve::params_file::encode_params(&file.params(), &meta)
}

/// Number of steps M (0 for a null handle).
///
/// # Safety
/// `params` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ds_params_steps(params: *const DsParams) -> usize {
    params.as_ref().map_or(0, |p| p.file.steps)
}

/// Write the M+1 grid times, descending, into `out`.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ds_params_timesteps(params: *const DsParams, out: *mut f64, len: usize) -> DsStatus {
    guard(|| {
        let p = handle(params, "params")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let ts = p.file.params().timesteps(&p.file.schedule_spec()?)?;
        if len != ts.len() {
            return Err(Error::LengthMismatch {
                field: "out".into(),
                expected: ts.len(),
                found: len,
            }
            .into());
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&ts);
        Ok(())
    })
}

/// Parameters for `steps` steps interpolated from two learned sets whose
/// step counts bracket it.
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_params_interp(
    a: *const DsParams,
    b: *const DsParams,
    steps: usize,
    out: *mut *mut DsParams,
) -> DsStatus {
    guard(|| {
        let (a, b) = (handle(a, "a")?, handle(b, "b")?);
        let (lo, hi) = if a.file.steps <= b.file.steps { (a, b) } else { (b, a) };
        let schedule = lo.file.schedule_spec()?;
        if hi.file.schedule_spec()? != schedule {
            return Err(Error::Argument("parameter sets use different schedules".into()).into());
        }
        let params = interp_params(&lo.file.params(), &hi.file.params(), steps)?;
        let meta = ParamsMeta {
            schedule,
            mode: if lo.file.mode == hi.file.mode {
                lo.file.mode
            } else {
                None
            },
            provenance: Provenance::default(),
        };
        put(
            out,
            DsParams {
                file: ParamsFile::new(&params, &meta)?,
            },
        )
    })
}

/// # Safety
/// `params` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ds_params_free(params: *mut DsParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Gaussian data distribution with per-axis mean and a shared std.
///
/// # Safety
/// `mean` must hold `dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_model_gaussian(mean: *const f64, dim: usize, std: f64, out: *mut *mut DsModel) -> DsStatus {
    guard(|| {
        if mean.is_null() {
            return Err(Fail::Null("mean"));
        }
        let mean = std::slice::from_raw_parts(mean, dim).to_vec();
        let model = AnalyticModel::Gaussian(GaussianModel::isotropic(mean, std)?);
        put(out, DsModel { model })
    })
}

/// Two-class 1D mixture with components at -mu and +mu.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_model_mixture_1d(mu: f64, std: f64, out: *mut *mut DsModel) -> DsStatus {
    guard(|| {
        let model = AnalyticModel::Mixture(MixtureModel::symmetric_1d(mu, std)?);
        put(out, DsModel { model })
    })
}

/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_model_from_json(json: *const c_char, out: *mut *mut DsModel) -> DsStatus {
    guard(|| {
        let model = AnalyticModel::from_json(text(json, "json")?)?;
        put(out, DsModel { model })
    })
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ds_model_dim(model: *const DsModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.dim())
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ds_model_classes(model: *const DsModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.num_classes())
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ds_model_free(model: *mut DsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Deterministic starting noise `sigma(t_max) * z` for `batch` samples,
/// row-major into `out` (`batch * dim` doubles).
///
/// # Safety
/// `out` must hold `batch * dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn ds_initial_noise(
    params: *const DsParams,
    dim: usize,
    batch: usize,
    seed: u64,
    out: *mut f64,
) -> DsStatus {
    guard(|| {
        let p = handle(params, "params")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let (x, _) = draw_inputs(&p.file.schedule_spec()?, dim, 0, batch, seed)?;
        let dst = std::slice::from_raw_parts_mut(out, batch * dim);
        for (row, chunk) in x.iter().zip(dst.chunks_mut(dim.max(1))) {
            chunk.copy_from_slice(row);
        }
        Ok(())
    })
}

/// Integrate `batch` states from t_max to t_min.
///
/// `x_t` and `out` are row-major `batch * dim` arrays (they may alias).
/// `cond` is null for unconditional sampling, otherwise `batch` class
/// indices where a negative entry means unconditional. `mode` may be null to
/// use the mode stored with the parameters (p1c2 when none is stored).
///
/// # Safety
/// Pointers must reference arrays of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn ds_sample(
    params: *const DsParams,
    model: *const DsModel,
    mode: *const c_char,
    guidance: f64,
    x_t: *const f64,
    cond: *const i64,
    batch: usize,
    out: *mut f64,
) -> DsStatus {
    guard(|| {
        let p = handle(params, "params")?;
        let m = handle(model, "model")?;
        if x_t.is_null() {
            return Err(Fail::Null("x_t"));
        }
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let mode = if mode.is_null() {
            p.file.mode.unwrap_or(Mode::P1c2)
        } else {
            text(mode, "mode")?.parse()?
        };
        let dim = m.model.dim();
        let flat = std::slice::from_raw_parts(x_t, batch * dim);
        let xs: Vec<Vec<f64>> = flat.chunks(dim.max(1)).take(batch).map(<[f64]>::to_vec).collect();
        let labels: Vec<Option<usize>> = if cond.is_null() {
            vec![None; batch]
        } else {
            std::slice::from_raw_parts(cond, batch)
                .iter()
                .map(|&c| usize::try_from(c).ok())
                .collect()
        };
        let config = SolverConfig::new(mode, p.file.steps, p.file.schedule_spec()?).with_guidance(guidance);
        let results = sample_batch(&m.model, &config, &p.file.params(), &xs, &labels)?;
        let dst = std::slice::from_raw_parts_mut(out, batch * dim);
        for (r, chunk) in results.iter().zip(dst.chunks_mut(dim.max(1))) {
            chunk.copy_from_slice(&r.final_state);
        }
        Ok(())
    })
}
