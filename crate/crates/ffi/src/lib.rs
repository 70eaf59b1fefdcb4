//! C ABI for the `lsr` estimators.
//!
//! Handles are opaque pointers created and destroyed by this library. Every
//! fallible call returns an [`LsrStatus`]; on failure a message describing
//! the last error on the calling thread is available from
//! [`lsr_last_error_message`]. Class labels passed in are 1-based; source
//! indices are 0-based array positions. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lsr::bench::{run_estimator, EstimatorContext, EstimatorKind};
use lsr::dataset::{LabeledDataset, UnlabeledDataset};
use lsr::estimator::{EstimationResult, OptimizerConfig};
use lsr::kernel::{fit_mmd_terms, KernelSpec};
use lsr::simplex::project_simplex;
use lsr::weighting::{mwv_weights, WeightRule, WeightingConfig};
use lsr::{Error, ErrorKind};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsrStatus {
    Ok = 0,
    NullPointer = 1,
    /// Invalid argument or configuration.
    InvalidArgument = 2,
    /// The data cannot support the requested computation.
    Data = 3,
    Numerical = 4,
    /// An internal panic was caught.
    Internal = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsrEstimator {
    Single = 0,
    Average = 1,
    Trim = 2,
    Rod = 3,
    Roe = 4,
    RoeMulti = 5,
    Oracle = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsrRule {
    Mwv = 0,
    Truncated = 1,
    Trimmed = 2,
    MedianOfMeans = 3,
}

/// Estimation options; obtain defaults from [`lsr_options_default`].
/// `estimator` and `rule` hold [`LsrEstimator`] and [`LsrRule`] values.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LsrOptions {
    pub estimator: u32,
    pub rule: u32,
    pub eps_h: f64,
    pub mom_groups: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub refine_steps: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Source used by the single estimator.
    pub single_source: usize,
}

/// Sources, target and kernel bandwidth for one estimation problem.
pub struct LsrProblem {
    num_classes: usize,
    dim: usize,
    bandwidth: f64,
    sources: Vec<LabeledDataset>,
    target: Option<UnlabeledDataset>,
    inliers: Vec<usize>,
}

/// Result of [`lsr_estimate`].
pub struct LsrEstimate {
    result: EstimationResult,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

fn fail(status: LsrStatus, message: &str) -> LsrStatus {
    set_last_error(message);
    status
}

fn status_of(e: &Error) -> LsrStatus {
    match e.kind() {
        ErrorKind::Usage => LsrStatus::InvalidArgument,
        ErrorKind::Data => LsrStatus::Data,
        ErrorKind::Numerical => LsrStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), LsrStatus>) -> LsrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            LsrStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(_) => fail(LsrStatus::Internal, "internal panic"),
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, LsrStatus>;
}

impl<T> OrStatus<T> for lsr::Result<T> {
    fn or_status(self) -> Result<T, LsrStatus> {
        self.map_err(|e| fail(status_of(&e), &e.to_string()))
    }
}

fn cells(n_rows: usize, dim: usize) -> Result<usize, LsrStatus> {
    n_rows
        .checked_mul(dim)
        .ok_or_else(|| invalid("n_rows * dim overflows"))
}

unsafe fn slice<'a, T>(data: *const T, len: usize, what: &str) -> Result<&'a [T], LsrStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(fail(LsrStatus::NullPointer, &format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn slice_mut<'a, T>(data: *mut T, len: usize, what: &str) -> Result<&'a mut [T], LsrStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    if data.is_null() {
        return Err(fail(LsrStatus::NullPointer, &format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(data, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, LsrStatus> {
    p.as_ref()
        .ok_or_else(|| fail(LsrStatus::NullPointer, &format!("{what} is null")))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, LsrStatus> {
    p.as_mut()
        .ok_or_else(|| fail(LsrStatus::NullPointer, &format!("{what} is null")))
}

fn invalid(message: &str) -> LsrStatus {
    fail(LsrStatus::InvalidArgument, message)
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn lsr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn lsr_options_default() -> LsrOptions {
    let cfg = OptimizerConfig::default();
    LsrOptions {
        estimator: LsrEstimator::Roe as u32,
        rule: LsrRule::Mwv as u32,
        eps_h: 0.0,
        mom_groups: 1,
        max_iters: cfg.max_iters,
        tol: cfg.tol,
        refine_steps: cfg.refine_steps,
        restarts: cfg.restarts,
        seed: 0,
        single_source: 0,
    }
}

/// Creates an empty problem with `num_classes` classes and covariate
/// dimension `dim`; the bandwidth starts at 1. Returns null on invalid
/// sizes.
#[no_mangle]
pub extern "C" fn lsr_problem_new(num_classes: usize, dim: usize) -> *mut LsrProblem {
    if num_classes == 0 || dim == 0 {
        set_last_error("num_classes and dim must be positive");
        return ptr::null_mut();
    }
    Box::into_raw(Box::new(LsrProblem {
        num_classes,
        dim,
        bandwidth: 1.0,
        sources: Vec::new(),
        target: None,
        inliers: Vec::new(),
    }))
}

/// # Safety
/// `problem` must come from [`lsr_problem_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lsr_problem_free(problem: *mut LsrProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Appends a labeled source: `covariates` is row-major `n_rows x dim`,
/// `labels` holds `n_rows` classes in `1..=num_classes`.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn lsr_problem_add_source(
    problem: *mut LsrProblem,
    covariates: *const f64,
    labels: *const u32,
    n_rows: usize,
) -> LsrStatus {
    guard(|| {
        let p = handle_mut(problem, "problem")?;
        let cov = slice(covariates, cells(n_rows, p.dim)?, "covariates")?;
        let raw = slice(labels, n_rows, "labels")?;
        let mut ys = Vec::with_capacity(n_rows);
        for (i, &y) in raw.iter().enumerate() {
            if y == 0 || y as usize > p.num_classes {
                return Err(fail(
                    LsrStatus::Data,
                    &format!("label {y} in row {i} is outside 1..{}", p.num_classes),
                ));
            }
            ys.push(y as usize - 1);
        }
        let source = LabeledDataset::new(cov.to_vec(), ys, p.dim, p.num_classes).or_status()?;
        p.sources.push(source);
        Ok(())
    })
}

/// Sets (or replaces) the unlabeled target sample, row-major
/// `n_rows x dim`.
///
/// # Safety
/// `covariates` must reference `n_rows * dim` values.
#[no_mangle]
pub unsafe extern "C" fn lsr_problem_set_target(
    problem: *mut LsrProblem,
    covariates: *const f64,
    n_rows: usize,
) -> LsrStatus {
    guard(|| {
        let p = handle_mut(problem, "problem")?;
        let cov = slice(covariates, cells(n_rows, p.dim)?, "covariates")?;
        p.target = Some(UnlabeledDataset::new(cov.to_vec(), p.dim).or_status()?);
        Ok(())
    })
}

/// # Safety
/// `problem` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lsr_problem_set_bandwidth(
    problem: *mut LsrProblem,
    bandwidth: f64,
) -> LsrStatus {
    guard(|| {
        let p = handle_mut(problem, "problem")?;
        KernelSpec::gaussian(bandwidth).or_status()?;
        p.bandwidth = bandwidth;
        Ok(())
    })
}

/// Sets the inlier sources (0-based) used by the oracle estimator.
///
/// # Safety
/// `indices` must reference `len` values.
#[no_mangle]
pub unsafe extern "C" fn lsr_problem_set_inliers(
    problem: *mut LsrProblem,
    indices: *const usize,
    len: usize,
) -> LsrStatus {
    guard(|| {
        let p = handle_mut(problem, "problem")?;
        p.inliers = slice(indices, len, "indices")?.to_vec();
        Ok(())
    })
}

/// # Safety
/// `problem` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lsr_problem_num_sources(problem: *const LsrProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.sources.len())
}

fn estimator_kind(code: u32) -> Result<EstimatorKind, LsrStatus> {
    Ok(match code {
        0 => EstimatorKind::Single,
        1 => EstimatorKind::Average,
        2 => EstimatorKind::Trim,
        3 => EstimatorKind::Rod,
        4 => EstimatorKind::Roe,
        5 => EstimatorKind::RoeMulti,
        6 => EstimatorKind::Oracle,
        _ => return Err(invalid(&format!("unknown estimator code {code}"))),
    })
}

fn weight_rule(code: u32) -> Result<WeightRule, LsrStatus> {
    Ok(match code {
        0 => WeightRule::Mwv,
        1 => WeightRule::Truncated,
        2 => WeightRule::Trimmed,
        3 => WeightRule::MedianOfMeans,
        _ => return Err(invalid(&format!("unknown rule code {code}"))),
    })
}

/// Fits the kernel terms and runs the chosen estimator. On success `*out`
/// receives a new estimate handle.
///
/// # Safety
/// `problem` and `options` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lsr_estimate(
    problem: *const LsrProblem,
    options: *const LsrOptions,
    out: *mut *mut LsrEstimate,
) -> LsrStatus {
    guard(|| {
        let p = handle(problem, "problem")?;
        let o = *handle(options, "options")?;
        if out.is_null() {
            return Err(fail(LsrStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let target = p
            .target
            .as_ref()
            .ok_or_else(|| invalid("no target sample set"))?;
        if p.sources.is_empty() {
            return Err(invalid("no sources added"));
        }
        let kind = estimator_kind(o.estimator)?;
        let robust = WeightingConfig {
            rule: weight_rule(o.rule)?,
            eps_h: o.eps_h,
            mom_groups: o.mom_groups,
        };
        robust.validate().or_status()?;
        let optimizer = OptimizerConfig {
            max_iters: o.max_iters,
            tol: o.tol,
            refine_steps: o.refine_steps,
            restarts: o.restarts,
            seed: o.seed,
            ..OptimizerConfig::default()
        };
        optimizer.validate().or_status()?;
        let spec = KernelSpec::gaussian(p.bandwidth).or_status()?;
        let quads = p
            .sources
            .iter()
            .map(|s| fit_mmd_terms(s, target, &spec))
            .collect::<lsr::Result<Vec<_>>>()
            .or_status()?;
        let ctx = EstimatorContext {
            quads: &quads,
            optimizer: &optimizer,
            robust: &robust,
            eps_h: o.eps_h,
            single: o.single_source,
            inliers: &p.inliers,
        };
        let result = run_estimator(kind, &ctx, None).or_status()?;
        *out = Box::into_raw(Box::new(LsrEstimate { result }));
        Ok(())
    })
}

/// # Safety
/// `estimate` must come from [`lsr_estimate`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lsr_estimate_free(estimate: *mut LsrEstimate) {
    if !estimate.is_null() {
        drop(Box::from_raw(estimate));
    }
}

/// # Safety
/// `estimate` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lsr_estimate_num_classes(estimate: *const LsrEstimate) -> usize {
    estimate.as_ref().map_or(0, |e| e.result.q_hat.len())
}

/// # Safety
/// `estimate` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lsr_estimate_num_sources(estimate: *const LsrEstimate) -> usize {
    estimate.as_ref().map_or(0, |e| e.result.weights.len())
}

/// # Safety
/// `estimate` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lsr_estimate_iterations(estimate: *const LsrEstimate) -> usize {
    estimate.as_ref().map_or(0, |e| e.result.iterations_used)
}

/// Robust objective at the estimate; NaN for a null handle.
///
/// # Safety
/// `estimate` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lsr_estimate_objective(estimate: *const LsrEstimate) -> f64 {
    estimate.as_ref().map_or(f64::NAN, |e| e.result.objective)
}

unsafe fn copy_out(values: &[f64], out: *mut f64, len: usize) -> Result<(), LsrStatus> {
    if len != values.len() {
        return Err(invalid(&format!(
            "buffer holds {len} values, need {}",
            values.len()
        )));
    }
    slice_mut(out, len, "out")?.copy_from_slice(values);
    Ok(())
}

/// Copies the estimated proportions into `out` (length `num_classes`).
///
/// # Safety
/// `out` must reference `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn lsr_estimate_q_hat(
    estimate: *const LsrEstimate,
    out: *mut f64,
    len: usize,
) -> LsrStatus {
    guard(|| {
        copy_out(
            handle(estimate, "estimate")?.result.q_hat.as_slice(),
            out,
            len,
        )
    })
}

/// Copies the source weights into `out` (length `num_sources`).
///
/// # Safety
/// `out` must reference `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn lsr_estimate_weights(
    estimate: *const LsrEstimate,
    out: *mut f64,
    len: usize,
) -> LsrStatus {
    guard(|| {
        copy_out(
            handle(estimate, "estimate")?.result.weights.weights(),
            out,
            len,
        )
    })
}

/// Euclidean projection of `v` onto the probability simplex.
///
/// # Safety
/// `v` and `out` must reference `len` values each.
#[no_mangle]
pub unsafe extern "C" fn lsr_project_simplex(
    v: *const f64,
    len: usize,
    out: *mut f64,
) -> LsrStatus {
    guard(|| {
        let q = project_simplex(slice(v, len, "v")?).or_status()?;
        copy_out(q.as_slice(), out, len)
    })
}

/// Minimum-variance weights over `values` with budget `eps_h`.
///
/// # Safety
/// `values` and `out` must reference `len` values each.
#[no_mangle]
pub unsafe extern "C" fn lsr_mwv_weights(
    values: *const f64,
    len: usize,
    eps_h: f64,
    out: *mut f64,
) -> LsrStatus {
    guard(|| {
        let w = mwv_weights(slice(values, len, "values")?, eps_h).or_status()?;
        copy_out(w.weights(), out, len)
    })
}
