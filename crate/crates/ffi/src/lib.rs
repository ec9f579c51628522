//! C ABI over the `pcp` library.
//!
//! Objects are opaque heap handles created by `*_new`/producer functions and
//! released with the matching `*_free`. Every fallible call returns a
//! [`PcpStatus`]; on failure a message for the calling thread is available
//! from [`pcp_last_error`]. Output pointers are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pcp::em::{fit, init_model, FitConfig, Schedule};
use pcp::fisher::{fim, numerical_rank, FisherMatrix};
use pcp::harness::{generate_model, sample_poisson, GenSpec};
use pcp::rank_one::mle_rank1;
use pcp::{DenseTensor, KruskalModel, PcpError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    NotACount = 4,
    NonPositive = 5,
    ZeroMarginal = 6,
    OrderCap = 7,
    Numerical = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcpSchedule {
    Ecm = 0,
    Mcecm = 1,
}

/// Dense count or mean tensor.
pub struct PcpTensor(DenseTensor);

/// Kruskal (CP) model.
pub struct PcpModel(KruskalModel);

/// Fisher information matrix.
pub struct PcpFisher(FisherMatrix);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &PcpError) -> PcpStatus {
    match e {
        PcpError::ShapeMismatch { .. } | PcpError::LengthMismatch { .. } | PcpError::RankMismatch => PcpStatus::ShapeMismatch,
        PcpError::NotACount { .. } => PcpStatus::NotACount,
        PcpError::NonPositive { .. } | PcpError::DivisionByZero { .. } => PcpStatus::NonPositive,
        PcpError::ZeroMarginal { .. } => PcpStatus::ZeroMarginal,
        PcpError::OrderCap { .. } => PcpStatus::OrderCap,
        PcpError::NonFinite { .. } | PcpError::Singular(_) | PcpError::EigenNoConvergence => PcpStatus::Numerical,
        _ => PcpStatus::InvalidArgument,
    }
}

/// Runs `f`, mapping library errors and panics onto status codes.
fn guard(f: impl FnOnce() -> Result<(), PcpStatus>) -> PcpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PcpStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            PcpStatus::Panic
        }
    }
}

fn lib<T>(r: pcp::Result<T>) -> Result<T, PcpStatus> {
    r.map_err(|e| {
        set_error(e.to_string());
        status_of(&e)
    })
}

fn invalid(msg: &str) -> PcpStatus {
    set_error(msg.to_string());
    PcpStatus::InvalidArgument
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, PcpStatus> {
    if p.is_null() {
        set_error(format!("null {what}"));
        return Err(PcpStatus::NullPointer);
    }
    Ok(&*p)
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], PcpStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        set_error(format!("null {what}"));
        return Err(PcpStatus::NullPointer);
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), PcpStatus> {
    if out.is_null() {
        set_error("null output pointer".into());
        return Err(PcpStatus::NullPointer);
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_out(src: &[f64], out: *mut f64, len: usize) -> Result<(), PcpStatus> {
    if len < src.len() {
        set_error(format!("buffer holds {len} values, {} needed", src.len()));
        return Err(PcpStatus::BufferTooSmall);
    }
    if src.is_empty() {
        return Ok(());
    }
    if out.is_null() {
        set_error("null output buffer".into());
        return Err(PcpStatus::NullPointer);
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

/// Message describing the last failure on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pcp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a tensor from `dims` and `len = Π dims` values in natural order
/// (first index fastest).
///
/// # Safety
/// `dims` must point to `ndims` values and `data` to `len` values.
#[no_mangle]
pub unsafe extern "C" fn pcp_tensor_new(
    dims: *const usize,
    ndims: usize,
    data: *const f64,
    len: usize,
    out: *mut *mut PcpTensor,
) -> PcpStatus {
    guard(|| {
        let dims = slice(dims, ndims, "dims")?.to_vec();
        let data = slice(data, len, "data")?.to_vec();
        let t = lib(DenseTensor::new(dims, data))?;
        put(out, PcpTensor(t))
    })
}

/// # Safety
/// `t` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pcp_tensor_free(t: *mut PcpTensor) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Number of entries, or 0 for a null handle.
///
/// # Safety
/// `t` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pcp_tensor_len(t: *const PcpTensor) -> usize {
    t.as_ref().map_or(0, |t| t.0.len())
}

/// # Safety
/// `t` must be a live handle and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn pcp_tensor_copy_data(t: *const PcpTensor, out: *mut f64, len: usize) -> PcpStatus {
    guard(|| copy_out(deref(t, "tensor")?.0.data(), out, len))
}

/// Creates a model from its packed parameter vector: each factor `A_p`
/// (`dims[p] × rank`) stored column-major, factors concatenated in mode order.
///
/// # Safety
/// `dims` must point to `ndims` values and `theta` to `len` values.
#[no_mangle]
pub unsafe extern "C" fn pcp_model_new(
    dims: *const usize,
    ndims: usize,
    rank: usize,
    theta: *const f64,
    len: usize,
    out: *mut *mut PcpModel,
) -> PcpStatus {
    guard(|| {
        let dims = slice(dims, ndims, "dims")?;
        if dims.is_empty() || rank == 0 {
            return Err(invalid("model needs at least one mode and rank ≥ 1"));
        }
        let theta = slice(theta, len, "parameters")?;
        let m = lib(KruskalModel::unpack(theta, dims, rank))?;
        put(out, PcpModel(m))
    })
}

/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pcp_model_free(m: *mut PcpModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Length of the packed parameter vector, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pcp_model_num_params(m: *const PcpModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.num_params())
}

/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pcp_model_rank(m: *const PcpModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.rank())
}

/// # Safety
/// `m` must be a live handle and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn pcp_model_pack(m: *const PcpModel, out: *mut f64, len: usize) -> PcpStatus {
    guard(|| copy_out(&deref(m, "model")?.0.pack(), out, len))
}

/// Mean tensor `M` of the model.
///
/// # Safety
/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pcp_model_full_tensor(m: *const PcpModel, out: *mut *mut PcpTensor) -> PcpStatus {
    guard(|| {
        let t = deref(m, "model")?.0.full_tensor();
        put(out, PcpTensor(t))
    })
}

/// Synthetic model with `order` modes of size `n`, simplex factors and mean
/// entry `mean`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pcp_generate_model(
    n: usize,
    order: usize,
    rank: usize,
    mean: f64,
    seed: u64,
    out: *mut *mut PcpModel,
) -> PcpStatus {
    guard(|| {
        let m = lib(generate_model(&GenSpec { n, order, rank, mean, seed }))?;
        put(out, PcpModel(m))
    })
}

/// Poisson counts drawn from the model's mean tensor.
///
/// # Safety
/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pcp_sample(m: *const PcpModel, seed: u64, out: *mut *mut PcpTensor) -> PcpStatus {
    guard(|| {
        let mean = deref(m, "model")?.0.full_tensor();
        let x = lib(sample_poisson(&mean, seed))?;
        put(out, PcpTensor(x))
    })
}

/// # Safety
/// `x`, `m` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pcp_loglik(x: *const PcpTensor, m: *const PcpModel, out: *mut f64) -> PcpStatus {
    guard(|| {
        let v = lib(pcp::likelihood::loglik(&deref(x, "tensor")?.0, &deref(m, "model")?.0))?;
        if out.is_null() {
            return Err(invalid("null output pointer"));
        }
        *out = v;
        Ok(())
    })
}

/// Score vector in packed parameter order.
///
/// # Safety
/// `x`, `m` must be live handles and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn pcp_score(x: *const PcpTensor, m: *const PcpModel, out: *mut f64, len: usize) -> PcpStatus {
    guard(|| {
        let s = lib(pcp::likelihood::score(&deref(x, "tensor")?.0, &deref(m, "model")?.0))?;
        copy_out(&s, out, len)
    })
}

/// Fits a rank-`rank` model by EM from a seeded random start. `converged`
/// (optional) receives 1 if the tolerance was reached, 0 otherwise.
///
/// # Safety
/// `x` must be a live handle; `out` must be writable; `converged` may be null.
#[no_mangle]
pub unsafe extern "C" fn pcp_fit(
    x: *const PcpTensor,
    rank: usize,
    schedule: PcpSchedule,
    inner_iters: usize,
    max_iter: usize,
    tol: f64,
    seed: u64,
    out: *mut *mut PcpModel,
    converged: *mut i32,
) -> PcpStatus {
    guard(|| {
        let x = &deref(x, "tensor")?.0;
        lib(x.validate_counts())?;
        if rank == 0 {
            return Err(invalid("rank must be at least 1"));
        }
        let cfg = FitConfig {
            schedule: match schedule {
                PcpSchedule::Ecm => Schedule::Ecm,
                PcpSchedule::Mcecm => Schedule::Mcecm,
            },
            inner_iters,
            max_outer: max_iter,
            tol,
            seed,
            ..FitConfig::default()
        };
        let init = lib(init_model(x, rank, seed))?;
        let res = lib(fit(x, init, &cfg))?;
        if !converged.is_null() {
            *converged = i32::from(res.converged);
        }
        put(out, PcpModel(res.model))
    })
}

/// Closed-form rank-one MLE.
///
/// # Safety
/// `x` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pcp_mle_rank1(x: *const PcpTensor, out: *mut *mut PcpModel) -> PcpStatus {
    guard(|| {
        let (m, _) = lib(mle_rank1(&deref(x, "tensor")?.0))?;
        put(out, PcpModel(m.to_kruskal()))
    })
}

/// Fisher information: observed at `x`, or expected when `x` is null.
///
/// # Safety
/// `m` must be a live handle, `x` null or a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pcp_fim(m: *const PcpModel, x: *const PcpTensor, out: *mut *mut PcpFisher) -> PcpStatus {
    guard(|| {
        let m = &deref(m, "model")?.0;
        let x = x.as_ref().map(|t| &t.0);
        if let Some(x) = x {
            lib(x.validate_counts())?;
        }
        let f = lib(fim(m, x))?;
        put(out, PcpFisher(f))
    })
}

/// # Safety
/// `f` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pcp_fisher_free(f: *mut PcpFisher) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Side length of the matrix, or 0 for a null handle.
///
/// # Safety
/// `f` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pcp_fisher_order(f: *const PcpFisher) -> usize {
    f.as_ref().map_or(0, |f| f.0.order())
}

/// Copies the symmetric matrix (`order²` values).
///
/// # Safety
/// `f` must be a live handle and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn pcp_fisher_copy(f: *const PcpFisher, out: *mut f64, len: usize) -> PcpStatus {
    guard(|| copy_out(deref(f, "Fisher matrix")?.0.matrix().as_slice(), out, len))
}

/// Numerical rank (eigenvalues above `λ_max·√ε`) and conjectured rank.
///
/// # Safety
/// `f` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn pcp_fisher_rank(f: *const PcpFisher, numerical: *mut usize, conjectured: *mut usize) -> PcpStatus {
    guard(|| {
        let v = lib(numerical_rank(&deref(f, "Fisher matrix")?.0))?;
        if numerical.is_null() || conjectured.is_null() {
            return Err(invalid("null output pointer"));
        }
        *numerical = v.numerical_rank;
        *conjectured = v.conjectured_rank;
        Ok(())
    })
}
