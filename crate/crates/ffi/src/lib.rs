//! C interface to the block CI precoder.
//!
//! Every fallible call returns a [`CiStatus`]; on failure the message is kept
//! per thread and can be read with [`ci_last_error`]. Handles are opaque and
//! must be released with their `_free` function. Matrices cross the boundary
//! as separate real and imaginary arrays in row-major order.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ci_waveform::channel::{rayleigh_channel, Channel};
use ci_waveform::modulation::{Constellation, Modulation, SymbolBlock};
use ci_waveform::psk::solve_psk;
use ci_waveform::qam::solve_qam;
use ci_waveform::waveform::SolveOptions;
use ci_waveform::{CMatrix, Error, SolveMethod, C64};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    IllConditioned = 3,
    NotConverged = 4,
    SolverFailure = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CiMethod {
    Admm = 0,
    QpReference = 1,
    Epigraph = 2,
}

impl From<CiMethod> for SolveMethod {
    fn from(m: CiMethod) -> Self {
        match m {
            CiMethod::Admm => SolveMethod::Admm,
            CiMethod::QpReference => SolveMethod::QpReference,
            CiMethod::Epigraph => SolveMethod::Epigraph,
        }
    }
}

/// Opaque `K × N_T` channel.
pub struct CiChannel(Channel);

/// Opaque solved block.
pub struct CiSolution {
    x: CMatrix,
    t_star: f64,
    iterations: usize,
    valid: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn remember(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CiStatus {
    match e {
        Error::UnsupportedModulation(_) | Error::InvalidParameter(_) => CiStatus::InvalidArgument,
        Error::IllConditioned { .. } => CiStatus::IllConditioned,
        Error::NotConverged { .. } | Error::EpigraphIterationCap { .. } => CiStatus::NotConverged,
        Error::NotPsd(_) | Error::Solver(_) => CiStatus::SolverFailure,
    }
}

struct Fail(CiStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CiStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            remember(msg);
            status
        }
        Err(_) => {
            remember("internal panic".into());
            CiStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(CiStatus::NullPointer, format!("{what} is null"))
}

/// Borrows `len` elements from `p`; an empty slice never dereferences `p`.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn constellation(order: usize, qam: bool) -> Result<Constellation, Fail> {
    let kind = if qam { Modulation::Qam(order) } else { Modulation::Psk(order) };
    Ok(Constellation::new(kind, false)?)
}

/// Copies the message of the last failure on this thread into `buf`,
/// truncated and NUL-terminated. Returns the full message length without the
/// terminator, or 0 when nothing has failed yet.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ci_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Draws an i.i.d. CN(0, 1) channel with `k` users and `n_t` antennas.
///
/// # Safety
/// `out` must be null or valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn ci_channel_rayleigh(n_t: usize, k: usize, seed: u64, out: *mut *mut CiChannel) -> CiStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ch = rayleigh_channel(n_t, k, seed)?;
        *out = Box::into_raw(Box::new(CiChannel(ch)));
        Ok(())
    })
}

/// Wraps an explicit channel given as row-major `k × n_t` real and imaginary parts.
///
/// # Safety
/// `re` and `im` must point to `k * n_t` doubles; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ci_channel_new(
    k: usize,
    n_t: usize,
    re: *const f64,
    im: *const f64,
    out: *mut *mut CiChannel,
) -> CiStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let len = k.checked_mul(n_t).ok_or_else(|| Fail(CiStatus::InvalidArgument, "dimensions overflow".into()))?;
        let (re, im) = (slice(re, len, "re")?, slice(im, len, "im")?);
        let h = CMatrix::from_fn(k, n_t, |r, c| C64::new(re[r * n_t + c], im[r * n_t + c]));
        *out = Box::into_raw(Box::new(CiChannel(Channel::new(h)?)));
        Ok(())
    })
}

/// # Safety
/// `ch` must be null or a handle from a `ci_channel_*` constructor, freed once.
#[no_mangle]
pub unsafe extern "C" fn ci_channel_free(ch: *mut CiChannel) {
    if !ch.is_null() {
        drop(Box::from_raw(ch));
    }
}

/// Writes the user count and antenna count of `ch`.
///
/// # Safety
/// `ch` must be a live handle; `k` and `n_t` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ci_channel_dims(ch: *const CiChannel, k: *mut usize, n_t: *mut usize) -> CiStatus {
    guard(|| {
        let ch = ch.as_ref().ok_or_else(|| null("channel"))?;
        if k.is_null() || n_t.is_null() {
            return Err(null("output"));
        }
        *k = ch.0.users();
        *n_t = ch.0.antennas();
        Ok(())
    })
}

/// Designs the block waveform for `n` slots of symbols given as constellation
/// indices, column-major `K × N` (slot `j` occupies `indices[j*K .. j*K + K]`).
/// `qam` selects square QAM of the given order, otherwise PSK. `p0` is the
/// per-slot average power.
///
/// # Safety
/// `ch` must be a live handle, `indices` must point to `K * n` entries and
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ci_solve_block(
    ch: *const CiChannel,
    order: usize,
    qam: bool,
    indices: *const usize,
    n: usize,
    p0: f64,
    method: CiMethod,
    out: *mut *mut CiSolution,
) -> CiStatus {
    guard(|| {
        let ch = ch.as_ref().ok_or_else(|| null("channel"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let c = constellation(order, qam)?;
        let k = ch.0.users();
        let idx = slice(indices, k.saturating_mul(n), "indices")?;
        let block = SymbolBlock::from_indices(&c, k, n, idx.to_vec())?;
        let opts = SolveOptions::new(method.into());
        let sol = if qam {
            let s = solve_qam(ch.0.h(), &block, p0, &c, &opts)?;
            CiSolution { x: s.x, t_star: s.t_star, iterations: s.diagnostics.iterations, valid: s.diagnostics.valid }
        } else {
            let theta = c.theta_t().expect("psk has a sector half-angle");
            let s = solve_psk(ch.0.h(), &block, p0, theta, &opts)?;
            CiSolution { x: s.x, t_star: s.t_star, iterations: s.diagnostics.iterations, valid: s.diagnostics.valid }
        };
        *out = Box::into_raw(Box::new(sol));
        Ok(())
    })
}

/// # Safety
/// `sol` must be null or a handle from [`ci_solve_block`], freed once.
#[no_mangle]
pub unsafe extern "C" fn ci_solution_free(sol: *mut CiSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Smallest margin achieved by the waveform, NaN for a null handle.
///
/// # Safety
/// `sol` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ci_solution_t_star(sol: *const CiSolution) -> f64 {
    sol.as_ref().map_or(f64::NAN, |s| s.t_star)
}

/// Solver iteration count, 0 for a null handle.
///
/// # Safety
/// `sol` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ci_solution_iterations(sol: *const CiSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.iterations)
}

/// Whether the solver converged and the constraints hold to tolerance.
///
/// # Safety
/// `sol` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ci_solution_valid(sol: *const CiSolution) -> bool {
    sol.as_ref().is_some_and(|s| s.valid)
}

/// Copies the `N_T × N` waveform as row-major real and imaginary parts.
/// `len` is the capacity of each array; on `CI_STATUS_BUFFER_TOO_SMALL`
/// nothing is written. `rows` and `cols` may be null.
///
/// # Safety
/// `sol` must be a live handle and `re`, `im` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ci_solution_waveform(
    sol: *const CiSolution,
    re: *mut f64,
    im: *mut f64,
    len: usize,
    rows: *mut usize,
    cols: *mut usize,
) -> CiStatus {
    guard(|| {
        let s = sol.as_ref().ok_or_else(|| null("solution"))?;
        let (r, c) = s.x.shape();
        if !rows.is_null() {
            *rows = r;
        }
        if !cols.is_null() {
            *cols = c;
        }
        if len < r * c {
            return Err(Fail(CiStatus::BufferTooSmall, format!("waveform needs {} entries, got {len}", r * c)));
        }
        let (re, im) = (slice_mut(re, r * c, "re")?, slice_mut(im, r * c, "im")?);
        for i in 0..r {
            for j in 0..c {
                re[i * c + j] = s.x[(i, j)].re;
                im[i * c + j] = s.x[(i, j)].im;
            }
        }
        Ok(())
    })
}

/// Euclidean projection of `q` onto the probability simplex, written to `z`.
///
/// # Safety
/// `q` and `z` must each hold `len` doubles; they may alias.
#[no_mangle]
pub unsafe extern "C" fn ci_project_simplex(q: *const f64, z: *mut f64, len: usize) -> CiStatus {
    guard(|| {
        if len == 0 {
            return Err(Fail(CiStatus::InvalidArgument, "empty vector".into()));
        }
        let input = slice(q, len, "q")?.to_vec();
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Fail(CiStatus::InvalidArgument, "non-finite entry".into()));
        }
        let p = ci_waveform::admm::project_simplex(&input);
        slice_mut(z, len, "z")?.copy_from_slice(&p);
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_mapping() {
        assert_eq!(status_of(&Error::InvalidParameter("x".into())), CiStatus::InvalidArgument);
        assert_eq!(status_of(&Error::IllConditioned { what: "h", cond: 1e9 }), CiStatus::IllConditioned);
        assert_eq!(
            status_of(&Error::NotConverged { solver: "admm", iterations: 3, residual: 1.0 }),
            CiStatus::NotConverged
        );
    }

    #[test]
    fn last_error_truncates() {
        remember("abcdef".into());
        let mut buf = [1 as c_char; 4];
        let n = unsafe { ci_last_error(buf.as_mut_ptr(), buf.len()) };
        assert_eq!(n, 6);
        assert_eq!(buf.map(|b| b as u8), *b"abc\0");
    }
}
