//! C ABI for the `powergame` library.
//!
//! Networks and run traces are opaque heap handles created by the library
//! and released with the matching `*_free` function. Every fallible call
//! returns a [`PgStatus`]; on failure a description is available from
//! [`pg_last_error`] on the same thread. Panics never cross the boundary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use powergame::channel::{generate_flat, generate_frequency_selective, Topology};
use powergame::experiments::tdma_baseline;
use powergame::game::{best_response_residual, make_schedule, run_iwfa, sum_rate, GameConfig, RunTrace, ScheduleKind, Verdict};
use powergame::precoding::{precode, PrecodedNetwork};
use powergame::vi::{check_uniqueness, run_controlled, ControlConfig, DeltaRule, EpsRule, MeritKind, UniquenessVerdict};
use powergame::waterfill::waterfill;
use powergame::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Degenerate = 3,
    TauTooSmall = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// Update schedule of the plain game.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgSchedule {
    Jacobi = 0,
    GaussSeidel = 1,
    Asynchronous = 2,
}

/// Merit steering a controlled run.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgMerit {
    None = 0,
    MinMui = 1,
    MaxSumRate = 2,
}

/// Outcome of a run.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgVerdict {
    Converged = 0,
    Oscillating = 1,
    Exhausted = 2,
}

/// Network description used by [`pg_network_generate`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PgNetworkParams {
    pub users: usize,
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    pub direct_distance: f64,
    pub cross_distance: f64,
    pub pathloss_exponent: f64,
    /// `1` gives flat channels.
    pub carriers: usize,
    pub taps: usize,
    pub noise_power: f64,
    /// Linear per-user budget.
    pub budget: f64,
    pub seed: u64,
}

/// Uniqueness diagnostics of a network.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PgUniqueness {
    pub row_margin: f64,
    pub col_margin: f64,
    pub spectral_radius: f64,
    pub row_condition: bool,
    pub col_condition: bool,
    pub unique_guaranteed: bool,
}

/// Opaque precoded network.
pub struct PgNetwork(PrecodedNetwork);

/// Opaque run trace.
pub struct PgTrace(RunTrace);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = message);
}

fn status_of(e: &Error) -> PgStatus {
    match e {
        Error::Degenerate { .. } | Error::NoUsableDimension => PgStatus::Degenerate,
        Error::TauTooSmall { .. } => PgStatus::TauTooSmall,
        _ => PgStatus::InvalidArgument,
    }
}

fn guard(body: impl FnOnce() -> Result<(), PgStatus>) -> PgStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => PgStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => {
            set_error("internal panic".into());
            PgStatus::Panic
        }
    }
}

fn fail(e: Error) -> PgStatus {
    set_error(e.to_string());
    status_of(&e)
}

fn null(what: &str) -> PgStatus {
    set_error(format!("{what} is null"));
    PgStatus::NullPointer
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], PgStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn network<'a>(net: *const PgNetwork) -> Result<&'a PrecodedNetwork, PgStatus> {
    net.as_ref().map(|n| &n.0).ok_or_else(|| null("network"))
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), PgStatus> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn pg_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Draws and precodes a symmetric random network.
///
/// # Safety
/// `params` must be valid; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pg_network_generate(params: *const PgNetworkParams, out: *mut *mut PgNetwork) -> PgStatus {
    guard(|| {
        let p = params.as_ref().ok_or_else(|| null("params"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let topo = Topology::symmetric(p.users, p.tx_antennas, p.rx_antennas, p.direct_distance, p.cross_distance, p.pathloss_exponent);
        let inst = if p.carriers <= 1 {
            generate_flat(&topo, p.noise_power, p.seed)
        } else {
            generate_frequency_selective(&topo, p.taps, p.carriers, p.noise_power, p.seed)
        };
        let pn = inst.and_then(|i| i.with_uniform_budget(p.budget)).and_then(|i| precode(&i)).map_err(fail)?;
        out.write(Box::into_raw(Box::new(PgNetwork(pn))));
        Ok(())
    })
}

/// Releases a network. Null is ignored.
///
/// # Safety
/// `net` must be null or a handle from [`pg_network_generate`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pg_network_free(net: *mut PgNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Length of a stacked power vector of `net`; 0 for null.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pg_network_dim(net: *const PgNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.dim())
}

/// Number of users of `net`; 0 for null.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pg_network_users(net: *const PgNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.users())
}

/// Single-user water-filling of `budget` over levels `c[0..len]`.
///
/// # Safety
/// `c` and `powers` must be valid for `len` elements; `level` may be null.
#[no_mangle]
pub unsafe extern "C" fn pg_waterfill(c: *const f64, len: usize, budget: f64, powers: *mut f64, level: *mut f64) -> PgStatus {
    guard(|| {
        let c = input(c, len, "c")?;
        if powers.is_null() {
            return Err(null("powers"));
        }
        let wf = waterfill(c, budget).map_err(fail)?;
        slice::from_raw_parts_mut(powers, len).copy_from_slice(&wf.powers);
        if !level.is_null() {
            level.write(wf.level);
        }
        Ok(())
    })
}

/// Row, column and spectral-radius uniqueness tests.
///
/// # Safety
/// `net` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pg_check_uniqueness(net: *const PgNetwork, out: *mut PgUniqueness) -> PgStatus {
    guard(|| {
        let r = check_uniqueness(network(net)?);
        let value = PgUniqueness {
            row_margin: r.row_margin,
            col_margin: r.col_margin,
            spectral_radius: r.spectral_radius,
            row_condition: r.row_condition,
            col_condition: r.col_condition,
            unique_guaranteed: r.verdict == UniquenessVerdict::UniqueGuaranteed,
        };
        write(out, value, "out")
    })
}

/// Plain iterative water-filling from the uniform profile.
///
/// # Safety
/// `net` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pg_run_iwfa(
    net: *const PgNetwork,
    schedule: PgSchedule,
    it_max: usize,
    tol: f64,
    max_delay: usize,
    seed: u64,
    out: *mut *mut PgTrace,
) -> PgStatus {
    guard(|| {
        let pn = network(net)?;
        if out.is_null() {
            return Err(null("out"));
        }
        if it_max == 0 || !(tol > 0.0) {
            return Err(fail(Error::InvalidArgument("it_max and tol must be positive".into())));
        }
        let kind = match schedule {
            PgSchedule::Jacobi => ScheduleKind::Jacobi,
            PgSchedule::GaussSeidel => ScheduleKind::GaussSeidel,
            PgSchedule::Asynchronous => ScheduleKind::Asynchronous,
        };
        let sched = make_schedule(kind, pn.users(), it_max, seed, max_delay);
        let config = GameConfig { it_max, tol, record_powers: false, ..GameConfig::default() };
        let trace = run_iwfa(pn, &sched, &config).map_err(fail)?;
        out.write(Box::into_raw(Box::new(PgTrace(trace))));
        Ok(())
    })
}

/// Regularized (`merit = None`) or merit-controlled run with the smallest
/// admissible `tau` and `eps_n = 1/(1+10n)`; inexact inner solves with
/// `delta_n = 0.95^n` when `inexact` is set.
///
/// # Safety
/// `net` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pg_run_controlled(net: *const PgNetwork, merit: PgMerit, inexact: bool, out: *mut *mut PgTrace) -> PgStatus {
    guard(|| {
        let pn = network(net)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let merit = match merit {
            PgMerit::None => MeritKind::None,
            PgMerit::MinMui => MeritKind::MinMui,
            PgMerit::MaxSumRate => MeritKind::MaxSumRate,
        };
        let config = ControlConfig {
            merit,
            eps: if merit == MeritKind::None { EpsRule::Zero } else { EpsRule::Harmonic(10.0) },
            delta: if inexact { DeltaRule::Geometric(0.95) } else { DeltaRule::Zero },
            record_powers: false,
            ..ControlConfig::default()
        };
        let trace = run_controlled(pn, &config).map_err(fail)?;
        out.write(Box::into_raw(Box::new(PgTrace(trace))));
        Ok(())
    })
}

/// Releases a trace. Null is ignored.
///
/// # Safety
/// `trace` must be null or a live handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pg_trace_free(trace: *mut PgTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Verdict of a run; `period` receives the oscillation period (0 otherwise)
/// and may be null.
///
/// # Safety
/// `trace` must be a live handle; `verdict` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pg_trace_verdict(trace: *const PgTrace, verdict: *mut PgVerdict, period: *mut usize) -> PgStatus {
    guard(|| {
        let t = trace.as_ref().ok_or_else(|| null("trace"))?;
        let (v, k) = match t.0.verdict {
            Verdict::Converged => (PgVerdict::Converged, 0),
            Verdict::Oscillating(k) => (PgVerdict::Oscillating, k),
            Verdict::Exhausted => (PgVerdict::Exhausted, 0),
        };
        write(verdict, v, "verdict")?;
        if !period.is_null() {
            period.write(k);
        }
        Ok(())
    })
}

/// Iterations (outer iterations for controlled runs) used; 0 for null.
///
/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pg_trace_iterations(trace: *const PgTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.0.iterations_used)
}

/// Total inner sweeps of a controlled run; 0 for plain runs or null.
///
/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pg_trace_inner_iterations(trace: *const PgTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.0.total_inner_iterations())
}

/// Final sum-rate in bits per channel use; NaN for null.
///
/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pg_trace_sum_rate(trace: *const PgTrace) -> f64 {
    trace.as_ref().map_or(f64::NAN, |t| t.0.final_sum_rate())
}

/// Copies the final power profile into `buf[0..len]`.
///
/// # Safety
/// `trace` must be a live handle and `buf` valid for `len` elements.
#[no_mangle]
pub unsafe extern "C" fn pg_trace_final_powers(trace: *const PgTrace, buf: *mut f64, len: usize) -> PgStatus {
    guard(|| {
        let t = trace.as_ref().ok_or_else(|| null("trace"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let p = t.0.final_powers();
        if len < p.len() {
            set_error(format!("buffer holds {len} values, {} needed", p.len()));
            return Err(PgStatus::BufferTooSmall);
        }
        slice::from_raw_parts_mut(buf, p.len()).copy_from_slice(p);
        Ok(())
    })
}

/// `max_q ||waterfill(c_q(p), P_q) - p_q||_inf` at `p[0..len]`.
///
/// # Safety
/// `net` must be a live handle, `p` valid for `len` elements, `out` for a write.
#[no_mangle]
pub unsafe extern "C" fn pg_best_response_residual(net: *const PgNetwork, p: *const f64, len: usize, out: *mut f64) -> PgStatus {
    guard(|| {
        let pn = network(net)?;
        let p = input(p, len, "p")?;
        let r = best_response_residual(pn, p).map_err(fail)?;
        write(out, r, "out")
    })
}

/// Sum-rate in bits per channel use at `p[0..len]`.
///
/// # Safety
/// `net` must be a live handle, `p` valid for `len` elements, `out` for a write.
#[no_mangle]
pub unsafe extern "C" fn pg_sum_rate(net: *const PgNetwork, p: *const f64, len: usize, out: *mut f64) -> PgStatus {
    guard(|| {
        let pn = network(net)?;
        let p = input(p, len, "p")?;
        let r = sum_rate(pn, p).map_err(fail)?;
        write(out, r, "out")
    })
}

/// Interference-free time-sharing sum-rate in bits per channel use.
///
/// # Safety
/// `net` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pg_tdma_baseline(net: *const PgNetwork, out: *mut f64) -> PgStatus {
    guard(|| {
        let r = tdma_baseline(network(net)?).map_err(fail)?;
        write(out, r, "out")
    })
}
