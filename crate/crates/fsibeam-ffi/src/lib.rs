//! C ABI over the solver: opaque simulation handles, status codes, and a
//! thread-local error message. The generated header lives in `include/`.
//!
//! Every function is panic-free at the boundary: internal panics are caught
//! and reported as `FSIBEAM_ERR_RUNTIME`.

use fsibeam::assembly::PhysicalParams;
use fsibeam::basis::BasisSet;
use fsibeam::diagnostics::{EnergyLedger, LedgerTracker};
use fsibeam::error::IntegratorError;
use fsibeam::integrator::{step, StateVector, StepControls};
use fsibeam::io::SimConfig;
use fsibeam::quadrature::QuadratureGrid;
use libc::{c_char, c_double, size_t};
use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Status of an API call. Nonzero values describe what went wrong; the
/// numeric values of the first four match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsibeamStatus {
    /// Success.
    FsibeamOk = 0,
    /// The interface reached the configured contact floor; the state holds
    /// the last computed step.
    FsibeamErrContact = 2,
    /// The per-step fixed-point iteration did not converge; the state is
    /// unchanged.
    FsibeamErrPicard = 3,
    /// The configuration failed to parse or validate.
    FsibeamErrConfig = 4,
    /// A required pointer argument was null.
    FsibeamErrNullArgument = 5,
    /// A string argument was not valid UTF-8.
    FsibeamErrUtf8 = 6,
    /// An internal failure (assembly, geometry, or a caught panic).
    FsibeamErrRuntime = 7,
    /// A destination buffer was too small.
    FsibeamErrBufferSize = 8,
}

use FsibeamStatus::*;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl AsRef<str>) {
    let cleaned: String =
        msg.as_ref().chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(cleaned).unwrap_or_default();
    });
}

/// Message describing the most recent failure on this thread, or an empty
/// string. The pointer stays valid until the next failing call on the same
/// thread; do not free it.
#[no_mangle]
pub extern "C" fn fsibeam_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// An in-progress simulation. Create with [`fsibeam_sim_new`] or
/// [`fsibeam_sim_from_file`], destroy with [`fsibeam_sim_free`].
pub struct FsibeamSim {
    config: SimConfig,
    basis: BasisSet,
    grid: QuadratureGrid,
    params: PhysicalParams,
    controls: StepControls,
    state: StateVector,
    tracker: LedgerTracker,
    ledger: EnergyLedger,
}

impl FsibeamSim {
    fn build(config: SimConfig) -> Result<Box<FsibeamSim>, String> {
        config.validate().map_err(|e| e.to_string())?;
        let (basis, grid) =
            fsibeam::io::build_problem(&config).map_err(|e| e.to_string())?;
        let state =
            fsibeam::io::initial_state(&config, &basis).map_err(|e| e.to_string())?;
        let params = config.params();
        let controls = config.run_config().controls;
        let mut tracker = LedgerTracker::new();
        let ledger = tracker.update(&basis, &grid, &params, &state, 0.0);
        Ok(Box::new(FsibeamSim {
            config,
            basis,
            grid,
            params,
            controls,
            state,
            tracker,
            ledger,
        }))
    }

    fn advance_one(&mut self, dt: f64) -> FsibeamStatus {
        if !(dt > 0.0) || !dt.is_finite() {
            set_error(format!("step size must be positive and finite, got {dt}"));
            return FsibeamErrConfig;
        }
        match step(&self.basis, &self.grid, &self.params, &self.controls, &self.state, dt) {
            Ok((next, report)) => {
                self.state = next;
                self.ledger = self.tracker.update(
                    &self.basis,
                    &self.grid,
                    &self.params,
                    &self.state,
                    report.dissipation,
                );
                if self.config.contact_floor > 0.0
                    && report.min_height <= self.config.contact_floor
                {
                    set_error(format!(
                        "interface height {} reached the contact floor {} at t = {}",
                        report.min_height, self.config.contact_floor, self.state.t
                    ));
                    FsibeamErrContact
                } else {
                    FsibeamOk
                }
            }
            Err(e @ IntegratorError::ContactReached { .. }) => {
                set_error(e.to_string());
                FsibeamErrContact
            }
            Err(e @ IntegratorError::PicardDivergence { .. }) => {
                set_error(e.to_string());
                FsibeamErrPicard
            }
            Err(e) => {
                set_error(e.to_string());
                FsibeamErrRuntime
            }
        }
    }
}

fn guard<F: FnOnce() -> FsibeamStatus>(f: F) -> FsibeamStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            FsibeamErrRuntime
        }
    }
}

unsafe fn read_utf8<'a>(ptr: *const c_char) -> Result<&'a str, FsibeamStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(FsibeamErrNullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        FsibeamErrUtf8
    })
}

fn install(sim: Box<FsibeamSim>, out: *mut *mut FsibeamSim) -> FsibeamStatus {
    // Caller-checked: `out` is non-null by the time this runs.
    unsafe { *out = Box::into_raw(sim) };
    FsibeamOk
}

/// Create a simulation from a JSON configuration document.
///
/// On success writes the new handle to `out` and returns `FSIBEAM_OK`.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` must be a valid
/// pointer to a pointer slot.
#[no_mangle]
pub unsafe extern "C" fn fsibeam_sim_new(
    config_json: *const c_char,
    out: *mut *mut FsibeamSim,
) -> FsibeamStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output handle");
            return FsibeamErrNullArgument;
        }
        let text = match read_utf8(config_json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let config: SimConfig = match serde_json::from_str(text) {
            Ok(c) => c,
            Err(e) => {
                set_error(format!("config parse error: {e}"));
                return FsibeamErrConfig;
            }
        };
        match FsibeamSim::build(config) {
            Ok(sim) => install(sim, out),
            Err(msg) => {
                set_error(msg);
                FsibeamErrConfig
            }
        }
    })
}

/// Create a simulation from a JSON configuration file on disk.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer to
/// a pointer slot.
#[no_mangle]
pub unsafe extern "C" fn fsibeam_sim_from_file(
    path: *const c_char,
    out: *mut *mut FsibeamSim,
) -> FsibeamStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output handle");
            return FsibeamErrNullArgument;
        }
        let path = match read_utf8(path) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let config = match fsibeam::io::load_config(path) {
            Ok(c) => c,
            Err(e) => {
                set_error(e.to_string());
                return FsibeamErrConfig;
            }
        };
        match FsibeamSim::build(config) {
            Ok(sim) => install(sim, out),
            Err(msg) => {
                set_error(msg);
                FsibeamErrConfig
            }
        }
    })
}

/// Destroy a handle. Passing null is a no-op.
///
/// # Safety
/// `sim` must be a handle from a creation call that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn fsibeam_sim_free(sim: *mut FsibeamSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

unsafe fn borrow<'a>(sim: *const FsibeamSim) -> Result<&'a FsibeamSim, FsibeamStatus> {
    if sim.is_null() {
        set_error("null simulation handle");
        return Err(FsibeamErrNullArgument);
    }
    Ok(&*sim)
}

/// Advance by a single implicit step of size `dt`.
///
/// Returns `FSIBEAM_ERR_PICARD` (state unchanged) if the step's fixed-point
/// iteration misses its tolerance, and `FSIBEAM_ERR_CONTACT` once the
/// interface reaches the contact floor.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fsibeam_sim_step(sim: *mut FsibeamSim, dt: c_double) -> FsibeamStatus {
    guard(|| {
        if sim.is_null() {
            set_error("null simulation handle");
            return FsibeamErrNullArgument;
        }
        (*sim).advance_one(dt)
    })
}

/// Step with the configured `dt` until the simulation time reaches
/// `t_target`, stopping early on any failure. The final step is shortened
/// to land exactly on the target.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fsibeam_sim_advance(
    sim: *mut FsibeamSim,
    t_target: c_double,
) -> FsibeamStatus {
    guard(|| {
        if sim.is_null() {
            set_error("null simulation handle");
            return FsibeamErrNullArgument;
        }
        let sim = &mut *sim;
        let eps = 1e-12 * t_target.abs().max(1.0);
        while sim.state.t < t_target - eps {
            let dt = sim.config.dt.min(t_target - sim.state.t);
            let status = sim.advance_one(dt);
            if status != FsibeamOk {
                return status;
            }
        }
        FsibeamOk
    })
}

/// Current simulation time.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fsibeam_sim_time(sim: *const FsibeamSim) -> c_double {
    match borrow(sim) {
        Ok(s) => s.state.t,
        Err(_) => f64::NAN,
    }
}

/// Smallest interface height over the quadrature nodes at the current state.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fsibeam_sim_min_height(sim: *const FsibeamSim) -> c_double {
    let Ok(s) = borrow(sim) else { return f64::NAN };
    let v = s.state.beam_velocity(&s.basis);
    fsibeam::assembly::geometry_from_state(
        &s.basis,
        &s.grid,
        s.state.g_mean,
        &s.state.g_coeffs,
        &v,
        None,
    )
    .min_h
}

/// Energy accounting at the current state. Any output pointer may be null
/// to skip that field. `balance` is the energy-balance residual
/// `E(t) + dissipated - E(0)`.
///
/// # Safety
/// `sim` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn fsibeam_sim_energy(
    sim: *const FsibeamSim,
    fluid: *mut c_double,
    beam: *mut c_double,
    elastic: *mut c_double,
    dissipated: *mut c_double,
    balance: *mut c_double,
) -> FsibeamStatus {
    let s = match borrow(sim) {
        Ok(s) => s,
        Err(e) => return e,
    };
    let write = |p: *mut c_double, v: f64| {
        if !p.is_null() {
            *p = v;
        }
    };
    write(fluid, s.ledger.e_kinetic_fluid);
    write(beam, s.ledger.e_kinetic_beam);
    write(elastic, s.ledger.e_elastic);
    write(dissipated, s.ledger.dissipation_cum);
    write(balance, s.ledger.balance_residual);
    FsibeamOk
}

/// Number of doubles in the packed state vector: the velocity coefficients,
/// then the interface mean, then the interface coefficients.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fsibeam_sim_state_len(sim: *const FsibeamSim) -> size_t {
    match borrow(sim) {
        Ok(s) => s.state.alpha.len() + 1 + s.state.g_coeffs.len(),
        Err(_) => 0,
    }
}

/// Copy the packed state vector into `out`, which holds `len` doubles.
/// `len` must equal [`fsibeam_sim_state_len`].
///
/// # Safety
/// `sim` must be a live handle; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fsibeam_sim_state(
    sim: *const FsibeamSim,
    out: *mut c_double,
    len: size_t,
) -> FsibeamStatus {
    let s = match borrow(sim) {
        Ok(s) => s,
        Err(e) => return e,
    };
    if out.is_null() {
        set_error("null output buffer");
        return FsibeamErrNullArgument;
    }
    let needed = s.state.alpha.len() + 1 + s.state.g_coeffs.len();
    if len != needed {
        set_error(format!("state buffer holds {len} doubles, need {needed}"));
        return FsibeamErrBufferSize;
    }
    let dst = std::slice::from_raw_parts_mut(out, len);
    let (a, rest) = dst.split_at_mut(s.state.alpha.len());
    a.copy_from_slice(&s.state.alpha);
    rest[0] = s.state.g_mean;
    rest[1..].copy_from_slice(&s.state.g_coeffs);
    FsibeamOk
}

/// Sample the interface height at `n` uniformly spaced points of `[0, L)`.
///
/// # Safety
/// `sim` must be a live handle; `out` must point to `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fsibeam_sim_height_profile(
    sim: *const FsibeamSim,
    out: *mut c_double,
    n: size_t,
) -> FsibeamStatus {
    let s = match borrow(sim) {
        Ok(s) => s,
        Err(e) => return e,
    };
    if out.is_null() {
        set_error("null output buffer");
        return FsibeamErrNullArgument;
    }
    if n == 0 {
        set_error("profile needs at least one sample");
        return FsibeamErrBufferSize;
    }
    let dst = std::slice::from_raw_parts_mut(out, n);
    let length = s.basis.length;
    for (i, slot) in dst.iter_mut().enumerate() {
        let x = length * i as f64 / n as f64;
        let mut h = s.state.g_mean;
        for (b, mode) in s.basis.beam.modes.iter().enumerate() {
            h += s.state.g_coeffs[b] * mode.eval(x);
        }
        *slot = h;
    }
    FsibeamOk
}
