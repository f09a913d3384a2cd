//! C ABI over the ringflow core.
//!
//! Objects cross the boundary as opaque handles created by `rf_*_new` or
//! `rf_simulate` and released with the matching `rf_*_free`. Every fallible
//! call returns an [`RfStatus`]; the message of the last failure on the
//! calling thread is available from [`rf_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ringflow::cli::ExperimentConfig;
use ringflow::dynamics::{self, SimOptions};
use ringflow::equilibrium::{self, EquilibriumConfig};
use ringflow::forcefield::ForceProfile;
use ringflow::params::SystemParams;
use ringflow::spectral;
use ringflow::trajectory::{TimeGrid, Trajectory};
use ringflow::Error;

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfStatus {
    Ok = 0,
    NullPointer = 1,
    /// Malformed config, parameters or buffer sizes.
    InvalidArgument = 2,
    /// Solver failure, gap collapse, step underflow and similar.
    NumericalFailure = 3,
    Io = 4,
    /// A Rust panic was caught at the boundary.
    Panic = 5,
}

/// Parameters, force profile and solved equilibrium.
pub struct RfSystem {
    params: SystemParams,
    force: ForceProfile,
    eq: EquilibriumConfig,
}

/// Sampled result of a full simulation.
pub struct RfTrajectory {
    traj: Trajectory,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> RfStatus {
    if e.is_numerical() {
        RfStatus::NumericalFailure
    } else if matches!(e, Error::Io(_)) {
        RfStatus::Io
    } else {
        RfStatus::InvalidArgument
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (RfStatus, String)>) -> RfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RfStatus::Ok,
        Ok(Err((st, msg))) => {
            set_error(msg);
            st
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            RfStatus::Panic
        }
    }
}

fn core(e: Error) -> (RfStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (RfStatus, String) {
    (RfStatus::NullPointer, format!("{what} is null"))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn rf_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a system from an experiment config in JSON (the same document the
/// command-line tool reads), solving the equilibrium and calibrating the
/// friction offset as configured.
///
/// # Safety
/// `config_json` must be a valid NUL-terminated string and `out` a valid
/// pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn rf_system_new(config_json: *const c_char, out: *mut *mut RfSystem) -> RfStatus {
    guard(|| {
        if config_json.is_null() {
            return Err(null("config_json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let text = CStr::from_ptr(config_json)
            .to_str()
            .map_err(|e| (RfStatus::InvalidArgument, format!("config is not UTF-8: {e}")))?;
        let cfg = ExperimentConfig::from_json(text).map_err(core)?;
        let base = cfg.base_params(None).map_err(core)?;
        let opts = equilibrium::SolveOptions {
            c_alpha_g_bound: Some(cfg.regime.c_alpha_g_bound),
            ..Default::default()
        };
        let eq = equilibrium::solve_with(&base, &cfg.force, &opts).map_err(core)?;
        let params = if cfg.calibrate_friction { base.calibrate_friction(eq.w) } else { base };
        *out = Box::into_raw(Box::new(RfSystem {
            params,
            force: cfg.force,
            eq,
        }));
        Ok(())
    })
}

/// Releases a system; null is ignored.
///
/// # Safety
/// `sys` must be null or a handle from [`rf_system_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rf_system_free(sys: *mut RfSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Number of particles; 0 for a null handle.
///
/// # Safety
/// `sys` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rf_system_particles(sys: *const RfSystem) -> usize {
    sys.as_ref().map_or(0, |s| s.params.n)
}

/// Effective force `w` and damping time `2M/A`.
///
/// # Safety
/// `sys` must be a live handle; the out pointers must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn rf_system_scales(sys: *const RfSystem, w: *mut f64, t_damp: *mut f64) -> RfStatus {
    guard(|| {
        let s = sys.as_ref().ok_or_else(|| null("sys"))?;
        if let Some(w) = w.as_mut() {
            *w = s.eq.w;
        }
        if let Some(t) = t_damp.as_mut() {
            *t = s.params.derived().t_damp;
        }
        Ok(())
    })
}

/// Writes the `N` equilibrium positions (frame of the force profile) to `out`.
///
/// # Safety
/// `sys` must be a live handle and `out` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rf_system_equilibrium(sys: *const RfSystem, out: *mut f64, len: usize) -> RfStatus {
    guard(|| {
        let s = sys.as_ref().ok_or_else(|| null("sys"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let n = s.params.n;
        if len < n {
            return Err((RfStatus::InvalidArgument, format!("buffer holds {len} values, need {n}")));
        }
        let dst = std::slice::from_raw_parts_mut(out, n);
        for (k, d) in dst.iter_mut().enumerate() {
            *d = s.eq.lab_position(k);
        }
        Ok(())
    })
}

/// Relative L-infinity difference between the mode solution and the
/// adaptive integration of the cut-off linear system.
///
/// # Safety
/// `sys` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rf_linear_check(sys: *const RfSystem, horizon: f64, steps: usize, out: *mut f64) -> RfStatus {
    guard(|| {
        let s = sys.as_ref().ok_or_else(|| null("sys"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let grid = TimeGrid::new(horizon / steps.max(1) as f64, steps).map_err(core)?;
        let sol = spectral::linear_solution(&s.params, &s.eq, &s.force, grid).map_err(core)?;
        let ode = dynamics::simulate_linear_cutoff(&s.params, &s.eq, &s.force, horizon, steps).map_err(core)?;
        *out = sol.relative_linf_error(&ode).map_err(core)?;
        Ok(())
    })
}

/// Integrates the full model over `[0, horizon]` with `steps` exponential
/// split steps, keeping about `samples` samples (0 for the default).
///
/// # Safety
/// `sys` must be a live handle and `out` valid storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn rf_simulate(
    sys: *const RfSystem,
    horizon: f64,
    steps: usize,
    samples: usize,
    out: *mut *mut RfTrajectory,
) -> RfStatus {
    guard(|| {
        let s = sys.as_ref().ok_or_else(|| null("sys"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let opts = SimOptions {
            sample_every: if samples == 0 { 0 } else { steps.div_ceil(samples).max(1) },
            ..SimOptions::default()
        };
        let traj = dynamics::simulate_full_with(&s.params, &s.eq, &s.force, horizon, steps, &opts).map_err(core)?;
        *out = Box::into_raw(Box::new(RfTrajectory { traj }));
        Ok(())
    })
}

/// Releases a trajectory; null is ignored.
///
/// # Safety
/// `traj` must be null or a handle from [`rf_simulate`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rf_trajectory_free(traj: *mut RfTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Number of stored samples; 0 for a null handle.
///
/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rf_trajectory_samples(traj: *const RfTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.traj.times.len())
}

/// Time, unwrapped positions and velocities of sample `index`. Either array
/// pointer may be null to skip it; non-null arrays must hold `len >= N` values.
///
/// # Safety
/// `traj` must be a live handle; non-null pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rf_trajectory_sample(
    traj: *const RfTrajectory,
    index: usize,
    time: *mut f64,
    positions: *mut f64,
    velocities: *mut f64,
    len: usize,
) -> RfStatus {
    guard(|| {
        let t = &traj.as_ref().ok_or_else(|| null("traj"))?.traj;
        if index >= t.times.len() {
            return Err((
                RfStatus::InvalidArgument,
                format!("sample {index} out of range for {} samples", t.times.len()),
            ));
        }
        let n = t.particles();
        if (!positions.is_null() || !velocities.is_null()) && len < n {
            return Err((RfStatus::InvalidArgument, format!("buffer holds {len} values, need {n}")));
        }
        if let Some(tp) = time.as_mut() {
            *tp = t.times[index];
        }
        for (src, dst) in [(&t.positions[index], positions), (&t.velocities[index], velocities)] {
            if !dst.is_null() {
                std::slice::from_raw_parts_mut(dst, n).copy_from_slice(src);
            }
        }
        Ok(())
    })
}

/// `max |y_k(t)| / Delta`, `max |v_k(t) - V|` and whether the friction
/// window was left.
///
/// # Safety
/// `traj` and `sys` must be live handles; out pointers valid or null.
#[no_mangle]
pub unsafe extern "C" fn rf_trajectory_summary(
    traj: *const RfTrajectory,
    sys: *const RfSystem,
    y_over_delta: *mut f64,
    v_spread: *mut f64,
    window_exit: *mut bool,
) -> RfStatus {
    guard(|| {
        let t = &traj.as_ref().ok_or_else(|| null("traj"))?.traj;
        let s = sys.as_ref().ok_or_else(|| null("sys"))?;
        if let Some(y) = y_over_delta.as_mut() {
            *y = t.deviations.max_abs_y() / s.params.delta();
        }
        if let Some(v) = v_spread.as_mut() {
            *v = t.meta.max_velocity_deviation;
        }
        if let Some(w) = window_exit.as_mut() {
            *w = t.meta.window_exit;
        }
        Ok(())
    })
}
