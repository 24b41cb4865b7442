//! C ABI over `grading_core::mdp::Env`.
//!
//! Every function returns a `GradingStatus`; `GRADING_OK` is zero. On any
//! other status the message is kept per thread and read back with
//! `grading_last_error`. Handles are opaque and owned by the caller, who
//! releases them with `grading_env_free`. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use grading_core::config::Config;
use grading_core::error::Error;
use grading_core::mdp::{apply_mask, gaussian_mask, Env, PolicyDistribution, WaypointAction};
use grading_core::scenario::{Family, ScenarioSpec};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradingStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    EpisodeFinished = 3,
    BufferTooSmall = 4,
    DegenerateDistribution = 5,
    Io = 6,
    Internal = 7,
}

/// Opaque environment handle.
pub struct GradingEnv {
    env: Env,
    config: Config,
    spec: ScenarioSpec,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GradingStep {
    pub reward: f64,
    pub f_v: f64,
    pub f_t: f64,
    pub f_h: f64,
    pub done_bonus: f64,
    pub fail_penalty: f64,
    /// Seconds of simulated motion for this step.
    pub duration: f64,
    pub done: u8,
    pub failed: u8,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> GradingStatus {
    match e {
        Error::EpisodeFinished => GradingStatus::EpisodeFinished,
        Error::DegenerateDistribution => GradingStatus::DegenerateDistribution,
        Error::Io(_) | Error::IoAt { .. } => GradingStatus::Io,
        _ => GradingStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (GradingStatus, String)>) -> GradingStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GradingStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            GradingStatus::Internal
        }
    }
}

fn core<T>(r: grading_core::Result<T>) -> Result<T, (GradingStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (GradingStatus, String) {
    (GradingStatus::NullPointer, format!("{what} is null"))
}

unsafe fn opt_str<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, (GradingStatus, String)> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Some)
        .map_err(|_| (GradingStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn env_mut<'a>(h: *mut GradingEnv) -> Result<&'a mut GradingEnv, (GradingStatus, String)> {
    h.as_mut().ok_or_else(|| null("env"))
}

/// Creates an environment and resets it to `seed`.
///
/// `config_toml` may be null for defaults. `family` is a preset name
/// (`init`, `edge`, `continuous`, `random`); null means `init`.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn grading_env_new(
    config_toml: *const c_char,
    family: *const c_char,
    seed: u64,
    out: *mut *mut GradingEnv,
) -> GradingStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let config = match opt_str(config_toml, "config")? {
            Some(text) => core(Config::from_toml(text))?,
            None => Config::default(),
        };
        let family = core(Family::parse(opt_str(family, "family")?.unwrap_or("init")))?;
        let spec = ScenarioSpec::preset(family);
        let (env, _) = core(Env::reset(&config, &spec, seed))?;
        *out = Box::into_raw(Box::new(GradingEnv { env, config, spec }));
        Ok(())
    })
}

/// # Safety
/// `env` must come from `grading_env_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn grading_env_free(env: *mut GradingEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// # Safety
/// `env` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn grading_env_reset(env: *mut GradingEnv, seed: u64) -> GradingStatus {
    guard(|| {
        let h = env_mut(env)?;
        h.env = core(Env::reset(&h.config, &h.spec, seed))?.0;
        Ok(())
    })
}

/// Observation shape (down-sampled rows and columns).
///
/// # Safety
/// `env` must be a live handle; `rows` and `cols` writable.
#[no_mangle]
pub unsafe extern "C" fn grading_env_obs_shape(env: *const GradingEnv, rows: *mut usize, cols: *mut usize) -> GradingStatus {
    guard(|| {
        let h = env.as_ref().ok_or_else(|| null("env"))?;
        if rows.is_null() || cols.is_null() {
            return Err(null("shape output"));
        }
        *rows = h.env.fov().obs_rows();
        *cols = h.env.fov().obs_cols();
        Ok(())
    })
}

/// Copies the current observation, row-major, into `buf`.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn grading_env_observation(env: *const GradingEnv, buf: *mut f64, len: usize) -> GradingStatus {
    guard(|| {
        let h = env.as_ref().ok_or_else(|| null("env"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let v = h.env.observation().values();
        if len < v.len() {
            return Err((GradingStatus::BufferTooSmall, format!("need {} values, got {len}", v.len())));
        }
        std::slice::from_raw_parts_mut(buf, v.len()).copy_from_slice(v);
        Ok(())
    })
}

/// Executes one waypoint action. `out` may be null.
///
/// # Safety
/// `env` must be a live handle; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn grading_env_step(
    env: *mut GradingEnv,
    p_row: i64,
    p_col: i64,
    s_row: i64,
    s_col: i64,
    out: *mut GradingStep,
) -> GradingStatus {
    guard(|| {
        let h = env_mut(env)?;
        let r = core(h.env.step(WaypointAction::new((p_row, p_col), (s_row, s_col))))?;
        if let Some(o) = out.as_mut() {
            let c = r.components;
            *o = GradingStep {
                reward: r.reward,
                f_v: c.f_v,
                f_t: c.f_t,
                f_h: c.f_h,
                done_bonus: c.done_bonus,
                fail_penalty: c.fail_penalty,
                duration: r.info.duration,
                done: r.done as u8,
                failed: r.failed as u8,
            };
        }
        Ok(())
    })
}

/// Multiplies two policy heads (each `len` = rows*cols values) by the
/// environment's Gaussian mask and renormalizes them in place.
///
/// # Safety
/// `p` and `s` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn grading_apply_mask(env: *const GradingEnv, p: *mut f64, s: *mut f64, len: usize) -> GradingStatus {
    guard(|| {
        let h = env.as_ref().ok_or_else(|| null("env"))?;
        if p.is_null() || s.is_null() {
            return Err(null("head"));
        }
        let fov = h.env.fov();
        let (rows, cols) = (fov.obs_rows(), fov.obs_cols());
        if len != rows * cols {
            return Err((GradingStatus::InvalidArgument, format!("head length {len}, expected {}", rows * cols)));
        }
        let ps = std::slice::from_raw_parts_mut(p, len);
        let ss = std::slice::from_raw_parts_mut(s, len);
        let mask = core(gaussian_mask(fov, h.config.mask_sigma_factor, h.config.mask_base_scale))?;
        let dist = core(PolicyDistribution::from_heads(rows, cols, ps.to_vec(), ss.to_vec()))?;
        let [mp, ms] = core(apply_mask(&dist, &mask))?.heads;
        ps.copy_from_slice(&mp);
        ss.copy_from_slice(&ms);
        Ok(())
    })
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `len`. Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn grading_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}
