//! C interface to the fresh environments, feedback network and trainer.
//!
//! Every fallible call returns a [`FreshStatus`]. On failure the message is
//! kept per thread and can be copied out with [`fresh_last_error_message`].
//! Handles are opaque and must be released with their matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use fresh::envs::{make_env_by_name, Environment};
use fresh::fnn::EnsembleFnn;
use fresh::trainer::{TrainRunConfig, Trainer};
use fresh::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreshStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Config = 4,
    Numeric = 5,
    Io = 6,
    Format = 7,
    Internal = 8,
}

/// An environment instance.
pub struct FreshEnv {
    inner: Box<dyn Environment>,
}

/// A trained feedback-network ensemble.
pub struct FreshFnn {
    inner: EnsembleFnn,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> FreshStatus {
    match err {
        Error::Config(_) => FreshStatus::Config,
        Error::Usage(_) | Error::NotReady(_) | Error::Exhausted(_) | Error::Conflict(_) => FreshStatus::InvalidArgument,
        Error::Numeric(_) => FreshStatus::Numeric,
        Error::Io(_) => FreshStatus::Io,
        Error::Format(_) | Error::Json(_) => FreshStatus::Format,
    }
}

struct Failure(FreshStatus, String);

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Failure(status_of(&err), err.to_string())
    }
}

fn fail<T>(status: FreshStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> FreshStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => FreshStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FreshStatus::Internal
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        return fail(FreshStatus::NullArgument, format!("{what} is null"));
    }
    Ok(())
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    non_null(p, what)?;
    CStr::from_ptr(p).to_str().or_else(|_| fail(FreshStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn write_slice(values: &[f64], out: *mut f64, capacity: usize, what: &str) -> Result<(), Failure> {
    if values.len() > capacity {
        return fail(FreshStatus::BufferTooSmall, format!("{what} needs {} values, got room for {capacity}", values.len()));
    }
    non_null(out, what)?;
    std::ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to fit) and returns its full length in bytes.
///
/// # Safety
/// `buf` must be null or point to `capacity` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fresh_last_error_message(buf: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && capacity > 0 {
            let n = msg.len().min(capacity - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Creates the environment named `name` ("aimline" or "gaterun") with default settings.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fresh_env_create(name: *const c_char, out: *mut *mut FreshEnv) -> FreshStatus {
    guard(|| {
        non_null(out, "out")?;
        let inner = make_env_by_name(c_str(name, "name")?)?;
        *out = Box::into_raw(Box::new(FreshEnv { inner }));
        Ok(())
    })
}

/// # Safety
/// `env` must come from `fresh_env_create` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fresh_env_free(env: *mut FreshEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// # Safety
/// `env` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fresh_env_observation_dim(env: *const FreshEnv) -> usize {
    env.as_ref().map_or(0, |e| e.inner.spec().observation_dim)
}

/// # Safety
/// `env` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fresh_env_action_count(env: *const FreshEnv) -> usize {
    env.as_ref().map_or(0, |e| e.inner.spec().action_count)
}

/// Starts an episode on the layout generated by `seed` and writes the first observation.
///
/// # Safety
/// `env` must be a live handle and `obs` must have room for `obs_capacity` values.
#[no_mangle]
pub unsafe extern "C" fn fresh_env_reset(env: *mut FreshEnv, seed: u64, obs: *mut f64, obs_capacity: usize) -> FreshStatus {
    guard(|| {
        non_null(env, "env")?;
        let env = &mut *env;
        if obs_capacity < env.inner.spec().observation_dim {
            return fail(FreshStatus::BufferTooSmall, "observation buffer too small");
        }
        let (first, _) = env.inner.reset(seed);
        write_slice(&first, obs, obs_capacity, "observation")
    })
}

/// Applies `action`, writing the next observation, the reward and whether the episode ended.
///
/// # Safety
/// `env` must be a live handle; `obs` must have room for `obs_capacity`
/// values; `reward` and `terminal` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fresh_env_step(
    env: *mut FreshEnv,
    action: usize,
    obs: *mut f64,
    obs_capacity: usize,
    reward: *mut f64,
    terminal: *mut bool,
) -> FreshStatus {
    guard(|| {
        non_null(env, "env")?;
        non_null(reward, "reward")?;
        non_null(terminal, "terminal")?;
        let env = &mut *env;
        if obs_capacity < env.inner.spec().observation_dim {
            return fail(FreshStatus::BufferTooSmall, "observation buffer too small");
        }
        if action >= env.inner.spec().action_count {
            return fail(FreshStatus::InvalidArgument, format!("action {action} out of range"));
        }
        let step = env.inner.step(action)?;
        write_slice(&step.next_observation, obs, obs_capacity, "observation")?;
        *reward = step.reward;
        *terminal = step.terminal;
        Ok(())
    })
}

/// Loads a feedback network saved by the trainer (`checkpoint/fnn.bin`).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fresh_fnn_load(path: *const c_char, out: *mut *mut FreshFnn) -> FreshStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = c_str(path, "path")?;
        let file = File::open(path).map_err(Error::from)?;
        let inner = EnsembleFnn::read(&mut BufReader::new(file))?;
        *out = Box::into_raw(Box::new(FreshFnn { inner }));
        Ok(())
    })
}

/// # Safety
/// `fnn` must come from `fresh_fnn_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fresh_fnn_free(fnn: *mut FreshFnn) {
    if !fnn.is_null() {
        drop(Box::from_raw(fnn));
    }
}

/// # Safety
/// `fnn` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fresh_fnn_action_count(fnn: *const FreshFnn) -> usize {
    fnn.as_ref().map_or(0, |f| f.inner.action_count())
}

/// Ensemble prediction for one observation: mean action probabilities,
/// mean good-state probability and both confidences.
///
/// # Safety
/// `fnn` must be a live handle, `obs` must hold `obs_len` values,
/// `action_probs` must have room for `probs_capacity` values, and the
/// remaining outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fresh_fnn_predict(
    fnn: *const FreshFnn,
    obs: *const f64,
    obs_len: usize,
    action_probs: *mut f64,
    probs_capacity: usize,
    state_prob: *mut f64,
    confidence_action: *mut f64,
    confidence_state: *mut f64,
) -> FreshStatus {
    guard(|| {
        non_null(fnn, "fnn")?;
        non_null(obs, "obs")?;
        for (p, what) in [(state_prob, "state_prob"), (confidence_action, "confidence_action"), (confidence_state, "confidence_state")] {
            non_null(p, what)?;
        }
        let fnn = &(*fnn).inner;
        if obs_len != fnn.observation_dim() {
            return fail(FreshStatus::InvalidArgument, format!("expected {} observation values, got {obs_len}", fnn.observation_dim()));
        }
        let pred = fnn.predict(std::slice::from_raw_parts(obs, obs_len))?;
        let rule = fnn.confidence_rule();
        write_slice(&pred.mean_action_probs(), action_probs, probs_capacity, "action_probs")?;
        *state_prob = pred.mean_state_prob();
        *confidence_action = pred.confidence_action(rule);
        *confidence_state = pred.confidence_state(rule);
        Ok(())
    })
}

/// `r_e + λ_a r_a + λ_s r_s`, with the feedback term negated when a cycle was detected.
#[no_mangle]
pub extern "C" fn fresh_shaped_reward(r_e: f64, r_a: u8, r_s: u8, lambda_a: f64, lambda_s: f64, cycle_detected: bool) -> f64 {
    fresh::shaping::shaped_reward(r_e, r_a, r_s, lambda_a, lambda_s, cycle_detected)
}

/// Runs a full training run from a TOML configuration (an empty string
/// means all defaults). Artifacts go to `out_dir` unless it is null. The
/// final greedy evaluation mean is written to `final_return` (NaN when the
/// run evaluates nothing).
///
/// # Safety
/// `config_toml` must be a NUL-terminated string, `out_dir` null or a
/// NUL-terminated string, and `final_return` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fresh_train_run(
    config_toml: *const c_char,
    out_dir: *const c_char,
    final_return: *mut f64,
) -> FreshStatus {
    guard(|| {
        non_null(final_return, "final_return")?;
        let text = c_str(config_toml, "config_toml")?;
        let config = if text.trim().is_empty() { TrainRunConfig::default() } else { TrainRunConfig::from_toml_str(text)? };
        config.validate()?;
        let mut trainer = Trainer::new(config)?;
        if !out_dir.is_null() {
            trainer = trainer.with_output(Path::new(c_str(out_dir, "out_dir")?));
        }
        let summary = trainer.run(None)?;
        *final_return = summary.final_eval.map_or(f64::NAN, |e| e.mean);
        Ok(())
    })
}
