//! C ABI for the edgegen engine.
//!
//! Conventions, mirrored in the generated `include/edgegen.h`:
//!
//! - Every fallible call returns an [`EgStatus`]; `EG_STATUS_OK` is 0.
//! - On failure, [`eg_last_error_message`] returns a human-readable message
//!   for the most recent failed call on the *current thread* (or NULL).
//! - `EgConfig` and `EgCatalog` are opaque handles created and destroyed by
//!   this library; never free them with anything other than their `_free`
//!   functions, and never use a handle after freeing it.
//! - Strings returned through `char **out` parameters are heap-allocated and
//!   must be released with [`eg_string_free`].
//! - Out parameters are written only when the call returns `EG_STATUS_OK`.
//! - Handles are not synchronized; do not share one handle across threads
//!   without external locking. Distinct handles are independent.
//! - Panics never cross the boundary: they are caught and reported as
//!   `EG_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use edgegen::catalog::{self, SceneCatalog};
use edgegen::harness::{
    evaluate, replay, run_episode, train, EpisodeAgent, HarnessConfig,
};
use edgegen::rng::Rng;
use edgegen::Error;

// ─────────────────────────────────────────────────────────────────────────────
// Status codes and error reporting
// ─────────────────────────────────────────────────────────────────────────────

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EgStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    Utf8 = 2,
    /// A configuration value is out of its documented domain.
    InvalidConfig = 3,
    /// A function argument is out of its documented domain.
    InvalidArgument = 4,
    /// A scene failed its structural checks.
    InvalidScene = 5,
    /// A file declares a schema version this build does not understand.
    UnsupportedSchema = 6,
    /// JSON that does not parse or does not match the expected shape.
    Parse = 7,
    /// An I/O failure.
    Io = 8,
    /// A NaN or infinity surfaced mid-computation.
    NonFinite = 9,
    /// Replay/report verification found inconsistent artifacts.
    Mismatch = 10,
    /// An internal panic was caught at the boundary.
    Panic = 11,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn set_last_error(message: String) {
    let c = CString::new(message)
        .unwrap_or_else(|_| CString::new("error message contained NUL").expect("literal is NUL-free"));
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> EgStatus {
    match err {
        Error::InvalidConfig(_) => EgStatus::InvalidConfig,
        Error::InvalidArgument(_) => EgStatus::InvalidArgument,
        Error::InvalidScene { .. } => EgStatus::InvalidScene,
        Error::UnsupportedSchema { .. } => EgStatus::UnsupportedSchema,
        Error::Parse { .. } => EgStatus::Parse,
        Error::Io { .. } => EgStatus::Io,
        Error::NonFinite { .. } => EgStatus::NonFinite,
        Error::ReplayMismatch { .. } => EgStatus::Mismatch,
    }
}

fn fail(err: Error) -> EgStatus {
    let status = status_of(&err);
    set_last_error(err.to_string());
    status
}

fn fail_with(status: EgStatus, message: impl Into<String>) -> EgStatus {
    set_last_error(message.into());
    status
}

/// Runs a body with panic containment and a cleared error slot.
fn guard(f: impl FnOnce() -> EgStatus) -> EgStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail_with(EgStatus::Panic, "internal panic caught at the C boundary"),
    }
}

/// Reads a required C-string argument as UTF-8.
///
/// # Safety
/// `ptr` must be NULL or point to a NUL-terminated string.
unsafe fn str_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, EgStatus> {
    if ptr.is_null() {
        return Err(fail_with(
            EgStatus::NullArgument,
            format!("argument `{name}` must not be NULL"),
        ));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        fail_with(
            EgStatus::Utf8,
            format!("argument `{name}` is not valid UTF-8"),
        )
    })
}

/// Reads a required path argument.
///
/// # Safety
/// See [`str_arg`].
unsafe fn path_arg(ptr: *const c_char, name: &str) -> Result<PathBuf, EgStatus> {
    str_arg(ptr, name).map(PathBuf::from)
}

/// Reads an optional path argument (NULL means absent).
///
/// # Safety
/// See [`str_arg`].
unsafe fn opt_path_arg(ptr: *const c_char, name: &str) -> Result<Option<PathBuf>, EgStatus> {
    if ptr.is_null() {
        return Ok(None);
    }
    path_arg(ptr, name).map(Some)
}

fn require<'a, T>(ptr: *const T, name: &str) -> Result<&'a T, EgStatus> {
    // SAFETY: the caller contract of every API function requires live handles.
    unsafe { ptr.as_ref() }.ok_or_else(|| {
        fail_with(
            EgStatus::NullArgument,
            format!("argument `{name}` must not be NULL"),
        )
    })
}

fn require_mut<'a, T>(ptr: *mut T, name: &str) -> Result<&'a mut T, EgStatus> {
    // SAFETY: as above.
    unsafe { ptr.as_mut() }.ok_or_else(|| {
        fail_with(
            EgStatus::NullArgument,
            format!("argument `{name}` must not be NULL"),
        )
    })
}

fn string_out(out: *mut *mut c_char, value: String) -> EgStatus {
    let Ok(c) = CString::new(value) else {
        return fail_with(
            EgStatus::InvalidArgument,
            "output string contained an interior NUL",
        );
    };
    // SAFETY: `out` was checked non-NULL by the caller.
    unsafe { *out = c.into_raw() };
    EgStatus::Ok
}

// ─────────────────────────────────────────────────────────────────────────────
// Opaque handles
// ─────────────────────────────────────────────────────────────────────────────

/// Opaque harness configuration handle.
pub struct EgConfig(HarnessConfig);

/// Opaque scene catalog handle.
///
/// Tracks the file it was loaded from or last saved to; training and
/// evaluation record that path (and its digest) in their manifests, so they
/// require a file-backed catalog.
pub struct EgCatalog {
    catalog: SceneCatalog,
    path: Option<PathBuf>,
}

impl EgCatalog {
    fn backing_path(&self) -> Result<&PathBuf, EgStatus> {
        self.path.as_ref().ok_or_else(|| {
            fail_with(
                EgStatus::InvalidArgument,
                "catalog has no backing file; save it with eg_catalog_save first",
            )
        })
    }
}

// ─────────────────────────────────────────────────────────────────────────────
// Library info and string memory
// ─────────────────────────────────────────────────────────────────────────────

/// Returns the library version as a static string; do not free it.
#[no_mangle]
pub extern "C" fn eg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Returns the error message of the current thread's most recent failed call
/// as a freshly allocated string (free with `eg_string_free`), or NULL if the
/// most recent call succeeded.
#[no_mangle]
pub extern "C" fn eg_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| {
        e.borrow()
            .as_ref()
            .map(|c| c.clone().into_raw())
            .unwrap_or(std::ptr::null_mut())
    })
}

/// Frees a string returned by this library. NULL is a no-op.
///
/// # Safety
/// `s` must be a pointer previously returned by this library's string-output
/// functions, and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn eg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ─────────────────────────────────────────────────────────────────────────────
// Config handles
// ─────────────────────────────────────────────────────────────────────────────

/// Creates a config with every section at its documented default.
#[no_mangle]
pub extern "C" fn eg_config_default() -> *mut EgConfig {
    Box::into_raw(Box::new(EgConfig(HarnessConfig::default())))
}

/// Loads and validates a config JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn eg_config_from_json_file(
    path: *const c_char,
    out: *mut *mut EgConfig,
) -> EgStatus {
    guard(|| {
        if out.is_null() {
            return fail_with(EgStatus::NullArgument, "argument `out` must not be NULL");
        }
        let path = match path_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match HarnessConfig::load(&path) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(EgConfig(cfg)));
                EgStatus::Ok
            }
            Err(err) => fail(err),
        }
    })
}

/// Serializes a config back to JSON (free the string with `eg_string_free`).
///
/// # Safety
/// `cfg` must be a live config handle; `out_json` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn eg_config_to_json(
    cfg: *const EgConfig,
    out_json: *mut *mut c_char,
) -> EgStatus {
    guard(|| {
        if out_json.is_null() {
            return fail_with(EgStatus::NullArgument, "argument `out_json` must not be NULL");
        }
        let cfg = match require(cfg, "cfg") {
            Ok(c) => c,
            Err(s) => return s,
        };
        let json = serde_json::to_string_pretty(&cfg.0).expect("config serialization is infallible");
        string_out(out_json, json)
    })
}

/// Destroys a config handle. NULL is a no-op.
///
/// # Safety
/// `cfg` must be NULL or a live config handle; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn eg_config_free(cfg: *mut EgConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

// ─────────────────────────────────────────────────────────────────────────────
// Catalog handles
// ─────────────────────────────────────────────────────────────────────────────

/// Generates a scene catalog from the config's generator section.
///
/// The handle has no backing file until `eg_catalog_save`.
///
/// # Safety
/// `cfg` must be a live config handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn eg_catalog_generate(
    cfg: *const EgConfig,
    seed: u64,
    out: *mut *mut EgCatalog,
) -> EgStatus {
    guard(|| {
        if out.is_null() {
            return fail_with(EgStatus::NullArgument, "argument `out` must not be NULL");
        }
        let cfg = match require(cfg, "cfg") {
            Ok(c) => c,
            Err(s) => return s,
        };
        match catalog::generate(&cfg.0.generator, seed) {
            Ok(cat) => {
                *out = Box::into_raw(Box::new(EgCatalog {
                    catalog: cat,
                    path: None,
                }));
                EgStatus::Ok
            }
            Err(err) => fail(err),
        }
    })
}

/// Loads and validates a catalog JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn eg_catalog_load(
    path: *const c_char,
    out: *mut *mut EgCatalog,
) -> EgStatus {
    guard(|| {
        if out.is_null() {
            return fail_with(EgStatus::NullArgument, "argument `out` must not be NULL");
        }
        let path = match path_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match catalog::load(&path) {
            Ok(cat) => {
                *out = Box::into_raw(Box::new(EgCatalog {
                    catalog: cat,
                    path: Some(path),
                }));
                EgStatus::Ok
            }
            Err(err) => fail(err),
        }
    })
}

/// Writes the catalog to a JSON file, which becomes its backing file.
///
/// # Safety
/// `cat` must be a live catalog handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn eg_catalog_save(cat: *mut EgCatalog, path: *const c_char) -> EgStatus {
    guard(|| {
        let cat = match require_mut(cat, "cat") {
            Ok(c) => c,
            Err(s) => return s,
        };
        let path = match path_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match catalog::save(&cat.catalog, &path) {
            Ok(()) => {
                cat.path = Some(path);
                EgStatus::Ok
            }
            Err(err) => fail(err),
        }
    })
}

/// Writes the number of scenes to `out_len`.
///
/// # Safety
/// `cat` must be a live catalog handle; `out_len` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn eg_catalog_len(cat: *const EgCatalog, out_len: *mut usize) -> EgStatus {
    guard(|| {
        if out_len.is_null() {
            return fail_with(EgStatus::NullArgument, "argument `out_len` must not be NULL");
        }
        let cat = match require(cat, "cat") {
            Ok(c) => c,
            Err(s) => return s,
        };
        *out_len = cat.catalog.scenes.len();
        EgStatus::Ok
    })
}

/// Destroys a catalog handle. NULL is a no-op.
///
/// # Safety
/// `cat` must be NULL or a live catalog handle; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn eg_catalog_free(cat: *mut EgCatalog) {
    if !cat.is_null() {
        drop(Box::from_raw(cat));
    }
}

// ─────────────────────────────────────────────────────────────────────────────
// Running the engine
// ─────────────────────────────────────────────────────────────────────────────

/// Runs one episode and returns the full record (rows, totals, failure mode)
/// as a JSON string (free with `eg_string_free`).
///
/// `agent` is `"clear"`, `"random"` (seeded by `agent_seed`) or `"policy"`
/// (requires `checkpoint_path`; acts at the policy mean). `checkpoint_path`
/// may be NULL for the baselines.
///
/// # Safety
/// `cfg`/`cat` must be live handles; strings NUL-terminated; `out_json` valid.
#[no_mangle]
pub unsafe extern "C" fn eg_run_episode_json(
    cfg: *const EgConfig,
    cat: *const EgCatalog,
    scene_index: usize,
    agent: *const c_char,
    agent_seed: u64,
    checkpoint_path: *const c_char,
    out_json: *mut *mut c_char,
) -> EgStatus {
    guard(|| {
        if out_json.is_null() {
            return fail_with(EgStatus::NullArgument, "argument `out_json` must not be NULL");
        }
        let cfg = match require(cfg, "cfg") {
            Ok(c) => c,
            Err(s) => return s,
        };
        let cat = match require(cat, "cat") {
            Ok(c) => c,
            Err(s) => return s,
        };
        let agent = match str_arg(agent, "agent") {
            Ok(a) => a,
            Err(s) => return s,
        };
        let checkpoint_path = match opt_path_arg(checkpoint_path, "checkpoint_path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let Some(scene) = cat.catalog.scenes.get(scene_index) else {
            return fail_with(
                EgStatus::InvalidArgument,
                format!(
                    "scene_index {scene_index} out of range for a catalog of {}",
                    cat.catalog.scenes.len()
                ),
            );
        };

        // The checkpoint must outlive the agent borrowing its parameters.
        let checkpoint;
        let mut agent = match agent {
            "clear" => EpisodeAgent::Clear,
            "random" => EpisodeAgent::Random(Rng::new(agent_seed)),
            "policy" => {
                let Some(path) = checkpoint_path else {
                    return fail_with(
                        EgStatus::InvalidArgument,
                        "agent `policy` requires checkpoint_path",
                    );
                };
                checkpoint = match edgegen::agent::Checkpoint::load(&path) {
                    Ok(c) => c,
                    Err(err) => return fail(err),
                };
                EpisodeAgent::Mean {
                    params: &checkpoint.params,
                }
            }
            other => {
                return fail_with(
                    EgStatus::InvalidArgument,
                    format!("unknown agent `{other}` (expected clear, random or policy)"),
                )
            }
        };

        match run_episode(&mut agent, scene, &cfg.0, None) {
            Ok(record) => {
                let json =
                    serde_json::to_string(&record).expect("episode serialization is infallible");
                string_out(out_json, json)
            }
            Err(err) => fail(err),
        }
    })
}

/// Trains a policy into `out_dir` (checkpoint, curve, manifest).
///
/// `resume_path` may be NULL; `seed_override` may be NULL to use the config's
/// seed. The catalog must be file-backed.
///
/// # Safety
/// `cfg`/`cat` must be live handles; strings NUL-terminated; `seed_override`
/// NULL or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn eg_train(
    cfg: *const EgConfig,
    cat: *const EgCatalog,
    out_dir: *const c_char,
    resume_path: *const c_char,
    seed_override: *const u64,
) -> EgStatus {
    guard(|| {
        let cfg = match require(cfg, "cfg") {
            Ok(c) => c,
            Err(s) => return s,
        };
        let cat = match require(cat, "cat") {
            Ok(c) => c,
            Err(s) => return s,
        };
        let out_dir = match path_arg(out_dir, "out_dir") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let resume = match opt_path_arg(resume_path, "resume_path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let catalog_path = match cat.backing_path() {
            Ok(p) => p.clone(),
            Err(s) => return s,
        };
        let seed_override = seed_override.as_ref().copied();
        match train(
            &cfg.0,
            &cat.catalog,
            &catalog_path,
            &out_dir,
            resume.as_deref(),
            seed_override,
            |_| {},
        ) {
            Ok(_) => EgStatus::Ok,
            Err(err) => fail(err),
        }
    })
}

/// Evaluates baselines (and the checkpoint's policy when `checkpoint_path` is
/// non-NULL) into `out_dir` (episode logs, report.json/csv, manifest).
///
/// # Safety
/// `cfg`/`cat` must be live handles; strings NUL-terminated; `seed_override`
/// NULL or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn eg_evaluate(
    cfg: *const EgConfig,
    cat: *const EgCatalog,
    checkpoint_path: *const c_char,
    out_dir: *const c_char,
    seed_override: *const u64,
) -> EgStatus {
    guard(|| {
        let cfg = match require(cfg, "cfg") {
            Ok(c) => c,
            Err(s) => return s,
        };
        let cat = match require(cat, "cat") {
            Ok(c) => c,
            Err(s) => return s,
        };
        let checkpoint = match opt_path_arg(checkpoint_path, "checkpoint_path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let out_dir = match path_arg(out_dir, "out_dir") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let catalog_path = match cat.backing_path() {
            Ok(p) => p.clone(),
            Err(s) => return s,
        };
        let seed_override = seed_override.as_ref().copied();
        match evaluate(
            &cfg.0,
            &cat.catalog,
            &catalog_path,
            checkpoint.as_deref(),
            &out_dir,
            seed_override,
        ) {
            Ok(_) => EgStatus::Ok,
            Err(err) => fail(err),
        }
    })
}

/// Re-verifies an episode log; writes counts on success.
///
/// # Safety
/// `path` must be NUL-terminated; `out_episodes`/`out_rows` must be valid
/// pointers.
#[no_mangle]
pub unsafe extern "C" fn eg_replay(
    path: *const c_char,
    out_episodes: *mut usize,
    out_rows: *mut usize,
) -> EgStatus {
    guard(|| {
        if out_episodes.is_null() || out_rows.is_null() {
            return fail_with(
                EgStatus::NullArgument,
                "arguments `out_episodes` and `out_rows` must not be NULL",
            );
        }
        let path = match path_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match replay(&path) {
            Ok(summary) => {
                *out_episodes = summary.episodes;
                *out_rows = summary.rows;
                EgStatus::Ok
            }
            Err(err) => fail(err),
        }
    })
}

// ─────────────────────────────────────────────────────────────────────────────
