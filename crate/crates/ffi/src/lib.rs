//! C ABI over `wsguard`.
//!
//! Every fallible call returns a [`WsgStatus`]; on failure the message is
//! available from [`wsg_last_error`] on the same thread. Objects are opaque
//! handles released with their `_free` function. Strings handed out by the
//! library are NUL-terminated UTF-8 and must be released with
//! [`wsg_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use wsguard::evalkit::{metrics, ConfusionMatrix};
use wsguard::flowmeter::FlowError;
use wsguard::inspector::{handle_request, Daemon, InspectError, InspectorConfig, InspectorState};
use wsguard::opcode::{oiva, parse_listing, Language, OpcodeVocabulary};
use wsguard::rulelang::{load_rules_path, match_buffer, RuleError, RuleSet};
use wsguard::tensornet::class_weights;
use wsguard::trafficmodel::load_flow_classifier;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WsgStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Rule text, JSON or other input failed to parse.
    Parse = 3,
    Io = 4,
    /// An argument was out of range or inconsistent.
    InvalidArgument = 5,
    /// Model loading or inference failed.
    Model = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WsgLanguage {
    Php = 0,
    Cil = 1,
}

/// Percentages in `[0, 100]`; undefined ratios are 0.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WsgMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    pub fpr: f64,
    pub fnr: f64,
}

/// Compiled signature rules.
pub struct WsgRules {
    set: RuleSet,
}

/// Inspection daemon state: model, rule book and blacklist.
pub struct WsgInspector {
    daemon: Daemon,
}

struct Failure(WsgStatus, String);

type FfiResult<T> = Result<T, Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> WsgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            WsgStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            WsgStatus::Panic
        }
    }
}

fn fail<E: std::fmt::Display>(status: WsgStatus) -> impl FnOnce(E) -> Failure {
    move |e| Failure(status, e.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure(WsgStatus::NullArgument, format!("{name} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(WsgStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

fn out_arg<'a, T>(p: *mut T, name: &str) -> FfiResult<&'a mut T> {
    // SAFETY: the caller passes either NULL or a valid, writable pointer.
    unsafe { p.as_mut() }.ok_or_else(|| Failure(WsgStatus::NullArgument, format!("{name} is NULL")))
}

fn handle<'a, T>(p: *const T, name: &str) -> FfiResult<&'a T> {
    // SAFETY: non-NULL handles come from this library and are still live.
    unsafe { p.as_ref() }.ok_or_else(|| Failure(WsgStatus::NullArgument, format!("{name} is NULL")))
}

unsafe fn bytes_arg<'a>(data: *const u8, len: usize) -> FfiResult<&'a [u8]> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(Failure(WsgStatus::NullArgument, "data is NULL".into()));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

/// Message of the last failed call on this thread, or NULL. Owned by the
/// library and valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn wsg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn wsg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn wsg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Compiles rule source text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn wsg_rules_compile(
    text: *const c_char,
    out: *mut *mut WsgRules,
) -> WsgStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let set = RuleSet::parse(str_arg(text, "text")?).map_err(fail(WsgStatus::Parse))?;
        *out = Box::into_raw(Box::new(WsgRules { set }));
        Ok(())
    })
}

/// Loads a rule file or a directory of `.yar`/`.yara` files.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn wsg_rules_load(path: *const c_char, out: *mut *mut WsgRules) -> WsgStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = Path::new(str_arg(path, "path")?);
        let set = load_rules_path(path).map_err(|e| {
            let status = if matches!(e, RuleError::Io { .. }) {
                WsgStatus::Io
            } else {
                WsgStatus::Parse
            };
            Failure(status, e.to_string())
        })?;
        *out = Box::into_raw(Box::new(WsgRules { set }));
        Ok(())
    })
}

/// Number of rules in the set.
///
/// # Safety
/// `rules` must be a live handle or NULL (gives 0).
#[no_mangle]
pub unsafe extern "C" fn wsg_rules_count(rules: *const WsgRules) -> usize {
    rules.as_ref().map_or(0, |r| r.set.len())
}

/// Matches `len` bytes at `data`. `*matched` is set to whether any rule
/// matched and, when `names_json` is not NULL, it receives a JSON array of
/// the matching rule names (free with [`wsg_string_free`]).
///
/// # Safety
/// `rules` must be a live handle, `data` readable for `len` bytes,
/// `matched` writable and `names_json` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn wsg_rules_match(
    rules: *const WsgRules,
    data: *const u8,
    len: usize,
    matched: *mut bool,
    names_json: *mut *mut c_char,
) -> WsgStatus {
    guard(|| {
        let rules = handle(rules, "rules")?;
        let matched = out_arg(matched, "matched")?;
        let buf = bytes_arg(data, len)?;
        let report = match_buffer(&rules.set, "", buf);
        *matched = report.is_match();
        if let Some(names) = names_json.as_mut() {
            let text =
                serde_json::to_string(&report.rule_names()).map_err(fail(WsgStatus::Parse))?;
            *names = to_c_string(text);
        }
        Ok(())
    })
}

/// Releases a rule set. NULL is ignored.
///
/// # Safety
/// `rules` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn wsg_rules_free(rules: *mut WsgRules) {
    if !rules.is_null() {
        drop(Box::from_raw(rules));
    }
}

/// Classification metrics from confusion-matrix counts, unrounded.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wsg_metrics(
    true_pos: u64,
    false_pos: u64,
    false_neg: u64,
    true_neg: u64,
    out: *mut WsgMetrics,
) -> WsgStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let m = metrics(&ConfusionMatrix::new(
            true_pos, false_pos, false_neg, true_neg,
        ))
        .map_err(fail(WsgStatus::InvalidArgument))?;
        *out = WsgMetrics {
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            specificity: m.specificity,
            f1: m.f1,
            fpr: m.fpr,
            fnr: m.fnr,
        };
        Ok(())
    })
}

/// Inverse-frequency class weights `total / (2 * n_class)`.
///
/// # Safety
/// `benign_weight` and `webshell_weight` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wsg_class_weights(
    n_benign: u64,
    n_webshell: u64,
    benign_weight: *mut f64,
    webshell_weight: *mut f64,
) -> WsgStatus {
    guard(|| {
        let b = out_arg(benign_weight, "benign_weight")?;
        let w = out_arg(webshell_weight, "webshell_weight")?;
        let cw = class_weights(n_benign as usize, n_webshell as usize)
            .map_err(fail(WsgStatus::InvalidArgument))?;
        *b = cw.benign;
        *w = cw.webshell;
        Ok(())
    })
}

/// Opcode index vector of a disassembly listing against the shipped
/// vocabulary for `language`. Writes exactly `max_length` indices to `out`
/// (zero padded) and the number of opcodes found, before truncation, to
/// `used` when it is not NULL.
///
/// # Safety
/// `listing` must be a NUL-terminated string, `out` writable for
/// `max_length` elements and `used` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn wsg_oiva(
    language: WsgLanguage,
    listing: *const c_char,
    max_length: usize,
    out: *mut u32,
    used: *mut usize,
) -> WsgStatus {
    guard(|| {
        let text = str_arg(listing, "listing")?;
        if max_length == 0 {
            return Err(Failure(
                WsgStatus::InvalidArgument,
                "max_length must be positive".into(),
            ));
        }
        if out.is_null() {
            return Err(Failure(WsgStatus::NullArgument, "out is NULL".into()));
        }
        let language = match language {
            WsgLanguage::Php => Language::Php,
            WsgLanguage::Cil => Language::Cil,
        };
        let vocab = OpcodeVocabulary::builtin(language);
        let parsed = parse_listing(language, text);
        let v = oiva(&parsed, &vocab, max_length);
        std::slice::from_raw_parts_mut(out, max_length).copy_from_slice(&v.indices);
        if let Some(u) = used.as_mut() {
            *u = parsed
                .mnemonics
                .iter()
                .filter(|m| vocab.index_of(m).is_some())
                .count();
        }
        Ok(())
    })
}

/// Creates an inspector. `config_json` (NULL for defaults) is a JSON object
/// of daemon settings; `model_path` (NULL to use the config's) names a
/// trained flow model or a JSON stub. An existing rule file in the rules
/// directory is continued.
///
/// # Safety
/// String arguments must be NULL or NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wsg_inspector_new(
    config_json: *const c_char,
    model_path: *const c_char,
    out: *mut *mut WsgInspector,
) -> WsgStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let mut config: InspectorConfig = if config_json.is_null() {
            InspectorConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?)
                .map_err(fail(WsgStatus::Parse))?
        };
        if !model_path.is_null() {
            config.model_path = Some(str_arg(model_path, "model_path")?.into());
        }
        config
            .validate()
            .map_err(fail(WsgStatus::InvalidArgument))?;
        let path = config
            .model_path
            .clone()
            .ok_or_else(|| Failure(WsgStatus::InvalidArgument, "no model path".into()))?;
        let model = load_flow_classifier(&path).map_err(fail(WsgStatus::Model))?;
        let state = InspectorState::resume(&config).map_err(fail(WsgStatus::Io))?;
        *out = Box::into_raw(Box::new(WsgInspector {
            daemon: Daemon::new(config, model, state),
        }));
        Ok(())
    })
}

/// Answers one daemon protocol request (`{"op":"inspect","pcap_path":...}`,
/// `{"op":"ping"}`, `{"op":"blacklist"}`) with a JSON reply in `*reply`.
/// Protocol-level failures are reported inside the reply as `{"error":...}`
/// with status OK.
///
/// # Safety
/// `inspector` must be a live handle, `request` NUL-terminated and `reply`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn wsg_inspector_request(
    inspector: *const WsgInspector,
    request: *const c_char,
    reply: *mut *mut c_char,
) -> WsgStatus {
    guard(|| {
        let ins = handle(inspector, "inspector")?;
        let reply = out_arg(reply, "reply")?;
        *reply = ptr::null_mut();
        let v = handle_request(&ins.daemon, str_arg(request, "request")?);
        *reply = to_c_string(v.to_string());
        Ok(())
    })
}

/// Inspects one pcap file. The rule file is rewritten when rules change and
/// `*result_json` receives `{"alerts","rules","stats"}`.
///
/// # Safety
/// `inspector` must be a live handle, `pcap_path` NUL-terminated and
/// `result_json` writable.
#[no_mangle]
pub unsafe extern "C" fn wsg_inspector_inspect(
    inspector: *const WsgInspector,
    pcap_path: *const c_char,
    result_json: *mut *mut c_char,
) -> WsgStatus {
    guard(|| {
        let ins = handle(inspector, "inspector")?;
        let result_json = out_arg(result_json, "result_json")?;
        *result_json = ptr::null_mut();
        let path = Path::new(str_arg(pcap_path, "pcap_path")?);
        let r = ins.daemon.inspect(path).map_err(|e| {
            let status = match e {
                InspectError::Model(_) => WsgStatus::Model,
                InspectError::Flow(FlowError::Io { .. }) => WsgStatus::Io,
                InspectError::Flow(_) => WsgStatus::Parse,
                _ => WsgStatus::Io,
            };
            Failure(status, e.to_string())
        })?;
        *result_json = to_c_string(serde_json::to_string(&r).map_err(fail(WsgStatus::Parse))?);
        Ok(())
    })
}

/// Releases an inspector. NULL is ignored.
///
/// # Safety
/// `inspector` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn wsg_inspector_free(inspector: *mut WsgInspector) {
    if !inspector.is_null() {
        drop(Box::from_raw(inspector));
    }
}
