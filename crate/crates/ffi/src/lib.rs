//! C ABI over clipmil.
//!
//! Every fallible call returns a [`ClipmilStatus`]; on failure the message is
//! kept per thread and read with [`clipmil_last_error`]. Models and bag sets
//! are opaque handles released with their `_free` function. Strings returned
//! to the caller are released with [`clipmil_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use clipmil::eval::{fleiss_kappa, productivity_theoretic, AgreementTable, EvalError, ProductivityParams};
use clipmil::features::{audio_stats, AudioParams};
use clipmil::mil::{self, MilConfig, MilError, MilModel};
use clipmil::model::{Bag, FeatureVector, Label, PrincipalShot};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipmilStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Training = 5,
    Degenerate = 6,
    Panic = 7,
}

/// Label value for a bag without a label.
pub const CLIPMIL_UNLABELED: c_int = -1;

/// Summary statistics of a mono waveform.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ClipmilAudioStats {
    pub silence_fraction: f64,
    pub pitch_mean_hz: f64,
    pub pitch_std_hz: f64,
    pub voiced_fraction: f64,
    pub turns_per_minute: f64,
}

/// A trained model.
pub struct ClipmilModel(MilModel);

/// A growable set of bags used for training.
pub struct ClipmilBags(Vec<Bag>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Fail(ClipmilStatus, String);

impl Fail {
    fn new(status: ClipmilStatus, msg: impl std::fmt::Display) -> Self {
        Fail(status, msg.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail::new(ClipmilStatus::NullPointer, format!("{what} is null"))
}

fn from_mil(e: MilError) -> Fail {
    let status = match e {
        MilError::BadConfig(_) | MilError::DimensionMismatch { .. } | MilError::EmptyBag(_) => {
            ClipmilStatus::InvalidArgument
        }
        _ => ClipmilStatus::Training,
    };
    Fail::new(status, e)
}

fn from_eval(e: EvalError) -> Fail {
    let status = match e {
        EvalError::DegenerateExpectedAgreement => ClipmilStatus::Degenerate,
        _ => ClipmilStatus::InvalidArgument,
    };
    Fail::new(status, e)
}

/// Runs `f`, records any failure and converts panics into `Panic`.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ClipmilStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            ClipmilStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ClipmilStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::new(ClipmilStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Row-major `n_instances × dim` matrix as one bag.
unsafe fn bag_from_raw(clip_id: &str, instances: *const f64, n_instances: usize, dim: usize) -> Result<Bag, Fail> {
    if n_instances == 0 || dim == 0 {
        return Err(Fail::new(ClipmilStatus::InvalidArgument, "a bag needs at least one instance of nonzero dimension"));
    }
    let len = n_instances.checked_mul(dim).ok_or_else(|| Fail::new(ClipmilStatus::InvalidArgument, "size overflow"))?;
    let data = slice_arg(instances, len, "instances")?;
    let shots = data
        .chunks_exact(dim)
        .enumerate()
        .map(|(i, row)| {
            let aggregate = FeatureVector::new(row.to_vec()).map_err(|e| Fail::new(ClipmilStatus::InvalidArgument, e))?;
            Ok(PrincipalShot { clip_id: clip_id.to_string(), shot_id: i, member_indices: Vec::new(), aggregate })
        })
        .collect::<Result<Vec<_>, Fail>>()?;
    Ok(Bag { clip_id: clip_id.to_string(), instances: shots, label: None, media_ref: None })
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length excluding the NUL,
/// or 0 when the last call succeeded.
#[no_mangle]
pub unsafe extern "C" fn clipmil_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn clipmil_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Fleiss' kappa of a row-major `items × categories` count table.
#[no_mangle]
pub unsafe extern "C" fn clipmil_fleiss_kappa(
    counts: *const u64,
    items: usize,
    categories: usize,
    out: *mut f64,
) -> ClipmilStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if items == 0 || categories == 0 {
            return Err(Fail::new(ClipmilStatus::InvalidArgument, "empty table"));
        }
        let len = items.checked_mul(categories).ok_or_else(|| Fail::new(ClipmilStatus::InvalidArgument, "size overflow"))?;
        let data = slice_arg(counts, len, "counts")?;
        let table = AgreementTable::new(data.chunks_exact(categories).map(<[u64]>::to_vec).collect()).map_err(from_eval)?;
        *out = fleiss_kappa(&table).map_err(from_eval)?;
        Ok(())
    })
}

/// Expected positives among `k` viewed clips, at random and in model order.
#[no_mangle]
pub unsafe extern "C" fn clipmil_productivity(
    f: f64,
    t: f64,
    n: f64,
    k: f64,
    expected_random: *mut f64,
    expected_filtered: *mut f64,
) -> ClipmilStatus {
    guard(|| {
        let random = out_arg(expected_random, "expected_random")?;
        let filtered = out_arg(expected_filtered, "expected_filtered")?;
        let p = ProductivityParams::new(f, t, n, k).map_err(from_eval)?;
        let r = productivity_theoretic(&p).map_err(from_eval)?;
        *random = r.expected_random;
        *filtered = r.expected_filtered;
        Ok(())
    })
}

/// Audio statistics of `len` mono samples in [-1, 1] with default parameters.
#[no_mangle]
pub unsafe extern "C" fn clipmil_audio_stats(
    samples: *const f64,
    len: usize,
    sample_rate: u32,
    out: *mut ClipmilAudioStats,
) -> ClipmilStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let x = slice_arg(samples, len, "samples")?;
        let s = audio_stats(x, sample_rate, &AudioParams::default())
            .ok_or_else(|| Fail::new(ClipmilStatus::InvalidArgument, "need samples and a nonzero sample rate"))?;
        *out = ClipmilAudioStats {
            silence_fraction: s.silence_fraction,
            pitch_mean_hz: s.pitch_mean_hz,
            pitch_std_hz: s.pitch_std_hz,
            voiced_fraction: s.voiced_fraction,
            turns_per_minute: s.turns_per_minute,
        };
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn clipmil_bags_new() -> *mut ClipmilBags {
    Box::into_raw(Box::new(ClipmilBags(Vec::new())))
}

#[no_mangle]
pub unsafe extern "C" fn clipmil_bags_free(bags: *mut ClipmilBags) {
    if !bags.is_null() {
        drop(Box::from_raw(bags));
    }
}

#[no_mangle]
pub unsafe extern "C" fn clipmil_bags_len(bags: *const ClipmilBags) -> usize {
    bags.as_ref().map_or(0, |b| b.0.len())
}

/// Appends a bag of `n_instances` row-major instances. `label` is 1, 0 or
/// `CLIPMIL_UNLABELED`.
#[no_mangle]
pub unsafe extern "C" fn clipmil_bags_push(
    bags: *mut ClipmilBags,
    clip_id: *const c_char,
    instances: *const f64,
    n_instances: usize,
    dim: usize,
    label: c_int,
) -> ClipmilStatus {
    guard(|| {
        let bags = out_arg(bags, "bags")?;
        let id = str_arg(clip_id, "clip_id")?;
        let mut bag = bag_from_raw(id, instances, n_instances, dim)?;
        bag.label = match label {
            1 => Some(Label::Positive),
            0 => Some(Label::Negative),
            CLIPMIL_UNLABELED => None,
            other => return Err(Fail::new(ClipmilStatus::InvalidArgument, format!("bad label {other}"))),
        };
        if let Some(first) = bags.0.first() {
            if first.dim() != dim {
                return Err(Fail::new(
                    ClipmilStatus::InvalidArgument,
                    format!("dimension {dim} differs from earlier bags ({})", first.dim()),
                ));
            }
        }
        bags.0.push(bag);
        Ok(())
    })
}

/// Trains on the labeled bags. `config_json` is a learner configuration
/// object or null for defaults.
#[no_mangle]
pub unsafe extern "C" fn clipmil_train(
    bags: *const ClipmilBags,
    config_json: *const c_char,
    out: *mut *mut ClipmilModel,
) -> ClipmilStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let bags = bags.as_ref().ok_or_else(|| null("bags"))?;
        let cfg: MilConfig = if config_json.is_null() {
            MilConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?).map_err(|e| Fail::new(ClipmilStatus::Parse, e))?
        };
        let model = mil::train(&bags.0, &cfg).map_err(from_mil)?;
        *out = Box::into_raw(Box::new(ClipmilModel(model)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn clipmil_model_from_json(json: *const c_char, out: *mut *mut ClipmilModel) -> ClipmilStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let model = MilModel::from_json(str_arg(json, "json")?).map_err(|e| Fail::new(ClipmilStatus::Parse, e))?;
        *out = Box::into_raw(Box::new(ClipmilModel(model)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn clipmil_model_load(path: *const c_char, out: *mut *mut ClipmilModel) -> ClipmilStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let text = std::fs::read_to_string(path).map_err(|e| Fail::new(ClipmilStatus::Io, format!("{path}: {e}")))?;
        let model = MilModel::from_json(&text).map_err(|e| Fail::new(ClipmilStatus::Parse, e))?;
        *out = Box::into_raw(Box::new(ClipmilModel(model)));
        Ok(())
    })
}

/// Serializes a model; free the result with `clipmil_string_free`.
#[no_mangle]
pub unsafe extern "C" fn clipmil_model_to_json(model: *const ClipmilModel, out: *mut *mut c_char) -> ClipmilStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let s = CString::new(model.0.to_json()).map_err(|e| Fail::new(ClipmilStatus::Panic, e))?;
        *out = s.into_raw();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn clipmil_model_free(model: *mut ClipmilModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Instance dimension the model expects, or 0 for a null model.
#[no_mangle]
pub unsafe extern "C" fn clipmil_model_dim(model: *const ClipmilModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.dim())
}

/// Scores one bag of row-major instances and reports the predicted label (1 or 0).
#[no_mangle]
pub unsafe extern "C" fn clipmil_model_score(
    model: *const ClipmilModel,
    instances: *const f64,
    n_instances: usize,
    dim: usize,
    score: *mut f64,
    positive: *mut c_int,
) -> ClipmilStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let score = out_arg(score, "score")?;
        let bag = bag_from_raw("bag", instances, n_instances, dim)?;
        let (label, s) = mil::predict_bag(&model.0, &bag).map_err(from_mil)?;
        *score = s;
        if !positive.is_null() {
            *positive = label.is_positive() as c_int;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn clipmil_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
