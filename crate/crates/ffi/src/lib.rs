//! C interface to the s2f extractor.
//!
//! Every fallible function returns an [`S2fStatus`]; on failure the message
//! is available from [`s2f_last_error_message`] on the same thread. Strings
//! handed out by the library must be released with [`s2f_string_free`] and
//! models with [`s2f_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use s2f::checkpoint::{load_checkpoint, CheckpointError};
use s2f::corpus::{generate_synthetic, parse_jsonl, write_jsonl, AnnotatedSentence, SynthConfig};
use s2f::decoder::DecodeConfig;
use s2f::encoder::EncoderInput;
use s2f::model::Model;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum S2fStatus {
    Ok = 0,
    NullArg = 1,
    Utf8 = 2,
    Io = 3,
    Checkpoint = 4,
    Parse = 5,
    Config = 6,
    Panic = 7,
}

/// A loaded model and the decoding settings stored with it.
pub struct S2fModel {
    model: Model,
    decode: DecodeConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(S2fStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> S2fStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => S2fStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            S2fStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(S2fStatus::NullArg, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(S2fStatus::Utf8, format!("{name}: {e}")))
}

fn out_arg<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(S2fStatus::NullArg, format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn into_c_string(text: String) -> Result<*mut c_char, Failure> {
    CString::new(text)
        .map(CString::into_raw)
        .map_err(|_| Failure(S2fStatus::Parse, "output contains a nul byte".into()))
}

fn to_jsonl(sentences: &[AnnotatedSentence]) -> String {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, sentences).expect("writing to memory");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

/// Loads a checkpoint. On success `*out` owns a new model.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn s2f_model_load(path: *const c_char, out: *mut *mut S2fModel) -> S2fStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let ckpt = load_checkpoint(Path::new(path)).map_err(|e| {
            let status = match e {
                CheckpointError::Io { .. } => S2fStatus::Io,
                _ => S2fStatus::Checkpoint,
            };
            Failure(status, e.to_string())
        })?;
        let decode = ckpt
            .train
            .as_ref()
            .map(|t| t.decode_config())
            .unwrap_or_else(DecodeConfig::discontinuous);
        *out = Box::into_raw(Box::new(S2fModel {
            model: ckpt.model,
            decode,
        }));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from [`s2f_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn s2f_model_free(model: *mut S2fModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of entity types the model predicts, or 0 for null.
///
/// # Safety
/// `model` must be null or a live model.
#[no_mangle]
pub unsafe extern "C" fn s2f_model_num_types(model: *const S2fModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.types().len())
}

/// Runs the model over JSON-lines input (`{"tokens": [...]}` per line; any
/// `entities` are ignored) and writes the same records with predicted
/// entities to `*out`. A `threshold` outside `[0, 1)` keeps the stored one.
///
/// # Safety
/// `model` must be a live model, `input` a nul-terminated string and `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn s2f_predict_json(
    model: *const S2fModel,
    input: *const c_char,
    threshold: f64,
    out: *mut *mut c_char,
) -> S2fStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = model
            .as_ref()
            .ok_or_else(|| Failure(S2fStatus::NullArg, "model is null".into()))?;
        let text = str_arg(input, "input")?;
        let sentences =
            parse_jsonl(text.as_bytes()).map_err(|e| Failure(S2fStatus::Parse, e.to_string()))?;
        let mut decode = m.decode;
        if (0.0..1.0).contains(&threshold) {
            decode.threshold = threshold;
        }
        let inputs: Vec<EncoderInput<'_>> =
            sentences.iter().map(|s| EncoderInput::tokens(&s.tokens)).collect();
        let preds = m
            .model
            .predict(&inputs, &decode, 20)
            .map_err(|e| Failure(S2fStatus::Config, e.to_string()))?;
        let records: Vec<AnnotatedSentence> = sentences
            .iter()
            .zip(preds)
            .map(|(s, p)| s.with_entities(p.entities).expect("decoded entities lie inside their sentence"))
            .collect();
        *out = into_c_string(to_jsonl(&records))?;
        Ok(())
    })
}

/// Generates a synthetic corpus of `sentences` records as JSON lines with
/// the default generator settings.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn s2f_synth_jsonl(seed: u64, sentences: usize, out: *mut *mut c_char) -> S2fStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = SynthConfig {
            sentences,
            ..SynthConfig::default()
        };
        let corpus =
            generate_synthetic(&cfg, seed).map_err(|e| Failure(S2fStatus::Config, e.to_string()))?;
        *out = into_c_string(to_jsonl(&corpus.sentences))?;
        Ok(())
    })
}

/// Releases a string returned by this library; null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn s2f_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the last failure on this thread, or null. The pointer stays
/// valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn s2f_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}
