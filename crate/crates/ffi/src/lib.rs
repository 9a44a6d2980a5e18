//! C ABI over `ctxwsd`: load an encoder and a trained head, extract
//! target-word features and predict senses.
//!
//! Conventions:
//! * Every fallible call returns a [`CtxwsdStatus`]; on failure a message is
//!   available from [`ctxwsd_last_error_message`] on the same thread.
//! * Handles are opaque and owned by the caller once returned; release them
//!   with the matching `*_free` function. Freeing `NULL` is a no-op.
//! * Strings are NUL-terminated UTF-8. Output buffers are caller-allocated.
//! * Panics never cross the boundary; they surface as `CTXWSD_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ctxwsd::corpus::{Lexelt, SenseInventory};
use ctxwsd::encoder::{build_context_from_parts, encode, ContextMode, EncoderWeights, Tokenizer, Vocab};
use ctxwsd::heads::{predict_with_backoff, Answer, HeadModel};
use ctxwsd::tensor::Tensor;
use ctxwsd::trainer::Checkpoint;
use ctxwsd::Error;

/// Result of a C API call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CtxwsdStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// Unreadable file, malformed input or invalid argument.
    InputError = 2,
    /// NaN or infinity in inputs, weights or intermediate values.
    NonFinite = 3,
    /// Shapes or configurations that do not fit together.
    ConfigMismatch = 4,
    /// The head has no parameters for the lexelt and no backoff sense.
    UnseenLexelt = 5,
    /// The output buffer is too small; the needed size was reported.
    BufferTooSmall = 6,
    Panic = 7,
}

/// How much surrounding text the encoder sees.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CtxwsdContext {
    OneSent = 0,
    OneSentOneSur = 1,
}

impl From<CtxwsdContext> for ContextMode {
    fn from(c: CtxwsdContext) -> Self {
        match c {
            CtxwsdContext::OneSent => ContextMode::OneSent,
            CtxwsdContext::OneSentOneSur => ContextMode::OneSentOneSur,
        }
    }
}

/// Encoder weights plus the tokenizer for its vocabulary.
pub struct CtxwsdEncoder {
    weights: EncoderWeights,
    tokenizer: Tokenizer,
}

/// A trained head with the sense inventory it was trained against.
pub struct CtxwsdHead {
    model: HeadModel,
    inventory: SenseInventory,
    variant: CString,
}

enum Failure {
    Core(Error),
    Null(&'static str),
    Input(String),
    Unseen(String),
    Buffer { needed: usize },
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn status(&self) -> CtxwsdStatus {
        match self {
            Failure::Core(Error::NonFinite(_)) => CtxwsdStatus::NonFinite,
            Failure::Core(Error::ConfigMismatch(_) | Error::Shape(_)) => CtxwsdStatus::ConfigMismatch,
            Failure::Core(Error::UnseenLexelt(_)) | Failure::Unseen(_) => CtxwsdStatus::UnseenLexelt,
            Failure::Core(_) | Failure::Input(_) => CtxwsdStatus::InputError,
            Failure::Null(_) => CtxwsdStatus::NullArgument,
            Failure::Buffer { .. } => CtxwsdStatus::BufferTooSmall,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Core(e) => e.to_string(),
            Failure::Null(what) => format!("`{what}` must not be NULL"),
            Failure::Input(m) => m.clone(),
            Failure::Unseen(lx) => format!("no prediction for unseen lexelt `{lx}`"),
            Failure::Buffer { needed } => format!("output buffer too small; {needed} elements needed"),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CtxwsdStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CtxwsdStatus::Ok,
        Ok(Err(failure)) => {
            set_last_error(failure.message());
            failure.status()
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            CtxwsdStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Input(format!("`{what}` is not valid UTF-8")))
}

/// `n` strings, or `None` for a NULL array of length 0.
unsafe fn str_array(p: *const *const c_char, n: usize, what: &'static str) -> Result<Option<Vec<String>>, Failure> {
    if p.is_null() {
        return if n == 0 { Ok(None) } else { Err(Failure::Null(what)) };
    }
    (0..n)
        .map(|i| str_arg(*p.add(i), what).map(str::to_string))
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

/// Message for the last failed call on this thread, or NULL. The pointer is
/// valid until the next API call on the same thread.
#[no_mangle]
pub extern "C" fn ctxwsd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ctxwsd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads NTS1 encoder weights and a one-piece-per-line vocabulary.
///
/// # Safety
/// Path arguments must be NUL-terminated strings; `out_encoder` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ctxwsd_encoder_load(
    weights_path: *const c_char,
    vocab_path: *const c_char,
    lowercase: bool,
    out_encoder: *mut *mut CtxwsdEncoder,
) -> CtxwsdStatus {
    guard(|| {
        if out_encoder.is_null() {
            return Err(Failure::Null("out_encoder"));
        }
        *out_encoder = ptr::null_mut();
        let weights = EncoderWeights::load(str_arg(weights_path, "weights_path")?)?;
        let vocab = Vocab::load(str_arg(vocab_path, "vocab_path")?)?;
        if vocab.len() != weights.config.vocab_size {
            return Err(Failure::Core(Error::ConfigMismatch(format!(
                "vocabulary has {} pieces, encoder expects {}",
                vocab.len(),
                weights.config.vocab_size
            ))));
        }
        let enc = CtxwsdEncoder {
            weights,
            tokenizer: Tokenizer::new(vocab, lowercase),
        };
        *out_encoder = Box::into_raw(Box::new(enc));
        Ok(())
    })
}

/// # Safety
/// `encoder` must come from [`ctxwsd_encoder_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ctxwsd_encoder_free(encoder: *mut CtxwsdEncoder) {
    if !encoder.is_null() {
        drop(Box::from_raw(encoder));
    }
}

/// Number of encoder layers `L`, or 0 for NULL.
///
/// # Safety
/// `encoder` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctxwsd_encoder_layers(encoder: *const CtxwsdEncoder) -> usize {
    encoder.as_ref().map_or(0, |e| e.weights.config.layers)
}

/// Hidden width `d_model`, or 0 for NULL.
///
/// # Safety
/// `encoder` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctxwsd_encoder_d_model(encoder: *const CtxwsdEncoder) -> usize {
    encoder.as_ref().map_or(0, |e| e.weights.config.d_model)
}

/// Encodes one sentence and writes the `L × d_model` layer vectors of word
/// `target_index` to `out` in row-major order. `left` and `right` are the
/// neighbor sentences and may be NULL with a zero count.
///
/// # Safety
/// Word arrays must hold the stated number of valid strings; `out` must have
/// room for `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn ctxwsd_encoder_features(
    encoder: *const CtxwsdEncoder,
    words: *const *const c_char,
    n_words: usize,
    target_index: usize,
    left: *const *const c_char,
    n_left: usize,
    right: *const *const c_char,
    n_right: usize,
    context: CtxwsdContext,
    out: *mut f32,
    out_len: usize,
) -> CtxwsdStatus {
    guard(|| {
        let enc = encoder.as_ref().ok_or(Failure::Null("encoder"))?;
        let words = str_array(words, n_words, "words")?.ok_or(Failure::Input("empty sentence".into()))?;
        let left = str_array(left, n_left, "left")?;
        let right = str_array(right, n_right, "right")?;
        let needed = enc.weights.config.layers * enc.weights.config.d_model;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        if out_len < needed {
            return Err(Failure::Buffer { needed });
        }
        let input = build_context_from_parts(
            &words,
            target_index,
            left.as_deref(),
            right.as_deref(),
            context.into(),
            &enc.tokenizer,
            enc.weights.config.max_positions,
        )?;
        let feats = encode(&input, &enc.weights)?.position(target_index)?;
        std::slice::from_raw_parts_mut(out, needed).copy_from_slice(feats.data());
        Ok(())
    })
}

/// Loads a head checkpoint written by `ctxwsd train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_head` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctxwsd_head_load(path: *const c_char, out_head: *mut *mut CtxwsdHead) -> CtxwsdStatus {
    guard(|| {
        if out_head.is_null() {
            return Err(Failure::Null("out_head"));
        }
        *out_head = ptr::null_mut();
        let ckpt = Checkpoint::load(str_arg(path, "path")?, None)?;
        let variant = CString::new(ckpt.model.variant().to_string()).expect("variant names have no NUL");
        *out_head = Box::into_raw(Box::new(CtxwsdHead {
            model: ckpt.model,
            inventory: ckpt.inventory,
            variant,
        }));
        Ok(())
    })
}

/// # Safety
/// `head` must come from [`ctxwsd_head_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ctxwsd_head_free(head: *mut CtxwsdHead) {
    if !head.is_null() {
        drop(Box::from_raw(head));
    }
}

/// Variant name (`1nn`, `simple`, `lw`, `glu`, `glu-lw`), or NULL. Valid
/// while the handle lives.
///
/// # Safety
/// `head` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctxwsd_head_variant(head: *const CtxwsdHead) -> *const c_char {
    head.as_ref().map_or(ptr::null(), |h| h.variant.as_ptr())
}

/// Predicts the sense of a target word from its `n_layers × d_model`
/// features. Lexelts unknown to the head back off to their most frequent
/// training sense. The sense id is written NUL-terminated into `out_sense`;
/// `out_len` receives the byte length including the terminator, also when
/// the buffer is too small.
///
/// # Safety
/// `features` must hold `n_layers * d_model` floats; `lemma` must be a
/// NUL-terminated string and `pos` NULL or one; `out_sense` must have room
/// for `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn ctxwsd_head_predict(
    head: *const CtxwsdHead,
    features: *const f32,
    n_layers: usize,
    d_model: usize,
    lemma: *const c_char,
    pos: *const c_char,
    out_sense: *mut c_char,
    capacity: usize,
    out_len: *mut usize,
) -> CtxwsdStatus {
    guard(|| {
        let h = head.as_ref().ok_or(Failure::Null("head"))?;
        if features.is_null() {
            return Err(Failure::Null("features"));
        }
        if out_len.is_null() {
            return Err(Failure::Null("out_len"));
        }
        let lemma = str_arg(lemma, "lemma")?;
        let pos = if pos.is_null() { None } else { Some(str_arg(pos, "pos")?) };
        let data = std::slice::from_raw_parts(features, n_layers * d_model).to_vec();
        let feats = Tensor::new(vec![n_layers, d_model], data)?;
        let lexelt = Lexelt::new(lemma, pos);
        let sense = match predict_with_backoff(&feats, &h.model, &h.inventory, &lexelt)? {
            Answer::Sense(s) => s,
            Answer::Abstain => return Err(Failure::Unseen(lexelt.to_string())),
        };
        let bytes = sense.as_bytes();
        *out_len = bytes.len() + 1;
        if out_sense.is_null() || capacity < bytes.len() + 1 {
            return Err(Failure::Buffer { needed: bytes.len() + 1 });
        }
        ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), out_sense, bytes.len());
        *out_sense.add(bytes.len()) = 0;
        Ok(())
    })
}
