//! C ABI over `awekit`.
//!
//! Every fallible function returns an [`AwekitStatus`]. On failure the
//! message is available from [`awekit_last_error`] on the same thread until
//! the next failing call. Objects are opaque handles released with their
//! `_free` function; passing NULL to a `_free` function is a no-op.
//! Frame buffers are row-major `n_frames x dim` f32 arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use awekit::corpus::{load_corpus, normalize, Corpus, NormalizationMode, NormalizationScope};
use awekit::dtw;
use awekit::embed::{load_embedder, Embedder, Meanpool, Subsample, SubsampleConfig};
use awekit::kws::{self, KeywordTemplateSet, WindowConfig};
use awekit::metrics::{self, GroundTruth};
use awekit::nn::Matrix;
use awekit::{Error, ErrorFamily};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AwekitStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    MissingFile = 3,
    Io = 4,
    InvalidData = 5,
    Shape = 6,
    Numerical = 7,
    InsufficientData = 8,
    Checkpoint = 9,
    Config = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AwekitNormalization {
    None = 0,
    PerUtterance = 1,
    PerSpeaker = 2,
}

/// A loaded corpus of feature sequences.
pub struct AwekitCorpus(Corpus);

/// A fixed-size embedder: meanpool, subsample or a trained checkpoint.
pub struct AwekitEmbedder(Box<dyn Embedder>);

/// Result of a subsequence DTW search.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AwekitDtwMatch {
    pub cost: f64,
    /// First utterance frame of the matched region.
    pub start: usize,
    /// One past the last matched frame.
    pub end: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(AwekitStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.family() {
            ErrorFamily::MissingFile => AwekitStatus::MissingFile,
            ErrorFamily::Io => AwekitStatus::Io,
            ErrorFamily::InvalidData => AwekitStatus::InvalidData,
            ErrorFamily::Shape => AwekitStatus::Shape,
            ErrorFamily::Numerical => AwekitStatus::Numerical,
            ErrorFamily::InsufficientData => AwekitStatus::InsufficientData,
            ErrorFamily::Checkpoint => AwekitStatus::Checkpoint,
            ErrorFamily::Config => AwekitStatus::Config,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AwekitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AwekitStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            AwekitStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(AwekitStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Failure(AwekitStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn frames_arg(p: *const f32, n_frames: usize, dim: usize, what: &str) -> Result<Matrix<f32>, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let len = n_frames
        .checked_mul(dim)
        .ok_or_else(|| Failure(AwekitStatus::InvalidArgument, format!("{what}: size overflows")))?;
    let data = std::slice::from_raw_parts(p, len).to_vec();
    Ok(Matrix::from_vec(n_frames, dim, data)?)
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn awekit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL if none. The pointer
/// stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn awekit_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `manifest` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn awekit_corpus_load(manifest: *const c_char, out: *mut *mut AwekitCorpus) -> AwekitStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let corpus = load_corpus(&path_arg(manifest, "manifest")?)?;
        *out = Box::into_raw(Box::new(AwekitCorpus(corpus)));
        Ok(())
    })
}

/// Writes a normalized copy of `corpus` to `out`.
///
/// # Safety
/// `corpus` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn awekit_corpus_normalize(
    corpus: *const AwekitCorpus,
    mode: AwekitNormalization,
    out: *mut *mut AwekitCorpus,
) -> AwekitStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let c = handle(corpus, "corpus")?;
        let mode = match mode {
            AwekitNormalization::None => NormalizationMode::None,
            AwekitNormalization::PerUtterance => NormalizationMode::PerUtterance,
            AwekitNormalization::PerSpeaker => NormalizationMode::PerSpeaker,
        };
        let n = normalize(&c.0, NormalizationScope::new(mode))?;
        *out = Box::into_raw(Box::new(AwekitCorpus(n)));
        Ok(())
    })
}

/// Number of utterances; 0 for NULL.
///
/// # Safety
/// `corpus` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn awekit_corpus_len(corpus: *const AwekitCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.0.len())
}

/// Feature dimension; 0 for NULL or an empty corpus.
///
/// # Safety
/// `corpus` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn awekit_corpus_dim(corpus: *const AwekitCorpus) -> usize {
    corpus.as_ref().and_then(|c| c.0.dim()).unwrap_or(0)
}

/// # Safety
/// `corpus` must be NULL or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn awekit_corpus_free(corpus: *mut AwekitCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

fn boxed_embedder(out: *mut *mut AwekitEmbedder, e: Box<dyn Embedder>) -> Result<(), Failure> {
    let out = unsafe { out_arg(out, "out")? };
    *out = Box::into_raw(Box::new(AwekitEmbedder(e)));
    Ok(())
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn awekit_embedder_meanpool(out: *mut *mut AwekitEmbedder) -> AwekitStatus {
    guard(|| boxed_embedder(out, Box::new(Meanpool)))
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn awekit_embedder_subsample(k: usize, out: *mut *mut AwekitEmbedder) -> AwekitStatus {
    guard(|| {
        if k == 0 {
            return Err(Failure(AwekitStatus::InvalidArgument, "k must be positive".into()));
        }
        boxed_embedder(out, Box::new(Subsample { config: SubsampleConfig { k } }))
    })
}

/// Loads a trained checkpoint of either precision.
///
/// # Safety
/// `checkpoint` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn awekit_embedder_load(
    checkpoint: *const c_char,
    out: *mut *mut AwekitEmbedder,
) -> AwekitStatus {
    guard(|| {
        let e = load_embedder(&path_arg(checkpoint, "checkpoint")?)?;
        boxed_embedder(out, e)
    })
}

/// Embedding size for inputs of `input_dim` features; 0 for NULL.
///
/// # Safety
/// `embedder` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn awekit_embedder_output_dim(embedder: *const AwekitEmbedder, input_dim: usize) -> usize {
    embedder.as_ref().map_or(0, |e| e.0.output_dim(input_dim))
}

/// Embeds one frame matrix into `out`, which holds `out_len` floats. If the
/// buffer is too small nothing is written, `*written` receives the needed
/// size and the status is `BufferTooSmall`.
///
/// # Safety
/// `frames` must hold `n_frames * dim` floats and `out` `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn awekit_embed(
    embedder: *const AwekitEmbedder,
    frames: *const f32,
    n_frames: usize,
    dim: usize,
    out: *mut f32,
    out_len: usize,
    written: *mut usize,
) -> AwekitStatus {
    guard(|| {
        let e = handle(embedder, "embedder")?;
        let written = out_arg(written, "written")?;
        let v = e.0.embed_frames(&frames_arg(frames, n_frames, dim, "frames")?)?;
        *written = v.len();
        if v.len() > out_len {
            return Err(Failure(
                AwekitStatus::BufferTooSmall,
                format!("embedding needs {} floats, buffer holds {out_len}", v.len()),
            ));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        std::slice::from_raw_parts_mut(out, v.len()).copy_from_slice(&v);
        Ok(())
    })
}

/// # Safety
/// `embedder` must be NULL or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn awekit_embedder_free(embedder: *mut AwekitEmbedder) {
    if !embedder.is_null() {
        drop(Box::from_raw(embedder));
    }
}

/// Path-length-normalized DTW cost between two whole sequences.
///
/// # Safety
/// `a` and `b` must hold `n_a * dim` and `n_b * dim` floats.
#[no_mangle]
pub unsafe extern "C" fn awekit_dtw_cost(
    a: *const f32,
    n_a: usize,
    b: *const f32,
    n_b: usize,
    dim: usize,
    cost: *mut f64,
) -> AwekitStatus {
    guard(|| {
        let cost = out_arg(cost, "cost")?;
        let r = dtw::dtw_cost(&frames_arg(a, n_a, dim, "a")?, &frames_arg(b, n_b, dim, "b")?)?;
        *cost = r.cost;
        Ok(())
    })
}

/// Best match of `template` anywhere inside `utterance`.
///
/// # Safety
/// Buffers must hold `n * dim` floats; `result` must be valid.
#[no_mangle]
pub unsafe extern "C" fn awekit_dtw_search(
    template: *const f32,
    n_template: usize,
    utterance: *const f32,
    n_utterance: usize,
    dim: usize,
    result: *mut AwekitDtwMatch,
) -> AwekitStatus {
    guard(|| {
        let result = out_arg(result, "result")?;
        let r = dtw::dtw_search(
            &frames_arg(template, n_template, dim, "template")?,
            &frames_arg(utterance, n_utterance, dim, "utterance")?,
        )?;
        *result = AwekitDtwMatch {
            cost: r.cost,
            start: r.region.0,
            end: r.region.1,
        };
        Ok(())
    })
}

/// Average precision of a ranking given as relevance flags in rank order.
/// `n_relevant` counts all relevant items, including any not ranked.
///
/// # Safety
/// `relevant` must hold `n` bytes; `ap` must be valid.
#[no_mangle]
pub unsafe extern "C" fn awekit_average_precision(
    relevant: *const u8,
    n: usize,
    n_relevant: usize,
    ap: *mut f64,
) -> AwekitStatus {
    guard(|| {
        let ap = out_arg(ap, "ap")?;
        if relevant.is_null() && n > 0 {
            return Err(null("relevant"));
        }
        let flags = if n == 0 { &[][..] } else { std::slice::from_raw_parts(relevant, n) };
        let hits = flags.iter().filter(|&&f| f != 0).count();
        if hits > n_relevant {
            return Err(Failure(
                AwekitStatus::InvalidArgument,
                format!("{hits} relevant flags but n_relevant is {n_relevant}"),
            ));
        }
        let mut truth = GroundTruth::new();
        let detections = flags
            .iter()
            .enumerate()
            .map(|(i, &f)| {
                let id = format!("r{i:020}");
                if f != 0 {
                    truth.insert("k", id.clone());
                }
                kws::Detection {
                    keyword: "k".into(),
                    utterance_id: id,
                    score: -(i as f64),
                    best_window: (0, 0),
                    best_template: 0,
                }
            })
            .collect();
        for i in hits..n_relevant {
            truth.insert("k", format!("unranked{i}"));
        }
        *ap = metrics::average_precision(&kws::RankedDetections::new("k", detections), &truth)?;
        Ok(())
    })
}

/// Scores every keyword in `templates` against `search` with `embedder` and
/// default windows, writing detections as JSON lines to `out_path`. Corpora
/// are used as given; normalize them first if needed.
///
/// # Safety
/// Handles must come from this library; `out_path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn awekit_search(
    embedder: *const AwekitEmbedder,
    templates: *const AwekitCorpus,
    search: *const AwekitCorpus,
    out_path: *const c_char,
) -> AwekitStatus {
    guard(|| {
        let e = handle(embedder, "embedder")?;
        let t = handle(templates, "templates")?;
        let s = handle(search, "search")?;
        let out = path_arg(out_path, "out_path")?;
        let sets = KeywordTemplateSet::from_corpus(&t.0);
        if sets.is_empty() {
            return Err(Failure(AwekitStatus::InvalidData, "templates carry no word labels".into()));
        }
        let rankings = kws::search(&sets, &s.0, e.0.as_ref(), &WindowConfig::default())?;
        kws::write_detections(&out, &rankings)?;
        Ok(())
    })
}
