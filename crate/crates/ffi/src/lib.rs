//! C interface to the ragcap index, datastore, prompt and metric code.
//!
//! Every fallible function returns a [`RagcapStatus`]; on failure the
//! message is available from [`ragcap_last_error`] on the same thread.
//! Handles are opaque and must be released with their `_free` function.
//! Strings returned to the caller are released with [`ragcap_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ragcap::datastore::Datastore;
use ragcap::error::Error;
use ragcap::evaluation::metrics;
use ragcap::model::{count_trainable_params, ModelConfig};
use ragcap::prompt::build_prompt;
use ragcap::tokenizer::eval_tokens;
use ragcap::vector_index::{load_index, save_index, train_ivf, AnyIndex, FlatIndex};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RagcapStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DataError = 3,
    NumericError = 4,
    InvalidUtf8 = 5,
    Panic = 6,
}

/// Nearest-neighbor index (flat or inverted-file).
pub struct RagcapIndex {
    inner: AnyIndex,
}

/// Caption datastore loaded from disk, with its tokenizer.
pub struct RagcapDatastore {
    inner: Datastore,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(RagcapStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.exit_code() {
            2 => RagcapStatus::InvalidArgument,
            4 => RagcapStatus::NumericError,
            _ => RagcapStatus::DataError,
        };
        Failure(status, e.to_string())
    }
}

type FfiResult<T> = Result<T, Failure>;

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> RagcapStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RagcapStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside ragcap".into());
            RagcapStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(RagcapStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(RagcapStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn str_array(p: *const *const c_char, n: usize, what: &str) -> FfiResult<Vec<String>> {
    slice_arg(p, n, what)?
        .iter()
        .map(|&s| str_arg(s, what).map(str::to_owned))
        .collect()
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

fn into_c_string(s: String) -> FfiResult<*mut c_char> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(RagcapStatus::DataError, "string contains a NUL byte".into()))
}

/// Message for the last failure on this thread, or NULL. Caller frees it
/// with [`ragcap_string_free`].
#[no_mangle]
pub extern "C" fn ragcap_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |c| c.clone().into_raw()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ragcap_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn rows<'a>(vectors: *const f64, n: usize, dim: usize) -> FfiResult<Vec<&'a [f64]>> {
    if dim == 0 {
        return Err(Failure(RagcapStatus::InvalidArgument, "dimension must be positive".into()));
    }
    let flat = slice_arg(vectors, n * dim, "vectors")?;
    Ok(flat.chunks(dim).collect())
}

unsafe fn ids_or_rows(ids: *const u64, n: usize) -> FfiResult<Vec<u64>> {
    if ids.is_null() {
        Ok((0..n as u64).collect())
    } else {
        Ok(slice_arg(ids, n, "ids")?.to_vec())
    }
}

/// Builds an exact index over `n` row-major vectors of width `dim`.
/// `ids` may be NULL, in which case row numbers are used.
///
/// # Safety
/// `vectors` must hold `n * dim` doubles, `ids` (if not NULL) `n` values,
/// and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ragcap_flat_index_build(
    dim: usize,
    n: usize,
    vectors: *const f64,
    ids: *const u64,
    out: *mut *mut RagcapIndex,
) -> RagcapStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let rows = rows(vectors, n, dim)?;
        let ids = ids_or_rows(ids, n)?;
        let index = FlatIndex::build(dim, ids.into_iter().zip(rows))?;
        *out = Box::into_raw(Box::new(RagcapIndex {
            inner: AnyIndex::Flat(index),
        }));
        Ok(())
    })
}

/// Trains an inverted-file index with `n_clusters` k-means cells.
///
/// # Safety
/// Same as [`ragcap_flat_index_build`].
#[no_mangle]
pub unsafe extern "C" fn ragcap_ivf_index_build(
    dim: usize,
    n: usize,
    vectors: *const f64,
    ids: *const u64,
    n_clusters: usize,
    seed: u64,
    iters: usize,
    out: *mut *mut RagcapIndex,
) -> RagcapStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let rows = rows(vectors, n, dim)?;
        let ids = ids_or_rows(ids, n)?;
        let index = train_ivf(ids.into_iter().zip(rows), n_clusters, seed, iters)?;
        *out = Box::into_raw(Box::new(RagcapIndex {
            inner: AnyIndex::Ivf(index),
        }));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ragcap_index_load(path: *const c_char, out: *mut *mut RagcapIndex) -> RagcapStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let inner = load_index(&PathBuf::from(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(RagcapIndex { inner }));
        Ok(())
    })
}

/// # Safety
/// `index` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ragcap_index_save(index: *const RagcapIndex, path: *const c_char) -> RagcapStatus {
    guard(|| {
        let index = index.as_ref().ok_or_else(|| null("index"))?;
        save_index(&index.inner, &PathBuf::from(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// Number of vectors in the index; 0 for NULL.
///
/// # Safety
/// `index` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ragcap_index_len(index: *const RagcapIndex) -> usize {
    index.as_ref().map_or(0, |i| i.inner.len())
}

/// Top-`k` search. `out_ids` and `out_scores` need room for `k` entries;
/// `out_len` receives the number written. `nprobe` is ignored by flat indexes.
///
/// # Safety
/// `query` must hold `dim` doubles and the output buffers must be writable.
#[no_mangle]
pub unsafe extern "C" fn ragcap_index_search(
    index: *const RagcapIndex,
    query: *const f64,
    dim: usize,
    k: usize,
    nprobe: usize,
    out_ids: *mut u64,
    out_scores: *mut f64,
    out_len: *mut usize,
) -> RagcapStatus {
    guard(|| {
        let index = index.as_ref().ok_or_else(|| null("index"))?;
        let query = slice_arg(query, dim, "query")?;
        let out_len = out_ref(out_len, "out_len")?;
        let hits = index.inner.search(query, k, nprobe)?;
        write_hits(hits.iter().map(|h| (h.id, h.score)), out_ids, out_scores, out_len)
    })
}

unsafe fn write_hits(
    hits: impl ExactSizeIterator<Item = (u64, f64)>,
    out_ids: *mut u64,
    out_scores: *mut f64,
    out_len: &mut usize,
) -> FfiResult<()> {
    let n = hits.len();
    if n > 0 && (out_ids.is_null() || out_scores.is_null()) {
        return Err(null("output buffer"));
    }
    for (i, (id, score)) in hits.enumerate() {
        *out_ids.add(i) = id;
        *out_scores.add(i) = score;
    }
    *out_len = n;
    Ok(())
}

/// # Safety
/// `index` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ragcap_index_free(index: *mut RagcapIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Loads a datastore directory written by `ragcap store build`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ragcap_datastore_load(dir: *const c_char, out: *mut *mut RagcapDatastore) -> RagcapStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let (inner, _) = Datastore::load(&PathBuf::from(str_arg(dir, "dir")?))?;
        *out = Box::into_raw(Box::new(RagcapDatastore { inner }));
        Ok(())
    })
}

/// # Safety
/// `store` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ragcap_datastore_len(store: *const RagcapDatastore) -> usize {
    store.as_ref().map_or(0, |s| s.inner.len())
}

/// Retrieves the `k` captions closest to an image embedding.
///
/// # Safety
/// As for [`ragcap_index_search`].
#[no_mangle]
pub unsafe extern "C" fn ragcap_datastore_retrieve(
    store: *const RagcapDatastore,
    embedding: *const f64,
    dim: usize,
    k: usize,
    out_ids: *mut u64,
    out_scores: *mut f64,
    out_len: *mut usize,
) -> RagcapStatus {
    guard(|| {
        let store = store.as_ref().ok_or_else(|| null("store"))?;
        let embedding = slice_arg(embedding, dim, "embedding")?;
        let out_len = out_ref(out_len, "out_len")?;
        let hits = store.inner.retrieve(embedding, k)?;
        write_hits(hits.iter().map(|(r, s)| (r.id, *s)), out_ids, out_scores, out_len)
    })
}

/// Caption text of record `id`; caller frees `*out`.
///
/// # Safety
/// `store` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ragcap_datastore_caption(
    store: *const RagcapDatastore,
    id: u64,
    out: *mut *mut c_char,
) -> RagcapStatus {
    guard(|| {
        let store = store.as_ref().ok_or_else(|| null("store"))?;
        let out = out_ref(out, "out")?;
        let record = store
            .inner
            .get(id)
            .ok_or_else(|| Failure(RagcapStatus::InvalidArgument, format!("no record with id {id}")))?;
        *out = into_c_string(record.text.clone())?;
        Ok(())
    })
}

/// # Safety
/// `store` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ragcap_datastore_free(store: *mut RagcapDatastore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Renders the retrieval prompt for `n` captions; caller frees `*out`.
///
/// # Safety
/// `captions` must hold `n` NUL-terminated strings and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn ragcap_build_prompt(
    captions: *const *const c_char,
    n: usize,
    out: *mut *mut c_char,
) -> RagcapStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let captions = str_array(captions, n, "captions")?;
        *out = into_c_string(build_prompt(&captions))?;
        Ok(())
    })
}

/// Trainable cross-attention parameter count.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ragcap_count_params(
    layers: usize,
    heads: usize,
    d_model: usize,
    d_encoder: usize,
    d: usize,
    out: *mut u64,
) -> RagcapStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let config = ModelConfig {
            d_encoder,
            ..ModelConfig::toy(layers, heads, d_model, d, 50257)
        };
        config.validate()?;
        *out = count_trainable_params(&config);
        Ok(())
    })
}

type Tokenized = Vec<Vec<String>>;

unsafe fn corpus(
    hyps: *const *const c_char,
    n: usize,
    refs: *const *const c_char,
    refs_per_example: usize,
) -> FfiResult<(Tokenized, Vec<Tokenized>)> {
    let hyps = str_array(hyps, n, "hyps")?;
    let refs = str_array(refs, n * refs_per_example, "refs")?;
    let hyps = hyps.iter().map(|h| eval_tokens(h)).collect();
    let refs = if refs_per_example == 0 {
        vec![Vec::new(); n]
    } else {
        refs.chunks(refs_per_example)
            .map(|c| c.iter().map(|r| eval_tokens(r)).collect())
            .collect()
    };
    Ok((hyps, refs))
}

/// Corpus BLEU-4. `refs` is row-major: `refs_per_example` references for
/// each of the `n` hypotheses.
///
/// # Safety
/// `hyps` must hold `n` strings, `refs` `n * refs_per_example`, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ragcap_bleu4(
    hyps: *const *const c_char,
    n: usize,
    refs: *const *const c_char,
    refs_per_example: usize,
    out: *mut f64,
) -> RagcapStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let (h, r) = corpus(hyps, n, refs, refs_per_example)?;
        *out = metrics::bleu4(&h, &r)?;
        Ok(())
    })
}

/// Corpus CIDEr, same layout as [`ragcap_bleu4`].
///
/// # Safety
/// As for [`ragcap_bleu4`].
#[no_mangle]
pub unsafe extern "C" fn ragcap_cider(
    hyps: *const *const c_char,
    n: usize,
    refs: *const *const c_char,
    refs_per_example: usize,
    out: *mut f64,
) -> RagcapStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let (h, r) = corpus(hyps, n, refs, refs_per_example)?;
        *out = metrics::cider(&h, &r)?;
        Ok(())
    })
}
