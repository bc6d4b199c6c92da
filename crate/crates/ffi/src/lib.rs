//! C ABI over `topicfuse`.
//!
//! Every fallible function returns a [`TfStatus`]; on failure the message is
//! available from [`tf_last_error`] on the same thread. Handles are opaque and
//! must be released with their matching `*_free` function. Strings returned to
//! the caller are released with [`tf_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use topicfuse::classify::{knn_classify, EmbeddingSet};
use topicfuse::corpus::parse_document;
use topicfuse::encoder::FusionModel;
use topicfuse::nnkit::Matrix;
use topicfuse::topics::{infer_doc_topics, TopicModel};
use topicfuse::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    InvalidArgument = 5,
    Shape = 6,
    ModelFormat = 7,
    Unlabeled = 8,
    Panic = 9,
}

/// A trained fusion model.
pub struct TfModel(FusionModel);

/// A trained LDA topic model.
pub struct TfTopics(TopicModel);

/// Labelled exemplar embeddings for nearest-neighbour classification.
pub struct TfIndex {
    dim: usize,
    ids: Vec<String>,
    labels: Vec<String>,
    data: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(TfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => TfStatus::Io,
            Error::Parse { .. } | Error::Json(_) => TfStatus::Parse,
            Error::Shape(_) | Error::TokenOutOfRange { .. } => TfStatus::Shape,
            Error::ModelFormat(_) => TfStatus::ModelFormat,
            Error::Unlabeled(_) => TfStatus::Unlabeled,
            _ => TfStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            TfStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TfStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(TfStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        Failure(
            TfStatus::InvalidUtf8,
            format!("`{what}` is not valid UTF-8"),
        )
    })
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, needed: usize) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(null("out"));
    }
    if len != needed {
        return Err(Failure(
            TfStatus::Shape,
            format!("output buffer holds {len} values, expected {needed}"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn in_slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message for the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn tf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn tf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tf_model_load(path: *const c_char, out: *mut *mut TfModel) -> TfStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let model = FusionModel::load(path)?;
        *out = Box::into_raw(Box::new(TfModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle from [`tf_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tf_model_free(model: *mut TfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Embedding width, or 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tf_model_embed_dim(model: *const TfModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.embed_dim())
}

/// Embeds one document given as a corpus JSON line (`id`, `text`,
/// `metadata`) into `out`, which must hold exactly `out_len ==
/// tf_model_embed_dim(model)` values.
///
/// # Safety
/// Pointers must be valid; `out` must point to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn tf_model_embed_json(
    model: *const TfModel,
    document_json: *const c_char,
    out: *mut f64,
    out_len: usize,
) -> TfStatus {
    guard(|| {
        let model = &ref_arg(model, "model")?.0;
        let json = str_arg(document_json, "document_json")?;
        let out = out_slice(out, out_len, model.embed_dim())?;
        let doc = parse_document(json, &model.schema, &model.vocabulary)?;
        out.copy_from_slice(&model.embed(&doc)?);
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tf_topics_load(path: *const c_char, out: *mut *mut TfTopics) -> TfStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let model = TopicModel::load(path)?;
        *out = Box::into_raw(Box::new(TfTopics(model)));
        Ok(())
    })
}

/// # Safety
/// `topics` must be NULL or a handle from [`tf_topics_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tf_topics_free(topics: *mut TfTopics) {
    if !topics.is_null() {
        drop(Box::from_raw(topics));
    }
}

/// Number of topics, or 0 for a NULL handle.
///
/// # Safety
/// `topics` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tf_topics_num_topics(topics: *const TfTopics) -> usize {
    topics.as_ref().map_or(0, |t| t.0.num_topics())
}

/// Fold-in topic distribution of one document. The text is tokenized with
/// the vocabulary of `model`, which must be the one the topic model was
/// trained on. `out` receives `tf_topics_num_topics(topics)` values.
///
/// # Safety
/// Pointers must be valid; `out` must point to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn tf_topics_infer_json(
    topics: *const TfTopics,
    model: *const TfModel,
    document_json: *const c_char,
    fold_in_iterations: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> TfStatus {
    guard(|| {
        let topics = &ref_arg(topics, "topics")?.0;
        let model = &ref_arg(model, "model")?.0;
        let json = str_arg(document_json, "document_json")?;
        let out = out_slice(out, out_len, topics.num_topics())?;
        let doc = parse_document(json, &model.schema, &model.vocabulary)?;
        let dist = infer_doc_topics(topics, &doc.tokens, fold_in_iterations, seed)?;
        out.copy_from_slice(dist.as_slice());
        Ok(())
    })
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tf_index_new(dim: usize, out: *mut *mut TfIndex) -> TfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if dim == 0 {
            return Err(Failure(
                TfStatus::InvalidArgument,
                "dimension must be positive".into(),
            ));
        }
        *out = Box::into_raw(Box::new(TfIndex {
            dim,
            ids: Vec::new(),
            labels: Vec::new(),
            data: Vec::new(),
        }));
        Ok(())
    })
}

/// # Safety
/// `index` must be NULL or a handle from [`tf_index_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tf_index_free(index: *mut TfIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// # Safety
/// `index` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tf_index_len(index: *const TfIndex) -> usize {
    index.as_ref().map_or(0, |i| i.ids.len())
}

/// Adds one labelled exemplar of width `dim`.
///
/// # Safety
/// Pointers must be valid; `embedding` must point to `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn tf_index_add(
    index: *mut TfIndex,
    id: *const c_char,
    label: *const c_char,
    embedding: *const f64,
    dim: usize,
) -> TfStatus {
    guard(|| {
        let index = index.as_mut().ok_or_else(|| null("index"))?;
        let id = str_arg(id, "id")?;
        let label = str_arg(label, "label")?;
        if dim != index.dim {
            return Err(Failure(
                TfStatus::Shape,
                format!("embedding has {dim} values, index expects {}", index.dim),
            ));
        }
        let v = in_slice(embedding, dim, "embedding")?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Failure(
                TfStatus::InvalidArgument,
                "embedding is not finite".into(),
            ));
        }
        index.ids.push(id.to_string());
        index.labels.push(label.to_string());
        index.data.extend_from_slice(v);
        Ok(())
    })
}

/// KNN label for `query`. `query_id` may be NULL; when it names an exemplar,
/// that exemplar is not its own neighbour. The label is written to
/// `*out_label` and must be released with [`tf_string_free`].
///
/// # Safety
/// Pointers must be valid; `query` must point to `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn tf_index_classify(
    index: *const TfIndex,
    query_id: *const c_char,
    query: *const f64,
    dim: usize,
    k: usize,
    out_label: *mut *mut c_char,
) -> TfStatus {
    guard(|| {
        let index = ref_arg(index, "index")?;
        let query_id = if query_id.is_null() {
            ""
        } else {
            str_arg(query_id, "query_id")?
        };
        if out_label.is_null() {
            return Err(null("out_label"));
        }
        if dim != index.dim {
            return Err(Failure(
                TfStatus::Shape,
                format!("query has {dim} values, index expects {}", index.dim),
            ));
        }
        let q = in_slice(query, dim, "query")?;
        let set = EmbeddingSet::new(
            index.ids.clone(),
            Matrix::from_vec(index.ids.len(), index.dim, index.data.clone())?,
            index.labels.iter().cloned().map(Some).collect(),
        )?;
        let prediction = knn_classify(query_id, q, &set, k)?;
        let label = CString::new(prediction.label)
            .map_err(|_| Failure(TfStatus::InvalidArgument, "label contains NUL".into()))?;
        *out_label = label.into_raw();
        Ok(())
    })
}
