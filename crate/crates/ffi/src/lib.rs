//! C ABI for cinesynth.
//!
//! Every call returns a [`CsStatus`]. On failure the message is available from
//! [`cs_last_error`] on the same thread until the next call. Strings handed out
//! by the library are owned by the caller and released with [`cs_string_free`];
//! handles have their own `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cinesynth::catalog::read_catalog;
use cinesynth::evaluation::{extract_json_lenient, macro_f1, LenientJsonOptions};
use cinesynth::grammar::{expand_all, expansion_cardinality, parse_template, SlotDomain, SlotRegistry, TemplateAst};
use cinesynth::promptkit::build_intent_record;
use cinesynth::retrieval::{index_catalog, rank, CatalogIndex, HashedEmbedder};
use cinesynth::{EntityMap, Intent};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not UTF-8.
    InvalidUtf8 = 2,
    /// The input was well-formed C but rejected by the library.
    InvalidInput = 3,
    /// File could not be read or written.
    Io = 4,
    /// Internal bug; the library caught a panic.
    Panic = 5,
}

/// Parsed template together with the slot domains registered on it.
pub struct CsTemplate {
    ast: TemplateAst,
    registry: SlotRegistry,
}

/// Embedded catalog, queried with the hashed embedder it was built with.
pub struct CsIndex {
    index: CatalogIndex,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Fail(CsStatus, String);

impl Fail {
    fn input(e: impl std::fmt::Display) -> Self {
        Fail(CsStatus::InvalidInput, e.to_string())
    }

    fn io(e: impl std::fmt::Display) -> Self {
        Fail(CsStatus::Io, e.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CsStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal error");
            CsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(CsStatus::NullArgument, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(CsStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail(CsStatus::NullArgument, format!("`{name}` is null")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(CsStatus::NullArgument, format!("`{name}` is null")))
}

fn owned(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s).map(CString::into_raw).map_err(Fail::input)
}

/// Message for the last failed call on this thread, or null. Owned by the
/// library; valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn cs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Renders an intent training example in the Llama chat format.
/// `label` is `rec` or `non_rec`.
///
/// # Safety
/// `prompt` and `label` must be valid C strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_render_intent(prompt: *const c_char, label: *const c_char, out: *mut *mut c_char) -> CsStatus {
    guard(|| {
        let prompt = str_arg(prompt, "prompt")?;
        let label: Intent = str_arg(label, "label")?.parse().map_err(Fail::input)?;
        let out = out_arg(out, "out")?;
        let record = build_intent_record(prompt, label).map_err(Fail::input)?;
        *out = owned(record.rendered)?;
        Ok(())
    })
}

/// Finds the JSON object in free-form model output and writes it back as
/// compact JSON. With `strict` set no repairs are attempted.
///
/// # Safety
/// `text` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_extract_json(text: *const c_char, strict: bool, out: *mut *mut c_char) -> CsStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let out = out_arg(out, "out")?;
        let opts = if strict { LenientJsonOptions::strict() } else { LenientJsonOptions::lenient() };
        let v = extract_json_lenient(text, &opts).map_err(Fail::input)?;
        *out = owned(v.to_string())?;
        Ok(())
    })
}

/// Macro-F1 over `n` single-label examples. A null entry in `pred` is a parse
/// failure.
///
/// # Safety
/// `gold` and `pred` must point to `n` entries each; every `gold` entry and
/// every non-null `pred` entry must be a valid C string.
#[no_mangle]
pub unsafe extern "C" fn cs_intent_macro_f1(
    gold: *const *const c_char,
    pred: *const *const c_char,
    n: usize,
    out: *mut f64,
) -> CsStatus {
    guard(|| {
        if n > 0 && (gold.is_null() || pred.is_null()) {
            return Err(Fail(CsStatus::NullArgument, "`gold` or `pred` is null".into()));
        }
        let out = out_arg(out, "out")?;
        let mut g = Vec::with_capacity(n);
        let mut p = Vec::with_capacity(n);
        for i in 0..n {
            g.push(str_arg(*gold.add(i), "gold[i]")?);
            let pi = *pred.add(i);
            p.push(if pi.is_null() { None } else { Some(str_arg(pi, "pred[i]")?) });
        }
        *out = macro_f1(&g, &p).map_err(Fail::input)?.macro_f1;
        Ok(())
    })
}

/// Parses a template. Free the handle with [`cs_template_free`].
///
/// # Safety
/// `src` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_template_parse(src: *const c_char, out: *mut *mut CsTemplate) -> CsStatus {
    guard(|| {
        let src = str_arg(src, "src")?;
        let out = out_arg(out, "out")?;
        let ast = parse_template(src).map_err(Fail::input)?;
        *out = Box::into_raw(Box::new(CsTemplate {
            ast,
            registry: SlotRegistry::new(),
        }));
        Ok(())
    })
}

/// # Safety
/// `t` must come from [`cs_template_parse`] and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cs_template_free(t: *mut CsTemplate) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Registers the domain of slot `name`: `literal:a|b|c` or `graph:<class>`.
///
/// # Safety
/// `t` must be a live template handle; strings must be valid C strings.
#[no_mangle]
pub unsafe extern "C" fn cs_template_set_slot(t: *mut CsTemplate, name: *const c_char, domain: *const c_char) -> CsStatus {
    guard(|| {
        let t = out_arg(t, "t")?;
        let name = str_arg(name, "name")?;
        let domain: SlotDomain = str_arg(domain, "domain")?.parse().map_err(Fail::input)?;
        t.registry.insert(name, domain);
        Ok(())
    })
}

/// Canonical source text of the template.
///
/// # Safety
/// `t` must be a live template handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_template_to_string(t: *const CsTemplate, out: *mut *mut c_char) -> CsStatus {
    guard(|| {
        let t = handle(t, "t")?;
        *out_arg(out, "out")? = owned(t.ast.to_string())?;
        Ok(())
    })
}

/// Number of expansions under the registered literal domains. Fails if a slot
/// is unregistered or graph-backed, or the count exceeds 2^64 - 1.
///
/// # Safety
/// `t` must be a live template handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_template_cardinality(t: *const CsTemplate, out: *mut u64) -> CsStatus {
    guard(|| {
        let t = handle(t, "t")?;
        let out = out_arg(out, "out")?;
        let n = expansion_cardinality(&t.ast, &t.registry).map_err(Fail::input)?;
        *out = u64::try_from(n).map_err(|_| Fail::input("expansion count exceeds 64 bits"))?;
        Ok(())
    })
}

/// All expansions as a JSON array of strings, at most `limit` of them.
///
/// # Safety
/// `t` must be a live template handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_template_expand(t: *const CsTemplate, limit: usize, out: *mut *mut c_char) -> CsStatus {
    guard(|| {
        let t = handle(t, "t")?;
        let out = out_arg(out, "out")?;
        let all = expand_all(&t.ast, &t.registry, limit).map_err(Fail::input)?;
        *out = owned(serde_json::to_string(&all).map_err(Fail::input)?)?;
        Ok(())
    })
}

/// Embeds a catalog JSONL file (as written by `cinesynth ingest`) with the
/// hashed embedder of dimension `dim`.
///
/// # Safety
/// `catalog_path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_index_build(catalog_path: *const c_char, dim: usize, out: *mut *mut CsIndex) -> CsStatus {
    guard(|| {
        let path = str_arg(catalog_path, "catalog_path")?;
        let out = out_arg(out, "out")?;
        let records = read_catalog(BufReader::new(File::open(path).map_err(Fail::io)?)).map_err(Fail::input)?;
        let index = index_catalog(&records, &HashedEmbedder { dim }).map_err(Fail::input)?;
        *out = Box::into_raw(Box::new(CsIndex { index }));
        Ok(())
    })
}

/// Loads an index file written by [`cs_index_save`] or `cinesynth retrieve --save-index`.
///
/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_index_load(path: *const c_char, out: *mut *mut CsIndex) -> CsStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let file = File::open(path).map_err(Fail::io)?;
        let index = CatalogIndex::load(BufReader::new(file)).map_err(Fail::input)?;
        *out = Box::into_raw(Box::new(CsIndex { index }));
        Ok(())
    })
}

/// # Safety
/// `idx` must be a live index handle; `path` must be a valid C string.
#[no_mangle]
pub unsafe extern "C" fn cs_index_save(idx: *const CsIndex, path: *const c_char) -> CsStatus {
    guard(|| {
        let idx = handle(idx, "idx")?;
        let path = str_arg(path, "path")?;
        let file = File::create(path).map_err(Fail::io)?;
        idx.index.save(BufWriter::new(file)).map_err(Fail::io)
    })
}

/// # Safety
/// `idx` must be a live index handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_index_len(idx: *const CsIndex, out: *mut usize) -> CsStatus {
    guard(|| {
        *out_arg(out, "out")? = handle(idx, "idx")?.index.len();
        Ok(())
    })
}

/// Top `k` records for a free-text query, as a JSON array of
/// `{"record_id": ..., "score": ...}` from best to worst.
///
/// # Safety
/// `idx` must be a live index handle; `query` a valid C string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_index_query(
    idx: *const CsIndex,
    query: *const c_char,
    k: usize,
    out: *mut *mut c_char,
) -> CsStatus {
    guard(|| {
        let idx = handle(idx, "idx")?;
        let query = str_arg(query, "query")?;
        let out = out_arg(out, "out")?;
        let provider = HashedEmbedder { dim: idx.index.dim() };
        let hits = rank(&idx.index, &provider, &EntityMap::new(), query, k).map_err(Fail::input)?;
        let json: Vec<serde_json::Value> = hits
            .into_iter()
            .map(|(id, score)| serde_json::json!({"record_id": id, "score": score}))
            .collect();
        *out = owned(serde_json::Value::Array(json).to_string())?;
        Ok(())
    })
}

/// # Safety
/// `idx` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cs_index_free(idx: *mut CsIndex) {
    if !idx.is_null() {
        drop(Box::from_raw(idx));
    }
}
