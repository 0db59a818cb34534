//! C ABI for loading a trained encoder, embedding texts, and running
//! exact inner-product search.
//!
//! Every handle is opaque and owned by the caller until passed to its
//! `vix_*_free` function. Fallible calls return a [`VixStatus`]; anything
//! but `VIX_STATUS_OK` leaves a diagnostic readable through
//! [`vix_last_error`] on the same thread. Out parameters are written only
//! on success.

use std::cell::RefCell;
use std::ffi::{CStr, CString, c_char, c_int};
use std::panic::{AssertUnwindSafe, catch_unwind};
use std::path::Path;
use std::str::FromStr;

use vix::corpus::{BANK_VERSION, BankSide, ImageBank, load_image_bank};
use vix::encoder::{Banks, CKPT_VERSION, EncoderParams, embed_batch, load_checkpoint};
use vix::error::Error;
use vix::linalg::Mat;
use vix::prompt::{PromptMode, Vocab, assemble_batch};
use vix::retrieval::EmbeddingIndex;

/// Outcome of a fallible call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum VixStatus {
    Ok = 0,
    /// File read or write failed.
    Io = 1,
    /// A file exists but is not in the expected format.
    Format = 2,
    /// Inputs are structurally inconsistent (dimensions, id ranges).
    Data = 3,
    /// A parameter value is out of range or unparsable.
    Config = 4,
    /// A computation produced a non-finite value.
    Numeric = 5,
    /// A required pointer argument was null.
    NullArgument = 6,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 7,
    /// The library caught an internal panic.
    Panic = 8,
}

/// Which side of the corpus a text or image bank belongs to. Functions
/// take this as an `int` so that out-of-range values can be rejected
/// instead of being undefined behavior.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum VixSide {
    Query = 0,
    Label = 1,
}

/// A loaded encoder: parameters, vocabulary, and prompt settings.
pub struct VixModel {
    params: EncoderParams,
    vocab: Vocab,
    mode: PromptMode,
    max_len: usize,
    image_cap: usize,
}

/// Frozen image vectors keyed by item index.
pub struct VixBank {
    bank: ImageBank,
}

/// Unit-norm embedding rows ready for exact top-k search.
pub struct VixIndex {
    index: EmbeddingIndex,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl AsRef<str>) {
    let sanitized = msg.as_ref().replace('\0', " ");
    let c = CString::new(sanitized).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> VixStatus {
    match err {
        Error::Io { .. } => VixStatus::Io,
        Error::Format { .. } => VixStatus::Format,
        Error::Data(_) => VixStatus::Data,
        Error::Config(_) => VixStatus::Config,
        Error::Numeric(_) => VixStatus::Numeric,
    }
}

fn fail(err: &Error) -> VixStatus {
    set_error(err.to_string());
    status_of(err)
}

fn guard<F: FnOnce() -> VixStatus>(f: F) -> VixStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            VixStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or point to a NUL-terminated string.
unsafe fn arg_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, VixStatus> {
    if p.is_null() {
        set_error(format!("{what} is null"));
        return Err(VixStatus::NullArgument);
    }
    match unsafe { CStr::from_ptr(p) }.to_str() {
        Ok(s) => Ok(s),
        Err(_) => {
            set_error(format!("{what} is not valid UTF-8"));
            Err(VixStatus::InvalidUtf8)
        }
    }
}

fn arg_side(side: c_int) -> Result<BankSide, VixStatus> {
    match side {
        0 => Ok(BankSide::Query),
        1 => Ok(BankSide::Label),
        other => {
            set_error(format!(
                "side {other} is neither VIX_SIDE_QUERY nor VIX_SIDE_LABEL"
            ));
            Err(VixStatus::Config)
        }
    }
}

/// The library version as a static NUL-terminated string.
#[unsafe(no_mangle)]
pub extern "C" fn vix_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// The checkpoint file format this library reads.
#[unsafe(no_mangle)]
pub extern "C" fn vix_checkpoint_format() -> u32 {
    CKPT_VERSION
}

/// The image bank file format this library reads.
#[unsafe(no_mangle)]
pub extern "C" fn vix_image_bank_format() -> u32 {
    BANK_VERSION
}

/// Diagnostic for the most recent failing call on this thread. The pointer
/// stays valid until the next failing call on the same thread. Empty when
/// no call has failed yet.
#[unsafe(no_mangle)]
pub extern "C" fn vix_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Load a checkpoint and its vocabulary. `mode` names the prompt template
/// (for example "decoder-fused"); `max_len` is the assembled prompt length
/// and `image_cap` the most images taken per item. On success `*out` owns
/// the model; release it with [`vix_model_free`].
///
/// # Safety
/// `checkpoint_path`, `vocab_path`, and `mode` must be NUL-terminated
/// strings; `out` must be a valid pointer.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn vix_model_open(
    checkpoint_path: *const c_char,
    vocab_path: *const c_char,
    mode: *const c_char,
    max_len: usize,
    image_cap: usize,
    out: *mut *mut VixModel,
) -> VixStatus {
    guard(|| {
        if out.is_null() {
            set_error("out is null");
            return VixStatus::NullArgument;
        }
        let ckpt = match unsafe { arg_str(checkpoint_path, "checkpoint_path") } {
            Ok(s) => s,
            Err(st) => return st,
        };
        let vocab_file = match unsafe { arg_str(vocab_path, "vocab_path") } {
            Ok(s) => s,
            Err(st) => return st,
        };
        let mode_name = match unsafe { arg_str(mode, "mode") } {
            Ok(s) => s,
            Err(st) => return st,
        };
        let mode = match PromptMode::from_str(mode_name) {
            Ok(m) => m,
            Err(e) => return fail(&e),
        };
        if max_len == 0 {
            set_error("max_len must be positive");
            return VixStatus::Config;
        }
        let params = match load_checkpoint(Path::new(ckpt)) {
            Ok(p) => p,
            Err(e) => return fail(&e),
        };
        let vocab = match Vocab::load(Path::new(vocab_file)) {
            Ok(v) => v,
            Err(e) => return fail(&e),
        };
        if vocab.size() != params.vocab_size() {
            set_error(format!(
                "vocabulary has {} tokens but the checkpoint embeds {}",
                vocab.size(),
                params.vocab_size()
            ));
            return VixStatus::Data;
        }
        let model = Box::new(VixModel {
            params,
            vocab,
            mode,
            max_len,
            image_cap,
        });
        unsafe { out.write(Box::into_raw(model)) };
        VixStatus::Ok
    })
}

/// Release a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a pointer returned by [`vix_model_open`] that
/// has not been freed yet.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn vix_model_free(model: *mut VixModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Embedding width of a model, or 0 for null.
///
/// # Safety
/// `model` must be null or a live model handle.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn vix_model_dim(model: *const VixModel) -> usize {
    if model.is_null() {
        0
    } else {
        unsafe { &*model }.params.d()
    }
}

/// Raw image width the model projects from, or 0 for null.
///
/// # Safety
/// `model` must be null or a live model handle.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn vix_model_image_dim(model: *const VixModel) -> usize {
    if model.is_null() {
        0
    } else {
        unsafe { &*model }.params.m()
    }
}

/// Load an image bank file for one corpus side. On success `*out` owns the
/// bank; release it with [`vix_bank_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn vix_bank_open(
    path: *const c_char,
    side: c_int,
    out: *mut *mut VixBank,
) -> VixStatus {
    guard(|| {
        if out.is_null() {
            set_error("out is null");
            return VixStatus::NullArgument;
        }
        let file = match unsafe { arg_str(path, "path") } {
            Ok(s) => s,
            Err(st) => return st,
        };
        let side = match arg_side(side) {
            Ok(s) => s,
            Err(st) => return st,
        };
        match load_image_bank(Path::new(file), side) {
            Ok(bank) => {
                unsafe { out.write(Box::into_raw(Box::new(VixBank { bank }))) };
                VixStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Release a bank. Null is ignored.
///
/// # Safety
/// `bank` must be null or a pointer returned by [`vix_bank_open`] that has
/// not been freed yet.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn vix_bank_free(bank: *mut VixBank) {
    if !bank.is_null() {
        drop(unsafe { Box::from_raw(bank) });
    }
}

/// Number of items with stored vectors, or 0 for null.
///
/// # Safety
/// `bank` must be null or a live bank handle.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn vix_bank_items(bank: *const VixBank) -> usize {
    if bank.is_null() {
        0
    } else {
        unsafe { &*bank }.bank.num_items()
    }
}

/// Embed `num_texts` texts into `out`, which must hold
/// `num_texts * vix_model_dim(model)` doubles, written row-major, one
/// unit-norm row per text. Text `i` is treated as item `i` when pulling
/// vectors from `bank`; pass a null `bank` to embed from text alone.
/// `side` says which corpus side the texts (and bank) belong to.
///
/// # Safety
/// `model` must be a live model handle; `texts` must point to `num_texts`
/// NUL-terminated strings; `bank`, when non-null, must be a live bank
/// handle; `out` must have room for `num_texts * vix_model_dim(model)`
/// doubles.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn vix_embed(
    model: *const VixModel,
    texts: *const *const c_char,
    num_texts: usize,
    side: c_int,
    bank: *const VixBank,
    out: *mut f64,
) -> VixStatus {
    guard(|| {
        if model.is_null() {
            set_error("model is null");
            return VixStatus::NullArgument;
        }
        if num_texts > 0 && (texts.is_null() || out.is_null()) {
            set_error("texts/out is null");
            return VixStatus::NullArgument;
        }
        let model = unsafe { &*model };
        let side = match arg_side(side) {
            Ok(s) => s,
            Err(st) => return st,
        };

        let mut items: Vec<(u64, &str)> = Vec::with_capacity(num_texts);
        for i in 0..num_texts {
            let p = unsafe { *texts.add(i) };
            match unsafe { arg_str(p, "text") } {
                Ok(s) => items.push((i as u64, s)),
                Err(st) => {
                    set_error(format!("texts[{i}] is null or not valid UTF-8"));
                    return st;
                }
            }
        }

        let bank_ref = if bank.is_null() {
            None
        } else {
            Some(unsafe { &*bank })
        };
        if let Some(b) = bank_ref {
            if b.bank.side != side {
                set_error("bank belongs to the other corpus side");
                return VixStatus::Data;
            }
            if b.bank.dim != model.params.m() {
                set_error(format!(
                    "bank vectors are {}-dim but the model projects from {}",
                    b.bank.dim,
                    model.params.m()
                ));
                return VixStatus::Data;
            }
        }
        let raw_bank = bank_ref.map(|b| &b.bank);

        let seqs = match assemble_batch(
            &items,
            side,
            raw_bank,
            model.mode,
            model.max_len,
            model.image_cap,
            &model.vocab,
        ) {
            Ok(s) => s,
            Err(e) => return fail(&e),
        };
        let banks = match side {
            BankSide::Query => Banks {
                query: raw_bank,
                label: None,
            },
            BankSide::Label => Banks {
                query: None,
                label: raw_bank,
            },
        };
        match embed_batch(&model.params, &seqs, &banks) {
            Ok(embs) => {
                debug_assert_eq!(embs.rows(), num_texts);
                if num_texts > 0 {
                    let data = embs.data();
                    unsafe { std::ptr::copy_nonoverlapping(data.as_ptr(), out, data.len()) };
                }
                VixStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Build a search index over `num_rows` unit-norm rows of `dim` doubles.
/// `ids`, when non-null, holds `num_rows` item ids reported back by
/// searches (they should be distinct; ties rank by ascending id); a null
/// `ids` numbers the rows 0..num_rows. On success `*out` owns the index;
/// release it with [`vix_index_free`].
///
/// # Safety
/// `rows` must point to `num_rows * dim` doubles; `ids` must be null or
/// point to `num_rows` ids; `out` must be a valid pointer.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn vix_index_build(
    rows: *const f64,
    num_rows: usize,
    dim: usize,
    ids: *const u64,
    block_size: usize,
    out: *mut *mut VixIndex,
) -> VixStatus {
    guard(|| {
        if out.is_null() || (num_rows > 0 && rows.is_null()) {
            set_error("rows/out is null");
            return VixStatus::NullArgument;
        }
        if dim == 0 {
            set_error("dim must be positive");
            return VixStatus::Config;
        }
        let data = if num_rows == 0 {
            Vec::new()
        } else {
            unsafe { std::slice::from_raw_parts(rows, num_rows * dim) }.to_vec()
        };
        let embs = Mat::from_vec(num_rows, dim, data);
        let ids: Vec<usize> = if ids.is_null() {
            (0..num_rows).collect()
        } else {
            unsafe { std::slice::from_raw_parts(ids, num_rows) }
                .iter()
                .map(|&id| id as usize)
                .collect()
        };
        match EmbeddingIndex::build(embs, ids, block_size) {
            Ok(index) => {
                unsafe { out.write(Box::into_raw(Box::new(VixIndex { index }))) };
                VixStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Release an index. Null is ignored.
///
/// # Safety
/// `index` must be null or a pointer returned by [`vix_index_build`] that
/// has not been freed yet.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn vix_index_free(index: *mut VixIndex) {
    if !index.is_null() {
        drop(unsafe { Box::from_raw(index) });
    }
}

/// Number of indexed rows, or 0 for null.
///
/// # Safety
/// `index` must be null or a live index handle.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn vix_index_len(index: *const VixIndex) -> usize {
    if index.is_null() {
        0
    } else {
        unsafe { &*index }.index.len()
    }
}

/// Exact top-`k` rows by inner product with `query`, highest score first,
/// ties broken by ascending id. Writes `min(k, vix_index_len(index))`
/// entries into `out_ids` and `out_scores` and stores that count in
/// `*out_count`.
///
/// # Safety
/// `index` must be a live index handle; `query` must point to `dim`
/// doubles; `out_ids` and `out_scores` must have room for `k` entries;
/// `out_count` must be a valid pointer.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn vix_index_search(
    index: *const VixIndex,
    query: *const f64,
    dim: usize,
    k: usize,
    out_ids: *mut u64,
    out_scores: *mut f64,
    out_count: *mut usize,
) -> VixStatus {
    guard(|| {
        if index.is_null() || query.is_null() || out_count.is_null() {
            set_error("index/query/out_count is null");
            return VixStatus::NullArgument;
        }
        if k > 0 && (out_ids.is_null() || out_scores.is_null()) {
            set_error("out_ids/out_scores is null");
            return VixStatus::NullArgument;
        }
        let index = unsafe { &*index };
        let q = unsafe { std::slice::from_raw_parts(query, dim) };
        match index.index.search_topk(q, k) {
            Ok(pairs) => {
                for (i, (id, score)) in pairs.iter().enumerate() {
                    unsafe {
                        out_ids.add(i).write(*id as u64);
                        out_scores.add(i).write(*score);
                    }
                }
                unsafe { out_count.write(pairs.len()) };
                VixStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

#[cfg(test)]
mod tests {
    use std::ffi::CString;
    use std::path::PathBuf;
    use std::ptr;

    use vix::corpus::{SynthConfig, generate_synthetic, save_image_bank};
    use vix::encoder::save_checkpoint;
    use vix::trainer::{OptimizerKind, TrainConfig, train};

    use super::*;

    fn scratch_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("vix-ffi-{}-{tag}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    struct Artifacts {
        dir: PathBuf,
        ckpt: CString,
        vocab: CString,
        bank: CString,
        label_texts: Vec<String>,
        query_text: String,
        cfg: TrainConfig,
    }

    /// Train a toy fused model and write checkpoint, vocabulary, and the
    /// label-side image bank to disk.
    fn artifacts(tag: &str) -> Artifacts {
        let dir = scratch_dir(tag);
        let synth = generate_synthetic(&SynthConfig {
            num_queries: 40,
            num_test_queries: Some(8),
            num_labels: 10,
            num_clusters: 5,
            vocab_size: 60,
            positives_per_query: 2,
            ambiguity_fraction: 0.0,
            image_dim: 3,
            image_availability: 1.0,
            seed: 3,
        })
        .unwrap();
        let cfg = TrainConfig {
            mode: PromptMode::DecoderFused,
            d: 8,
            m: 3,
            max_len: 16,
            epochs: 2,
            batch_size: 8,
            num_clusters: 2,
            negatives_per_query: 2,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            seed: 5,
            ..TrainConfig::default()
        };
        let out = train(
            &synth.train,
            Some(&synth.train_query_images),
            Some(&synth.label_images),
            &cfg,
        )
        .unwrap();

        let ckpt_path = dir.join("model.vixp");
        let vocab_path = dir.join("vocab.tsv");
        let bank_path = dir.join("labels.vixb");
        save_checkpoint(&out.params, &ckpt_path).unwrap();
        out.vocab.save(&vocab_path).unwrap();
        save_image_bank(&bank_path, &synth.label_images).unwrap();

        Artifacts {
            dir,
            ckpt: CString::new(ckpt_path.to_str().unwrap()).unwrap(),
            vocab: CString::new(vocab_path.to_str().unwrap()).unwrap(),
            bank: CString::new(bank_path.to_str().unwrap()).unwrap(),
            label_texts: synth.train.label_texts.clone(),
            query_text: synth.test.query_texts[0].clone(),
            cfg,
        }
    }

    fn mode_cstr() -> CString {
        CString::new("decoder-fused").unwrap()
    }

    #[test]
    fn version_and_formats() {
        let v = vix_version();
        assert!(!v.is_null());
        let s = unsafe { CStr::from_ptr(v) }.to_str().unwrap();
        assert!(s.contains('.'), "version {s:?} should be dotted");
        assert_eq!(vix_checkpoint_format(), 1);
        assert_eq!(vix_image_bank_format(), 1);
    }

    #[test]
    fn search_matches_direct_library_path() {
        let a = artifacts("roundtrip");

        let mut model: *mut VixModel = ptr::null_mut();
        let st = unsafe {
            vix_model_open(
                a.ckpt.as_ptr(),
                a.vocab.as_ptr(),
                mode_cstr().as_ptr(),
                a.cfg.max_len,
                a.cfg.image_cap,
                &mut model,
            )
        };
        assert_eq!(st, VixStatus::Ok, "{:?}", unsafe {
            CStr::from_ptr(vix_last_error())
        });
        let d = unsafe { vix_model_dim(model) };
        assert_eq!(d, a.cfg.d);
        assert_eq!(unsafe { vix_model_image_dim(model) }, a.cfg.m);

        let mut bank: *mut VixBank = ptr::null_mut();
        let st = unsafe { vix_bank_open(a.bank.as_ptr(), VixSide::Label as c_int, &mut bank) };
        assert_eq!(st, VixStatus::Ok);
        assert_eq!(unsafe { vix_bank_items(bank) }, a.label_texts.len());

        // Embed every label through the ABI.
        let texts: Vec<CString> = a
            .label_texts
            .iter()
            .map(|t| CString::new(t.as_str()).unwrap())
            .collect();
        let ptrs: Vec<*const c_char> = texts.iter().map(|t| t.as_ptr()).collect();
        let n = ptrs.len();
        let mut label_embs = vec![0f64; n * d];
        let st = unsafe {
            vix_embed(
                model,
                ptrs.as_ptr(),
                n,
                VixSide::Label as c_int,
                bank,
                label_embs.as_mut_ptr(),
            )
        };
        assert_eq!(st, VixStatus::Ok);

        // Index them and search with one embedded test query.
        let mut index: *mut VixIndex = ptr::null_mut();
        let st = unsafe { vix_index_build(label_embs.as_ptr(), n, d, ptr::null(), 4, &mut index) };
        assert_eq!(st, VixStatus::Ok);
        assert_eq!(unsafe { vix_index_len(index) }, n);

        let query = CString::new(a.query_text.as_str()).unwrap();
        let qptr = [query.as_ptr()];
        let mut q_emb = vec![0f64; d];
        let st = unsafe {
            vix_embed(
                model,
                qptr.as_ptr(),
                1,
                VixSide::Query as c_int,
                ptr::null(),
                q_emb.as_mut_ptr(),
            )
        };
        assert_eq!(st, VixStatus::Ok);

        let k = 3usize;
        let mut ids = vec![0u64; k];
        let mut scores = vec![0f64; k];
        let mut count = 0usize;
        let st = unsafe {
            vix_index_search(
                index,
                q_emb.as_ptr(),
                d,
                k,
                ids.as_mut_ptr(),
                scores.as_mut_ptr(),
                &mut count,
            )
        };
        assert_eq!(st, VixStatus::Ok);
        assert_eq!(count, k);
        assert!(
            scores.windows(2).all(|w| w[0] >= w[1]),
            "scores must be non-increasing"
        );

        // The same pipeline through the library directly must agree bit
        // for bit.
        let params = load_checkpoint(Path::new(a.ckpt.to_str().unwrap())).unwrap();
        let vocab = Vocab::load(Path::new(a.vocab.to_str().unwrap())).unwrap();
        let raw_bank =
            load_image_bank(Path::new(a.bank.to_str().unwrap()), BankSide::Label).unwrap();
        let items: Vec<(u64, &str)> = a
            .label_texts
            .iter()
            .enumerate()
            .map(|(i, t)| (i as u64, t.as_str()))
            .collect();
        let seqs = assemble_batch(
            &items,
            BankSide::Label,
            Some(&raw_bank),
            PromptMode::DecoderFused,
            a.cfg.max_len,
            a.cfg.image_cap,
            &vocab,
        )
        .unwrap();
        let direct = embed_batch(
            &params,
            &seqs,
            &Banks {
                query: None,
                label: Some(&raw_bank),
            },
        )
        .unwrap();
        assert_eq!(direct.data(), &label_embs[..]);

        let q_items = [(0u64, a.query_text.as_str())];
        let q_seq = assemble_batch(
            &q_items,
            BankSide::Query,
            None,
            PromptMode::DecoderFused,
            a.cfg.max_len,
            a.cfg.image_cap,
            &vocab,
        )
        .unwrap();
        let q_direct = embed_batch(&params, &q_seq, &Banks::none()).unwrap();
        let direct_index = EmbeddingIndex::build(direct, (0..n).collect(), 4).unwrap();
        let want = direct_index.search_topk(q_direct.row(0), k).unwrap();
        let got: Vec<(usize, f64)> = ids
            .iter()
            .zip(&scores)
            .map(|(&id, &s)| (id as usize, s))
            .collect();
        assert_eq!(got, want);

        unsafe {
            vix_index_free(index);
            vix_bank_free(bank);
            vix_model_free(model);
        }
        let _ = std::fs::remove_dir_all(&a.dir);
    }

    #[test]
    fn errors_set_status_and_message() {
        // Missing checkpoint file.
        let missing = CString::new("/nonexistent/model.vixp").unwrap();
        let vocab = CString::new("/nonexistent/vocab.tsv").unwrap();
        let mut model: *mut VixModel = ptr::null_mut();
        let st = unsafe {
            vix_model_open(
                missing.as_ptr(),
                vocab.as_ptr(),
                mode_cstr().as_ptr(),
                16,
                2,
                &mut model,
            )
        };
        assert_eq!(st, VixStatus::Io);
        let msg = unsafe { CStr::from_ptr(vix_last_error()) }
            .to_str()
            .unwrap();
        assert!(
            msg.contains("model.vixp"),
            "diagnostic {msg:?} should name the path"
        );
        assert!(model.is_null(), "out must not be written on failure");

        // Unknown prompt mode.
        let a = artifacts("badmode");
        let bad_mode = CString::new("no-such-mode").unwrap();
        let st = unsafe {
            vix_model_open(
                a.ckpt.as_ptr(),
                a.vocab.as_ptr(),
                bad_mode.as_ptr(),
                16,
                2,
                &mut model,
            )
        };
        assert_eq!(st, VixStatus::Config);

        // Null arguments.
        let st = unsafe {
            vix_model_open(
                ptr::null(),
                a.vocab.as_ptr(),
                mode_cstr().as_ptr(),
                16,
                2,
                &mut model,
            )
        };
        assert_eq!(st, VixStatus::NullArgument);
        let st = unsafe {
            vix_model_open(
                a.ckpt.as_ptr(),
                a.vocab.as_ptr(),
                mode_cstr().as_ptr(),
                16,
                2,
                ptr::null_mut(),
            )
        };
        assert_eq!(st, VixStatus::NullArgument);

        // Bad side value.
        let mut bank: *mut VixBank = ptr::null_mut();
        let st = unsafe { vix_bank_open(a.bank.as_ptr(), 7, &mut bank) };
        assert_eq!(st, VixStatus::Config);

        // Embedding through a null model.
        let text = CString::new("hello").unwrap();
        let ptrs = [text.as_ptr()];
        let mut out = [0f64; 8];
        let st = unsafe {
            vix_embed(
                ptr::null(),
                ptrs.as_ptr(),
                1,
                0,
                ptr::null(),
                out.as_mut_ptr(),
            )
        };
        assert_eq!(st, VixStatus::NullArgument);

        // Index over rows that are not unit-norm.
        let rows = [0.5f64, 0.0, 0.0, 0.5];
        let mut index: *mut VixIndex = ptr::null_mut();
        let st = unsafe { vix_index_build(rows.as_ptr(), 2, 2, ptr::null(), 16, &mut index) };
        assert_eq!(st, VixStatus::Data);

        // Dimension mismatch on search.
        let unit = [1.0f64, 0.0, 0.0, 1.0];
        let st = unsafe { vix_index_build(unit.as_ptr(), 2, 2, ptr::null(), 16, &mut index) };
        assert_eq!(st, VixStatus::Ok);
        let q = [1.0f64, 0.0, 0.0];
        let (mut ids, mut scores, mut count) = ([0u64; 2], [0f64; 2], 0usize);
        let st = unsafe {
            vix_index_search(
                index,
                q.as_ptr(),
                3,
                2,
                ids.as_mut_ptr(),
                scores.as_mut_ptr(),
                &mut count,
            )
        };
        assert_eq!(st, VixStatus::Data);
        unsafe { vix_index_free(index) };

        let _ = std::fs::remove_dir_all(&a.dir);
    }

    #[test]
    fn frees_ignore_null() {
        unsafe {
            vix_model_free(ptr::null_mut());
            vix_bank_free(ptr::null_mut());
            vix_index_free(ptr::null_mut());
        }
    }

    #[test]
    fn custom_ids_come_back_from_search() {
        let rows = [1.0f64, 0.0, 0.0, 1.0];
        let ids = [42u64, 7];
        let mut index: *mut VixIndex = ptr::null_mut();
        let st = unsafe { vix_index_build(rows.as_ptr(), 2, 2, ids.as_ptr(), 1, &mut index) };
        assert_eq!(st, VixStatus::Ok);
        let q = [0.0f64, 1.0];
        let (mut out_ids, mut scores, mut count) = ([0u64; 2], [0f64; 2], 0usize);
        let st = unsafe {
            vix_index_search(
                index,
                q.as_ptr(),
                2,
                2,
                out_ids.as_mut_ptr(),
                scores.as_mut_ptr(),
                &mut count,
            )
        };
        assert_eq!(st, VixStatus::Ok);
        assert_eq!(count, 2);
        assert_eq!(out_ids, [7, 42]);
        assert_eq!(scores, [1.0, 0.0]);
        unsafe { vix_index_free(index) };
    }

    #[test]
    fn header_is_generated_with_the_public_surface() {
        let header = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/vix.h");
        let text = std::fs::read_to_string(&header).expect("generated header");
        for needle in [
            "VixStatus",
            "VixSide",
            "vix_model_open",
            "vix_embed",
            "vix_index_build",
            "vix_index_search",
            "vix_last_error",
            "VIX_STATUS_OK",
        ] {
            assert!(text.contains(needle), "header lacks {needle}");
        }
    }
}
