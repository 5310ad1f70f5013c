//! C ABI for embedding the recipe-comprehension stack in other languages.
//!
//! Handles are opaque pointers created and destroyed by this library;
//! every fallible call returns a [`PrnStatus`] and stores a human-readable
//! message retrievable through [`prn_last_error_message`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::collections::HashMap;
use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::ptr;

use libc::{c_char, c_double};

use prn_core::corpus::synthetic::{generate_and_write, SyntheticWorldConfig};
use prn_core::corpus::{load_dataset, ImageFeatureStore, QuestionInstance, Recipe};
use prn_core::entities::{extract_entities, IngredientDictionary};
use prn_core::error::PrnError;
use prn_core::evaluation::{evaluate, evaluate_hasty, hasty_student, CoherencePolicy};
use prn_core::model::{prepare_instances, Model, PreparedInstance};
use prn_core::training::{load_checkpoint, model_from_checkpoint};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum PrnStatus {
    PrnOk = 0,
    PrnNullPointer = 1,
    PrnInvalidArgument = 2,
    PrnDataError = 3,
    PrnIoError = 4,
    PrnRuntimeError = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let cstring = CString::new(msg.replace('\0', " "))
        .unwrap_or_else(|_| CString::new("invalid error message").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(cstring));
}

fn status_of(err: &PrnError) -> PrnStatus {
    match err {
        PrnError::Config(_) | PrnError::Dimension(_) => PrnStatus::PrnInvalidArgument,
        PrnError::Data(_) | PrnError::NeedsAnnotation(_) => PrnStatus::PrnDataError,
        PrnError::Io { .. } => PrnStatus::PrnIoError,
        PrnError::Numeric(_) | PrnError::Serde(_) => PrnStatus::PrnRuntimeError,
    }
}

fn fail(err: PrnError) -> PrnStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

fn null_fail(what: &str) -> PrnStatus {
    set_error(format!("null pointer: {what}"));
    PrnStatus::PrnNullPointer
}

unsafe fn path_arg(ptr: *const c_char, what: &str) -> Result<PathBuf, PrnStatus> {
    str_arg(ptr, what).map(PathBuf::from)
}

unsafe fn str_arg(ptr: *const c_char, what: &str) -> Result<String, PrnStatus> {
    if ptr.is_null() {
        return Err(null_fail(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map(|s| s.to_string())
        .map_err(|_| {
            set_error(format!("{what}: invalid utf-8"));
            PrnStatus::PrnInvalidArgument
        })
}

/// Opaque image feature store handle.
pub struct PrnFeatureStore {
    inner: ImageFeatureStore,
}

/// Opaque dataset handle: recipes plus validated question instances.
pub struct PrnDataset {
    recipes: Vec<Recipe>,
    instances: Vec<QuestionInstance>,
}

/// Opaque model handle restored from a checkpoint.
pub struct PrnModel {
    model: Model,
    dictionary: Vec<String>,
}

/// Opaque prepared-dataset handle bound to one model and feature store.
pub struct PrnPrepared {
    instances: Vec<PreparedInstance>,
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn prn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent error on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn prn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map(|s| s.as_ptr())
            .unwrap_or(ptr::null())
    })
}

/// Frees a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn prn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---------------------------------------------------------------------------
// Synthetic worlds
// ---------------------------------------------------------------------------

/// Generates a synthetic dataset bundle into `out_dir`. `world_json` may be
/// NULL for the default world configuration.
#[no_mangle]
pub unsafe extern "C" fn prn_synth_generate(
    world_json: *const c_char,
    n_recipes: usize,
    seed: u64,
    out_dir: *const c_char,
) -> PrnStatus {
    let dir = match path_arg(out_dir, "out_dir") {
        Ok(p) => p,
        Err(s) => return s,
    };
    let config = if world_json.is_null() {
        SyntheticWorldConfig::default()
    } else {
        let text = match str_arg(world_json, "world_json") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match serde_json::from_str(&text) {
            Ok(cfg) => cfg,
            Err(e) => {
                set_error(format!("world_json: {e}"));
                return PrnStatus::PrnInvalidArgument;
            }
        }
    };
    match generate_and_write(&config, n_recipes, seed, &dir) {
        Ok(_) => PrnStatus::PrnOk,
        Err(e) => fail(e),
    }
}

// ---------------------------------------------------------------------------
// Feature stores
// ---------------------------------------------------------------------------

#[no_mangle]
pub unsafe extern "C" fn prn_feature_store_open(
    path: *const c_char,
    out: *mut *mut PrnFeatureStore,
) -> PrnStatus {
    if out.is_null() {
        return null_fail("out");
    }
    let path = match path_arg(path, "path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    match ImageFeatureStore::load(&path) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(PrnFeatureStore { inner }));
            PrnStatus::PrnOk
        }
        Err(e) => fail(e),
    }
}

#[no_mangle]
pub unsafe extern "C" fn prn_feature_store_free(store: *mut PrnFeatureStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

#[no_mangle]
pub unsafe extern "C" fn prn_feature_store_len(
    store: *const PrnFeatureStore,
    out: *mut usize,
) -> PrnStatus {
    if store.is_null() || out.is_null() {
        return null_fail("store/out");
    }
    *out = (*store).inner.len();
    PrnStatus::PrnOk
}

#[no_mangle]
pub unsafe extern "C" fn prn_feature_store_dim(
    store: *const PrnFeatureStore,
    out: *mut usize,
) -> PrnStatus {
    if store.is_null() || out.is_null() {
        return null_fail("store/out");
    }
    *out = (*store).inner.dim();
    PrnStatus::PrnOk
}

/// Copies one image's feature vector into `buffer` (length `buffer_len`,
/// which must be at least the store dimension).
#[no_mangle]
pub unsafe extern "C" fn prn_feature_store_get(
    store: *const PrnFeatureStore,
    image_id: *const c_char,
    buffer: *mut f32,
    buffer_len: usize,
) -> PrnStatus {
    if store.is_null() || buffer.is_null() {
        return null_fail("store/buffer");
    }
    let id = match str_arg(image_id, "image_id") {
        Ok(s) => s,
        Err(s) => return s,
    };
    let st = &(*store).inner;
    if buffer_len < st.dim() {
        set_error(format!(
            "buffer length {buffer_len} < feature dim {}",
            st.dim()
        ));
        return PrnStatus::PrnInvalidArgument;
    }
    match st.get(&id) {
        Ok(v) => {
            ptr::copy_nonoverlapping(v.as_ptr(), buffer, st.dim());
            PrnStatus::PrnOk
        }
        Err(e) => fail(e),
    }
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// Loads recipes and question instances; `split` may be NULL to keep all
/// records.
#[no_mangle]
pub unsafe extern "C" fn prn_dataset_load(
    recipes_path: *const c_char,
    questions_path: *const c_char,
    split: *const c_char,
    out: *mut *mut PrnDataset,
) -> PrnStatus {
    if out.is_null() {
        return null_fail("out");
    }
    let recipes_path = match path_arg(recipes_path, "recipes_path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    let questions_path = match path_arg(questions_path, "questions_path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    let split = if split.is_null() {
        None
    } else {
        match str_arg(split, "split") {
            Ok(s) => Some(s),
            Err(s) => return s,
        }
    };
    match load_dataset(&recipes_path, &questions_path, split.as_deref()) {
        Ok((recipes, instances)) => {
            *out = Box::into_raw(Box::new(PrnDataset { recipes, instances }));
            PrnStatus::PrnOk
        }
        Err(e) => fail(e),
    }
}

#[no_mangle]
pub unsafe extern "C" fn prn_dataset_free(dataset: *mut PrnDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

#[no_mangle]
pub unsafe extern "C" fn prn_dataset_len(
    dataset: *const PrnDataset,
    out: *mut usize,
) -> PrnStatus {
    if dataset.is_null() || out.is_null() {
        return null_fail("dataset/out");
    }
    *out = (*dataset).instances.len();
    PrnStatus::PrnOk
}

/// Instance id at `index` as a newly allocated string; free with
/// [`prn_string_free`].
#[no_mangle]
pub unsafe extern "C" fn prn_dataset_instance_id(
    dataset: *const PrnDataset,
    index: usize,
    out: *mut *mut c_char,
) -> PrnStatus {
    if dataset.is_null() || out.is_null() {
        return null_fail("dataset/out");
    }
    let ds = &*dataset;
    match ds.instances.get(index) {
        Some(inst) => {
            let s = CString::new(inst.id.clone()).unwrap_or_default();
            *out = s.into_raw();
            PrnStatus::PrnOk
        }
        None => {
            set_error(format!(
                "index {index} out of range for {} instances",
                ds.instances.len()
            ));
            PrnStatus::PrnInvalidArgument
        }
    }
}

/// Gold answer index of the instance at `index`.
#[no_mangle]
pub unsafe extern "C" fn prn_dataset_gold_index(
    dataset: *const PrnDataset,
    index: usize,
    out: *mut u32,
) -> PrnStatus {
    if dataset.is_null() || out.is_null() {
        return null_fail("dataset/out");
    }
    let ds = &*dataset;
    match ds.instances.get(index) {
        Some(inst) => {
            *out = inst.gold_index as u32;
            PrnStatus::PrnOk
        }
        None => {
            set_error(format!(
                "index {index} out of range for {} instances",
                ds.instances.len()
            ));
            PrnStatus::PrnInvalidArgument
        }
    }
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

/// Restores a model from a checkpoint archive.
#[no_mangle]
pub unsafe extern "C" fn prn_model_open(
    checkpoint_path: *const c_char,
    out: *mut *mut PrnModel,
) -> PrnStatus {
    if out.is_null() {
        return null_fail("out");
    }
    let path = match path_arg(checkpoint_path, "checkpoint_path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    let ckpt = match load_checkpoint(&path) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    match model_from_checkpoint(&ckpt) {
        Ok(model) => {
            *out = Box::into_raw(Box::new(PrnModel {
                model,
                dictionary: ckpt.dictionary,
            }));
            PrnStatus::PrnOk
        }
        Err(e) => fail(e),
    }
}

#[no_mangle]
pub unsafe extern "C" fn prn_model_free(model: *mut PrnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of trainable parameters.
#[no_mangle]
pub unsafe extern "C" fn prn_model_parameter_count(
    model: *const PrnModel,
    out: *mut u64,
) -> PrnStatus {
    if model.is_null() || out.is_null() {
        return null_fail("model/out");
    }
    *out = (*model).model.parameter_count() as u64;
    PrnStatus::PrnOk
}

fn prepare_for_model(
    handle: &PrnModel,
    dataset: &PrnDataset,
    store: &PrnFeatureStore,
) -> Result<Vec<PreparedInstance>, PrnError> {
    let model = &handle.model;
    let mut entities_map = HashMap::new();
    if model.config.variant.has_entity_path() {
        if handle.dictionary.is_empty() {
            return Err(PrnError::Data(
                "checkpoint carries no ingredient dictionary".into(),
            ));
        }
        let dict = IngredientDictionary::from_entries(handle.dictionary.iter().cloned())?;
        for r in &dataset.recipes {
            entities_map.insert(
                r.id.clone(),
                extract_entities(r, &dict, model.config.k_max, None)?,
            );
        }
    }
    prepare_instances(
        &dataset.instances,
        &dataset.recipes,
        &entities_map,
        &store.inner,
        &model.vocab,
        &model.config,
    )
}

/// Prepares a dataset against a model (entity extraction, feature lookup).
/// The returned handle is only valid with the same model.
#[no_mangle]
pub unsafe extern "C" fn prn_prepared_create(
    model: *const PrnModel,
    dataset: *const PrnDataset,
    store: *const PrnFeatureStore,
    out: *mut *mut PrnPrepared,
) -> PrnStatus {
    if model.is_null() || dataset.is_null() || store.is_null() || out.is_null() {
        return null_fail("model/dataset/store/out");
    }
    match prepare_for_model(&*model, &*dataset, &*store) {
        Ok(instances) => {
            *out = Box::into_raw(Box::new(PrnPrepared { instances }));
            PrnStatus::PrnOk
        }
        Err(e) => fail(e),
    }
}

#[no_mangle]
pub unsafe extern "C" fn prn_prepared_free(prepared: *mut PrnPrepared) {
    if !prepared.is_null() {
        drop(Box::from_raw(prepared));
    }
}

/// Scores the instance at `index`: writes the predicted candidate index and
/// the four cosine scores.
#[no_mangle]
pub unsafe extern "C" fn prn_model_predict(
    model: *const PrnModel,
    prepared: *const PrnPrepared,
    index: usize,
    out_predicted: *mut u32,
    out_scores: *mut c_double,
) -> PrnStatus {
    if model.is_null() || prepared.is_null() || out_predicted.is_null() || out_scores.is_null() {
        return null_fail("model/prepared/out");
    }
    let pre = &*prepared;
    let Some(inst) = pre.instances.get(index) else {
        set_error(format!(
            "index {index} out of range for {} instances",
            pre.instances.len()
        ));
        return PrnStatus::PrnInvalidArgument;
    };
    match (*model).model.score(inst) {
        Ok(pass) => {
            *out_predicted = pass.predicted as u32;
            ptr::copy_nonoverlapping(pass.scores.as_ptr(), out_scores, pass.scores.len());
            PrnStatus::PrnOk
        }
        Err(e) => fail(e),
    }
}

/// Evaluates the whole prepared dataset and returns the report as a JSON
/// string; free with [`prn_string_free`].
#[no_mangle]
pub unsafe extern "C" fn prn_model_evaluate_json(
    model: *const PrnModel,
    prepared: *const PrnPrepared,
    out_json: *mut *mut c_char,
) -> PrnStatus {
    if model.is_null() || prepared.is_null() || out_json.is_null() {
        return null_fail("model/prepared/out_json");
    }
    let report = match evaluate(&(*model).model, &(*prepared).instances) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    match serde_json::to_string_pretty(&report) {
        Ok(json) => {
            *out_json = CString::new(json).unwrap_or_default().into_raw();
            PrnStatus::PrnOk
        }
        Err(e) => fail(PrnError::Serde(e)),
    }
}

// ---------------------------------------------------------------------------
// Heuristic baseline
// ---------------------------------------------------------------------------

/// Predicts one instance with the visual-distance heuristic.
/// `coherence_policy`: 0 = max distance (most inconsistent), 1 = min.
#[no_mangle]
pub unsafe extern "C" fn prn_hasty_predict(
    dataset: *const PrnDataset,
    store: *const PrnFeatureStore,
    index: usize,
    coherence_policy: u32,
    out_predicted: *mut u32,
) -> PrnStatus {
    if dataset.is_null() || store.is_null() || out_predicted.is_null() {
        return null_fail("dataset/store/out");
    }
    let ds = &*dataset;
    let Some(inst) = ds.instances.get(index) else {
        set_error(format!(
            "index {index} out of range for {} instances",
            ds.instances.len()
        ));
        return PrnStatus::PrnInvalidArgument;
    };
    let policy = if coherence_policy == 1 {
        CoherencePolicy::MinDistance
    } else {
        CoherencePolicy::MaxDistance
    };
    match hasty_student(inst, &(*store).inner, policy) {
        Ok(p) => {
            *out_predicted = p as u32;
            PrnStatus::PrnOk
        }
        Err(e) => fail(e),
    }
}

/// Evaluates the heuristic over the whole dataset; returns report JSON.
#[no_mangle]
pub unsafe extern "C" fn prn_hasty_evaluate_json(
    dataset: *const PrnDataset,
    store: *const PrnFeatureStore,
    coherence_policy: u32,
    out_json: *mut *mut c_char,
) -> PrnStatus {
    if dataset.is_null() || store.is_null() || out_json.is_null() {
        return null_fail("dataset/store/out_json");
    }
    let policy = if coherence_policy == 1 {
        CoherencePolicy::MinDistance
    } else {
        CoherencePolicy::MaxDistance
    };
    let report = match evaluate_hasty(&(*dataset).instances, &(*store).inner, policy) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    match serde_json::to_string_pretty(&report) {
        Ok(json) => {
            *out_json = CString::new(json).unwrap_or_default().into_raw();
            PrnStatus::PrnOk
        }
        Err(e) => fail(PrnError::Serde(e)),
    }
}
