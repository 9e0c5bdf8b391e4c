//! C ABI over the flow-window pipeline: stream flows through a windower,
//! extract feature vectors, and score them with a trained checkpoint.
//!
//! All functions return a [`TwnetStatus`] code; `twnet_last_error` fetches a
//! human-readable message for the most recent failure on the calling thread.
//! Handles (`TwnetWindower`, `TwnetModel`) are opaque and must be released
//! with their matching `_free` function exactly once.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};

use twnet::features::{extract, FEATURE_COUNT};
use twnet::ingest::{FlowRecord, ProtocolClass};
use twnet::model::{load_checkpoint, Checkpoint};
use twnet::window::{WindowConfig, WindowEngine, WindowedSample};

/// Protocol code for TCP flows.
pub const TWNET_PROTOCOL_TCP: u8 = 0;
/// Protocol code for UDP flows.
pub const TWNET_PROTOCOL_UDP: u8 = 1;
/// Protocol code for every other protocol.
pub const TWNET_PROTOCOL_OTHER: u8 = 2;

/// Status code returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwnetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidString = 2,
    InvalidArgument = 3,
    /// Flow timestamps must be non-decreasing per windower.
    OutOfOrder = 4,
    Io = 5,
    Parse = 6,
    Internal = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: impl Into<String>) {
    let message = message.into().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(message).unwrap_or_default();
    });
}

fn fail(status: TwnetStatus, message: impl Into<String>) -> TwnetStatus {
    set_error(message);
    status
}

/// Copy the last error message for this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes excluding
/// the terminator.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null (query mode).
#[no_mangle]
pub unsafe extern "C" fn twnet_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let message = slot.borrow();
        let bytes = message.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// One flow record. Host identifiers are NUL-terminated UTF-8 strings
/// compared only for equality; `protocol` is one of the `TWNET_PROTOCOL_*`
/// codes; `duration` is seconds.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TwnetFlow {
    pub timestamp: f64,
    pub src_ip: *const c_char,
    pub dst_ip: *const c_char,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
    pub duration: f64,
    pub src_packets: u64,
    pub dst_packets: u64,
    pub src_bytes: u64,
    pub dst_bytes: u64,
}

/// Frozen window information for one flow: counts exclude the flow itself.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TwnetSample {
    pub new_port_src: u8,
    pub new_port_dst: u8,
    pub src_flow_count: u64,
    pub dst_flow_count: u64,
    pub src_port_count: u64,
    pub dst_port_count: u64,
}

/// Opaque streaming window engine.
pub struct TwnetWindower {
    engine: WindowEngine,
}

/// Opaque loaded model checkpoint.
pub struct TwnetModel {
    checkpoint: Checkpoint,
}

unsafe fn flow_from_c(flow: *const TwnetFlow) -> Result<FlowRecord, TwnetStatus> {
    if flow.is_null() {
        set_error("flow pointer is null");
        return Err(TwnetStatus::NullPointer);
    }
    let flow = &*flow;
    if flow.src_ip.is_null() || flow.dst_ip.is_null() {
        set_error("host identifier pointer is null");
        return Err(TwnetStatus::NullPointer);
    }
    let src_ip = match CStr::from_ptr(flow.src_ip).to_str() {
        Ok(s) if !s.is_empty() => s.to_string(),
        Ok(_) => {
            set_error("empty host identifier");
            return Err(TwnetStatus::InvalidArgument);
        }
        Err(_) => {
            set_error("host identifier is not valid UTF-8");
            return Err(TwnetStatus::InvalidString);
        }
    };
    let dst_ip = match CStr::from_ptr(flow.dst_ip).to_str() {
        Ok(s) if !s.is_empty() => s.to_string(),
        Ok(_) => {
            set_error("empty host identifier");
            return Err(TwnetStatus::InvalidArgument);
        }
        Err(_) => {
            set_error("host identifier is not valid UTF-8");
            return Err(TwnetStatus::InvalidString);
        }
    };
    let protocol = match flow.protocol {
        TWNET_PROTOCOL_TCP => ProtocolClass::Tcp,
        TWNET_PROTOCOL_UDP => ProtocolClass::Udp,
        TWNET_PROTOCOL_OTHER => ProtocolClass::Other,
        other => {
            set_error(format!("unknown protocol code {other}"));
            return Err(TwnetStatus::InvalidArgument);
        }
    };
    if !flow.timestamp.is_finite() || !flow.duration.is_finite() || flow.duration < 0.0 {
        set_error("timestamp/duration must be finite and duration non-negative");
        return Err(TwnetStatus::InvalidArgument);
    }
    Ok(FlowRecord {
        timestamp: flow.timestamp,
        src_ip,
        dst_ip,
        src_port: flow.src_port,
        dst_port: flow.dst_port,
        protocol,
        duration: flow.duration,
        src_packets: flow.src_packets,
        dst_packets: flow.dst_packets,
        src_bytes: flow.src_bytes,
        dst_bytes: flow.dst_bytes,
        label: String::new(),
    })
}

fn windowed_from_parts(record: FlowRecord, sample: &TwnetSample) -> WindowedSample {
    WindowedSample {
        flow: record,
        new_port_src: sample.new_port_src != 0,
        new_port_dst: sample.new_port_dst != 0,
        src_flow_count: sample.src_flow_count,
        dst_flow_count: sample.dst_flow_count,
        src_port_count: sample.src_port_count,
        dst_port_count: sample.dst_port_count,
    }
}

/// Create a streaming windower. `max_hosts` of 0 keeps every host; otherwise
/// the least-recently-anchored host is dropped beyond the bound (minimum 2).
///
/// # Safety
/// `out` must be a valid pointer to receive the handle.
#[no_mangle]
pub unsafe extern "C" fn twnet_windower_new(
    window_seconds: f64,
    max_hosts: usize,
    out: *mut *mut TwnetWindower,
) -> TwnetStatus {
    if out.is_null() {
        return fail(TwnetStatus::NullPointer, "out pointer is null");
    }
    let config = WindowConfig {
        window_seconds,
        max_hosts: (max_hosts > 0).then_some(max_hosts),
    };
    match WindowEngine::new(config) {
        Ok(engine) => {
            *out = Box::into_raw(Box::new(TwnetWindower { engine }));
            TwnetStatus::Ok
        }
        Err(e) => fail(TwnetStatus::InvalidArgument, e.to_string()),
    }
}

/// Process one flow (timestamps must be non-decreasing) and write its frozen
/// window sample to `out`.
///
/// # Safety
/// `windower` must be a live handle; `flow` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn twnet_windower_push(
    windower: *mut TwnetWindower,
    flow: *const TwnetFlow,
    out: *mut TwnetSample,
) -> TwnetStatus {
    if windower.is_null() || out.is_null() {
        return fail(TwnetStatus::NullPointer, "windower/out pointer is null");
    }
    let record = match flow_from_c(flow) {
        Ok(r) => r,
        Err(status) => return status,
    };
    match (*windower).engine.push(record) {
        Ok(sample) => {
            *out = TwnetSample {
                new_port_src: sample.new_port_src as u8,
                new_port_dst: sample.new_port_dst as u8,
                src_flow_count: sample.src_flow_count,
                dst_flow_count: sample.dst_flow_count,
                src_port_count: sample.src_port_count,
                dst_port_count: sample.dst_port_count,
            };
            TwnetStatus::Ok
        }
        Err(e @ twnet::window::WindowError::Unsorted { .. }) => {
            fail(TwnetStatus::OutOfOrder, e.to_string())
        }
        Err(e) => fail(TwnetStatus::Internal, e.to_string()),
    }
}

/// Number of hosts currently tracked, or 0 for a null handle.
///
/// # Safety
/// `windower` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn twnet_windower_host_count(windower: *const TwnetWindower) -> usize {
    if windower.is_null() {
        return 0;
    }
    (*windower).engine.host_count()
}

/// Release a windower handle.
///
/// # Safety
/// `windower` must come from `twnet_windower_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn twnet_windower_free(windower: *mut TwnetWindower) {
    if !windower.is_null() {
        drop(Box::from_raw(windower));
    }
}

/// Compute the 20 derived features and the (TCP, UDP, OTHER) one-hot mask
/// for a flow plus its window sample. `out_features` receives 20 values,
/// `out_mask` 3 values.
///
/// # Safety
/// `out_features` must point to 20 writable f64, `out_mask` to 3.
#[no_mangle]
pub unsafe extern "C" fn twnet_features_extract(
    flow: *const TwnetFlow,
    sample: *const TwnetSample,
    out_features: *mut f64,
    out_mask: *mut f64,
) -> TwnetStatus {
    if sample.is_null() || out_features.is_null() || out_mask.is_null() {
        return fail(TwnetStatus::NullPointer, "sample/output pointer is null");
    }
    let record = match flow_from_c(flow) {
        Ok(r) => r,
        Err(status) => return status,
    };
    let windowed = windowed_from_parts(record, &*sample);
    match extract(&windowed) {
        Ok(vector) => {
            std::ptr::copy_nonoverlapping(vector.values.as_ptr(), out_features, FEATURE_COUNT);
            let mask = vector.mask();
            std::ptr::copy_nonoverlapping(mask.as_ptr(), out_mask, 3);
            TwnetStatus::Ok
        }
        Err(e) => fail(TwnetStatus::InvalidArgument, e.to_string()),
    }
}

/// Load a model checkpoint from a file path.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn twnet_model_load(path: *const c_char, out: *mut *mut TwnetModel) -> TwnetStatus {
    if path.is_null() || out.is_null() {
        return fail(TwnetStatus::NullPointer, "path/out pointer is null");
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(p) => p,
        Err(_) => return fail(TwnetStatus::InvalidString, "path is not valid UTF-8"),
    };
    match load_checkpoint(path) {
        Ok(checkpoint) => {
            *out = Box::into_raw(Box::new(TwnetModel { checkpoint }));
            TwnetStatus::Ok
        }
        Err(e @ twnet::model::ModelError::Io(..)) => fail(TwnetStatus::Io, e.to_string()),
        Err(e) => fail(TwnetStatus::Parse, e.to_string()),
    }
}

/// Release a model handle.
///
/// # Safety
/// `model` must come from `twnet_model_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn twnet_model_free(model: *mut TwnetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of classes the model scores, or 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn twnet_model_class_count(model: *const TwnetModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).checkpoint.classes.len()
}

/// Copy the name of class `index` into `buf` (NUL-terminated, truncated to
/// `len` bytes).
///
/// # Safety
/// `model` must be a live handle; `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn twnet_model_class_name(
    model: *const TwnetModel,
    index: usize,
    buf: *mut c_char,
    len: usize,
) -> TwnetStatus {
    if model.is_null() || buf.is_null() {
        return fail(TwnetStatus::NullPointer, "model/buf pointer is null");
    }
    let classes = &(*model).checkpoint.classes;
    let Some(name) = classes.get(index) else {
        return fail(TwnetStatus::InvalidArgument, format!("class index {index} out of range"));
    };
    if len == 0 {
        return fail(TwnetStatus::InvalidArgument, "zero-length buffer");
    }
    let bytes = name.as_bytes();
    let n = bytes.len().min(len - 1);
    std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
    *buf.add(n) = 0;
    TwnetStatus::Ok
}

fn scores_for(model: &TwnetModel, windowed: &WindowedSample) -> Result<Vec<f64>, String> {
    let vector = extract(windowed).map_err(|e| e.to_string())?;
    let (inputs, branch) = model.checkpoint.params.prepare(&vector);
    Ok(model.checkpoint.params.forward_active(&inputs, branch))
}

/// Pre-softmax class scores for one flow plus its window sample.
/// `scores_len` must equal the model's class count.
///
/// # Safety
/// `model` must be a live handle; `out_scores` must point to `scores_len`
/// writable f64.
#[no_mangle]
pub unsafe extern "C" fn twnet_model_score(
    model: *const TwnetModel,
    flow: *const TwnetFlow,
    sample: *const TwnetSample,
    out_scores: *mut f64,
    scores_len: usize,
) -> TwnetStatus {
    if model.is_null() || sample.is_null() || out_scores.is_null() {
        return fail(TwnetStatus::NullPointer, "model/sample/output pointer is null");
    }
    let model = &*model;
    if scores_len != model.checkpoint.classes.len() {
        return fail(
            TwnetStatus::InvalidArgument,
            format!("scores buffer holds {scores_len}, model has {} classes", model.checkpoint.classes.len()),
        );
    }
    let record = match flow_from_c(flow) {
        Ok(r) => r,
        Err(status) => return status,
    };
    let windowed = windowed_from_parts(record, &*sample);
    match scores_for(model, &windowed) {
        Ok(scores) => {
            std::ptr::copy_nonoverlapping(scores.as_ptr(), out_scores, scores_len);
            TwnetStatus::Ok
        }
        Err(e) => fail(TwnetStatus::InvalidArgument, e),
    }
}

/// Predicted class index (argmax of the scores, ties to the lowest index).
///
/// # Safety
/// `model` must be a live handle; `out_class` must be valid.
#[no_mangle]
pub unsafe extern "C" fn twnet_model_predict(
    model: *const TwnetModel,
    flow: *const TwnetFlow,
    sample: *const TwnetSample,
    out_class: *mut usize,
) -> TwnetStatus {
    if model.is_null() || sample.is_null() || out_class.is_null() {
        return fail(TwnetStatus::NullPointer, "model/sample/output pointer is null");
    }
    let model_ref = &*model;
    let record = match flow_from_c(flow) {
        Ok(r) => r,
        Err(status) => return status,
    };
    let windowed = windowed_from_parts(record, &*sample);
    match scores_for(model_ref, &windowed) {
        Ok(scores) => {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for (i, &v) in scores.iter().enumerate() {
                if v > best_v {
                    best_v = v;
                    best = i;
                }
            }
            *out_class = best;
            TwnetStatus::Ok
        }
        Err(e) => fail(TwnetStatus::InvalidArgument, e),
    }
}
