//! C ABI over the trimem runtime.
//!
//! Every entry point returns a [`TrimemStatus`]. On failure the message is
//! kept per thread and read back with [`trimem_last_error`]. Systems are
//! opaque heap handles created by [`trimem_system_new`] or
//! [`trimem_system_load`] and released with [`trimem_system_free`].
//!
//! Panics never cross the boundary; they surface as `TRIMEM_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use trimem::harness::checkpoint;
use trimem::harness::metrics::{forgetting, MetricsMatrix};
use trimem::harness::RunConfig;
use trimem::lifecycle::{System, TickInput};
use trimem::net::Sample;
use trimem::{Error, NightReport};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrimemStatus {
    Ok = 0,
    Config = 1,
    Runtime = 2,
    Io = 3,
    NullPointer = 4,
    InvalidArgument = 5,
    Shape = 6,
    Numeric = 7,
    Capacity = 8,
    Format = 9,
    Corruption = 10,
    Phase = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

impl From<&Error> for TrimemStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) => TrimemStatus::Config,
            Error::Io(_) => TrimemStatus::Io,
            Error::Argument(_) | Error::UnknownContext(_) => TrimemStatus::InvalidArgument,
            Error::Shape { .. } => TrimemStatus::Shape,
            Error::Numeric(_) => TrimemStatus::Numeric,
            Error::Capacity { .. } => TrimemStatus::Capacity,
            Error::Format(_) => TrimemStatus::Format,
            Error::Corruption(_) => TrimemStatus::Corruption,
            Error::Phase(_) => TrimemStatus::Phase,
            Error::Consistency(_) | Error::EmptyBuffer => TrimemStatus::Runtime,
        }
    }
}

/// Outcome of one inference.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrimemTickResult {
    pub prediction: u32,
    pub expert: u32,
    pub success: bool,
    pub microsleep_ran: bool,
    /// Synapses masked by the microsleep, 0 when none ran.
    pub deactivated: u64,
    /// The tick closed the day; fetch it with `trimem_last_day`.
    pub night_ran: bool,
}

/// Summary of a closed day.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrimemDayReport {
    pub day_index: u64,
    pub inferences: u64,
    pub successes: u64,
    pub accuracy: f64,
    pub novelty: f64,
    pub microsleeps: u64,
    pub deactivated: u64,
    pub pruned: u64,
    pub promoted: u64,
    pub graduated: u64,
    pub active_count: u64,
    pub stm: u64,
    pub ltm: u64,
    pub pm: u64,
}

#[derive(Default)]
struct DayTally {
    inferences: u64,
    successes: u64,
    microsleeps: u64,
    deactivated: u64,
    per_expert: Vec<u64>,
}

/// Opaque system handle.
pub struct TrimemSystem {
    system: System,
    tally: DayTally,
    last_day: Option<TrimemDayReport>,
}

impl TrimemSystem {
    fn wrap(system: System) -> Self {
        Self {
            system,
            tally: DayTally::default(),
            last_day: None,
        }
    }

    fn close_day(&mut self, day_index: u64, nights: &[NightReport]) {
        let t = std::mem::take(&mut self.tally);
        let weight: u64 = nights.iter().map(|n| t.per_expert.get(n.expert).copied().unwrap_or(0)).sum();
        let novel: f64 = nights
            .iter()
            .map(|n| n.novelty * t.per_expert.get(n.expert).copied().unwrap_or(0) as f64)
            .sum();
        let mut hist = [0u64; 3];
        for e in &self.system.pool.experts {
            for (h, v) in hist.iter_mut().zip(e.meta.tier_histogram()) {
                *h += v as u64;
            }
        }
        self.last_day = Some(TrimemDayReport {
            day_index,
            inferences: t.inferences,
            successes: t.successes,
            accuracy: if t.inferences > 0 { t.successes as f64 / t.inferences as f64 } else { 0.0 },
            novelty: if weight > 0 { novel / weight as f64 } else { 0.0 },
            microsleeps: t.microsleeps,
            deactivated: t.deactivated,
            pruned: nights.iter().map(|n| n.pruned_count as u64).sum(),
            promoted: nights.iter().map(|n| n.promoted as u64).sum(),
            graduated: nights.iter().map(|n| n.graduated as u64).sum(),
            active_count: self.system.pool.active_count() as u64,
            stm: hist[0],
            ltm: hist[1],
            pm: hist[2],
        });
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = clean);
}

fn fail(status: TrimemStatus, msg: &str) -> TrimemStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> TrimemStatus {
    fail(TrimemStatus::from(&e), &e.to_string())
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), TrimemStatus>) -> TrimemStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TrimemStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => fail(TrimemStatus::Panic, "internal panic"),
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, TrimemStatus> {
    if p.is_null() {
        return Err(fail(TrimemStatus::NullPointer, &format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(TrimemStatus::InvalidArgument, &format!("{what} is not UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], TrimemStatus> {
    if p.is_null() {
        if len == 0 {
            return Ok(&[]);
        }
        return Err(fail(TrimemStatus::NullPointer, &format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a>(p: *mut TrimemSystem) -> Result<&'a mut TrimemSystem, TrimemStatus> {
    p.as_mut().ok_or_else(|| fail(TrimemStatus::NullPointer, "system handle is null"))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, TrimemStatus> {
    p.as_mut().ok_or_else(|| fail(TrimemStatus::NullPointer, &format!("{what} is null")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn trimem_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn trimem_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds a system from configuration text (the same format the command
/// line reads; empty text means all defaults). The `[run] baseline` key
/// selects the regime. Stream and run settings are otherwise ignored.
///
/// # Safety
/// `config` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn trimem_system_new(
    config: *const c_char,
    seed: u64,
    out_system: *mut *mut TrimemSystem,
) -> TrimemStatus {
    guard(|| {
        let slot = out(out_system, "out_system")?;
        *slot = ptr::null_mut();
        let cfg = RunConfig::parse_fields(text(config, "config")?).map_err(from_error)?;
        let system = System::new(cfg.system_for(cfg.baseline, seed)).map_err(from_error)?;
        *slot = Box::into_raw(Box::new(TrimemSystem::wrap(system)));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `system` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn trimem_system_free(system: *mut TrimemSystem) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}

/// One inference with learning. `feedback` is a 1-5 rating or NaN for none.
///
/// # Safety
/// `system` must be a live handle, `context` NUL-terminated, `input` must
/// point at `input_len` doubles, and `result` may be null.
#[no_mangle]
pub unsafe extern "C" fn trimem_tick(
    system: *mut TrimemSystem,
    context: *const c_char,
    input: *const f64,
    input_len: usize,
    target: u32,
    feedback: f64,
    result: *mut TrimemTickResult,
) -> TrimemStatus {
    guard(|| {
        let h = handle(system)?;
        let ctx = text(context, "context")?;
        let x = slice(input, input_len, "input")?;
        let mut tick = TickInput::new(ctx, Sample::new(x.to_vec(), target as usize));
        tick.feedback = (!feedback.is_nan()).then_some(feedback);
        let day_index = h.system.lifecycle.day_index;
        let o = h.system.tick(tick).map_err(from_error)?;

        let t = &mut h.tally;
        t.inferences += 1;
        t.successes += o.success as u64;
        if let Some(d) = o.microsleep {
            t.microsleeps += 1;
            t.deactivated += d as u64;
        }
        if t.per_expert.len() <= o.expert {
            t.per_expert.resize(o.expert + 1, 0);
        }
        t.per_expert[o.expert] += 1;
        if let Some(nights) = &o.night {
            h.close_day(day_index, nights);
        }
        if let Some(r) = result.as_mut() {
            *r = TrimemTickResult {
                prediction: o.prediction as u32,
                expert: o.expert as u32,
                success: o.success,
                microsleep_ran: o.microsleep.is_some(),
                deactivated: o.microsleep.unwrap_or(0) as u64,
                night_ran: o.night.is_some(),
            };
        }
        Ok(())
    })
}

/// Runs the nightly pass now, closing the current day, and writes its
/// summary to `report` (which may be null).
///
/// # Safety
/// `system` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn trimem_end_day(system: *mut TrimemSystem, report: *mut TrimemDayReport) -> TrimemStatus {
    guard(|| {
        let h = handle(system)?;
        let day_index = h.system.lifecycle.day_index;
        let nights = h.system.run_nightly().map_err(from_error)?;
        h.close_day(day_index, &nights);
        if let Some(r) = report.as_mut() {
            *r = h.last_day.expect("day just closed");
        }
        Ok(())
    })
}

/// Summary of the most recently closed day.
///
/// # Safety
/// `system` must be a live handle and `report` valid.
#[no_mangle]
pub unsafe extern "C" fn trimem_last_day(system: *mut TrimemSystem, report: *mut TrimemDayReport) -> TrimemStatus {
    guard(|| {
        let h = handle(system)?;
        let r = out(report, "report")?;
        *r = h
            .last_day
            .ok_or_else(|| fail(TrimemStatus::Phase, "no day has closed yet"))?;
        Ok(())
    })
}

/// Output logits for `input` without learning. `output` must hold at least
/// `trimem_output_dim` doubles; `output_cap` is its length.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn trimem_predict(
    system: *mut TrimemSystem,
    context: *const c_char,
    input: *const f64,
    input_len: usize,
    output: *mut f64,
    output_cap: usize,
) -> TrimemStatus {
    guard(|| {
        let h = handle(system)?;
        let ctx = text(context, "context")?;
        let x = slice(input, input_len, "input")?;
        let need = h.system.config.network.output_dim();
        if output.is_null() {
            return Err(fail(TrimemStatus::NullPointer, "output is null"));
        }
        if output_cap < need {
            return Err(fail(
                TrimemStatus::BufferTooSmall,
                &format!("output needs {need} slots, got {output_cap}"),
            ));
        }
        let y = h.system.predict(ctx, x).map_err(from_error)?;
        std::slice::from_raw_parts_mut(output, need).copy_from_slice(&y);
        Ok(())
    })
}

/// Writes a checkpoint. Only allowed between days.
///
/// # Safety
/// `system` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn trimem_system_save(system: *mut TrimemSystem, path: *const c_char) -> TrimemStatus {
    guard(|| {
        let h = handle(system)?;
        let p = text(path, "path")?;
        checkpoint::save(&h.system, Path::new(p)).map_err(from_error)
    })
}

/// Restores a system from a checkpoint.
///
/// # Safety
/// `path` must be NUL-terminated and `out_system` valid.
#[no_mangle]
pub unsafe extern "C" fn trimem_system_load(path: *const c_char, out_system: *mut *mut TrimemSystem) -> TrimemStatus {
    guard(|| {
        let slot = out(out_system, "out_system")?;
        *slot = ptr::null_mut();
        let p = text(path, "path")?;
        let system = checkpoint::load(Path::new(p)).map_err(from_error)?;
        *slot = Box::into_raw(Box::new(TrimemSystem::wrap(system)));
        Ok(())
    })
}

unsafe fn query(system: *const TrimemSystem, f: impl Fn(&System) -> u64) -> u64 {
    system.as_ref().map_or(0, |h| f(&h.system))
}

/// Active synapses over all experts; 0 for a null handle.
///
/// # Safety
/// `system` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn trimem_active_count(system: *const TrimemSystem) -> u64 {
    query(system, |s| s.pool.active_count() as u64)
}

/// Index of the current day; 0 for a null handle.
///
/// # Safety
/// `system` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn trimem_day_index(system: *const TrimemSystem) -> u64 {
    query(system, |s| s.lifecycle.day_index)
}

/// Number of experts; 0 for a null handle.
///
/// # Safety
/// `system` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn trimem_expert_count(system: *const TrimemSystem) -> u64 {
    query(system, |s| s.pool.len() as u64)
}

/// # Safety
/// `system` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn trimem_input_dim(system: *const TrimemSystem) -> u64 {
    query(system, |s| s.config.network.input_dim() as u64)
}

/// # Safety
/// `system` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn trimem_output_dim(system: *const TrimemSystem) -> u64 {
    query(system, |s| s.config.network.output_dim() as u64)
}

/// Checksum over weights, metadata, buffers and RNG position.
///
/// # Safety
/// `system` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn trimem_checksum(system: *const TrimemSystem) -> u64 {
    query(system, |s| s.checksum())
}

/// Forgetting from an `n_tasks` x `n_tasks` row-major accuracy matrix where
/// row `i` holds accuracies after training task `i` (entries above the
/// diagonal are ignored). Writes `n_tasks - 1` per-task values into
/// `per_task` (may be null) and the mean into `mean`.
///
/// # Safety
/// `accuracy` must hold `n_tasks * n_tasks` doubles and `per_task`, when
/// non-null, `n_tasks - 1`.
#[no_mangle]
pub unsafe extern "C" fn trimem_forgetting(
    accuracy: *const f64,
    n_tasks: usize,
    per_task: *mut f64,
    mean: *mut f64,
) -> TrimemStatus {
    guard(|| {
        let a = slice(accuracy, n_tasks * n_tasks, "accuracy")?;
        let m_out = out(mean, "mean")?;
        let mut m = MetricsMatrix::new();
        for i in 0..n_tasks {
            m.push_row(a[i * n_tasks..i * n_tasks + i + 1].to_vec()).map_err(from_error)?;
        }
        let f = forgetting(&m);
        if !per_task.is_null() {
            std::slice::from_raw_parts_mut(per_task, f.per_task.len()).copy_from_slice(&f.per_task);
        }
        *m_out = f.mean;
        Ok(())
    })
}
