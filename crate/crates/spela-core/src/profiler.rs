//! Compute/memory cost accounting for training runs.
//!
//! Counts MACCs (multiply-accumulates) for forward passes and weight
//! updates, and tracks the peak number of activation scalars retained for
//! pending updates. Memory is modeled in scalar counts, not bytes, so the
//! numbers are deterministic and platform-free.

use crate::error::{Result, SpelaError};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Mutex, MutexGuard, OnceLock};

static ENABLED: AtomicBool = AtomicBool::new(false);
static RUN_ACTIVE: AtomicBool = AtomicBool::new(false);
static FORWARD_MACCS: AtomicU64 = AtomicU64::new(0);
static UPDATE_MACCS: AtomicU64 = AtomicU64::new(0);
static STORED_NOW: AtomicU64 = AtomicU64::new(0);
static STORED_PEAK: AtomicU64 = AtomicU64::new(0);

static SNAPSHOTS: OnceLock<Mutex<Vec<EpochSnapshot>>> = OnceLock::new();
static ATTACH_LOCK: OnceLock<Mutex<()>> = OnceLock::new();

fn snapshots() -> &'static Mutex<Vec<EpochSnapshot>> {
    SNAPSHOTS.get_or_init(|| Mutex::new(Vec::new()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochSnapshot {
    pub epoch: usize,
    pub forward_maccs: u64,
    pub update_maccs: u64,
    pub peak_stored_activation_scalars: u64,
}

/// Counter totals observed by an attached profiler.
#[derive(Debug, Clone)]
pub struct CostLedger {
    pub forward_maccs: u64,
    pub update_maccs: u64,
    pub peak_stored_activation_scalars: u64,
    pub model_param_scalars: u64,
    pub epochs: Vec<EpochSnapshot>,
}

/// Holds the profiler for the duration of one instrumented run.
pub struct ProfilerGuard {
    _lock: MutexGuard<'static, ()>,
    model_param_scalars: u64,
}

fn reset_counters() {
    FORWARD_MACCS.store(0, Ordering::SeqCst);
    UPDATE_MACCS.store(0, Ordering::SeqCst);
    STORED_NOW.store(0, Ordering::SeqCst);
    STORED_PEAK.store(0, Ordering::SeqCst);
    snapshots().lock().unwrap().clear();
}

/// Attach the profiler. Fails if a training run is already in progress or
/// another profiler is attached.
pub fn attach() -> Result<ProfilerGuard> {
    if RUN_ACTIVE.load(Ordering::SeqCst) {
        return Err(SpelaError::ProfilerAttach);
    }
    let lock = ATTACH_LOCK
        .get_or_init(|| Mutex::new(()))
        .try_lock()
        .map_err(|_| SpelaError::ProfilerAttach)?;
    reset_counters();
    ENABLED.store(true, Ordering::SeqCst);
    Ok(ProfilerGuard {
        _lock: lock,
        model_param_scalars: 0,
    })
}

/// Like [`attach`], but waits for any currently attached profiler to detach.
/// Intended for test suites where instrumented runs may overlap.
pub fn attach_blocking() -> ProfilerGuard {
    let lock = ATTACH_LOCK
        .get_or_init(|| Mutex::new(()))
        .lock()
        .unwrap();
    reset_counters();
    ENABLED.store(true, Ordering::SeqCst);
    ProfilerGuard {
        _lock: lock,
        model_param_scalars: 0,
    }
}

impl Drop for ProfilerGuard {
    fn drop(&mut self) {
        ENABLED.store(false, Ordering::SeqCst);
        RUN_ACTIVE.store(false, Ordering::SeqCst);
    }
}

impl ProfilerGuard {
    pub fn set_model_param_scalars(&mut self, n: u64) {
        self.model_param_scalars = n;
    }

    pub fn ledger(&self) -> CostLedger {
        CostLedger {
            forward_maccs: FORWARD_MACCS.load(Ordering::SeqCst),
            update_maccs: UPDATE_MACCS.load(Ordering::SeqCst),
            peak_stored_activation_scalars: STORED_PEAK.load(Ordering::SeqCst),
            model_param_scalars: self.model_param_scalars,
            epochs: snapshots().lock().unwrap().clone(),
        }
    }
}

pub fn enabled() -> bool {
    ENABLED.load(Ordering::Relaxed)
}

/// Called by training loops when they start/stop, so a late attach can be
/// rejected.
pub fn mark_run_active(active: bool) {
    RUN_ACTIVE.store(active, Ordering::SeqCst);
}

pub fn add_forward_maccs(n: u64) {
    if enabled() {
        FORWARD_MACCS.fetch_add(n, Ordering::Relaxed);
    }
}

pub fn add_update_maccs(n: u64) {
    if enabled() {
        UPDATE_MACCS.fetch_add(n, Ordering::Relaxed);
    }
}

/// Record that `n` activation scalars are now retained for a pending update.
pub fn activation_alloc(n: u64) {
    if enabled() {
        let now = STORED_NOW.fetch_add(n, Ordering::SeqCst) + n;
        STORED_PEAK.fetch_max(now, Ordering::SeqCst);
    }
}

pub fn activation_release(n: u64) {
    if enabled() {
        STORED_NOW.fetch_sub(n, Ordering::SeqCst);
    }
}

pub fn epoch_snapshot(epoch: usize) {
    if enabled() {
        snapshots().lock().unwrap().push(EpochSnapshot {
            epoch,
            forward_maccs: FORWARD_MACCS.load(Ordering::SeqCst),
            update_maccs: UPDATE_MACCS.load(Ordering::SeqCst),
            peak_stored_activation_scalars: STORED_PEAK.load(Ordering::SeqCst),
        });
    }
}

/// Networks report their parameter footprint through this trait.
pub trait ParamCount {
    fn param_scalars(&self) -> u64;
}

/// Total parameter scalars held by a model, frozen embedding heads included.
pub fn model_memory<T: ParamCount>(net: &T) -> u64 {
    net.param_scalars()
}

impl CostLedger {
    pub fn report_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("forward MACCs            {}\n", self.forward_maccs));
        s.push_str(&format!("update MACCs             {}\n", self.update_maccs));
        s.push_str(&format!(
            "peak stored activations  {}\n",
            self.peak_stored_activation_scalars
        ));
        s.push_str(&format!(
            "model param scalars      {}\n",
            self.model_param_scalars
        ));
        s
    }

    pub fn report_csv(&self) -> String {
        let mut s = String::from("epoch,forward_maccs,update_maccs,peak_stored_activation_scalars\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch, e.forward_maccs, e.update_maccs, e.peak_stored_activation_scalars
            ));
        }
        s.push_str(&format!(
            "total,{},{},{}\n",
            self.forward_maccs, self.update_maccs, self.peak_stored_activation_scalars
        ));
        s
    }
}
