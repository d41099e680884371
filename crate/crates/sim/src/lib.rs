//! A deterministic SIMT device simulator.
//!
//! Executes compiled kernels ([`jacc_core::lir::LirFunc`], usually obtained
//! from [`jacc_core::pipeline::compile`] or [`jacc_core::vka::assemble`])
//! under the fine-grained device execution model:
//!
//! * the launch's iteration space is split into equal-sized **thread
//!   groups**; groups execute in a seed-determined random order, sequentially
//!   or on a worker pool;
//! * within a group, threads are co-scheduled round-robin in fixed-size
//!   instruction slices (1 by default — the harshest schedule the model
//!   permits, which is exactly what makes it a good test oracle);
//! * `barrier()` suspends a thread until every live thread of its group
//!   arrives; a thread exiting while peers wait is a hard
//!   [`SimTrap::BarrierDivergence`] error, not undefined behavior;
//! * memory is split into global (byte-addressed, shared by all threads),
//!   constant (read-only for kernels), shared (per-group, zero-initialized
//!   at group start), and private (per-thread) spaces;
//! * atomics are linearizable per 32-bit word; integer accumulation is
//!   therefore exact under any schedule, while f32 accumulation order — and
//!   with it the low bits of the result — is schedule-dependent by design.
//!
//! Instruction semantics are shared with the reference interpreter (the
//! simulator calls the interpreter's exported `alu`/`cast`/`intrinsic`
//! helpers), so for race-free kernels the two produce bit-identical results.
//!
//! Performance counters ([`SimMetrics`]) tally instructions, global memory
//! traffic, shared-memory atomics, divergent branches, and barriers. Counts
//! are accumulated per group and merged, so they are independent of how
//! groups interleave. Metric fine print: `global_loads`/`global_stores`
//! count ordinary loads/stores to global space only (constant, shared, and
//! private traffic is uncounted, as are atomics); `divergent_branches`
//! counts (group, branch site) pairs that saw both outcomes during the
//! launch; a failed launch leaves the device counters untouched.

pub mod mem;

mod exec;

use mem::Region;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::atomic::{AtomicU64, Ordering::Relaxed};

pub use jacc_core::interp::{ArrayData, FieldValue, ScalarValue};
use jacc_core::lir::{LirFunc, ParamKind, RegType};
use jacc_core::types::MemSpace;

/// Thread geometry of one launch: total threads and group shape, per
/// dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LaunchSchedule {
    pub global: [u32; 3],
    pub group: [u32; 3],
}

/// Product of a dimension triple, computed wide enough not to overflow.
fn product(dims: [u32; 3]) -> u64 {
    dims.iter().map(|&d| d as u64).product()
}

impl LaunchSchedule {
    /// Largest group size (thread count product) a device accepts.
    pub const MAX_GROUP_THREADS: u64 = 1024;

    /// One-dimensional schedule: `global` threads in groups of `group`.
    pub fn linear(global: u32, group: u32) -> Self {
        LaunchSchedule { global: [global, 1, 1], group: [group, 1, 1] }
    }

    /// Group count per dimension.
    pub fn groups(&self) -> [u32; 3] {
        [
            self.global[0] / self.group[0].max(1),
            self.global[1] / self.group[1].max(1),
            self.global[2] / self.group[2].max(1),
        ]
    }

    pub fn group_count(&self) -> u64 {
        product(self.groups())
    }

    pub fn threads_per_group(&self) -> u64 {
        product(self.group)
    }

    pub fn total_threads(&self) -> u64 {
        product(self.global)
    }

    pub fn validate(&self) -> Result<(), SimTrap> {
        for d in 0..3 {
            let (g, b) = (self.global[d], self.group[d]);
            if g == 0 || b == 0 {
                return Err(SimTrap::Invalid(format!(
                    "schedule dimension {d} is zero (global {g}, group {b}); every dimension must be at least 1"
                )));
            }
            if g % b != 0 {
                return Err(SimTrap::Invalid(format!(
                    "group size {b} does not divide global size {g} in dimension {d}"
                )));
            }
        }
        if self.threads_per_group() > Self::MAX_GROUP_THREADS {
            return Err(SimTrap::Invalid(format!(
                "group of {} threads exceeds the device maximum of {}",
                self.threads_per_group(),
                Self::MAX_GROUP_THREADS
            )));
        }
        if self.total_threads() > i32::MAX as u64 {
            return Err(SimTrap::Invalid(format!(
                "launch of {} threads exceeds the addressable maximum of {}",
                self.total_threads(),
                i32::MAX
            )));
        }
        Ok(())
    }
}

/// One bound kernel argument.
#[derive(Debug, Clone, PartialEq)]
pub enum SimArg {
    Scalar(ScalarValue),
    Buffer(ArrayData),
    /// Packed composite object (schema layout is the caller's concern).
    Bytes(Vec<u8>),
}

/// Performance counters for one launch (or, via
/// [`Device::read_counters`], accumulated across launches).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SimMetrics {
    pub instructions_executed: u64,
    pub global_loads: u64,
    pub global_stores: u64,
    pub shared_atomics: u64,
    pub divergent_branches: u64,
    pub barriers_executed: u64,
    /// Seed of the group-order permutation (most recent launch).
    pub group_schedule_seed: u64,
}

/// Execution fault. Mirrors the reference interpreter's trap kinds so
/// differential tests can compare like for like.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimTrap {
    #[error("out-of-bounds access on `{array}`: index {index}, length {len}")]
    Bounds { array: String, index: i64, len: usize },
    #[error("arithmetic fault: {0}")]
    Arith(String),
    #[error("barrier divergence in group {group}: a thread exited while {waiting} peer(s) waited")]
    BarrierDivergence { group: usize, waiting: usize },
    #[error("invalid launch: {0}")]
    Invalid(String),
}

/// Everything a successful launch hands back to the host.
#[derive(Debug, Clone, PartialEq)]
pub struct LaunchOutcome {
    /// Final argument values, in parameter order (buffers and objects read
    /// back from device memory).
    pub args: Vec<SimArg>,
    /// Final contents of global and constant fields, in declaration order.
    pub fields: Vec<(String, FieldValue)>,
    /// This launch's counters.
    pub metrics: SimMetrics,
}

/// Simulator tuning knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeviceConfig {
    /// Instructions each thread executes per scheduling turn within its
    /// group. 1 maximizes interleaving stress.
    pub slice: u32,
    /// Worker threads for group execution: 0 uses the process-wide default
    /// pool, 1 forces sequential execution, n > 1 builds a dedicated pool.
    /// Without the `parallel` feature every value runs sequentially.
    pub workers: usize,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        DeviceConfig { slice: 1, workers: 0 }
    }
}

#[derive(Default)]
struct Counters {
    instructions: AtomicU64,
    global_loads: AtomicU64,
    global_stores: AtomicU64,
    shared_atomics: AtomicU64,
    divergent: AtomicU64,
    barriers: AtomicU64,
    last_seed: AtomicU64,
}

/// A simulated device. Cheap to construct; holds only configuration and
/// cumulative counters, so one device can serve many launches.
#[derive(Default)]
pub struct Device {
    config: DeviceConfig,
    counters: Counters,
}

impl Device {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_config(config: DeviceConfig) -> Self {
        Device { config, counters: Counters::default() }
    }

    pub fn config(&self) -> DeviceConfig {
        self.config
    }

    /// Cumulative counters since construction or the last reset. The seed
    /// field carries the most recent launch's seed.
    pub fn read_counters(&self) -> SimMetrics {
        SimMetrics {
            instructions_executed: self.counters.instructions.load(Relaxed),
            global_loads: self.counters.global_loads.load(Relaxed),
            global_stores: self.counters.global_stores.load(Relaxed),
            shared_atomics: self.counters.shared_atomics.load(Relaxed),
            divergent_branches: self.counters.divergent.load(Relaxed),
            barriers_executed: self.counters.barriers.load(Relaxed),
            group_schedule_seed: self.counters.last_seed.load(Relaxed),
        }
    }

    pub fn reset_counters(&self) {
        self.counters.instructions.store(0, Relaxed);
        self.counters.global_loads.store(0, Relaxed);
        self.counters.global_stores.store(0, Relaxed);
        self.counters.shared_atomics.store(0, Relaxed);
        self.counters.divergent.store(0, Relaxed);
        self.counters.barriers.store(0, Relaxed);
        self.counters.last_seed.store(0, Relaxed);
    }

    /// Execute one kernel launch to completion.
    ///
    /// `args` bind the kernel parameters in order; `field_init` optionally
    /// seeds non-atomic global and constant fields (atomic accumulators
    /// always start at zero, and group-/thread-local fields cannot be
    /// initialized from the host). `seed` fixes the group-order permutation.
    ///
    /// On success, all global-memory effects are visible in the returned
    /// [`LaunchOutcome`] and this launch's counters are folded into the
    /// device totals. On a trap the device state (counters included) is as
    /// if the launch never ran; when several groups trap, the trap of the
    /// lowest-numbered group is reported, which keeps the error deterministic
    /// across schedules.
    pub fn launch(
        &self,
        func: &LirFunc,
        sched: &LaunchSchedule,
        args: Vec<SimArg>,
        field_init: &[(String, FieldValue)],
        seed: u64,
    ) -> Result<LaunchOutcome, SimTrap> {
        sched.validate()?;
        func.verify().map_err(SimTrap::Invalid)?;
        let (scalars, buffers) = bind_args(func, args)?;
        let fields = bind_fields(func, field_init)?;

        let machine =
            exec::Machine::new(func, *sched, scalars, buffers, fields, self.config.slice);

        let mut order: Vec<u32> = (0..sched.group_count() as u32).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

        let results = dispatch(&machine, &order, self.config.workers)?;

        // Deterministic trap selection: lowest canonical group id wins.
        if let Some((_, Err(trap))) =
            results.iter().filter(|(_, r)| r.is_err()).min_by_key(|(gid, _)| *gid)
        {
            return Err(trap.clone());
        }

        let mut metrics = SimMetrics { group_schedule_seed: seed, ..SimMetrics::default() };
        for (_, r) in &results {
            let t = r.as_ref().expect("traps handled above");
            metrics.instructions_executed += t.instructions;
            metrics.global_loads += t.global_loads;
            metrics.global_stores += t.global_stores;
            metrics.shared_atomics += t.shared_atomics;
            metrics.barriers_executed += t.barriers;
            metrics.divergent_branches += t.diverged_sites;
        }
        self.counters.instructions.fetch_add(metrics.instructions_executed, Relaxed);
        self.counters.global_loads.fetch_add(metrics.global_loads, Relaxed);
        self.counters.global_stores.fetch_add(metrics.global_stores, Relaxed);
        self.counters.shared_atomics.fetch_add(metrics.shared_atomics, Relaxed);
        self.counters.divergent.fetch_add(metrics.divergent_branches, Relaxed);
        self.counters.barriers.fetch_add(metrics.barriers_executed, Relaxed);
        self.counters.last_seed.store(seed, Relaxed);

        Ok(read_back(func, machine, metrics))
    }
}

fn bind_args(
    func: &LirFunc,
    args: Vec<SimArg>,
) -> Result<(Vec<Option<ScalarValue>>, Vec<Option<Region>>), SimTrap> {
    if args.len() != func.params.len() {
        return Err(SimTrap::Invalid(format!(
            "kernel `{}` takes {} arguments, got {}",
            func.name,
            func.params.len(),
            args.len()
        )));
    }
    let mut scalars = Vec::with_capacity(args.len());
    let mut buffers = Vec::with_capacity(args.len());
    for (p, a) in func.params.iter().zip(args) {
        let (s, b) = match (p.kind, a) {
            (ParamKind::Scalar(st), SimArg::Scalar(v)) if v.ty() == st => (Some(v), None),
            (ParamKind::Buffer(st), SimArg::Buffer(d)) if d.elem_type() == st => {
                (None, Some(Region::from_array(&d)))
            }
            (ParamKind::Object { size }, SimArg::Bytes(b)) if b.len() == size as usize => {
                (None, Some(Region::from_bytes(&b)))
            }
            (kind, arg) => {
                return Err(SimTrap::Invalid(format!(
                    "argument for `{}` does not match its declared kind ({kind:?} vs {})",
                    p.name,
                    describe_arg(&arg)
                )))
            }
        };
        scalars.push(s);
        buffers.push(b);
    }
    Ok((scalars, buffers))
}

fn describe_arg(a: &SimArg) -> String {
    match a {
        SimArg::Scalar(v) => format!("scalar {}", v.ty()),
        SimArg::Buffer(d) => format!("{}[{}]", d.elem_type(), d.len()),
        SimArg::Bytes(b) => format!("{} object bytes", b.len()),
    }
}

fn bind_fields(
    func: &LirFunc,
    field_init: &[(String, FieldValue)],
) -> Result<Vec<Option<Region>>, SimTrap> {
    let mut fields = Vec::with_capacity(func.fields.len());
    for f in &func.fields {
        let init = field_init.iter().find(|(n, _)| n == &f.name).map(|(_, v)| v);
        let region = match f.space {
            MemSpace::Global | MemSpace::Constant => {
                if f.atomic.is_some() {
                    // Accumulators start at the additive identity regardless
                    // of host wishes, mirroring the reference interpreter.
                    Some(Region::zeroed(f.elem, f.count as usize))
                } else if let Some(init) = init {
                    Some(region_from_init(f, init)?)
                } else {
                    Some(Region::zeroed(f.elem, f.count as usize))
                }
            }
            MemSpace::Shared | MemSpace::Private => {
                if init.is_some() {
                    return Err(SimTrap::Invalid(format!(
                        "field `{}` lives in {} space and cannot be initialized from the host",
                        f.name,
                        f.space.keyword()
                    )));
                }
                None
            }
        };
        fields.push(region);
    }
    Ok(fields)
}

fn region_from_init(f: &jacc_core::lir::LirField, init: &FieldValue) -> Result<Region, SimTrap> {
    match init {
        FieldValue::Scalar(v) if f.count == 1 && v.ty() == f.elem => {
            let r = Region::zeroed(f.elem, 1);
            r.store(RegType::of(f.elem), 0, *v)
                .expect("scalar field slot is addressable");
            Ok(r)
        }
        FieldValue::Array(d) if d.elem_type() == f.elem && d.len() == f.count as usize => {
            Ok(Region::from_array(d))
        }
        _ => Err(SimTrap::Invalid(format!(
            "initial value for field `{}` does not match {}[{}]",
            f.name, f.elem, f.count
        ))),
    }
}

fn read_back(func: &LirFunc, machine: exec::Machine<'_>, metrics: SimMetrics) -> LaunchOutcome {
    let mut args = Vec::with_capacity(func.params.len());
    for (i, p) in func.params.iter().enumerate() {
        let arg = match p.kind {
            ParamKind::Scalar(_) => {
                SimArg::Scalar(machine.scalars[i].expect("scalar bound"))
            }
            ParamKind::Buffer(_) => {
                SimArg::Buffer(machine.buffers[i].as_ref().expect("buffer bound").to_array())
            }
            ParamKind::Object { .. } => {
                SimArg::Bytes(machine.buffers[i].as_ref().expect("object bound").to_bytes())
            }
        };
        args.push(arg);
    }
    let mut fields = Vec::new();
    for (i, f) in func.fields.iter().enumerate() {
        if !matches!(f.space, MemSpace::Global | MemSpace::Constant) {
            continue;
        }
        let region = machine.fields[i].as_ref().expect("device field bound");
        let value = if f.count == 1 {
            FieldValue::Scalar(region.to_array().get(0))
        } else {
            FieldValue::Array(region.to_array())
        };
        fields.push((f.name.clone(), value));
    }
    LaunchOutcome { args, fields, metrics }
}

type GroupResult = (u32, Result<exec::GroupTally, SimTrap>);

#[cfg(feature = "parallel")]
fn dispatch(
    machine: &exec::Machine<'_>,
    order: &[u32],
    workers: usize,
) -> Result<Vec<GroupResult>, SimTrap> {
    use rayon::prelude::*;
    let run = |gid: &u32| (*gid, exec::run_group(machine, *gid as usize));
    match workers {
        1 => Ok(order.iter().map(run).collect()),
        0 => Ok(order.par_iter().map(run).collect()),
        n => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| SimTrap::Invalid(format!("worker pool: {e}")))?;
            Ok(pool.install(|| order.par_iter().map(run).collect()))
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn dispatch(
    machine: &exec::Machine<'_>,
    order: &[u32],
    _workers: usize,
) -> Result<Vec<GroupResult>, SimTrap> {
    Ok(order.iter().map(|gid| (*gid, exec::run_group(machine, *gid as usize))).collect())
}
