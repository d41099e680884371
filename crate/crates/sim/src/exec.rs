//! The group execution engine.
//!
//! One launch is split into thread groups; each group runs to completion on a
//! single OS thread, its threads co-scheduled round-robin in fixed-size
//! instruction slices (1 by default — the harshest schedule the model
//! permits). All intra-group state (shared memory, private memory, barrier
//! bookkeeping) therefore needs no synchronization; cross-group interaction
//! funnels through the atomic word cells of global regions.
//!
//! Arithmetic, comparisons, conversions, and math intrinsics delegate to the
//! reference interpreter's exported kernels (`alu`, `alu_cmp`, `alu_un`,
//! `cast`, `intrinsic`, `atomic_combine`), so the two execution paths cannot
//! drift apart bit-wise.
//!
//! Determinism: within a group, execution is fully deterministic (fixed
//! round-robin order, fixed slice). Across groups, order is the seeded
//! permutation, and under a worker pool groups genuinely interleave; every
//! cross-group effect goes through linearizable per-word operations, so
//! integer atomic accumulation is exact regardless of order, while f32
//! accumulation order (and with it the low bits of the sum) is
//! schedule-dependent by design.

use crate::mem::{AccessFault, Region};
use crate::{LaunchSchedule, SimTrap};
use jacc_core::diag::Span;
use jacc_core::interp::{self, ScalarValue};
use jacc_core::lir::{
    AddrBase, Address, AluOp, BasicBlock, Inst, LirFunc, Operand, Reg, RegType, Terminator,
    TrapKind,
};
use jacc_core::types::{MemSpace, ScalarType, ThreadBuiltin};

/// Immutable launch-wide state shared by every worker.
pub(crate) struct Machine<'a> {
    pub func: &'a LirFunc,
    pub sched: LaunchSchedule,
    /// Per parameter index: bound scalar value (scalar params only).
    pub scalars: Vec<Option<ScalarValue>>,
    /// Per parameter index: bound memory region (buffer/object params only).
    pub buffers: Vec<Option<Region>>,
    /// Per field index: global or constant region (other spaces are
    /// group-/thread-local and live in [`Group`]).
    pub fields: Vec<Option<Region>>,
    /// Block id → divergence-site ordinal, for blocks ending in a
    /// conditional branch.
    condbr_site: Vec<Option<usize>>,
    pub site_count: usize,
    pub slice: u32,
}

impl<'a> Machine<'a> {
    pub fn new(
        func: &'a LirFunc,
        sched: LaunchSchedule,
        scalars: Vec<Option<ScalarValue>>,
        buffers: Vec<Option<Region>>,
        fields: Vec<Option<Region>>,
        slice: u32,
    ) -> Self {
        let mut condbr_site = Vec::with_capacity(func.blocks.len());
        let mut site_count = 0;
        for b in &func.blocks {
            if matches!(b.term, Terminator::CondBr { .. }) {
                condbr_site.push(Some(site_count));
                site_count += 1;
            } else {
                condbr_site.push(None);
            }
        }
        Machine { func, sched, scalars, buffers, fields, condbr_site, site_count, slice }
    }
}

/// Per-group metric tally, merged into the launch totals once the group
/// retires. Keeping tallies group-local makes the totals independent of how
/// groups interleave.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub(crate) struct GroupTally {
    pub instructions: u64,
    pub global_loads: u64,
    pub global_stores: u64,
    pub shared_atomics: u64,
    pub barriers: u64,
    /// Conditional-branch sites that saw both outcomes within this group.
    pub diverged_sites: u64,
}

/// Group-local state: coordinates plus shared/private regions.
struct Group {
    coords: [u32; 3],
    /// Per field index; `Some` only for shared fields.
    shared: Vec<Option<Region>>,
    /// Per (thread, field), flattened as `t * fields.len() + f`; `Some` only
    /// for private fields. Empty when the kernel has none.
    private: Vec<Option<Region>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TState {
    Ready,
    Parked,
    Done,
}

struct Thread {
    coords: [u32; 3],
    regs: Vec<ScalarValue>,
    block: usize,
    /// Next instruction index; `== instrs.len()` selects the terminator.
    ip: usize,
    state: TState,
}

enum Effect {
    Continue,
    /// Arrived at a barrier; the scheduler resumes the thread when the whole
    /// group has arrived.
    Parked,
    /// Executed `ret`.
    Retired,
}

fn zero_of(ty: RegType) -> ScalarValue {
    ScalarValue::zero(scalar_of(ty))
}

fn scalar_of(ty: RegType) -> ScalarType {
    match ty {
        RegType::Pred => ScalarType::Bool,
        RegType::I32 => ScalarType::I32,
        RegType::I64 => ScalarType::I64,
        RegType::F32 => ScalarType::F32,
        RegType::F64 => ScalarType::F64,
    }
}

/// Decompose a linear index into 3-D coordinates, dimension 0 fastest.
fn decompose(linear: usize, dims: [u32; 3]) -> [u32; 3] {
    let d0 = dims[0] as usize;
    let d1 = dims[1] as usize;
    [(linear % d0) as u32, ((linear / d0) % d1) as u32, (linear / (d0 * d1)) as u32]
}

fn from_interp(t: interp::Trap) -> SimTrap {
    match t {
        interp::Trap::Bounds { array, index, len } => SimTrap::Bounds { array, index, len },
        interp::Trap::Arith(m) => SimTrap::Arith(m),
        interp::Trap::Launch(m) => SimTrap::Invalid(m),
    }
}

/// Run one thread group to completion. Deterministic given the machine
/// state: the in-group schedule is a fixed round-robin.
pub(crate) fn run_group(m: &Machine<'_>, gid: usize) -> Result<GroupTally, SimTrap> {
    let group_dims = m.sched.group;
    let nt = (group_dims[0] * group_dims[1] * group_dims[2]) as usize;
    let nfields = m.func.fields.len();

    let shared: Vec<Option<Region>> = m
        .func
        .fields
        .iter()
        .map(|f| {
            (f.space == MemSpace::Shared).then(|| Region::zeroed(f.elem, f.count as usize))
        })
        .collect();
    let any_private = m.func.fields.iter().any(|f| f.space == MemSpace::Private);
    let private: Vec<Option<Region>> = if any_private {
        (0..nt)
            .flat_map(|_| {
                m.func.fields.iter().map(|f| {
                    (f.space == MemSpace::Private)
                        .then(|| Region::zeroed(f.elem, f.count as usize))
                })
            })
            .collect()
    } else {
        Vec::new()
    };
    let g = Group { coords: decompose(gid, m.sched.groups()), shared, private };

    let mut threads: Vec<Thread> = (0..nt)
        .map(|t| Thread {
            coords: decompose(t, group_dims),
            regs: m.func.regs.iter().map(|&ty| zero_of(ty)).collect(),
            block: 0,
            ip: 0,
            state: TState::Ready,
        })
        .collect();

    let mut tally = GroupTally::default();
    let mut seen = vec![0u8; m.site_count];
    let mut live = nt;
    let mut parked = 0usize;
    let slice = m.slice.max(1);

    while live > 0 {
        let mut progressed = false;
        for t in 0..threads.len() {
            if threads[t].state != TState::Ready {
                continue;
            }
            progressed = true;
            'slice: for _ in 0..slice {
                let effect =
                    step(m, &g, nfields, t, &mut threads[t], &mut tally, &mut seen)?;
                match effect {
                    Effect::Continue => {}
                    Effect::Parked => {
                        threads[t].state = TState::Parked;
                        parked += 1;
                        if parked == live {
                            // Whole group arrived: one rendezvous completes.
                            for th in threads.iter_mut() {
                                if th.state == TState::Parked {
                                    th.state = TState::Ready;
                                    th.ip += 1; // consume the barrier
                                }
                            }
                            parked = 0;
                            tally.barriers += 1;
                        }
                        break 'slice;
                    }
                    Effect::Retired => {
                        threads[t].state = TState::Done;
                        live -= 1;
                        if parked > 0 {
                            return Err(SimTrap::BarrierDivergence {
                                group: gid,
                                waiting: parked,
                            });
                        }
                        break 'slice;
                    }
                }
            }
        }
        if !progressed && live > 0 {
            // Unreachable: parking either completes a rendezvous or leaves a
            // ready peer; kept as a hard error rather than a hang.
            return Err(SimTrap::Invalid(format!("group {gid} stopped making progress")));
        }
    }

    tally.diverged_sites = seen.iter().filter(|&&s| s == 3).count() as u64;
    Ok(tally)
}

/// Execute one instruction (or the block terminator) of thread `t`.
fn step(
    m: &Machine<'_>,
    g: &Group,
    nfields: usize,
    t: usize,
    th: &mut Thread,
    tally: &mut GroupTally,
    seen: &mut [u8],
) -> Result<Effect, SimTrap> {
    let blk: &BasicBlock = &m.func.blocks[th.block];
    tally.instructions += 1;

    if th.ip == blk.instrs.len() {
        return match &blk.term {
            Terminator::Br { target } => {
                th.block = *target as usize;
                th.ip = 0;
                Ok(Effect::Continue)
            }
            Terminator::CondBr { pred, then_b, else_b } => {
                let taken = match th.regs[pred.0 as usize] {
                    ScalarValue::Bool(b) => b,
                    v => {
                        return Err(SimTrap::Invalid(format!(
                            "conditional branch on non-predicate value {}",
                            v.ty()
                        )))
                    }
                };
                if let Some(site) = m.condbr_site[th.block] {
                    seen[site] |= if taken { 1 } else { 2 };
                }
                th.block = if taken { *then_b } else { *else_b } as usize;
                th.ip = 0;
                Ok(Effect::Continue)
            }
            Terminator::Ret => Ok(Effect::Retired),
            Terminator::Trap(TrapKind::Arith) => {
                Err(SimTrap::Arith("non-positive loop step".into()))
            }
            Terminator::Trap(TrapKind::Bounds { base, index }) => {
                let idx = int_of(th.regs[index.0 as usize])?;
                let len = match *base {
                    AddrBase::Param(p) => {
                        m.buffers[p as usize].as_ref().map(|r| r.len()).unwrap_or(0)
                    }
                    AddrBase::Field(f) => m.func.fields[f as usize].count as usize,
                };
                Err(SimTrap::Bounds {
                    array: m.func.base_name(*base).to_string(),
                    index: idx,
                    len,
                })
            }
        };
    }

    match &blk.instrs[th.ip] {
        Inst::Mov { ty, dst, src } => {
            let v = operand(th, *src, *ty)?;
            set_reg(m, th, *dst, v)?;
        }
        Inst::Cvt { to, from, dst, src } => {
            let v = th.regs[src.0 as usize];
            if RegType::of(v.ty()) != *from {
                return Err(SimTrap::Invalid(format!(
                    "cvt source holds {}, expected .{}",
                    v.ty(),
                    from.suffix()
                )));
            }
            set_reg(m, th, *dst, interp::cast(v, scalar_of(*to)))?;
        }
        Inst::Bin { op, ty, dst, a, b } => {
            let av = operand(th, *a, *ty)?;
            let bv = operand(th, *b, *ty)?;
            if ty.is_integer() && matches!(op, AluOp::Div | AluOp::Rem) {
                let zero = matches!(bv, ScalarValue::I32(0) | ScalarValue::I64(0));
                if zero {
                    return Err(SimTrap::Arith(
                        if *op == AluOp::Div { "division by zero" } else { "remainder by zero" }
                            .into(),
                    ));
                }
            }
            let v = interp::alu(*op, *ty, av, bv).map_err(from_interp)?;
            set_reg(m, th, *dst, v)?;
        }
        Inst::Un { op, ty: _, dst, a } => {
            let v = interp::alu_un(*op, th.regs[a.0 as usize]).map_err(from_interp)?;
            set_reg(m, th, *dst, v)?;
        }
        Inst::Setp { cmp, ty, dst, a, b } => {
            let av = operand(th, *a, *ty)?;
            let bv = operand(th, *b, *ty)?;
            let v = interp::alu_cmp(*cmp, av, bv).map_err(from_interp)?;
            set_reg(m, th, *dst, ScalarValue::Bool(v))?;
        }
        Inst::Selp { ty, dst, cond, a, b } => {
            let c = match th.regs[cond.0 as usize] {
                ScalarValue::Bool(b) => b,
                v => {
                    return Err(SimTrap::Invalid(format!(
                        "selp condition holds {}, expected a predicate",
                        v.ty()
                    )))
                }
            };
            let v = operand(th, if c { *a } else { *b }, *ty)?;
            set_reg(m, th, *dst, v)?;
        }
        Inst::LdParam { ty, dst, param } => {
            let v = m.scalars[*param as usize].ok_or_else(|| {
                SimTrap::Invalid(format!(
                    "ld.param on non-scalar parameter `{}`",
                    m.func.params[*param as usize].name
                ))
            })?;
            if RegType::of(v.ty()) != *ty {
                return Err(SimTrap::Invalid(format!(
                    "parameter `{}` holds {}, instruction expects .{}",
                    m.func.params[*param as usize].name,
                    v.ty(),
                    ty.suffix()
                )));
            }
            set_reg(m, th, *dst, v)?;
        }
        Inst::LenBuf { dst, param } => {
            let region = m.buffers[*param as usize].as_ref();
            let len = match region {
                Some(r) if r.elem().is_some() => r.len(),
                _ => {
                    return Err(SimTrap::Invalid(format!(
                        "len of non-buffer parameter `{}`",
                        m.func.params[*param as usize].name
                    )))
                }
            };
            set_reg(m, th, *dst, ScalarValue::I32(len as i32))?;
        }
        Inst::Ld { space, ty, dst, addr, cached: _ } => {
            let (region, canonical) = resolve(m, g, nfields, t, addr.base)?;
            expect_space(m, *space, canonical, addr.base)?;
            let off = byte_offset(th, addr)?;
            let v = region
                .load(*ty, off)
                .map_err(|f| fault_trap(m, f, region, addr.base))?;
            if *space == MemSpace::Global {
                tally.global_loads += 1;
            }
            set_reg(m, th, *dst, v)?;
        }
        Inst::St { space, ty, addr, src } => {
            let (region, canonical) = resolve(m, g, nfields, t, addr.base)?;
            expect_space(m, *space, canonical, addr.base)?;
            if canonical == MemSpace::Constant {
                return Err(SimTrap::Invalid(format!(
                    "store to constant region `{}`",
                    m.func.base_name(addr.base)
                )));
            }
            let off = byte_offset(th, addr)?;
            let v = operand(th, *src, *ty)?;
            region.store(*ty, off, v).map_err(|f| fault_trap(m, f, region, addr.base))?;
            if *space == MemSpace::Global {
                tally.global_stores += 1;
            }
        }
        Inst::Atom { space, op, ty, addr, src } => {
            let (region, canonical) = resolve(m, g, nfields, t, addr.base)?;
            expect_space(m, *space, canonical, addr.base)?;
            if canonical == MemSpace::Constant {
                return Err(SimTrap::Invalid(format!(
                    "atomic on constant region `{}`",
                    m.func.base_name(addr.base)
                )));
            }
            let off = byte_offset(th, addr)?;
            let v = operand(th, *src, *ty)?;
            region
                .atomic_apply(*op, *ty, off, v)
                .map_err(|f| fault_trap(m, f, region, addr.base))?;
            if *space == MemSpace::Shared {
                tally.shared_atomics += 1;
            }
        }
        Inst::Intrin { which, ty, dst, a, b } => {
            let av = operand(th, *a, *ty)?;
            let bv = match b {
                Some(b) => Some(operand(th, *b, *ty)?),
                None => None,
            };
            let v = interp::intrinsic(*which, av, bv, Span::new(0, 0)).map_err(from_interp)?;
            set_reg(m, th, *dst, v)?;
        }
        Inst::Special { dst, which, dim } => {
            let d = *dim as usize;
            if d > 2 {
                return Err(SimTrap::Invalid(format!("thread-geometry dimension {d}")));
            }
            let v = match which {
                ThreadBuiltin::ThreadId => th.coords[d],
                ThreadBuiltin::GroupId => g.coords[d],
                ThreadBuiltin::GroupSize => m.sched.group[d],
                ThreadBuiltin::GlobalId => g.coords[d] * m.sched.group[d] + th.coords[d],
                ThreadBuiltin::GlobalSize => m.sched.global[d],
            };
            set_reg(m, th, *dst, ScalarValue::I32(v as i32))?;
        }
        Inst::Bar => {
            // The scheduler consumes the barrier (advances `ip`) when the
            // rendezvous completes.
            return Ok(Effect::Parked);
        }
    }

    th.ip += 1;
    Ok(Effect::Continue)
}

/// Resolve an address base to its backing region plus the region's canonical
/// memory space.
fn resolve<'x>(
    m: &'x Machine<'_>,
    g: &'x Group,
    nfields: usize,
    t: usize,
    base: AddrBase,
) -> Result<(&'x Region, MemSpace), SimTrap> {
    match base {
        AddrBase::Param(p) => match m.buffers[p as usize].as_ref() {
            Some(r) => Ok((r, MemSpace::Global)),
            None => Err(SimTrap::Invalid(format!(
                "memory access on scalar parameter `{}`",
                m.func.params[p as usize].name
            ))),
        },
        AddrBase::Field(f) => {
            let fld = &m.func.fields[f as usize];
            let region = match fld.space {
                MemSpace::Global | MemSpace::Constant => m.fields[f as usize].as_ref(),
                MemSpace::Shared => g.shared[f as usize].as_ref(),
                MemSpace::Private => g.private.get(t * nfields + f as usize).and_then(|r| r.as_ref()),
            };
            match region {
                Some(r) => Ok((r, fld.space)),
                None => Err(SimTrap::Invalid(format!("field `{}` has no region", fld.name))),
            }
        }
    }
}

fn expect_space(
    m: &Machine<'_>,
    used: MemSpace,
    canonical: MemSpace,
    base: AddrBase,
) -> Result<(), SimTrap> {
    if used == canonical {
        Ok(())
    } else {
        Err(SimTrap::Invalid(format!(
            "{} access on `{}`, which lives in {} space",
            used.keyword(),
            m.func.base_name(base),
            canonical.keyword()
        )))
    }
}

/// `base [+ index*scale] [+ offset]` → byte offset, with overflow folded
/// into an out-of-range result via saturation.
fn byte_offset(th: &Thread, addr: &Address) -> Result<i64, SimTrap> {
    let mut off = addr.offset as i128;
    if let Some((r, scale)) = addr.index {
        let idx = int_of(th.regs[r.0 as usize])? as i128;
        off += idx * scale as i128;
    }
    Ok(off.clamp(i64::MIN as i128, i64::MAX as i128) as i64)
}

fn int_of(v: ScalarValue) -> Result<i64, SimTrap> {
    match v {
        ScalarValue::I32(x) => Ok(x as i64),
        ScalarValue::I64(x) => Ok(x),
        v => Err(SimTrap::Invalid(format!("{} value used as an address index", v.ty()))),
    }
}

/// Materialize an operand at the instruction's register class.
fn operand(th: &Thread, o: Operand, ty: RegType) -> Result<ScalarValue, SimTrap> {
    match o {
        Operand::Reg(r) => {
            let v = th.regs[r.0 as usize];
            if RegType::of(v.ty()) != ty {
                return Err(SimTrap::Invalid(format!(
                    "register %{}{} holds {}, instruction expects .{}",
                    ty.suffix(),
                    r.0,
                    v.ty(),
                    ty.suffix()
                )));
            }
            Ok(v)
        }
        Operand::ImmI(v) => Ok(match ty {
            RegType::Pred => ScalarValue::Bool(v != 0),
            RegType::I32 => ScalarValue::I32(v as i32),
            RegType::I64 => ScalarValue::I64(v),
            RegType::F32 => ScalarValue::F32(v as f32),
            RegType::F64 => ScalarValue::F64(v as f64),
        }),
        Operand::ImmF(v) => match ty {
            RegType::F32 => Ok(ScalarValue::F32(v as f32)),
            RegType::F64 => Ok(ScalarValue::F64(v)),
            _ => Err(SimTrap::Invalid(
                "float immediate in a non-float instruction".into(),
            )),
        },
    }
}

fn set_reg(m: &Machine<'_>, th: &mut Thread, dst: Reg, v: ScalarValue) -> Result<(), SimTrap> {
    let declared = m.func.reg_type(dst);
    if RegType::of(v.ty()) != declared {
        return Err(SimTrap::Invalid(format!(
            "cannot store a {} value into %{}{}",
            v.ty(),
            declared.suffix(),
            dst.0
        )));
    }
    th.regs[dst.0 as usize] = v;
    Ok(())
}

fn fault_trap(m: &Machine<'_>, f: AccessFault, region: &Region, base: AddrBase) -> SimTrap {
    let name = m.func.base_name(base);
    match f {
        AccessFault::OutOfRange { offset, size } => {
            // Recover the logical element index from the byte offset so the
            // trap reads the same whether or not a bounds guard fired first.
            let elem_size = region.elem().map(|e| e.size_bytes()).unwrap_or(size).max(1) as i64;
            SimTrap::Bounds {
                array: name.to_string(),
                index: offset.div_euclid(elem_size),
                len: region.len(),
            }
        }
        AccessFault::Misaligned { offset, size } => SimTrap::Invalid(format!(
            "misaligned {size}-byte access at byte offset {offset} in `{name}`"
        )),
        AccessFault::Unsupported(msg) => SimTrap::Invalid(msg),
    }
}
