//! LIR optimization passes and their fixpoint driver.
//!
//! Six passes run in a fixed order — constant folding, copy propagation,
//! common-subexpression elimination, loop-invariant code motion, block
//! straightening, dead-code elimination — and the driver repeats the round
//! until nothing changes or ten rounds have run. Each pass is local and
//! conservative:
//!
//! - folding evaluates with exactly the interpreter's arithmetic (wrapping
//!   integers, IEEE floats) and refuses to fold anything that could trap at
//!   runtime, such as division by a zero constant;
//! - copy propagation and CSE work within a basic block; CSE treats loads
//!   as available expressions only until the next store, atomic, or barrier;
//! - LICM hoists single-definition, trap-free, memory-free computations to
//!   the loop preheader;
//! - straightening merges single-predecessor chains and threads jumps
//!   through empty forwarding blocks;
//! - DCE drops unreachable blocks and pure instructions whose results are
//!   never read (integer division stays put — it can trap).
//!
//! The function is re-verified after every pass, so a broken rewrite fails
//! loudly instead of miscompiling.

use crate::diag::{CompileError, Result};
use crate::interp::{cast, ScalarValue};
use crate::lir::*;
use crate::types::MemSpace;
use std::collections::{HashMap, HashSet};

/// Which of the six LIR passes run. All on by default.
#[derive(Debug, Clone, Copy)]
pub struct OptOptions {
    pub const_fold: bool,
    pub copy_prop: bool,
    pub cse: bool,
    pub licm: bool,
    pub straighten: bool,
    pub dce: bool,
}

impl Default for OptOptions {
    fn default() -> Self {
        OptOptions {
            const_fold: true,
            copy_prop: true,
            cse: true,
            licm: true,
            straighten: true,
            dce: true,
        }
    }
}

impl OptOptions {
    pub fn none() -> Self {
        OptOptions {
            const_fold: false,
            copy_prop: false,
            cse: false,
            licm: false,
            straighten: false,
            dce: false,
        }
    }
}

const MAX_ROUNDS: usize = 10;

/// Run the enabled passes to a fixpoint (at most ten rounds). Returns the
/// number of rounds that performed work.
pub fn optimize_lir(f: &mut LirFunc, opts: &OptOptions) -> Result<usize> {
    let mut rounds = 0;
    for _ in 0..MAX_ROUNDS {
        let mut changed = false;
        if opts.const_fold {
            changed |= run_pass(f, "const-fold", const_fold)?;
        }
        if opts.copy_prop {
            changed |= run_pass(f, "copy-prop", copy_prop)?;
        }
        if opts.cse {
            changed |= run_pass(f, "cse", cse)?;
        }
        if opts.licm {
            changed |= run_pass(f, "licm", licm)?;
        }
        if opts.straighten {
            changed |= run_pass(f, "straighten", straighten)?;
        }
        if opts.dce {
            changed |= run_pass(f, "dce", dce)?;
        }
        if !changed {
            break;
        }
        rounds += 1;
    }
    Ok(rounds)
}

fn run_pass(f: &mut LirFunc, name: &str, pass: fn(&mut LirFunc) -> bool) -> Result<bool> {
    let changed = pass(f);
    if changed {
        f.verify().map_err(|e| {
            CompileError::Internal(format!("pass `{name}` produced invalid code: {e}"))
        })?;
    }
    Ok(changed)
}

// ----- constant evaluation helpers ------------------------------------------

fn const_of(op: Operand, ty: RegType) -> Option<ScalarValue> {
    Some(match (op, ty) {
        (Operand::ImmI(v), RegType::I32) => ScalarValue::I32(v as i32),
        (Operand::ImmI(v), RegType::I64) => ScalarValue::I64(v),
        (Operand::ImmI(v), RegType::Pred) => ScalarValue::Bool(v != 0),
        (Operand::ImmF(v), RegType::F32) => ScalarValue::F32(v as f32),
        (Operand::ImmF(v), RegType::F64) => ScalarValue::F64(v),
        _ => return None,
    })
}

fn operand_of(v: &ScalarValue) -> Operand {
    match v {
        ScalarValue::I32(x) => Operand::ImmI(*x as i64),
        ScalarValue::I64(x) => Operand::ImmI(*x),
        ScalarValue::F32(x) => Operand::ImmF(*x as f64),
        ScalarValue::F64(x) => Operand::ImmF(*x),
        ScalarValue::Bool(x) => Operand::ImmI(*x as i64),
    }
}

/// Evaluate an ALU op on constants with the interpreter's semantics.
/// `None` means "do not fold" (for example division by zero must trap at
/// runtime, not at compile time).
fn fold_bin(op: AluOp, ty: RegType, a: ScalarValue, b: ScalarValue) -> Option<ScalarValue> {
    crate::interp::alu(op, ty, a, b).ok()
}

fn fold_cmp(cmp: CmpOp, a: ScalarValue, b: ScalarValue) -> Option<bool> {
    crate::interp::alu_cmp(cmp, a, b).ok()
}

fn fold_un(op: UnAluOp, v: ScalarValue) -> Option<ScalarValue> {
    crate::interp::alu_un(op, v).ok()
}

/// Can this instruction trap at runtime? Integer division and remainder trap
/// on a zero divisor, so they must not be removed, duplicated, or hoisted
/// past control flow.
fn may_trap(f: &LirFunc, i: &Inst) -> bool {
    match i {
        Inst::Bin { op: AluOp::Div | AluOp::Rem, ty, b, .. } if ty.is_integer() => {
            // A proven non-zero constant divisor cannot trap.
            !matches!(const_of(*b, *ty), Some(v) if !matches!(v, ScalarValue::I32(0) | ScalarValue::I64(0)))
        }
        _ => {
            let _ = f;
            false
        }
    }
}

// ----- 1. constant folding ---------------------------------------------------

/// Local constant propagation and folding. Known-constant registers are
/// substituted into operand positions, constant computations collapse to
/// moves, constant-indexed addresses fold the index into the byte offset,
/// and a conditional branch on a constant becomes an unconditional one.
fn const_fold(f: &mut LirFunc) -> bool {
    let mut changed = false;
    for b in &mut f.blocks {
        let mut known: HashMap<Reg, ScalarValue> = HashMap::new();
        let sub = |known: &HashMap<Reg, ScalarValue>, o: &mut Operand, changed: &mut bool| {
            if let Operand::Reg(r) = o {
                if let Some(v) = known.get(r) {
                    *o = operand_of(v);
                    *changed = true;
                }
            }
        };
        let fold_addr = |known: &HashMap<Reg, ScalarValue>, a: &mut Address, changed: &mut bool| {
            if let Some((r, scale)) = a.index {
                if let Some(ScalarValue::I32(k)) = known.get(&r) {
                    a.offset += *k as i64 * scale as i64;
                    a.index = None;
                    *changed = true;
                }
            }
        };
        for inst in &mut b.instrs {
            // Substitute known constants into this instruction's operands.
            match inst {
                Inst::Mov { src, .. } => sub(&known, src, &mut changed),
                Inst::Bin { a, b, .. } | Inst::Setp { a, b, .. } => {
                    sub(&known, a, &mut changed);
                    sub(&known, b, &mut changed);
                }
                Inst::Selp { a, b, .. } => {
                    sub(&known, a, &mut changed);
                    sub(&known, b, &mut changed);
                }
                Inst::Intrin { a, b, .. } => {
                    sub(&known, a, &mut changed);
                    if let Some(b) = b {
                        sub(&known, b, &mut changed);
                    }
                }
                Inst::St { addr, src, .. } => {
                    fold_addr(&known, addr, &mut changed);
                    sub(&known, src, &mut changed);
                }
                Inst::Atom { addr, src, .. } => {
                    fold_addr(&known, addr, &mut changed);
                    sub(&known, src, &mut changed);
                }
                Inst::Ld { addr, .. } => fold_addr(&known, addr, &mut changed),
                _ => {}
            }
            // Try to collapse the instruction itself.
            let folded: Option<(Reg, RegType, ScalarValue)> = match inst {
                Inst::Bin { op, ty, dst, a, b } => {
                    match (const_of(*a, *ty), const_of(*b, shift_rhs_ty(*op, *ty))) {
                        (Some(x), Some(y)) => fold_bin(*op, *ty, x, y).map(|v| (*dst, *ty, v)),
                        _ => None,
                    }
                }
                Inst::Un { op, ty, dst, a } => match known.get(a) {
                    Some(v) => fold_un(*op, *v).map(|r| (*dst, *ty, r)),
                    None => None,
                },
                Inst::Setp { cmp, ty, dst, a, b } => {
                    match (const_of(*a, *ty), const_of(*b, *ty)) {
                        (Some(x), Some(y)) => {
                            fold_cmp(*cmp, x, y).map(|v| (*dst, RegType::Pred, ScalarValue::Bool(v)))
                        }
                        _ => None,
                    }
                }
                Inst::Cvt { to, from, dst, src } => known
                    .get(src)
                    .filter(|v| v.ty() == scalar_of(*from))
                    .map(|v| (*dst, *to, cast(*v, scalar_of(*to)))),
                Inst::Selp { ty, dst, cond, a, b } => match known.get(cond) {
                    Some(ScalarValue::Bool(c)) => {
                        let chosen = if *c { *a } else { *b };
                        const_of(chosen, *ty).map(|v| (*dst, *ty, v))
                    }
                    _ => None,
                },
                _ => None,
            };
            if let Some((dst, ty, v)) = folded {
                *inst = Inst::Mov { ty, dst, src: operand_of(&v) };
                changed = true;
            }
            // Update the running constant map.
            if let Some(d) = inst.def() {
                known.remove(&d);
                if let Inst::Mov { ty, dst, src } = inst {
                    if let Some(v) = const_of(*src, *ty) {
                        known.insert(*dst, v);
                    }
                }
            }
        }
        // A branch on a constant predicate is unconditional.
        if let Terminator::CondBr { pred, then_b, else_b } = b.term {
            if let Some(ScalarValue::Bool(c)) = known.get(&pred) {
                b.term = Terminator::Br { target: if *c { then_b } else { else_b } };
                changed = true;
            }
        }
    }
    changed
}

fn shift_rhs_ty(op: AluOp, ty: RegType) -> RegType {
    if matches!(op, AluOp::Shl | AluOp::Shr) {
        RegType::I32
    } else {
        ty
    }
}

fn scalar_of(ty: RegType) -> crate::types::ScalarType {
    use crate::types::ScalarType as S;
    match ty {
        RegType::I32 => S::I32,
        RegType::I64 => S::I64,
        RegType::F32 => S::F32,
        RegType::F64 => S::F64,
        RegType::Pred => S::Bool,
    }
}

// ----- 2. copy propagation ----------------------------------------------------

/// Local copy propagation: after `mov %a, %b`, later uses of `%a` read `%b`
/// directly until either register is redefined. The move itself becomes dead
/// and DCE removes it.
fn copy_prop(f: &mut LirFunc) -> bool {
    let mut changed = false;
    for b in &mut f.blocks {
        let mut copies: HashMap<Reg, Reg> = HashMap::new();
        let look = |copies: &HashMap<Reg, Reg>, r: Reg| copies.get(&r).copied().unwrap_or(r);
        for inst in &mut b.instrs {
            // Rewrite uses through the copy map.
            let rewrite_op = |copies: &HashMap<Reg, Reg>, o: &mut Operand, changed: &mut bool| {
                if let Operand::Reg(r) = o {
                    let n = look(copies, *r);
                    if n != *r {
                        *o = Operand::Reg(n);
                        *changed = true;
                    }
                }
            };
            let rewrite_reg = |copies: &HashMap<Reg, Reg>, r: &mut Reg, changed: &mut bool| {
                let n = look(copies, *r);
                if n != *r {
                    *r = n;
                    *changed = true;
                }
            };
            let rewrite_addr = |copies: &HashMap<Reg, Reg>, a: &mut Address, changed: &mut bool| {
                if let Some((r, s)) = a.index {
                    let n = look(copies, r);
                    if n != r {
                        a.index = Some((n, s));
                        *changed = true;
                    }
                }
            };
            match inst {
                Inst::Mov { src, .. } => rewrite_op(&copies, src, &mut changed),
                Inst::Cvt { src, .. } => rewrite_reg(&copies, src, &mut changed),
                Inst::Bin { a, b, .. } | Inst::Setp { a, b, .. } => {
                    rewrite_op(&copies, a, &mut changed);
                    rewrite_op(&copies, b, &mut changed);
                }
                Inst::Un { a, .. } => rewrite_reg(&copies, a, &mut changed),
                Inst::Selp { cond, a, b, .. } => {
                    rewrite_reg(&copies, cond, &mut changed);
                    rewrite_op(&copies, a, &mut changed);
                    rewrite_op(&copies, b, &mut changed);
                }
                Inst::Ld { addr, .. } => rewrite_addr(&copies, addr, &mut changed),
                Inst::St { addr, src, .. } => {
                    rewrite_addr(&copies, addr, &mut changed);
                    rewrite_op(&copies, src, &mut changed);
                }
                Inst::Atom { addr, src, .. } => {
                    rewrite_addr(&copies, addr, &mut changed);
                    rewrite_op(&copies, src, &mut changed);
                }
                Inst::Intrin { a, b, .. } => {
                    rewrite_op(&copies, a, &mut changed);
                    if let Some(b) = b {
                        rewrite_op(&copies, b, &mut changed);
                    }
                }
                Inst::LdParam { .. } | Inst::LenBuf { .. } | Inst::Special { .. } | Inst::Bar => {}
            }
            // Update the copy map for this definition.
            if let Some(d) = inst.def() {
                // Any copy routed through the redefined register dies.
                copies.retain(|k, v| *k != d && *v != d);
                if let Inst::Mov { dst, src: Operand::Reg(s), .. } = inst {
                    if *dst != *s {
                        copies.insert(*dst, *s);
                    }
                }
            }
        }
        match &mut b.term {
            Terminator::CondBr { pred, .. } => {
                let n = look(&copies, *pred);
                if n != *pred {
                    *pred = n;
                    changed = true;
                }
            }
            Terminator::Trap(TrapKind::Bounds { index, .. }) => {
                let n = look(&copies, *index);
                if n != *index {
                    *index = n;
                    changed = true;
                }
            }
            _ => {}
        }
    }
    changed
}

// ----- 3. common subexpression elimination -------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum OpKey {
    R(RegId),
    I(i64),
    F(u64),
}

fn opkey(o: Operand) -> OpKey {
    match o {
        Operand::Reg(r) => OpKey::R(r.0),
        Operand::ImmI(v) => OpKey::I(v),
        Operand::ImmF(v) => OpKey::F(v.to_bits()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum VnKey {
    Bin(AluOp, RegType, OpKey, OpKey),
    Un(UnAluOp, RegType, RegId),
    Setp(CmpOp, RegType, OpKey, OpKey),
    Selp(RegType, RegId, OpKey, OpKey),
    Cvt(RegType, RegType, RegId),
    LdParam(u32),
    LenBuf(u32),
    Special(u8, u8),
    Ld(MemSpace, AddrBase, Option<(RegId, u32)>, i64, RegType, bool),
    Intrin(u8, RegType, OpKey, Option<OpKey>),
}

/// Local value numbering. A repeated pure computation is replaced with a
/// move from the register that already holds the value; repeated loads are
/// merged only while no store, atomic, or barrier has intervened.
fn cse(f: &mut LirFunc) -> bool {
    let mut changed = false;
    for b in &mut f.blocks {
        let mut table: HashMap<VnKey, Reg> = HashMap::new();
        for inst in &mut b.instrs {
            let keyed: Option<(VnKey, RegType)> = match inst {
                Inst::Bin { op, ty, a, b, .. } => {
                    let (mut ka, mut kb) = (opkey(*a), opkey(*b));
                    if op.commutative() && format!("{ka:?}") > format!("{kb:?}") {
                        std::mem::swap(&mut ka, &mut kb);
                    }
                    Some((VnKey::Bin(*op, *ty, ka, kb), *ty))
                }
                Inst::Un { op, ty, a, .. } => Some((VnKey::Un(*op, *ty, a.0), *ty)),
                Inst::Setp { cmp, ty, a, b, .. } => {
                    Some((VnKey::Setp(*cmp, *ty, opkey(*a), opkey(*b)), RegType::Pred))
                }
                Inst::Selp { ty, cond, a, b, .. } => {
                    Some((VnKey::Selp(*ty, cond.0, opkey(*a), opkey(*b)), *ty))
                }
                Inst::Cvt { to, from, src, .. } => Some((VnKey::Cvt(*to, *from, src.0), *to)),
                Inst::LdParam { ty, param, .. } => Some((VnKey::LdParam(*param), *ty)),
                Inst::LenBuf { param, .. } => Some((VnKey::LenBuf(*param), RegType::I32)),
                Inst::Special { which, dim, .. } => {
                    Some((VnKey::Special(*which as u8, *dim), RegType::I32))
                }
                Inst::Ld { space, ty, addr, cached, .. } => Some((
                    VnKey::Ld(
                        *space,
                        addr.base,
                        addr.index.map(|(r, s)| (r.0, s)),
                        addr.offset,
                        *ty,
                        *cached,
                    ),
                    *ty,
                )),
                Inst::Intrin { which, ty, a, b, .. } => Some((
                    VnKey::Intrin(*which as u8, *ty, opkey(*a), b.map(opkey)),
                    if *which == crate::types::MathIntrinsic::Popc {
                        RegType::I32
                    } else {
                        *ty
                    },
                )),
                Inst::Mov { .. } | Inst::St { .. } | Inst::Atom { .. } | Inst::Bar => None,
            };
            // Trapping instructions still participate: merging two identical
            // divisions preserves behavior (same value or same trap).
            let mut hit = false;
            if let (Some((k, ty)), Some(d)) = (&keyed, inst.def()) {
                if let Some(prev) = table.get(k).copied() {
                    if prev != d {
                        *inst = Inst::Mov { ty: *ty, dst: d, src: Operand::Reg(prev) };
                        changed = true;
                    }
                    hit = true;
                }
            }
            // Invalidate what this instruction clobbers: stored-to spaces,
            // everything on a barrier, and all entries touching a register
            // this instruction redefines.
            match inst {
                Inst::St { space, .. } | Inst::Atom { space, .. } => {
                    let sp = *space;
                    table.retain(|k, _| !matches!(k, VnKey::Ld(s, ..) if *s == sp));
                }
                Inst::Bar => {
                    table.retain(|k, _| !matches!(k, VnKey::Ld(..)));
                }
                _ => {}
            }
            if let Some(d) = inst.def() {
                table.retain(|k, v| *v != d && !key_mentions(k, d.0));
                if let (Some((k, _)), false) = (&keyed, hit) {
                    // Record the value unless its key reads the register it
                    // just overwrote (e.g. `add %3, %3, 1`).
                    if !key_mentions(k, d.0) {
                        table.insert(k.clone(), d);
                    }
                }
            }
        }
    }
    changed
}

fn key_mentions(k: &VnKey, r: RegId) -> bool {
    let op_is = |o: &OpKey| matches!(o, OpKey::R(x) if *x == r);
    match k {
        VnKey::Bin(_, _, a, b) | VnKey::Setp(_, _, a, b) => op_is(a) || op_is(b),
        VnKey::Un(_, _, a) | VnKey::Cvt(_, _, a) => *a == r,
        VnKey::Selp(_, c, a, b) => *c == r || op_is(a) || op_is(b),
        VnKey::Ld(_, _, idx, _, _, _) => matches!(idx, Some((x, _)) if *x == r),
        VnKey::Intrin(_, _, a, b) => op_is(a) || b.as_ref().is_some_and(op_is),
        VnKey::LdParam(_) | VnKey::LenBuf(_) | VnKey::Special(_, _) => false,
    }
}

// ----- 4. loop-invariant code motion ---------------------------------------------

/// Natural loops via dominators. An instruction hoists to the preheader when
/// it is pure and trap-free, its destination has exactly one definition in
/// the whole function, and every operand is defined entirely outside the
/// loop.
fn licm(f: &mut LirFunc) -> bool {
    let n = f.blocks.len();
    let preds = pred_lists(f);
    let dom = dominators(f, &preds);

    // Back edges u → h where h dominates u.
    let mut loops: HashMap<BlockId, HashSet<usize>> = HashMap::new();
    for (u, b) in f.blocks.iter().enumerate() {
        for t in b.term.targets() {
            if dom[u][t as usize] {
                let body = natural_loop(t as usize, u, &preds);
                loops.entry(t).or_default().extend(body);
            }
        }
    }
    if loops.is_empty() {
        return false;
    }

    // Definition counts per register (whole function).
    let mut def_count: HashMap<RegId, usize> = HashMap::new();
    let mut def_blocks: HashMap<RegId, Vec<usize>> = HashMap::new();
    for (bi, b) in f.blocks.iter().enumerate() {
        for i in &b.instrs {
            if let Some(d) = i.def() {
                *def_count.entry(d.0).or_insert(0) += 1;
                def_blocks.entry(d.0).or_default().push(bi);
            }
        }
    }

    let mut changed = false;
    // Process smaller (inner) loops first; outer rounds re-hoist further.
    let mut order: Vec<(BlockId, HashSet<usize>)> = loops.into_iter().collect();
    order.sort_by_key(|(h, s)| (s.len(), *h));

    for (header, body) in order {
        // Unique preheader: the only out-of-loop predecessor, ending in an
        // unconditional branch to the header.
        let outside: Vec<usize> = preds[header as usize]
            .iter()
            .copied()
            .filter(|p| !body.contains(p))
            .collect();
        let [ph] = outside.as_slice() else { continue };
        let ph = *ph;
        if !matches!(f.blocks[ph].term, Terminator::Br { target } if target == header) {
            continue;
        }

        let mut hoisted_any = true;
        while hoisted_any {
            hoisted_any = false;
            let blocks: Vec<usize> = {
                let mut v: Vec<usize> = body.iter().copied().collect();
                v.sort_unstable();
                v
            };
            'scan: for bi in blocks {
                for ii in 0..f.blocks[bi].instrs.len() {
                    let inst = &f.blocks[bi].instrs[ii];
                    if inst.has_side_effect()
                        || matches!(inst, Inst::Ld { .. })
                        || may_trap(f, inst)
                    {
                        continue;
                    }
                    let Some(d) = inst.def() else { continue };
                    if def_count.get(&d.0).copied().unwrap_or(0) != 1 {
                        continue;
                    }
                    let invariant = inst.uses().iter().all(|u| {
                        def_blocks
                            .get(&u.0)
                            .map(|bs| bs.iter().all(|db| !body.contains(db)))
                            .unwrap_or(true)
                    });
                    if !invariant {
                        continue;
                    }
                    let moved = f.blocks[bi].instrs.remove(ii);
                    f.blocks[ph].instrs.push(moved);
                    def_blocks.insert(d.0, vec![ph]);
                    changed = true;
                    hoisted_any = true;
                    continue 'scan;
                }
            }
        }
    }
    let _ = n;
    changed
}

fn pred_lists(f: &LirFunc) -> Vec<Vec<usize>> {
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); f.blocks.len()];
    for (bi, b) in f.blocks.iter().enumerate() {
        for t in b.term.targets() {
            preds[t as usize].push(bi);
        }
    }
    preds
}

/// Iterative dominator sets as bit vectors: dom[b][d] = "d dominates b".
fn dominators(f: &LirFunc, preds: &[Vec<usize>]) -> Vec<Vec<bool>> {
    let n = f.blocks.len();
    let mut dom = vec![vec![true; n]; n];
    dom[0] = vec![false; n];
    dom[0][0] = true;
    let mut changed = true;
    while changed {
        changed = false;
        for b in 1..n {
            let mut next = vec![true; n];
            if preds[b].is_empty() {
                // Unreachable: keep "dominated by everything".
                continue;
            }
            for &p in &preds[b] {
                for i in 0..n {
                    next[i] = next[i] && dom[p][i];
                }
            }
            next[b] = true;
            if next != dom[b] {
                dom[b] = next;
                changed = true;
            }
        }
    }
    dom
}

fn natural_loop(header: usize, latch: usize, preds: &[Vec<usize>]) -> HashSet<usize> {
    let mut set: HashSet<usize> = [header, latch].into_iter().collect();
    let mut stack = vec![latch];
    while let Some(x) = stack.pop() {
        if x == header {
            continue;
        }
        for &p in &preds[x] {
            if set.insert(p) {
                stack.push(p);
            }
        }
    }
    set
}

// ----- 5. straightening -----------------------------------------------------------

/// Merge single-predecessor chains and thread jumps through empty
/// forwarding blocks.
fn straighten(f: &mut LirFunc) -> bool {
    let mut changed = false;
    loop {
        // Thread branches through empty blocks that only jump onward.
        let forward: Vec<Option<BlockId>> = f
            .blocks
            .iter()
            .enumerate()
            .map(|(bi, b)| match b.term {
                Terminator::Br { target } if b.instrs.is_empty() && target != bi as BlockId => {
                    Some(target)
                }
                _ => None,
            })
            .collect();
        let resolve = |mut t: BlockId| -> BlockId {
            let mut seen = 0;
            while let Some(next) = forward[t as usize] {
                t = next;
                seen += 1;
                if seen > forward.len() {
                    break; // forwarding cycle; leave as-is
                }
            }
            t
        };
        let mut local = false;
        for bi in 0..f.blocks.len() {
            match &mut f.blocks[bi].term {
                Terminator::Br { target } => {
                    let r = resolve(*target);
                    if r != *target {
                        *target = r;
                        local = true;
                    }
                }
                Terminator::CondBr { then_b, else_b, .. } => {
                    let (rt, re) = (resolve(*then_b), resolve(*else_b));
                    if rt != *then_b || re != *else_b {
                        *then_b = rt;
                        *else_b = re;
                        local = true;
                    }
                }
                _ => {}
            }
        }

        // Merge b → c when b unconditionally branches to c and c has no
        // other predecessor.
        let preds = pred_lists(f);
        let mut merged = false;
        for bi in 0..f.blocks.len() {
            let Terminator::Br { target } = f.blocks[bi].term else { continue };
            let c = target as usize;
            if c == 0 || c == bi || preds[c].len() != 1 {
                continue;
            }
            let mut tail = std::mem::replace(
                &mut f.blocks[c],
                BasicBlock { instrs: Vec::new(), term: Terminator::Ret },
            );
            f.blocks[bi].instrs.append(&mut tail.instrs);
            f.blocks[bi].term = tail.term;
            // Old block c is now an empty unreachable stub; DCE removes it.
            merged = true;
            break; // predecessor lists are stale; restart
        }

        if !(local || merged) {
            break;
        }
        changed = true;
    }
    changed
}

// ----- 6. dead code elimination -----------------------------------------------------

/// Remove unreachable blocks (renumbering the survivors) and pure
/// instructions whose destinations are never read.
fn dce(f: &mut LirFunc) -> bool {
    let mut changed = false;

    // Reachability from the entry block.
    let mut reach = vec![false; f.blocks.len()];
    let mut stack = vec![0usize];
    while let Some(b) = stack.pop() {
        if reach[b] {
            continue;
        }
        reach[b] = true;
        for t in f.blocks[b].term.targets() {
            stack.push(t as usize);
        }
    }
    if reach.iter().any(|r| !r) {
        let mut remap = vec![0 as BlockId; f.blocks.len()];
        let mut kept = Vec::with_capacity(f.blocks.len());
        for (bi, b) in f.blocks.drain(..).enumerate() {
            if reach[bi] {
                remap[bi] = kept.len() as BlockId;
                kept.push(b);
            }
        }
        for b in &mut kept {
            match &mut b.term {
                Terminator::Br { target } => *target = remap[*target as usize],
                Terminator::CondBr { then_b, else_b, .. } => {
                    *then_b = remap[*then_b as usize];
                    *else_b = remap[*else_b as usize];
                }
                _ => {}
            }
        }
        f.blocks = kept;
        changed = true;
    }

    // Registers read anywhere (instructions and terminators).
    let mut used: HashSet<RegId> = HashSet::new();
    for b in &f.blocks {
        for i in &b.instrs {
            for u in i.uses() {
                used.insert(u.0);
            }
        }
        for u in b.term.uses() {
            used.insert(u.0);
        }
    }
    for bi in 0..f.blocks.len() {
        let before = f.blocks[bi].instrs.len();
        // One sweep per call; the fixpoint driver reruns for cascades.
        let kept: Vec<Inst> = f.blocks[bi]
            .instrs
            .drain(..)
            .filter(|i| {
                i.has_side_effect()
                    || may_trap_standalone(i)
                    || i.def().map(|d| used.contains(&d.0)).unwrap_or(true)
            })
            .collect();
        if kept.len() != before {
            changed = true;
        }
        f.blocks[bi].instrs = kept;
    }
    changed
}

fn may_trap_standalone(i: &Inst) -> bool {
    matches!(i, Inst::Bin { op: AluOp::Div | AluOp::Rem, ty, b, .. }
        if ty.is_integer()
            && !matches!(b, Operand::ImmI(v) if *v != 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lower::{lower_kernel, LoweredKernel};
    use crate::parser::parse_unit;
    use crate::passes::{inline_calls, insert_bounds_guards, parallelize, scalar_replace};
    use crate::types::{ParamMode, ScalarType};
    use crate::validate::validate_unit;
    use crate::ast::IdGen;

    fn lowered(src: &str, exceptions: bool) -> LoweredKernel {
        let mut unit = parse_unit(src, "t").unwrap();
        let checked = validate_unit(&unit).unwrap();
        let mut ids = IdGen::starting_at(unit.next_id);
        let mut k = unit.kernels.remove(0);
        parallelize(&mut k, &mut ids).unwrap();
        inline_calls(&unit, &mut k, &mut ids, 8).unwrap();
        scalar_replace(&checked.env, &mut k, &mut ids).unwrap();
        if exceptions {
            insert_bounds_guards(&mut k, &mut ids).unwrap();
        }
        unit.next_id = ids.watermark();
        unit.kernels.push(k);
        let checked = validate_unit(&unit).unwrap();
        let kernel = &unit.kernels[0];
        lower_kernel(&checked.env, &checked.kernels[&kernel.name], kernel).unwrap()
    }

    fn optimized(src: &str, exceptions: bool) -> LirFunc {
        let mut lk = lowered(src, exceptions);
        optimize_lir(&mut lk.func, &OptOptions::default()).unwrap();
        lk.func
    }

    #[test]
    fn constant_chain_folds_to_seventeen() {
        let src = r#"
            @jacc(iterationSpace=NONE)
            kernel k(@write out: i32[]) {
                var x: i32 = 2 * 8 + 1;
                out[0] = x;
            }
        "#;
        let f = optimized(src, false);
        let d = f.dump();
        assert!(d.contains("st.global.i32 [out], 17"), "{d}");
        assert!(!d.contains("mul"), "{d}");
        assert!(!d.contains("add.i32"), "{d}");
    }

    #[test]
    fn division_by_zero_constant_is_not_folded() {
        let src = r#"
            @jacc(iterationSpace=NONE)
            kernel k(@write out: i32[]) {
                var z: i32 = 0;
                out[0] = 5 / z;
            }
        "#;
        let f = optimized(src, false);
        let d = f.dump();
        assert!(d.contains("div.i32"), "division must survive to trap at runtime: {d}");
    }

    #[test]
    fn optimization_shrinks_vecadd() {
        let src = r#"
            @jacc(iterationSpace=ONE_DIMENSION)
            kernel vecadd(@read a: f32[], @read b: f32[], @write c: f32[]) {
                for i in 0..len(c) {
                    c[i] = a[i] + b[i];
                }
            }
        "#;
        let before = lowered(src, false).func;
        let after = optimized(src, false);
        assert!(
            after.instruction_count() < before.instruction_count(),
            "{} -> {}",
            before.instruction_count(),
            after.instruction_count()
        );
        // Semantics preserved in shape: still 2 loads, 1 store.
        let loads = after
            .blocks
            .iter()
            .flat_map(|b| &b.instrs)
            .filter(|i| matches!(i, Inst::Ld { space: MemSpace::Global, .. }))
            .count();
        assert_eq!(loads, 2);
    }

    #[test]
    fn cse_merges_duplicate_loads() {
        let src = r#"
            @jacc(iterationSpace=ONE_DIMENSION)
            kernel dbl(@read a: f32[], @write c: f32[]) {
                for i in 0..len(c) {
                    c[i] = a[i] + a[i];
                }
            }
        "#;
        let f = optimized(src, false);
        let loads = f
            .blocks
            .iter()
            .flat_map(|b| &b.instrs)
            .filter(|i| matches!(i, Inst::Ld { .. }))
            .count();
        assert_eq!(loads, 1, "{}", f.dump());
    }

    #[test]
    fn cse_does_not_merge_loads_across_stores() {
        let src = r#"
            @jacc(iterationSpace=NONE)
            kernel bump(@readwrite a: i32[]) {
                a[0] = a[1] + 1;
                a[2] = a[1] + 1;
            }
        "#;
        let f = optimized(src, false);
        let loads = f
            .blocks
            .iter()
            .flat_map(|b| &b.instrs)
            .filter(|i| matches!(i, Inst::Ld { .. }))
            .count();
        assert_eq!(loads, 2, "store between must block reuse: {}", f.dump());
    }

    #[test]
    fn licm_hoists_param_math_out_of_loop() {
        let src = r#"
            @jacc(iterationSpace=ONE_DIMENSION)
            kernel scalek(@read n: i32, @read a: i32[], @write c: i32[]) {
                for i in 0..len(c) {
                    c[i] = a[i] * (n - 1);
                }
            }
        "#;
        let f = optimized(src, false);
        // Find the loop body: the block containing the store.
        let body = f
            .blocks
            .iter()
            .find(|b| b.instrs.iter().any(|i| matches!(i, Inst::St { .. })))
            .unwrap();
        assert!(
            !body.instrs.iter().any(|i| matches!(i, Inst::LdParam { .. })),
            "ld.param should be hoisted: {}",
            f.dump()
        );
        assert!(
            !body
                .instrs
                .iter()
                .any(|i| matches!(i, Inst::Bin { op: AluOp::Sub, .. })),
            "n - 1 should be hoisted: {}",
            f.dump()
        );
    }

    #[test]
    fn constant_branch_collapses_to_straight_line() {
        let src = r#"
            @jacc(iterationSpace=NONE)
            kernel pick(@write out: i32[]) {
                if (true) {
                    out[0] = 1;
                } else {
                    out[0] = 2;
                }
            }
        "#;
        let f = optimized(src, false);
        assert_eq!(f.condbr_count(), 0, "{}", f.dump());
        let d = f.dump();
        assert!(d.contains("st.global.i32 [out], 1"), "{d}");
        assert!(!d.contains(", 2"), "dead branch should be gone: {d}");
    }

    #[test]
    fn dce_removes_unused_computation() {
        let src = r#"
            @jacc(iterationSpace=NONE)
            kernel waste(@read a: i32[], @write out: i32[]) {
                var t: i32 = a[0] + 42;
                out[0] = 7;
            }
        "#;
        let f = optimized(src, false);
        let d = f.dump();
        assert!(!d.contains("42"), "unused computation should be removed: {d}");
        assert!(!d.contains("ld.global"), "unused load should be removed: {d}");
    }

    #[test]
    fn optimization_is_idempotent() {
        for (src, exceptions) in [
            (
                r#"
                @jacc(iterationSpace=ONE_DIMENSION)
                kernel vecadd(@read a: f32[], @read b: f32[], @write c: f32[]) {
                    for i in 0..len(c) { c[i] = a[i] + b[i]; }
                }
                "#,
                true,
            ),
            (
                r#"
                @jacc(iterationSpace=ONE_DIMENSION)
                kernel reduce(@read a: f32[]) {
                    @atomic(op=ADD) field sum: f32;
                    for i in 0..len(a) { sum += a[i]; }
                }
                "#,
                false,
            ),
        ] {
            let mut lk = lowered(src, exceptions);
            optimize_lir(&mut lk.func, &OptOptions::default()).unwrap();
            let first = lk.func.dump();
            let rounds = optimize_lir(&mut lk.func, &OptOptions::default()).unwrap();
            assert_eq!(rounds, 0, "second run must be a no-op");
            assert_eq!(first, lk.func.dump());
        }
    }

    #[test]
    fn guards_survive_optimization() {
        let src = r#"
            @jacc(iterationSpace=ONE_DIMENSION)
            kernel vecadd(@read a: f32[], @read b: f32[], @write c: f32[]) {
                for i in 0..len(c) { c[i] = a[i] + b[i]; }
            }
        "#;
        let f = optimized(src, true);
        let d = f.dump();
        assert!(d.contains("trap.bounds"), "{d}");
    }

    #[test]
    fn disabled_passes_leave_code_alone() {
        let src = r#"
            @jacc(iterationSpace=NONE)
            kernel k(@write out: i32[]) {
                var x: i32 = 2 * 8 + 1;
                out[0] = x;
            }
        "#;
        let mut lk = lowered(src, false);
        let before = lk.func.dump();
        let rounds = optimize_lir(&mut lk.func, &OptOptions::none()).unwrap();
        assert_eq!(rounds, 0);
        assert_eq!(before, lk.func.dump());
    }

    #[test]
    fn fresh_reg_types_are_consistent_after_passes() {
        // Regression net: every optimized kernel must still verify.
        let srcs = [
            r#"
            @jacc(iterationSpace=TWO_DIMENSION)
            kernel mm(@read a: f32[], @read b: f32[], @write c: f32[], @read n: i32) {
                for i in 0..n {
                    for j in 0..n {
                        var acc: f32 = 0.0;
                        for k in 0..n {
                            acc += a[i * n + k] * b[k * n + j];
                        }
                        c[i * n + j] = acc;
                    }
                }
            }
            "#,
            r#"
            @jacc(iterationSpace=ONE_DIMENSION)
            kernel hist(@read keys: i32[]) {
                @atomic(op=ADD) field bins: i32[64];
                for i in 0..len(keys) {
                    bins[keys[i] & 63] += 1;
                }
            }
            "#,
        ];
        for src in srcs {
            for exceptions in [false, true] {
                let f = optimized(src, exceptions);
                f.verify().unwrap();
            }
        }
    }

    #[test]
    fn shl_folding_matches_interpreter() {
        let src = r#"
            @jacc(iterationSpace=NONE)
            kernel sh(@write out: i64[]) {
                var one: i64 = 1L;
                out[0] = one << 40;
            }
        "#;
        let f = optimized(src, false);
        let d = f.dump();
        assert!(d.contains(&(1i64 << 40).to_string()), "{d}");
    }

    // Direct checks for the helpers used across passes.
    #[test]
    fn helper_folding_semantics() {
        use ScalarValue::*;
        assert_eq!(
            fold_bin(AluOp::Add, RegType::I32, I32(i32::MAX), I32(1)),
            Some(I32(i32::MIN))
        );
        assert_eq!(fold_bin(AluOp::Div, RegType::I32, I32(5), I32(0)), None);
        assert_eq!(
            fold_bin(AluOp::Div, RegType::F32, F32(1.0), F32(0.0)),
            Some(F32(f32::INFINITY))
        );
        assert_eq!(fold_cmp(CmpOp::Ne, F32(f32::NAN), F32(f32::NAN)), Some(true));
        assert_eq!(fold_cmp(CmpOp::Eq, F32(f32::NAN), F32(f32::NAN)), Some(false));
        assert_eq!(fold_un(UnAluOp::Neg, I32(i32::MIN)), Some(I32(i32::MIN)));
    }

    #[test]
    fn straighten_collapses_lowering_chains() {
        // Lowering produces entry → header chains; after optimization the
        // function should have no empty forwarding blocks.
        let src = r#"
            @jacc(iterationSpace=ONE_DIMENSION)
            kernel copy(@read a: f32[], @write c: f32[]) {
                for i in 0..len(c) { c[i] = a[i]; }
            }
        "#;
        let f = optimized(src, false);
        for (bi, b) in f.blocks.iter().enumerate() {
            if let Terminator::Br { target } = b.term {
                assert!(
                    !(b.instrs.is_empty() && target != bi as BlockId) || bi == 0,
                    "block {bi} is an empty forward: {}",
                    f.dump()
                );
            }
        }
    }

    #[test]
    fn param_metadata_is_untouched() {
        let src = r#"
            @jacc(iterationSpace=NONE)
            kernel k(@read(cachable) a: f32[], @write out: f32[]) {
                out[0] = a[0];
            }
        "#;
        let f = optimized(src, false);
        assert!(f.params[0].cachable);
        assert_eq!(f.params[0].mode, ParamMode::Read);
        assert!(matches!(f.params[0].kind, ParamKind::Buffer(ScalarType::F32)));
    }
}
