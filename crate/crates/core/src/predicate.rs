//! Branch predication: if-conversion of small branch shapes into `selp`.
//!
//! Two shapes convert. A *diamond* is a conditional branch whose two arms
//! are straight-line blocks that both jump to the same join block; a
//! *triangle* has one such arm and falls through to the join on the other
//! edge. An arm qualifies when it is short (at most four instructions) and
//! register-only — no loads, stores, atomics, barriers, or instructions
//! that can trap. Arm instructions are rewritten onto fresh temporaries and
//! hoisted into the branching block, and each register the arms redefine is
//! merged with one `selp` per register. A conversion is applied only when
//! it does not increase the instruction count, and it always removes one
//! conditional branch, so predicated code never has more instructions or
//! more branches than the original.

use crate::diag::{CompileError, Result};
use crate::lir::*;
use std::collections::{HashMap, HashSet};

const MAX_ARM_INSTRS: usize = 4;

/// Apply if-conversion until no more shapes qualify. Returns whether
/// anything changed. Dead arm blocks left behind are unlinked and removed.
pub fn predicate(f: &mut LirFunc) -> Result<bool> {
    let mut changed = false;
    loop {
        let Some(site) = find_site(f) else { break };
        apply(f, site);
        f.verify()
            .map_err(|e| CompileError::Internal(format!("predication broke the function: {e}")))?;
        changed = true;
    }
    if changed {
        cleanup(f);
        f.verify()
            .map_err(|e| CompileError::Internal(format!("predication cleanup broke: {e}")))?;
    }
    Ok(changed)
}

struct Site {
    block: usize,
    /// Arm taken when the predicate is true; `None` for an empty arm
    /// (triangle with the join on the true edge).
    then_arm: Option<usize>,
    else_arm: Option<usize>,
    join: BlockId,
}

fn find_site(f: &LirFunc) -> Option<Site> {
    let preds = pred_lists(f);
    for (bi, b) in f.blocks.iter().enumerate() {
        let Terminator::CondBr { then_b, else_b, .. } = b.term else { continue };
        if then_b == else_b {
            continue;
        }
        // Diamond: both targets are arms with a common join.
        let tj = arm_join(f, &preds, bi, then_b as usize);
        let ej = arm_join(f, &preds, bi, else_b as usize);
        let site = match (tj, ej) {
            (Some(j1), Some(j2)) if j1 == j2 => Some(Site {
                block: bi,
                then_arm: Some(then_b as usize),
                else_arm: Some(else_b as usize),
                join: j1,
            }),
            // Triangle: one arm, the other edge goes straight to the join.
            (Some(j1), _) if j1 == else_b => Some(Site {
                block: bi,
                then_arm: Some(then_b as usize),
                else_arm: None,
                join: j1,
            }),
            (_, Some(j2)) if j2 == then_b => Some(Site {
                block: bi,
                then_arm: None,
                else_arm: Some(else_b as usize),
                join: j2,
            }),
            _ => None,
        };
        let Some(site) = site else { continue };
        if profitable(f, &site) {
            return Some(site);
        }
    }
    None
}

fn branch_target(f: &LirFunc, b: BlockId) -> Option<BlockId> {
    match f.blocks[b as usize].term {
        Terminator::Br { target } => Some(target),
        _ => None,
    }
}

/// An arm block: single predecessor `from`, straight-line register-only
/// body within the size limit, ending in an unconditional branch. Returns
/// its join target.
fn arm_join(f: &LirFunc, preds: &[Vec<usize>], from: usize, arm: usize) -> Option<BlockId> {
    if preds[arm] != [from] {
        return None;
    }
    let b = &f.blocks[arm];
    if b.instrs.len() > MAX_ARM_INSTRS {
        return None;
    }
    if !b.instrs.iter().all(convertible) {
        return None;
    }
    branch_target(f, arm as BlockId)
}

/// Register-only, non-trapping, no memory traffic.
fn convertible(i: &Inst) -> bool {
    match i {
        Inst::Ld { .. } | Inst::St { .. } | Inst::Atom { .. } | Inst::Bar => false,
        Inst::Bin { op: AluOp::Div | AluOp::Rem, ty, b, .. } if ty.is_integer() => {
            // Speculating an integer division is only safe when the divisor
            // is a provably non-zero constant.
            matches!(b, Operand::ImmI(v) if *v != 0)
        }
        _ => true,
    }
}

/// Conversion must not grow the function: compare the instructions the
/// shape currently costs with what the predicated form will cost. A
/// register defined by only one arm merges against its pre-branch value
/// (or degrades to a plain move when it had none and is therefore dead at
/// the join); either way it costs one instruction, so the count below is
/// exact.
fn profitable(f: &LirFunc, s: &Site) -> bool {
    let arm_len = |a: Option<usize>| a.map(|i| f.blocks[i].instrs.len()).unwrap_or(0);
    let merges = merge_regs(f, s);
    // Before: condbr + each arm's instructions + each arm's branch.
    let before = 1 + arm_len(s.then_arm)
        + s.then_arm.map(|_| 1).unwrap_or(0)
        + arm_len(s.else_arm)
        + s.else_arm.map(|_| 1).unwrap_or(0);
    // After: the arms' instructions + one selp/mov per merged register + br.
    let after = arm_len(s.then_arm) + arm_len(s.else_arm) + merges.len() + 1;
    after <= before
}

/// Registers redefined by either arm, in first-definition order.
fn merge_regs(f: &LirFunc, s: &Site) -> Vec<RegId> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for arm in [s.then_arm, s.else_arm].into_iter().flatten() {
        for i in &f.blocks[arm].instrs {
            if let Some(d) = i.def() {
                if seen.insert(d.0) {
                    out.push(d.0);
                }
            }
        }
    }
    out
}

fn apply(f: &mut LirFunc, s: Site) {
    let Terminator::CondBr { pred, .. } = f.blocks[s.block].term else {
        unreachable!("site block must end in a conditional branch");
    };
    let defined = defined_at_exit(f);
    let defined_before = defined[s.block].clone();

    // Hoist each arm with every destination renamed to a fresh register.
    let mut hoisted: Vec<Inst> = Vec::new();
    let mut rename_arm = |f: &mut LirFunc, arm: Option<usize>| -> HashMap<RegId, Reg> {
        let mut map: HashMap<RegId, Reg> = HashMap::new();
        let Some(ai) = arm else { return map };
        let instrs = f.blocks[ai].instrs.clone();
        for mut inst in instrs {
            rewrite_uses(&mut inst, &map);
            if let Some(d) = inst.def() {
                let fresh = Reg(f.regs.len() as RegId);
                f.regs.push(f.reg_type(d));
                set_def(&mut inst, fresh);
                map.insert(d.0, fresh);
            }
            hoisted.push(inst);
        }
        map
    };
    let then_map = rename_arm(f, s.then_arm);
    let else_map = rename_arm(f, s.else_arm);

    // Merge each redefined register. When only one side defines it and it
    // had no prior value, the join could not have read it, so a plain move
    // keeps the verifier happy and DCE will drop it if truly dead.
    let merges = merge_regs(f, &s);
    let mut tail: Vec<Inst> = Vec::new();
    for r in merges {
        let ty = f.reg_type(Reg(r));
        let vt = then_map.get(&r).copied();
        let ve = else_map.get(&r).copied();
        let inst = match (vt, ve) {
            (Some(t), Some(e)) => Inst::Selp {
                ty,
                dst: Reg(r),
                cond: pred,
                a: Operand::Reg(t),
                b: Operand::Reg(e),
            },
            (Some(t), None) if defined_before.contains(&r) => Inst::Selp {
                ty,
                dst: Reg(r),
                cond: pred,
                a: Operand::Reg(t),
                b: Operand::Reg(Reg(r)),
            },
            (None, Some(e)) if defined_before.contains(&r) => Inst::Selp {
                ty,
                dst: Reg(r),
                cond: pred,
                a: Operand::Reg(Reg(r)),
                b: Operand::Reg(e),
            },
            (Some(t), None) => Inst::Mov { ty, dst: Reg(r), src: Operand::Reg(t) },
            (None, Some(e)) => Inst::Mov { ty, dst: Reg(r), src: Operand::Reg(e) },
            (None, None) => unreachable!("merge register defined by neither arm"),
        };
        tail.push(inst);
    }

    let blk = &mut f.blocks[s.block];
    blk.instrs.append(&mut hoisted);
    blk.instrs.append(&mut tail);
    blk.term = Terminator::Br { target: s.join };
}

fn rewrite_uses(inst: &mut Inst, map: &HashMap<RegId, Reg>) {
    let op = |o: &mut Operand| {
        if let Operand::Reg(r) = o {
            if let Some(n) = map.get(&r.0) {
                *o = Operand::Reg(*n);
            }
        }
    };
    let rg = |r: &mut Reg| {
        if let Some(n) = map.get(&r.0) {
            *r = *n;
        }
    };
    let ad = |a: &mut Address| {
        if let Some((r, sc)) = a.index {
            if let Some(n) = map.get(&r.0) {
                a.index = Some((*n, sc));
            }
        }
    };
    match inst {
        Inst::Mov { src, .. } => op(src),
        Inst::Cvt { src, .. } => rg(src),
        Inst::Bin { a, b, .. } | Inst::Setp { a, b, .. } => {
            op(a);
            op(b);
        }
        Inst::Un { a, .. } => rg(a),
        Inst::Selp { cond, a, b, .. } => {
            rg(cond);
            op(a);
            op(b);
        }
        Inst::Ld { addr, .. } => ad(addr),
        Inst::St { addr, src, .. } => {
            ad(addr);
            op(src);
        }
        Inst::Atom { addr, src, .. } => {
            ad(addr);
            op(src);
        }
        Inst::Intrin { a, b, .. } => {
            op(a);
            if let Some(b) = b {
                op(b);
            }
        }
        Inst::LdParam { .. } | Inst::LenBuf { .. } | Inst::Special { .. } | Inst::Bar => {}
    }
}

fn set_def(inst: &mut Inst, fresh: Reg) {
    match inst {
        Inst::Mov { dst, .. }
        | Inst::Cvt { dst, .. }
        | Inst::Bin { dst, .. }
        | Inst::Un { dst, .. }
        | Inst::Setp { dst, .. }
        | Inst::Selp { dst, .. }
        | Inst::LdParam { dst, .. }
        | Inst::LenBuf { dst, .. }
        | Inst::Ld { dst, .. }
        | Inst::Intrin { dst, .. }
        | Inst::Special { dst, .. } => *dst = fresh,
        Inst::St { .. } | Inst::Atom { .. } | Inst::Bar => {}
    }
}

/// Remove blocks that became unreachable and thread trivial forwards —
/// conversion leaves the old arm blocks dangling.
fn cleanup(f: &mut LirFunc) {
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
    if reach.iter().all(|r| *r) {
        return;
    }
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

/// Definite-assignment sets at each block's exit (same must-analysis the
/// verifier runs): a register is in the set when every path from entry to
/// that point defines it.
fn defined_at_exit(f: &LirFunc) -> Vec<HashSet<RegId>> {
    let n = f.blocks.len();
    let universe: HashSet<RegId> = (0..f.regs.len() as RegId).collect();
    let preds = pred_lists(f);
    let defs: Vec<HashSet<RegId>> = f
        .blocks
        .iter()
        .map(|b| b.instrs.iter().filter_map(|i| i.def().map(|r| r.0)).collect())
        .collect();
    let mut out: Vec<HashSet<RegId>> = vec![universe.clone(); n];
    out[0] = defs[0].clone();
    let mut changed = true;
    while changed {
        changed = false;
        for b in 1..n {
            let mut inset = universe.clone();
            if !preds[b].is_empty() {
                for &p in &preds[b] {
                    inset = inset.intersection(&out[p]).copied().collect();
                }
            }
            let new: HashSet<RegId> = inset.union(&defs[b]).copied().collect();
            if new != out[b] {
                out[b] = new;
                changed = true;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lower::lower_kernel;
    use crate::opt::{optimize_lir, OptOptions};
    use crate::parser::parse_unit;
    use crate::passes::{inline_calls, insert_bounds_guards, parallelize, scalar_replace};
    use crate::validate::validate_unit;
    use crate::ast::IdGen;

    fn build(src: &str, exceptions: bool, optimize: bool) -> LirFunc {
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
        let mut lk = lower_kernel(&checked.env, &checked.kernels[&kernel.name], kernel).unwrap();
        if optimize {
            optimize_lir(&mut lk.func, &OptOptions::default()).unwrap();
        }
        lk.func
    }

    const CLAMP: &str = r#"
        @jacc(iterationSpace=ONE_DIMENSION)
        kernel clamp(@read a: i32[], @write c: i32[], @read w: i32) {
            for i in 0..len(c) {
                var x: i32 = a[i];
                if (x < 0) {
                    x = 0;
                }
                if (x > w) {
                    x = w;
                }
                c[i] = x;
            }
        }
    "#;

    #[test]
    fn clamp_triangles_become_selp() {
        let mut f = build(CLAMP, false, true);
        let branches_before = f.condbr_count();
        let count_before = f.instruction_count();
        let changed = predicate(&mut f).unwrap();
        assert!(changed);
        assert!(
            f.condbr_count() + 2 <= branches_before,
            "both clamp branches should convert: {}",
            f.dump()
        );
        assert!(f.instruction_count() <= count_before);
        assert!(f.dump().contains("selp.i32"), "{}", f.dump());
    }

    #[test]
    fn diamond_becomes_selp() {
        let src = r#"
            @jacc(iterationSpace=ONE_DIMENSION)
            kernel pick(@read a: i32[], @write c: i32[]) {
                for i in 0..len(c) {
                    var v: i32 = 0;
                    if (a[i] > 0) {
                        v = 1;
                    } else {
                        v = 2;
                    }
                    c[i] = v;
                }
            }
        "#;
        let mut f = build(src, false, true);
        let before = f.instruction_count();
        assert!(predicate(&mut f).unwrap());
        assert!(f.instruction_count() <= before);
        let d = f.dump();
        assert!(d.contains("selp.i32"), "{d}");
        // The join collapsed into straight-line code inside the loop:
        // only the loop back-edge branch remains.
        assert_eq!(f.condbr_count(), 1, "{d}");
    }

    #[test]
    fn memory_arms_do_not_convert() {
        let src = r#"
            @jacc(iterationSpace=ONE_DIMENSION)
            kernel guard(@read a: i32[], @write c: i32[]) {
                for i in 0..len(c) {
                    if (a[i] > 0) {
                        c[i] = 1;
                    }
                }
            }
        "#;
        let mut f = build(src, false, true);
        let before = f.dump();
        let changed = predicate(&mut f).unwrap();
        assert!(!changed, "store arm must not be speculated:\n{before}\n->\n{}", f.dump());
    }

    #[test]
    fn long_arms_do_not_convert() {
        let src = r#"
            @jacc(iterationSpace=ONE_DIMENSION)
            kernel long(@read a: i32[], @write c: i32[]) {
                for i in 0..len(c) {
                    var x: i32 = a[i];
                    if (x > 0) {
                        x = x * 3;
                        x = x + 7;
                        x = x * 5;
                        x = x - 2;
                        x = x * 9;
                    }
                    c[i] = x;
                }
            }
        "#;
        let mut f = build(src, false, false);
        // Without optimization the arm has well over four instructions.
        let changed = predicate(&mut f).unwrap();
        assert!(!changed, "{}", f.dump());
    }

    #[test]
    fn division_arm_does_not_convert() {
        let src = r#"
            @jacc(iterationSpace=ONE_DIMENSION)
            kernel sdiv(@read a: i32[], @read d: i32, @write c: i32[]) {
                for i in 0..len(c) {
                    var x: i32 = a[i];
                    if (d != 0) {
                        x = x / d;
                    }
                    c[i] = x;
                }
            }
        "#;
        let mut f = build(src, false, true);
        let changed = predicate(&mut f).unwrap();
        assert!(!changed, "speculating a maybe-zero division: {}", f.dump());
    }

    #[test]
    fn predication_never_grows_any_kernel() {
        let sources = [
            (CLAMP, false),
            (CLAMP, true),
            (
                r#"
                @jacc(iterationSpace=ONE_DIMENSION)
                kernel vecadd(@read a: f32[], @read b: f32[], @write c: f32[]) {
                    for i in 0..len(c) { c[i] = a[i] + b[i]; }
                }
                "#,
                true,
            ),
        ];
        for (src, exceptions) in sources {
            let mut f = build(src, exceptions, true);
            let icount = f.instruction_count();
            let bcount = f.blocks.len();
            let brcount = f.condbr_count();
            predicate(&mut f).unwrap();
            assert!(f.instruction_count() <= icount);
            assert!(f.blocks.len() <= bcount);
            assert!(f.condbr_count() <= brcount);
            f.verify().unwrap();
        }
    }

    #[test]
    fn barrier_arm_does_not_convert() {
        // Hand-built: condbr into a block containing a barrier.
        let mut f = LirFunc {
            name: "b".into(),
            params: vec![],
            fields: vec![],
            regs: vec![RegType::Pred],
            blocks: vec![
                BasicBlock {
                    instrs: vec![Inst::Mov {
                        ty: RegType::Pred,
                        dst: Reg(0),
                        src: Operand::ImmI(1),
                    }],
                    term: Terminator::CondBr { pred: Reg(0), then_b: 2, else_b: 1 },
                },
                BasicBlock { instrs: vec![], term: Terminator::Ret },
                BasicBlock { instrs: vec![Inst::Bar], term: Terminator::Br { target: 1 } },
            ],
        };
        f.verify().unwrap();
        assert!(!predicate(&mut f).unwrap());
    }
}
