//! ISA bridge: the last rewrite before emission.
//!
//! The virtual ISA is stricter than the internal representation about where
//! an immediate may appear: an ALU or compare instruction takes one only in
//! its final operand, and store, atomic, and math-intrinsic operands must
//! be registers. `mov` and `selp` accept immediates freely. This pass
//! materializes every other immediate into a fresh register with a `mov`
//! placed just before the consuming instruction, swapping commutative
//! operands first when that avoids the extra move.

use crate::diag::{CompileError, Result};
use crate::lir::*;

/// Rewrite `f` so it satisfies the ISA's operand-position rules.
pub fn bridge(f: &mut LirFunc) -> Result<()> {
    for bi in 0..f.blocks.len() {
        let old = std::mem::take(&mut f.blocks[bi].instrs);
        let mut new: Vec<Inst> = Vec::with_capacity(old.len());
        for mut inst in old {
            match &mut inst {
                Inst::Bin { op, ty, a, b, .. } => {
                    if a.is_imm() && op.commutative() && !b.is_imm() {
                        std::mem::swap(a, b);
                    }
                    if a.is_imm() {
                        *a = materialize(&mut f.regs, &mut new, *a, *ty);
                    }
                }
                Inst::Setp { ty, a, .. } => {
                    if a.is_imm() {
                        let av = *a;
                        *a = materialize(&mut f.regs, &mut new, av, *ty);
                    }
                }
                Inst::St { ty, src, .. } => {
                    if src.is_imm() {
                        let sv = *src;
                        *src = materialize(&mut f.regs, &mut new, sv, *ty);
                    }
                }
                Inst::Atom { ty, src, .. } => {
                    if src.is_imm() {
                        let sv = *src;
                        *src = materialize(&mut f.regs, &mut new, sv, *ty);
                    }
                }
                Inst::Intrin { ty, a, b, .. } => {
                    if a.is_imm() {
                        let av = *a;
                        *a = materialize(&mut f.regs, &mut new, av, *ty);
                    }
                    if let Some(b) = b {
                        if b.is_imm() {
                            let bv = *b;
                            *b = materialize(&mut f.regs, &mut new, bv, *ty);
                        }
                    }
                }
                _ => {}
            }
            new.push(inst);
        }
        f.blocks[bi].instrs = new;
    }
    f.verify()
        .map_err(|e| CompileError::Internal(format!("bridge broke the function: {e}")))
}

fn materialize(regs: &mut Vec<RegType>, out: &mut Vec<Inst>, imm: Operand, ty: RegType) -> Operand {
    let dst = Reg(regs.len() as RegId);
    regs.push(ty);
    out.push(Inst::Mov { ty, dst, src: imm });
    Operand::Reg(dst)
}

/// True when `f` already satisfies the operand-position rules; used by
/// tests and by the emitter as a precondition check.
pub fn satisfies_isa_rules(f: &LirFunc) -> bool {
    f.blocks.iter().flat_map(|b| &b.instrs).all(|i| match i {
        Inst::Bin { a, .. } | Inst::Setp { a, .. } => !a.is_imm(),
        Inst::St { src, .. } | Inst::Atom { src, .. } => !src.is_imm(),
        Inst::Intrin { a, b, .. } => !a.is_imm() && !b.map(|x| x.is_imm()).unwrap_or(false),
        _ => true,
    })
}
