//! Low-level IR: a control-flow graph of typed, register-based instructions.
//!
//! Lowering turns structured HIR into basic blocks of three-address
//! instructions over an unbounded file of typed virtual registers. The
//! instruction inventory intentionally mirrors the virtual ISA — moves,
//! converts, ALU ops, compares producing predicate registers, selects,
//! space-qualified loads/stores, atomics, intrinsic calls, barriers, and
//! trapping terminators — so the final translation to assembly is purely
//! syntactic.
//!
//! Addresses are symbolic: a buffer parameter or a declared field plus an
//! optional scaled index register and byte offset (`[c+%r3*4]`,
//! `[state+8]`). Keeping the base symbolic lets the simulator enforce
//! per-buffer bounds and lets transfer accounting attribute traffic to
//! objects.
//!
//! [`LirFunc::verify`] re-establishes the structural invariants after every
//! pass: targets exist, operand types match, and every register is defined
//! before use on every path (a forward must-analysis over the CFG).

use crate::types::{AtomicOp, MathIntrinsic, MemSpace, ParamMode, ScalarType, ThreadBuiltin};
use std::fmt;

pub type RegId = u32;
pub type BlockId = u32;

/// Machine-level register classes. `Pred` holds booleans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegType {
    Pred,
    I32,
    I64,
    F32,
    F64,
}

impl RegType {
    pub fn of(s: ScalarType) -> RegType {
        match s {
            ScalarType::Bool => RegType::Pred,
            ScalarType::I32 => RegType::I32,
            ScalarType::I64 => RegType::I64,
            ScalarType::F32 => RegType::F32,
            ScalarType::F64 => RegType::F64,
        }
    }

    pub fn suffix(self) -> &'static str {
        match self {
            RegType::Pred => "pred",
            RegType::I32 => "i32",
            RegType::I64 => "i64",
            RegType::F32 => "f32",
            RegType::F64 => "f64",
        }
    }

    pub fn is_integer(self) -> bool {
        matches!(self, RegType::I32 | RegType::I64)
    }

    pub fn is_float(self) -> bool {
        matches!(self, RegType::F32 | RegType::F64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reg(pub RegId);

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%{}", self.0)
    }
}

/// Instruction operand: a register or an immediate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Operand {
    Reg(Reg),
    /// Integer immediate (also 0/1 for predicate moves).
    ImmI(i64),
    /// Float immediate; width given by the instruction type.
    ImmF(f64),
}

impl Operand {
    pub fn reg(self) -> Option<Reg> {
        match self {
            Operand::Reg(r) => Some(r),
            _ => None,
        }
    }

    pub fn is_imm(self) -> bool {
        !matches!(self, Operand::Reg(_))
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "{r}"),
            Operand::ImmI(v) => write!(f, "{v}"),
            Operand::ImmF(v) => write!(f, "{v:?}"),
        }
    }
}

/// What a symbolic address is anchored to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AddrBase {
    /// Index into `LirFunc::params` (buffer or object parameter).
    Param(u32),
    /// Index into `LirFunc::fields`.
    Field(u32),
}

/// `base [+ index*scale] [+ offset]`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Address {
    pub base: AddrBase,
    pub index: Option<(Reg, u32)>,
    pub offset: i64,
}

impl Address {
    pub fn direct(base: AddrBase) -> Self {
        Address { base, index: None, offset: 0 }
    }

    pub fn offset(base: AddrBase, offset: i64) -> Self {
        Address { base, index: None, offset }
    }

    pub fn indexed(base: AddrBase, index: Reg, scale: u32) -> Self {
        Address { base, index: Some((index, scale)), offset: 0 }
    }
}

/// Binary ALU operations (integer and float where sensible).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AluOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    And,
    Or,
    Xor,
    Shl,
    Shr,
}

impl AluOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            AluOp::Add => "add",
            AluOp::Sub => "sub",
            AluOp::Mul => "mul",
            AluOp::Div => "div",
            AluOp::Rem => "rem",
            AluOp::And => "and",
            AluOp::Or => "or",
            AluOp::Xor => "xor",
            AluOp::Shl => "shl",
            AluOp::Shr => "shr",
        }
    }

    /// Commutative ops let CSE canonicalize operand order.
    pub fn commutative(self) -> bool {
        matches!(self, AluOp::Add | AluOp::Mul | AluOp::And | AluOp::Or | AluOp::Xor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnAluOp {
    Neg,
    Not,
}

impl UnAluOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            UnAluOp::Neg => "neg",
            UnAluOp::Not => "not",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            CmpOp::Lt => "lt",
            CmpOp::Le => "le",
            CmpOp::Gt => "gt",
            CmpOp::Ge => "ge",
            CmpOp::Eq => "eq",
            CmpOp::Ne => "ne",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Inst {
    /// `dst = src`
    Mov { ty: RegType, dst: Reg, src: Operand },
    /// `dst = convert src` between register classes.
    Cvt { to: RegType, from: RegType, dst: Reg, src: Reg },
    /// `dst = a <op> b`
    Bin { op: AluOp, ty: RegType, dst: Reg, a: Operand, b: Operand },
    /// `dst = <op> a`
    Un { op: UnAluOp, ty: RegType, dst: Reg, a: Reg },
    /// `dst(pred) = a <cmp> b` comparing values of type `ty`.
    Setp { cmp: CmpOp, ty: RegType, dst: Reg, a: Operand, b: Operand },
    /// `dst = cond ? a : b`
    Selp { ty: RegType, dst: Reg, cond: Reg, a: Operand, b: Operand },
    /// Load a scalar parameter's value.
    LdParam { ty: RegType, dst: Reg, param: u32 },
    /// Length (element count) of a buffer parameter.
    LenBuf { dst: Reg, param: u32 },
    /// Memory load. `cached` is the cachable-parameter hint.
    Ld { space: MemSpace, ty: RegType, dst: Reg, addr: Address, cached: bool },
    /// Memory store.
    St { space: MemSpace, ty: RegType, addr: Address, src: Operand },
    /// Atomic read-modify-write (no result register; fire-and-forget form).
    Atom { space: MemSpace, op: AtomicOp, ty: RegType, addr: Address, src: Operand },
    /// Math intrinsic call.
    Intrin { which: MathIntrinsic, ty: RegType, dst: Reg, a: Operand, b: Option<Operand> },
    /// Read a thread-geometry special register.
    Special { dst: Reg, which: ThreadBuiltin, dim: u8 },
    /// Group-wide barrier.
    Bar,
}

impl Inst {
    /// The register this instruction defines, if any.
    pub fn def(&self) -> Option<Reg> {
        match self {
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
            | Inst::Special { dst, .. } => Some(*dst),
            Inst::St { .. } | Inst::Atom { .. } | Inst::Bar => None,
        }
    }

    /// Registers this instruction reads.
    pub fn uses(&self) -> Vec<Reg> {
        fn op(out: &mut Vec<Reg>, o: &Operand) {
            if let Operand::Reg(r) = o {
                out.push(*r);
            }
        }
        fn addr(out: &mut Vec<Reg>, a: &Address) {
            if let Some((r, _)) = a.index {
                out.push(r);
            }
        }
        let mut out = Vec::new();
        match self {
            Inst::Mov { src, .. } => op(&mut out, src),
            Inst::Cvt { src, .. } => out.push(*src),
            Inst::Bin { a, b, .. } | Inst::Setp { a, b, .. } => {
                op(&mut out, a);
                op(&mut out, b);
            }
            Inst::Un { a, .. } => out.push(*a),
            Inst::Selp { cond, a, b, .. } => {
                out.push(*cond);
                op(&mut out, a);
                op(&mut out, b);
            }
            Inst::Ld { addr: a, .. } => addr(&mut out, a),
            Inst::St { addr: a, src, .. } => {
                addr(&mut out, a);
                op(&mut out, src);
            }
            Inst::Atom { addr: a, src, .. } => {
                addr(&mut out, a);
                op(&mut out, src);
            }
            Inst::Intrin { a, b, .. } => {
                op(&mut out, a);
                if let Some(b) = b {
                    op(&mut out, b);
                }
            }
            Inst::LdParam { .. } | Inst::LenBuf { .. } | Inst::Special { .. } | Inst::Bar => {}
        }
        out
    }

    /// Instructions with observable effects beyond their destination
    /// register can never be removed or duplicated.
    pub fn has_side_effect(&self) -> bool {
        matches!(self, Inst::St { .. } | Inst::Atom { .. } | Inst::Bar)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrapKind {
    /// Out-of-bounds access: the object sits at `base`, `index` holds the
    /// faulting element index.
    Bounds { base: AddrBase, index: Reg },
    /// Arithmetic fault (integer division by zero).
    Arith,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Terminator {
    Br { target: BlockId },
    CondBr { pred: Reg, then_b: BlockId, else_b: BlockId },
    Ret,
    Trap(TrapKind),
}

impl Terminator {
    pub fn targets(&self) -> Vec<BlockId> {
        match self {
            Terminator::Br { target } => vec![*target],
            Terminator::CondBr { then_b, else_b, .. } => vec![*then_b, *else_b],
            Terminator::Ret | Terminator::Trap(_) => vec![],
        }
    }

    pub fn uses(&self) -> Vec<Reg> {
        match self {
            Terminator::CondBr { pred, .. } => vec![*pred],
            Terminator::Trap(TrapKind::Bounds { index, .. }) => vec![*index],
            _ => vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasicBlock {
    pub instrs: Vec<Inst>,
    pub term: Terminator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Scalar(ScalarType),
    Buffer(ScalarType),
    /// Composite object: an opaque byte region of the schema's size.
    Object { size: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LirParam {
    pub name: String,
    pub kind: ParamKind,
    pub mode: ParamMode,
    pub cachable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LirField {
    pub name: String,
    pub space: MemSpace,
    pub elem: ScalarType,
    /// Element count (1 for scalar fields).
    pub count: u32,
    /// Set on global fields that are atomic accumulators; the launch zeroes
    /// them and the flush epilogue combines per-group partials into them.
    pub atomic: Option<AtomicOp>,
}

impl LirField {
    pub fn size_bytes(&self) -> u32 {
        self.elem.size_bytes() * self.count
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LirFunc {
    pub name: String,
    pub params: Vec<LirParam>,
    pub fields: Vec<LirField>,
    /// Register id → type. Index is the `RegId`.
    pub regs: Vec<RegType>,
    /// Block id is the index; block 0 is the entry.
    pub blocks: Vec<BasicBlock>,
}

impl LirFunc {
    pub fn reg_type(&self, r: Reg) -> RegType {
        self.regs[r.0 as usize]
    }

    pub fn param_index(&self, name: &str) -> Option<u32> {
        self.params.iter().position(|p| p.name == name).map(|i| i as u32)
    }

    pub fn field_index(&self, name: &str) -> Option<u32> {
        self.fields.iter().position(|f| f.name == name).map(|i| i as u32)
    }

    /// Name of whatever an address base refers to (for dumps and traps).
    pub fn base_name(&self, base: AddrBase) -> &str {
        match base {
            AddrBase::Param(i) => &self.params[i as usize].name,
            AddrBase::Field(i) => &self.fields[i as usize].name,
        }
    }

    pub fn instruction_count(&self) -> usize {
        self.blocks.iter().map(|b| b.instrs.len() + 1).sum()
    }

    pub fn condbr_count(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| matches!(b.term, Terminator::CondBr { .. }))
            .count()
    }

    /// Structural and dataflow validation; called after every pass.
    pub fn verify(&self) -> Result<(), String> {
        if self.blocks.is_empty() {
            return Err(format!("{}: no blocks", self.name));
        }
        for (bi, b) in self.blocks.iter().enumerate() {
            for t in b.term.targets() {
                if t as usize >= self.blocks.len() {
                    return Err(format!("{}: block {bi} branches to missing block {t}", self.name));
                }
            }
            for inst in &b.instrs {
                self.check_types(bi, inst)?;
            }
            if let Terminator::CondBr { pred, .. } = &b.term {
                if self.reg_type(*pred) != RegType::Pred {
                    return Err(format!("{}: block {bi} branches on non-predicate", self.name));
                }
            }
        }
        self.check_define_before_use()
    }

    fn check_operand(&self, bi: usize, o: &Operand, want: RegType) -> Result<(), String> {
        match o {
            Operand::Reg(r) => {
                if (r.0 as usize) >= self.regs.len() {
                    return Err(format!("{}: block {bi} uses unknown register {r}", self.name));
                }
                if self.reg_type(*r) != want {
                    return Err(format!(
                        "{}: block {bi}: {r} is {}, expected {}",
                        self.name,
                        self.reg_type(*r).suffix(),
                        want.suffix()
                    ));
                }
                Ok(())
            }
            Operand::ImmI(_) => {
                if want.is_float() {
                    return Err(format!(
                        "{}: block {bi}: integer immediate in {} context",
                        self.name,
                        want.suffix()
                    ));
                }
                Ok(())
            }
            Operand::ImmF(_) => {
                if !want.is_float() {
                    return Err(format!(
                        "{}: block {bi}: float immediate in {} context",
                        self.name,
                        want.suffix()
                    ));
                }
                Ok(())
            }
        }
    }

    fn check_addr(&self, bi: usize, a: &Address) -> Result<(), String> {
        match a.base {
            AddrBase::Param(i) => {
                if i as usize >= self.params.len() {
                    return Err(format!("{}: block {bi}: bad param index {i}", self.name));
                }
                if matches!(self.params[i as usize].kind, ParamKind::Scalar(_)) {
                    return Err(format!(
                        "{}: block {bi}: scalar param `{}` used as address",
                        self.name, self.params[i as usize].name
                    ));
                }
            }
            AddrBase::Field(i) => {
                if i as usize >= self.fields.len() {
                    return Err(format!("{}: block {bi}: bad field index {i}", self.name));
                }
            }
        }
        if let Some((r, scale)) = a.index {
            if self.reg_type(r) != RegType::I32 {
                return Err(format!("{}: block {bi}: address index {r} is not i32", self.name));
            }
            if !matches!(scale, 1 | 2 | 4 | 8) {
                return Err(format!("{}: block {bi}: bad address scale {scale}", self.name));
            }
        }
        Ok(())
    }

    fn check_types(&self, bi: usize, inst: &Inst) -> Result<(), String> {
        let dst_is = |dst: &Reg, want: RegType| -> Result<(), String> {
            if self.reg_type(*dst) != want {
                return Err(format!(
                    "{}: block {bi}: destination {dst} is {}, expected {}",
                    self.name,
                    self.reg_type(*dst).suffix(),
                    want.suffix()
                ));
            }
            Ok(())
        };
        match inst {
            Inst::Mov { ty, dst, src } => {
                dst_is(dst, *ty)?;
                // Predicate moves take 0/1 integer immediates.
                if *ty == RegType::Pred {
                    match src {
                        Operand::ImmI(0 | 1) | Operand::Reg(_) => {}
                        _ => return Err(format!("{}: block {bi}: bad predicate move", self.name)),
                    }
                    if let Operand::Reg(r) = src {
                        return self.check_operand(bi, &Operand::Reg(*r), RegType::Pred);
                    }
                    return Ok(());
                }
                self.check_operand(bi, src, *ty)
            }
            Inst::Cvt { to, from, dst, src } => {
                dst_is(dst, *to)?;
                if self.reg_type(*src) != *from {
                    return Err(format!("{}: block {bi}: cvt source type mismatch", self.name));
                }
                if *to == RegType::Pred || *from == RegType::Pred {
                    return Err(format!("{}: block {bi}: cvt on predicates", self.name));
                }
                Ok(())
            }
            Inst::Bin { op, ty, dst, a, b } => {
                dst_is(dst, *ty)?;
                let int_only = matches!(
                    op,
                    AluOp::And | AluOp::Or | AluOp::Xor | AluOp::Shl | AluOp::Shr
                );
                if int_only && ty.is_float() {
                    return Err(format!(
                        "{}: block {bi}: {} on {}",
                        self.name,
                        op.mnemonic(),
                        ty.suffix()
                    ));
                }
                if *ty == RegType::Pred
                    && !matches!(op, AluOp::And | AluOp::Or | AluOp::Xor)
                {
                    return Err(format!("{}: block {bi}: {} on pred", self.name, op.mnemonic()));
                }
                // Shift amounts are i32 regardless of the value type.
                let b_ty = if matches!(op, AluOp::Shl | AluOp::Shr) { RegType::I32 } else { *ty };
                self.check_operand(bi, a, *ty)?;
                self.check_operand(bi, b, b_ty)
            }
            Inst::Un { op, ty, dst, a } => {
                dst_is(dst, *ty)?;
                match op {
                    UnAluOp::Neg if *ty == RegType::Pred => {
                        return Err(format!("{}: block {bi}: neg on pred", self.name))
                    }
                    UnAluOp::Not if ty.is_float() => {
                        return Err(format!("{}: block {bi}: not on float", self.name))
                    }
                    _ => {}
                }
                self.check_operand(bi, &Operand::Reg(*a), *ty)
            }
            Inst::Setp { ty, dst, a, b, .. } => {
                dst_is(dst, RegType::Pred)?;
                if *ty == RegType::Pred {
                    return Err(format!("{}: block {bi}: setp on pred operands", self.name));
                }
                self.check_operand(bi, a, *ty)?;
                self.check_operand(bi, b, *ty)
            }
            Inst::Selp { ty, dst, cond, a, b } => {
                dst_is(dst, *ty)?;
                self.check_operand(bi, &Operand::Reg(*cond), RegType::Pred)?;
                self.check_operand(bi, a, *ty)?;
                self.check_operand(bi, b, *ty)
            }
            Inst::LdParam { ty, dst, param } => {
                dst_is(dst, *ty)?;
                let Some(p) = self.params.get(*param as usize) else {
                    return Err(format!("{}: block {bi}: bad param index", self.name));
                };
                match p.kind {
                    ParamKind::Scalar(s) if RegType::of(s) == *ty => Ok(()),
                    _ => Err(format!(
                        "{}: block {bi}: ld.param type mismatch on `{}`",
                        self.name, p.name
                    )),
                }
            }
            Inst::LenBuf { dst, param } => {
                dst_is(dst, RegType::I32)?;
                let Some(p) = self.params.get(*param as usize) else {
                    return Err(format!("{}: block {bi}: bad param index", self.name));
                };
                match p.kind {
                    ParamKind::Buffer(_) => Ok(()),
                    _ => Err(format!(
                        "{}: block {bi}: len.buf on non-buffer `{}`",
                        self.name, p.name
                    )),
                }
            }
            Inst::Ld { ty, dst, addr, .. } => {
                dst_is(dst, *ty)?;
                if *ty == RegType::Pred {
                    return Err(format!("{}: block {bi}: predicate load", self.name));
                }
                self.check_addr(bi, addr)
            }
            Inst::St { ty, addr, src, .. } => {
                if *ty == RegType::Pred {
                    return Err(format!("{}: block {bi}: predicate store", self.name));
                }
                self.check_addr(bi, addr)?;
                self.check_operand(bi, src, *ty)
            }
            Inst::Atom { op, ty, addr, src, .. } => {
                if !matches!(ty, RegType::I32 | RegType::F32) {
                    return Err(format!("{}: block {bi}: atomics are i32/f32 only", self.name));
                }
                if *ty == RegType::F32 && !op.allows_float() {
                    return Err(format!(
                        "{}: block {bi}: atomic {} on f32",
                        self.name,
                        op.keyword()
                    ));
                }
                self.check_addr(bi, addr)?;
                self.check_operand(bi, src, *ty)
            }
            Inst::Intrin { which, ty, dst, a, b } => {
                match which {
                    MathIntrinsic::Popc => {
                        dst_is(dst, RegType::I32)?;
                        if !ty.is_integer() {
                            return Err(format!("{}: block {bi}: popc on {}", self.name, ty.suffix()));
                        }
                    }
                    _ => {
                        if !ty.is_float() {
                            return Err(format!(
                                "{}: block {bi}: {} on {}",
                                self.name,
                                which.name(),
                                ty.suffix()
                            ));
                        }
                        dst_is(dst, *ty)?;
                    }
                }
                self.check_operand(bi, a, *ty)?;
                match (which.arity(), b) {
                    (1, None) => Ok(()),
                    (2, Some(b)) => self.check_operand(bi, b, *ty),
                    _ => Err(format!("{}: block {bi}: {} arity", self.name, which.name())),
                }
            }
            Inst::Special { dst, dim, .. } => {
                dst_is(dst, RegType::I32)?;
                if *dim > 2 {
                    return Err(format!("{}: block {bi}: special dim {dim}", self.name));
                }
                Ok(())
            }
            Inst::Bar => Ok(()),
        }
    }

    /// Forward must-analysis: a register use is legal only when every path
    /// from the entry defines it first.
    fn check_define_before_use(&self) -> Result<(), String> {
        let n = self.blocks.len();
        let nregs = self.regs.len();
        // preds
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (bi, b) in self.blocks.iter().enumerate() {
            for t in b.term.targets() {
                preds[t as usize].push(bi);
            }
        }
        let full = vec![true; nregs];
        let empty = vec![false; nregs];
        let mut out: Vec<Vec<bool>> = vec![full; n];
        // gen set per block
        let gens: Vec<Vec<Reg>> = self
            .blocks
            .iter()
            .map(|b| b.instrs.iter().filter_map(|i| i.def()).collect())
            .collect();
        let mut changed = true;
        while changed {
            changed = false;
            for bi in 0..n {
                let mut inset = if bi == 0 {
                    empty.clone()
                } else if preds[bi].is_empty() {
                    // Unreachable: treat everything as defined.
                    vec![true; nregs]
                } else {
                    let mut acc = vec![true; nregs];
                    for &p in &preds[bi] {
                        for (i, v) in acc.iter_mut().enumerate() {
                            *v = *v && out[p][i];
                        }
                    }
                    acc
                };
                for r in &gens[bi] {
                    inset[r.0 as usize] = true;
                }
                if inset != out[bi] {
                    out[bi] = inset;
                    changed = true;
                }
            }
        }
        // Final walk with converged IN sets.
        for (bi, b) in self.blocks.iter().enumerate() {
            let mut live = if bi == 0 {
                empty.clone()
            } else if preds[bi].is_empty() {
                vec![true; nregs]
            } else {
                let mut acc = vec![true; nregs];
                for &p in &preds[bi] {
                    for (i, v) in acc.iter_mut().enumerate() {
                        *v = *v && out[p][i];
                    }
                }
                acc
            };
            for inst in &b.instrs {
                for u in inst.uses() {
                    if !live[u.0 as usize] {
                        return Err(format!(
                            "{}: block {bi}: {u} used before definition in `{}`",
                            self.name,
                            self.dump_inst(inst)
                        ));
                    }
                }
                if let Some(d) = inst.def() {
                    live[d.0 as usize] = true;
                }
            }
            for u in b.term.uses() {
                if !live[u.0 as usize] {
                    return Err(format!(
                        "{}: block {bi}: {u} used before definition in terminator",
                        self.name
                    ));
                }
            }
        }
        Ok(())
    }

    // ----- dumps --------------------------------------------------------

    fn dump_addr(&self, a: &Address) -> String {
        let mut s = format!("[{}", self.base_name(a.base));
        if let Some((r, scale)) = a.index {
            s.push_str(&format!("+{r}*{scale}"));
        }
        if a.offset != 0 {
            s.push_str(&format!("+{}", a.offset));
        }
        s.push(']');
        s
    }

    pub fn dump_inst(&self, i: &Inst) -> String {
        match i {
            Inst::Mov { ty, dst, src } => format!("mov.{} {dst}, {src}", ty.suffix()),
            Inst::Cvt { to, from, dst, src } => {
                format!("cvt.{}.{} {dst}, {src}", to.suffix(), from.suffix())
            }
            Inst::Bin { op, ty, dst, a, b } => {
                format!("{}.{} {dst}, {a}, {b}", op.mnemonic(), ty.suffix())
            }
            Inst::Un { op, ty, dst, a } => {
                format!("{}.{} {dst}, {a}", op.mnemonic(), ty.suffix())
            }
            Inst::Setp { cmp, ty, dst, a, b } => {
                format!("setp.{}.{} {dst}, {a}, {b}", cmp.mnemonic(), ty.suffix())
            }
            Inst::Selp { ty, dst, cond, a, b } => {
                format!("selp.{} {dst}, {a}, {b}, {cond}", ty.suffix())
            }
            Inst::LdParam { ty, dst, param } => {
                format!("ld.param.{} {dst}, {}", ty.suffix(), self.params[*param as usize].name)
            }
            Inst::LenBuf { dst, param } => {
                format!("len.buf {dst}, {}", self.params[*param as usize].name)
            }
            Inst::Ld { space, ty, dst, addr, cached } => format!(
                "ld.{}{}.{} {dst}, {}",
                space.keyword(),
                if *cached { ".ca" } else { "" },
                ty.suffix(),
                self.dump_addr(addr)
            ),
            Inst::St { space, ty, addr, src } => format!(
                "st.{}.{} {}, {src}",
                space.keyword(),
                ty.suffix(),
                self.dump_addr(addr)
            ),
            Inst::Atom { space, op, ty, addr, src } => format!(
                "atom.{}.{}.{} {}, {src}",
                space.keyword(),
                op.keyword(),
                ty.suffix(),
                self.dump_addr(addr)
            ),
            Inst::Intrin { which, ty, dst, a, b } => match b {
                Some(b) => format!("{}.{} {dst}, {a}, {b}", which.name(), ty.suffix()),
                None => format!("{}.{} {dst}, {a}", which.name(), ty.suffix()),
            },
            Inst::Special { dst, which, dim } => {
                format!("mov.i32 {dst}, %{}.{}", which.vka_name(), dim)
            }
            Inst::Bar => "bar.group".to_string(),
        }
    }

    /// Stable, diff-friendly dump for golden tests and `--dump-ir`.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("func {}(", self.name));
        for (i, p) in self.params.iter().enumerate() {
            if i > 0 {
                s.push_str(", ");
            }
            let kind = match p.kind {
                ParamKind::Scalar(t) => format!("{t}"),
                ParamKind::Buffer(t) => format!("{t}[]"),
                ParamKind::Object { size } => format!("object<{size}>"),
            };
            s.push_str(&format!("{}: {} {}", p.name, p.mode.keyword(), kind));
            if p.cachable {
                s.push_str(" cachable");
            }
        }
        s.push_str(") {\n");
        for f in &self.fields {
            let shape = if f.count == 1 {
                f.elem.to_string()
            } else {
                format!("{}[{}]", f.elem, f.count)
            };
            let atomic = match f.atomic {
                Some(op) => format!(" atomic({})", op.keyword()),
                None => String::new(),
            };
            s.push_str(&format!("  field {}: {} {shape}{atomic}\n", f.name, f.space.keyword()));
        }
        for (bi, b) in self.blocks.iter().enumerate() {
            s.push_str(&format!("L{bi}:\n"));
            for inst in &b.instrs {
                s.push_str(&format!("    {}\n", self.dump_inst(inst)));
            }
            let t = match &b.term {
                Terminator::Br { target } => format!("bra L{target}"),
                Terminator::CondBr { pred, then_b, else_b } => {
                    format!("condbr {pred}, L{then_b}, L{else_b}")
                }
                Terminator::Ret => "ret".to_string(),
                Terminator::Trap(TrapKind::Bounds { base, index }) => {
                    format!("trap.bounds {}, {index}", self.base_name(*base))
                }
                Terminator::Trap(TrapKind::Arith) => "trap.arith".to_string(),
            };
            s.push_str(&format!("    {t}\n"));
        }
        s.push_str("}\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Minimal function: store param-length to c[0].
    fn sample() -> LirFunc {
        LirFunc {
            name: "t".into(),
            params: vec![LirParam {
                name: "c".into(),
                kind: ParamKind::Buffer(ScalarType::I32),
                mode: ParamMode::Write,
                cachable: false,
            }],
            fields: vec![],
            regs: vec![RegType::I32],
            blocks: vec![BasicBlock {
                instrs: vec![
                    Inst::LenBuf { dst: Reg(0), param: 0 },
                    Inst::St {
                        space: MemSpace::Global,
                        ty: RegType::I32,
                        addr: Address::direct(AddrBase::Param(0)),
                        src: Operand::Reg(Reg(0)),
                    },
                ],
                term: Terminator::Ret,
            }],
        }
    }

    #[test]
    fn well_formed_function_verifies() {
        sample().verify().unwrap();
    }

    #[test]
    fn use_before_def_is_rejected() {
        let mut f = sample();
        f.regs.push(RegType::I32);
        f.blocks[0].instrs.insert(
            0,
            Inst::Mov { ty: RegType::I32, dst: Reg(0), src: Operand::Reg(Reg(1)) },
        );
        let err = f.verify().unwrap_err();
        assert!(err.contains("used before definition"), "{err}");
    }

    #[test]
    fn partial_definition_across_branches_is_rejected() {
        // r1 defined only on the then-path, used at the join.
        let f = LirFunc {
            name: "t".into(),
            params: vec![],
            fields: vec![LirField {
                name: "out".into(),
                space: MemSpace::Global,
                elem: ScalarType::I32,
                count: 1,
                atomic: None,
            }],
            regs: vec![RegType::Pred, RegType::I32],
            blocks: vec![
                BasicBlock {
                    instrs: vec![Inst::Mov { ty: RegType::Pred, dst: Reg(0), src: Operand::ImmI(1) }],
                    term: Terminator::CondBr { pred: Reg(0), then_b: 1, else_b: 2 },
                },
                BasicBlock {
                    instrs: vec![Inst::Mov { ty: RegType::I32, dst: Reg(1), src: Operand::ImmI(7) }],
                    term: Terminator::Br { target: 2 },
                },
                BasicBlock {
                    instrs: vec![Inst::St {
                        space: MemSpace::Global,
                        ty: RegType::I32,
                        addr: Address::direct(AddrBase::Field(0)),
                        src: Operand::Reg(Reg(1)),
                    }],
                    term: Terminator::Ret,
                },
            ],
        };
        let err = f.verify().unwrap_err();
        assert!(err.contains("used before definition"), "{err}");
    }

    #[test]
    fn type_mismatch_is_rejected() {
        let mut f = sample();
        f.regs.push(RegType::F32);
        f.blocks[0].instrs.push(Inst::Bin {
            op: AluOp::Add,
            ty: RegType::I32,
            dst: Reg(0),
            a: Operand::Reg(Reg(1)),
            b: Operand::ImmI(1),
        });
        assert!(f.verify().is_err());
    }

    #[test]
    fn missing_branch_target_is_rejected() {
        let mut f = sample();
        f.blocks[0].term = Terminator::Br { target: 9 };
        let err = f.verify().unwrap_err();
        assert!(err.contains("missing block"), "{err}");
    }

    #[test]
    fn float_atomic_requires_add_or_sub() {
        let f = LirFunc {
            name: "t".into(),
            params: vec![],
            fields: vec![LirField {
                name: "acc".into(),
                space: MemSpace::Shared,
                elem: ScalarType::F32,
                count: 1,
                atomic: Some(AtomicOp::Xor),
            }],
            regs: vec![],
            blocks: vec![BasicBlock {
                instrs: vec![Inst::Atom {
                    space: MemSpace::Shared,
                    op: AtomicOp::Xor,
                    ty: RegType::F32,
                    addr: Address::direct(AddrBase::Field(0)),
                    src: Operand::ImmF(1.0),
                }],
                term: Terminator::Ret,
            }],
        };
        let err = f.verify().unwrap_err();
        assert!(err.contains("atomic xor on f32"), "{err}");
    }

    #[test]
    fn dump_is_stable_and_named() {
        let f = sample();
        let d = f.dump();
        assert!(d.contains("func t(c: write i32[])"), "{d}");
        assert!(d.contains("len.buf %0, c"), "{d}");
        assert!(d.contains("st.global.i32 [c], %0"), "{d}");
        assert_eq!(d, f.dump());
    }
}
