//! Lowering from validated HIR to LIR.
//!
//! Runs after the HIR passes, so the kernel it sees is grid-strided, call-free,
//! object-free, and (when exception checks are on) carries explicit bounds
//! guards. Lowering is therefore a mostly syntax-directed walk:
//!
//! - every local gets one dedicated virtual register (non-SSA; the copy
//!   propagation and CSE passes clean up the redundant moves);
//! - structured `for`/`if` become the usual header/body/exit block shapes,
//!   with loop bounds and step evaluated once before entry;
//! - bounds guards become `setp`/`and.pred` checks branching to terminal
//!   trap blocks;
//! - composite parameters become opaque byte objects addressed by schema
//!   offset (`[state+8]`), and every field touch is recorded in a
//!   [`FieldAccessSet`] so the host can serialize only what the kernel reads
//!   and copy back only what it writes;
//! - atomic fields get a zero-initialized shared-memory mirror per group:
//!   each assignment combines into the mirror with `atom.shared.<op>`, and a
//!   flush epilogue (barrier, then a strided loop) folds the per-group
//!   partials into the global field with one global atomic per element. The
//!   launch zeroes the global slots, so `sub` partials — which are negative
//!   running sums — flush with `add`, and the bitwise ops flush with
//!   themselves.
//!
//! The output is verified (types, targets, define-before-use) before it is
//! returned.

use crate::ast::*;
use crate::diag::{CompileError, Result};
use crate::lir::*;
use crate::schema::{self, DataSchema, FieldAccessSet};
use crate::types::{AtomicOp, MathIntrinsic, MemSpace, ScalarType, ThreadBuiltin, Type};
use crate::validate::{CheckedKernel, UnitEnv};
use std::collections::HashMap;

/// A lowered kernel plus the host-side metadata the runtime needs.
#[derive(Debug, Clone)]
pub struct LoweredKernel {
    pub func: LirFunc,
    /// Packed layout of the kernel's global/constant fields (its implicit
    /// state object), when it has any.
    pub state_schema: Option<DataSchema>,
    /// Which state fields the kernel reads/writes.
    pub state_access: FieldAccessSet,
    /// Composite parameters: name → (layout, per-field access).
    pub object_params: HashMap<String, (DataSchema, FieldAccessSet)>,
}

pub fn lower_kernel(env: &UnitEnv, kc: &CheckedKernel, kernel: &KernelHir) -> Result<LoweredKernel> {
    Lowerer::new(env, kc, kernel)?.run()
}

fn internal(msg: impl Into<String>) -> CompileError {
    CompileError::Internal(msg.into())
}

/// Where a name resolves during lowering.
#[derive(Debug, Clone, Copy)]
enum Place {
    Local(Reg),
    ScalarParam(u32),
    BufferParam(u32),
    ObjectParam(u32),
    Field(u32),
}

/// One atomic accumulator: global field, its shared mirror, and how the
/// epilogue folds mirror values into the global slots.
struct FlushPlan {
    global: u32,
    mirror: u32,
    op: AtomicOp,
    elem: ScalarType,
    count: u32,
}

struct Lowerer<'a> {
    kc: &'a CheckedKernel,
    kernel: &'a KernelHir,
    func: LirFunc,
    cur: BlockId,
    exit: BlockId,
    locals: HashMap<String, Reg>,
    atomic_fields: HashMap<String, (u32, AtomicOp)>,
    flushes: Vec<FlushPlan>,
    state_access: FieldAccessSet,
    object_params: HashMap<String, (DataSchema, FieldAccessSet)>,
}

impl<'a> Lowerer<'a> {
    fn new(env: &'a UnitEnv, kc: &'a CheckedKernel, kernel: &'a KernelHir) -> Result<Self> {
        let mut func = LirFunc {
            name: kernel.name.clone(),
            params: Vec::new(),
            fields: Vec::new(),
            regs: Vec::new(),
            blocks: Vec::new(),
        };
        let mut object_params = HashMap::new();
        for p in &kernel.params {
            let kind = match &p.ty {
                Type::Scalar(s) => ParamKind::Scalar(*s),
                Type::Array(s) => ParamKind::Buffer(*s),
                Type::Composite(tname) => {
                    let sch = schema::build_schema(env, tname)
                        .ok_or_else(|| internal(format!("no schema for `{tname}`")))?;
                    let size = sch.size;
                    object_params.insert(p.name.clone(), (sch, FieldAccessSet::default()));
                    ParamKind::Object { size }
                }
                Type::FixedArray(_, _) => {
                    return Err(internal("fixed array as parameter"));
                }
            };
            func.params.push(LirParam {
                name: p.name.clone(),
                kind,
                mode: p.mode,
                cachable: p.cachable,
            });
        }

        let mut atomic_fields = HashMap::new();
        let mut pending_mirrors: Vec<(String, AtomicOp)> = Vec::new();
        for f in &kernel.fields {
            let (elem, count) = match &f.ty {
                Type::Scalar(s) => (*s, 1),
                Type::FixedArray(s, n) => (*s, *n),
                _ => return Err(internal(format!("field `{}` has a non-device type", f.name))),
            };
            let aop = match f.atomicity {
                FieldAtomicity::NotAtomic => None,
                FieldAtomicity::Declared(op) => Some(op),
                FieldAtomicity::Inferred => Some(
                    kc.atomic_ops
                        .get(&f.name)
                        .copied()
                        .ok_or_else(|| internal(format!("unresolved atomic op for `{}`", f.name)))?,
                ),
            };
            if let Some(op) = aop {
                if f.space != MemSpace::Global {
                    return Err(internal(format!("atomic field `{}` is not global", f.name)));
                }
                atomic_fields.insert(f.name.clone(), (func.fields.len() as u32, op));
                pending_mirrors.push((f.name.clone(), op));
            }
            func.fields.push(LirField {
                name: f.name.clone(),
                space: f.space,
                elem,
                count,
                atomic: aop,
            });
        }
        // Shared mirrors come after the declared fields so field indices in
        // the source order stay stable.
        let mut flushes = Vec::new();
        for (fname, op) in pending_mirrors {
            let gi = atomic_fields[&fname].0;
            let mut mname = format!("{fname}__part");
            while func.fields.iter().any(|f| f.name == mname)
                || func.params.iter().any(|p| p.name == mname)
            {
                mname.push('_');
            }
            let (elem, count) = {
                let g = &func.fields[gi as usize];
                (g.elem, g.count)
            };
            let mi = func.fields.len() as u32;
            func.fields.push(LirField {
                name: mname,
                space: MemSpace::Shared,
                elem,
                count,
                atomic: None,
            });
            flushes.push(FlushPlan { global: gi, mirror: mi, op, elem, count });
        }

        Ok(Lowerer {
            kc,
            kernel,
            func,
            cur: 0,
            exit: 0,
            locals: HashMap::new(),
            atomic_fields,
            flushes,
            state_access: FieldAccessSet::default(),
            object_params,
        })
    }

    fn run(mut self) -> Result<LoweredKernel> {
        let entry = self.new_block();
        debug_assert_eq!(entry, 0);
        self.exit = self.new_block();
        self.cur = entry;

        let body = self.kernel.body.clone();
        self.lower_block(&body)?;
        let exit = self.exit;
        self.set_term(Terminator::Br { target: exit });

        self.cur = exit;
        self.emit_epilogue()?;

        self.func
            .verify()
            .map_err(|e| internal(format!("lowering produced invalid code: {e}")))?;

        let state_fields: Vec<(&str, &Type)> = self
            .kernel
            .fields
            .iter()
            .filter(|f| matches!(f.space, MemSpace::Global | MemSpace::Constant))
            .map(|f| (f.name.as_str(), &f.ty))
            .collect();
        let state_schema = if state_fields.is_empty() {
            None
        } else {
            Some(schema::layout(&format!("{}::state", self.kernel.name), state_fields))
        };

        Ok(LoweredKernel {
            func: self.func,
            state_schema,
            state_access: self.state_access,
            object_params: self.object_params,
        })
    }

    // ----- CFG plumbing ---------------------------------------------------

    fn new_block(&mut self) -> BlockId {
        self.func.blocks.push(BasicBlock { instrs: Vec::new(), term: Terminator::Ret });
        (self.func.blocks.len() - 1) as BlockId
    }

    fn emit(&mut self, i: Inst) {
        self.func.blocks[self.cur as usize].instrs.push(i);
    }

    fn set_term(&mut self, t: Terminator) {
        self.func.blocks[self.cur as usize].term = t;
    }

    fn fresh(&mut self, ty: RegType) -> Reg {
        self.func.regs.push(ty);
        Reg((self.func.regs.len() - 1) as RegId)
    }

    // ----- name and type lookups -------------------------------------------

    fn ety(&self, e: &Expr) -> Result<RegType> {
        let t = self
            .kc
            .expr_types
            .get(&e.id())
            .ok_or_else(|| internal(format!("untyped expression at {}", e.span())))?;
        match t {
            Type::Scalar(s) => Ok(RegType::of(*s)),
            other => Err(internal(format!("expression of non-scalar type {other}"))),
        }
    }

    fn resolve(&self, name: &str) -> Result<Place> {
        if let Some(r) = self.locals.get(name) {
            return Ok(Place::Local(*r));
        }
        if let Some(i) = self.func.param_index(name) {
            return Ok(match self.func.params[i as usize].kind {
                ParamKind::Scalar(_) => Place::ScalarParam(i),
                ParamKind::Buffer(_) => Place::BufferParam(i),
                ParamKind::Object { .. } => Place::ObjectParam(i),
            });
        }
        if let Some(i) = self.func.field_index(name) {
            return Ok(Place::Field(i));
        }
        Err(internal(format!("unresolved name `{name}` during lowering")))
    }

    // ----- expressions ------------------------------------------------------

    /// Lower an index expression into an address against `base`.
    /// Immediate indexes fold into the byte offset.
    fn element_addr(&mut self, base: AddrBase, elem: ScalarType, index: &Expr) -> Result<Address> {
        let scale = elem.size_bytes();
        match self.lower_expr(index)? {
            Operand::ImmI(k) => Ok(Address::offset(base, k * scale as i64)),
            Operand::Reg(r) => Ok(Address::indexed(base, r, scale)),
            Operand::ImmF(_) => Err(internal("float array index")),
        }
    }

    fn lower_to_reg(&mut self, e: &Expr) -> Result<Reg> {
        let ty = self.ety(e)?;
        match self.lower_expr(e)? {
            Operand::Reg(r) => Ok(r),
            imm => {
                let d = self.fresh(ty);
                self.emit(Inst::Mov { ty, dst: d, src: imm });
                Ok(d)
            }
        }
    }

    fn lower_expr(&mut self, e: &Expr) -> Result<Operand> {
        match e {
            Expr::IntLit { value, .. } => match self.ety(e)? {
                RegType::F32 | RegType::F64 => Ok(Operand::ImmF(*value as f64)),
                _ => Ok(Operand::ImmI(*value)),
            },
            Expr::FloatLit { value, .. } => Ok(Operand::ImmF(*value)),
            Expr::BoolLit { value, .. } => Ok(Operand::ImmI(*value as i64)),
            Expr::Ident { name, .. } => match self.resolve(name)? {
                Place::Local(r) => Ok(Operand::Reg(r)),
                Place::ScalarParam(i) => {
                    let ty = self.ety(e)?;
                    let d = self.fresh(ty);
                    self.emit(Inst::LdParam { ty, dst: d, param: i });
                    Ok(Operand::Reg(d))
                }
                Place::Field(i) => {
                    if self.atomic_fields.contains_key(name) {
                        return Err(internal(format!("read of atomic field `{name}`")));
                    }
                    let f = &self.func.fields[i as usize];
                    let (space, ty) = (f.space, RegType::of(f.elem));
                    if matches!(space, MemSpace::Global | MemSpace::Constant) {
                        self.state_access.note_read(name);
                    }
                    let d = self.fresh(ty);
                    self.emit(Inst::Ld {
                        space,
                        ty,
                        dst: d,
                        addr: Address::direct(AddrBase::Field(i)),
                        cached: false,
                    });
                    Ok(Operand::Reg(d))
                }
                Place::BufferParam(_) | Place::ObjectParam(_) => {
                    Err(internal(format!("aggregate `{name}` used as a value")))
                }
            },
            Expr::Unary { op, operand, .. } => self.lower_unary(*op, operand),
            Expr::Binary { op, lhs, rhs, .. } => self.lower_binary(*op, lhs, rhs),
            Expr::Cast { expr, ty, .. } => {
                let from = self.ety(expr)?;
                let to = RegType::of(*ty);
                if from == to {
                    return self.lower_expr(expr);
                }
                let src = self.lower_to_reg(expr)?;
                let d = self.fresh(to);
                self.emit(Inst::Cvt { to, from, dst: d, src });
                Ok(Operand::Reg(d))
            }
            Expr::Index { base, index, .. } => {
                let (addr, space, elem, cached) = self.array_ref(base, index)?;
                let ty = RegType::of(elem);
                let d = self.fresh(ty);
                self.emit(Inst::Ld { space, ty, dst: d, addr, cached });
                Ok(Operand::Reg(d))
            }
            Expr::Field { base, field, .. } => {
                let (addr, elem) = self.object_field_ref(base, field, false)?;
                let ty = RegType::of(elem);
                let d = self.fresh(ty);
                let cached = match addr.base {
                    AddrBase::Param(i) => self.func.params[i as usize].cachable,
                    AddrBase::Field(_) => false,
                };
                self.emit(Inst::Ld { space: MemSpace::Global, ty, dst: d, addr, cached });
                Ok(Operand::Reg(d))
            }
            Expr::Len { array, .. } => {
                let Expr::Ident { name, .. } = array.as_ref() else {
                    return Err(internal("len() of a non-identifier"));
                };
                match self.resolve(name)? {
                    Place::BufferParam(i) => {
                        let d = self.fresh(RegType::I32);
                        self.emit(Inst::LenBuf { dst: d, param: i });
                        Ok(Operand::Reg(d))
                    }
                    Place::Field(i) => Ok(Operand::ImmI(self.func.fields[i as usize].count as i64)),
                    _ => Err(internal(format!("len() of non-array `{name}`"))),
                }
            }
            Expr::Builtin { which, dim, .. } => {
                let d = self.fresh(RegType::I32);
                self.emit(Inst::Special { dst: d, which: *which, dim: *dim });
                Ok(Operand::Reg(d))
            }
            Expr::Intrinsic { which, args, .. } => {
                let ty = match which {
                    MathIntrinsic::Popc => self.ety(&args[0])?,
                    _ => self.ety(e)?,
                };
                let a = self.lower_expr(&args[0])?;
                let b = match args.get(1) {
                    Some(arg) => Some(self.lower_expr(arg)?),
                    None => None,
                };
                let dst_ty = if *which == MathIntrinsic::Popc { RegType::I32 } else { ty };
                let d = self.fresh(dst_ty);
                self.emit(Inst::Intrin { which: *which, ty, dst: d, a, b });
                Ok(Operand::Reg(d))
            }
            Expr::Call { callee, .. } => {
                Err(internal(format!("call to `{callee}` survived inlining")))
            }
            Expr::New { type_name, .. } => {
                Err(internal(format!("`new {type_name}` survived scalar replacement")))
            }
        }
    }

    fn lower_unary(&mut self, op: UnOp, operand: &Expr) -> Result<Operand> {
        // Fold negation of literals so `-1` is an immediate, not an
        // instruction.
        if op == UnOp::Neg {
            match self.lower_expr(operand)? {
                Operand::ImmI(v) => return Ok(Operand::ImmI(v.wrapping_neg())),
                Operand::ImmF(v) => return Ok(Operand::ImmF(-v)),
                Operand::Reg(r) => {
                    let ty = self.ety(operand)?;
                    let d = self.fresh(ty);
                    self.emit(Inst::Un { op: UnAluOp::Neg, ty, dst: d, a: r });
                    return Ok(Operand::Reg(d));
                }
            }
        }
        let ty = self.ety(operand)?;
        let a = self.lower_to_reg(operand)?;
        let d = self.fresh(ty);
        self.emit(Inst::Un { op: UnAluOp::Not, ty, dst: d, a });
        Ok(Operand::Reg(d))
    }

    fn lower_binary(&mut self, op: BinOp, lhs: &Expr, rhs: &Expr) -> Result<Operand> {
        if let Some(cmp) = cmp_of(op) {
            let ty = self.ety(lhs)?;
            let a = self.lower_expr(lhs)?;
            let b = self.lower_expr(rhs)?;
            let d = self.fresh(RegType::Pred);
            self.emit(Inst::Setp { cmp, ty, dst: d, a, b });
            return Ok(Operand::Reg(d));
        }
        let alu = match op {
            BinOp::LogAnd => AluOp::And,
            BinOp::LogOr => AluOp::Or,
            other => alu_of(other).ok_or_else(|| internal("unhandled binary operator"))?,
        };
        let ty = if matches!(op, BinOp::LogAnd | BinOp::LogOr) {
            RegType::Pred
        } else {
            self.ety(lhs)?
        };
        let a = self.lower_expr(lhs)?;
        let b = self.lower_expr(rhs)?;
        let d = self.fresh(ty);
        self.emit(Inst::Bin { op: alu, ty, dst: d, a, b });
        Ok(Operand::Reg(d))
    }

    /// Resolve `base[index]` to an address plus element info.
    fn array_ref(
        &mut self,
        base: &Expr,
        index: &Expr,
    ) -> Result<(Address, MemSpace, ScalarType, bool)> {
        let Expr::Ident { name, .. } = base else {
            return Err(internal("array base is not an identifier"));
        };
        match self.resolve(name)? {
            Place::BufferParam(i) => {
                let (elem, cached) = match self.func.params[i as usize].kind {
                    ParamKind::Buffer(s) => (s, self.func.params[i as usize].cachable),
                    _ => unreachable!(),
                };
                let addr = self.element_addr(AddrBase::Param(i), elem, index)?;
                Ok((addr, MemSpace::Global, elem, cached))
            }
            Place::Field(i) => {
                let f = &self.func.fields[i as usize];
                let (space, elem) = (f.space, f.elem);
                if matches!(space, MemSpace::Global | MemSpace::Constant) {
                    self.state_access.note_read(name);
                }
                let addr = self.element_addr(AddrBase::Field(i), elem, index)?;
                Ok((addr, space, elem, false))
            }
            _ => Err(internal(format!("indexing non-array `{name}`"))),
        }
    }

    /// Resolve `obj.field` on a composite parameter; records the access.
    fn object_field_ref(
        &mut self,
        base: &Expr,
        field: &str,
        write: bool,
    ) -> Result<(Address, ScalarType)> {
        let Expr::Ident { name, .. } = base else {
            return Err(internal("object base is not an identifier"));
        };
        let Place::ObjectParam(i) = self.resolve(name)? else {
            return Err(internal(format!("`{name}` is not an object parameter")));
        };
        let (schema, access) = self
            .object_params
            .get_mut(name)
            .ok_or_else(|| internal(format!("no schema recorded for `{name}`")))?;
        let slot = schema
            .field(field)
            .ok_or_else(|| internal(format!("no field `{field}` on `{name}`")))?;
        let (offset, elem) = (slot.offset, slot.elem);
        if write {
            access.note_write(field);
        } else {
            access.note_read(field);
        }
        Ok((Address::offset(AddrBase::Param(i), offset as i64), elem))
    }

    // ----- statements -------------------------------------------------------

    fn lower_block(&mut self, b: &Block) -> Result<()> {
        for s in &b.stmts {
            self.lower_stmt(s)?;
        }
        Ok(())
    }

    fn lower_stmt(&mut self, s: &Stmt) -> Result<()> {
        match s {
            Stmt::VarDecl { name, init, .. } => {
                let ty = match self.kc.local_types.get(name) {
                    Some(Type::Scalar(sc)) => RegType::of(*sc),
                    Some(other) => {
                        return Err(internal(format!(
                            "local `{name}` of type {other} survived scalar replacement"
                        )))
                    }
                    None => return Err(internal(format!("untyped local `{name}`"))),
                };
                let v = self.lower_expr(init)?;
                let r = self.fresh(ty);
                self.emit(Inst::Mov { ty, dst: r, src: v });
                self.locals.insert(name.clone(), r);
                Ok(())
            }
            Stmt::Assign { target, op, value, .. } => self.lower_assign(target, *op, value),
            Stmt::For { var, lo, hi, step, body, .. } => self.lower_for(var, lo, hi, step, body),
            Stmt::If { cond, then_blk, else_blk, .. } => self.lower_if(cond, then_blk, else_blk),
            Stmt::Barrier { .. } => {
                self.emit(Inst::Bar);
                Ok(())
            }
            Stmt::Return { .. } => {
                let exit = self.exit;
                self.set_term(Terminator::Br { target: exit });
                // Anything after the return lowers into an unreachable block.
                self.cur = self.new_block();
                Ok(())
            }
            Stmt::BoundsGuard { array, index, .. } => self.lower_guard(array, index),
        }
    }

    /// Is the assignment target an atomic field site? Returns the field name.
    fn atomic_target<'e>(&self, target: &'e Expr) -> Option<(&'e str, Option<&'e Expr>)> {
        match target {
            Expr::Ident { name, .. } if self.atomic_fields.contains_key(name) => {
                Some((name.as_str(), None))
            }
            Expr::Index { base, index, .. } => match base.as_ref() {
                Expr::Ident { name, .. } if self.atomic_fields.contains_key(name) => {
                    Some((name.as_str(), Some(index)))
                }
                _ => None,
            },
            _ => None,
        }
    }

    fn lower_assign(&mut self, target: &Expr, op: Option<BinOp>, value: &Expr) -> Result<()> {
        if let Some((fname, index)) = self.atomic_target(target) {
            return self.lower_atomic_site(fname, index, op, value);
        }
        match target {
            Expr::Ident { name, .. } => match self.resolve(name)? {
                Place::Local(r) => {
                    let ty = self.func.reg_type(r);
                    match op {
                        None => {
                            let v = self.lower_expr(value)?;
                            self.emit(Inst::Mov { ty, dst: r, src: v });
                        }
                        Some(bop) => {
                            let alu =
                                alu_of(bop).ok_or_else(|| internal("bad compound operator"))?;
                            let v = self.lower_expr(value)?;
                            self.emit(Inst::Bin { op: alu, ty, dst: r, a: Operand::Reg(r), b: v });
                        }
                    }
                    Ok(())
                }
                Place::Field(i) => {
                    let f = &self.func.fields[i as usize];
                    let (space, elem) = (f.space, f.elem);
                    let ty = RegType::of(elem);
                    let addr = Address::direct(AddrBase::Field(i));
                    if matches!(space, MemSpace::Global | MemSpace::Constant) {
                        self.state_access.note_write(name);
                    }
                    let v = self.compose_value(space, ty, addr, op, value, false)?;
                    self.emit(Inst::St { space, ty, addr, src: v });
                    Ok(())
                }
                _ => Err(internal(format!("bad assignment target `{name}`"))),
            },
            Expr::Index { base, index, .. } => {
                let (addr, space, elem, cached) = self.array_ref(base, index)?;
                if let Expr::Ident { name, .. } = base.as_ref() {
                    if matches!(self.resolve(name)?, Place::Field(_))
                        && matches!(space, MemSpace::Global | MemSpace::Constant)
                    {
                        self.state_access.note_write(name);
                    }
                }
                let ty = RegType::of(elem);
                let v = self.compose_value(space, ty, addr, op, value, cached)?;
                self.emit(Inst::St { space, ty, addr, src: v });
                Ok(())
            }
            Expr::Field { base, field, .. } => {
                let (addr, elem) = self.object_field_ref(base, field, true)?;
                let ty = RegType::of(elem);
                if op.is_some() {
                    // Compound also reads the slot.
                    if let Expr::Ident { name, .. } = base.as_ref() {
                        if let Some((_, access)) = self.object_params.get_mut(name) {
                            access.note_read(field);
                        }
                    }
                }
                let v = self.compose_value(MemSpace::Global, ty, addr, op, value, false)?;
                self.emit(Inst::St { space: MemSpace::Global, ty, addr, src: v });
                Ok(())
            }
            _ => Err(internal("unsupported assignment target")),
        }
    }

    /// Value operand for a (possibly compound) store to `addr`.
    fn compose_value(
        &mut self,
        space: MemSpace,
        ty: RegType,
        addr: Address,
        op: Option<BinOp>,
        value: &Expr,
        cached: bool,
    ) -> Result<Operand> {
        match op {
            None => self.lower_expr(value),
            Some(bop) => {
                let alu = alu_of(bop).ok_or_else(|| internal("bad compound operator"))?;
                let cur = self.fresh(ty);
                self.emit(Inst::Ld { space, ty, dst: cur, addr, cached });
                let v = self.lower_expr(value)?;
                let d = self.fresh(ty);
                self.emit(Inst::Bin { op: alu, ty, dst: d, a: Operand::Reg(cur), b: v });
                Ok(Operand::Reg(d))
            }
        }
    }

    /// One atomic-field assignment: combine into the shared mirror.
    fn lower_atomic_site(
        &mut self,
        fname: &str,
        index: Option<&Expr>,
        op: Option<BinOp>,
        value: &Expr,
    ) -> Result<()> {
        let (_, resolved) = self.atomic_fields[fname];
        let mirror = self
            .flushes
            .iter()
            .find(|fl| self.func.fields[fl.global as usize].name == fname)
            .map(|fl| (fl.mirror, fl.elem))
            .ok_or_else(|| internal(format!("no mirror for atomic field `{fname}`")))?;
        let (mi, elem) = mirror;
        let ty = RegType::of(elem);

        // Which expression supplies the combined operand (mirrors the
        // reference interpreter): compound uses the right-hand side as-is;
        // a plain `f = f <op> e` on a scalar field contributes `e`; any
        // other plain assignment contributes its full right-hand side.
        let operand: &Expr = match op {
            Some(_) => value,
            None => match value {
                Expr::Binary { lhs, rhs, op: bop, .. }
                    if index.is_none()
                        && matches!(lhs.as_ref(), Expr::Ident { name, .. } if name == fname)
                        && bop.as_atomic_op() == Some(resolved) =>
                {
                    rhs
                }
                _ => value,
            },
        };

        let addr = match index {
            None => Address::direct(AddrBase::Field(mi)),
            Some(ix) => self.element_addr(AddrBase::Field(mi), elem, ix)?,
        };
        let src = self.lower_expr(operand)?;
        self.state_access.note_write(fname);
        self.emit(Inst::Atom { space: MemSpace::Shared, op: resolved, ty, addr, src });
        Ok(())
    }

    fn lower_for(
        &mut self,
        var: &str,
        lo: &Expr,
        hi: &Expr,
        step: &Option<Expr>,
        body: &Block,
    ) -> Result<()> {
        // Bounds and step are evaluated once, before entry.
        let lo_v = self.lower_expr(lo)?;
        let ivar = self.fresh(RegType::I32);
        self.emit(Inst::Mov { ty: RegType::I32, dst: ivar, src: lo_v });
        self.locals.insert(var.to_string(), ivar);
        let hi_v = self.lower_expr(hi)?;
        let step_v = match step {
            None => Operand::ImmI(1),
            Some(e) => {
                let v = self.lower_expr(e)?;
                if !statically_positive(e) {
                    // A non-positive step would loop forever; trap instead.
                    let p = self.fresh(RegType::Pred);
                    self.emit(Inst::Setp {
                        cmp: CmpOp::Le,
                        ty: RegType::I32,
                        dst: p,
                        a: v,
                        b: Operand::ImmI(0),
                    });
                    let trap = self.new_block();
                    self.func.blocks[trap as usize].term = Terminator::Trap(TrapKind::Arith);
                    let cont = self.new_block();
                    self.set_term(Terminator::CondBr { pred: p, then_b: trap, else_b: cont });
                    self.cur = cont;
                }
                v
            }
        };

        let header = self.new_block();
        let body_b = self.new_block();
        let exit_b = self.new_block();
        self.set_term(Terminator::Br { target: header });

        self.cur = header;
        let p = self.fresh(RegType::Pred);
        self.emit(Inst::Setp {
            cmp: CmpOp::Lt,
            ty: RegType::I32,
            dst: p,
            a: Operand::Reg(ivar),
            b: hi_v,
        });
        self.set_term(Terminator::CondBr { pred: p, then_b: body_b, else_b: exit_b });

        self.cur = body_b;
        self.lower_block(body)?;
        // Latch: advance the induction variable in whatever block the body
        // ended in, then loop.
        self.emit(Inst::Bin {
            op: AluOp::Add,
            ty: RegType::I32,
            dst: ivar,
            a: Operand::Reg(ivar),
            b: step_v,
        });
        self.set_term(Terminator::Br { target: header });

        self.cur = exit_b;
        Ok(())
    }

    fn lower_if(&mut self, cond: &Expr, then_blk: &Block, else_blk: &Option<Block>) -> Result<()> {
        let p = self.lower_to_reg(cond)?;
        let then_b = self.new_block();
        let join = self.new_block();
        let else_b = match else_blk {
            Some(_) => self.new_block(),
            None => join,
        };
        self.set_term(Terminator::CondBr { pred: p, then_b, else_b });

        self.cur = then_b;
        self.lower_block(then_blk)?;
        self.set_term(Terminator::Br { target: join });

        if let Some(eb) = else_blk {
            self.cur = else_b;
            self.lower_block(eb)?;
            self.set_term(Terminator::Br { target: join });
        }
        self.cur = join;
        Ok(())
    }

    fn lower_guard(&mut self, array: &Expr, index: &Expr) -> Result<()> {
        let Expr::Ident { name, .. } = array else {
            return Err(internal("guard target is not an identifier"));
        };
        let idx = self.lower_to_reg(index)?;
        let (base, len_op): (AddrBase, Operand) = match self.resolve(name)? {
            Place::BufferParam(i) => {
                let l = self.fresh(RegType::I32);
                self.emit(Inst::LenBuf { dst: l, param: i });
                (AddrBase::Param(i), Operand::Reg(l))
            }
            Place::Field(i) => {
                (AddrBase::Field(i), Operand::ImmI(self.func.fields[i as usize].count as i64))
            }
            _ => return Err(internal(format!("guard of non-array `{name}`"))),
        };
        let below = self.fresh(RegType::Pred);
        self.emit(Inst::Setp {
            cmp: CmpOp::Lt,
            ty: RegType::I32,
            dst: below,
            a: Operand::Reg(idx),
            b: len_op,
        });
        let nonneg = self.fresh(RegType::Pred);
        self.emit(Inst::Setp {
            cmp: CmpOp::Ge,
            ty: RegType::I32,
            dst: nonneg,
            a: Operand::Reg(idx),
            b: Operand::ImmI(0),
        });
        let ok = self.fresh(RegType::Pred);
        self.emit(Inst::Bin {
            op: AluOp::And,
            ty: RegType::Pred,
            dst: ok,
            a: Operand::Reg(below),
            b: Operand::Reg(nonneg),
        });
        let trap = self.new_block();
        self.func.blocks[trap as usize].term =
            Terminator::Trap(TrapKind::Bounds { base, index: idx });
        let cont = self.new_block();
        self.set_term(Terminator::CondBr { pred: ok, then_b: cont, else_b: trap });
        self.cur = cont;
        Ok(())
    }

    // ----- epilogue ---------------------------------------------------------

    /// After the body: barrier, then every thread flushes a strided slice of
    /// each shared mirror into its global field with one atomic per element.
    fn emit_epilogue(&mut self) -> Result<()> {
        if self.flushes.is_empty() {
            self.set_term(Terminator::Ret);
            return Ok(());
        }
        self.emit(Inst::Bar);

        // Linear thread index within the group and linear group size.
        let mut tid = [Reg(0); 3];
        let mut ntid = [Reg(0); 3];
        for d in 0..3u8 {
            let t = self.fresh(RegType::I32);
            self.emit(Inst::Special { dst: t, which: ThreadBuiltin::ThreadId, dim: d });
            tid[d as usize] = t;
            let n = self.fresh(RegType::I32);
            self.emit(Inst::Special { dst: n, which: ThreadBuiltin::GroupSize, dim: d });
            ntid[d as usize] = n;
        }
        let bin = |me: &mut Self, op: AluOp, a: Reg, b: Reg| -> Reg {
            let d = me.fresh(RegType::I32);
            me.emit(Inst::Bin {
                op,
                ty: RegType::I32,
                dst: d,
                a: Operand::Reg(a),
                b: Operand::Reg(b),
            });
            d
        };
        let n01 = bin(self, AluOp::Mul, ntid[0], ntid[1]);
        let t1n0 = bin(self, AluOp::Mul, tid[1], ntid[0]);
        let t2n01 = bin(self, AluOp::Mul, tid[2], n01);
        let t01 = bin(self, AluOp::Add, tid[0], t1n0);
        let tlin = bin(self, AluOp::Add, t01, t2n01);
        let glin = bin(self, AluOp::Mul, n01, ntid[2]);

        let flushes: Vec<FlushPlan> = std::mem::take(&mut self.flushes);
        for fl in &flushes {
            let ty = RegType::of(fl.elem);
            let scale = fl.elem.size_bytes();
            let e = self.fresh(RegType::I32);
            self.emit(Inst::Mov { ty: RegType::I32, dst: e, src: Operand::Reg(tlin) });

            let header = self.new_block();
            let body = self.new_block();
            let done = self.new_block();
            self.set_term(Terminator::Br { target: header });

            self.cur = header;
            let p = self.fresh(RegType::Pred);
            self.emit(Inst::Setp {
                cmp: CmpOp::Lt,
                ty: RegType::I32,
                dst: p,
                a: Operand::Reg(e),
                b: Operand::ImmI(fl.count as i64),
            });
            self.set_term(Terminator::CondBr { pred: p, then_b: body, else_b: done });

            self.cur = body;
            let v = self.fresh(ty);
            self.emit(Inst::Ld {
                space: MemSpace::Shared,
                ty,
                dst: v,
                addr: Address::indexed(AddrBase::Field(fl.mirror), e, scale),
                cached: false,
            });
            self.emit(Inst::Atom {
                space: MemSpace::Global,
                op: flush_op(fl.op),
                ty,
                addr: Address::indexed(AddrBase::Field(fl.global), e, scale),
                src: Operand::Reg(v),
            });
            self.emit(Inst::Bin {
                op: AluOp::Add,
                ty: RegType::I32,
                dst: e,
                a: Operand::Reg(e),
                b: Operand::Reg(glin),
            });
            self.set_term(Terminator::Br { target: header });

            self.cur = done;
        }
        self.flushes = flushes;
        self.set_term(Terminator::Ret);
        Ok(())
    }
}

/// Per-group mirror partials are folded into the global field with this op.
/// `sub` partials are negative running sums, so they flush with `add`.
fn flush_op(op: AtomicOp) -> AtomicOp {
    match op {
        AtomicOp::Add | AtomicOp::Sub => AtomicOp::Add,
        other => other,
    }
}

fn alu_of(op: BinOp) -> Option<AluOp> {
    Some(match op {
        BinOp::Add => AluOp::Add,
        BinOp::Sub => AluOp::Sub,
        BinOp::Mul => AluOp::Mul,
        BinOp::Div => AluOp::Div,
        BinOp::Rem => AluOp::Rem,
        BinOp::BitAnd => AluOp::And,
        BinOp::BitOr => AluOp::Or,
        BinOp::BitXor => AluOp::Xor,
        BinOp::Shl => AluOp::Shl,
        BinOp::Shr => AluOp::Shr,
        _ => return None,
    })
}

fn cmp_of(op: BinOp) -> Option<CmpOp> {
    Some(match op {
        BinOp::Lt => CmpOp::Lt,
        BinOp::Le => CmpOp::Le,
        BinOp::Gt => CmpOp::Gt,
        BinOp::Ge => CmpOp::Ge,
        BinOp::Eq => CmpOp::Eq,
        BinOp::Ne => CmpOp::Ne,
        _ => return None,
    })
}

/// Conservative positivity: literals, grid sizes (always ≥ 1), and products
/// of positive factors. Anything else gets a runtime check.
fn statically_positive(e: &Expr) -> bool {
    match e {
        Expr::IntLit { value, .. } => *value > 0,
        Expr::Builtin { which, .. } => {
            matches!(which, ThreadBuiltin::GlobalSize | ThreadBuiltin::GroupSize)
        }
        Expr::Binary { op: BinOp::Mul, lhs, rhs, .. } => {
            statically_positive(lhs) && statically_positive(rhs)
        }
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_unit;
    use crate::passes::{inline_calls, insert_bounds_guards, parallelize, scalar_replace};
    use crate::validate::validate_unit;

    /// Front half of the pipeline: parse, validate, HIR passes, re-validate,
    /// lower.
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
        let kc = &checked.kernels[&kernel.name];
        lower_kernel(&checked.env, kc, kernel).unwrap()
    }

    fn count_loads(f: &LirFunc) -> usize {
        f.blocks
            .iter()
            .flat_map(|b| &b.instrs)
            .filter(|i| matches!(i, Inst::Ld { space: MemSpace::Global, .. }))
            .count()
    }

    fn count_stores(f: &LirFunc) -> usize {
        f.blocks
            .iter()
            .flat_map(|b| &b.instrs)
            .filter(|i| matches!(i, Inst::St { space: MemSpace::Global, .. }))
            .count()
    }

    const VECADD: &str = r#"
        @jacc(iterationSpace=ONE_DIMENSION)
        kernel vecadd(@read a: f32[], @read b: f32[], @write c: f32[]) {
            for i in 0..len(c) {
                c[i] = a[i] + b[i];
            }
        }
    "#;

    #[test]
    fn vecadd_body_is_two_loads_one_store() {
        let lk = lowered(VECADD, false);
        let d = lk.func.dump();
        assert_eq!(count_loads(&lk.func), 2, "{d}");
        assert_eq!(count_stores(&lk.func), 1, "{d}");
        assert!(d.contains("ld.global.f32"), "{d}");
        assert!(d.contains("st.global.f32 [c+"), "{d}");
        assert!(d.contains("len.buf"), "{d}");
        assert!(!d.contains("trap.bounds"), "{d}");
    }

    #[test]
    fn exception_mode_adds_guard_traps() {
        let lk = lowered(VECADD, true);
        let d = lk.func.dump();
        // One guard (and one trap block) per distinct access.
        let traps = d.matches("trap.bounds").count();
        assert_eq!(traps, 3, "{d}");
        assert!(d.contains("setp.ge.i32"), "{d}");
        assert!(d.contains("and.pred"), "{d}");
    }

    #[test]
    fn atomic_scalar_field_combines_into_mirror_and_flushes() {
        let src = r#"
            @jacc(iterationSpace=ONE_DIMENSION)
            kernel reduce(@read a: f32[]) {
                @atomic(op=ADD) field sum: f32;
                for i in 0..len(a) {
                    sum += a[i];
                }
            }
        "#;
        let lk = lowered(src, false);
        let d = lk.func.dump();
        assert!(d.contains("atom.shared.add.f32 [sum__part]"), "{d}");
        assert!(d.contains("bar.group"), "{d}");
        assert!(d.contains("atom.global.add.f32 [sum+"), "{d}");
        // The field itself is never stored to directly.
        assert!(!d.contains("st.global.f32 [sum]"), "{d}");
        // State bookkeeping: sum is written, never read.
        assert!(lk.state_access.is_written("sum"));
        assert!(!lk.state_access.is_read("sum"));
        assert!(lk.state_schema.is_some());
    }

    #[test]
    fn atomic_array_field_sites_are_indexed() {
        let src = r#"
            @jacc(iterationSpace=ONE_DIMENSION)
            kernel hist(@read keys: i32[]) {
                @atomic(op=ADD) field bins: i32[256];
                for i in 0..len(keys) {
                    bins[keys[i] & 255] += 1;
                }
            }
        "#;
        let lk = lowered(src, false);
        let d = lk.func.dump();
        assert!(d.contains("atom.shared.add.i32 [bins__part+%"), "{d}");
        assert!(d.contains("atom.global.add.i32 [bins+%"), "{d}");
        assert!(d.contains(", 256"), "flush loop bound missing: {d}");
    }

    #[test]
    fn sub_atomic_flushes_with_add() {
        let src = r#"
            @jacc(iterationSpace=ONE_DIMENSION)
            kernel drain(@read a: i32[]) {
                @atomic(op=SUB) field left: i32;
                for i in 0..len(a) {
                    left -= a[i];
                }
            }
        "#;
        let lk = lowered(src, false);
        let d = lk.func.dump();
        assert!(d.contains("atom.shared.sub.i32 [left__part]"), "{d}");
        assert!(d.contains("atom.global.add.i32 [left+"), "{d}");
    }

    #[test]
    fn composite_param_fields_load_by_offset() {
        let src = r#"
            type Opts { lo: f32; hi: f32; gain: f32; bias: f32; }

            @jacc(iterationSpace=ONE_DIMENSION)
            kernel scale(@read o: Opts, @readwrite x: f32[]) {
                for i in 0..len(x) {
                    x[i] = x[i] * o.gain;
                }
            }
        "#;
        let lk = lowered(src, false);
        let d = lk.func.dump();
        assert!(d.contains("ld.global.f32 %"), "{d}");
        assert!(d.contains("[o+8]"), "gain sits at offset 8: {d}");
        let (schema, access) = &lk.object_params["o"];
        assert_eq!(schema.size, 16);
        assert!(access.is_read("gain"));
        assert!(!access.is_read("lo"));
        assert_eq!(access.inbound_bytes(schema), 4);
    }

    #[test]
    fn popc_on_i64_lowers_to_intrinsic() {
        let src = r#"
            @jacc(iterationSpace=ONE_DIMENSION)
            kernel corr(@read a: i64[], @read b: i64[], @write out: i32[]) {
                for i in 0..len(out) {
                    out[i] = popc(a[i] & b[i]);
                }
            }
        "#;
        let lk = lowered(src, false);
        let d = lk.func.dump();
        assert!(d.contains("and.i64"), "{d}");
        assert!(d.contains("popc.i64"), "{d}");
    }

    #[test]
    fn if_else_lowering_produces_diamond() {
        let src = r#"
            @jacc(iterationSpace=ONE_DIMENSION)
            kernel clampit(@readwrite x: i32[]) {
                for i in 0..len(x) {
                    if (x[i] < 0) {
                        x[i] = 0;
                    } else {
                        x[i] = x[i] * 2;
                    }
                }
            }
        "#;
        let lk = lowered(src, false);
        // Loop header + if = two conditional branches.
        assert_eq!(lk.func.condbr_count(), 2, "{}", lk.func.dump());
    }

    #[test]
    fn return_branches_to_exit_and_code_stays_valid() {
        let src = r#"
            @jacc(iterationSpace=NONE)
            kernel bail(@read flags: i32[], @write out: i32[]) {
                if (flags[0] == 0) {
                    return;
                }
                out[0] = 1;
            }
        "#;
        let lk = lowered(src, false);
        lk.func.verify().unwrap();
    }

    #[test]
    fn scalar_param_step_gets_runtime_check() {
        let src = r#"
            @jacc(iterationSpace=NONE)
            kernel strided(@read s: i32, @write out: i32[]) {
                for i in 0..len(out) step s {
                    out[i] = i;
                }
            }
        "#;
        let lk = lowered(src, false);
        let d = lk.func.dump();
        assert!(d.contains("trap.arith"), "{d}");
        assert!(d.contains("setp.le.i32"), "{d}");
    }

    #[test]
    fn parallelized_step_has_no_runtime_check() {
        let lk = lowered(VECADD, false);
        let d = lk.func.dump();
        assert!(!d.contains("trap.arith"), "{d}");
    }

    #[test]
    fn empty_kernel_is_entry_plus_ret() {
        let src = r#"
            @jacc(iterationSpace=NONE)
            kernel idle(@read a: i32[]) {
            }
        "#;
        let lk = lowered(src, false);
        assert!(lk.func.instruction_count() >= 1);
        lk.func.verify().unwrap();
    }

    #[test]
    fn method_call_on_object_lowers_after_passes() {
        let src = r#"
            type Particle { px: f32; v: f32; }

            fn shifted(self: Particle, dt: f32) -> f32 {
                return self.px + self.v * dt;
            }

            @jacc(iterationSpace=ONE_DIMENSION)
            kernel advance(@read p: Particle, @write out: f32[]) {
                for i in 0..len(out) {
                    out[i] = p.shifted(0.5);
                }
            }
        "#;
        let lk = lowered(src, false);
        let d = lk.func.dump();
        assert!(d.contains("[p]"), "px at offset 0: {d}");
        assert!(d.contains("[p+4]"), "v at offset 4: {d}");
        let (_, access) = &lk.object_params["p"];
        assert!(access.is_read("px") && access.is_read("v"));
    }
}
