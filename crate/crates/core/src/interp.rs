//! Reference interpreter for HIR kernels.
//!
//! Executes a kernel as a single serial thread with the thread builtins
//! pinned to the trivial launch (`thread_id`/`group_id`/`global_id` = 0,
//! `group_size`/`global_size` = 1), so the same source produces the same
//! answer before and after grid-stride parallelization. This is the
//! semantic oracle: the SIMT simulator must agree with it for every
//! race-free kernel.
//!
//! Semantics pinned here and mirrored by the virtual ISA:
//! - integer arithmetic wraps; integer division or remainder by zero traps;
//! - float arithmetic is IEEE-754 (division by zero yields ±inf, no trap);
//! - casts follow Rust `as` semantics (float→int saturates);
//! - `&&` and `||` evaluate both operands;
//! - every array access is bounds-checked;
//! - atomic fields start each launch at zero and each assignment combines
//!   serially with the resolved operation.

use crate::ast::*;
use crate::diag::Span;
use crate::types::{AtomicOp, MathIntrinsic, ScalarType, Type};
use crate::validate::{CheckedKernel, CheckedUnit};
use std::collections::HashMap;

/// A scalar runtime value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarValue {
    I32(i32),
    I64(i64),
    F32(f32),
    F64(f64),
    Bool(bool),
}

impl ScalarValue {
    pub fn zero(ty: ScalarType) -> Self {
        match ty {
            ScalarType::I32 => Self::I32(0),
            ScalarType::I64 => Self::I64(0),
            ScalarType::F32 => Self::F32(0.0),
            ScalarType::F64 => Self::F64(0.0),
            ScalarType::Bool => Self::Bool(false),
        }
    }

    pub fn ty(&self) -> ScalarType {
        match self {
            Self::I32(_) => ScalarType::I32,
            Self::I64(_) => ScalarType::I64,
            Self::F32(_) => ScalarType::F32,
            Self::F64(_) => ScalarType::F64,
            Self::Bool(_) => ScalarType::Bool,
        }
    }

    pub fn as_i32(&self) -> Option<i32> {
        match self {
            Self::I32(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Self::Bool(v) => Some(*v),
            _ => None,
        }
    }
}

/// Typed array storage for buffers and fixed-array fields.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    I32(Vec<i32>),
    I64(Vec<i64>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl ArrayData {
    pub fn zeros(ty: ScalarType, len: usize) -> Self {
        match ty {
            ScalarType::I32 => Self::I32(vec![0; len]),
            ScalarType::I64 => Self::I64(vec![0; len]),
            ScalarType::F32 => Self::F32(vec![0.0; len]),
            ScalarType::F64 => Self::F64(vec![0.0; len]),
            ScalarType::Bool => Self::I32(vec![0; len]),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::I32(v) => v.len(),
            Self::I64(v) => v.len(),
            Self::F32(v) => v.len(),
            Self::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn elem_type(&self) -> ScalarType {
        match self {
            Self::I32(_) => ScalarType::I32,
            Self::I64(_) => ScalarType::I64,
            Self::F32(_) => ScalarType::F32,
            Self::F64(_) => ScalarType::F64,
        }
    }

    pub fn get(&self, i: usize) -> ScalarValue {
        match self {
            Self::I32(v) => ScalarValue::I32(v[i]),
            Self::I64(v) => ScalarValue::I64(v[i]),
            Self::F32(v) => ScalarValue::F32(v[i]),
            Self::F64(v) => ScalarValue::F64(v[i]),
        }
    }

    pub fn set(&mut self, i: usize, val: ScalarValue) {
        match (self, val) {
            (Self::I32(v), ScalarValue::I32(x)) => v[i] = x,
            (Self::I64(v), ScalarValue::I64(x)) => v[i] = x,
            (Self::F32(v), ScalarValue::F32(x)) => v[i] = x,
            (Self::F64(v), ScalarValue::F64(x)) => v[i] = x,
            (a, v) => panic!("type mismatch storing {:?} into {:?} array", v.ty(), a.elem_type()),
        }
    }
}

/// One field's storage: a scalar slot or a fixed array.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldValue {
    Scalar(ScalarValue),
    Array(ArrayData),
}

impl FieldValue {
    pub fn zero_of(ty: &Type) -> Option<Self> {
        match ty {
            Type::Scalar(s) => Some(Self::Scalar(ScalarValue::zero(*s))),
            Type::FixedArray(s, n) => Some(Self::Array(ArrayData::zeros(*s, *n as usize))),
            _ => None,
        }
    }
}

/// One kernel argument.
#[derive(Debug, Clone, PartialEq)]
pub enum ArgValue {
    Scalar(ScalarValue),
    Array(ArrayData),
    /// Composite object: one entry per flattened field, in schema order.
    Object(Vec<FieldValue>),
}

/// Execution fault. The simulator reports the same kinds.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Trap {
    #[error("out-of-bounds access on `{array}`: index {index}, length {len}")]
    Bounds { array: String, index: i64, len: usize },
    #[error("arithmetic fault: {0}")]
    Arith(String),
    #[error("launch error: {0}")]
    Launch(String),
}

/// Result of a kernel run: argument buffers (mutated in place) and final
/// field values in declaration order.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub args: Vec<ArgValue>,
    pub fields: Vec<(String, FieldValue)>,
}

/// Run `kernel_name` serially over the given arguments. `field_init`
/// overrides the zero-default initial value of non-atomic fields by name.
pub fn run_kernel(
    unit: &SourceUnit,
    checked: &CheckedUnit,
    kernel_name: &str,
    args: Vec<ArgValue>,
    field_init: &[(String, FieldValue)],
) -> Result<Outcome, Trap> {
    let kernel = unit
        .kernel(kernel_name)
        .ok_or_else(|| Trap::Launch(format!("no kernel `{kernel_name}`")))?;
    let kc = checked
        .kernels
        .get(kernel_name)
        .ok_or_else(|| Trap::Launch(format!("kernel `{kernel_name}` was not checked")))?;
    if args.len() != kernel.params.len() {
        return Err(Trap::Launch(format!(
            "kernel `{kernel_name}` takes {} arguments, got {}",
            kernel.params.len(),
            args.len()
        )));
    }
    for (p, a) in kernel.params.iter().zip(&args) {
        let ok = match (&p.ty, a) {
            (Type::Scalar(s), ArgValue::Scalar(v)) => v.ty() == *s,
            (Type::Array(s), ArgValue::Array(d)) => d.elem_type() == *s,
            (Type::Composite(_), ArgValue::Object(_)) => true,
            _ => false,
        };
        if !ok {
            return Err(Trap::Launch(format!(
                "argument for `{}` does not match its declared type {}",
                p.name, p.ty
            )));
        }
    }

    let mut fields: Vec<(String, FieldValue)> = Vec::new();
    for f in &kernel.fields {
        let mut v = FieldValue::zero_of(&f.ty)
            .ok_or_else(|| Trap::Launch(format!("field `{}` has no storable type", f.name)))?;
        if !f.atomicity.is_atomic() {
            if let Some((_, init)) = field_init.iter().find(|(n, _)| n == &f.name) {
                v = init.clone();
            }
        }
        fields.push((f.name.clone(), v));
    }

    let mut exec = Exec {
        unit,
        checked,
        kernel,
        kc,
        args,
        fields,
        heap: Vec::new(),
        frames: vec![Frame::default()],
    };
    exec.run_block(&kernel.body)?;
    Ok(Outcome { args: exec.args, fields: exec.fields })
}

/// Where an array lives, for mutation through references.
#[derive(Debug, Clone, Copy, PartialEq)]
enum ArrRef {
    Arg(usize),
    Field(usize),
    /// Fixed-array field of a composite argument: (arg index, field index).
    ArgField(usize, usize),
}

/// Where a composite object lives.
#[derive(Debug, Clone, Copy, PartialEq)]
enum ObjRef {
    Arg(usize),
    Heap(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Value {
    Scalar(ScalarValue),
    Array(ArrRef),
    Object(ObjRef),
}

impl Value {
    fn scalar(self) -> ScalarValue {
        match self {
            Value::Scalar(v) => v,
            _ => panic!("expected scalar value"),
        }
    }
}

#[derive(Debug, Default)]
struct Frame {
    locals: HashMap<String, Value>,
}

enum Flow {
    Normal,
    Returned(Option<ScalarValue>),
}

struct Exec<'a> {
    unit: &'a SourceUnit,
    checked: &'a CheckedUnit,
    kernel: &'a KernelHir,
    /// Side table for the body currently executing (kernel or fn).
    kc: &'a CheckedKernel,
    args: Vec<ArgValue>,
    fields: Vec<(String, FieldValue)>,
    /// Objects created with `new`.
    heap: Vec<Vec<FieldValue>>,
    frames: Vec<Frame>,
}

impl<'a> Exec<'a> {
    fn frame(&mut self) -> &mut Frame {
        self.frames.last_mut().expect("active frame")
    }

    fn expr_type(&self, e: &Expr) -> ScalarType {
        self.kc
            .expr_types
            .get(&e.id())
            .and_then(|t| t.scalar())
            .unwrap_or(ScalarType::I32)
    }

    fn lookup(&self, name: &str) -> Option<Value> {
        if let Some(v) = self.frames.last().and_then(|f| f.locals.get(name)) {
            return Some(*v);
        }
        // Kernel params and fields are visible only in the kernel frame
        // (fn frames shadow them with their own params).
        if self.frames.len() == 1 {
            if let Some(i) = self.kernel.params.iter().position(|p| p.name == name) {
                return Some(match &self.args[i] {
                    ArgValue::Scalar(v) => Value::Scalar(*v),
                    ArgValue::Array(_) => Value::Array(ArrRef::Arg(i)),
                    ArgValue::Object(_) => Value::Object(ObjRef::Arg(i)),
                });
            }
            if let Some(i) = self.kernel.fields.iter().position(|f| f.name == name) {
                return Some(match &self.fields[i].1 {
                    FieldValue::Scalar(v) => Value::Scalar(*v),
                    FieldValue::Array(_) => Value::Array(ArrRef::Field(i)),
                });
            }
        }
        None
    }

    fn array_len(&self, r: ArrRef) -> usize {
        match r {
            ArrRef::Arg(i) => match &self.args[i] {
                ArgValue::Array(d) => d.len(),
                _ => 0,
            },
            ArrRef::Field(i) => match &self.fields[i].1 {
                FieldValue::Array(d) => d.len(),
                FieldValue::Scalar(_) => 0,
            },
            ArrRef::ArgField(a, f) => match &self.args[a] {
                ArgValue::Object(fields) => match &fields[f] {
                    FieldValue::Array(d) => d.len(),
                    FieldValue::Scalar(_) => 0,
                },
                _ => 0,
            },
        }
    }

    fn array_name(&self, r: ArrRef) -> String {
        match r {
            ArrRef::Arg(i) => self.kernel.params[i].name.clone(),
            ArrRef::Field(i) => self.fields[i].0.clone(),
            ArrRef::ArgField(a, _) => self.kernel.params[a].name.clone(),
        }
    }

    fn array_get(&self, r: ArrRef, i: usize) -> ScalarValue {
        match r {
            ArrRef::Arg(k) => match &self.args[k] {
                ArgValue::Array(d) => d.get(i),
                _ => unreachable!(),
            },
            ArrRef::Field(k) => match &self.fields[k].1 {
                FieldValue::Array(d) => d.get(i),
                _ => unreachable!(),
            },
            ArrRef::ArgField(a, f) => match &self.args[a] {
                ArgValue::Object(fs) => match &fs[f] {
                    FieldValue::Array(d) => d.get(i),
                    _ => unreachable!(),
                },
                _ => unreachable!(),
            },
        }
    }

    fn array_set(&mut self, r: ArrRef, i: usize, v: ScalarValue) {
        match r {
            ArrRef::Arg(k) => match &mut self.args[k] {
                ArgValue::Array(d) => d.set(i, v),
                _ => unreachable!(),
            },
            ArrRef::Field(k) => match &mut self.fields[k].1 {
                FieldValue::Array(d) => d.set(i, v),
                _ => unreachable!(),
            },
            ArrRef::ArgField(a, f) => match &mut self.args[a] {
                ArgValue::Object(fs) => match &mut fs[f] {
                    FieldValue::Array(d) => d.set(i, v),
                    _ => unreachable!(),
                },
                _ => unreachable!(),
            },
        }
    }

    fn check_index(&self, r: ArrRef, idx: ScalarValue) -> Result<usize, Trap> {
        let i = idx.as_i32().unwrap_or(0) as i64;
        let len = self.array_len(r);
        if i < 0 || i >= len as i64 {
            return Err(Trap::Bounds { array: self.array_name(r), index: i, len });
        }
        Ok(i as usize)
    }

    /// Flattened field index within a composite type.
    fn composite_field_index(&self, type_name: &str, field: &str) -> Option<(usize, Type)> {
        let fields = self.checked.env.composites.get(type_name)?;
        fields
            .iter()
            .position(|(n, _)| n == field)
            .map(|i| (i, fields[i].1.clone()))
    }

    fn object_type_name(&self, r: ObjRef) -> Option<&str> {
        match r {
            ObjRef::Arg(i) => match &self.kernel.params[i].ty {
                Type::Composite(t) => Some(t.as_str()),
                _ => None,
            },
            ObjRef::Heap(_) => None, // resolved from the expression type instead
        }
    }

    fn object_get(&self, r: ObjRef, field_idx: usize) -> FieldValue {
        match r {
            ObjRef::Arg(i) => match &self.args[i] {
                ArgValue::Object(fs) => fs[field_idx].clone(),
                _ => unreachable!(),
            },
            ObjRef::Heap(h) => self.heap[h][field_idx].clone(),
        }
    }

    fn object_set(&mut self, r: ObjRef, field_idx: usize, v: FieldValue) {
        match r {
            ObjRef::Arg(i) => match &mut self.args[i] {
                ArgValue::Object(fs) => fs[field_idx] = v,
                _ => unreachable!(),
            },
            ObjRef::Heap(h) => self.heap[h][field_idx] = v,
        }
    }

    // ----- statements ----------------------------------------------------

    fn run_block(&mut self, b: &Block) -> Result<Flow, Trap> {
        for s in &b.stmts {
            match self.run_stmt(s)? {
                Flow::Normal => {}
                r @ Flow::Returned(_) => return Ok(r),
            }
        }
        Ok(Flow::Normal)
    }

    fn run_stmt(&mut self, s: &Stmt) -> Result<Flow, Trap> {
        match s {
            Stmt::VarDecl { name, init, .. } => {
                let v = self.eval(init)?;
                self.frame().locals.insert(name.clone(), v);
                Ok(Flow::Normal)
            }
            Stmt::Assign { target, op, value, span, .. } => {
                self.run_assign(target, *op, value, *span)?;
                Ok(Flow::Normal)
            }
            Stmt::For { var, lo, hi, step, body, .. } => {
                let lo = self.eval(lo)?.scalar().as_i32().unwrap_or(0);
                let hi = self.eval(hi)?.scalar().as_i32().unwrap_or(0);
                let st = match step {
                    Some(e) => self.eval(e)?.scalar().as_i32().unwrap_or(1),
                    None => 1,
                };
                if st <= 0 {
                    return Err(Trap::Arith("non-positive loop step".into()));
                }
                let mut i = lo;
                while i < hi {
                    self.frame().locals.insert(var.clone(), Value::Scalar(ScalarValue::I32(i)));
                    match self.run_block(body)? {
                        Flow::Normal => {}
                        r @ Flow::Returned(_) => return Ok(r),
                    }
                    i = i.wrapping_add(st);
                    // A wrapping increment that overflows past `hi` must
                    // still terminate; wrapped-negative means done.
                    if i < lo && st > 0 && i < hi {
                        break;
                    }
                }
                Ok(Flow::Normal)
            }
            Stmt::If { cond, then_blk, else_blk, .. } => {
                let c = self.eval(cond)?.scalar().as_bool().unwrap_or(false);
                if c {
                    self.run_block(then_blk)
                } else if let Some(e) = else_blk {
                    self.run_block(e)
                } else {
                    Ok(Flow::Normal)
                }
            }
            Stmt::Barrier { .. } => Ok(Flow::Normal), // single thread: no-op
            Stmt::Return { value, .. } => {
                let v = match value {
                    Some(e) => Some(self.eval(e)?.scalar()),
                    None => None,
                };
                Ok(Flow::Returned(v))
            }
            Stmt::BoundsGuard { array, index, .. } => {
                let r = match self.eval(array)? {
                    Value::Array(r) => r,
                    _ => return Ok(Flow::Normal),
                };
                let idx = self.eval(index)?.scalar();
                self.check_index(r, idx)?;
                Ok(Flow::Normal)
            }
        }
    }

    fn run_assign(
        &mut self,
        target: &Expr,
        op: Option<BinOp>,
        value: &Expr,
        span: Span,
    ) -> Result<(), Trap> {
        // Atomic fields combine serially with the resolved op.
        if self.frames.len() == 1 {
            if let Some((fi, fname)) = self.atomic_field_of(target) {
                return self.run_atomic_assign(fi, &fname, target, op, value);
            }
        }
        match op {
            None => {
                let v = self.eval(value)?;
                self.store(target, v)
            }
            Some(op) => {
                let cur = self.eval(target)?.scalar();
                let rhs = self.eval(value)?.scalar();
                let combined = self.binop(op, cur, rhs, span)?;
                self.store(target, Value::Scalar(combined))
            }
        }
    }

    fn atomic_field_of(&self, target: &Expr) -> Option<(usize, String)> {
        let name = match target {
            Expr::Ident { name, .. } => name,
            Expr::Index { base, .. } => match base.as_ref() {
                Expr::Ident { name, .. } => name,
                _ => return None,
            },
            _ => return None,
        };
        if self.frames.last().map_or(false, |f| f.locals.contains_key(name)) {
            return None;
        }
        let i = self.kernel.fields.iter().position(|f| &f.name == name)?;
        self.kernel.fields[i].atomicity.is_atomic().then(|| (i, name.clone()))
    }

    fn run_atomic_assign(
        &mut self,
        field_idx: usize,
        field_name: &str,
        target: &Expr,
        op: Option<BinOp>,
        value: &Expr,
    ) -> Result<(), Trap> {
        let resolved = self.kc.atomic_ops.get(field_name).copied();
        // Which expression supplies the operand?
        let operand: &Expr = match op {
            Some(_) => value,
            None => match value {
                Expr::Binary { lhs, rhs, .. }
                    if matches!(target, Expr::Ident { .. })
                        && matches!(lhs.as_ref(), Expr::Ident { name, .. } if name == field_name) =>
                {
                    rhs
                }
                _ => value,
            },
        };
        let aop = op
            .and_then(|b| b.as_atomic_op())
            .or(resolved)
            .ok_or_else(|| Trap::Launch(format!("no atomic op resolved for `{field_name}`")))?;
        let rhs = self.eval(operand)?.scalar();
        match target {
            Expr::Index { index, .. } => {
                let idx = self.eval(index)?.scalar();
                let r = ArrRef::Field(field_idx);
                let i = self.check_index(r, idx)?;
                let cur = self.array_get(r, i);
                self.array_set(r, i, atomic_combine(aop, cur, rhs)?);
            }
            _ => {
                let cur = match &self.fields[field_idx].1 {
                    FieldValue::Scalar(v) => *v,
                    FieldValue::Array(_) => {
                        return Err(Trap::Launch(format!(
                            "atomic array field `{field_name}` assigned without an index"
                        )))
                    }
                };
                self.fields[field_idx].1 = FieldValue::Scalar(atomic_combine(aop, cur, rhs)?);
            }
        }
        Ok(())
    }

    fn store(&mut self, target: &Expr, v: Value) -> Result<(), Trap> {
        match target {
            Expr::Ident { name, .. } => {
                if self.frames.last().map_or(false, |f| f.locals.contains_key(name)) {
                    self.frame().locals.insert(name.clone(), v);
                    return Ok(());
                }
                if self.frames.len() == 1 {
                    if let Some(i) = self.kernel.fields.iter().position(|f| &f.name == name) {
                        self.fields[i].1 = FieldValue::Scalar(v.scalar());
                        return Ok(());
                    }
                }
                // New local introduced by a fn body executing inline.
                self.frame().locals.insert(name.clone(), v);
                Ok(())
            }
            Expr::Index { base, index, .. } => {
                let r = match self.eval(base)? {
                    Value::Array(r) => r,
                    _ => return Err(Trap::Launch("indexed store on non-array".into())),
                };
                let idx = self.eval(index)?.scalar();
                let i = self.check_index(r, idx)?;
                self.array_set(r, i, v.scalar());
                Ok(())
            }
            Expr::Field { base, field, .. } => {
                let (obj, tname) = self.eval_object(base)?;
                let (fi, _) = self
                    .composite_field_index(&tname, field)
                    .ok_or_else(|| Trap::Launch(format!("no field `{field}` on `{tname}`")))?;
                self.object_set(obj, fi, FieldValue::Scalar(v.scalar()));
                Ok(())
            }
            _ => Err(Trap::Launch("invalid store target".into())),
        }
    }

    /// Evaluate an expression that must denote a composite object; returns
    /// the reference and the composite type name.
    fn eval_object(&mut self, e: &Expr) -> Result<(ObjRef, String), Trap> {
        let tname = match self.kc.expr_types.get(&e.id()) {
            Some(Type::Composite(t)) => t.clone(),
            _ => String::new(),
        };
        match self.eval(e)? {
            Value::Object(r) => {
                let t = self
                    .object_type_name(r)
                    .map(str::to_string)
                    .unwrap_or(tname);
                Ok((r, t))
            }
            _ => Err(Trap::Launch("expected an object".into())),
        }
    }

    // ----- expressions -----------------------------------------------------

    fn eval(&mut self, e: &Expr) -> Result<Value, Trap> {
        match e {
            Expr::IntLit { value, .. } => Ok(Value::Scalar(match self.expr_type(e) {
                ScalarType::I64 => ScalarValue::I64(*value),
                ScalarType::F32 => ScalarValue::F32(*value as f32),
                ScalarType::F64 => ScalarValue::F64(*value as f64),
                _ => ScalarValue::I32(*value as i32),
            })),
            Expr::FloatLit { value, .. } => Ok(Value::Scalar(match self.expr_type(e) {
                ScalarType::F64 => ScalarValue::F64(*value),
                _ => ScalarValue::F32(*value as f32),
            })),
            Expr::BoolLit { value, .. } => Ok(Value::Scalar(ScalarValue::Bool(*value))),
            Expr::Ident { name, span, .. } => self
                .lookup(name)
                .ok_or_else(|| Trap::Launch(format!("unbound identifier `{name}` at {span}"))),
            Expr::Unary { op, operand, span, .. } => {
                let v = self.eval(operand)?.scalar();
                Ok(Value::Scalar(unop(*op, v, *span)?))
            }
            Expr::Binary { op, lhs, rhs, span, .. } => {
                // Strict evaluation: both sides always run, so a faulting
                // operand faults even when the other side decides.
                let a = self.eval(lhs)?.scalar();
                let b = self.eval(rhs)?.scalar();
                Ok(Value::Scalar(self.binop(*op, a, b, *span)?))
            }
            Expr::Cast { expr, ty, .. } => {
                let v = self.eval(expr)?.scalar();
                Ok(Value::Scalar(cast(v, *ty)))
            }
            Expr::Call { callee, receiver, args, span, .. } => {
                self.call(callee, receiver.as_deref(), args, *span)
            }
            Expr::Index { base, index, span, .. } => {
                let r = match self.eval(base)? {
                    Value::Array(r) => r,
                    _ => return Err(Trap::Launch(format!("indexing a non-array at {span}"))),
                };
                let idx = self.eval(index)?.scalar();
                let i = self.check_index(r, idx)?;
                Ok(Value::Scalar(self.array_get(r, i)))
            }
            Expr::Field { base, field, span, .. } => {
                let (obj, tname) = self.eval_object(base)?;
                let (fi, fty) = self
                    .composite_field_index(&tname, field)
                    .ok_or_else(|| Trap::Launch(format!("no field `{field}` on `{tname}` at {span}")))?;
                match self.object_get(obj, fi) {
                    FieldValue::Scalar(v) => Ok(Value::Scalar(v)),
                    FieldValue::Array(_) => match (obj, fty) {
                        (ObjRef::Arg(a), _) => Ok(Value::Array(ArrRef::ArgField(a, fi))),
                        _ => Err(Trap::Launch("array field on heap object".into())),
                    },
                }
            }
            Expr::New { type_name, args, span, .. } => {
                let fields = self
                    .checked
                    .env
                    .composites
                    .get(type_name)
                    .ok_or_else(|| Trap::Launch(format!("unknown type `{type_name}` at {span}")))?
                    .clone();
                let mut vals = Vec::with_capacity(fields.len());
                for a in args {
                    vals.push(FieldValue::Scalar(self.eval(a)?.scalar()));
                }
                while vals.len() < fields.len() {
                    let (_, t) = &fields[vals.len()];
                    vals.push(FieldValue::zero_of(t).unwrap_or(FieldValue::Scalar(ScalarValue::I32(0))));
                }
                self.heap.push(vals);
                let r = ObjRef::Heap(self.heap.len() - 1);
                // Remember the heap object's type via a side map-free trick:
                // the expression type carries it wherever the object is used.
                Ok(Value::Object(r))
            }
            Expr::Len { array, span, .. } => {
                let r = match self.eval(array)? {
                    Value::Array(r) => r,
                    _ => return Err(Trap::Launch(format!("len of non-array at {span}"))),
                };
                Ok(Value::Scalar(ScalarValue::I32(self.array_len(r) as i32)))
            }
            Expr::Builtin { which, .. } => {
                use crate::types::ThreadBuiltin::*;
                let v = match which {
                    ThreadId | GroupId | GlobalId => 0,
                    GroupSize | GlobalSize => 1,
                };
                Ok(Value::Scalar(ScalarValue::I32(v)))
            }
            Expr::Intrinsic { which, args, span, .. } => {
                let a = self.eval(&args[0])?.scalar();
                let b = if args.len() > 1 {
                    Some(self.eval(&args[1])?.scalar())
                } else {
                    None
                };
                Ok(Value::Scalar(intrinsic(*which, a, b, *span)?))
            }
        }
    }

    fn binop(&self, op: BinOp, a: ScalarValue, b: ScalarValue, span: Span) -> Result<ScalarValue, Trap> {
        binop(op, a, b, span)
    }

    fn call(
        &mut self,
        callee: &str,
        receiver: Option<&Expr>,
        args: &[Expr],
        span: Span,
    ) -> Result<Value, Trap> {
        let decl = self
            .unit
            .fn_decl(callee)
            .ok_or_else(|| Trap::Launch(format!("unresolved callee `{callee}` at {span}")))?;
        let fc = self
            .checked
            .fns
            .get(callee)
            .ok_or_else(|| Trap::Launch(format!("fn `{callee}` was not checked")))?;
        let mut bound = Vec::with_capacity(decl.params.len());
        if let Some(r) = receiver {
            bound.push(self.eval(r)?);
        }
        for a in args {
            bound.push(self.eval(a)?);
        }
        if bound.len() != decl.params.len() {
            return Err(Trap::Launch(format!(
                "`{callee}` takes {} arguments, got {}",
                decl.params.len(),
                bound.len()
            )));
        }
        let mut frame = Frame::default();
        for (p, v) in decl.params.iter().zip(bound) {
            frame.locals.insert(p.name.clone(), v);
        }
        self.frames.push(frame);
        // Swap in the fn's own type table for the duration of the call.
        let saved_kc = std::mem::replace(&mut self.kc, fc);
        let flow = self.run_block(&decl.body);
        self.kc = saved_kc;
        self.frames.pop();
        match flow? {
            Flow::Returned(Some(v)) => Ok(Value::Scalar(v)),
            _ => Err(Trap::Launch(format!("`{callee}` finished without returning a value"))),
        }
    }
}

fn unop(op: UnOp, v: ScalarValue, span: Span) -> Result<ScalarValue, Trap> {
    use ScalarValue::*;
    Ok(match (op, v) {
        (UnOp::Neg, I32(x)) => I32(x.wrapping_neg()),
        (UnOp::Neg, I64(x)) => I64(x.wrapping_neg()),
        (UnOp::Neg, F32(x)) => F32(-x),
        (UnOp::Neg, F64(x)) => F64(-x),
        (UnOp::Not, Bool(x)) => Bool(!x),
        (UnOp::BitNot, I32(x)) => I32(!x),
        (UnOp::BitNot, I64(x)) => I64(!x),
        _ => {
            return Err(Trap::Launch(format!(
                "`{}` applied to {} at {span}",
                op.symbol(),
                v.ty()
            )))
        }
    })
}

/// Apply a binary operation with the pinned number semantics.
pub fn binop(op: BinOp, a: ScalarValue, b: ScalarValue, span: Span) -> Result<ScalarValue, Trap> {
    use BinOp::*;
    use ScalarValue::*;
    let mismatch = || Trap::Launch(format!("operand type mismatch at {span}"));
    Ok(match op {
        Add | Sub | Mul | Div | Rem => match (a, b) {
            (I32(x), I32(y)) => I32(int_arith(op, x as i64, y as i64, span)? as i32),
            (I64(x), I64(y)) => I64(int_arith64(op, x, y, span)?),
            (F32(x), F32(y)) => F32(float_arith(op, x as f64, y as f64) as f32),
            (F64(x), F64(y)) => F64(float_arith(op, x, y)),
            _ => return Err(mismatch()),
        },
        BitAnd | BitOr | BitXor => match (a, b) {
            (I32(x), I32(y)) => I32(match op {
                BitAnd => x & y,
                BitOr => x | y,
                _ => x ^ y,
            }),
            (I64(x), I64(y)) => I64(match op {
                BitAnd => x & y,
                BitOr => x | y,
                _ => x ^ y,
            }),
            _ => return Err(mismatch()),
        },
        Shl | Shr => match (a, b) {
            (I32(x), I32(y)) => I32(match op {
                Shl => x.wrapping_shl(y as u32),
                _ => x.wrapping_shr(y as u32),
            }),
            (I64(x), I32(y)) => I64(match op {
                Shl => x.wrapping_shl(y as u32),
                _ => x.wrapping_shr(y as u32),
            }),
            _ => return Err(mismatch()),
        },
        Lt | Le | Gt | Ge | Eq | Ne => {
            let c = match (a, b) {
                (I32(x), I32(y)) => compare(op, x.partial_cmp(&y)),
                (I64(x), I64(y)) => compare(op, x.partial_cmp(&y)),
                (F32(x), F32(y)) => compare(op, x.partial_cmp(&y)),
                (F64(x), F64(y)) => compare(op, x.partial_cmp(&y)),
                _ => return Err(mismatch()),
            };
            Bool(c)
        }
        LogAnd | LogOr => match (a, b) {
            (Bool(x), Bool(y)) => Bool(if op == LogAnd { x && y } else { x || y }),
            _ => return Err(mismatch()),
        },
    })
}

fn compare(op: BinOp, ord: Option<std::cmp::Ordering>) -> bool {
    use std::cmp::Ordering::*;
    match (op, ord) {
        (BinOp::Lt, Some(Less)) => true,
        (BinOp::Le, Some(Less | Equal)) => true,
        (BinOp::Gt, Some(Greater)) => true,
        (BinOp::Ge, Some(Greater | Equal)) => true,
        (BinOp::Eq, Some(Equal)) => true,
        // NaN compares unequal to everything, including itself.
        (BinOp::Ne, Some(Less | Greater) | None) => true,
        _ => false,
    }
}

fn int_arith(op: BinOp, x: i64, y: i64, span: Span) -> Result<i64, Trap> {
    let (x, y) = (x as i32, y as i32);
    Ok(match op {
        BinOp::Add => x.wrapping_add(y) as i64,
        BinOp::Sub => x.wrapping_sub(y) as i64,
        BinOp::Mul => x.wrapping_mul(y) as i64,
        BinOp::Div => {
            if y == 0 {
                return Err(Trap::Arith(format!("division by zero at {span}")));
            }
            x.wrapping_div(y) as i64
        }
        BinOp::Rem => {
            if y == 0 {
                return Err(Trap::Arith(format!("remainder by zero at {span}")));
            }
            x.wrapping_rem(y) as i64
        }
        _ => unreachable!(),
    })
}

fn int_arith64(op: BinOp, x: i64, y: i64, span: Span) -> Result<i64, Trap> {
    Ok(match op {
        BinOp::Add => x.wrapping_add(y),
        BinOp::Sub => x.wrapping_sub(y),
        BinOp::Mul => x.wrapping_mul(y),
        BinOp::Div => {
            if y == 0 {
                return Err(Trap::Arith(format!("division by zero at {span}")));
            }
            x.wrapping_div(y)
        }
        BinOp::Rem => {
            if y == 0 {
                return Err(Trap::Arith(format!("remainder by zero at {span}")));
            }
            x.wrapping_rem(y)
        }
        _ => unreachable!(),
    })
}

fn float_arith(op: BinOp, x: f64, y: f64) -> f64 {
    match op {
        BinOp::Add => x + y,
        BinOp::Sub => x - y,
        BinOp::Mul => x * y,
        BinOp::Div => x / y,
        BinOp::Rem => x % y,
        _ => unreachable!(),
    }
}

// ----- flat-IR operation semantics ------------------------------------------
//
// The optimizer's constant folding and the device simulator both evaluate
// flat-IR operations through these helpers, so there is exactly one
// definition of the arithmetic.

/// Evaluate a flat-IR ALU operation: wrapping integer arithmetic, trapping
/// integer division and remainder, IEEE floats. Predicate registers
/// combine as strict booleans.
pub fn alu(
    op: crate::lir::AluOp,
    ty: crate::lir::RegType,
    a: ScalarValue,
    b: ScalarValue,
) -> Result<ScalarValue, Trap> {
    use crate::lir::AluOp;
    if ty == crate::lir::RegType::Pred {
        let (ScalarValue::Bool(x), ScalarValue::Bool(y)) = (a, b) else {
            return Err(Trap::Launch("predicate ALU on non-boolean operands".into()));
        };
        return Ok(ScalarValue::Bool(match op {
            AluOp::And => x && y,
            AluOp::Or => x || y,
            AluOp::Xor => x != y,
            _ => {
                return Err(Trap::Launch(format!(
                    "{} is not a predicate operation",
                    op.mnemonic()
                )))
            }
        }));
    }
    let bop = match op {
        AluOp::Add => BinOp::Add,
        AluOp::Sub => BinOp::Sub,
        AluOp::Mul => BinOp::Mul,
        AluOp::Div => BinOp::Div,
        AluOp::Rem => BinOp::Rem,
        AluOp::And => BinOp::BitAnd,
        AluOp::Or => BinOp::BitOr,
        AluOp::Xor => BinOp::BitXor,
        AluOp::Shl => BinOp::Shl,
        AluOp::Shr => BinOp::Shr,
    };
    binop(bop, a, b, Span::new(0, 0))
}

/// Evaluate a flat-IR comparison. NaN compares not-equal to everything,
/// including itself.
pub fn alu_cmp(cmp: crate::lir::CmpOp, a: ScalarValue, b: ScalarValue) -> Result<bool, Trap> {
    use crate::lir::CmpOp;
    let bop = match cmp {
        CmpOp::Lt => BinOp::Lt,
        CmpOp::Le => BinOp::Le,
        CmpOp::Gt => BinOp::Gt,
        CmpOp::Ge => BinOp::Ge,
        CmpOp::Eq => BinOp::Eq,
        CmpOp::Ne => BinOp::Ne,
    };
    match binop(bop, a, b, Span::new(0, 0))? {
        ScalarValue::Bool(r) => Ok(r),
        _ => Err(Trap::Launch("comparison produced a non-boolean".into())),
    }
}

/// Evaluate a flat-IR unary operation.
pub fn alu_un(op: crate::lir::UnAluOp, v: ScalarValue) -> Result<ScalarValue, Trap> {
    use crate::lir::UnAluOp;
    Ok(match (op, v) {
        (UnAluOp::Neg, ScalarValue::I32(x)) => ScalarValue::I32(x.wrapping_neg()),
        (UnAluOp::Neg, ScalarValue::I64(x)) => ScalarValue::I64(x.wrapping_neg()),
        (UnAluOp::Neg, ScalarValue::F32(x)) => ScalarValue::F32(-x),
        (UnAluOp::Neg, ScalarValue::F64(x)) => ScalarValue::F64(-x),
        (UnAluOp::Not, ScalarValue::Bool(x)) => ScalarValue::Bool(!x),
        (UnAluOp::Not, ScalarValue::I32(x)) => ScalarValue::I32(!x),
        (UnAluOp::Not, ScalarValue::I64(x)) => ScalarValue::I64(!x),
        _ => {
            return Err(Trap::Launch(format!(
                "{} applied to {}",
                op.mnemonic(),
                v.ty()
            )))
        }
    })
}

/// Cast with Rust `as` semantics (float→int saturates, int→int truncates).
pub fn cast(v: ScalarValue, to: ScalarType) -> ScalarValue {
    use ScalarValue::*;
    match (v, to) {
        (I32(x), ScalarType::I32) => I32(x),
        (I32(x), ScalarType::I64) => I64(x as i64),
        (I32(x), ScalarType::F32) => F32(x as f32),
        (I32(x), ScalarType::F64) => F64(x as f64),
        (I64(x), ScalarType::I32) => I32(x as i32),
        (I64(x), ScalarType::I64) => I64(x),
        (I64(x), ScalarType::F32) => F32(x as f32),
        (I64(x), ScalarType::F64) => F64(x as f64),
        (F32(x), ScalarType::I32) => I32(x as i32),
        (F32(x), ScalarType::I64) => I64(x as i64),
        (F32(x), ScalarType::F32) => F32(x),
        (F32(x), ScalarType::F64) => F64(x as f64),
        (F64(x), ScalarType::I32) => I32(x as i32),
        (F64(x), ScalarType::I64) => I64(x as i64),
        (F64(x), ScalarType::F32) => F32(x as f32),
        (F64(x), ScalarType::F64) => F64(x),
        (b @ Bool(_), _) => b,
        (v, ScalarType::Bool) => v,
    }
}

/// Evaluate a math intrinsic. Shared with the device simulator so both
/// execution paths call the very same host functions.
pub fn intrinsic(
    which: MathIntrinsic,
    a: ScalarValue,
    b: Option<ScalarValue>,
    span: Span,
) -> Result<ScalarValue, Trap> {
    use MathIntrinsic::*;
    use ScalarValue::*;
    Ok(match (which, a) {
        (Sin, F32(x)) => F32(x.sin()),
        (Sin, F64(x)) => F64(x.sin()),
        (Cos, F32(x)) => F32(x.cos()),
        (Cos, F64(x)) => F64(x.cos()),
        (Sqrt, F32(x)) => F32(x.sqrt()),
        (Sqrt, F64(x)) => F64(x.sqrt()),
        (Exp, F32(x)) => F32(x.exp()),
        (Exp, F64(x)) => F64(x.exp()),
        (Log, F32(x)) => F32(x.ln()),
        (Log, F64(x)) => F64(x.ln()),
        (Pow, F32(x)) => match b {
            Some(F32(y)) => F32(x.powf(y)),
            _ => return Err(Trap::Launch(format!("pow operand mismatch at {span}"))),
        },
        (Pow, F64(x)) => match b {
            Some(F64(y)) => F64(x.powf(y)),
            _ => return Err(Trap::Launch(format!("pow operand mismatch at {span}"))),
        },
        (Popc, I32(x)) => I32(x.count_ones() as i32),
        (Popc, I64(x)) => I32(x.count_ones() as i32),
        _ => {
            return Err(Trap::Launch(format!(
                "{} applied to {} at {span}",
                which.name(),
                a.ty()
            )))
        }
    })
}

/// Combine an atomic field's current value with an operand.
pub fn atomic_combine(op: AtomicOp, cur: ScalarValue, rhs: ScalarValue) -> Result<ScalarValue, Trap> {
    use ScalarValue::*;
    Ok(match (op, cur, rhs) {
        (AtomicOp::Add, I32(a), I32(b)) => I32(a.wrapping_add(b)),
        (AtomicOp::Sub, I32(a), I32(b)) => I32(a.wrapping_sub(b)),
        (AtomicOp::And, I32(a), I32(b)) => I32(a & b),
        (AtomicOp::Or, I32(a), I32(b)) => I32(a | b),
        (AtomicOp::Xor, I32(a), I32(b)) => I32(a ^ b),
        (AtomicOp::Add, F32(a), F32(b)) => F32(a + b),
        (AtomicOp::Sub, F32(a), F32(b)) => F32(a - b),
        _ => {
            return Err(Trap::Launch(format!(
                "atomic {} not defined on {}",
                op.keyword(),
                cur.ty()
            )))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_unit;
    use crate::validate::validate_unit;

    fn run(
        src: &str,
        kernel: &str,
        args: Vec<ArgValue>,
    ) -> Result<Outcome, Trap> {
        let unit = parse_unit(src, "t").unwrap();
        let checked = validate_unit(&unit).unwrap();
        run_kernel(&unit, &checked, kernel, args, &[])
    }

    fn f32s(v: Vec<f32>) -> ArgValue {
        ArgValue::Array(ArrayData::F32(v))
    }

    fn i32s(v: Vec<i32>) -> ArgValue {
        ArgValue::Array(ArrayData::I32(v))
    }

    const VECADD: &str = "@jacc(iterationSpace=ONE_DIMENSION)
        kernel vecadd(@read a: f32[], @read b: f32[], @write c: f32[]) {
            for i in 0..len(c) { c[i] = a[i] + b[i]; }
        }";

    #[test]
    fn vecadd_adds_elementwise() {
        let out = run(
            VECADD,
            "vecadd",
            vec![f32s(vec![1.0, 2.0, 3.0]), f32s(vec![10.0, 20.0, 30.0]), f32s(vec![0.0; 3])],
        )
        .unwrap();
        assert_eq!(out.args[2], f32s(vec![11.0, 22.0, 33.0]));
    }

    #[test]
    fn atomic_reduction_sums_1_to_1024() {
        let src = "@jacc(iterationSpace=ONE_DIMENSION)
            kernel reduce(@read a: i32[]) {
                @atomic(op=ADD) field result: i32;
                for i in 0..len(a) { result = a[i]; }
            }";
        let data: Vec<i32> = (1..=1024).collect();
        let out = run(src, "reduce", vec![i32s(data)]).unwrap();
        assert_eq!(out.fields[0].1, FieldValue::Scalar(ScalarValue::I32(524800)));
    }

    #[test]
    fn atomic_field_rezeroed_even_with_init() {
        let src = "@jacc(iterationSpace=NONE)
            kernel k(@read a: i32[]) {
                @atomic(op=ADD) field result: i32;
                result = a[0];
            }";
        let unit = parse_unit(src, "t").unwrap();
        let checked = validate_unit(&unit).unwrap();
        let init = vec![("result".to_string(), FieldValue::Scalar(ScalarValue::I32(100)))];
        let out = run_kernel(&unit, &checked, "k", vec![i32s(vec![7])], &init).unwrap();
        // The launch zeroes atomic accumulators; the init is ignored.
        assert_eq!(out.fields[0].1, FieldValue::Scalar(ScalarValue::I32(7)));
    }

    #[test]
    fn integer_overflow_wraps() {
        let src = "@jacc(iterationSpace=NONE)
            kernel k(@read a: i32[], @write c: i32[]) { c[0] = a[0] + 1; }";
        let out = run(src, "k", vec![i32s(vec![i32::MAX]), i32s(vec![0])]).unwrap();
        assert_eq!(out.args[1], i32s(vec![i32::MIN]));
    }

    #[test]
    fn integer_division_by_zero_traps() {
        let src = "@jacc(iterationSpace=NONE)
            kernel k(@read a: i32[], @write c: i32[]) { c[0] = a[0] / a[1]; }";
        let err = run(src, "k", vec![i32s(vec![5, 0]), i32s(vec![0])]).unwrap_err();
        assert!(matches!(err, Trap::Arith(_)), "got {err:?}");
    }

    #[test]
    fn float_division_by_zero_is_infinite() {
        let src = "@jacc(iterationSpace=NONE)
            kernel k(@read a: f32[], @write c: f32[]) { c[0] = a[0] / a[1]; }";
        let out = run(src, "k", vec![f32s(vec![1.0, 0.0]), f32s(vec![0.0])]).unwrap();
        match &out.args[1] {
            ArgValue::Array(ArrayData::F32(v)) => assert!(v[0].is_infinite()),
            _ => unreachable!(),
        }
    }

    #[test]
    fn bounds_trap_names_array_and_index() {
        let src = "@jacc(iterationSpace=NONE)
            kernel k(@read a: f32[], @write c: f32[]) { c[0] = a[9]; }";
        let err = run(src, "k", vec![f32s(vec![0.0; 3]), f32s(vec![0.0])]).unwrap_err();
        assert_eq!(
            err,
            Trap::Bounds { array: "a".into(), index: 9, len: 3 }
        );
    }

    #[test]
    fn logical_ops_evaluate_both_sides() {
        // A short-circuiting && would skip the out-of-bounds read; the
        // strict semantics must trap.
        let src = "@jacc(iterationSpace=NONE)
            kernel k(@read a: i32[], @write c: i32[]) {
                if (false && a[9] > 0) { c[0] = 1; }
            }";
        let err = run(src, "k", vec![i32s(vec![1]), i32s(vec![0])]).unwrap_err();
        assert!(matches!(err, Trap::Bounds { .. }), "got {err:?}");
    }

    #[test]
    fn float_to_int_cast_saturates() {
        let src = "@jacc(iterationSpace=NONE)
            kernel k(@read a: f32[], @write c: i32[]) { c[0] = a[0] as i32; }";
        let out = run(src, "k", vec![f32s(vec![1e10]), i32s(vec![0])]).unwrap();
        assert_eq!(out.args[1], i32s(vec![i32::MAX]));
    }

    #[test]
    fn fn_call_with_composite_receiver() {
        let src = "type Point { x: f32; y: f32; }
            fn norm2(p: Point) -> f32 { return p.x * p.x + p.y * p.y; }
            @jacc(iterationSpace=NONE)
            kernel k(@write c: f32[]) {
                var p = new Point(3.0, 4.0);
                c[0] = p.norm2();
            }";
        let out = run(src, "k", vec![f32s(vec![0.0])]).unwrap();
        assert_eq!(out.args[0], f32s(vec![25.0]));
    }

    #[test]
    fn composite_param_field_reads() {
        let src = "type V { a: f32; b: f32; c2: f32; d: f32; }
            @jacc(iterationSpace=NONE)
            kernel k(@read v: V, @write o: f32[]) { o[0] = v.b; }";
        let obj = ArgValue::Object(vec![
            FieldValue::Scalar(ScalarValue::F32(1.0)),
            FieldValue::Scalar(ScalarValue::F32(2.0)),
            FieldValue::Scalar(ScalarValue::F32(3.0)),
            FieldValue::Scalar(ScalarValue::F32(4.0)),
        ]);
        let out = run(src, "k", vec![obj, f32s(vec![0.0])]).unwrap();
        assert_eq!(out.args[1], f32s(vec![2.0]));
    }

    #[test]
    fn histogram_counts_every_value() {
        let src = "@jacc(iterationSpace=ONE_DIMENSION)
            kernel hist(@read values: i32[]) {
                @atomic(op=ADD) field bins: i32[8];
                for i in 0..len(values) { bins[values[i]] = 1; }
            }";
        let vals: Vec<i32> = (0..8).chain(0..8).collect();
        let out = run(src, "hist", vec![i32s(vals)]).unwrap();
        assert_eq!(out.fields[0].1, FieldValue::Array(ArrayData::I32(vec![2; 8])));
    }

    #[test]
    fn popc_counts_bits() {
        let src = "@jacc(iterationSpace=NONE)
            kernel k(@read a: i64[], @write c: i32[]) { c[0] = popc(a[0] & a[1]); }";
        let out = run(
            src,
            "k",
            vec![ArgValue::Array(ArrayData::I64(vec![0b1011, 0b1110])), i32s(vec![0])],
        )
        .unwrap();
        assert_eq!(out.args[1], i32s(vec![2]));
    }

    #[test]
    fn grid_stride_form_matches_plain_loop_serially() {
        // After parallelization the loop starts at global_id and strides by
        // global_size; with the serial pin (0 and 1) that is the original.
        let src = "@jacc(iterationSpace=ONE_DIMENSION)
            kernel k(@read a: f32[], @write c: f32[]) {
                for i in global_id(0)..len(c) step global_size(0) { c[i] = a[i]; }
            }";
        let out = run(src, "k", vec![f32s(vec![5.0, 6.0]), f32s(vec![0.0; 2])]).unwrap();
        assert_eq!(out.args[1], f32s(vec![5.0, 6.0]));
    }

    #[test]
    fn compound_assign_on_readwrite_param() {
        let src = "@jacc(iterationSpace=NONE)
            kernel k(@readwrite c: i32[]) { c[0] += 5; c[0] *= 2; }";
        let out = run(src, "k", vec![i32s(vec![10])]).unwrap();
        assert_eq!(out.args[0], i32s(vec![30]));
    }

    #[test]
    fn return_exits_kernel_early() {
        let src = "@jacc(iterationSpace=NONE)
            kernel k(@readwrite c: i32[]) {
                c[0] = 1;
                return;
            }";
        let out = run(src, "k", vec![i32s(vec![0, 0])]).unwrap();
        assert_eq!(out.args[0], i32s(vec![1, 0]));
    }
}
