//! Name resolution and type checking for HIR.
//!
//! `validate_unit` checks every declaration and kernel in a unit and, on
//! success, returns a [`CheckedUnit`] carrying the information later stages
//! need: per-expression types, local types, flattened composite layouts, and
//! the resolved atomic operation per `@atomic` field.
//!
//! Type rules are strict — no implicit numeric conversions — with one
//! convenience: an unsuffixed literal adapts to the scalar type its context
//! expects (`var x: f64 = 1.5;` types the literal f64). Suffixed literals
//! (`7L`, `2.5d`) are fixed.
//!
//! The checker runs twice in a compilation: once after parsing for user
//! diagnostics, and once after the HIR passes (which synthesize new nodes)
//! to rebuild the side tables for lowering.

use crate::ast::*;
use crate::diag::{CompileError, Diagnostic, Result, Span};
use crate::types::{AtomicOp, MathIntrinsic, ParamMode, ScalarType, ThreadBuiltin, Type};
use std::collections::HashMap;

/// Unit-level environment: flattened composites and helper signatures.
#[derive(Debug, Clone, Default)]
pub struct UnitEnv {
    /// Flattened field list per composite (super-chain fields first).
    pub composites: HashMap<String, Vec<(String, Type)>>,
}

impl UnitEnv {
    pub fn composite_field(&self, type_name: &str, field: &str) -> Option<&Type> {
        self.composites
            .get(type_name)?
            .iter()
            .find(|(n, _)| n == field)
            .map(|(_, t)| t)
    }
}

/// Side tables for one checked kernel.
#[derive(Debug, Clone, Default)]
pub struct CheckedKernel {
    /// Type of every expression node.
    pub expr_types: HashMap<NodeId, Type>,
    /// Types of locals, including loop induction variables.
    pub local_types: HashMap<String, Type>,
    /// Resolved atomic operation per `@atomic` field.
    pub atomic_ops: HashMap<String, AtomicOp>,
}

#[derive(Debug, Clone, Default)]
pub struct CheckedUnit {
    pub env: UnitEnv,
    pub kernels: HashMap<String, CheckedKernel>,
    /// Side tables for helper fn bodies, keyed by fn name.
    pub fns: HashMap<String, CheckedKernel>,
}

/// Check the unit; `Ok` carries the side tables, `Err` all diagnostics.
pub fn validate_unit(unit: &SourceUnit) -> Result<CheckedUnit> {
    let mut diags = Vec::new();
    let env = build_unit_env(unit, &mut diags);

    let mut fns = HashMap::new();
    for f in &unit.fns {
        let checked = check_fn(unit, &env, f, &mut diags);
        fns.insert(f.name.clone(), checked);
    }
    let mut kernels = HashMap::new();
    for k in &unit.kernels {
        let checked = check_kernel(unit, &env, k, &mut diags);
        kernels.insert(k.name.clone(), checked);
    }

    if diags.is_empty() {
        Ok(CheckedUnit { env, kernels, fns })
    } else {
        Err(CompileError::Diagnostics(diags))
    }
}

/// Spec-shaped wrapper: empty list iff the unit is well-formed.
pub fn diagnostics(unit: &SourceUnit) -> Vec<Diagnostic> {
    match validate_unit(unit) {
        Ok(_) => Vec::new(),
        Err(CompileError::Diagnostics(d)) => d,
        Err(CompileError::Internal(msg)) => {
            vec![Diagnostic::error(Span::new(1, 1), msg)]
        }
    }
}

/// Flatten super chains into per-composite field lists, rejecting cycles,
/// unknown supers, and duplicate field names across the chain.
fn build_unit_env(unit: &SourceUnit, diags: &mut Vec<Diagnostic>) -> UnitEnv {
    let mut env = UnitEnv::default();
    for decl in &unit.types {
        let mut chain = Vec::new();
        let mut cur = Some(decl);
        let mut seen = vec![decl.name.clone()];
        let mut broken = false;
        while let Some(d) = cur {
            chain.push(d);
            match &d.super_type {
                None => cur = None,
                Some(s) => {
                    if seen.contains(s) {
                        diags.push(Diagnostic::error(
                            d.span,
                            format!("cyclic inheritance involving type `{s}`"),
                        ));
                        broken = true;
                        break;
                    }
                    seen.push(s.clone());
                    match unit.type_decl(s) {
                        Some(sd) => cur = Some(sd),
                        None => {
                            diags.push(Diagnostic::error(
                                d.span,
                                format!("unknown super type `{s}`"),
                            ));
                            broken = true;
                            break;
                        }
                    }
                }
            }
        }
        if broken {
            continue;
        }
        // Super-most first.
        let mut fields: Vec<(String, Type)> = Vec::new();
        for d in chain.iter().rev() {
            for f in &d.fields {
                if fields.iter().any(|(n, _)| n == &f.name) {
                    diags.push(Diagnostic::error(
                        f.span,
                        format!(
                            "field `{}` duplicates a field inherited from a super type",
                            f.name
                        ),
                    ));
                    continue;
                }
                if matches!(f.ty, Type::Composite(_) | Type::Array(_)) {
                    diags.push(Diagnostic::error(
                        f.span,
                        format!("composite field `{}` must be scalar or fixed-length array", f.name),
                    ));
                    continue;
                }
                fields.push((f.name.clone(), f.ty.clone()));
            }
        }
        env.composites.insert(decl.name.clone(), fields);
    }
    env
}

fn reserved_name(name: &str) -> bool {
    ThreadBuiltin::from_name(name).is_some()
        || MathIntrinsic::from_name(name).is_some()
        || name == "len"
}

/// Where a resolved identifier lives.
#[derive(Debug, Clone, PartialEq)]
enum Binding {
    Local(Type),
    Param(usize),
    Field(usize),
}

struct Checker<'a> {
    unit: &'a SourceUnit,
    env: &'a UnitEnv,
    /// Kernel context; `None` while checking a helper fn.
    kernel: Option<&'a KernelHir>,
    /// Helper-fn params (name → type) when checking a fn.
    fn_params: HashMap<String, Type>,
    fn_ret: Option<ScalarType>,
    locals: HashMap<String, Type>,
    /// Every name ever introduced in this body — locals are never reused.
    used_names: Vec<String>,
    /// Induction variables of enclosing loops (assignment is illegal).
    induction: Vec<String>,
    diags: Vec<Diagnostic>,
    types: HashMap<NodeId, Type>,
    /// Atomic ops observed per atomic field, for inference/consistency.
    atomic_seen: HashMap<String, (AtomicOp, Span)>,
}

fn check_kernel(
    unit: &SourceUnit,
    env: &UnitEnv,
    k: &KernelHir,
    diags: &mut Vec<Diagnostic>,
) -> CheckedKernel {
    let mut ck = Checker {
        unit,
        env,
        kernel: Some(k),
        fn_params: HashMap::new(),
        fn_ret: None,
        locals: HashMap::new(),
        used_names: Vec::new(),
        induction: Vec::new(),
        diags: Vec::new(),
        types: HashMap::new(),
        atomic_seen: HashMap::new(),
    };
    ck.check_kernel_decls(k);
    ck.check_block(&k.body);
    let atomic_ops = ck.resolve_atomics(k);
    diags.extend(ck.diags);
    CheckedKernel {
        expr_types: ck.types,
        local_types: ck.locals,
        atomic_ops,
    }
}

fn check_fn(
    unit: &SourceUnit,
    env: &UnitEnv,
    f: &FnDecl,
    diags: &mut Vec<Diagnostic>,
) -> CheckedKernel {
    let mut ck = Checker {
        unit,
        env,
        kernel: None,
        fn_params: f.params.iter().map(|p| (p.name.clone(), p.ty.clone())).collect(),
        fn_ret: Some(f.ret),
        locals: HashMap::new(),
        used_names: f.params.iter().map(|p| p.name.clone()).collect(),
        induction: Vec::new(),
        diags: Vec::new(),
        types: HashMap::new(),
        atomic_seen: HashMap::new(),
    };
    if reserved_name(&f.name) {
        ck.error(f.span, format!("`{}` is a reserved builtin name", f.name));
    }
    for p in &f.params {
        if reserved_name(&p.name) {
            ck.error(p.span, format!("`{}` is a reserved builtin name", p.name));
        }
        if let Type::Composite(t) = &p.ty {
            if !env.composites.contains_key(t) {
                ck.error(p.span, format!("unknown type `{t}`"));
            }
        }
    }
    ck.check_block(&f.body);
    if !block_returns(&f.body) {
        ck.error(f.span, format!("function `{}` does not return on all paths", f.name));
    }
    diags.extend(ck.diags);
    CheckedKernel {
        expr_types: ck.types,
        local_types: ck.locals,
        atomic_ops: HashMap::new(),
    }
}

/// Conservative all-paths-return analysis.
fn block_returns(b: &Block) -> bool {
    b.stmts.iter().any(|s| match s {
        Stmt::Return { .. } => true,
        Stmt::If { then_blk, else_blk: Some(e), .. } => {
            block_returns(then_blk) && block_returns(e)
        }
        _ => false,
    })
}

impl<'a> Checker<'a> {
    fn error(&mut self, span: Span, msg: impl Into<String>) {
        self.diags.push(Diagnostic::error(span, msg));
    }

    fn kernel_param(&self, name: &str) -> Option<(usize, &'a KernelParam)> {
        let k = self.kernel?;
        k.params.iter().enumerate().find(|(_, p)| p.name == name)
    }

    fn kernel_field(&self, name: &str) -> Option<(usize, &'a KernelField)> {
        let k = self.kernel?;
        k.fields.iter().enumerate().find(|(_, f)| f.name == name)
    }

    fn resolve(&self, name: &str) -> Option<Binding> {
        if let Some(t) = self.locals.get(name) {
            return Some(Binding::Local(t.clone()));
        }
        if self.kernel.is_some() {
            if let Some((i, _)) = self.kernel_param(name) {
                return Some(Binding::Param(i));
            }
            if let Some((i, _)) = self.kernel_field(name) {
                return Some(Binding::Field(i));
            }
            None
        } else {
            self.fn_params.get(name).map(|t| Some(Binding::Local(t.clone())))?
        }
    }

    fn check_kernel_decls(&mut self, k: &KernelHir) {
        for p in &k.params {
            if reserved_name(&p.name) {
                self.error(p.span, format!("`{}` is a reserved builtin name", p.name));
            }
            match &p.ty {
                Type::Scalar(s) => {
                    if *s == ScalarType::Bool {
                        self.error(p.span, "bool parameters are not supported");
                    }
                    if p.mode != ParamMode::Read {
                        self.error(
                            p.span,
                            format!("scalar parameter `{}` must be @read", p.name),
                        );
                    }
                }
                Type::Array(s) => {
                    if *s == ScalarType::Bool {
                        self.error(p.span, "bool arrays are not supported");
                    }
                }
                Type::Composite(t) => {
                    if !self.env.composites.contains_key(t) {
                        self.error(p.span, format!("unknown type `{t}`"));
                    }
                }
                Type::FixedArray(_, _) => {
                    self.error(p.span, "fixed-length arrays are field types, not parameter types");
                }
            }
            if k.fields.iter().any(|f| f.name == p.name) {
                self.error(p.span, format!("`{}` is both a parameter and a field", p.name));
            }
        }
        for f in &k.fields {
            if reserved_name(&f.name) {
                self.error(f.span, format!("`{}` is a reserved builtin name", f.name));
            }
            let elem = match &f.ty {
                Type::Scalar(s) | Type::FixedArray(s, _) => *s,
                _ => {
                    self.error(f.span, format!("field `{}` must be scalar or fixed-length array", f.name));
                    continue;
                }
            };
            if elem == ScalarType::Bool {
                self.error(f.span, "bool fields are not supported");
            }
            if f.atomicity.is_atomic() && !matches!(elem, ScalarType::I32 | ScalarType::F32) {
                self.error(
                    f.span,
                    format!("atomic field `{}` must be i32 or f32", f.name),
                );
            }
        }
    }

    /// Final per-field atomic op: declared, or inferred from combining sites.
    fn resolve_atomics(&mut self, k: &KernelHir) -> HashMap<String, AtomicOp> {
        let mut out = HashMap::new();
        for f in &k.fields {
            match f.atomicity {
                FieldAtomicity::NotAtomic => {}
                FieldAtomicity::Declared(op) => {
                    out.insert(f.name.clone(), op);
                }
                FieldAtomicity::Inferred => match self.atomic_seen.get(&f.name) {
                    Some((op, _)) => {
                        out.insert(f.name.clone(), *op);
                    }
                    None => {
                        self.diags.push(Diagnostic::error(
                            f.span,
                            format!(
                                "cannot infer the atomic operation for field `{}` (no combining assignment found)",
                                f.name
                            ),
                        ));
                    }
                },
            }
        }
        out
    }

    // ----- statements -------------------------------------------------

    fn check_block(&mut self, b: &Block) {
        for s in &b.stmts {
            self.check_stmt(s);
        }
    }

    fn check_stmt(&mut self, s: &Stmt) {
        match s {
            Stmt::VarDecl { name, declared_ty, init, span, .. } => {
                self.check_var_decl(name, declared_ty.as_ref(), init, *span);
            }
            Stmt::Assign { target, op, value, span, .. } => {
                self.check_assign(target, *op, value, *span);
            }
            Stmt::For { var, lo, hi, step, body, span, .. } => {
                self.expect_scalar(lo, ScalarType::I32);
                self.expect_scalar(hi, ScalarType::I32);
                if let Some(st) = step {
                    self.expect_scalar(st, ScalarType::I32);
                    if let Expr::IntLit { value, .. } = st {
                        if *value <= 0 {
                            self.error(st.span(), "loop step must be positive");
                        }
                    }
                }
                self.introduce_local(var, Type::Scalar(ScalarType::I32), *span);
                self.induction.push(var.clone());
                self.check_block(body);
                self.induction.pop();
            }
            Stmt::If { cond, then_blk, else_blk, .. } => {
                self.expect_scalar(cond, ScalarType::Bool);
                self.check_block(then_blk);
                if let Some(e) = else_blk {
                    self.check_block(e);
                }
            }
            Stmt::Barrier { span, .. } => {
                if self.kernel.is_none() {
                    self.error(*span, "barrier() is only valid inside a kernel");
                }
            }
            Stmt::Return { value, span, .. } => match (self.fn_ret, value) {
                (Some(ret), Some(v)) => {
                    self.expect_scalar(v, ret);
                }
                (Some(_), None) => self.error(*span, "function return needs a value"),
                (None, Some(v)) => self.error(v.span(), "kernel return takes no value"),
                (None, None) => {}
            },
            Stmt::BoundsGuard { array, index, .. } => {
                // Synthesized nodes. The guard consults only the array's
                // length, so resolve the target by name instead of typing it
                // as a read — an atomic field is a legal guard target even
                // though its elements are write-only.
                let at = match array {
                    Expr::Ident { name, .. } => self
                        .kernel_param(name)
                        .map(|(_, p)| p.ty.clone())
                        .or_else(|| self.kernel_field(name).map(|(_, f)| f.ty.clone())),
                    _ => None,
                };
                match at {
                    Some(t) if t.element().is_some() => {}
                    _ => self.error(array.span(), "guard target is not an array"),
                }
                self.expect_scalar(index, ScalarType::I32);
            }
        }
    }

    fn introduce_local(&mut self, name: &str, ty: Type, span: Span) {
        if reserved_name(name) {
            self.error(span, format!("`{name}` is a reserved builtin name"));
            return;
        }
        let clashes = self.used_names.iter().any(|n| n == name)
            || self.kernel_param(name).is_some()
            || self.kernel_field(name).is_some();
        if clashes {
            self.error(
                span,
                format!("name `{name}` is already in use (locals are never reused)"),
            );
            return;
        }
        self.used_names.push(name.to_string());
        self.locals.insert(name.to_string(), ty);
    }

    fn check_var_decl(&mut self, name: &str, declared: Option<&Type>, init: &Expr, span: Span) {
        let expected = declared.and_then(|t| t.scalar());
        let it = self.check_expr(init, expected);
        let ty = match declared {
            Some(d) => {
                if *d != it {
                    self.error(
                        init.span(),
                        format!("initializer has type {it}, expected {d}"),
                    );
                }
                d.clone()
            }
            None => it,
        };
        match &ty {
            Type::Scalar(_) => {}
            Type::Composite(_) => {
                if !matches!(init, Expr::New { .. }) {
                    self.error(
                        span,
                        "composite locals must be initialized with `new`",
                    );
                }
            }
            _ => {
                self.error(span, "locals must be scalar (arrays cannot be declared locally)");
            }
        }
        self.introduce_local(name, ty, span);
    }

    fn check_assign(&mut self, target: &Expr, op: Option<BinOp>, value: &Expr, span: Span) {
        // Atomic fields have a dedicated contract.
        if let Some(field_name) = self.atomic_target_of(target) {
            self.check_atomic_assign(&field_name, target, op, value, span);
            return;
        }
        if let Expr::Ident { name, span: tspan, .. } = target {
            if self.induction.contains(name) {
                self.error(*tspan, format!("assignment to induction variable `{name}`"));
                return;
            }
        }
        let tt = self.check_lvalue(target, op.is_some());
        let Some(scalar) = tt.scalar() else {
            if !matches!(tt, Type::Scalar(_)) {
                self.error(target.span(), "assignment target must be scalar-typed");
            }
            self.check_expr(value, None);
            return;
        };
        if let Some(op) = op {
            if !op.is_compound_assignable() {
                self.error(span, format!("`{}=` is not a valid compound assignment", op.symbol()));
            }
            self.check_op_type(op, scalar, span);
        }
        self.expect_scalar(value, scalar);
    }

    /// If `target` is an atomic field (or an element of one), its name.
    fn atomic_target_of(&self, target: &Expr) -> Option<String> {
        let name = match target {
            Expr::Ident { name, .. } => name,
            Expr::Index { base, .. } => match base.as_ref() {
                Expr::Ident { name, .. } => name,
                _ => return None,
            },
            _ => return None,
        };
        if self.locals.contains_key(name) {
            return None;
        }
        let (_, f) = self.kernel_field(name)?;
        f.atomicity.is_atomic().then(|| name.clone())
    }

    fn check_atomic_assign(
        &mut self,
        field_name: &str,
        target: &Expr,
        op: Option<BinOp>,
        value: &Expr,
        span: Span,
    ) {
        let (_, field) = self.kernel_field(field_name).expect("atomic target resolved");
        let elem = match &field.ty {
            Type::Scalar(s) | Type::FixedArray(s, _) => *s,
            _ => return,
        };
        // Type the target node(s) so the side table is total.
        self.types.insert(target.id(), Type::Scalar(elem));
        if let Expr::Index { base, index, .. } = target {
            self.types.insert(base.id(), field.ty.clone());
            self.expect_scalar(index, ScalarType::I32);
            if matches!(field.ty, Type::Scalar(_)) {
                self.error(target.span(), format!("field `{field_name}` is not an array"));
            }
        } else if matches!(field.ty, Type::FixedArray(_, _)) {
            self.error(target.span(), format!("atomic array field `{field_name}` must be indexed"));
        }

        // Determine the combining operation and the operand expression.
        let (used_op, operand): (Option<AtomicOp>, &Expr) = match op {
            Some(bop) => match bop.as_atomic_op() {
                Some(a) => (Some(a), value),
                None => {
                    self.error(
                        span,
                        format!("`{}=` is not an atomic combining operation", bop.symbol()),
                    );
                    (None, value)
                }
            },
            None => {
                // `f = f <op> e` names the op explicitly; a bare `f = e`
                // uses the declared op.
                if let Expr::Binary { op: bop, lhs, rhs, .. } = value {
                    if matches!(lhs.as_ref(), Expr::Ident { name, .. } if name == field_name)
                        && matches!(target, Expr::Ident { .. })
                    {
                        let a = bop.as_atomic_op();
                        if a.is_none() {
                            self.error(
                                value.span(),
                                format!("`{}` is not an atomic combining operation", bop.symbol()),
                            );
                        }
                        self.types.insert(lhs.id(), Type::Scalar(elem));
                        self.types.insert(value.id(), Type::Scalar(elem));
                        self.expect_scalar(rhs, elem);
                        self.note_atomic_use(field_name, a, elem, span);
                        return;
                    }
                }
                match field.atomicity {
                    FieldAtomicity::Declared(a) => (Some(a), value),
                    _ => {
                        self.error(
                            span,
                            format!(
                                "plain assignment to atomic field `{field_name}` needs a declared op (`@atomic(op=...)`)"
                            ),
                        );
                        (None, value)
                    }
                }
            }
        };
        self.expect_scalar(operand, elem);
        self.note_atomic_use(field_name, used_op, elem, span);
    }

    fn note_atomic_use(
        &mut self,
        field_name: &str,
        op: Option<AtomicOp>,
        elem: ScalarType,
        span: Span,
    ) {
        let Some(op) = op else { return };
        if elem == ScalarType::F32 && !op.allows_float() {
            self.error(span, format!("atomic {} is not supported on f32", op.keyword()));
        }
        let (_, field) = self.kernel_field(field_name).expect("atomic field");
        if let FieldAtomicity::Declared(d) = field.atomicity {
            if d != op {
                self.error(
                    span,
                    format!(
                        "atomic field `{field_name}` is declared {} but combined with {}",
                        d.keyword(),
                        op.keyword()
                    ),
                );
                return;
            }
        }
        if let Some((prev, _)) = self.atomic_seen.get(field_name) {
            if *prev != op {
                self.error(
                    span,
                    format!(
                        "atomic field `{field_name}` is combined with both {} and {}",
                        prev.keyword(),
                        op.keyword()
                    ),
                );
                return;
            }
        }
        self.atomic_seen.insert(field_name.to_string(), (op, span));
    }

    /// Type an assignment target, checking writability (and readability for
    /// compound assignments).
    fn check_lvalue(&mut self, target: &Expr, also_reads: bool) -> Type {
        match target {
            Expr::Ident { name, span, id } => {
                if let Some(Binding::Local(t)) = self.resolve(name) {
                    if matches!(t, Type::Composite(_)) {
                        self.error(*span, "composite locals cannot be reassigned");
                    }
                    self.types.insert(*id, t.clone());
                    return t;
                }
                if self.kernel.is_none() {
                    self.error(*span, format!("unknown identifier `{name}`"));
                    return Type::Scalar(ScalarType::I32);
                }
                if self.kernel_param(name).is_some() {
                    self.error(*span, format!("cannot assign to parameter `{name}`"));
                    let t = self.kernel_param(name).unwrap().1.ty.clone();
                    self.types.insert(*id, t.clone());
                    return t;
                }
                if let Some((_, f)) = self.kernel_field(name) {
                    let ty = f.ty.clone();
                    if f.space == crate::types::MemSpace::Constant {
                        self.error(*span, format!("constant field `{name}` is read-only"));
                    }
                    if ty.is_array() {
                        self.error(*span, format!("array field `{name}` must be indexed"));
                    }
                    self.types.insert(*id, ty.clone());
                    return ty;
                }
                self.error(*span, format!("unknown identifier `{name}`"));
                Type::Scalar(ScalarType::I32)
            }
            Expr::Index { base, index, span, id } => {
                self.expect_scalar(index, ScalarType::I32);
                let bt = self.check_array_base(base, /*writes=*/ true, also_reads);
                match bt.element() {
                    Some(e) => {
                        self.types.insert(*id, Type::Scalar(e));
                        Type::Scalar(e)
                    }
                    None => {
                        self.error(*span, "indexed expression is not an array");
                        Type::Scalar(ScalarType::I32)
                    }
                }
            }
            Expr::Field { base, field, span, id } => {
                let bt = self.check_expr(base, None);
                let Type::Composite(tname) = &bt else {
                    self.error(*span, "field access on a non-composite value");
                    return Type::Scalar(ScalarType::I32);
                };
                // Composite params must be writable in a store position.
                if let Expr::Ident { name, .. } = base.as_ref() {
                    if let Some((_, p)) = self.kernel_param(name) {
                        if !p.mode.writes() {
                            self.error(
                                *span,
                                format!("parameter `{name}` is @{} and cannot be written", p.mode.keyword()),
                            );
                        }
                        if also_reads && !p.mode.reads() {
                            self.error(
                                *span,
                                format!("parameter `{name}` is @{} and cannot be read", p.mode.keyword()),
                            );
                        }
                    }
                }
                match self.env.composite_field(tname, field) {
                    Some(ft) => {
                        if ft.is_array() {
                            self.error(*span, format!("array field `{field}` must be indexed"));
                        }
                        self.types.insert(*id, ft.clone());
                        ft.clone()
                    }
                    None => {
                        self.error(*span, format!("type `{tname}` has no field `{field}`"));
                        Type::Scalar(ScalarType::I32)
                    }
                }
            }
            _ => {
                self.error(target.span(), "invalid assignment target");
                Type::Scalar(ScalarType::I32)
            }
        }
    }

    /// Check the base of an array access, enforcing parameter modes.
    fn check_array_base(&mut self, base: &Expr, writes: bool, reads: bool) -> Type {
        if let Expr::Ident { name, span, .. } = base {
            if let Some((_, p)) = self.kernel_param(name) {
                if writes && !p.mode.writes() {
                    self.error(
                        *span,
                        format!("parameter `{name}` is @{} and cannot be written", p.mode.keyword()),
                    );
                }
                if reads && !p.mode.reads() {
                    self.error(
                        *span,
                        format!("parameter `{name}` is @{} and cannot be read", p.mode.keyword()),
                    );
                }
            }
            if let Some((_, f)) = self.kernel_field(name) {
                if writes && f.space == crate::types::MemSpace::Constant {
                    self.error(*span, format!("constant field `{name}` is read-only"));
                }
            }
        }
        self.check_expr(base, None)
    }

    // ----- expressions --------------------------------------------------

    fn expect_scalar(&mut self, e: &Expr, want: ScalarType) {
        let t = self.check_expr(e, Some(want));
        if t != Type::Scalar(want) {
            self.error(e.span(), format!("expected {want}, found {t}"));
        }
    }

    /// Can this expression adapt to a context type? (unsuffixed literals,
    /// possibly under negation)
    fn adaptable_literal(e: &Expr) -> bool {
        match e {
            Expr::IntLit { i64_suffix, .. } => !i64_suffix,
            Expr::FloatLit { f64_suffix, .. } => !f64_suffix,
            Expr::Unary { op: UnOp::Neg, operand, .. } => Self::adaptable_literal(operand),
            _ => false,
        }
    }

    fn check_expr(&mut self, e: &Expr, expected: Option<ScalarType>) -> Type {
        let ty = self.check_expr_inner(e, expected);
        self.types.insert(e.id(), ty.clone());
        ty
    }

    fn check_expr_inner(&mut self, e: &Expr, expected: Option<ScalarType>) -> Type {
        match e {
            Expr::IntLit { i64_suffix, .. } => {
                if *i64_suffix {
                    return Type::Scalar(ScalarType::I64);
                }
                match expected {
                    Some(t @ (ScalarType::I64 | ScalarType::F32 | ScalarType::F64)) => {
                        Type::Scalar(t)
                    }
                    _ => Type::Scalar(ScalarType::I32),
                }
            }
            Expr::FloatLit { f64_suffix, .. } => {
                if *f64_suffix {
                    return Type::Scalar(ScalarType::F64);
                }
                match expected {
                    Some(ScalarType::F64) => Type::Scalar(ScalarType::F64),
                    _ => Type::Scalar(ScalarType::F32),
                }
            }
            Expr::BoolLit { .. } => Type::Scalar(ScalarType::Bool),
            Expr::Ident { name, span, .. } => match self.resolve(name) {
                Some(Binding::Local(t)) => t,
                Some(Binding::Param(i)) => {
                    let p = &self.kernel.unwrap().params[i];
                    if !p.mode.reads() && !p.ty.is_array() {
                        self.error(
                            *span,
                            format!("parameter `{name}` is @{} and cannot be read", p.mode.keyword()),
                        );
                    }
                    p.ty.clone()
                }
                Some(Binding::Field(i)) => {
                    let f = &self.kernel.unwrap().fields[i];
                    if f.atomicity.is_atomic() {
                        self.error(
                            *span,
                            format!("atomic field `{name}` can only be written"),
                        );
                    }
                    f.ty.clone()
                }
                None => {
                    self.error(*span, format!("unknown identifier `{name}`"));
                    Type::Scalar(expected.unwrap_or(ScalarType::I32))
                }
            },
            Expr::Unary { op, operand, span, .. } => {
                let t = match op {
                    UnOp::Neg => self.check_expr(operand, expected.filter(|t| t.is_numeric())),
                    UnOp::Not => self.check_expr(operand, Some(ScalarType::Bool)),
                    UnOp::BitNot => self.check_expr(operand, expected.filter(|t| t.is_integer())),
                };
                let Some(s) = t.scalar() else {
                    self.error(*span, format!("`{}` needs a scalar operand", op.symbol()));
                    return Type::Scalar(ScalarType::I32);
                };
                let ok = match op {
                    UnOp::Neg => s.is_numeric(),
                    UnOp::Not => s == ScalarType::Bool,
                    UnOp::BitNot => s.is_integer(),
                };
                if !ok {
                    self.error(*span, format!("`{}` is not defined on {s}", op.symbol()));
                }
                Type::Scalar(s)
            }
            Expr::Binary { op, lhs, rhs, span, .. } => {
                let t = self.check_binop(*op, lhs, rhs, expected, *span);
                Type::Scalar(t)
            }
            Expr::Cast { expr, ty, span, .. } => {
                let st = self.check_expr(expr, None);
                match st.scalar() {
                    Some(s) if s.is_numeric() => {}
                    _ => self.error(*span, "cast source must be numeric"),
                }
                if !ty.is_numeric() {
                    self.error(*span, "cast target must be numeric");
                }
                Type::Scalar(*ty)
            }
            Expr::Call { callee, receiver, args, span, .. } => {
                self.check_call(callee, receiver.as_deref(), args, *span)
            }
            Expr::Index { base, index, span, .. } => {
                self.expect_scalar(index, ScalarType::I32);
                let bt = self.check_array_base(base, /*writes=*/ false, /*reads=*/ true);
                if let Expr::Ident { name, .. } = base.as_ref() {
                    if let Some((_, f)) = self.kernel_field(name) {
                        if f.atomicity.is_atomic() {
                            self.error(
                                *span,
                                format!("atomic field `{name}` can only be written"),
                            );
                        }
                    }
                }
                match bt.element() {
                    Some(el) => Type::Scalar(el),
                    None => {
                        self.error(*span, "indexed expression is not an array");
                        Type::Scalar(expected.unwrap_or(ScalarType::I32))
                    }
                }
            }
            Expr::Field { base, field, span, .. } => {
                let bt = self.check_expr(base, None);
                let Type::Composite(tname) = &bt else {
                    self.error(*span, "field access on a non-composite value");
                    return Type::Scalar(expected.unwrap_or(ScalarType::I32));
                };
                if let Expr::Ident { name, .. } = base.as_ref() {
                    if let Some((_, p)) = self.kernel_param(name) {
                        if !p.mode.reads() {
                            self.error(
                                *span,
                                format!("parameter `{name}` is @{} and cannot be read", p.mode.keyword()),
                            );
                        }
                    }
                }
                match self.env.composite_field(tname, field) {
                    Some(t) => t.clone(),
                    None => {
                        self.error(*span, format!("type `{tname}` has no field `{field}`"));
                        Type::Scalar(expected.unwrap_or(ScalarType::I32))
                    }
                }
            }
            Expr::New { type_name, args, span, .. } => {
                let Some(fields) = self.env.composites.get(type_name).cloned() else {
                    self.error(*span, format!("unknown type `{type_name}`"));
                    return Type::Composite(type_name.clone());
                };
                if fields.iter().any(|(_, t)| t.is_array()) {
                    self.error(
                        *span,
                        format!("type `{type_name}` has array fields and cannot be constructed with `new`"),
                    );
                }
                if args.len() != fields.len() {
                    self.error(
                        *span,
                        format!(
                            "`new {type_name}` takes {} argument{} (one per flattened field), found {}",
                            fields.len(),
                            if fields.len() == 1 { "" } else { "s" },
                            args.len()
                        ),
                    );
                    for a in args {
                        self.check_expr(a, None);
                    }
                } else {
                    for (a, (_, ft)) in args.iter().zip(&fields) {
                        match ft.scalar() {
                            Some(s) => self.expect_scalar(a, s),
                            None => {
                                self.check_expr(a, None);
                            }
                        }
                    }
                }
                Type::Composite(type_name.clone())
            }
            Expr::Len { array, span, .. } => {
                let t = self.check_expr(array, None);
                if t.element().is_none() {
                    self.error(*span, "`len` takes an array");
                }
                Type::Scalar(ScalarType::I32)
            }
            Expr::Builtin { .. } => Type::Scalar(ScalarType::I32),
            Expr::Intrinsic { which, args, span, .. } => {
                match which {
                    MathIntrinsic::Popc => {
                        let t = self.check_expr(&args[0], None);
                        match t.scalar() {
                            Some(s) if s.is_integer() => {}
                            _ => self.error(*span, "popc takes an integer"),
                        }
                        Type::Scalar(ScalarType::I32)
                    }
                    MathIntrinsic::Pow => {
                        let t = self.check_float_pair(&args[0], &args[1], expected, *span);
                        Type::Scalar(t)
                    }
                    _ => {
                        let want = expected.filter(|t| t.is_float());
                        let t = self.check_expr(&args[0], want.or(Some(ScalarType::F32)));
                        match t.scalar() {
                            Some(s) if s.is_float() => Type::Scalar(s),
                            _ => {
                                self.error(
                                    *span,
                                    format!("{} takes a float argument", which.name()),
                                );
                                Type::Scalar(ScalarType::F32)
                            }
                        }
                    }
                }
            }
        }
    }

    /// Unify two operands, letting an unsuffixed literal side adapt to the
    /// other side's type.
    fn unify_operands(
        &mut self,
        lhs: &Expr,
        rhs: &Expr,
        expected: Option<ScalarType>,
        span: Span,
    ) -> ScalarType {
        let (lt, rt) = if Self::adaptable_literal(lhs) && !Self::adaptable_literal(rhs) {
            let rt = self.check_expr(rhs, expected);
            let lt = self.check_expr(lhs, rt.scalar());
            (lt, rt)
        } else {
            let lt = self.check_expr(lhs, expected);
            let rt = self.check_expr(rhs, lt.scalar());
            (lt, rt)
        };
        match (lt.scalar(), rt.scalar()) {
            (Some(a), Some(b)) if a == b => a,
            (Some(a), Some(b)) => {
                self.error(span, format!("operand types differ: {a} vs {b}"));
                a
            }
            _ => {
                self.error(span, "operands must be scalar");
                ScalarType::I32
            }
        }
    }

    fn check_float_pair(
        &mut self,
        a: &Expr,
        b: &Expr,
        expected: Option<ScalarType>,
        span: Span,
    ) -> ScalarType {
        let t = self.unify_operands(a, b, expected.filter(|t| t.is_float()).or(Some(ScalarType::F32)), span);
        if !t.is_float() {
            self.error(span, "pow takes float arguments");
            return ScalarType::F32;
        }
        t
    }

    fn check_binop(
        &mut self,
        op: BinOp,
        lhs: &Expr,
        rhs: &Expr,
        expected: Option<ScalarType>,
        span: Span,
    ) -> ScalarType {
        if op.is_logical() {
            self.expect_scalar(lhs, ScalarType::Bool);
            self.expect_scalar(rhs, ScalarType::Bool);
            return ScalarType::Bool;
        }
        if op.is_comparison() {
            let t = self.unify_operands(lhs, rhs, None, span);
            if !t.is_numeric() {
                self.error(span, format!("`{}` compares numeric values", op.symbol()));
            }
            return ScalarType::Bool;
        }
        if matches!(op, BinOp::Shl | BinOp::Shr) {
            let lt = self.check_expr(lhs, expected.filter(|t| t.is_integer()));
            self.expect_scalar(rhs, ScalarType::I32);
            return match lt.scalar() {
                Some(s) if s.is_integer() => s,
                _ => {
                    self.error(span, "shift needs an integer left operand");
                    ScalarType::I32
                }
            };
        }
        let want = if op.is_bitwise() {
            expected.filter(|t| t.is_integer())
        } else {
            expected.filter(|t| t.is_numeric())
        };
        let t = self.unify_operands(lhs, rhs, want, span);
        let ok = if op.is_bitwise() { t.is_integer() } else { t.is_numeric() };
        if !ok {
            self.error(span, format!("`{}` is not defined on {t}", op.symbol()));
        }
        t
    }

    fn check_op_type(&mut self, op: BinOp, t: ScalarType, span: Span) {
        let ok = if op.is_bitwise() { t.is_integer() } else { t.is_numeric() };
        if !ok {
            self.error(span, format!("`{}` is not defined on {t}", op.symbol()));
        }
    }

    fn check_call(
        &mut self,
        callee: &str,
        receiver: Option<&Expr>,
        args: &[Expr],
        span: Span,
    ) -> Type {
        let Some(decl) = self.unit.fn_decl(callee) else {
            self.error(span, format!("unresolved callee `{callee}`"));
            for a in args {
                self.check_expr(a, None);
            }
            if let Some(r) = receiver {
                self.check_expr(r, None);
            }
            return Type::Scalar(ScalarType::I32);
        };
        let decl = decl.clone();
        // Method-style calls prepend the receiver as the first argument.
        let expected_args = decl.params.len();
        let supplied = args.len() + usize::from(receiver.is_some());
        if supplied != expected_args {
            self.error(
                span,
                format!(
                    "`{callee}` takes {expected_args} argument{}, found {supplied}",
                    if expected_args == 1 { "" } else { "s" }
                ),
            );
        }
        let mut params = decl.params.iter();
        if let Some(r) = receiver {
            let rt = self.check_expr(r, None);
            if let Some(p) = params.next() {
                if rt != p.ty {
                    self.error(
                        r.span(),
                        format!("receiver has type {rt}, `{callee}` expects {}", p.ty),
                    );
                }
            }
        }
        for a in args {
            match params.next() {
                Some(p) => match p.ty.scalar() {
                    Some(s) => self.expect_scalar(a, s),
                    None => {
                        let at = self.check_expr(a, None);
                        if at != p.ty {
                            self.error(
                                a.span(),
                                format!("argument has type {at}, expected {}", p.ty),
                            );
                        }
                    }
                },
                None => {
                    self.check_expr(a, None);
                }
            }
        }
        Type::Scalar(decl.ret)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_unit;

    fn check(src: &str) -> Vec<Diagnostic> {
        diagnostics(&parse_unit(src, "t").unwrap())
    }

    fn assert_clean(src: &str) {
        let d = check(src);
        assert!(d.is_empty(), "unexpected diagnostics: {d:?}");
    }

    fn assert_mentions(src: &str, needle: &str) {
        let d = check(src);
        assert!(
            d.iter().any(|x| x.message.contains(needle)),
            "expected a diagnostic mentioning {needle:?}, got {d:?}"
        );
    }

    #[test]
    fn vecadd_is_clean() {
        assert_clean(
            "@jacc(iterationSpace=ONE_DIMENSION)
             kernel vecadd(@read a: f32[], @read b: f32[], @write c: f32[]) {
                 for i in 0..len(c) { c[i] = a[i] + b[i]; }
             }",
        );
    }

    #[test]
    fn undeclared_identifier_named() {
        assert_mentions(
            "@jacc(iterationSpace=NONE) kernel k(@write c: i32[]) { c[0] = q; }",
            "`q`",
        );
    }

    #[test]
    fn induction_var_assignment_rejected() {
        assert_mentions(
            "@jacc(iterationSpace=NONE) kernel k(@write c: i32[]) {
                 for i in 0..4 { i = 2; }
             }",
            "induction variable",
        );
    }

    #[test]
    fn write_to_read_param_rejected() {
        assert_mentions(
            "@jacc(iterationSpace=NONE) kernel k(@read a: f32[]) { a[0] = 1.0; }",
            "cannot be written",
        );
    }

    #[test]
    fn read_of_write_param_rejected() {
        assert_mentions(
            "@jacc(iterationSpace=NONE) kernel k(@write c: f32[]) { c[0] = c[1]; }",
            "cannot be read",
        );
        // Compound assignment also reads.
        assert_mentions(
            "@jacc(iterationSpace=NONE) kernel k(@write c: f32[]) { c[0] += 1.0; }",
            "cannot be read",
        );
    }

    #[test]
    fn literal_adapts_to_context() {
        assert_clean(
            "@jacc(iterationSpace=NONE) kernel k(@write c: f64[], @write d: i64[]) {
                 c[0] = 1.5; d[0] = 3; var x: f64 = 2.0; c[1] = x * 0.5;
             }",
        );
    }

    #[test]
    fn mixed_types_need_casts() {
        assert_mentions(
            "@jacc(iterationSpace=NONE) kernel k(@read n: i32, @write c: f32[]) { c[0] = n + 1.5; }",
            "operand types differ",
        );
        assert_clean(
            "@jacc(iterationSpace=NONE) kernel k(@read n: i32, @write c: f32[]) { c[0] = n as f32 + 1.5; }",
        );
    }

    #[test]
    fn atomic_plain_assign_uses_declared_op() {
        assert_clean(
            "@jacc(iterationSpace=ONE_DIMENSION)
             kernel reduce(@read a: i32[]) {
                 @atomic(op=ADD) field result: i32;
                 for i in 0..len(a) { result = a[i]; }
             }",
        );
    }

    #[test]
    fn atomic_inference_from_compound() {
        let src = "@jacc(iterationSpace=ONE_DIMENSION)
             kernel reduce(@read a: i32[]) {
                 @atomic field result: i32;
                 for i in 0..len(a) { result ^= a[i]; }
             }";
        let unit = parse_unit(src, "t").unwrap();
        let checked = validate_unit(&unit).unwrap();
        assert_eq!(
            checked.kernels["reduce"].atomic_ops.get("result"),
            Some(&AtomicOp::Xor)
        );
    }

    #[test]
    fn atomic_combining_form_recognized() {
        assert_clean(
            "@jacc(iterationSpace=ONE_DIMENSION)
             kernel reduce(@read a: i32[]) {
                 @atomic(op=ADD) field result: i32;
                 for i in 0..len(a) { result = result + a[i]; }
             }",
        );
    }

    #[test]
    fn atomic_op_mismatch_rejected() {
        assert_mentions(
            "@jacc(iterationSpace=NONE)
             kernel k(@read a: i32[]) {
                 @atomic(op=ADD) field result: i32;
                 result -= a[0];
             }",
            "declared add but combined with sub",
        );
    }

    #[test]
    fn atomic_read_rejected() {
        assert_mentions(
            "@jacc(iterationSpace=NONE)
             kernel k(@write c: i32[]) {
                 @atomic(op=ADD) field result: i32;
                 c[0] = result;
             }",
            "can only be written",
        );
    }

    #[test]
    fn atomic_inference_without_sites_fails() {
        assert_mentions(
            "@jacc(iterationSpace=NONE) kernel k(@read n: i32) { @atomic field result: i32; }",
            "cannot infer",
        );
    }

    #[test]
    fn f32_bitwise_atomic_rejected() {
        assert_mentions(
            "@jacc(iterationSpace=NONE)
             kernel k(@read a: f32[]) {
                 @atomic field result: f32;
                 result ^= a[0];
             }",
            "not supported on f32",
        );
    }

    #[test]
    fn unresolved_callee_named() {
        assert_mentions(
            "@jacc(iterationSpace=NONE) kernel k(@write c: f32[]) { c[0] = helper(1.0); }",
            "unresolved callee `helper`",
        );
    }

    #[test]
    fn fn_must_return_on_all_paths() {
        assert_mentions(
            "fn f(x: i32) -> i32 { if (x > 0) { return 1; } }
             @jacc(iterationSpace=NONE) kernel k(@read n: i32) { var y = f(n); }",
            "does not return on all paths",
        );
    }

    #[test]
    fn method_receiver_type_checked() {
        assert_clean(
            "type Point { x: f32; y: f32; }
             fn norm2(p: Point) -> f32 { return p.x * p.x + p.y * p.y; }
             @jacc(iterationSpace=NONE) kernel k(@write c: f32[]) {
                 var p = new Point(3.0, 4.0);
                 c[0] = p.norm2();
             }",
        );
    }

    #[test]
    fn super_chain_flattens_in_order() {
        let src = "type P { x: f32; y: f32; }
             type Q : P { z: f32; }
             @jacc(iterationSpace=NONE) kernel k(@read q: Q, @write c: f32[]) { c[0] = q.x + q.z; }";
        let unit = parse_unit(src, "t").unwrap();
        let checked = validate_unit(&unit).unwrap();
        let names: Vec<&str> =
            checked.env.composites["Q"].iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, vec!["x", "y", "z"]);
    }

    #[test]
    fn cyclic_inheritance_rejected() {
        assert_mentions(
            "type A : B { x: f32; } type B : A { y: f32; }
             @jacc(iterationSpace=NONE) kernel k(@read n: i32) { }",
            "cyclic inheritance",
        );
    }

    #[test]
    fn constant_field_is_read_only() {
        assert_mentions(
            "@jacc(iterationSpace=NONE) kernel k(@read n: i32) {
                 @constant field coef: f32[4];
                 coef[0] = 1.0;
             }",
            "read-only",
        );
    }

    #[test]
    fn name_reuse_rejected() {
        assert_mentions(
            "@jacc(iterationSpace=NONE) kernel k(@read n: i32) {
                 if (n > 0) { var t = 1; } else { var t = 2; }
             }",
            "already in use",
        );
    }

    #[test]
    fn scalar_param_must_be_read() {
        assert_mentions(
            "@jacc(iterationSpace=NONE) kernel k(@write n: i32) { }",
            "must be @read",
        );
    }

    #[test]
    fn i64_index_rejected() {
        assert_mentions(
            "@jacc(iterationSpace=NONE) kernel k(@read a: f32[], @write c: f32[]) {
                 var j = 0L; c[j] = a[0];
             }",
            "expected i32",
        );
    }
}
