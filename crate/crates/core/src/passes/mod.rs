//! HIR-to-HIR passes, run in a fixed order before lowering:
//!
//! 1. [`parallelize`] — rewrite the kernel's parallel loop nest into
//!    grid-stride form over the launch's global ids;
//! 2. [`inline_calls`] — splice every helper-fn call into the kernel body;
//! 3. [`scalar_replace`] — dissolve non-escaping `new` objects into one
//!    local per field (device kernels cannot allocate);
//! 4. [`insert_bounds_guards`] — make array bounds checks explicit so the
//!    backend lowers them to trapping compares.
//!
//! Every pass keeps the HIR well-typed; the pipeline re-runs validation
//! afterwards to rebuild the side tables for lowering.

mod bounds;
mod inline;
mod parallelize;
mod scalar_replace;

pub use bounds::insert_bounds_guards;
pub use inline::inline_calls;
pub use parallelize::parallelize;
pub use scalar_replace::scalar_replace;

use crate::ast::*;
use std::collections::{HashMap, HashSet};

/// All identifiers a kernel already uses, so synthesized names never clash.
pub(crate) fn collect_names(k: &KernelHir) -> HashSet<String> {
    let mut names: HashSet<String> = HashSet::new();
    for p in &k.params {
        names.insert(p.name.clone());
    }
    for f in &k.fields {
        names.insert(f.name.clone());
    }
    collect_block_names(&k.body, &mut names);
    names
}

fn collect_block_names(b: &Block, names: &mut HashSet<String>) {
    for s in &b.stmts {
        match s {
            Stmt::VarDecl { name, .. } => {
                names.insert(name.clone());
            }
            Stmt::For { var, body, .. } => {
                names.insert(var.clone());
                collect_block_names(body, names);
            }
            Stmt::If { then_blk, else_blk, .. } => {
                collect_block_names(then_blk, names);
                if let Some(e) = else_blk {
                    collect_block_names(e, names);
                }
            }
            _ => {}
        }
    }
}

/// Mint a name derived from `base` that no one uses yet.
pub(crate) fn fresh_name(base: &str, used: &mut HashSet<String>) -> String {
    if used.insert(base.to_string()) {
        return base.to_string();
    }
    for n in 0u32.. {
        let candidate = format!("{base}_{n}");
        if used.insert(candidate.clone()) {
            return candidate;
        }
    }
    unreachable!()
}

/// Deep-clones HIR while reminting every node id, renaming identifiers, and
/// substituting expressions for free names. Used to instantiate fn bodies at
/// call sites.
pub(crate) struct Instantiator<'a> {
    /// Free identifier → replacement expression (cloned per occurrence).
    pub subst: HashMap<String, Expr>,
    pub ids: &'a mut IdGen,
}

impl<'a> Instantiator<'a> {
    pub fn block(&mut self, b: &Block) -> Block {
        Block {
            stmts: b.stmts.iter().map(|s| self.stmt(s)).collect(),
            span: b.span,
        }
    }

    fn stmt(&mut self, s: &Stmt) -> Stmt {
        match s {
            Stmt::VarDecl { name, declared_ty, init, span, .. } => Stmt::VarDecl {
                id: self.ids.fresh(),
                name: self.rename(name),
                declared_ty: declared_ty.clone(),
                init: self.expr(init),
                span: *span,
            },
            Stmt::Assign { target, op, value, span, .. } => Stmt::Assign {
                id: self.ids.fresh(),
                target: self.expr(target),
                op: *op,
                value: self.expr(value),
                span: *span,
            },
            Stmt::For { var, lo, hi, step, body, span, .. } => Stmt::For {
                id: self.ids.fresh(),
                var: self.rename(var),
                lo: self.expr(lo),
                hi: self.expr(hi),
                step: step.as_ref().map(|e| self.expr(e)),
                body: self.block(body),
                span: *span,
            },
            Stmt::If { cond, then_blk, else_blk, span, .. } => Stmt::If {
                id: self.ids.fresh(),
                cond: self.expr(cond),
                then_blk: self.block(then_blk),
                else_blk: else_blk.as_ref().map(|b| self.block(b)),
                span: *span,
            },
            Stmt::Barrier { span, .. } => Stmt::Barrier { id: self.ids.fresh(), span: *span },
            Stmt::Return { value, span, .. } => Stmt::Return {
                id: self.ids.fresh(),
                value: value.as_ref().map(|e| self.expr(e)),
                span: *span,
            },
            Stmt::BoundsGuard { array, index, span, .. } => Stmt::BoundsGuard {
                id: self.ids.fresh(),
                array: self.expr(array),
                index: self.expr(index),
                span: *span,
            },
        }
    }

    /// A substituted name maps to its replacement expression's identifier
    /// when that replacement is a plain rename; otherwise names pass through.
    fn rename(&self, name: &str) -> String {
        match self.subst.get(name) {
            Some(Expr::Ident { name: n, .. }) => n.clone(),
            _ => name.to_string(),
        }
    }

    pub fn expr(&mut self, e: &Expr) -> Expr {
        match e {
            Expr::Ident { name, span, .. } => {
                if let Some(replacement) = self.subst.get(name) {
                    return remint(replacement.clone(), self.ids);
                }
                Expr::Ident { id: self.ids.fresh(), name: name.clone(), span: *span }
            }
            Expr::IntLit { text, value, i64_suffix, span, .. } => Expr::IntLit {
                id: self.ids.fresh(),
                text: text.clone(),
                value: *value,
                i64_suffix: *i64_suffix,
                span: *span,
            },
            Expr::FloatLit { text, value, f64_suffix, span, .. } => Expr::FloatLit {
                id: self.ids.fresh(),
                text: text.clone(),
                value: *value,
                f64_suffix: *f64_suffix,
                span: *span,
            },
            Expr::BoolLit { value, span, .. } => {
                Expr::BoolLit { id: self.ids.fresh(), value: *value, span: *span }
            }
            Expr::Unary { op, operand, span, .. } => Expr::Unary {
                id: self.ids.fresh(),
                op: *op,
                operand: Box::new(self.expr(operand)),
                span: *span,
            },
            Expr::Binary { op, lhs, rhs, span, .. } => Expr::Binary {
                id: self.ids.fresh(),
                op: *op,
                lhs: Box::new(self.expr(lhs)),
                rhs: Box::new(self.expr(rhs)),
                span: *span,
            },
            Expr::Cast { expr, ty, span, .. } => Expr::Cast {
                id: self.ids.fresh(),
                expr: Box::new(self.expr(expr)),
                ty: *ty,
                span: *span,
            },
            Expr::Call { callee, receiver, args, span, .. } => Expr::Call {
                id: self.ids.fresh(),
                callee: callee.clone(),
                receiver: receiver.as_ref().map(|r| Box::new(self.expr(r))),
                args: args.iter().map(|a| self.expr(a)).collect(),
                span: *span,
            },
            Expr::Index { base, index, span, .. } => Expr::Index {
                id: self.ids.fresh(),
                base: Box::new(self.expr(base)),
                index: Box::new(self.expr(index)),
                span: *span,
            },
            Expr::Field { base, field, span, .. } => Expr::Field {
                id: self.ids.fresh(),
                base: Box::new(self.expr(base)),
                field: field.clone(),
                span: *span,
            },
            Expr::New { type_name, args, span, .. } => Expr::New {
                id: self.ids.fresh(),
                type_name: type_name.clone(),
                args: args.iter().map(|a| self.expr(a)).collect(),
                span: *span,
            },
            Expr::Len { array, span, .. } => Expr::Len {
                id: self.ids.fresh(),
                array: Box::new(self.expr(array)),
                span: *span,
            },
            Expr::Builtin { which, dim, span, .. } => {
                Expr::Builtin { id: self.ids.fresh(), which: *which, dim: *dim, span: *span }
            }
            Expr::Intrinsic { which, args, span, .. } => Expr::Intrinsic {
                id: self.ids.fresh(),
                which: *which,
                args: args.iter().map(|a| self.expr(a)).collect(),
                span: *span,
            },
        }
    }
}

/// Clone an expression with fresh node ids and no substitution.
pub(crate) fn remint(e: Expr, ids: &mut IdGen) -> Expr {
    let mut inst = Instantiator { subst: HashMap::new(), ids };
    inst.expr(&e)
}
