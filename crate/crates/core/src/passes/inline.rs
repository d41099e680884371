//! Call inlining.
//!
//! Device kernels have no call stack, so every helper-fn call is spliced
//! into the kernel body. For each call site the pass:
//!
//! 1. binds scalar arguments (receiver first) to fresh locals, preserving
//!    left-to-right evaluation;
//! 2. substitutes array and composite arguments textually (they are plain
//!    references, safe to repeat);
//! 3. instantiates the callee body with fresh locals and node ids;
//! 4. rewrites `return e` into an assignment to a fresh result local — a
//!    body whose only return is its final statement needs nothing more,
//!    while early returns get a `done` flag that guards the remainder;
//! 5. replaces the call expression with the result local.
//!
//! Calls nested inside the callee are inlined recursively; crossing the
//! depth limit (which recursion always does) is a compile error, as is a
//! call to an unknown name.

use super::{collect_names, fresh_name, Instantiator};
use crate::ast::*;
use crate::diag::{CompileError, Result, Span};
use crate::types::{ScalarType, Type};
use std::collections::{HashMap, HashSet};

pub fn inline_calls(
    unit: &SourceUnit,
    kernel: &mut KernelHir,
    ids: &mut IdGen,
    depth_limit: u32,
) -> Result<()> {
    let mut cx = Inliner {
        unit,
        ids,
        used: collect_names(kernel),
        depth_limit,
    };
    let span = kernel.span;
    let body = std::mem::replace(&mut kernel.body, Block { stmts: Vec::new(), span });
    kernel.body = cx.rewrite_block(body, 0)?;
    Ok(())
}

struct Inliner<'a> {
    unit: &'a SourceUnit,
    ids: &'a mut IdGen,
    used: HashSet<String>,
    depth_limit: u32,
}

impl<'a> Inliner<'a> {
    fn rewrite_block(&mut self, b: Block, depth: u32) -> Result<Block> {
        let mut out = Vec::with_capacity(b.stmts.len());
        for s in b.stmts {
            self.rewrite_stmt(s, &mut out, depth)?;
        }
        Ok(Block { stmts: out, span: b.span })
    }

    /// Rewrite one statement, pushing any hoisted call bodies first.
    fn rewrite_stmt(&mut self, s: Stmt, out: &mut Vec<Stmt>, depth: u32) -> Result<()> {
        match s {
            Stmt::VarDecl { id, name, declared_ty, init, span } => {
                let init = self.rewrite_expr(init, out, depth)?;
                out.push(Stmt::VarDecl { id, name, declared_ty, init, span });
            }
            Stmt::Assign { id, target, op, value, span } => {
                let target = self.rewrite_expr(target, out, depth)?;
                let value = self.rewrite_expr(value, out, depth)?;
                out.push(Stmt::Assign { id, target, op, value, span });
            }
            Stmt::For { id, var, lo, hi, step, body, span } => {
                // Bounds are evaluated once, so their calls hoist before
                // the loop; body calls expand per iteration inside it.
                let lo = self.rewrite_expr(lo, out, depth)?;
                let hi = self.rewrite_expr(hi, out, depth)?;
                let step = match step {
                    Some(e) => Some(self.rewrite_expr(e, out, depth)?),
                    None => None,
                };
                let body = self.rewrite_block(body, depth)?;
                out.push(Stmt::For { id, var, lo, hi, step, body, span });
            }
            Stmt::If { id, cond, then_blk, else_blk, span } => {
                let cond = self.rewrite_expr(cond, out, depth)?;
                let then_blk = self.rewrite_block(then_blk, depth)?;
                let else_blk = match else_blk {
                    Some(b) => Some(self.rewrite_block(b, depth)?),
                    None => None,
                };
                out.push(Stmt::If { id, cond, then_blk, else_blk, span });
            }
            Stmt::Return { id, value, span } => {
                let value = match value {
                    Some(e) => Some(self.rewrite_expr(e, out, depth)?),
                    None => None,
                };
                out.push(Stmt::Return { id, value, span });
            }
            Stmt::BoundsGuard { id, array, index, span } => {
                let array = self.rewrite_expr(array, out, depth)?;
                let index = self.rewrite_expr(index, out, depth)?;
                out.push(Stmt::BoundsGuard { id, array, index, span });
            }
            s @ Stmt::Barrier { .. } => out.push(s),
        }
        Ok(())
    }

    /// Replace every call in `e` with its inlined result local, appending
    /// the expanded bodies to `out`.
    fn rewrite_expr(&mut self, e: Expr, out: &mut Vec<Stmt>, depth: u32) -> Result<Expr> {
        Ok(match e {
            Expr::Call { callee, receiver, args, span, .. } => {
                let mut all_args = Vec::with_capacity(args.len() + 1);
                if let Some(r) = receiver {
                    all_args.push(self.rewrite_expr(*r, out, depth)?);
                }
                for a in args {
                    all_args.push(self.rewrite_expr(a, out, depth)?);
                }
                self.inline_one(&callee, all_args, span, out, depth)?
            }
            Expr::Unary { id, op, operand, span } => Expr::Unary {
                id,
                op,
                operand: Box::new(self.rewrite_expr(*operand, out, depth)?),
                span,
            },
            Expr::Binary { id, op, lhs, rhs, span } => Expr::Binary {
                id,
                op,
                lhs: Box::new(self.rewrite_expr(*lhs, out, depth)?),
                rhs: Box::new(self.rewrite_expr(*rhs, out, depth)?),
                span,
            },
            Expr::Cast { id, expr, ty, span } => Expr::Cast {
                id,
                expr: Box::new(self.rewrite_expr(*expr, out, depth)?),
                ty,
                span,
            },
            Expr::Index { id, base, index, span } => Expr::Index {
                id,
                base: Box::new(self.rewrite_expr(*base, out, depth)?),
                index: Box::new(self.rewrite_expr(*index, out, depth)?),
                span,
            },
            Expr::Field { id, base, field, span } => Expr::Field {
                id,
                base: Box::new(self.rewrite_expr(*base, out, depth)?),
                field,
                span,
            },
            Expr::New { id, type_name, args, span } => Expr::New {
                id,
                type_name,
                args: args
                    .into_iter()
                    .map(|a| self.rewrite_expr(a, out, depth))
                    .collect::<Result<_>>()?,
                span,
            },
            Expr::Len { id, array, span } => Expr::Len {
                id,
                array: Box::new(self.rewrite_expr(*array, out, depth)?),
                span,
            },
            Expr::Intrinsic { id, which, args, span } => Expr::Intrinsic {
                id,
                which,
                args: args
                    .into_iter()
                    .map(|a| self.rewrite_expr(a, out, depth))
                    .collect::<Result<_>>()?,
                span,
            },
            leaf => leaf,
        })
    }

    /// Expand a single call: bind arguments, splice the body, return the
    /// expression that replaces the call.
    fn inline_one(
        &mut self,
        callee: &str,
        args: Vec<Expr>,
        span: Span,
        out: &mut Vec<Stmt>,
        depth: u32,
    ) -> Result<Expr> {
        let Some(decl) = self.unit.fn_decl(callee) else {
            return Err(CompileError::single(span, format!("unresolved callee `{callee}`")));
        };
        if depth >= self.depth_limit {
            return Err(CompileError::single(
                span,
                format!(
                    "inlining `{callee}` exceeds the depth limit of {} (recursive calls are not supported)",
                    self.depth_limit
                ),
            ));
        }
        let decl = decl.clone();

        // Bind arguments. Scalars evaluate once into fresh locals; arrays
        // and composites substitute as references.
        let mut subst: HashMap<String, Expr> = HashMap::new();
        for (p, a) in decl.params.iter().zip(args) {
            match &p.ty {
                Type::Scalar(_) => {
                    let name = fresh_name(&format!("{}_{}", callee, p.name), &mut self.used);
                    out.push(Stmt::VarDecl {
                        id: self.ids.fresh(),
                        name: name.clone(),
                        declared_ty: Some(p.ty.clone()),
                        init: a,
                        span,
                    });
                    subst.insert(p.name.clone(), Expr::ident(self.ids, name, span));
                }
                Type::Composite(_) if matches!(a, Expr::New { .. }) => {
                    let name = fresh_name(&format!("{}_{}", callee, p.name), &mut self.used);
                    out.push(Stmt::VarDecl {
                        id: self.ids.fresh(),
                        name: name.clone(),
                        declared_ty: None,
                        init: a,
                        span,
                    });
                    subst.insert(p.name.clone(), Expr::ident(self.ids, name, span));
                }
                _ => {
                    subst.insert(p.name.clone(), a);
                }
            }
        }

        // Rename the callee's own locals to fresh names.
        let mut local_names = HashSet::new();
        collect_fn_locals(&decl.body, &mut local_names);
        for l in local_names {
            let name = fresh_name(&format!("{callee}_{l}"), &mut self.used);
            subst.insert(l.clone(), Expr::Ident { id: self.ids.fresh(), name, span });
        }

        let mut inst = Instantiator { subst, ids: self.ids };
        let body = inst.block(&decl.body);

        // Results land in a fresh zero-initialized local.
        let result = fresh_name(&format!("{callee}_ret"), &mut self.used);
        out.push(Stmt::VarDecl {
            id: self.ids.fresh(),
            name: result.clone(),
            declared_ty: Some(Type::Scalar(decl.ret)),
            init: zero_literal(self.ids, decl.ret, span),
            span,
        });

        let body = if only_trailing_return(&body) {
            rewrite_trailing_return(body, &result, self.ids)
        } else {
            let done = fresh_name(&format!("{callee}_done"), &mut self.used);
            out.push(Stmt::VarDecl {
                id: self.ids.fresh(),
                name: done.clone(),
                declared_ty: None,
                init: Expr::BoolLit { id: self.ids.fresh(), value: false, span },
                span,
            });
            rewrite_returns_flagged(body, &result, &done, self.ids)
        };

        // The spliced body may itself contain calls.
        let body = self.rewrite_block(body, depth + 1)?;
        out.extend(body.stmts);

        Ok(Expr::ident(self.ids, result, span))
    }
}

fn collect_fn_locals(b: &Block, names: &mut HashSet<String>) {
    for s in &b.stmts {
        match s {
            Stmt::VarDecl { name, .. } => {
                names.insert(name.clone());
            }
            Stmt::For { var, body, .. } => {
                names.insert(var.clone());
                collect_fn_locals(body, names);
            }
            Stmt::If { then_blk, else_blk, .. } => {
                collect_fn_locals(then_blk, names);
                if let Some(e) = else_blk {
                    collect_fn_locals(e, names);
                }
            }
            _ => {}
        }
    }
}

fn zero_literal(ids: &mut IdGen, ty: ScalarType, span: Span) -> Expr {
    match ty {
        ScalarType::F32 => Expr::FloatLit {
            id: ids.fresh(),
            text: "0.0".into(),
            value: 0.0,
            f64_suffix: false,
            span,
        },
        ScalarType::F64 => Expr::FloatLit {
            id: ids.fresh(),
            text: "0.0d".into(),
            value: 0.0,
            f64_suffix: true,
            span,
        },
        ScalarType::I64 => Expr::IntLit {
            id: ids.fresh(),
            text: "0L".into(),
            value: 0,
            i64_suffix: true,
            span,
        },
        ScalarType::Bool => Expr::BoolLit { id: ids.fresh(), value: false, span },
        ScalarType::I32 => Expr::int(ids, 0, span),
    }
}

/// True when the body's only `return` is its final top-level statement.
fn only_trailing_return(b: &Block) -> bool {
    let Some((last, rest)) = b.stmts.split_last() else { return false };
    matches!(last, Stmt::Return { .. }) && !rest.iter().any(stmt_contains_return)
}

fn stmt_contains_return(s: &Stmt) -> bool {
    match s {
        Stmt::Return { .. } => true,
        Stmt::For { body, .. } => body.stmts.iter().any(stmt_contains_return),
        Stmt::If { then_blk, else_blk, .. } => {
            then_blk.stmts.iter().any(stmt_contains_return)
                || else_blk
                    .as_ref()
                    .map_or(false, |b| b.stmts.iter().any(stmt_contains_return))
        }
        _ => false,
    }
}

/// Simple form: replace the final `return e` with `result = e`.
fn rewrite_trailing_return(mut b: Block, result: &str, ids: &mut IdGen) -> Block {
    let Some(Stmt::Return { value: Some(e), span, .. }) = b.stmts.pop() else {
        return b;
    };
    b.stmts.push(Stmt::Assign {
        id: ids.fresh(),
        target: Expr::ident(ids, result, span),
        op: None,
        value: e,
        span,
    });
    b
}

/// General form: every `return e` becomes `result = e; done = true;` and
/// whatever follows a possible return is guarded by `if (!done)`.
fn rewrite_returns_flagged(b: Block, result: &str, done: &str, ids: &mut IdGen) -> Block {
    let span = b.span;
    Block { stmts: rewrite_stmts_flagged(b.stmts, result, done, ids), span }
}

fn rewrite_stmts_flagged(
    stmts: Vec<Stmt>,
    result: &str,
    done: &str,
    ids: &mut IdGen,
) -> Vec<Stmt> {
    let mut out = Vec::with_capacity(stmts.len());
    let mut iter = stmts.into_iter();
    while let Some(s) = iter.next() {
        if !stmt_contains_return(&s) {
            out.push(s);
            continue;
        }
        match s {
            Stmt::Return { value, span, .. } => {
                if let Some(e) = value {
                    out.push(Stmt::Assign {
                        id: ids.fresh(),
                        target: Expr::ident(ids, result, span),
                        op: None,
                        value: e,
                        span,
                    });
                }
                out.push(Stmt::Assign {
                    id: ids.fresh(),
                    target: Expr::ident(ids, done, span),
                    op: None,
                    value: Expr::BoolLit { id: ids.fresh(), value: true, span },
                    span,
                });
                // Everything after an unconditional return is dead.
                return out;
            }
            Stmt::If { id, cond, then_blk, else_blk, span } => {
                out.push(Stmt::If {
                    id,
                    cond,
                    then_blk: rewrite_returns_flagged(then_blk, result, done, ids),
                    else_blk: else_blk.map(|b| rewrite_returns_flagged(b, result, done, ids)),
                    span,
                });
                guard_rest(&mut out, iter.collect(), result, done, ids, span);
                return out;
            }
            Stmt::For { id, var, lo, hi, step, body, span } => {
                // Once `done` is set, remaining iterations must do nothing,
                // so the whole rewritten body sits behind the flag.
                let rewritten = rewrite_returns_flagged(body, result, done, ids);
                let cond = Expr::Unary {
                    id: ids.fresh(),
                    op: UnOp::Not,
                    operand: Box::new(Expr::ident(ids, done, span)),
                    span,
                };
                let guarded = Block {
                    stmts: vec![Stmt::If {
                        id: ids.fresh(),
                        cond,
                        then_blk: rewritten,
                        else_blk: None,
                        span,
                    }],
                    span,
                };
                out.push(Stmt::For { id, var, lo, hi, step, body: guarded, span });
                guard_rest(&mut out, iter.collect(), result, done, ids, span);
                return out;
            }
            other => out.push(other),
        }
    }
    out
}

/// Wrap trailing statements in `if (!done) { ... }`.
fn guard_rest(
    out: &mut Vec<Stmt>,
    rest: Vec<Stmt>,
    result: &str,
    done: &str,
    ids: &mut IdGen,
    span: Span,
) {
    let rest = rewrite_stmts_flagged(rest, result, done, ids);
    if rest.is_empty() {
        return;
    }
    let cond = Expr::Unary {
        id: ids.fresh(),
        op: UnOp::Not,
        operand: Box::new(Expr::ident(ids, done, span)),
        span,
    };
    out.push(Stmt::If {
        id: ids.fresh(),
        cond,
        then_blk: Block { stmts: rest, span },
        else_blk: None,
        span,
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::{run_kernel, ArgValue, ArrayData};
    use crate::parser::parse_unit;
    use crate::pretty::pp_kernel;
    use crate::validate::validate_unit;

    fn inlined(src: &str) -> (SourceUnit, String) {
        let mut unit = parse_unit(src, "t").unwrap();
        validate_unit(&unit).unwrap();
        let mut ids = IdGen::starting_at(unit.next_id);
        let mut k = unit.kernels.remove(0);
        inline_calls(&unit, &mut k, &mut ids, 8).unwrap();
        let text = pp_kernel(&k);
        unit.next_id = ids.watermark();
        unit.kernels.push(k);
        (unit, text)
    }

    /// Inlining must not change observable behavior: run both versions.
    fn assert_same_f32(src: &str, kernel: &str, args: Vec<ArgValue>) {
        let unit = parse_unit(src, "t").unwrap();
        let checked = validate_unit(&unit).unwrap();
        let before = run_kernel(&unit, &checked, kernel, args.clone(), &[]).unwrap();

        let (unit2, _) = inlined(src);
        let checked2 = validate_unit(&unit2).unwrap();
        let after = run_kernel(&unit2, &checked2, kernel, args, &[]).unwrap();
        assert_eq!(before.args, after.args);
    }

    #[test]
    fn square_becomes_multiplication() {
        let (_, out) = inlined(
            "fn square(x: f32) -> f32 { return x * x; }
             @jacc(iterationSpace=NONE)
             kernel k(@read a: f32[], @write c: f32[]) { c[0] = square(a[0]); }",
        );
        assert!(!out.contains("square("), "call survived: {out}");
        assert!(out.contains("square_x * square_x"), "{out}");
    }

    #[test]
    fn unresolved_callee_is_an_error() {
        let src = "@jacc(iterationSpace=NONE)
             kernel k(@write c: f32[]) { c[0] = mystery(); }";
        let mut unit = parse_unit(src, "t").unwrap();
        let mut ids = IdGen::starting_at(unit.next_id);
        let mut k = unit.kernels.remove(0);
        let err = inline_calls(&unit, &mut k, &mut ids, 8).unwrap_err();
        assert!(err.to_string().contains("unresolved callee `mystery`"), "{err}");
    }

    #[test]
    fn recursion_hits_the_depth_limit() {
        let src = "fn f(x: i32) -> i32 { return f(x); }
             @jacc(iterationSpace=NONE)
             kernel k(@read n: i32, @write c: i32[]) { c[0] = f(n); }";
        let mut unit = parse_unit(src, "t").unwrap();
        let mut ids = IdGen::starting_at(unit.next_id);
        let mut k = unit.kernels.remove(0);
        let err = inline_calls(&unit, &mut k, &mut ids, 8).unwrap_err();
        assert!(err.to_string().contains("depth limit"), "{err}");
    }

    #[test]
    fn early_return_behavior_is_preserved() {
        assert_same_f32(
            "fn clamp01(x: f32) -> f32 {
                 if (x < 0.0) { return 0.0; }
                 if (x > 1.0) { return 1.0; }
                 return x;
             }
             @jacc(iterationSpace=ONE_DIMENSION)
             kernel k(@read a: f32[], @write c: f32[]) {
                 for i in 0..len(c) { c[i] = clamp01(a[i]); }
             }",
            "k",
            vec![
                ArgValue::Array(ArrayData::F32(vec![-1.0, 0.25, 2.5, 1.0])),
                ArgValue::Array(ArrayData::F32(vec![0.0; 4])),
            ],
        );
    }

    #[test]
    fn nested_helper_calls_inline_transitively() {
        let (_, out) = inlined(
            "fn sq(x: f32) -> f32 { return x * x; }
             fn quad(x: f32) -> f32 { return sq(sq(x)); }
             @jacc(iterationSpace=NONE)
             kernel k(@read a: f32[], @write c: f32[]) { c[0] = quad(a[0]); }",
        );
        assert!(!out.contains("quad("), "{out}");
        assert!(!out.contains("sq("), "{out}");
    }

    #[test]
    fn nested_calls_compute_correctly() {
        assert_same_f32(
            "fn sq(x: f32) -> f32 { return x * x; }
             fn quad(x: f32) -> f32 { return sq(sq(x)); }
             @jacc(iterationSpace=NONE)
             kernel k(@read a: f32[], @write c: f32[]) { c[0] = quad(a[0]); }",
            "k",
            vec![
                ArgValue::Array(ArrayData::F32(vec![3.0])),
                ArgValue::Array(ArrayData::F32(vec![0.0])),
            ],
        );
    }

    #[test]
    fn array_params_substitute_by_reference() {
        assert_same_f32(
            "fn first_plus_last(v: f32[]) -> f32 { return v[0] + v[len(v) - 1]; }
             @jacc(iterationSpace=NONE)
             kernel k(@read a: f32[], @write c: f32[]) { c[0] = first_plus_last(a); }",
            "k",
            vec![
                ArgValue::Array(ArrayData::F32(vec![1.5, 9.0, 4.0])),
                ArgValue::Array(ArrayData::F32(vec![0.0])),
            ],
        );
    }

    #[test]
    fn receiver_is_bound_as_first_parameter() {
        assert_same_f32(
            "type Point { x: f32; y: f32; }
             fn norm2(p: Point) -> f32 { return p.x * p.x + p.y * p.y; }
             @jacc(iterationSpace=NONE)
             kernel k(@write c: f32[]) {
                 var p = new Point(3.0, 4.0);
                 c[0] = p.norm2();
             }",
            "k",
            vec![ArgValue::Array(ArrayData::F32(vec![0.0]))],
        );
    }

    #[test]
    fn two_calls_in_one_expression_both_inline() {
        assert_same_f32(
            "fn half(x: f32) -> f32 { return x * 0.5; }
             fn twice(x: f32) -> f32 { return x * 2.0; }
             @jacc(iterationSpace=NONE)
             kernel k(@read a: f32[], @write c: f32[]) { c[0] = half(a[0]) + twice(a[1]); }",
            "k",
            vec![
                ArgValue::Array(ArrayData::F32(vec![8.0, 3.0])),
                ArgValue::Array(ArrayData::F32(vec![0.0])),
            ],
        );
    }

    #[test]
    fn return_inside_loop_is_preserved() {
        assert_same_f32(
            "fn find_neg(v: f32[]) -> f32 {
                 for i in 0..len(v) {
                     if (v[i] < 0.0) { return v[i]; }
                 }
                 return 0.0;
             }
             @jacc(iterationSpace=NONE)
             kernel k(@read a: f32[], @write c: f32[]) { c[0] = find_neg(a); }",
            "k",
            vec![
                ArgValue::Array(ArrayData::F32(vec![2.0, -7.0, -9.0, 1.0])),
                ArgValue::Array(ArrayData::F32(vec![0.0])),
            ],
        );
    }

    #[test]
    fn inlined_output_still_validates() {
        let (unit, _) = inlined(
            "fn clamp(x: i32, lo: i32, hi: i32) -> i32 {
                 if (x < lo) { return lo; }
                 if (x > hi) { return hi; }
                 return x;
             }
             @jacc(iterationSpace=ONE_DIMENSION)
             kernel k(@read a: i32[], @write c: i32[]) {
                 for i in 0..len(c) { c[i] = clamp(a[i], 0, 9); }
             }",
        );
        validate_unit(&unit).unwrap();
    }
}
