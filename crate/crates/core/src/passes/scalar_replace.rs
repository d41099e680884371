//! Scalar replacement of locally allocated objects.
//!
//! Device kernels cannot allocate, so a `var p = new T(...)` must not
//! survive to lowering. After inlining, a composite local's only possible
//! uses are `p.field` reads and writes, which means the object can dissolve
//! into one scalar local per flattened field:
//!
//! ```text
//! var p = new Point(3.0, 4.0);      var p_x: f32 = 3.0;
//! c[0] = p.x * p.y;            =>   var p_y: f32 = 4.0;
//!                                   c[0] = p_x * p_y;
//! ```
//!
//! Any `new` that cannot be dissolved this way — or that appears anywhere
//! other than a local initializer — is a compile error: dynamic object
//! allocation is not supported on the device.

use super::{collect_names, fresh_name};
use crate::ast::*;
use crate::diag::{CompileError, Result};
use crate::types::Type;
use crate::validate::UnitEnv;
use std::collections::{HashMap, HashSet};

pub fn scalar_replace(env: &UnitEnv, kernel: &mut KernelHir, ids: &mut IdGen) -> Result<()> {
    let mut used = collect_names(kernel);
    let span = kernel.span;
    let mut body = std::mem::replace(&mut kernel.body, Block { stmts: Vec::new(), span });
    // map: composite local -> (field name -> scalar local)
    let mut replaced: HashMap<String, HashMap<String, String>> = HashMap::new();
    rewrite_block(&mut body, env, ids, &mut used, &mut replaced)?;
    ensure_no_news(&body)?;
    kernel.body = body;
    Ok(())
}

fn rewrite_block(
    b: &mut Block,
    env: &UnitEnv,
    ids: &mut IdGen,
    used: &mut HashSet<String>,
    replaced: &mut HashMap<String, HashMap<String, String>>,
) -> Result<()> {
    let old = std::mem::take(&mut b.stmts);
    let mut out = Vec::with_capacity(old.len());
    for mut s in old {
        match s {
            Stmt::VarDecl { name, init: Expr::New { type_name, args, span, .. }, .. } => {
                let Some(fields) = env.composites.get(&type_name) else {
                    return Err(CompileError::single(span, format!("unknown type `{type_name}`")));
                };
                if args.len() != fields.len() {
                    return Err(CompileError::single(
                        span,
                        format!("`new {type_name}` argument count does not match its fields"),
                    ));
                }
                let mut field_map = HashMap::new();
                for ((fname, fty), mut arg) in fields.clone().into_iter().zip(args) {
                    let local = fresh_name(&format!("{name}_{fname}"), used);
                    rewrite_expr(&mut arg, replaced)?;
                    let Type::Scalar(_) = fty else {
                        return Err(CompileError::single(
                            span,
                            "dynamic object allocation is not supported",
                        ));
                    };
                    out.push(Stmt::VarDecl {
                        id: ids.fresh(),
                        name: local.clone(),
                        declared_ty: Some(fty),
                        init: arg,
                        span,
                    });
                    field_map.insert(fname, local);
                }
                replaced.insert(name, field_map);
                continue;
            }
            Stmt::VarDecl { ref mut init, .. } => rewrite_expr(init, replaced)?,
            Stmt::Assign { ref mut target, ref mut value, .. } => {
                rewrite_expr(target, replaced)?;
                rewrite_expr(value, replaced)?;
            }
            Stmt::For { ref mut lo, ref mut hi, ref mut step, ref mut body, .. } => {
                rewrite_expr(lo, replaced)?;
                rewrite_expr(hi, replaced)?;
                if let Some(e) = step {
                    rewrite_expr(e, replaced)?;
                }
                rewrite_block(body, env, ids, used, replaced)?;
            }
            Stmt::If { ref mut cond, ref mut then_blk, ref mut else_blk, .. } => {
                rewrite_expr(cond, replaced)?;
                rewrite_block(then_blk, env, ids, used, replaced)?;
                if let Some(e) = else_blk {
                    rewrite_block(e, env, ids, used, replaced)?;
                }
            }
            Stmt::Return { value: Some(ref mut e), .. } => rewrite_expr(e, replaced)?,
            Stmt::BoundsGuard { ref mut array, ref mut index, .. } => {
                rewrite_expr(array, replaced)?;
                rewrite_expr(index, replaced)?;
            }
            _ => {}
        }
        out.push(s);
    }
    b.stmts = out;
    Ok(())
}

/// Replace `p.field` with the scalar local standing in for it. A replaced
/// object used any other way is an allocation that escapes.
fn rewrite_expr(
    e: &mut Expr,
    replaced: &HashMap<String, HashMap<String, String>>,
) -> Result<()> {
    match e {
        Expr::Field { base, field, span, id } => {
            if let Expr::Ident { name, .. } = base.as_ref() {
                if let Some(fields) = replaced.get(name) {
                    let Some(local) = fields.get(field) else {
                        return Err(CompileError::single(
                            *span,
                            format!("type of `{name}` has no field `{field}`"),
                        ));
                    };
                    *e = Expr::Ident { id: *id, name: local.clone(), span: *span };
                    return Ok(());
                }
            }
            rewrite_expr(base, replaced)
        }
        Expr::Ident { name, span, .. } => {
            if replaced.contains_key(name) {
                return Err(CompileError::single(
                    *span,
                    "dynamic object allocation is not supported",
                ));
            }
            Ok(())
        }
        Expr::Unary { operand, .. } => rewrite_expr(operand, replaced),
        Expr::Binary { lhs, rhs, .. } => {
            rewrite_expr(lhs, replaced)?;
            rewrite_expr(rhs, replaced)
        }
        Expr::Cast { expr, .. } => rewrite_expr(expr, replaced),
        Expr::Call { receiver, args, .. } => {
            if let Some(r) = receiver {
                rewrite_expr(r, replaced)?;
            }
            args.iter_mut().try_for_each(|a| rewrite_expr(a, replaced))
        }
        Expr::Index { base, index, .. } => {
            rewrite_expr(base, replaced)?;
            rewrite_expr(index, replaced)
        }
        Expr::New { args, .. } => args.iter_mut().try_for_each(|a| rewrite_expr(a, replaced)),
        Expr::Len { array, .. } => rewrite_expr(array, replaced),
        Expr::Intrinsic { args, .. } => {
            args.iter_mut().try_for_each(|a| rewrite_expr(a, replaced))
        }
        _ => Ok(()),
    }
}

/// After replacement no `new` may remain anywhere in the body.
fn ensure_no_news(b: &Block) -> Result<()> {
    for s in &b.stmts {
        match s {
            Stmt::VarDecl { init, .. } => expr_no_news(init)?,
            Stmt::Assign { target, value, .. } => {
                expr_no_news(target)?;
                expr_no_news(value)?;
            }
            Stmt::For { lo, hi, step, body, .. } => {
                expr_no_news(lo)?;
                expr_no_news(hi)?;
                if let Some(e) = step {
                    expr_no_news(e)?;
                }
                ensure_no_news(body)?;
            }
            Stmt::If { cond, then_blk, else_blk, .. } => {
                expr_no_news(cond)?;
                ensure_no_news(then_blk)?;
                if let Some(e) = else_blk {
                    ensure_no_news(e)?;
                }
            }
            Stmt::Return { value: Some(e), .. } => expr_no_news(e)?,
            Stmt::BoundsGuard { array, index, .. } => {
                expr_no_news(array)?;
                expr_no_news(index)?;
            }
            _ => {}
        }
    }
    Ok(())
}

fn expr_no_news(e: &Expr) -> Result<()> {
    match e {
        Expr::New { span, .. } => Err(CompileError::single(
            *span,
            "dynamic object allocation is not supported",
        )),
        Expr::Unary { operand, .. } => expr_no_news(operand),
        Expr::Binary { lhs, rhs, .. } => {
            expr_no_news(lhs)?;
            expr_no_news(rhs)
        }
        Expr::Cast { expr, .. } => expr_no_news(expr),
        Expr::Call { receiver, args, .. } => {
            if let Some(r) = receiver {
                expr_no_news(r)?;
            }
            args.iter().try_for_each(expr_no_news)
        }
        Expr::Index { base, index, .. } => {
            expr_no_news(base)?;
            expr_no_news(index)
        }
        Expr::Field { base, .. } => expr_no_news(base),
        Expr::Len { array, .. } => expr_no_news(array),
        Expr::Intrinsic { args, .. } => args.iter().try_for_each(expr_no_news),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_unit;
    use crate::passes::inline_calls;
    use crate::pretty::pp_kernel;
    use crate::validate::validate_unit;

    fn replaced(src: &str) -> String {
        let mut unit = parse_unit(src, "t").unwrap();
        let checked = validate_unit(&unit).unwrap();
        let mut ids = IdGen::starting_at(unit.next_id);
        let mut k = unit.kernels.remove(0);
        inline_calls(&unit, &mut k, &mut ids, 8).unwrap();
        scalar_replace(&checked.env, &mut k, &mut ids).unwrap();
        pp_kernel(&k)
    }

    #[test]
    fn new_becomes_per_field_locals() {
        let out = replaced(
            "type Point { x: f32; y: f32; }
             @jacc(iterationSpace=NONE)
             kernel k(@write c: f32[]) {
                 var p = new Point(3.0, 4.0);
                 c[0] = p.x * p.y;
             }",
        );
        assert!(!out.contains("new "), "{out}");
        assert!(out.contains("var p_x: f32 = 3.0;"), "{out}");
        assert!(out.contains("var p_y: f32 = 4.0;"), "{out}");
        assert!(out.contains("c[0] = p_x * p_y;"), "{out}");
    }

    #[test]
    fn field_writes_become_local_assignments() {
        let out = replaced(
            "type Acc { total: f32; }
             @jacc(iterationSpace=NONE)
             kernel k(@read a: f32[], @write c: f32[]) {
                 var acc = new Acc(0.0);
                 for i in 0..len(a) { acc.total += a[i]; }
                 c[0] = acc.total;
             }",
        );
        assert!(out.contains("acc_total += a[i];"), "{out}");
        assert!(out.contains("c[0] = acc_total;"), "{out}");
    }

    #[test]
    fn method_receiver_objects_dissolve_after_inline() {
        let out = replaced(
            "type Point { x: f32; y: f32; }
             fn norm2(p: Point) -> f32 { return p.x * p.x + p.y * p.y; }
             @jacc(iterationSpace=NONE)
             kernel k(@write c: f32[]) {
                 var p = new Point(3.0, 4.0);
                 c[0] = p.norm2();
             }",
        );
        assert!(!out.contains("new "), "{out}");
        assert!(!out.contains("norm2("), "{out}");
    }

    #[test]
    fn super_chain_fields_all_materialize() {
        let out = replaced(
            "type P { x: f32; }
             type Q : P { y: f32; }
             @jacc(iterationSpace=NONE)
             kernel k(@write c: f32[]) {
                 var q = new Q(1.0, 2.0);
                 c[0] = q.x + q.y;
             }",
        );
        assert!(out.contains("var q_x: f32 = 1.0;"), "{out}");
        assert!(out.contains("var q_y: f32 = 2.0;"), "{out}");
    }
}
