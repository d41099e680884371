//! Explicit bounds guards for array accesses.
//!
//! Java's implicit `ArrayIndexOutOfBoundsException` becomes an explicit
//! `guard a[i];` statement ahead of each statement that indexes an array.
//! Lowering turns each guard into a compare-and-trap; a failed guard aborts
//! the launch with a bounds trap naming the array.
//!
//! Placement: guards go immediately before the statement containing the
//! access, inside the innermost block — so an access in a loop body or an
//! `if` arm only traps when that statement would actually execute. Since
//! `&&`/`||` are strict, every operand of an executing statement is
//! evaluated, which makes per-statement hoisting trap-equivalent.
//!
//! Kernels compiled with `exceptions=false` skip this pass.

use crate::ast::*;
use crate::diag::Result;
use crate::pretty::pp_expr;

pub fn insert_bounds_guards(kernel: &mut KernelHir, ids: &mut IdGen) -> Result<()> {
    let span = kernel.span;
    let mut body = std::mem::replace(&mut kernel.body, Block { stmts: Vec::new(), span });
    guard_block(&mut body, ids);
    kernel.body = body;
    Ok(())
}

fn guard_block(b: &mut Block, ids: &mut IdGen) {
    let old = std::mem::take(&mut b.stmts);
    let mut out = Vec::with_capacity(old.len());
    for mut s in old {
        // Guards for the expressions this statement evaluates directly.
        let mut guards = Vec::new();
        let mut seen = Vec::new();
        match &mut s {
            Stmt::VarDecl { init, .. } => collect(init, ids, &mut guards, &mut seen),
            Stmt::Assign { target, value, .. } => {
                collect(target, ids, &mut guards, &mut seen);
                collect(value, ids, &mut guards, &mut seen);
            }
            Stmt::For { lo, hi, step, body, .. } => {
                collect(lo, ids, &mut guards, &mut seen);
                collect(hi, ids, &mut guards, &mut seen);
                if let Some(e) = step {
                    collect(e, ids, &mut guards, &mut seen);
                }
                guard_block(body, ids);
            }
            Stmt::If { cond, then_blk, else_blk, .. } => {
                collect(cond, ids, &mut guards, &mut seen);
                guard_block(then_blk, ids);
                if let Some(e) = else_blk {
                    guard_block(e, ids);
                }
            }
            Stmt::Return { value: Some(e), .. } => collect(e, ids, &mut guards, &mut seen),
            _ => {}
        }
        out.extend(guards);
        out.push(s);
    }
    b.stmts = out;
}

/// Find every `base[index]` in `e` and synthesize its guard, deduplicating
/// syntactically identical accesses within one statement.
fn collect(e: &Expr, ids: &mut IdGen, guards: &mut Vec<Stmt>, seen: &mut Vec<String>) {
    match e {
        Expr::Index { base, index, span, .. } => {
            // Inner accesses guard first: bins[values[i]] checks values[i]
            // before using it as an index.
            collect(base, ids, guards, seen);
            collect(index, ids, guards, seen);
            let key = format!("{}[{}]", pp_expr(base), pp_expr(index));
            if !seen.contains(&key) {
                seen.push(key);
                let mut inst =
                    super::Instantiator { subst: Default::default(), ids };
                guards.push(Stmt::BoundsGuard {
                    id: inst.ids.fresh(),
                    array: inst.expr(base),
                    index: inst.expr(index),
                    span: *span,
                });
            }
        }
        Expr::Unary { operand, .. } => collect(operand, ids, guards, seen),
        Expr::Binary { lhs, rhs, .. } => {
            collect(lhs, ids, guards, seen);
            collect(rhs, ids, guards, seen);
        }
        Expr::Cast { expr, .. } => collect(expr, ids, guards, seen),
        Expr::Call { receiver, args, .. } => {
            if let Some(r) = receiver {
                collect(r, ids, guards, seen);
            }
            for a in args {
                collect(a, ids, guards, seen);
            }
        }
        Expr::Field { base, .. } => collect(base, ids, guards, seen),
        Expr::New { args, .. } => {
            for a in args {
                collect(a, ids, guards, seen);
            }
        }
        Expr::Len { .. } => {} // len never dereferences
        Expr::Intrinsic { args, .. } => {
            for a in args {
                collect(a, ids, guards, seen);
            }
        }
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_unit;
    use crate::pretty::pp_kernel;

    fn guarded(src: &str) -> String {
        let mut unit = parse_unit(src, "t").unwrap();
        let mut ids = IdGen::starting_at(unit.next_id);
        let mut k = unit.kernels.remove(0);
        insert_bounds_guards(&mut k, &mut ids).unwrap();
        pp_kernel(&k)
    }

    #[test]
    fn each_distinct_access_gets_one_guard() {
        let out = guarded(
            "@jacc(iterationSpace=NONE)
             kernel k(@read a: f32[], @read b: f32[], @write c: f32[]) {
                 for i in 0..len(c) { c[i] = a[i] + b[i]; }
             }",
        );
        assert_eq!(out.matches("guard ").count(), 3, "{out}");
        assert!(out.contains("guard c[i];"), "{out}");
        assert!(out.contains("guard a[i];"), "{out}");
        assert!(out.contains("guard b[i];"), "{out}");
    }

    #[test]
    fn repeated_access_is_guarded_once() {
        let out = guarded(
            "@jacc(iterationSpace=NONE)
             kernel k(@readwrite c: i32[]) { c[0] += c[0] + c[1]; }",
        );
        assert_eq!(out.matches("guard c[0];").count(), 1, "{out}");
        assert_eq!(out.matches("guard c[1];").count(), 1, "{out}");
    }

    #[test]
    fn nested_index_guards_inner_first() {
        let out = guarded(
            "@jacc(iterationSpace=NONE)
             kernel k(@read values: i32[], @write c: i32[]) {
                 c[values[0]] = 1;
             }",
        );
        let inner = out.find("guard values[0];").expect("inner guard");
        let outer = out.find("guard c[values[0]];").expect("outer guard");
        assert!(inner < outer, "{out}");
    }

    #[test]
    fn guards_stay_inside_their_branch() {
        let out = guarded(
            "@jacc(iterationSpace=NONE)
             kernel k(@read n: i32, @write c: i32[]) {
                 if (n > 0) { c[n] = 1; } else { c[0] = 2; }
             }",
        );
        // The guard must follow the `if`, not precede it.
        let cond_pos = out.find("if (n > 0)").unwrap();
        let guard_pos = out.find("guard c[n];").unwrap();
        assert!(guard_pos > cond_pos, "{out}");
    }

    #[test]
    fn loop_bound_accesses_guard_before_the_loop() {
        let out = guarded(
            "@jacc(iterationSpace=NONE)
             kernel k(@read offs: i32[], @write c: i32[]) {
                 for i in offs[0]..offs[1] { c[i] = i; }
             }",
        );
        let guard0 = out.find("guard offs[0];").unwrap();
        let for_pos = out.find("for i in").unwrap();
        assert!(guard0 < for_pos, "{out}");
    }
}
