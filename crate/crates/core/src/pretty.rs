//! Canonical pretty-printer for HIR.
//!
//! Printing is the HIR dump format (`--dump-after` for HIR passes) and the
//! round-trip anchor: `parse(pp(unit))` reproduces the unit exactly, so
//! parse → print → parse is a fixpoint. Parentheses are emitted only where
//! precedence demands them; literals are reproduced from their stored source
//! spelling.
//!
//! Compiler-synthesized bounds guards print as `guard a[i];` — a dump-only
//! form the grammar does not accept.

use crate::ast::*;
use std::fmt::Write;

/// Binding powers mirroring the parser's table. Higher binds tighter.
fn bp(e: &Expr) -> u8 {
    match e {
        Expr::Binary { op, .. } => binop_bp(*op),
        Expr::Cast { .. } => 22,
        Expr::Unary { .. } => 23,
        _ => 24,
    }
}

fn binop_bp(op: BinOp) -> u8 {
    match op {
        BinOp::LogOr => 2,
        BinOp::LogAnd => 4,
        BinOp::BitOr => 6,
        BinOp::BitXor => 8,
        BinOp::BitAnd => 10,
        BinOp::Eq | BinOp::Ne => 12,
        BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 14,
        BinOp::Shl | BinOp::Shr => 16,
        BinOp::Add | BinOp::Sub => 18,
        BinOp::Mul | BinOp::Div | BinOp::Rem => 20,
    }
}

pub fn pp_unit(unit: &SourceUnit) -> String {
    let mut out = String::new();
    let mut first = true;
    for t in &unit.types {
        if !first {
            out.push('\n');
        }
        first = false;
        pp_type_decl(&mut out, t);
    }
    for f in &unit.fns {
        if !first {
            out.push('\n');
        }
        first = false;
        pp_fn_decl(&mut out, f);
    }
    for k in &unit.kernels {
        if !first {
            out.push('\n');
        }
        first = false;
        out.push_str(&pp_kernel(k));
    }
    out
}

fn pp_type_decl(out: &mut String, t: &CompositeTypeDecl) {
    match &t.super_type {
        Some(s) => writeln!(out, "type {} : {} {{", t.name, s).unwrap(),
        None => writeln!(out, "type {} {{", t.name).unwrap(),
    }
    for f in &t.fields {
        writeln!(out, "    {}: {};", f.name, f.ty).unwrap();
    }
    out.push_str("}\n");
}

fn pp_fn_decl(out: &mut String, f: &FnDecl) {
    let params: Vec<String> = f.params.iter().map(|p| format!("{}: {}", p.name, p.ty)).collect();
    writeln!(out, "fn {}({}) -> {} {{", f.name, params.join(", "), f.ret).unwrap();
    for s in &f.body.stmts {
        pp_stmt(out, s, 1);
    }
    out.push_str("}\n");
}

pub fn pp_kernel(k: &KernelHir) -> String {
    let mut out = String::new();
    let mut jacc_args = format!("iterationSpace={}", k.jacc.iteration_space.keyword());
    if k.jacc.exceptions {
        jacc_args.push_str(", exceptions=true");
    }
    writeln!(out, "@jacc({jacc_args})").unwrap();
    let params: Vec<String> = k
        .params
        .iter()
        .map(|p| {
            let ann = match (p.mode, p.cachable) {
                (m, true) => format!("@{}(cachable)", m.keyword()),
                (m, false) => format!("@{}", m.keyword()),
            };
            format!("{ann} {}: {}", p.name, p.ty)
        })
        .collect();
    writeln!(out, "kernel {}({}) {{", k.name, params.join(", ")).unwrap();
    for f in &k.fields {
        let ann = match (f.space, f.atomicity) {
            (_, FieldAtomicity::Inferred) => "@atomic ".to_string(),
            (_, FieldAtomicity::Declared(op)) => {
                format!("@atomic(op={}) ", op.keyword().to_uppercase())
            }
            (crate::types::MemSpace::Global, FieldAtomicity::NotAtomic) => String::new(),
            (crate::types::MemSpace::Constant, FieldAtomicity::NotAtomic) => "@constant ".into(),
            (space, FieldAtomicity::NotAtomic) => format!("@{} ", space.keyword()),
        };
        writeln!(out, "    {ann}field {}: {};", f.name, f.ty).unwrap();
    }
    for s in &k.body.stmts {
        pp_stmt(&mut out, s, 1);
    }
    out.push_str("}\n");
    out
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("    ");
    }
}

fn pp_block_body(out: &mut String, b: &Block, level: usize) {
    for s in &b.stmts {
        pp_stmt(out, s, level);
    }
}

fn pp_stmt(out: &mut String, s: &Stmt, level: usize) {
    indent(out, level);
    match s {
        Stmt::VarDecl { name, declared_ty, init, .. } => {
            match declared_ty {
                Some(ty) => writeln!(out, "var {name}: {ty} = {};", pp_expr(init)).unwrap(),
                None => writeln!(out, "var {name} = {};", pp_expr(init)).unwrap(),
            }
        }
        Stmt::Assign { target, op, value, .. } => match op {
            Some(op) => {
                writeln!(out, "{} {}= {};", pp_expr(target), op.symbol(), pp_expr(value)).unwrap()
            }
            None => writeln!(out, "{} = {};", pp_expr(target), pp_expr(value)).unwrap(),
        },
        Stmt::For { var, lo, hi, step, body, .. } => {
            match step {
                Some(st) => writeln!(
                    out,
                    "for {var} in {}..{} step {} {{",
                    pp_expr(lo),
                    pp_expr(hi),
                    pp_expr(st)
                )
                .unwrap(),
                None => writeln!(out, "for {var} in {}..{} {{", pp_expr(lo), pp_expr(hi)).unwrap(),
            }
            pp_block_body(out, body, level + 1);
            indent(out, level);
            out.push_str("}\n");
        }
        Stmt::If { cond, then_blk, else_blk, .. } => {
            writeln!(out, "if ({}) {{", pp_expr(cond)).unwrap();
            pp_block_body(out, then_blk, level + 1);
            indent(out, level);
            match else_blk {
                None => out.push_str("}\n"),
                Some(e) => {
                    // An else block holding exactly one `if` prints as `else if`.
                    if e.stmts.len() == 1 {
                        if let Stmt::If { .. } = &e.stmts[0] {
                            out.push_str("} else ");
                            let mut chained = String::new();
                            pp_stmt(&mut chained, &e.stmts[0], level);
                            out.push_str(chained.trim_start());
                            return;
                        }
                    }
                    out.push_str("} else {\n");
                    pp_block_body(out, e, level + 1);
                    indent(out, level);
                    out.push_str("}\n");
                }
            }
        }
        Stmt::Barrier { .. } => out.push_str("barrier();\n"),
        Stmt::Return { value, .. } => match value {
            Some(v) => writeln!(out, "return {};", pp_expr(v)).unwrap(),
            None => out.push_str("return;\n"),
        },
        Stmt::BoundsGuard { array, index, .. } => {
            writeln!(out, "guard {}[{}];", pp_expr(array), pp_expr(index)).unwrap()
        }
    }
}

pub fn pp_expr(e: &Expr) -> String {
    let mut s = String::new();
    write_expr(&mut s, e);
    s
}

fn write_expr(out: &mut String, e: &Expr) {
    match e {
        Expr::IntLit { text, .. } | Expr::FloatLit { text, .. } => out.push_str(text),
        Expr::BoolLit { value, .. } => out.push_str(if *value { "true" } else { "false" }),
        Expr::Ident { name, .. } => out.push_str(name),
        Expr::Unary { op, operand, .. } => {
            out.push_str(op.symbol());
            write_child(out, operand, 23);
        }
        Expr::Binary { op, lhs, rhs, .. } => {
            let my_bp = binop_bp(*op);
            write_child(out, lhs, my_bp);
            write!(out, " {} ", op.symbol()).unwrap();
            // Right operand of a left-associative operator needs parens at
            // equal precedence.
            write_child(out, rhs, my_bp + 1);
        }
        Expr::Cast { expr, ty, .. } => {
            write_child(out, expr, 22);
            write!(out, " as {ty}").unwrap();
        }
        Expr::Call { callee, receiver, args, .. } => {
            if let Some(r) = receiver {
                write_child(out, r, 24);
                out.push('.');
            }
            out.push_str(callee);
            write_args(out, args);
        }
        Expr::Index { base, index, .. } => {
            write_child(out, base, 24);
            out.push('[');
            write_expr(out, index);
            out.push(']');
        }
        Expr::Field { base, field, .. } => {
            write_child(out, base, 24);
            out.push('.');
            out.push_str(field);
        }
        Expr::New { type_name, args, .. } => {
            write!(out, "new {type_name}").unwrap();
            write_args(out, args);
        }
        Expr::Len { array, .. } => {
            out.push_str("len(");
            write_expr(out, array);
            out.push(')');
        }
        Expr::Builtin { which, dim, .. } => {
            write!(out, "{}({dim})", which.name()).unwrap();
        }
        Expr::Intrinsic { which, args, .. } => {
            out.push_str(which.name());
            write_args(out, args);
        }
    }
}

fn write_args(out: &mut String, args: &[Expr]) {
    out.push('(');
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write_expr(out, a);
    }
    out.push(')');
}

/// Write `child`, parenthesizing when its precedence is below `min_bp`.
fn write_child(out: &mut String, child: &Expr, min_bp: u8) {
    if bp(child) < min_bp {
        out.push('(');
        write_expr(out, child);
        out.push(')');
    } else {
        write_expr(out, child);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_unit;

    fn fixpoint(src: &str) {
        let once = pp_unit(&parse_unit(src, "t").unwrap());
        let twice = pp_unit(&parse_unit(&once, "t").unwrap());
        assert_eq!(once, twice, "printer is not a parse fixpoint for:\n{src}");
    }

    #[test]
    fn roundtrip_vecadd() {
        fixpoint(
            "@jacc(iterationSpace=ONE_DIMENSION)\nkernel vecadd(@read a: f32[], @read b: f32[], @write c: f32[]) {\nfor i in 0..len(c) { c[i] = a[i] + b[i]; } }",
        );
    }

    #[test]
    fn roundtrip_precedence_and_parens() {
        fixpoint(
            "@jacc(iterationSpace=NONE) kernel k(@read n: i32, @write c: i32[]) {\n c[0] = (1 + 2) * 3; c[1] = 1 + 2 * 3; c[2] = -(n + 1); c[3] = n % (2 << 1) & 7; }",
        );
    }

    #[test]
    fn needed_parens_survive() {
        let src = "@jacc(iterationSpace=NONE) kernel k(@write c: i32[]) { c[0] = (1 + 2) * 3; }";
        let printed = pp_unit(&parse_unit(src, "t").unwrap());
        assert!(printed.contains("(1 + 2) * 3"), "{printed}");
    }

    #[test]
    fn redundant_parens_dropped() {
        let src = "@jacc(iterationSpace=NONE) kernel k(@write c: i32[]) { c[0] = (1 * 2) + 3; }";
        let printed = pp_unit(&parse_unit(src, "t").unwrap());
        assert!(printed.contains("1 * 2 + 3"), "{printed}");
    }

    #[test]
    fn roundtrip_full_feature_kernel() {
        fixpoint(
            "type P { x: f32; y: f32; }\n\
             type Q : P { z: f32; }\n\
             fn sq(v: f32) -> f32 { return v * v; }\n\
             @jacc(iterationSpace=TWO_DIMENSION, exceptions=true)\n\
             kernel k(@read(cachable) a: f32[], @readwrite b: f32[], @read n: i32) {\n\
             @atomic(op=ADD) field total: f32;\n\
             @shared field tile: f32[16];\n\
             @constant field coef: f32[4];\n\
             field plain: i64;\n\
             for i in 0..n {\n for j in 0..n step 2 {\n\
               var q = new Q(1.0, 2.0, 3.0);\n\
               var v: f32 = q.sq();\n\
               if (v < 0.5) { b[i] = sqrt(a[j]) + sin(v); } else if (v < 2.0) { b[i] = pow(v, 2.0); } else { b[i] = v as f32; }\n\
               total = v; b[j] += coef[0] * 1.5e-2; barrier();\n\
             } }\n\
             if (len(b) > 0) { b[0] = global_id(0) as f32 + thread_id(1) as f32; }\n\
             return;\n}",
        );
    }

    #[test]
    fn roundtrip_compound_and_literals() {
        fixpoint(
            "@jacc(iterationSpace=NONE) kernel k(@readwrite c: i64[]) {\n c[0] <<= 2; c[1] ^= 0xFF; c[2] += 7L; c[3] = ~c[3]; }",
        );
    }

    #[test]
    fn literal_spelling_preserved() {
        let src = "@jacc(iterationSpace=NONE) kernel k(@write c: f32[]) { c[0] = 1.50; c[1] = 2e3; }";
        let printed = pp_unit(&parse_unit(src, "t").unwrap());
        assert!(printed.contains("1.50"), "{printed}");
        assert!(printed.contains("2e3"), "{printed}");
    }
}
