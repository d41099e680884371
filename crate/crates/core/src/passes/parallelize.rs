//! Grid-stride parallelization of the kernel's outer loop nest.
//!
//! With `iterationSpace=ONE_DIMENSION`, the first top-level loop
//!
//! ```text
//! for i in lo..hi step s { ... }
//! ```
//!
//! becomes
//!
//! ```text
//! for i in lo + global_id(0) * s .. hi step s * global_size(0) { ... }
//! ```
//!
//! so each thread strides through its share of the iteration space and the
//! loop stays correct for any launch size. TWO/THREE_DIMENSION map the next
//! nested loops to dimensions 1 and 2 the same way. Identity terms
//! (`lo = 0`, `s = 1`) are folded away on the spot so dumps stay readable.

use crate::ast::*;
use crate::diag::{CompileError, Result};
use crate::types::{IterationSpace, ThreadBuiltin};

pub fn parallelize(kernel: &mut KernelHir, ids: &mut IdGen) -> Result<()> {
    let dims = kernel.jacc.iteration_space.dims() as u8;
    if dims == 0 {
        return Ok(());
    }
    let span = kernel.span;
    let mut body = std::mem::replace(&mut kernel.body, Block { stmts: Vec::new(), span });
    rewrite_nest(&mut body, 0, dims, kernel.jacc.iteration_space, ids)?;
    kernel.body = body;
    Ok(())
}

/// Rewrite the first loop found among `block`'s statements as dimension
/// `dim`, then recurse into its body for the next dimension.
fn rewrite_nest(
    block: &mut Block,
    dim: u8,
    dims: u8,
    space: IterationSpace,
    ids: &mut IdGen,
) -> Result<()> {
    if dim >= dims {
        return Ok(());
    }
    let Some(stmt) = block.stmts.iter_mut().find(|s| matches!(s, Stmt::For { .. })) else {
        return Err(CompileError::single(
            block.span,
            format!(
                "iterationSpace={} needs a loop nest of depth {}, found {}",
                space.keyword(),
                dims,
                dim
            ),
        ));
    };
    let Stmt::For { lo, hi: _, step, body, span, .. } = stmt else { unreachable!() };
    let span = *span;

    let old_lo = lo.clone();
    let old_step = step.clone();

    let gid = Expr::builtin(ids, ThreadBuiltin::GlobalId, dim, span);
    let gsz = Expr::builtin(ids, ThreadBuiltin::GlobalSize, dim, span);

    *lo = fold_add(old_lo, fold_mul(gid, old_step.clone(), ids, span), ids, span);
    *step = Some(fold_mul(gsz, old_step, ids, span));

    rewrite_nest(body, dim + 1, dims, space, ids)
}

fn is_int(e: &Expr, k: i64) -> bool {
    matches!(e, Expr::IntLit { value, i64_suffix: false, .. } if *value == k)
}

/// `a * s` with `s` defaulting to 1 and literal-one steps folded away.
fn fold_mul(a: Expr, s: Option<Expr>, ids: &mut IdGen, span: crate::diag::Span) -> Expr {
    match s {
        None => a,
        Some(s) if is_int(&s, 1) => a,
        Some(s) => Expr::binary(ids, BinOp::Mul, a, s, span),
    }
}

/// `lo + t` with a literal-zero `lo` folded away.
fn fold_add(lo: Expr, t: Expr, ids: &mut IdGen, span: crate::diag::Span) -> Expr {
    if is_int(&lo, 0) {
        t
    } else {
        Expr::binary(ids, BinOp::Add, lo, t, span)
    }
}
