//! High-level IR (HIR) for annotated kernels.
//!
//! The HIR is the parser's output and the representation every structural
//! pass (parallelization, inlining, scalar replacement, bounds-check
//! insertion) rewrites. Loops stay structured; control flow is not flattened
//! until lowering. Every node carries a [`Span`] for diagnostics and a
//! [`NodeId`] so later phases can attach side tables without mutating the
//! tree.
//!
//! Literals keep their source spelling (`text`) so pretty-printing is a
//! fixpoint: parse → print → parse yields an identical tree.

use crate::diag::Span;
use crate::types::{AtomicOp, IterationSpace, MathIntrinsic, ParamMode, ScalarType, ThreadBuiltin, Type};
use std::fmt;

/// Unique id per HIR node within a source unit.
pub type NodeId = u32;

/// Allocator for fresh [`NodeId`]s, used by the parser and by passes that
/// synthesize nodes.
#[derive(Debug, Clone)]
pub struct IdGen {
    next: NodeId,
}

impl IdGen {
    pub fn new() -> Self {
        IdGen { next: 0 }
    }

    pub fn starting_at(next: NodeId) -> Self {
        IdGen { next }
    }

    pub fn fresh(&mut self) -> NodeId {
        let id = self.next;
        self.next += 1;
        id
    }

    pub fn watermark(&self) -> NodeId {
        self.next
    }
}

impl Default for IdGen {
    fn default() -> Self {
        Self::new()
    }
}

/// A parsed source file: composite type declarations, helper functions, and
/// kernels.
#[derive(Debug, Clone)]
pub struct SourceUnit {
    pub path: String,
    pub types: Vec<CompositeTypeDecl>,
    pub fns: Vec<FnDecl>,
    pub kernels: Vec<KernelHir>,
    /// High-water mark for node ids; passes continue numbering from here.
    pub next_id: NodeId,
}

impl SourceUnit {
    pub fn kernel(&self, name: &str) -> Option<&KernelHir> {
        self.kernels.iter().find(|k| k.name == name)
    }

    pub fn type_decl(&self, name: &str) -> Option<&CompositeTypeDecl> {
        self.types.iter().find(|t| t.name == name)
    }

    pub fn fn_decl(&self, name: &str) -> Option<&FnDecl> {
        self.fns.iter().find(|f| f.name == name)
    }
}

/// A named composite (record) type, optionally extending a super type whose
/// fields are flattened in front of this type's own during layout.
#[derive(Debug, Clone)]
pub struct CompositeTypeDecl {
    pub name: String,
    pub super_type: Option<String>,
    pub fields: Vec<FieldSig>,
    pub span: Span,
}

#[derive(Debug, Clone)]
pub struct FieldSig {
    pub name: String,
    pub ty: Type,
    pub span: Span,
}

/// A helper function. Helpers are always inlined into their callers; they
/// never reach the backend as calls.
#[derive(Debug, Clone)]
pub struct FnDecl {
    pub name: String,
    pub params: Vec<FnParam>,
    pub ret: ScalarType,
    pub body: Block,
    pub span: Span,
}

#[derive(Debug, Clone)]
pub struct FnParam {
    pub name: String,
    pub ty: Type,
    pub span: Span,
}

/// The `@jacc(...)` kernel annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JaccAnnotation {
    pub iteration_space: IterationSpace,
    pub exceptions: bool,
}

/// Atomicity of a kernel field, from its `@atomic` annotation.
///
/// `Inferred` means the annotation named no operation; the compiler derives
/// it from the combining assignments in the kernel body.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldAtomicity {
    NotAtomic,
    Inferred,
    Declared(AtomicOp),
}

impl FieldAtomicity {
    pub fn is_atomic(self) -> bool {
        !matches!(self, FieldAtomicity::NotAtomic)
    }
}

/// One kernel parameter with its access-mode annotation.
#[derive(Debug, Clone)]
pub struct KernelParam {
    pub name: String,
    pub ty: Type,
    pub mode: ParamMode,
    pub cachable: bool,
    pub span: Span,
}

/// One kernel field with its memory-space / atomicity annotation.
#[derive(Debug, Clone)]
pub struct KernelField {
    pub name: String,
    pub ty: Type,
    pub space: crate::types::MemSpace,
    pub atomicity: FieldAtomicity,
    pub span: Span,
}

/// A single annotated kernel in HIR form.
#[derive(Debug, Clone)]
pub struct KernelHir {
    pub name: String,
    pub jacc: JaccAnnotation,
    pub params: Vec<KernelParam>,
    pub fields: Vec<KernelField>,
    pub body: Block,
    pub span: Span,
}

impl KernelHir {
    pub fn param(&self, name: &str) -> Option<&KernelParam> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn field(&self, name: &str) -> Option<&KernelField> {
        self.fields.iter().find(|f| f.name == name)
    }
}

#[derive(Debug, Clone)]
pub struct Block {
    pub stmts: Vec<Stmt>,
    pub span: Span,
}

impl Block {
    pub fn empty(span: Span) -> Self {
        Block { stmts: Vec::new(), span }
    }
}

#[derive(Debug, Clone)]
pub enum Stmt {
    /// `var name[: ty] = init;`
    VarDecl {
        id: NodeId,
        name: String,
        declared_ty: Option<Type>,
        init: Expr,
        span: Span,
    },
    /// `target = value;` or `target op= value;`
    Assign {
        id: NodeId,
        target: Expr,
        /// `Some(op)` for compound assignment (`+=` etc).
        op: Option<BinOp>,
        value: Expr,
        span: Span,
    },
    /// `for var in lo..hi [step s] { ... }`
    For {
        id: NodeId,
        var: String,
        lo: Expr,
        hi: Expr,
        step: Option<Expr>,
        body: Block,
        span: Span,
    },
    If {
        id: NodeId,
        cond: Expr,
        then_blk: Block,
        else_blk: Option<Block>,
        span: Span,
    },
    /// `barrier();` — group-wide synchronization point.
    Barrier { id: NodeId, span: Span },
    Return {
        id: NodeId,
        value: Option<Expr>,
        span: Span,
    },
    /// Compiler-synthesized bounds guard: traps unless `0 <= index < len(array)`.
    /// Never produced by the parser; inserted by the exception-check pass.
    BoundsGuard {
        id: NodeId,
        array: Expr,
        index: Expr,
        span: Span,
    },
}

impl Stmt {
    pub fn span(&self) -> Span {
        match self {
            Stmt::VarDecl { span, .. }
            | Stmt::Assign { span, .. }
            | Stmt::For { span, .. }
            | Stmt::If { span, .. }
            | Stmt::Barrier { span, .. }
            | Stmt::Return { span, .. }
            | Stmt::BoundsGuard { span, .. } => *span,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Expr {
    /// Integer literal; `text` keeps the source spelling, `i64_suffix` is the
    /// trailing `L`. Unsuffixed literals adapt to their context type.
    IntLit {
        id: NodeId,
        text: String,
        value: i64,
        i64_suffix: bool,
        span: Span,
    },
    /// Float literal; `f64_suffix` is the trailing `d`. Unsuffixed literals
    /// default to f32 and adapt to an f64 context.
    FloatLit {
        id: NodeId,
        text: String,
        value: f64,
        f64_suffix: bool,
        span: Span,
    },
    BoolLit { id: NodeId, value: bool, span: Span },
    /// Reference to a local, parameter, or kernel field.
    Ident { id: NodeId, name: String, span: Span },
    Unary {
        id: NodeId,
        op: UnOp,
        operand: Box<Expr>,
        span: Span,
    },
    Binary {
        id: NodeId,
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
        span: Span,
    },
    /// `expr as ty`
    Cast {
        id: NodeId,
        expr: Box<Expr>,
        ty: ScalarType,
        span: Span,
    },
    /// User-level call: `callee(args)` or `recv.callee(args)` (the receiver
    /// is prepended as the first argument during inlining).
    Call {
        id: NodeId,
        callee: String,
        receiver: Option<Box<Expr>>,
        args: Vec<Expr>,
        span: Span,
    },
    /// `base[index]`
    Index {
        id: NodeId,
        base: Box<Expr>,
        index: Box<Expr>,
        span: Span,
    },
    /// `base.field` where base is composite-typed.
    Field {
        id: NodeId,
        base: Box<Expr>,
        field: String,
        span: Span,
    },
    /// `new T(args)` — scalar-replaced; escaping allocations are rejected.
    New {
        id: NodeId,
        type_name: String,
        args: Vec<Expr>,
        span: Span,
    },
    /// `len(array)` — runtime length of an array, i32.
    Len { id: NodeId, array: Box<Expr>, span: Span },
    /// Thread-grid builtin: `global_id(0)`, `group_size(1)`, ...
    Builtin {
        id: NodeId,
        which: ThreadBuiltin,
        dim: u8,
        span: Span,
    },
    /// Math intrinsic: `sqrt(x)`, `pow(x, y)`, `popc(bits)`, ...
    Intrinsic {
        id: NodeId,
        which: MathIntrinsic,
        args: Vec<Expr>,
        span: Span,
    },
}

impl Expr {
    pub fn id(&self) -> NodeId {
        match self {
            Expr::IntLit { id, .. }
            | Expr::FloatLit { id, .. }
            | Expr::BoolLit { id, .. }
            | Expr::Ident { id, .. }
            | Expr::Unary { id, .. }
            | Expr::Binary { id, .. }
            | Expr::Cast { id, .. }
            | Expr::Call { id, .. }
            | Expr::Index { id, .. }
            | Expr::Field { id, .. }
            | Expr::New { id, .. }
            | Expr::Len { id, .. }
            | Expr::Builtin { id, .. }
            | Expr::Intrinsic { id, .. } => *id,
        }
    }

    pub fn span(&self) -> Span {
        match self {
            Expr::IntLit { span, .. }
            | Expr::FloatLit { span, .. }
            | Expr::BoolLit { span, .. }
            | Expr::Ident { span, .. }
            | Expr::Unary { span, .. }
            | Expr::Binary { span, .. }
            | Expr::Cast { span, .. }
            | Expr::Call { span, .. }
            | Expr::Index { span, .. }
            | Expr::Field { span, .. }
            | Expr::New { span, .. }
            | Expr::Len { span, .. }
            | Expr::Builtin { span, .. }
            | Expr::Intrinsic { span, .. } => *span,
        }
    }

    /// Synthesized i32 literal (used by passes).
    pub fn int(ids: &mut IdGen, value: i64, span: Span) -> Expr {
        Expr::IntLit {
            id: ids.fresh(),
            text: value.to_string(),
            value,
            i64_suffix: false,
            span,
        }
    }

    pub fn ident(ids: &mut IdGen, name: impl Into<String>, span: Span) -> Expr {
        Expr::Ident { id: ids.fresh(), name: name.into(), span }
    }

    pub fn binary(ids: &mut IdGen, op: BinOp, lhs: Expr, rhs: Expr, span: Span) -> Expr {
        Expr::Binary {
            id: ids.fresh(),
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
            span,
        }
    }

    pub fn builtin(ids: &mut IdGen, which: ThreadBuiltin, dim: u8, span: Span) -> Expr {
        Expr::Builtin { id: ids.fresh(), which, dim, span }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnOp {
    /// Arithmetic negation.
    Neg,
    /// Logical not (bool).
    Not,
    /// Bitwise not (integers).
    BitNot,
}

impl UnOp {
    pub fn symbol(self) -> &'static str {
        match self {
            UnOp::Neg => "-",
            UnOp::Not => "!",
            UnOp::BitNot => "~",
        }
    }
}

impl fmt::Display for UnOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    BitAnd,
    BitOr,
    BitXor,
    Shl,
    Shr,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    /// Logical and — both operands always evaluated (no short circuit).
    LogAnd,
    /// Logical or — both operands always evaluated (no short circuit).
    LogOr,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::BitAnd => "&",
            BinOp::BitOr => "|",
            BinOp::BitXor => "^",
            BinOp::Shl => "<<",
            BinOp::Shr => ">>",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::LogAnd => "&&",
            BinOp::LogOr => "||",
        }
    }

    /// Numeric-in, same-numeric-out operators.
    pub fn is_arith(self) -> bool {
        matches!(
            self,
            BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div | BinOp::Rem
        )
    }

    /// Integer-only bit operators.
    pub fn is_bitwise(self) -> bool {
        matches!(
            self,
            BinOp::BitAnd | BinOp::BitOr | BinOp::BitXor | BinOp::Shl | BinOp::Shr
        )
    }

    /// Operators producing bool from two same-typed operands.
    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne
        )
    }

    pub fn is_logical(self) -> bool {
        matches!(self, BinOp::LogAnd | BinOp::LogOr)
    }

    /// Operators valid on the right of a compound assignment (`op=`).
    pub fn is_compound_assignable(self) -> bool {
        self.is_arith() || self.is_bitwise()
    }

    /// The atomic read-modify-write op this operator corresponds to, if any.
    pub fn as_atomic_op(self) -> Option<AtomicOp> {
        Some(match self {
            BinOp::Add => AtomicOp::Add,
            BinOp::Sub => AtomicOp::Sub,
            BinOp::BitAnd => AtomicOp::And,
            BinOp::BitOr => AtomicOp::Or,
            BinOp::BitXor => AtomicOp::Xor,
            _ => return None,
        })
    }
}

impl fmt::Display for BinOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}
