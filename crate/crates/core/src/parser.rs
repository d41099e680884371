//! Recursive-descent / Pratt parser for the kernel DSL.
//!
//! Grammar (documented in full in `docs/dsl-grammar.md`):
//!
//! ```text
//! unit        := { type_decl | fn_decl | kernel_decl }
//! type_decl   := "type" IDENT [":" IDENT] "{" { IDENT ":" field_type ";" } "}"
//! fn_decl     := "fn" IDENT "(" [params] ")" "->" scalar_type block
//! kernel_decl := "@jacc" "(" ... ")" "kernel" IDENT "(" [kparams] ")"
//!                "{" { field_decl } { stmt } "}"
//! ```
//!
//! Annotation targets are enforced here: `@jacc` on kernels, access modes on
//! parameters, space/atomicity on fields — anything else is an error naming
//! the annotation and the legal target.

use crate::ast::*;
use crate::diag::{CompileError, Diagnostic, Result, Span};
use crate::lexer::{lex, Keyword, Token, TokenKind};
use crate::types::{AtomicOp, IterationSpace, MathIntrinsic, MemSpace, ParamMode, ScalarType, ThreadBuiltin, Type};

/// Parse one DSL source file into a [`SourceUnit`].
pub fn parse_unit(source: &str, path: &str) -> Result<SourceUnit> {
    let tokens = lex(source)?;
    let mut p = Parser { tokens, pos: 0, ids: IdGen::new() };
    p.unit(path)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    ids: IdGen,
}

/// A raw `@name(args)` annotation before target checking.
struct RawAnnotation {
    name: String,
    /// key → (optional value, span). Bare args like `cachable` have no value.
    args: Vec<(String, Option<String>, Span)>,
    span: Span,
}

impl Parser {
    fn peek(&self) -> &TokenKind {
        &self.tokens[self.pos].kind
    }

    fn peek_span(&self) -> Span {
        self.tokens[self.pos].span
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn at(&self, kind: &TokenKind) -> bool {
        self.peek() == kind
    }

    fn at_kw(&self, kw: Keyword) -> bool {
        matches!(self.peek(), TokenKind::Kw(k) if *k == kw)
    }

    fn eat(&mut self, kind: &TokenKind) -> bool {
        if self.at(kind) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, kw: Keyword) -> bool {
        if self.at_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn error(&self, span: Span, msg: impl Into<String>) -> CompileError {
        CompileError::Diagnostics(vec![Diagnostic::error(span, msg)])
    }

    fn expected(&self, what: &str) -> CompileError {
        self.error(
            self.peek_span(),
            format!("expected {what}, found {}", self.peek().describe()),
        )
    }

    fn expect(&mut self, kind: TokenKind, what: &str) -> Result<Token> {
        if self.at(&kind) {
            Ok(self.bump())
        } else {
            Err(self.expected(what))
        }
    }

    fn expect_kw(&mut self, kw: Keyword) -> Result<Token> {
        if self.at_kw(kw) {
            Ok(self.bump())
        } else {
            Err(self.expected(&format!("`{}`", kw.as_str())))
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<(String, Span)> {
        let span = self.peek_span();
        match self.peek().clone() {
            TokenKind::Ident(name) => {
                self.bump();
                Ok((name, span))
            }
            _ => Err(self.expected(what)),
        }
    }

    // ----- items ------------------------------------------------------

    fn unit(&mut self, path: &str) -> Result<SourceUnit> {
        let mut types = Vec::new();
        let mut fns = Vec::new();
        let mut kernels = Vec::new();
        loop {
            match self.peek() {
                TokenKind::Eof => break,
                TokenKind::Kw(Keyword::Type) => types.push(self.type_decl()?),
                TokenKind::Kw(Keyword::Fn) => fns.push(self.fn_decl()?),
                TokenKind::At | TokenKind::Kw(Keyword::Kernel) => {
                    kernels.push(self.kernel_decl()?)
                }
                _ => return Err(self.expected("`type`, `fn`, or an annotated `kernel`")),
            }
        }
        self.check_unique(
            kernels.iter().map(|k| (k.name.clone(), k.span)),
            "kernel",
        )?;
        self.check_unique(types.iter().map(|t| (t.name.clone(), t.span)), "type")?;
        self.check_unique(fns.iter().map(|f| (f.name.clone(), f.span)), "function")?;
        Ok(SourceUnit {
            path: path.to_string(),
            types,
            fns,
            kernels,
            next_id: self.ids.watermark(),
        })
    }

    fn check_unique(
        &self,
        names: impl Iterator<Item = (String, Span)>,
        what: &str,
    ) -> Result<()> {
        let mut seen: std::collections::HashMap<String, Span> = Default::default();
        for (name, span) in names {
            if seen.insert(name.clone(), span).is_some() {
                return Err(self.error(span, format!("duplicate {what} `{name}`")));
            }
        }
        Ok(())
    }

    fn type_decl(&mut self) -> Result<CompositeTypeDecl> {
        let span = self.peek_span();
        self.expect_kw(Keyword::Type)?;
        let (name, _) = self.expect_ident("type name")?;
        let super_type = if self.eat(&TokenKind::Colon) {
            Some(self.expect_ident("super type name")?.0)
        } else {
            None
        };
        self.expect(TokenKind::LBrace, "`{`")?;
        let mut fields = Vec::new();
        while !self.at(&TokenKind::RBrace) {
            let (fname, fspan) = self.expect_ident("field name")?;
            self.expect(TokenKind::Colon, "`:`")?;
            let ty = self.field_type()?;
            self.expect(TokenKind::Semi, "`;`")?;
            fields.push(FieldSig { name: fname, ty, span: fspan });
        }
        self.expect(TokenKind::RBrace, "`}`")?;
        self.check_unique(fields.iter().map(|f| (f.name.clone(), f.span)), "field")?;
        Ok(CompositeTypeDecl { name, super_type, fields, span })
    }

    fn fn_decl(&mut self) -> Result<FnDecl> {
        let span = self.peek_span();
        self.expect_kw(Keyword::Fn)?;
        let (name, _) = self.expect_ident("function name")?;
        self.expect(TokenKind::LParen, "`(`")?;
        let mut params = Vec::new();
        while !self.at(&TokenKind::RParen) {
            if !params.is_empty() {
                self.expect(TokenKind::Comma, "`,`")?;
            }
            let (pname, pspan) = self.expect_ident("parameter name")?;
            self.expect(TokenKind::Colon, "`:`")?;
            let ty = self.param_type()?;
            params.push(FnParam { name: pname, ty, span: pspan });
        }
        self.expect(TokenKind::RParen, "`)`")?;
        self.expect(TokenKind::Arrow, "`->`")?;
        let ret = self
            .scalar_type()
            .ok_or_else(|| self.expected("scalar return type"))?;
        let body = self.block()?;
        self.check_unique(params.iter().map(|p| (p.name.clone(), p.span)), "parameter")?;
        Ok(FnDecl { name, params, ret, body, span })
    }

    fn kernel_decl(&mut self) -> Result<KernelHir> {
        let span = self.peek_span();
        let mut jacc: Option<JaccAnnotation> = None;
        while self.at(&TokenKind::At) {
            let ann = self.raw_annotation()?;
            match ann.name.as_str() {
                "jacc" => {
                    if jacc.is_some() {
                        return Err(self.error(ann.span, "duplicate `@jacc` annotation"));
                    }
                    jacc = Some(self.jacc_annotation(ann)?);
                }
                "read" | "write" | "readwrite" => {
                    return Err(self.error(
                        ann.span,
                        format!("annotation `@{}` applies to parameters, not kernels", ann.name),
                    ))
                }
                "atomic" | "shared" | "private" | "constant" => {
                    return Err(self.error(
                        ann.span,
                        format!("annotation `@{}` applies to fields, not kernels", ann.name),
                    ))
                }
                other => {
                    return Err(self.error(ann.span, format!("unknown annotation `@{other}`")))
                }
            }
        }
        self.expect_kw(Keyword::Kernel)?;
        let (name, name_span) = self.expect_ident("kernel name")?;
        let Some(jacc) = jacc else {
            return Err(self.error(
                name_span,
                format!("kernel `{name}` is missing the required `@jacc(iterationSpace=...)` annotation"),
            ));
        };

        self.expect(TokenKind::LParen, "`(`")?;
        let mut params = Vec::new();
        while !self.at(&TokenKind::RParen) {
            if !params.is_empty() {
                self.expect(TokenKind::Comma, "`,`")?;
            }
            params.push(self.kernel_param()?);
        }
        self.expect(TokenKind::RParen, "`)`")?;
        self.check_unique(params.iter().map(|p| (p.name.clone(), p.span)), "parameter")?;

        let body_open = self.peek_span();
        self.expect(TokenKind::LBrace, "`{`")?;
        let mut fields = Vec::new();
        while self.at(&TokenKind::At) || self.at_kw(Keyword::Field) {
            fields.push(self.field_decl()?);
        }
        self.check_unique(fields.iter().map(|f| (f.name.clone(), f.span)), "field")?;
        let mut stmts = Vec::new();
        while !self.at(&TokenKind::RBrace) {
            if self.at_kw(Keyword::Field) {
                return Err(self.error(
                    self.peek_span(),
                    "field declarations must precede statements",
                ));
            }
            stmts.push(self.stmt()?);
        }
        self.expect(TokenKind::RBrace, "`}`")?;
        Ok(KernelHir {
            name,
            jacc,
            params,
            fields,
            body: Block { stmts, span: body_open },
            span,
        })
    }

    fn kernel_param(&mut self) -> Result<KernelParam> {
        if !self.at(&TokenKind::At) {
            return Err(self.expected("parameter annotation (`@read`, `@write`, or `@readwrite`)"));
        }
        let ann = self.raw_annotation()?;
        let (mode, cachable) = match ann.name.as_str() {
            "read" => (ParamMode::Read, self.cachable_arg(&ann)?),
            "write" => {
                if !ann.args.is_empty() {
                    return Err(self.error(
                        ann.span,
                        "`@write` takes no arguments (`cachable` applies to read modes)",
                    ));
                }
                (ParamMode::Write, false)
            }
            "readwrite" => (ParamMode::ReadWrite, self.cachable_arg(&ann)?),
            "jacc" => {
                return Err(self.error(ann.span, "annotation `@jacc` applies to kernels, not parameters"))
            }
            "atomic" | "shared" | "private" | "constant" => {
                return Err(self.error(
                    ann.span,
                    format!("annotation `@{}` applies to fields, not parameters", ann.name),
                ))
            }
            other => return Err(self.error(ann.span, format!("unknown annotation `@{other}`"))),
        };
        let (name, span) = self.expect_ident("parameter name")?;
        self.expect(TokenKind::Colon, "`:`")?;
        let ty = self.param_type()?;
        Ok(KernelParam { name, ty, mode, cachable, span })
    }

    fn cachable_arg(&self, ann: &RawAnnotation) -> Result<bool> {
        match ann.args.as_slice() {
            [] => Ok(false),
            [(key, None, _)] if key == "cachable" => Ok(true),
            [(key, _, span)] => {
                Err(self.error(*span, format!("unknown annotation value `{key}`")))
            }
            _ => Err(self.error(ann.span, format!("`@{}` takes at most `cachable`", ann.name))),
        }
    }

    fn field_decl(&mut self) -> Result<KernelField> {
        let mut space = MemSpace::Global;
        let mut atomicity = FieldAtomicity::NotAtomic;
        let mut annotated = false;
        if self.at(&TokenKind::At) {
            let ann = self.raw_annotation()?;
            annotated = true;
            match ann.name.as_str() {
                "shared" | "private" | "constant" => {
                    if !ann.args.is_empty() {
                        return Err(self.error(ann.span, format!("`@{}` takes no arguments", ann.name)));
                    }
                    space = match ann.name.as_str() {
                        "shared" => MemSpace::Shared,
                        "private" => MemSpace::Private,
                        _ => MemSpace::Constant,
                    };
                }
                "atomic" => {
                    atomicity = self.atomic_annotation(&ann)?;
                }
                "read" | "write" | "readwrite" => {
                    return Err(self.error(
                        ann.span,
                        format!("annotation `@{}` applies to parameters, not fields", ann.name),
                    ))
                }
                "jacc" => {
                    return Err(self.error(ann.span, "annotation `@jacc` applies to kernels, not fields"))
                }
                other => return Err(self.error(ann.span, format!("unknown annotation `@{other}`"))),
            }
        }
        if self.at(&TokenKind::At) {
            // A field carries at most one annotation.
            let span = self.peek_span();
            let _ = annotated;
            return Err(self.error(span, "a field takes at most one annotation"));
        }
        self.expect_kw(Keyword::Field)?;
        let (name, span) = self.expect_ident("field name")?;
        self.expect(TokenKind::Colon, "`:`")?;
        let ty = self.field_type()?;
        self.expect(TokenKind::Semi, "`;`")?;
        Ok(KernelField { name, ty, space, atomicity, span })
    }

    fn atomic_annotation(&self, ann: &RawAnnotation) -> Result<FieldAtomicity> {
        match ann.args.as_slice() {
            [] => Ok(FieldAtomicity::Inferred),
            [(key, Some(value), span)] if key == "op" => match value.as_str() {
                "NONE" => Ok(FieldAtomicity::Inferred),
                "ADD" => Ok(FieldAtomicity::Declared(AtomicOp::Add)),
                "SUB" => Ok(FieldAtomicity::Declared(AtomicOp::Sub)),
                "AND" => Ok(FieldAtomicity::Declared(AtomicOp::And)),
                "OR" => Ok(FieldAtomicity::Declared(AtomicOp::Or)),
                "XOR" => Ok(FieldAtomicity::Declared(AtomicOp::Xor)),
                other => Err(self.error(*span, format!("unknown annotation value `{other}`"))),
            },
            [(key, _, span)] => Err(self.error(*span, format!("unknown annotation key `{key}`"))),
            _ => Err(self.error(ann.span, "`@atomic` takes at most `op=<OP>`")),
        }
    }

    fn jacc_annotation(&self, ann: RawAnnotation) -> Result<JaccAnnotation> {
        let mut space: Option<IterationSpace> = None;
        let mut exceptions = false;
        for (key, value, span) in &ann.args {
            match key.as_str() {
                "iterationSpace" => {
                    let v = value
                        .as_deref()
                        .ok_or_else(|| self.error(*span, "`iterationSpace` needs a value"))?;
                    space = Some(IterationSpace::from_keyword(v).ok_or_else(|| {
                        self.error(*span, format!("unknown annotation value `{v}`"))
                    })?);
                }
                "exceptions" => {
                    let v = value
                        .as_deref()
                        .ok_or_else(|| self.error(*span, "`exceptions` needs a value"))?;
                    exceptions = match v {
                        "true" => true,
                        "false" => false,
                        other => {
                            return Err(
                                self.error(*span, format!("unknown annotation value `{other}`"))
                            )
                        }
                    };
                }
                other => {
                    return Err(self.error(*span, format!("unknown annotation key `{other}`")))
                }
            }
        }
        let iteration_space = space.ok_or_else(|| {
            self.error(ann.span, "`@jacc` requires `iterationSpace=<NONE|ONE_DIMENSION|TWO_DIMENSION|THREE_DIMENSION>`")
        })?;
        Ok(JaccAnnotation { iteration_space, exceptions })
    }

    /// Parse `@name` or `@name(key=value, bare, ...)` without target checks.
    fn raw_annotation(&mut self) -> Result<RawAnnotation> {
        let span = self.peek_span();
        self.expect(TokenKind::At, "`@`")?;
        let (name, _) = self.expect_ident("annotation name")?;
        let mut args = Vec::new();
        if self.eat(&TokenKind::LParen) {
            while !self.at(&TokenKind::RParen) {
                if !args.is_empty() {
                    self.expect(TokenKind::Comma, "`,`")?;
                }
                let key_span = self.peek_span();
                let key = self.annotation_word("annotation argument")?;
                let value = if self.eat(&TokenKind::Assign) {
                    Some(self.annotation_word("annotation value")?)
                } else {
                    None
                };
                args.push((key, value, key_span));
            }
            self.expect(TokenKind::RParen, "`)`")?;
        }
        Ok(RawAnnotation { name, args, span })
    }

    /// Annotation keys/values are bare words; `true`/`false` count as words.
    fn annotation_word(&mut self, what: &str) -> Result<String> {
        match self.peek().clone() {
            TokenKind::Ident(s) => {
                self.bump();
                Ok(s)
            }
            TokenKind::Kw(Keyword::True) => {
                self.bump();
                Ok("true".into())
            }
            TokenKind::Kw(Keyword::False) => {
                self.bump();
                Ok("false".into())
            }
            _ => Err(self.expected(what)),
        }
    }

    // ----- types ------------------------------------------------------

    fn scalar_type(&mut self) -> Option<ScalarType> {
        let s = match self.peek() {
            TokenKind::Kw(Keyword::I32) => ScalarType::I32,
            TokenKind::Kw(Keyword::I64) => ScalarType::I64,
            TokenKind::Kw(Keyword::F32) => ScalarType::F32,
            TokenKind::Kw(Keyword::F64) => ScalarType::F64,
            TokenKind::Kw(Keyword::Bool) => ScalarType::Bool,
            _ => return None,
        };
        self.bump();
        Some(s)
    }

    /// Parameter types: scalar, `scalar[]`, or a composite name.
    fn param_type(&mut self) -> Result<Type> {
        if let Some(s) = self.scalar_type() {
            if self.eat(&TokenKind::LBracket) {
                self.expect(TokenKind::RBracket, "`]`")?;
                return Ok(Type::Array(s));
            }
            return Ok(Type::Scalar(s));
        }
        let (name, _) = self.expect_ident("type")?;
        Ok(Type::Composite(name))
    }

    /// Field types: scalar or fixed-length `scalar[N]`.
    fn field_type(&mut self) -> Result<Type> {
        let span = self.peek_span();
        let Some(s) = self.scalar_type() else {
            return Err(self.expected("scalar field type"));
        };
        if self.eat(&TokenKind::LBracket) {
            let len_span = self.peek_span();
            let len = match self.peek().clone() {
                TokenKind::Int { value, l_suffix: false, .. } => {
                    self.bump();
                    value
                }
                _ => return Err(self.expected("array length (i32 literal)")),
            };
            if len <= 0 {
                return Err(self.error(len_span, "array length must be positive"));
            }
            self.expect(TokenKind::RBracket, "`]`")?;
            return Ok(Type::FixedArray(s, len as u32));
        }
        let _ = span;
        Ok(Type::Scalar(s))
    }

    /// Local-variable types: scalar or composite.
    fn local_type(&mut self) -> Result<Type> {
        if let Some(s) = self.scalar_type() {
            return Ok(Type::Scalar(s));
        }
        let (name, _) = self.expect_ident("type")?;
        Ok(Type::Composite(name))
    }

    // ----- statements ---------------------------------------------------

    fn block(&mut self) -> Result<Block> {
        let span = self.peek_span();
        self.expect(TokenKind::LBrace, "`{`")?;
        let mut stmts = Vec::new();
        while !self.at(&TokenKind::RBrace) {
            stmts.push(self.stmt()?);
        }
        self.expect(TokenKind::RBrace, "`}`")?;
        Ok(Block { stmts, span })
    }

    fn stmt(&mut self) -> Result<Stmt> {
        match self.peek() {
            TokenKind::Kw(Keyword::Var) => self.var_decl(),
            TokenKind::Kw(Keyword::For) => self.for_stmt(),
            TokenKind::Kw(Keyword::If) => self.if_stmt(),
            TokenKind::Kw(Keyword::Barrier) => {
                let span = self.peek_span();
                self.bump();
                self.expect(TokenKind::LParen, "`(`")?;
                self.expect(TokenKind::RParen, "`)`")?;
                self.expect(TokenKind::Semi, "`;`")?;
                Ok(Stmt::Barrier { id: self.ids.fresh(), span })
            }
            TokenKind::Kw(Keyword::Return) => {
                let span = self.peek_span();
                self.bump();
                let value = if self.at(&TokenKind::Semi) {
                    None
                } else {
                    Some(self.expr()?)
                };
                self.expect(TokenKind::Semi, "`;`")?;
                Ok(Stmt::Return { id: self.ids.fresh(), value, span })
            }
            TokenKind::Ident(_) => self.assign_stmt(),
            _ => Err(self.expected("a statement")),
        }
    }

    fn var_decl(&mut self) -> Result<Stmt> {
        let span = self.peek_span();
        self.expect_kw(Keyword::Var)?;
        let (name, _) = self.expect_ident("variable name")?;
        let declared_ty = if self.eat(&TokenKind::Colon) {
            Some(self.local_type()?)
        } else {
            None
        };
        self.expect(TokenKind::Assign, "`=`")?;
        let init = self.expr()?;
        self.expect(TokenKind::Semi, "`;`")?;
        Ok(Stmt::VarDecl { id: self.ids.fresh(), name, declared_ty, init, span })
    }

    fn for_stmt(&mut self) -> Result<Stmt> {
        let span = self.peek_span();
        self.expect_kw(Keyword::For)?;
        let (var, _) = self.expect_ident("loop variable")?;
        self.expect_kw(Keyword::In)?;
        let lo = self.expr()?;
        self.expect(TokenKind::DotDot, "`..`")?;
        let hi = self.expr()?;
        let step = if self.eat_kw(Keyword::Step) {
            Some(self.expr()?)
        } else {
            None
        };
        let body = self.block()?;
        Ok(Stmt::For { id: self.ids.fresh(), var, lo, hi, step, body, span })
    }

    fn if_stmt(&mut self) -> Result<Stmt> {
        let span = self.peek_span();
        self.expect_kw(Keyword::If)?;
        self.expect(TokenKind::LParen, "`(`")?;
        let cond = self.expr()?;
        self.expect(TokenKind::RParen, "`)`")?;
        let then_blk = self.block()?;
        let else_blk = if self.eat_kw(Keyword::Else) {
            if self.at_kw(Keyword::If) {
                let nested = self.if_stmt()?;
                let nested_span = nested.span();
                Some(Block { stmts: vec![nested], span: nested_span })
            } else {
                Some(self.block()?)
            }
        } else {
            None
        };
        Ok(Stmt::If { id: self.ids.fresh(), cond, then_blk, else_blk, span })
    }

    fn assign_stmt(&mut self) -> Result<Stmt> {
        let span = self.peek_span();
        let target = self.postfix_expr()?;
        match &target {
            Expr::Ident { .. } | Expr::Index { .. } | Expr::Field { .. } => {}
            _ => return Err(self.error(target.span(), "invalid assignment target")),
        }
        let op = match self.peek().clone() {
            TokenKind::Assign => {
                self.bump();
                None
            }
            TokenKind::AssignOp(sym) => {
                self.bump();
                Some(compound_op(sym))
            }
            _ => return Err(self.expected("`=` or a compound assignment")),
        };
        let value = self.expr()?;
        self.expect(TokenKind::Semi, "`;`")?;
        Ok(Stmt::Assign { id: self.ids.fresh(), target, op, value, span })
    }

    // ----- expressions --------------------------------------------------

    fn expr(&mut self) -> Result<Expr> {
        self.expr_bp(0)
    }

    /// Pratt loop; `min_bp` is the minimum binding power to continue.
    fn expr_bp(&mut self, min_bp: u8) -> Result<Expr> {
        let mut lhs = self.unary_expr()?;
        loop {
            // `as` binds tighter than any binary operator.
            if self.at_kw(Keyword::As) && CAST_BP >= min_bp {
                let span = self.peek_span();
                self.bump();
                let ty = self
                    .scalar_type()
                    .ok_or_else(|| self.expected("scalar type after `as`"))?;
                lhs = Expr::Cast { id: self.ids.fresh(), expr: Box::new(lhs), ty, span };
                continue;
            }
            let Some((op, bp)) = binary_op(self.peek()) else {
                return Ok(lhs);
            };
            if bp < min_bp {
                return Ok(lhs);
            }
            let span = self.peek_span();
            self.bump();
            let rhs = self.expr_bp(bp + 1)?;
            lhs = Expr::Binary {
                id: self.ids.fresh(),
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                span,
            };
        }
    }

    fn unary_expr(&mut self) -> Result<Expr> {
        let span = self.peek_span();
        let op = match self.peek() {
            TokenKind::Minus => Some(UnOp::Neg),
            TokenKind::Bang => Some(UnOp::Not),
            TokenKind::Tilde => Some(UnOp::BitNot),
            _ => None,
        };
        if let Some(op) = op {
            self.bump();
            let operand = self.unary_expr()?;
            return Ok(Expr::Unary {
                id: self.ids.fresh(),
                op,
                operand: Box::new(operand),
                span,
            });
        }
        self.postfix_expr()
    }

    fn postfix_expr(&mut self) -> Result<Expr> {
        let mut e = self.primary_expr()?;
        loop {
            match self.peek() {
                TokenKind::LBracket => {
                    let span = self.peek_span();
                    self.bump();
                    let index = self.expr()?;
                    self.expect(TokenKind::RBracket, "`]`")?;
                    e = Expr::Index {
                        id: self.ids.fresh(),
                        base: Box::new(e),
                        index: Box::new(index),
                        span,
                    };
                }
                TokenKind::Dot => {
                    let span = self.peek_span();
                    self.bump();
                    let (name, _) = self.expect_ident("field or method name")?;
                    if self.at(&TokenKind::LParen) {
                        let args = self.call_args()?;
                        e = Expr::Call {
                            id: self.ids.fresh(),
                            callee: name,
                            receiver: Some(Box::new(e)),
                            args,
                            span,
                        };
                    } else {
                        e = Expr::Field {
                            id: self.ids.fresh(),
                            base: Box::new(e),
                            field: name,
                            span,
                        };
                    }
                }
                _ => return Ok(e),
            }
        }
    }

    fn primary_expr(&mut self) -> Result<Expr> {
        let span = self.peek_span();
        match self.peek().clone() {
            TokenKind::Int { text, value, l_suffix } => {
                self.bump();
                Ok(Expr::IntLit { id: self.ids.fresh(), text, value, i64_suffix: l_suffix, span })
            }
            TokenKind::Float { text, value, d_suffix } => {
                self.bump();
                Ok(Expr::FloatLit { id: self.ids.fresh(), text, value, f64_suffix: d_suffix, span })
            }
            TokenKind::Kw(Keyword::True) => {
                self.bump();
                Ok(Expr::BoolLit { id: self.ids.fresh(), value: true, span })
            }
            TokenKind::Kw(Keyword::False) => {
                self.bump();
                Ok(Expr::BoolLit { id: self.ids.fresh(), value: false, span })
            }
            TokenKind::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(TokenKind::RParen, "`)`")?;
                Ok(e)
            }
            TokenKind::Kw(Keyword::New) => {
                self.bump();
                let (type_name, _) = self.expect_ident("type name")?;
                let args = self.call_args()?;
                Ok(Expr::New { id: self.ids.fresh(), type_name, args, span })
            }
            TokenKind::Ident(name) => {
                self.bump();
                if self.at(&TokenKind::LParen) {
                    self.named_call(name, span)
                } else {
                    Ok(Expr::Ident { id: self.ids.fresh(), name, span })
                }
            }
            _ => Err(self.expected("an expression")),
        }
    }

    /// A free call: thread builtin, math intrinsic, `len`, or user function.
    fn named_call(&mut self, name: String, span: Span) -> Result<Expr> {
        if let Some(which) = ThreadBuiltin::from_name(&name) {
            self.expect(TokenKind::LParen, "`(`")?;
            let dim_span = self.peek_span();
            let dim = match self.peek().clone() {
                TokenKind::Int { value, l_suffix: false, .. } if (0..=2).contains(&value) => {
                    self.bump();
                    value as u8
                }
                _ => {
                    return Err(self.error(
                        dim_span,
                        format!("builtin `{name}` takes a literal dimension 0, 1, or 2"),
                    ))
                }
            };
            self.expect(TokenKind::RParen, "`)`")?;
            return Ok(Expr::Builtin { id: self.ids.fresh(), which, dim, span });
        }
        if let Some(which) = MathIntrinsic::from_name(&name) {
            let args = self.call_args()?;
            if args.len() != which.arity() {
                return Err(self.error(
                    span,
                    format!(
                        "intrinsic `{name}` takes {} argument{}, found {}",
                        which.arity(),
                        if which.arity() == 1 { "" } else { "s" },
                        args.len()
                    ),
                ));
            }
            return Ok(Expr::Intrinsic { id: self.ids.fresh(), which, args, span });
        }
        if name == "len" {
            let args = self.call_args()?;
            if args.len() != 1 {
                return Err(self.error(span, "`len` takes exactly one array argument"));
            }
            let array = args.into_iter().next().unwrap();
            return Ok(Expr::Len { id: self.ids.fresh(), array: Box::new(array), span });
        }
        let args = self.call_args()?;
        Ok(Expr::Call { id: self.ids.fresh(), callee: name, receiver: None, args, span })
    }

    fn call_args(&mut self) -> Result<Vec<Expr>> {
        self.expect(TokenKind::LParen, "`(`")?;
        let mut args = Vec::new();
        while !self.at(&TokenKind::RParen) {
            if !args.is_empty() {
                self.expect(TokenKind::Comma, "`,`")?;
            }
            args.push(self.expr()?);
        }
        self.expect(TokenKind::RParen, "`)`")?;
        Ok(args)
    }
}

/// Binding power for `expr as ty` — above every binary operator.
const CAST_BP: u8 = 22;

/// Binary operator table: `(op, left binding power)`. Larger binds tighter.
fn binary_op(kind: &TokenKind) -> Option<(BinOp, u8)> {
    Some(match kind {
        TokenKind::PipePipe => (BinOp::LogOr, 2),
        TokenKind::AmpAmp => (BinOp::LogAnd, 4),
        TokenKind::Pipe => (BinOp::BitOr, 6),
        TokenKind::Caret => (BinOp::BitXor, 8),
        TokenKind::Amp => (BinOp::BitAnd, 10),
        TokenKind::EqEq => (BinOp::Eq, 12),
        TokenKind::Ne => (BinOp::Ne, 12),
        TokenKind::Lt => (BinOp::Lt, 14),
        TokenKind::Le => (BinOp::Le, 14),
        TokenKind::Gt => (BinOp::Gt, 14),
        TokenKind::Ge => (BinOp::Ge, 14),
        TokenKind::Shl => (BinOp::Shl, 16),
        TokenKind::Shr => (BinOp::Shr, 16),
        TokenKind::Plus => (BinOp::Add, 18),
        TokenKind::Minus => (BinOp::Sub, 18),
        TokenKind::Star => (BinOp::Mul, 20),
        TokenKind::Slash => (BinOp::Div, 20),
        TokenKind::Percent => (BinOp::Rem, 20),
        _ => return None,
    })
}

fn compound_op(sym: &str) -> BinOp {
    match sym {
        "+" => BinOp::Add,
        "-" => BinOp::Sub,
        "*" => BinOp::Mul,
        "/" => BinOp::Div,
        "%" => BinOp::Rem,
        "&" => BinOp::BitAnd,
        "|" => BinOp::BitOr,
        "^" => BinOp::BitXor,
        "<<" => BinOp::Shl,
        ">>" => BinOp::Shr,
        _ => unreachable!("lexer emits only known compound operators"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const VECADD: &str = "\
@jacc(iterationSpace=ONE_DIMENSION)
kernel vecadd(@read a: f32[], @read b: f32[], @write c: f32[]) {
    for i in 0..len(c) {
        c[i] = a[i] + b[i];
    }
}
";

    #[test]
    fn vecadd_shape() {
        let unit = parse_unit(VECADD, "vecadd.jk").unwrap();
        assert_eq!(unit.kernels.len(), 1);
        let k = &unit.kernels[0];
        assert_eq!(k.name, "vecadd");
        assert_eq!(k.jacc.iteration_space, IterationSpace::OneDimension);
        assert!(!k.jacc.exceptions);
        let modes: Vec<ParamMode> = k.params.iter().map(|p| p.mode).collect();
        assert_eq!(modes, vec![ParamMode::Read, ParamMode::Read, ParamMode::Write]);
        // Exactly one loop nest of depth 1 containing one assignment.
        assert_eq!(k.body.stmts.len(), 1);
        let Stmt::For { body, .. } = &k.body.stmts[0] else {
            panic!("expected for loop");
        };
        assert_eq!(body.stmts.len(), 1);
        assert!(matches!(body.stmts[0], Stmt::Assign { op: None, .. }));
    }

    #[test]
    fn atomic_field_recorded() {
        let src = "\
@jacc(iterationSpace=ONE_DIMENSION)
kernel reduce(@read a: i32[]) {
    @atomic(op=ADD) field result: i32;
    for i in 0..len(a) {
        result = a[i];
    }
}
";
        let unit = parse_unit(src, "t").unwrap();
        let k = &unit.kernels[0];
        assert_eq!(k.fields.len(), 1);
        assert_eq!(k.fields[0].atomicity, FieldAtomicity::Declared(AtomicOp::Add));
        assert_eq!(k.fields[0].space, MemSpace::Global);
    }

    #[test]
    fn unknown_iteration_space_value() {
        let src = "@jacc(iterationSpace=FOUR) kernel k() { }";
        let err = parse_unit(src, "t").unwrap_err().to_string();
        assert!(err.contains("unknown annotation value `FOUR`"), "{err}");
    }

    #[test]
    fn atomic_on_parameter_rejected() {
        let src = "@jacc(iterationSpace=NONE) kernel k(@atomic x: i32) { }";
        let err = parse_unit(src, "t").unwrap_err().to_string();
        assert!(err.contains("applies to fields, not parameters"), "{err}");
    }

    #[test]
    fn read_on_field_rejected() {
        let src = "@jacc(iterationSpace=NONE) kernel k() { @read field x: i32; }";
        let err = parse_unit(src, "t").unwrap_err().to_string();
        assert!(err.contains("applies to parameters, not fields"), "{err}");
    }

    #[test]
    fn jacc_required() {
        let src = "kernel k() { }";
        let err = parse_unit(src, "t").unwrap_err().to_string();
        assert!(err.contains("missing the required `@jacc"), "{err}");
    }

    #[test]
    fn duplicate_parameter_rejected() {
        let src = "@jacc(iterationSpace=NONE) kernel k(@read a: i32, @read a: i32) { }";
        let err = parse_unit(src, "t").unwrap_err().to_string();
        assert!(err.contains("duplicate parameter `a`"), "{err}");
    }

    #[test]
    fn precedence_mul_over_add() {
        let src = "@jacc(iterationSpace=NONE) kernel k(@write c: i32[]) { c[0] = 1 + 2 * 3; }";
        let unit = parse_unit(src, "t").unwrap();
        let Stmt::Assign { value, .. } = &unit.kernels[0].body.stmts[0] else {
            panic!()
        };
        let Expr::Binary { op: BinOp::Add, rhs, .. } = value else {
            panic!("expected + at the top: {value:?}")
        };
        assert!(matches!(**rhs, Expr::Binary { op: BinOp::Mul, .. }));
    }

    #[test]
    fn cast_binds_tighter_than_mul() {
        let src = "@jacc(iterationSpace=NONE) kernel k(@read n: i32, @write c: f32[]) { c[0] = 2.0 * n as f32; }";
        let unit = parse_unit(src, "t").unwrap();
        let Stmt::Assign { value, .. } = &unit.kernels[0].body.stmts[0] else {
            panic!()
        };
        let Expr::Binary { op: BinOp::Mul, rhs, .. } = value else {
            panic!("expected * at the top: {value:?}")
        };
        assert!(matches!(**rhs, Expr::Cast { .. }));
    }

    #[test]
    fn else_if_chain() {
        let src = "\
@jacc(iterationSpace=NONE)
kernel k(@read n: i32, @write c: i32[]) {
    if (n < 0) { c[0] = 0; } else if (n < 10) { c[0] = 1; } else { c[0] = 2; }
}
";
        let unit = parse_unit(src, "t").unwrap();
        let Stmt::If { else_blk: Some(e), .. } = &unit.kernels[0].body.stmts[0] else {
            panic!()
        };
        assert_eq!(e.stmts.len(), 1);
        assert!(matches!(&e.stmts[0], Stmt::If { else_blk: Some(_), .. }));
    }

    #[test]
    fn builtin_dim_checked() {
        let src = "@jacc(iterationSpace=NONE) kernel k(@write c: i32[]) { c[0] = global_id(3); }";
        let err = parse_unit(src, "t").unwrap_err().to_string();
        assert!(err.contains("literal dimension 0, 1, or 2"), "{err}");
    }

    #[test]
    fn method_call_and_new() {
        let src = "\
type Point { x: f32; y: f32; }
fn norm2(p: Point) -> f32 { return p.x * p.x + p.y * p.y; }
@jacc(iterationSpace=NONE)
kernel k(@write c: f32[]) {
    var p = new Point(3.0, 4.0);
    c[0] = p.norm2();
}
";
        let unit = parse_unit(src, "t").unwrap();
        assert_eq!(unit.types.len(), 1);
        assert_eq!(unit.fns.len(), 1);
        let k = &unit.kernels[0];
        assert!(matches!(
            &k.body.stmts[0],
            Stmt::VarDecl { init: Expr::New { .. }, .. }
        ));
        let Stmt::Assign { value: Expr::Call { receiver: Some(_), callee, .. }, .. } = &k.body.stmts[1]
        else {
            panic!()
        };
        assert_eq!(callee, "norm2");
    }

    #[test]
    fn fields_must_precede_statements() {
        let src = "\
@jacc(iterationSpace=NONE)
kernel k(@read n: i32) {
    var x = n;
    field y: i32;
}
";
        let err = parse_unit(src, "t").unwrap_err().to_string();
        assert!(err.contains("must precede statements"), "{err}");
    }
}
