//! Lexer for the kernel DSL.
//!
//! Produces a flat token stream with 1-based line/column spans. Literal
//! tokens keep their exact source spelling so the pretty-printer can
//! reproduce them verbatim.

use crate::diag::{CompileError, Diagnostic, Result, Span};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keyword {
    Kernel,
    Fn,
    Type,
    Field,
    Var,
    For,
    In,
    Step,
    If,
    Else,
    Return,
    New,
    As,
    True,
    False,
    Barrier,
    I32,
    I64,
    F32,
    F64,
    Bool,
}

impl Keyword {
    pub fn as_str(self) -> &'static str {
        match self {
            Keyword::Kernel => "kernel",
            Keyword::Fn => "fn",
            Keyword::Type => "type",
            Keyword::Field => "field",
            Keyword::Var => "var",
            Keyword::For => "for",
            Keyword::In => "in",
            Keyword::Step => "step",
            Keyword::If => "if",
            Keyword::Else => "else",
            Keyword::Return => "return",
            Keyword::New => "new",
            Keyword::As => "as",
            Keyword::True => "true",
            Keyword::False => "false",
            Keyword::Barrier => "barrier",
            Keyword::I32 => "i32",
            Keyword::I64 => "i64",
            Keyword::F32 => "f32",
            Keyword::F64 => "f64",
            Keyword::Bool => "bool",
        }
    }

    fn from_str(s: &str) -> Option<Self> {
        Some(match s {
            "kernel" => Keyword::Kernel,
            "fn" => Keyword::Fn,
            "type" => Keyword::Type,
            "field" => Keyword::Field,
            "var" => Keyword::Var,
            "for" => Keyword::For,
            "in" => Keyword::In,
            "step" => Keyword::Step,
            "if" => Keyword::If,
            "else" => Keyword::Else,
            "return" => Keyword::Return,
            "new" => Keyword::New,
            "as" => Keyword::As,
            "true" => Keyword::True,
            "false" => Keyword::False,
            "barrier" => Keyword::Barrier,
            "i32" => Keyword::I32,
            "i64" => Keyword::I64,
            "f32" => Keyword::F32,
            "f64" => Keyword::F64,
            "bool" => Keyword::Bool,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    Ident(String),
    Kw(Keyword),
    /// Integer literal; `l_suffix` is a trailing `L` (i64).
    Int { text: String, value: i64, l_suffix: bool },
    /// Float literal; `d_suffix` is a trailing `d` (f64).
    Float { text: String, value: f64, d_suffix: bool },
    /// `@` introducing an annotation.
    At,
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Semi,
    Colon,
    Dot,
    DotDot,
    Arrow,
    Assign,
    /// Compound assignment: the operator part of `+=`, `<<=`, ...
    AssignOp(&'static str),
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    Amp,
    Pipe,
    Caret,
    Tilde,
    Bang,
    Shl,
    Shr,
    AmpAmp,
    PipePipe,
    Lt,
    Le,
    Gt,
    Ge,
    EqEq,
    Ne,
    Eof,
}

impl TokenKind {
    /// Human-readable name used in "expected X" diagnostics.
    pub fn describe(&self) -> String {
        match self {
            TokenKind::Ident(s) => format!("identifier `{s}`"),
            TokenKind::Kw(k) => format!("`{}`", k.as_str()),
            TokenKind::Int { text, .. } | TokenKind::Float { text, .. } => {
                format!("literal `{text}`")
            }
            TokenKind::At => "`@`".into(),
            TokenKind::LParen => "`(`".into(),
            TokenKind::RParen => "`)`".into(),
            TokenKind::LBrace => "`{`".into(),
            TokenKind::RBrace => "`}`".into(),
            TokenKind::LBracket => "`[`".into(),
            TokenKind::RBracket => "`]`".into(),
            TokenKind::Comma => "`,`".into(),
            TokenKind::Semi => "`;`".into(),
            TokenKind::Colon => "`:`".into(),
            TokenKind::Dot => "`.`".into(),
            TokenKind::DotDot => "`..`".into(),
            TokenKind::Arrow => "`->`".into(),
            TokenKind::Assign => "`=`".into(),
            TokenKind::AssignOp(op) => format!("`{op}=`"),
            TokenKind::Plus => "`+`".into(),
            TokenKind::Minus => "`-`".into(),
            TokenKind::Star => "`*`".into(),
            TokenKind::Slash => "`/`".into(),
            TokenKind::Percent => "`%`".into(),
            TokenKind::Amp => "`&`".into(),
            TokenKind::Pipe => "`|`".into(),
            TokenKind::Caret => "`^`".into(),
            TokenKind::Tilde => "`~`".into(),
            TokenKind::Bang => "`!`".into(),
            TokenKind::Shl => "`<<`".into(),
            TokenKind::Shr => "`>>`".into(),
            TokenKind::AmpAmp => "`&&`".into(),
            TokenKind::PipePipe => "`||`".into(),
            TokenKind::Lt => "`<`".into(),
            TokenKind::Le => "`<=`".into(),
            TokenKind::Gt => "`>`".into(),
            TokenKind::Ge => "`>=`".into(),
            TokenKind::EqEq => "`==`".into(),
            TokenKind::Ne => "`!=`".into(),
            TokenKind::Eof => "end of input".into(),
        }
    }
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub span: Span,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: u32,
    col: u32,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src: src.as_bytes(), pos: 0, line: 1, col: 1 }
    }

    fn span(&self) -> Span {
        Span::new(self.line, self.col)
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn peek2(&self) -> Option<u8> {
        self.src.get(self.pos + 1).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.peek()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn error(&self, span: Span, msg: impl Into<String>) -> CompileError {
        CompileError::Diagnostics(vec![Diagnostic::error(span, msg)])
    }

    fn skip_trivia(&mut self) -> Result<()> {
        loop {
            match self.peek() {
                Some(c) if c.is_ascii_whitespace() => {
                    self.bump();
                }
                Some(b'/') if self.peek2() == Some(b'/') => {
                    while let Some(c) = self.peek() {
                        if c == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                Some(b'/') if self.peek2() == Some(b'*') => {
                    let start = self.span();
                    self.bump();
                    self.bump();
                    loop {
                        match self.peek() {
                            None => return Err(self.error(start, "unterminated block comment")),
                            Some(b'*') if self.peek2() == Some(b'/') => {
                                self.bump();
                                self.bump();
                                break;
                            }
                            _ => {
                                self.bump();
                            }
                        }
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn ident_or_keyword(&mut self) -> Token {
        let span = self.span();
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == b'_' {
                self.bump();
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let kind = match Keyword::from_str(text) {
            Some(kw) => TokenKind::Kw(kw),
            None => TokenKind::Ident(text.to_string()),
        };
        Token { kind, span }
    }

    fn number(&mut self) -> Result<Token> {
        let span = self.span();
        let start = self.pos;
        let mut is_float = false;

        if self.peek() == Some(b'0') && matches!(self.peek2(), Some(b'x') | Some(b'X')) {
            self.bump();
            self.bump();
            let digits_start = self.pos;
            while let Some(c) = self.peek() {
                if c.is_ascii_hexdigit() {
                    self.bump();
                } else {
                    break;
                }
            }
            if self.pos == digits_start {
                return Err(self.error(span, "hex literal needs at least one digit"));
            }
            let digits = std::str::from_utf8(&self.src[digits_start..self.pos]).unwrap();
            let l_suffix = self.take_suffix(b'L');
            self.reject_literal_tail(span)?;
            let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string();
            // Parse as u64 first so e.g. 0xFFFFFFFF fits an i32 bit pattern.
            let raw = u64::from_str_radix(digits, 16)
                .map_err(|_| self.error(span, "hex literal out of range"))?;
            let value = if l_suffix {
                raw as i64
            } else {
                if raw > u32::MAX as u64 {
                    return Err(self.error(span, "hex literal out of range for i32"));
                }
                raw as u32 as i32 as i64
            };
            return Ok(Token { kind: TokenKind::Int { text, value, l_suffix }, span });
        }

        while let Some(c) = self.peek() {
            if c.is_ascii_digit() {
                self.bump();
            } else {
                break;
            }
        }
        // `1..n` is an int followed by a range, not a float.
        if self.peek() == Some(b'.') && self.peek2() != Some(b'.') {
            is_float = true;
            self.bump();
            while let Some(c) = self.peek() {
                if c.is_ascii_digit() {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        if matches!(self.peek(), Some(b'e') | Some(b'E')) {
            let after_e = self.peek2();
            let exp_ok = match after_e {
                Some(c) if c.is_ascii_digit() => true,
                Some(b'+') | Some(b'-') => {
                    matches!(self.src.get(self.pos + 2), Some(c) if c.is_ascii_digit())
                }
                _ => false,
            };
            if exp_ok {
                is_float = true;
                self.bump();
                if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                    self.bump();
                }
                while let Some(c) = self.peek() {
                    if c.is_ascii_digit() {
                        self.bump();
                    } else {
                        break;
                    }
                }
            }
        }

        if is_float {
            let digits_end = self.pos;
            let d_suffix = self.take_suffix(b'd');
            self.reject_literal_tail(span)?;
            let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string();
            let digits = std::str::from_utf8(&self.src[start..digits_end]).unwrap();
            let value: f64 = digits
                .parse()
                .map_err(|_| self.error(span, "malformed float literal"))?;
            Ok(Token { kind: TokenKind::Float { text, value, d_suffix }, span })
        } else {
            let digits_end = self.pos;
            let l_suffix = self.take_suffix(b'L');
            self.reject_literal_tail(span)?;
            let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string();
            let digits = std::str::from_utf8(&self.src[start..digits_end]).unwrap();
            let value: i64 = digits
                .parse()
                .map_err(|_| self.error(span, "integer literal out of range"))?;
            if !l_suffix && (value < i32::MIN as i64 || value > i32::MAX as i64) {
                return Err(self.error(span, "integer literal out of range for i32 (add `L` for i64)"));
            }
            Ok(Token { kind: TokenKind::Int { text, value, l_suffix }, span })
        }
    }

    fn take_suffix(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn reject_literal_tail(&mut self, span: Span) -> Result<()> {
        if let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == b'_' {
                return Err(self.error(span, "malformed numeric literal"));
            }
        }
        Ok(())
    }

    fn next_token(&mut self) -> Result<Token> {
        self.skip_trivia()?;
        let span = self.span();
        let Some(c) = self.peek() else {
            return Ok(Token { kind: TokenKind::Eof, span });
        };
        if c.is_ascii_alphabetic() || c == b'_' {
            return Ok(self.ident_or_keyword());
        }
        if c.is_ascii_digit() {
            return self.number();
        }

        // Punctuation: longest match first.
        macro_rules! tok {
            ($kind:expr, $n:expr) => {{
                for _ in 0..$n {
                    self.bump();
                }
                return Ok(Token { kind: $kind, span });
            }};
        }
        let c2 = self.peek2();
        let c3 = self.src.get(self.pos + 2).copied();
        match (c, c2) {
            (b'<', Some(b'<')) if c3 == Some(b'=') => tok!(TokenKind::AssignOp("<<"), 3),
            (b'>', Some(b'>')) if c3 == Some(b'=') => tok!(TokenKind::AssignOp(">>"), 3),
            (b'<', Some(b'<')) => tok!(TokenKind::Shl, 2),
            (b'>', Some(b'>')) => tok!(TokenKind::Shr, 2),
            (b'&', Some(b'&')) => tok!(TokenKind::AmpAmp, 2),
            (b'|', Some(b'|')) => tok!(TokenKind::PipePipe, 2),
            (b'<', Some(b'=')) => tok!(TokenKind::Le, 2),
            (b'>', Some(b'=')) => tok!(TokenKind::Ge, 2),
            (b'=', Some(b'=')) => tok!(TokenKind::EqEq, 2),
            (b'!', Some(b'=')) => tok!(TokenKind::Ne, 2),
            (b'+', Some(b'=')) => tok!(TokenKind::AssignOp("+"), 2),
            (b'-', Some(b'=')) => tok!(TokenKind::AssignOp("-"), 2),
            (b'*', Some(b'=')) => tok!(TokenKind::AssignOp("*"), 2),
            (b'/', Some(b'=')) => tok!(TokenKind::AssignOp("/"), 2),
            (b'%', Some(b'=')) => tok!(TokenKind::AssignOp("%"), 2),
            (b'&', Some(b'=')) => tok!(TokenKind::AssignOp("&"), 2),
            (b'|', Some(b'=')) => tok!(TokenKind::AssignOp("|"), 2),
            (b'^', Some(b'=')) => tok!(TokenKind::AssignOp("^"), 2),
            (b'-', Some(b'>')) => tok!(TokenKind::Arrow, 2),
            (b'.', Some(b'.')) => tok!(TokenKind::DotDot, 2),
            (b'<', _) => tok!(TokenKind::Lt, 1),
            (b'>', _) => tok!(TokenKind::Gt, 1),
            (b'@', _) => tok!(TokenKind::At, 1),
            (b'(', _) => tok!(TokenKind::LParen, 1),
            (b')', _) => tok!(TokenKind::RParen, 1),
            (b'{', _) => tok!(TokenKind::LBrace, 1),
            (b'}', _) => tok!(TokenKind::RBrace, 1),
            (b'[', _) => tok!(TokenKind::LBracket, 1),
            (b']', _) => tok!(TokenKind::RBracket, 1),
            (b',', _) => tok!(TokenKind::Comma, 1),
            (b';', _) => tok!(TokenKind::Semi, 1),
            (b':', _) => tok!(TokenKind::Colon, 1),
            (b'.', _) => tok!(TokenKind::Dot, 1),
            (b'=', _) => tok!(TokenKind::Assign, 1),
            (b'+', _) => tok!(TokenKind::Plus, 1),
            (b'-', _) => tok!(TokenKind::Minus, 1),
            (b'*', _) => tok!(TokenKind::Star, 1),
            (b'/', _) => tok!(TokenKind::Slash, 1),
            (b'%', _) => tok!(TokenKind::Percent, 1),
            (b'&', _) => tok!(TokenKind::Amp, 1),
            (b'|', _) => tok!(TokenKind::Pipe, 1),
            (b'^', _) => tok!(TokenKind::Caret, 1),
            (b'~', _) => tok!(TokenKind::Tilde, 1),
            (b'!', _) => tok!(TokenKind::Bang, 1),
            _ => Err(self.error(span, format!("unexpected character `{}`", c as char))),
        }
    }
}

/// Tokenize `source`, ending with a single [`TokenKind::Eof`].
pub fn lex(source: &str) -> Result<Vec<Token>> {
    let mut lx = Lexer::new(source);
    let mut out = Vec::new();
    loop {
        let tok = lx.next_token()?;
        let done = tok.kind == TokenKind::Eof;
        out.push(tok);
        if done {
            return Ok(out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<TokenKind> {
        lex(src).unwrap().into_iter().map(|t| t.kind).collect()
    }

    #[test]
    fn range_is_not_a_float() {
        let ks = kinds("0..10");
        assert_eq!(
            ks,
            vec![
                TokenKind::Int { text: "0".into(), value: 0, l_suffix: false },
                TokenKind::DotDot,
                TokenKind::Int { text: "10".into(), value: 10, l_suffix: false },
                TokenKind::Eof,
            ]
        );
    }

    #[test]
    fn float_spellings() {
        for (src, want) in [
            ("1.5", 1.5),
            ("0.25", 0.25),
            ("2e3", 2000.0),
            ("1.5e-2", 0.015),
            ("3.0d", 3.0),
        ] {
            match &kinds(src)[0] {
                TokenKind::Float { value, .. } => assert_eq!(*value, want, "{src}"),
                other => panic!("{src} lexed as {other:?}"),
            }
        }
    }

    #[test]
    fn int_suffix_and_hex() {
        match &kinds("7L")[0] {
            TokenKind::Int { value: 7, l_suffix: true, .. } => {}
            other => panic!("{other:?}"),
        }
        match &kinds("0xFF")[0] {
            TokenKind::Int { value: 255, .. } => {}
            other => panic!("{other:?}"),
        }
        // Full-width hex maps onto the i32 bit pattern.
        match &kinds("0xFFFFFFFF")[0] {
            TokenKind::Int { value: -1, .. } => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn compound_assignment_operators() {
        assert_eq!(kinds("x += 1")[1], TokenKind::AssignOp("+"));
        assert_eq!(kinds("x <<= 1")[1], TokenKind::AssignOp("<<"));
        assert_eq!(kinds("x ^= 1")[1], TokenKind::AssignOp("^"));
    }

    #[test]
    fn comments_are_trivia() {
        let ks = kinds("a // line\n/* block\n */ b");
        assert_eq!(ks.len(), 3);
        assert!(matches!(&ks[0], TokenKind::Ident(s) if s == "a"));
        assert!(matches!(&ks[1], TokenKind::Ident(s) if s == "b"));
    }

    #[test]
    fn spans_are_line_col() {
        let toks = lex("a\n  b").unwrap();
        assert_eq!((toks[0].span.line, toks[0].span.col), (1, 1));
        assert_eq!((toks[1].span.line, toks[1].span.col), (2, 3));
    }

    #[test]
    fn errors_carry_position() {
        let err = lex("a $ b").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("1:3"), "{msg}");
    }

    #[test]
    fn out_of_range_i32_rejected() {
        assert!(lex("2147483648").is_err());
        assert!(lex("2147483648L").is_ok());
    }
}
