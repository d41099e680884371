//! Source positions and diagnostics.
//!
//! Every diagnostic carries the line/column it points at so errors can be
//! reported against the original kernel text.

use std::fmt;

/// A position in the source text, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl Span {
    pub fn new(line: u32, col: u32) -> Self {
        Span { line, col }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// Severity of a diagnostic. Warnings never abort compilation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

/// A single compiler message anchored to a source position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub span: Span,
    pub message: String,
}

impl Diagnostic {
    pub fn error(span: Span, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            span,
            message: message.into(),
        }
    }

    pub fn warning(span: Span, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            span,
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{}: {}: {}", self.span, sev, self.message)
    }
}

/// Error type for the whole compilation pipeline.
#[derive(Debug, Clone, thiserror::Error)]
pub enum CompileError {
    /// One or more diagnostics with source positions.
    #[error("{}", format_diags(.0))]
    Diagnostics(Vec<Diagnostic>),
    /// A bug in the compiler itself (an IR form survived that should not).
    #[error("internal compiler error: {0}")]
    Internal(String),
}

impl CompileError {
    pub fn single(span: Span, message: impl Into<String>) -> Self {
        CompileError::Diagnostics(vec![Diagnostic::error(span, message)])
    }

    /// All diagnostics, empty for internal errors.
    pub fn diagnostics(&self) -> &[Diagnostic] {
        match self {
            CompileError::Diagnostics(d) => d,
            CompileError::Internal(_) => &[],
        }
    }
}

fn format_diags(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

pub type Result<T> = std::result::Result<T, CompileError>;
