//! Scalar and aggregate types shared across the frontend, IRs, and backend.

use std::fmt;

/// The five scalar types the DSL supports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScalarType {
    I32,
    I64,
    F32,
    F64,
    Bool,
}

impl ScalarType {
    /// Size of one element in device memory, in bytes.
    ///
    /// `bool` occupies a full word so every access stays 4-byte aligned.
    pub fn size_bytes(self) -> u32 {
        match self {
            ScalarType::I32 | ScalarType::F32 | ScalarType::Bool => 4,
            ScalarType::I64 | ScalarType::F64 => 8,
        }
    }

    /// Natural alignment: 4 bytes for 32-bit types, 8 for 64-bit.
    pub fn align_bytes(self) -> u32 {
        self.size_bytes()
    }

    pub fn is_integer(self) -> bool {
        matches!(self, ScalarType::I32 | ScalarType::I64)
    }

    pub fn is_float(self) -> bool {
        matches!(self, ScalarType::F32 | ScalarType::F64)
    }

    pub fn is_numeric(self) -> bool {
        self.is_integer() || self.is_float()
    }

    /// Type suffix used in LIR dumps and VKA text (`.i32`, `.f64`, ...).
    pub fn suffix(self) -> &'static str {
        match self {
            ScalarType::I32 => "i32",
            ScalarType::I64 => "i64",
            ScalarType::F32 => "f32",
            ScalarType::F64 => "f64",
            ScalarType::Bool => "pred",
        }
    }

    pub fn from_suffix(s: &str) -> Option<Self> {
        Some(match s {
            "i32" => ScalarType::I32,
            "i64" => ScalarType::I64,
            "f32" => ScalarType::F32,
            "f64" => ScalarType::F64,
            "pred" => ScalarType::Bool,
            _ => return None,
        })
    }

    /// Keyword spelling in DSL source.
    pub fn keyword(self) -> &'static str {
        match self {
            ScalarType::I32 => "i32",
            ScalarType::I64 => "i64",
            ScalarType::F32 => "f32",
            ScalarType::F64 => "f64",
            ScalarType::Bool => "bool",
        }
    }
}

impl fmt::Display for ScalarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// A DSL-level type: scalar, array of scalars, or a named composite.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Type {
    Scalar(ScalarType),
    /// Runtime-length array (parameters only).
    Array(ScalarType),
    /// Fixed-length array (fields only).
    FixedArray(ScalarType, u32),
    /// Named composite type.
    Composite(String),
}

impl Type {
    pub fn scalar(&self) -> Option<ScalarType> {
        match self {
            Type::Scalar(s) => Some(*s),
            _ => None,
        }
    }

    pub fn element(&self) -> Option<ScalarType> {
        match self {
            Type::Array(s) | Type::FixedArray(s, _) => Some(*s),
            _ => None,
        }
    }

    pub fn is_array(&self) -> bool {
        matches!(self, Type::Array(_) | Type::FixedArray(_, _))
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Scalar(s) => write!(f, "{s}"),
            Type::Array(s) => write!(f, "{s}[]"),
            Type::FixedArray(s, n) => write!(f, "{s}[{n}]"),
            Type::Composite(name) => f.write_str(name),
        }
    }
}

/// Parameter access mode, one per kernel parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamMode {
    Read,
    Write,
    ReadWrite,
}

impl ParamMode {
    pub fn reads(self) -> bool {
        matches!(self, ParamMode::Read | ParamMode::ReadWrite)
    }

    pub fn writes(self) -> bool {
        matches!(self, ParamMode::Write | ParamMode::ReadWrite)
    }

    pub fn keyword(self) -> &'static str {
        match self {
            ParamMode::Read => "read",
            ParamMode::Write => "write",
            ParamMode::ReadWrite => "readwrite",
        }
    }
}

impl fmt::Display for ParamMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// Device memory space a field lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MemSpace {
    Global,
    Shared,
    Private,
    Constant,
}

impl MemSpace {
    pub fn keyword(self) -> &'static str {
        match self {
            MemSpace::Global => "global",
            MemSpace::Shared => "shared",
            MemSpace::Private => "private",
            MemSpace::Constant => "const",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        Some(match s {
            "global" => MemSpace::Global,
            "shared" => MemSpace::Shared,
            "private" => MemSpace::Private,
            "const" => MemSpace::Constant,
            _ => return None,
        })
    }
}

impl fmt::Display for MemSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// Read-modify-write operations available to atomics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AtomicOp {
    Add,
    Sub,
    And,
    Or,
    Xor,
}

impl AtomicOp {
    pub fn keyword(self) -> &'static str {
        match self {
            AtomicOp::Add => "add",
            AtomicOp::Sub => "sub",
            AtomicOp::And => "and",
            AtomicOp::Or => "or",
            AtomicOp::Xor => "xor",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        Some(match s {
            "add" => AtomicOp::Add,
            "sub" => AtomicOp::Sub,
            "and" => AtomicOp::And,
            "or" => AtomicOp::Or,
            "xor" => AtomicOp::Xor,
            _ => return None,
        })
    }

    /// Bitwise ops are integer-only; f32 supports add/sub.
    pub fn allows_float(self) -> bool {
        matches!(self, AtomicOp::Add | AtomicOp::Sub)
    }
}

impl fmt::Display for AtomicOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// How many loop dimensions the compiler maps onto the thread grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IterationSpace {
    None,
    OneDimension,
    TwoDimension,
    ThreeDimension,
}

impl IterationSpace {
    pub fn dims(self) -> usize {
        match self {
            IterationSpace::None => 0,
            IterationSpace::OneDimension => 1,
            IterationSpace::TwoDimension => 2,
            IterationSpace::ThreeDimension => 3,
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            IterationSpace::None => "NONE",
            IterationSpace::OneDimension => "ONE_DIMENSION",
            IterationSpace::TwoDimension => "TWO_DIMENSION",
            IterationSpace::ThreeDimension => "THREE_DIMENSION",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        Some(match s {
            "NONE" => IterationSpace::None,
            "ONE_DIMENSION" => IterationSpace::OneDimension,
            "TWO_DIMENSION" => IterationSpace::TwoDimension,
            "THREE_DIMENSION" => IterationSpace::ThreeDimension,
            _ => return None,
        })
    }
}

/// Thread-grid builtin functions exposed to kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ThreadBuiltin {
    /// Thread index within its group.
    ThreadId,
    /// Group index within the grid.
    GroupId,
    /// Threads per group.
    GroupSize,
    /// Flat global thread index for a dimension.
    GlobalId,
    /// Total threads launched for a dimension.
    GlobalSize,
}

impl ThreadBuiltin {
    pub fn name(self) -> &'static str {
        match self {
            ThreadBuiltin::ThreadId => "thread_id",
            ThreadBuiltin::GroupId => "group_id",
            ThreadBuiltin::GroupSize => "group_size",
            ThreadBuiltin::GlobalId => "global_id",
            ThreadBuiltin::GlobalSize => "global_size",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "thread_id" => ThreadBuiltin::ThreadId,
            "group_id" => ThreadBuiltin::GroupId,
            "group_size" => ThreadBuiltin::GroupSize,
            "global_id" => ThreadBuiltin::GlobalId,
            "global_size" => ThreadBuiltin::GlobalSize,
            _ => return None,
        })
    }

    /// Special-register spelling in VKA text (`%gid.0` etc).
    pub fn vka_name(self) -> &'static str {
        match self {
            ThreadBuiltin::ThreadId => "tid",
            ThreadBuiltin::GroupId => "ctaid",
            ThreadBuiltin::GroupSize => "ntid",
            ThreadBuiltin::GlobalId => "gid",
            ThreadBuiltin::GlobalSize => "gsz",
        }
    }

    pub fn from_vka_name(s: &str) -> Option<Self> {
        Some(match s {
            "tid" => ThreadBuiltin::ThreadId,
            "ctaid" => ThreadBuiltin::GroupId,
            "ntid" => ThreadBuiltin::GroupSize,
            "gid" => ThreadBuiltin::GlobalId,
            "gsz" => ThreadBuiltin::GlobalSize,
            _ => return None,
        })
    }
}

/// Math intrinsics lowered to dedicated VKA opcodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MathIntrinsic {
    Sin,
    Cos,
    Sqrt,
    Exp,
    Log,
    Pow,
    Popc,
}

impl MathIntrinsic {
    pub fn name(self) -> &'static str {
        match self {
            MathIntrinsic::Sin => "sin",
            MathIntrinsic::Cos => "cos",
            MathIntrinsic::Sqrt => "sqrt",
            MathIntrinsic::Exp => "exp",
            MathIntrinsic::Log => "log",
            MathIntrinsic::Pow => "pow",
            MathIntrinsic::Popc => "popc",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "sin" => MathIntrinsic::Sin,
            "cos" => MathIntrinsic::Cos,
            "sqrt" => MathIntrinsic::Sqrt,
            "exp" => MathIntrinsic::Exp,
            "log" => MathIntrinsic::Log,
            "pow" => MathIntrinsic::Pow,
            "popc" => MathIntrinsic::Popc,
            _ => return None,
        })
    }

    pub fn arity(self) -> usize {
        match self {
            MathIntrinsic::Pow => 2,
            _ => 1,
        }
    }
}
