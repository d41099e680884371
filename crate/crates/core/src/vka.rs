//! The virtual kernel ISA text format: emission and assembly.
//!
//! A module is a sequence of `.kernel name { ... }` entries. Each entry
//! declares its parameters, device fields, and register classes, then lists
//! labeled basic blocks of instructions. Registers are typed by class and
//! renumbered densely in order of first appearance: `%p` predicates, `%r`
//! 32-bit integers, `%rd` 64-bit integers, `%f` single floats, `%fd` double
//! floats. Float immediates are spelled as raw bits (`0f3F800000`,
//! `0d3FF0000000000000`) so the text is bit-exact. Conditional control flow
//! is a predicated branch followed by an unconditional one.
//!
//! `emit` and `assemble` are exact inverses on well-formed code:
//! `emit(assemble(emit(f))) == emit(f)` byte for byte. The assembler
//! reports syntax, arity, type, and define-before-use errors with the line
//! they occur on, and it accepts only what the emitter can produce plus
//! hand-written equivalents (`@!%p bra` negated branches, labels in any
//! spelling).

use crate::lir::*;
use crate::types::{AtomicOp, MathIntrinsic, MemSpace, ParamMode, ScalarType, ThreadBuiltin};
use std::collections::HashMap;
use std::fmt;

// ---------------------------------------------------------------------------
// emission
// ---------------------------------------------------------------------------

const CLASS_COUNT: usize = 5;

fn class_of(ty: RegType) -> usize {
    match ty {
        RegType::Pred => 0,
        RegType::I32 => 1,
        RegType::I64 => 2,
        RegType::F32 => 3,
        RegType::F64 => 4,
    }
}

fn class_prefix(class: usize) -> &'static str {
    ["p", "r", "rd", "f", "fd"][class]
}

fn class_type(class: usize) -> RegType {
    [RegType::Pred, RegType::I32, RegType::I64, RegType::F32, RegType::F64][class]
}

/// Registers of one instruction in the order they appear in the printed
/// text (destination first). Keeping this in lockstep with the printers
/// below is what makes renumbering stable across a round-trip.
fn print_order_regs(i: &Inst) -> Vec<Reg> {
    fn op(out: &mut Vec<Reg>, o: &Operand) {
        if let Operand::Reg(r) = o {
            out.push(*r);
        }
    }
    let mut out = Vec::new();
    match i {
        Inst::Mov { dst, src, .. } => {
            out.push(*dst);
            op(&mut out, src);
        }
        Inst::Cvt { dst, src, .. } => {
            out.push(*dst);
            out.push(*src);
        }
        Inst::Bin { dst, a, b, .. } => {
            out.push(*dst);
            op(&mut out, a);
            op(&mut out, b);
        }
        Inst::Un { dst, a, .. } => {
            out.push(*dst);
            out.push(*a);
        }
        Inst::Setp { dst, a, b, .. } => {
            out.push(*dst);
            op(&mut out, a);
            op(&mut out, b);
        }
        Inst::Selp { dst, a, b, cond, .. } => {
            out.push(*dst);
            op(&mut out, a);
            op(&mut out, b);
            out.push(*cond);
        }
        Inst::LdParam { dst, .. } | Inst::LenBuf { dst, .. } | Inst::Special { dst, .. } => {
            out.push(*dst);
        }
        Inst::Ld { dst, addr, .. } => {
            out.push(*dst);
            if let Some((r, _)) = addr.index {
                out.push(r);
            }
        }
        Inst::St { addr, src, .. } => {
            if let Some((r, _)) = addr.index {
                out.push(r);
            }
            op(&mut out, src);
        }
        Inst::Atom { addr, src, .. } => {
            if let Some((r, _)) = addr.index {
                out.push(r);
            }
            op(&mut out, src);
        }
        Inst::Intrin { dst, a, b, .. } => {
            out.push(*dst);
            op(&mut out, a);
            if let Some(b) = b {
                op(&mut out, b);
            }
        }
        Inst::Bar => {}
    }
    out
}

struct Renumber {
    /// RegId -> (class, index within class)
    map: HashMap<RegId, (usize, u32)>,
    counts: [u32; CLASS_COUNT],
}

impl Renumber {
    fn build(f: &LirFunc) -> Self {
        let mut rn = Renumber { map: HashMap::new(), counts: [0; CLASS_COUNT] };
        for b in &f.blocks {
            let mut regs: Vec<Reg> = Vec::new();
            for i in &b.instrs {
                regs.extend(print_order_regs(i));
            }
            match &b.term {
                Terminator::CondBr { pred, .. } => regs.push(*pred),
                Terminator::Trap(TrapKind::Bounds { index, .. }) => regs.push(*index),
                _ => {}
            }
            for r in regs {
                if !rn.map.contains_key(&r.0) {
                    let c = class_of(f.reg_type(r));
                    let idx = rn.counts[c];
                    rn.counts[c] += 1;
                    rn.map.insert(r.0, (c, idx));
                }
            }
        }
        rn
    }

    fn name(&self, r: Reg) -> String {
        let (c, i) = self.map[&r.0];
        format!("%{}{}", class_prefix(c), i)
    }
}

fn imm_text(o: Operand, ty: RegType) -> String {
    match (o, ty) {
        (Operand::ImmI(v), _) => v.to_string(),
        (Operand::ImmF(v), RegType::F64) => format!("0d{:016X}", v.to_bits()),
        (Operand::ImmF(v), _) => format!("0f{:08X}", (v as f32).to_bits()),
        (Operand::Reg(_), _) => unreachable!("imm_text on register"),
    }
}

/// Emit one kernel as VKA text.
pub fn emit(f: &LirFunc) -> String {
    debug_assert!(
        crate::bridge::satisfies_isa_rules(f),
        "emit requires bridged code"
    );
    let rn = Renumber::build(f);
    let op = |o: &Operand, ty: RegType| -> String {
        match o {
            Operand::Reg(r) => rn.name(*r),
            _ => imm_text(*o, ty),
        }
    };
    let addr = |a: &Address| -> String {
        let base = match a.base {
            AddrBase::Param(i) => f.params[i as usize].name.clone(),
            AddrBase::Field(i) => f.fields[i as usize].name.clone(),
        };
        let mut s = format!("[{base}");
        if let Some((r, scale)) = a.index {
            s.push('+');
            s.push_str(&rn.name(r));
            s.push_str(&format!("*{scale}"));
        }
        if a.offset != 0 {
            if a.offset > 0 {
                s.push('+');
            }
            s.push_str(&a.offset.to_string());
        }
        s.push(']');
        s
    };

    let mut out = String::new();
    out.push_str(&format!(".kernel {} {{\n", f.name));
    for p in &f.params {
        let line = match p.kind {
            ParamKind::Buffer(el) => format!(
                "    .param .buffer .{} {} .{}{};\n",
                el.keyword(),
                p.name,
                p.mode.keyword(),
                if p.cachable { " .cachable" } else { "" }
            ),
            ParamKind::Scalar(el) => format!(
                "    .param .scalar .{} {} .{};\n",
                el.keyword(),
                p.name,
                p.mode.keyword()
            ),
            ParamKind::Object { size } => format!(
                "    .param .object .b8[{size}] {} .{}{};\n",
                p.name,
                p.mode.keyword(),
                if p.cachable { " .cachable" } else { "" }
            ),
        };
        out.push_str(&line);
    }
    for fl in &f.fields {
        let count = if fl.count == 1 { String::new() } else { format!("[{}]", fl.count) };
        let atomic = match fl.atomic {
            Some(op) => format!(" .atomic.{}", op.keyword()),
            None => String::new(),
        };
        out.push_str(&format!(
            "    .field .{} .{} {}{}{};\n",
            fl.space.keyword(),
            fl.elem.keyword(),
            fl.name,
            count,
            atomic
        ));
    }
    for c in 0..CLASS_COUNT {
        if rn.counts[c] > 0 {
            out.push_str(&format!(
                "    .reg .{} %{}<{}>;\n",
                class_type(c).suffix(),
                class_prefix(c),
                rn.counts[c]
            ));
        }
    }
    for (bi, b) in f.blocks.iter().enumerate() {
        out.push_str(&format!("L{bi}:\n"));
        for i in &b.instrs {
            let text = match i {
                Inst::Mov { ty, dst, src } => format!(
                    "mov.{} {}, {}",
                    ty.suffix(),
                    rn.name(*dst),
                    op(src, *ty)
                ),
                Inst::Cvt { to, from, dst, src } => format!(
                    "cvt.{}.{} {}, {}",
                    to.suffix(),
                    from.suffix(),
                    rn.name(*dst),
                    rn.name(*src)
                ),
                Inst::Bin { op: o, ty, dst, a, b } => format!(
                    "{}.{} {}, {}, {}",
                    o.mnemonic(),
                    ty.suffix(),
                    rn.name(*dst),
                    op(a, *ty),
                    op(b, shift_rhs(*o, *ty))
                ),
                Inst::Un { op: o, ty, dst, a } => {
                    format!("{}.{} {}, {}", o.mnemonic(), ty.suffix(), rn.name(*dst), rn.name(*a))
                }
                Inst::Setp { cmp, ty, dst, a, b } => format!(
                    "setp.{}.{} {}, {}, {}",
                    cmp.mnemonic(),
                    ty.suffix(),
                    rn.name(*dst),
                    op(a, *ty),
                    op(b, *ty)
                ),
                Inst::Selp { ty, dst, cond, a, b } => format!(
                    "selp.{} {}, {}, {}, {}",
                    ty.suffix(),
                    rn.name(*dst),
                    op(a, *ty),
                    op(b, *ty),
                    rn.name(*cond)
                ),
                Inst::LdParam { ty, dst, param } => format!(
                    "ld.param.{} {}, [{}]",
                    ty.suffix(),
                    rn.name(*dst),
                    f.params[*param as usize].name
                ),
                Inst::LenBuf { dst, param } => {
                    format!("len.buf {}, {}", rn.name(*dst), f.params[*param as usize].name)
                }
                Inst::Ld { space, ty, dst, addr: a, cached } => format!(
                    "ld.{}{}.{} {}, {}",
                    space.keyword(),
                    if *cached { ".ca" } else { "" },
                    ty.suffix(),
                    rn.name(*dst),
                    addr(a)
                ),
                Inst::St { space, ty, addr: a, src } => format!(
                    "st.{}.{} {}, {}",
                    space.keyword(),
                    ty.suffix(),
                    addr(a),
                    op(src, *ty)
                ),
                Inst::Atom { space, op: aop, ty, addr: a, src } => format!(
                    "atom.{}.{}.{} {}, {}",
                    space.keyword(),
                    aop.keyword(),
                    ty.suffix(),
                    addr(a),
                    op(src, *ty)
                ),
                Inst::Intrin { which, ty, dst, a, b } => match b {
                    Some(b) => format!(
                        "{}.{} {}, {}, {}",
                        which.name(),
                        ty.suffix(),
                        rn.name(*dst),
                        op(a, *ty),
                        op(b, *ty)
                    ),
                    None => format!(
                        "{}.{} {}, {}",
                        which.name(),
                        ty.suffix(),
                        rn.name(*dst),
                        op(a, *ty)
                    ),
                },
                Inst::Special { dst, which, dim } => {
                    format!("mov.i32 {}, %{}.{}", rn.name(*dst), which.vka_name(), dim)
                }
                Inst::Bar => "bar.group".to_string(),
            };
            out.push_str("    ");
            out.push_str(&text);
            out.push_str(";\n");
        }
        match &b.term {
            Terminator::Br { target } => out.push_str(&format!("    bra L{target};\n")),
            Terminator::CondBr { pred, then_b, else_b } => {
                out.push_str(&format!("    @{} bra L{then_b};\n", rn.name(*pred)));
                out.push_str(&format!("    bra L{else_b};\n"));
            }
            Terminator::Ret => out.push_str("    ret;\n"),
            Terminator::Trap(TrapKind::Arith) => out.push_str("    trap.arith;\n"),
            Terminator::Trap(TrapKind::Bounds { base, index }) => {
                let name = match base {
                    AddrBase::Param(i) => &f.params[*i as usize].name,
                    AddrBase::Field(i) => &f.fields[*i as usize].name,
                };
                out.push_str(&format!("    trap.bounds {}, {};\n", name, rn.name(*index)));
            }
        }
    }
    out.push_str("}\n");
    out
}

fn shift_rhs(op: AluOp, ty: RegType) -> RegType {
    if matches!(op, AluOp::Shl | AluOp::Shr) {
        RegType::I32
    } else {
        ty
    }
}

/// Emit several kernels as one module.
pub fn emit_module(funcs: &[LirFunc]) -> String {
    funcs.iter().map(emit).collect::<Vec<_>>().join("\n")
}

// ---------------------------------------------------------------------------
// assembly
// ---------------------------------------------------------------------------

/// Assembly error with the 1-based source line it occurred on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AsmError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for AsmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for AsmError {}

type AsmResult<T> = Result<T, AsmError>;

fn err<T>(line: usize, message: impl Into<String>) -> AsmResult<T> {
    Err(AsmError { line, message: message.into() })
}

/// Assemble a VKA module into verified functions.
pub fn assemble(text: &str) -> AsmResult<Vec<LirFunc>> {
    let mut lines: Vec<(usize, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let no_comment = match raw.find("//") {
            Some(p) => &raw[..p],
            None => raw,
        };
        let t = no_comment.trim();
        if !t.is_empty() {
            lines.push((i + 1, t.to_string()));
        }
    }
    let mut funcs = Vec::new();
    let mut pos = 0;
    while pos < lines.len() {
        let (func, next) = assemble_kernel(&lines, pos)?;
        funcs.push(func);
        pos = next;
    }
    if funcs.is_empty() {
        return err(text.lines().count().max(1), "no kernel entry");
    }
    Ok(funcs)
}

/// Assemble a module that must contain exactly one kernel.
pub fn assemble_one(text: &str) -> AsmResult<LirFunc> {
    let mut fs = assemble(text)?;
    if fs.len() != 1 {
        return err(1, format!("expected one kernel, found {}", fs.len()));
    }
    Ok(fs.pop().unwrap())
}

struct KernelBuild {
    func: LirFunc,
    /// class -> starting RegId
    class_base: [u32; CLASS_COUNT],
    class_count: [u32; CLASS_COUNT],
    /// per-block line numbers, parallel to instrs, plus the terminator line
    inst_lines: Vec<Vec<usize>>,
    term_lines: Vec<usize>,
    labels: HashMap<String, BlockId>,
    /// (block, patched-position) -> label text for late resolution
    label_refs: Vec<(usize, LabelSlot, String, usize)>,
}

enum LabelSlot {
    Br,
    CondThen,
    CondElse,
}

fn assemble_kernel(lines: &[(usize, String)], mut pos: usize) -> AsmResult<(LirFunc, usize)> {
    let (line0, head) = &lines[pos];
    let head_parts: Vec<&str> = head.split_whitespace().collect();
    if head_parts.len() != 3 || head_parts[0] != ".kernel" || head_parts[2] != "{" {
        return err(*line0, "expected `.kernel <name> {`");
    }
    let mut kb = KernelBuild {
        func: LirFunc {
            name: head_parts[1].to_string(),
            params: Vec::new(),
            fields: Vec::new(),
            regs: Vec::new(),
            blocks: Vec::new(),
        },
        class_base: [0; CLASS_COUNT],
        class_count: [0; CLASS_COUNT],
        inst_lines: Vec::new(),
        term_lines: Vec::new(),
        labels: HashMap::new(),
        label_refs: Vec::new(),
    };
    pos += 1;

    // Directives.
    while pos < lines.len() && lines[pos].1.starts_with('.') {
        let (ln, l) = &lines[pos];
        directive(&mut kb, *ln, l)?;
        pos += 1;
    }
    // Register ids: classes in fixed order get contiguous ranges.
    {
        let mut next = 0u32;
        for c in 0..CLASS_COUNT {
            kb.class_base[c] = next;
            next += kb.class_count[c];
            for _ in 0..kb.class_count[c] {
                kb.func.regs.push(class_type(c));
            }
        }
    }

    // Blocks.
    let mut cur: Option<(Vec<Inst>, Vec<usize>)> = None;
    let mut pending: Option<(Reg, bool, String, usize)> = None; // predicated bra awaiting its partner
    loop {
        if pos >= lines.len() {
            return err(lines[lines.len() - 1].0, "unterminated kernel: missing `}`");
        }
        let (ln, l) = &lines[pos];
        let ln = *ln;
        if l == "}" {
            if pending.is_some() {
                return err(ln, "predicated branch must be followed by an unconditional branch");
            }
            if cur.is_some() {
                return err(ln, "block has no terminator");
            }
            pos += 1;
            break;
        }
        if let Some(label) = l.strip_suffix(':') {
            if pending.is_some() {
                return err(ln, "predicated branch must be followed by an unconditional branch");
            }
            if cur.is_some() {
                return err(ln, "block has no terminator");
            }
            if !label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') || label.is_empty() {
                return err(ln, format!("bad label `{label}`"));
            }
            if kb
                .labels
                .insert(label.to_string(), kb.func.blocks.len() as BlockId)
                .is_some()
            {
                return err(ln, format!("duplicate label `{label}`"));
            }
            cur = Some((Vec::new(), Vec::new()));
            pos += 1;
            continue;
        }
        let Some((instrs, ilines)) = cur.as_mut() else {
            return err(ln, "instruction before first label");
        };
        let Some(stmt) = l.strip_suffix(';') else {
            return err(ln, "missing `;`");
        };
        let stmt = stmt.trim();

        // Predicated branch (first half of a conditional terminator).
        if let Some(rest) = stmt.strip_prefix('@') {
            if pending.is_some() {
                return err(ln, "predicated branch must be followed by an unconditional branch");
            }
            let (neg, rest) = match rest.strip_prefix('!') {
                Some(r) => (true, r),
                None => (false, rest),
            };
            let rest = rest.trim();
            let Some(sp) = rest.find(' ') else {
                return err(ln, "malformed predicated branch");
            };
            let (regtext, tail) = rest.split_at(sp);
            let tail = tail.trim();
            let Some(label) = tail.strip_prefix("bra ") else {
                return err(ln, "predicate prefix is only valid on `bra`");
            };
            let pred = parse_reg(&kb, ln, regtext)?;
            if kb.func.reg_type(pred) != RegType::Pred {
                return err(ln, format!("`{regtext}` is not a predicate register"));
            }
            pending = Some((pred, neg, label.trim().to_string(), ln));
            pos += 1;
            continue;
        }

        // Terminators.
        let parts: Vec<&str> = stmt.splitn(2, ' ').collect();
        let (mnem, rest) = (parts[0], parts.get(1).copied().unwrap_or("").trim());
        let term: Option<Terminator> = match mnem {
            "bra" => {
                let bi = kb.func.blocks.len();
                if let Some((pred, neg, then_label, _pl)) = pending.take() {
                    let (then_slot, else_slot) = if neg {
                        // `@!%p bra A; bra B;` branches to A when !p.
                        (LabelSlot::CondElse, LabelSlot::CondThen)
                    } else {
                        (LabelSlot::CondThen, LabelSlot::CondElse)
                    };
                    kb.label_refs.push((bi, then_slot, then_label, ln));
                    kb.label_refs.push((bi, else_slot, rest.to_string(), ln));
                    Some(Terminator::CondBr { pred, then_b: 0, else_b: 0 })
                } else {
                    kb.label_refs.push((bi, LabelSlot::Br, rest.to_string(), ln));
                    Some(Terminator::Br { target: 0 })
                }
            }
            "ret" => {
                if !rest.is_empty() {
                    return err(ln, "ret takes no operands");
                }
                Some(Terminator::Ret)
            }
            "trap.arith" => {
                if !rest.is_empty() {
                    return err(ln, "trap.arith takes no operands");
                }
                Some(Terminator::Trap(TrapKind::Arith))
            }
            "trap.bounds" => {
                let ops = split_operands(rest);
                if ops.len() != 2 {
                    return err(ln, "trap.bounds takes an array name and an index register");
                }
                let base = resolve_base(&kb, ln, &ops[0])?;
                let index = parse_reg(&kb, ln, &ops[1])?;
                Some(Terminator::Trap(TrapKind::Bounds { base, index }))
            }
            _ => None,
        };
        if let Some(t) = term {
            let (instrs, ilines) = cur.take().unwrap();
            kb.func.blocks.push(BasicBlock { instrs, term: t });
            kb.inst_lines.push(ilines);
            kb.term_lines.push(ln);
            pos += 1;
            continue;
        }
        if pending.is_some() {
            return err(ln, "predicated branch must be followed by an unconditional branch");
        }

        // Ordinary instruction.
        let inst = parse_inst(&kb, ln, stmt)?;
        instrs.push(inst);
        ilines.push(ln);
        pos += 1;
    }

    // Resolve labels.
    for (bi, slot, label, ln) in std::mem::take(&mut kb.label_refs) {
        let Some(&target) = kb.labels.get(&label) else {
            return err(ln, format!("unknown label `{label}`"));
        };
        match (&mut kb.func.blocks[bi].term, slot) {
            (Terminator::Br { target: t }, LabelSlot::Br) => *t = target,
            (Terminator::CondBr { then_b, .. }, LabelSlot::CondThen) => *then_b = target,
            (Terminator::CondBr { else_b, .. }, LabelSlot::CondElse) => *else_b = target,
            _ => unreachable!("label slot mismatch"),
        }
    }
    if kb.func.blocks.is_empty() {
        return err(*line0, "kernel has no blocks");
    }

    check_define_before_use(&kb)?;
    if let Err(e) = kb.func.verify() {
        return err(*line0, format!("invalid kernel: {e}"));
    }
    Ok((kb.func, pos))
}

// ----- directives -----

fn directive(kb: &mut KernelBuild, ln: usize, l: &str) -> AsmResult<()> {
    let parts: Vec<&str> = l
        .strip_suffix(';')
        .ok_or(AsmError { line: ln, message: "missing `;`".into() })?
        .split_whitespace()
        .collect();
    match parts[0] {
        ".param" => {
            if parts.len() < 5 {
                return err(ln, "malformed .param");
            }
            let name = parts[3].to_string();
            let mode = parts[4]
                .strip_prefix('.')
                .and_then(parse_mode)
                .ok_or(AsmError { line: ln, message: format!("bad param mode `{}`", parts[4]) })?;
            let cachable = match parts.len() {
                5 => false,
                6 if parts[5] == ".cachable" => true,
                _ => return err(ln, "malformed .param"),
            };
            let kind = match parts[1] {
                ".buffer" => ParamKind::Buffer(parse_elem(ln, parts[2])?),
                ".scalar" => ParamKind::Scalar(parse_elem(ln, parts[2])?),
                ".object" => {
                    let inner = parts[2]
                        .strip_prefix(".b8[")
                        .and_then(|s| s.strip_suffix(']'))
                        .ok_or(AsmError {
                            line: ln,
                            message: "object parameters are declared `.b8[<size>]`".into(),
                        })?;
                    let size: u32 = inner
                        .parse()
                        .map_err(|_| AsmError { line: ln, message: "bad object size".into() })?;
                    ParamKind::Object { size }
                }
                k => return err(ln, format!("unknown param kind `{k}`")),
            };
            kb.func.params.push(LirParam { name, kind, mode, cachable });
        }
        ".field" => {
            if parts.len() < 4 {
                return err(ln, "malformed .field");
            }
            let space = parts[1]
                .strip_prefix('.')
                .and_then(MemSpace::from_keyword)
                .ok_or(AsmError { line: ln, message: format!("bad space `{}`", parts[1]) })?;
            let elem = parse_elem(ln, parts[2])?;
            let (name, count) = match parts[3].find('[') {
                Some(p) => {
                    let n: u32 = parts[3][p + 1..]
                        .strip_suffix(']')
                        .and_then(|s| s.parse().ok())
                        .ok_or(AsmError { line: ln, message: "bad field count".into() })?;
                    (parts[3][..p].to_string(), n)
                }
                None => (parts[3].to_string(), 1),
            };
            let atomic = match parts.len() {
                4 => None,
                5 => {
                    let op = parts[4]
                        .strip_prefix(".atomic.")
                        .and_then(AtomicOp::from_keyword)
                        .ok_or(AsmError {
                            line: ln,
                            message: format!("bad atomic annotation `{}`", parts[4]),
                        })?;
                    Some(op)
                }
                _ => return err(ln, "malformed .field"),
            };
            kb.func.fields.push(LirField { name, space, elem, count, atomic });
        }
        ".reg" => {
            if parts.len() != 3 {
                return err(ln, "malformed .reg");
            }
            let ty = parse_regtype(ln, parts[1])?;
            let c = class_of(ty);
            let decl = parts[2];
            let want = format!("%{}<", class_prefix(c));
            let count: u32 = decl
                .strip_prefix(&want)
                .and_then(|s| s.strip_suffix('>'))
                .and_then(|s| s.parse().ok())
                .ok_or(AsmError {
                    line: ln,
                    message: format!("expected `%{}<N>` for .reg .{}", class_prefix(c), ty.suffix()),
                })?;
            if kb.class_count[c] != 0 {
                return err(ln, format!("duplicate .reg .{}", ty.suffix()));
            }
            kb.class_count[c] = count;
        }
        d => return err(ln, format!("unknown directive `{d}`")),
    }
    Ok(())
}

fn parse_mode(s: &str) -> Option<ParamMode> {
    Some(match s {
        "read" => ParamMode::Read,
        "write" => ParamMode::Write,
        "readwrite" => ParamMode::ReadWrite,
        _ => return None,
    })
}

fn parse_elem(ln: usize, s: &str) -> AsmResult<ScalarType> {
    s.strip_prefix('.')
        .and_then(ScalarType::from_suffix)
        .filter(|t| *t != ScalarType::Bool)
        .ok_or(AsmError { line: ln, message: format!("bad element type `{s}`") })
}

fn parse_regtype(ln: usize, s: &str) -> AsmResult<RegType> {
    match s {
        ".pred" => Ok(RegType::Pred),
        ".i32" => Ok(RegType::I32),
        ".i64" => Ok(RegType::I64),
        ".f32" => Ok(RegType::F32),
        ".f64" => Ok(RegType::F64),
        _ => err(ln, format!("bad register type `{s}`")),
    }
}

// ----- operands -----

fn split_operands(s: &str) -> Vec<String> {
    if s.trim().is_empty() {
        return Vec::new();
    }
    s.split(',').map(|p| p.trim().to_string()).collect()
}

fn parse_reg(kb: &KernelBuild, ln: usize, s: &str) -> AsmResult<Reg> {
    let Some(body) = s.strip_prefix('%') else {
        return err(ln, format!("expected register, found `{s}`"));
    };
    // Longest prefixes first: rd/fd before r/f.
    for c in [2usize, 4, 1, 3, 0] {
        let p = class_prefix(c);
        if let Some(numtext) = body.strip_prefix(p) {
            if numtext.chars().all(|ch| ch.is_ascii_digit()) && !numtext.is_empty() {
                let idx: u32 = numtext
                    .parse()
                    .map_err(|_| AsmError { line: ln, message: format!("bad register `{s}`") })?;
                if idx >= kb.class_count[c] {
                    return err(
                        ln,
                        format!(
                            "register {s} exceeds declaration %{}<{}>",
                            class_prefix(c),
                            kb.class_count[c]
                        ),
                    );
                }
                return Ok(Reg(kb.class_base[c] + idx));
            }
        }
    }
    err(ln, format!("bad register `{s}`"))
}

fn parse_operand(kb: &KernelBuild, ln: usize, s: &str, ty: RegType) -> AsmResult<Operand> {
    if s.starts_with('%') {
        let r = parse_reg(kb, ln, s)?;
        let rt = kb.func.reg_type(r);
        if rt != ty {
            return err(ln, format!("register {s} has type {}, expected {}", rt.suffix(), ty.suffix()));
        }
        return Ok(Operand::Reg(r));
    }
    if let Some(hex) = s.strip_prefix("0f") {
        let bits = u32::from_str_radix(hex, 16)
            .map_err(|_| AsmError { line: ln, message: format!("bad f32 literal `{s}`") })?;
        if !ty.is_float() {
            return err(ln, format!("float literal `{s}` in {} context", ty.suffix()));
        }
        return Ok(Operand::ImmF(f32::from_bits(bits) as f64));
    }
    if let Some(hex) = s.strip_prefix("0d") {
        let bits = u64::from_str_radix(hex, 16)
            .map_err(|_| AsmError { line: ln, message: format!("bad f64 literal `{s}`") })?;
        if !ty.is_float() {
            return err(ln, format!("float literal `{s}` in {} context", ty.suffix()));
        }
        return Ok(Operand::ImmF(f64::from_bits(bits)));
    }
    match s.parse::<i64>() {
        Ok(v) => {
            if ty.is_float() {
                return err(ln, format!("integer literal `{s}` in {} context", ty.suffix()));
            }
            Ok(Operand::ImmI(v))
        }
        Err(_) => err(ln, format!("bad operand `{s}`")),
    }
}

fn resolve_base(kb: &KernelBuild, ln: usize, name: &str) -> AsmResult<AddrBase> {
    if let Some(i) = kb.func.params.iter().position(|p| p.name == name) {
        return Ok(AddrBase::Param(i as u32));
    }
    if let Some(i) = kb.func.fields.iter().position(|f| f.name == name) {
        return Ok(AddrBase::Field(i as u32));
    }
    err(ln, format!("unknown array `{name}`"))
}

fn parse_address(kb: &KernelBuild, ln: usize, s: &str) -> AsmResult<Address> {
    let inner = s
        .strip_prefix('[')
        .and_then(|x| x.strip_suffix(']'))
        .ok_or(AsmError { line: ln, message: format!("expected address, found `{s}`") })?;
    // name [+ %reg*scale] [±offset]
    let mut rest = inner;
    let name_end = rest.find(['+', '-']).unwrap_or(rest.len());
    let name = &rest[..name_end];
    let base = resolve_base(kb, ln, name)?;
    rest = &rest[name_end..];
    let mut index = None;
    if let Some(r) = rest.strip_prefix('+') {
        if r.starts_with('%') {
            let star = r
                .find('*')
                .ok_or(AsmError { line: ln, message: "indexed address needs `*scale`".into() })?;
            let reg = parse_reg(kb, ln, &r[..star])?;
            if kb.func.reg_type(reg) != RegType::I32 {
                return err(ln, "address index must be an i32 register");
            }
            let after = &r[star + 1..];
            let scale_end = after.find(['+', '-']).unwrap_or(after.len());
            let scale: u32 = after[..scale_end]
                .parse()
                .map_err(|_| AsmError { line: ln, message: "bad scale".into() })?;
            index = Some((reg, scale));
            rest = &after[scale_end..];
        }
    }
    let offset: i64 = if rest.is_empty() {
        0
    } else {
        let digits = rest.strip_prefix('+').unwrap_or(rest);
        digits
            .parse()
            .map_err(|_| AsmError { line: ln, message: format!("bad address offset `{rest}`") })?
    };
    Ok(Address { base, index, offset })
}

// ----- instructions -----

fn parse_inst(kb: &KernelBuild, ln: usize, stmt: &str) -> AsmResult<Inst> {
    let (mnem, rest) = match stmt.find(' ') {
        Some(p) => (&stmt[..p], stmt[p..].trim()),
        None => (stmt, ""),
    };
    let seg: Vec<&str> = mnem.split('.').collect();
    let ops = split_operands(rest);
    let unknown = || AsmError { line: ln, message: format!("unknown opcode `{mnem}`") };

    let need = |n: usize| -> AsmResult<()> {
        if ops.len() != n {
            return err(ln, format!("{} takes {} operands", seg[0], n));
        }
        Ok(())
    };

    match seg[0] {
        "mov" => {
            if seg.len() != 2 {
                return Err(unknown());
            }
            let ty = suffix_type(ln, seg[1])?;
            need(2)?;
            let dst = parse_dst(kb, ln, &ops[0], ty)?;
            // A special like %tid.0 is read through mov.i32.
            if let Some(sp) = ops[1].strip_prefix('%') {
                if let Some((name, dim)) = sp.split_once('.') {
                    if let Some(which) = ThreadBuiltin::from_vka_name(name) {
                        if ty != RegType::I32 {
                            return err(ln, "specials are read with mov.i32");
                        }
                        let dim: u8 = dim.parse().map_err(|_| AsmError {
                            line: ln,
                            message: format!("bad special dimension `{sp}`"),
                        })?;
                        if dim > 2 {
                            return err(ln, format!("bad special dimension `{sp}`"));
                        }
                        return Ok(Inst::Special { dst, which, dim });
                    }
                }
            }
            let src = parse_operand(kb, ln, &ops[1], ty)?;
            if ty == RegType::Pred {
                if let Operand::ImmI(v) = src {
                    if v != 0 && v != 1 {
                        return err(ln, "predicate immediates are 0 or 1");
                    }
                }
            }
            Ok(Inst::Mov { ty, dst, src })
        }
        "cvt" => {
            if seg.len() != 3 {
                return Err(unknown());
            }
            let to = suffix_type(ln, seg[1])?;
            let from = suffix_type(ln, seg[2])?;
            if to == RegType::Pred || from == RegType::Pred {
                return err(ln, "cvt does not take predicates");
            }
            need(2)?;
            let dst = parse_dst(kb, ln, &ops[0], to)?;
            let src = parse_reg(kb, ln, &ops[1])?;
            if kb.func.reg_type(src) != from {
                return err(
                    ln,
                    format!("register {} has type {}, expected {}", ops[1], kb.func.reg_type(src).suffix(), from.suffix()),
                );
            }
            Ok(Inst::Cvt { to, from, dst, src })
        }
        "add" | "sub" | "mul" | "div" | "rem" | "and" | "or" | "xor" | "shl" | "shr" => {
            if seg.len() != 2 {
                return Err(unknown());
            }
            let op = alu_from(seg[0]).unwrap();
            let ty = suffix_type(ln, seg[1])?;
            need(3)?;
            let dst = parse_dst(kb, ln, &ops[0], ty)?;
            let a = parse_operand(kb, ln, &ops[1], ty)?;
            if a.is_imm() {
                return err(ln, "only the last operand may be an immediate");
            }
            let b = parse_operand(kb, ln, &ops[2], shift_rhs(op, ty))?;
            Ok(Inst::Bin { op, ty, dst, a, b })
        }
        "neg" | "not" => {
            if seg.len() != 2 {
                return Err(unknown());
            }
            let op = if seg[0] == "neg" { UnAluOp::Neg } else { UnAluOp::Not };
            let ty = suffix_type(ln, seg[1])?;
            need(2)?;
            let dst = parse_dst(kb, ln, &ops[0], ty)?;
            let a = parse_reg(kb, ln, &ops[1])?;
            if kb.func.reg_type(a) != ty {
                return err(ln, format!("register {} has type {}, expected {}", ops[1], kb.func.reg_type(a).suffix(), ty.suffix()));
            }
            Ok(Inst::Un { op, ty, dst, a })
        }
        "setp" => {
            if seg.len() != 3 {
                return Err(unknown());
            }
            let cmp = cmp_from(seg[1]).ok_or_else(unknown)?;
            let ty = suffix_type(ln, seg[2])?;
            need(3)?;
            let dst = parse_dst(kb, ln, &ops[0], RegType::Pred)?;
            let a = parse_operand(kb, ln, &ops[1], ty)?;
            if a.is_imm() {
                return err(ln, "only the last operand may be an immediate");
            }
            let b = parse_operand(kb, ln, &ops[2], ty)?;
            Ok(Inst::Setp { cmp, ty, dst, a, b })
        }
        "selp" => {
            if seg.len() != 2 {
                return Err(unknown());
            }
            let ty = suffix_type(ln, seg[1])?;
            need(4)?;
            let dst = parse_dst(kb, ln, &ops[0], ty)?;
            let a = parse_operand(kb, ln, &ops[1], ty)?;
            let b = parse_operand(kb, ln, &ops[2], ty)?;
            let cond = parse_reg(kb, ln, &ops[3])?;
            if kb.func.reg_type(cond) != RegType::Pred {
                return err(ln, format!("`{}` is not a predicate register", ops[3]));
            }
            Ok(Inst::Selp { ty, dst, cond, a, b })
        }
        "ld" => {
            if seg.len() < 3 {
                return Err(unknown());
            }
            if seg[1] == "param" {
                if seg.len() != 3 {
                    return Err(unknown());
                }
                let ty = suffix_type(ln, seg[2])?;
                need(2)?;
                let dst = parse_dst(kb, ln, &ops[0], ty)?;
                let name = ops[1]
                    .strip_prefix('[')
                    .and_then(|s| s.strip_suffix(']'))
                    .ok_or(AsmError { line: ln, message: "ld.param operand is `[name]`".into() })?;
                let Some(param) = kb.func.params.iter().position(|p| p.name == name) else {
                    return err(ln, format!("unknown parameter `{name}`"));
                };
                return Ok(Inst::LdParam { ty, dst, param: param as u32 });
            }
            let space = MemSpace::from_keyword(seg[1]).ok_or_else(unknown)?;
            let (cached, ty_seg) = match seg.len() {
                3 => (false, seg[2]),
                4 if seg[2] == "ca" => (true, seg[3]),
                _ => return Err(unknown()),
            };
            let ty = suffix_type(ln, ty_seg)?;
            need(2)?;
            let dst = parse_dst(kb, ln, &ops[0], ty)?;
            let addr = parse_address(kb, ln, &ops[1])?;
            Ok(Inst::Ld { space, ty, dst, addr, cached })
        }
        "st" => {
            if seg.len() != 3 {
                return Err(unknown());
            }
            let space = MemSpace::from_keyword(seg[1]).ok_or_else(unknown)?;
            let ty = suffix_type(ln, seg[2])?;
            need(2)?;
            let addr = parse_address(kb, ln, &ops[0])?;
            let src = parse_operand(kb, ln, &ops[1], ty)?;
            if src.is_imm() {
                return err(ln, "store value must be a register");
            }
            Ok(Inst::St { space, ty, addr, src })
        }
        "atom" => {
            if seg.len() != 4 {
                return Err(unknown());
            }
            let space = MemSpace::from_keyword(seg[1]).ok_or_else(unknown)?;
            let op = AtomicOp::from_keyword(seg[2]).ok_or_else(unknown)?;
            let ty = suffix_type(ln, seg[3])?;
            need(2)?;
            let addr = parse_address(kb, ln, &ops[0])?;
            let src = parse_operand(kb, ln, &ops[1], ty)?;
            if src.is_imm() {
                return err(ln, "atomic value must be a register");
            }
            Ok(Inst::Atom { space, op, ty, addr, src })
        }
        "len" => {
            if seg.len() != 2 || seg[1] != "buf" {
                return Err(unknown());
            }
            need(2)?;
            let dst = parse_dst(kb, ln, &ops[0], RegType::I32)?;
            let Some(param) = kb.func.params.iter().position(|p| p.name == ops[1]) else {
                return err(ln, format!("unknown parameter `{}`", ops[1]));
            };
            Ok(Inst::LenBuf { dst, param: param as u32 })
        }
        "bar" => {
            if seg.len() != 2 || seg[1] != "group" {
                return Err(unknown());
            }
            need(0)?;
            Ok(Inst::Bar)
        }
        "sin" | "cos" | "sqrt" | "exp" | "log" | "pow" | "popc" => {
            if seg.len() != 2 {
                return Err(unknown());
            }
            let which = MathIntrinsic::from_name(seg[0]).unwrap();
            let ty = suffix_type(ln, seg[1])?;
            let dst_ty = if which == MathIntrinsic::Popc { RegType::I32 } else { ty };
            need(1 + which.arity())?;
            let dst = parse_dst(kb, ln, &ops[0], dst_ty)?;
            let a = parse_operand(kb, ln, &ops[1], ty)?;
            if a.is_imm() {
                return err(ln, "intrinsic operands must be registers");
            }
            let b = if which.arity() == 2 {
                let b = parse_operand(kb, ln, &ops[2], ty)?;
                if b.is_imm() {
                    return err(ln, "intrinsic operands must be registers");
                }
                Some(b)
            } else {
                None
            };
            Ok(Inst::Intrin { which, ty, dst, a, b })
        }
        _ => Err(unknown()),
    }
}

fn parse_dst(kb: &KernelBuild, ln: usize, s: &str, ty: RegType) -> AsmResult<Reg> {
    let r = parse_reg(kb, ln, s)?;
    let rt = kb.func.reg_type(r);
    if rt != ty {
        return err(
            ln,
            format!("register {s} has type {}, expected {}", rt.suffix(), ty.suffix()),
        );
    }
    Ok(r)
}

fn suffix_type(ln: usize, s: &str) -> AsmResult<RegType> {
    match s {
        "pred" => Ok(RegType::Pred),
        "i32" => Ok(RegType::I32),
        "i64" => Ok(RegType::I64),
        "f32" => Ok(RegType::F32),
        "f64" => Ok(RegType::F64),
        _ => err(ln, format!("bad type suffix `.{s}`")),
    }
}

fn alu_from(s: &str) -> Option<AluOp> {
    Some(match s {
        "add" => AluOp::Add,
        "sub" => AluOp::Sub,
        "mul" => AluOp::Mul,
        "div" => AluOp::Div,
        "rem" => AluOp::Rem,
        "and" => AluOp::And,
        "or" => AluOp::Or,
        "xor" => AluOp::Xor,
        "shl" => AluOp::Shl,
        "shr" => AluOp::Shr,
        _ => return None,
    })
}

fn cmp_from(s: &str) -> Option<CmpOp> {
    Some(match s {
        "lt" => CmpOp::Lt,
        "le" => CmpOp::Le,
        "gt" => CmpOp::Gt,
        "ge" => CmpOp::Ge,
        "eq" => CmpOp::Eq,
        "ne" => CmpOp::Ne,
        _ => return None,
    })
}

// ----- line-aware define-before-use -----

fn check_define_before_use(kb: &KernelBuild) -> AsmResult<()> {
    let f = &kb.func;
    let n = f.blocks.len();
    let nregs = f.regs.len();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (bi, b) in f.blocks.iter().enumerate() {
        for t in b.term.targets() {
            preds[t as usize].push(bi);
        }
    }
    // OUT sets as bit vectors, initialized to the full universe.
    let mut out = vec![vec![true; nregs]; n];
    let defs_of = |bi: usize| -> Vec<u32> {
        f.blocks[bi].instrs.iter().filter_map(|i| i.def().map(|r| r.0)).collect()
    };
    {
        let mut entry = vec![false; nregs];
        for d in defs_of(0) {
            entry[d as usize] = true;
        }
        out[0] = entry;
    }
    let mut changed = true;
    while changed {
        changed = false;
        for bi in 1..n {
            let mut inset = vec![true; nregs];
            if !preds[bi].is_empty() {
                for &p in &preds[bi] {
                    for r in 0..nregs {
                        inset[r] = inset[r] && out[p][r];
                    }
                }
            }
            for d in defs_of(bi) {
                inset[d as usize] = true;
            }
            if inset != out[bi] {
                out[bi] = inset;
                changed = true;
            }
        }
    }
    // Walk each block checking uses, reporting the source line. Assembled
    // ids are class-contiguous, so the source spelling is recoverable.
    let emit_name = |r: Reg| -> String {
        let c = class_of(f.reg_type(r));
        format!("%{}{}", class_prefix(c), r.0 - kb.class_base[c])
    };
    for (bi, b) in f.blocks.iter().enumerate() {
        let mut live = vec![true; nregs];
        if bi == 0 {
            live = vec![false; nregs];
        } else if !preds[bi].is_empty() {
            for r in 0..nregs {
                live[r] = preds[bi].iter().all(|&p| out[p][r]);
            }
        }
        for (ii, inst) in b.instrs.iter().enumerate() {
            for u in inst.uses() {
                if !live[u.0 as usize] {
                    return err(
                        kb.inst_lines[bi][ii],
                        format!("register {} used before definition", emit_name(u)),
                    );
                }
            }
            if let Some(d) = inst.def() {
                live[d.0 as usize] = true;
            }
        }
        for u in b.term.uses() {
            if !live[u.0 as usize] {
                return err(
                    kb.term_lines[bi],
                    format!("register {} used before definition", emit_name(u)),
                );
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::bridge;
    use crate::lower::lower_kernel;
    use crate::opt::{optimize_lir, OptOptions};
    use crate::parser::parse_unit;
    use crate::passes::{inline_calls, insert_bounds_guards, parallelize, scalar_replace};
    use crate::predicate::predicate;
    use crate::validate::validate_unit;
    use crate::ast::IdGen;

    fn compile(src: &str, exceptions: bool) -> LirFunc {
        let mut unit = parse_unit(src, "t").unwrap();
        let checked = validate_unit(&unit).unwrap();
        let mut ids = IdGen::starting_at(unit.next_id);
        let mut k = unit.kernels.remove(0);
        parallelize(&mut k, &mut ids).unwrap();
        inline_calls(&unit, &mut k, &mut ids, 8).unwrap();
        scalar_replace(&checked.env, &mut k, &mut ids).unwrap();
        if exceptions {
            insert_bounds_guards(&mut k, &mut ids).unwrap();
        }
        unit.next_id = ids.watermark();
        unit.kernels.push(k);
        let checked = validate_unit(&unit).unwrap();
        let kernel = &unit.kernels[0];
        let mut lk = lower_kernel(&checked.env, &checked.kernels[&kernel.name], kernel).unwrap();
        optimize_lir(&mut lk.func, &OptOptions::default()).unwrap();
        predicate(&mut lk.func).unwrap();
        bridge(&mut lk.func).unwrap();
        lk.func
    }

    const VECADD: &str = r#"
        @jacc(iterationSpace=ONE_DIMENSION)
        kernel vecadd(@read a: f32[], @read b: f32[], @write c: f32[]) {
            for i in 0..len(c) {
                c[i] = a[i] + b[i];
            }
        }
    "#;

    const REDUCE: &str = r#"
        @jacc(iterationSpace=ONE_DIMENSION)
        kernel reduce(@read a: f32[]) {
            @atomic(op=ADD) field sum: f32;
            for i in 0..len(a) {
                sum += a[i];
            }
        }
    "#;

    #[test]
    fn vecadd_emits_expected_shapes() {
        let f = compile(VECADD, false);
        let text = emit(&f);
        assert!(text.starts_with(".kernel vecadd {\n"), "{text}");
        assert!(text.contains(".param .buffer .f32 a .read;"), "{text}");
        assert!(text.contains(".param .buffer .f32 c .write;"), "{text}");
        assert!(text.contains(".reg .i32 %r<"), "{text}");
        assert!(text.contains("ld.global.f32 %f0, [a+%r"), "{text}");
        assert!(text.contains("st.global.f32 [c+%r"), "{text}");
        assert!(text.contains("mov.i32 %r0, %gid.0;"), "{text}");
        assert!(text.ends_with("}\n"), "{text}");
    }

    #[test]
    fn round_trip_is_byte_identical() {
        for (src, exceptions) in [
            (VECADD, false),
            (VECADD, true),
            (REDUCE, false),
            (
                r#"
                @jacc(iterationSpace=TWO_DIMENSION)
                kernel mm(@read a: f32[], @read b: f32[], @write c: f32[], @read n: i32) {
                    for i in 0..n {
                        for j in 0..n {
                            var acc: f32 = 0.0;
                            for k in 0..n {
                                acc += a[i * n + k] * b[k * n + j];
                            }
                            c[i * n + j] = acc;
                        }
                    }
                }
                "#,
                true,
            ),
            (
                r#"
                @jacc(iterationSpace=ONE_DIMENSION)
                kernel hist(@read keys: i32[]) {
                    @atomic(op=ADD) field bins: i32[256];
                    for i in 0..len(keys) {
                        bins[keys[i] & 255] += 1;
                    }
                }
                "#,
                false,
            ),
        ] {
            let f = compile(src, exceptions);
            let first = emit(&f);
            let assembled = assemble_one(&first).unwrap_or_else(|e| panic!("{e}\n{first}"));
            let second = emit(&assembled);
            assert_eq!(first, second, "round trip changed the text");
        }
    }

    #[test]
    fn float_immediates_are_bit_exact() {
        let src = r#"
            @jacc(iterationSpace=NONE)
            kernel lit(@write out: f32[]) {
                out[0] = 0.1;
            }
        "#;
        let f = compile(src, false);
        let text = emit(&f);
        assert!(
            text.contains(&format!("0f{:08X}", 0.1f32.to_bits())),
            "{text}"
        );
        let assembled = assemble_one(&text).unwrap();
        let movs: Vec<&Inst> = assembled
            .blocks
            .iter()
            .flat_map(|b| &b.instrs)
            .filter(|i| matches!(i, Inst::Mov { ty: RegType::F32, .. }))
            .collect();
        assert!(movs.iter().any(|i| matches!(i,
            Inst::Mov { src: Operand::ImmF(v), .. } if *v as f32 == 0.1f32)));
    }

    #[test]
    fn atomic_reduce_emits_mirror_and_flush() {
        let f = compile(REDUCE, false);
        let text = emit(&f);
        assert!(text.contains(".field .global .f32 sum .atomic.add;"), "{text}");
        assert!(text.contains(".field .shared .f32 sum__part;"), "{text}");
        assert!(text.contains("atom.shared.add.f32 [sum__part], %f"), "{text}");
        assert!(text.contains("bar.group;"), "{text}");
        assert!(text.contains("atom.global.add.f32 [sum"), "{text}");
        assemble_one(&text).unwrap();
    }

    #[test]
    fn empty_module_is_rejected() {
        let e = assemble("").unwrap_err();
        assert_eq!(e.message, "no kernel entry");
        let e = assemble("// just a comment\n").unwrap_err();
        assert_eq!(e.message, "no kernel entry");
    }

    #[test]
    fn atomic_mul_is_unknown_opcode() {
        let text = "\
.kernel k {
    .field .global .i32 x;
    .reg .i32 %r<1>;
L0:
    mov.i32 %r0, 1;
    atom.global.mul.i32 [x], %r0;
    ret;
}
";
        let e = assemble(text).unwrap_err();
        assert_eq!(e.line, 6);
        assert!(e.message.contains("unknown opcode `atom.global.mul.i32`"), "{e}");
    }

    #[test]
    fn type_mismatch_reports_line() {
        let text = "\
.kernel k {
    .reg .i32 %r<1>;
    .reg .f32 %f<1>;
L0:
    mov.f32 %f0, 0f00000000;
    add.i32 %r0, %f0, 1;
    ret;
}
";
        let e = assemble(text).unwrap_err();
        assert_eq!(e.line, 6);
        assert!(e.message.contains("has type f32, expected i32"), "{e}");
    }

    #[test]
    fn use_before_definition_reports_line() {
        let text = "\
.kernel k {
    .param .buffer .i32 out .write;
    .reg .i32 %r<2>;
L0:
    st.global.i32 [out], %r1;
    ret;
}
";
        let e = assemble(text).unwrap_err();
        assert_eq!(e.line, 5);
        assert!(e.message.contains("used before definition"), "{e}");
    }

    #[test]
    fn branch_to_unknown_label_reports_line() {
        let text = "\
.kernel k {
L0:
    bra L7;
}
";
        let e = assemble(text).unwrap_err();
        assert_eq!(e.line, 3);
        assert!(e.message.contains("unknown label `L7`"), "{e}");
    }

    #[test]
    fn register_beyond_declaration_reports_line() {
        let text = "\
.kernel k {
    .reg .i32 %r<2>;
L0:
    mov.i32 %r5, 1;
    ret;
}
";
        let e = assemble(text).unwrap_err();
        assert_eq!(e.line, 4);
        assert!(e.message.contains("exceeds declaration %r<2>"), "{e}");
    }

    #[test]
    fn negated_predicate_branch_assembles() {
        let text = "\
.kernel k {
    .param .buffer .i32 out .write;
    .reg .pred %p<1>;
    .reg .i32 %r<1>;
L0:
    mov.pred %p0, 1;
    @!%p0 bra L2;
    bra L1;
L1:
    mov.i32 %r0, 7;
    st.global.i32 [out], %r0;
    ret;
L2:
    ret;
}
";
        let f = assemble_one(text).unwrap();
        // @!%p branches to L2 when the predicate is false.
        assert!(matches!(
            f.blocks[0].term,
            Terminator::CondBr { then_b: 1, else_b: 2, .. }
        ));
    }

    #[test]
    fn missing_terminator_is_rejected() {
        let text = "\
.kernel k {
    .reg .i32 %r<1>;
L0:
    mov.i32 %r0, 1;
L1:
    ret;
}
";
        let e = assemble(text).unwrap_err();
        assert_eq!(e.line, 5);
        assert!(e.message.contains("no terminator"), "{e}");
    }

    #[test]
    fn module_with_two_kernels_round_trips() {
        let f1 = compile(VECADD, false);
        let f2 = compile(REDUCE, false);
        let text = emit_module(&[f1, f2]);
        let fs = assemble(&text).unwrap();
        assert_eq!(fs.len(), 2);
        assert_eq!(fs[0].name, "vecadd");
        assert_eq!(fs[1].name, "reduce");
        assert_eq!(emit_module(&fs), text);
    }

    #[test]
    fn predicated_branch_without_partner_is_rejected() {
        let text = "\
.kernel k {
    .reg .pred %p<1>;
L0:
    mov.pred %p0, 1;
    @%p0 bra L0;
    ret;
}
";
        let e = assemble(text).unwrap_err();
        assert!(
            e.message.contains("must be followed by an unconditional branch"),
            "{e}"
        );
    }

    #[test]
    fn object_param_round_trips() {
        let src = r#"
            type Opts {
                gain: f32;
                bias: f32;
            }
            @jacc(iterationSpace=ONE_DIMENSION)
            kernel scale(@read o: Opts, @read a: f32[], @write c: f32[]) {
                for i in 0..len(c) {
                    c[i] = a[i] * o.gain + o.bias;
                }
            }
        "#;
        let f = compile(src, false);
        let text = emit(&f);
        assert!(text.contains(".param .object .b8[8] o .read;"), "{text}");
        let assembled = assemble_one(&text).unwrap();
        assert_eq!(emit(&assembled), text);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let f = compile(VECADD, false);
        let text = emit(&f);
        let commented = format!("// header comment\n\n{}", text.replace("L0:", "// entry\nL0:"));
        let assembled = assemble_one(&commented).unwrap();
        assert_eq!(emit(&assembled), text);
    }
}
