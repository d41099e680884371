//! Seeded random kernel generator for differential and round-trip testing.
//!
//! Generated kernels are deliberately tame so that *any* of them is a valid
//! subject for bit-exact comparison between the serial reference
//! interpreter and the thread-group simulator, under any launch geometry
//! and any schedule seed:
//!
//! - every array access is `x[i]`, in bounds whenever all three buffers
//!   share one length;
//! - the only written buffer is `c`, and each iteration writes only its own
//!   element, so there are no races regardless of how iterations are
//!   distributed across threads;
//! - integer division and remainder are guarded by construction (the
//!   divisor is always masked into a small positive range);
//! - float expressions carry a static magnitude bound that keeps every
//!   intermediate finite, so no NaN or infinity can arise and float
//!   comparisons stay total.
//!
//! The bodies still contain plenty for the optimizer to chew on:
//! loop-invariant parameter math, one-sided and two-sided conditionals
//! with short register-only arms, nested sequential loops, casts, and
//! redundant subexpressions.

use crate::interp::ArrayData;
use crate::types::ScalarType;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write;

/// A generated kernel and the facts a harness needs to run it.
///
/// The kernel's signature is always
/// `(@read a: T[], @read b: T[], @read n: i32, @write c: T[])`,
/// with `T` given by `elem`. All three buffers must be bound with the same
/// length.
#[derive(Debug, Clone)]
pub struct GenKernel {
    pub source: String,
    pub name: String,
    pub elem: ScalarType,
}

/// Any float intermediate is kept below this magnitude; sums of locals in
/// the final store can add a few orders of magnitude on top, which still
/// leaves more than twenty f32 exponent doublings of headroom.
const MAG_CAP: f64 = 1e15;

/// Produce the kernel for `seed`. The same seed always yields the same
/// source text.
pub fn random_kernel(seed: u64) -> GenKernel {
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        elem: ScalarType::F32,
        locals: Vec::new(),
        idx: "i",
    };
    if g.rng.gen_bool(0.5) {
        g.elem = ScalarType::I32;
    }
    let name = format!("gen_{seed}");
    let t = g.elem.keyword();

    let mut src = String::new();
    let _ = writeln!(src, "@jacc(iterationSpace=ONE_DIMENSION)");
    let _ = writeln!(
        src,
        "kernel {name}(@read a: {t}[], @read b: {t}[], @read n: i32, @write c: {t}[]) {{"
    );
    let use_inv = g.rng.gen_bool(0.8);
    if use_inv {
        // Loop-invariant parameter math: hoisting fodder. `n % 9` stays in
        // [-8, 8], so the bound is small no matter what the harness binds.
        let body = "((n % 9) + 3)";
        match g.elem {
            ScalarType::F32 => {
                let _ = writeln!(src, "    var inv = ({body} as f32);");
            }
            _ => {
                let _ = writeln!(src, "    var inv = {body};");
            }
        }
        g.locals.push(Local { name: "inv".into(), bound: 11.0 });
    }
    let _ = writeln!(src, "    for i in 0..len(c) {{");

    // A few locals initialized from moderately deep expressions.
    let n_vars = g.rng.gen_range(1..=3);
    for k in 0..n_vars {
        let (e, bound) = g.expr(3);
        let name = format!("x{k}");
        let _ = writeln!(src, "        var {name} = {e};");
        g.locals.push(Local { name, bound });
    }

    // Conditionals that reassign locals: if-conversion fodder. Arms are
    // short and register-only by construction.
    for _ in 0..g.rng.gen_range(0..=2) {
        let cond = g.cond();
        let _ = writeln!(src, "        if ({cond}) {{");
        g.arm(&mut src);
        if g.rng.gen_bool(0.5) {
            let _ = writeln!(src, "        }} else {{");
            g.arm(&mut src);
        }
        let _ = writeln!(src, "        }}");
    }

    // Optional inner sequential loop accumulating into a fresh local.
    if g.rng.gen_bool(0.4) {
        let (init, ib) = g.lit();
        let _ = writeln!(src, "        var acc = {init};");
        let _ = writeln!(src, "        for j in 0..4 {{");
        g.idx = "j";
        let (e, eb) = g.expr(2);
        g.idx = "i";
        let _ = writeln!(src, "            acc = (acc + {e});");
        let _ = writeln!(src, "        }}");
        g.locals.push(Local { name: "acc".into(), bound: ib + 4.0 * eb });
    }

    // The single store. Combine every local additively plus one more
    // expression; addition keeps the overall bound linear.
    let (mut out, _) = g.expr(2);
    for l in g.locals.clone() {
        if l.name == "inv" && !use_inv {
            continue;
        }
        let op = if g.rng.gen_bool(0.5) { '+' } else { '-' };
        out = format!("({out} {op} {})", l.name);
    }
    let _ = writeln!(src, "        c[i] = {out};");
    let _ = writeln!(src, "    }}");
    let _ = writeln!(src, "}}");

    GenKernel { source: src, name, elem: g.elem }
}

/// Deterministic argument data for a generated kernel: the two input
/// buffers plus a value for `n`. Float inputs are multiples of 2^-10 in
/// [-2, 2], so they are exactly representable and well inside the magnitude
/// budget the generator assumed.
pub fn random_args(seed: u64, elem: ScalarType, len: usize) -> (ArrayData, ArrayData, i32) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    let buf = |rng: &mut ChaCha8Rng| match elem {
        ScalarType::F32 => {
            ArrayData::F32((0..len).map(|_| rng.gen_range(-2048..=2048) as f32 / 1024.0).collect())
        }
        ScalarType::I32 => ArrayData::I32((0..len).map(|_| rng.gen_range(-10_000..=10_000)).collect()),
        ScalarType::I64 => {
            ArrayData::I64((0..len).map(|_| rng.gen_range(-10_000..=10_000)).collect())
        }
        ScalarType::F64 => {
            ArrayData::F64((0..len).map(|_| rng.gen_range(-2048..=2048) as f64 / 1024.0).collect())
        }
        ScalarType::Bool => ArrayData::I32(vec![0; len]),
    };
    let a = buf(&mut rng);
    let b = buf(&mut rng);
    let n = rng.gen_range(-100..=100);
    (a, b, n)
}

#[derive(Clone)]
struct Local {
    name: String,
    bound: f64,
}

struct Gen {
    rng: ChaCha8Rng,
    elem: ScalarType,
    locals: Vec<Local>,
    /// Name of the index variable currently in scope (`i`, or `j` inside
    /// the inner loop).
    idx: &'static str,
}

impl Gen {
    fn lit(&mut self) -> (String, f64) {
        match self.elem {
            ScalarType::F32 => {
                // Multiples of 0.25: exactly representable at every width.
                let k: i32 = self.rng.gen_range(-8..=8);
                let v = k as f32 * 0.25;
                let text = format!("{v:?}");
                if v < 0.0 {
                    (format!("({text})"), 2.0)
                } else {
                    (text, 2.0)
                }
            }
            _ => {
                let v: i32 = self.rng.gen_range(-16..=16);
                if v < 0 {
                    (format!("({v})"), 16.0)
                } else {
                    (format!("{v}"), 16.0)
                }
            }
        }
    }

    fn leaf(&mut self) -> (String, f64) {
        let idx = self.idx;
        match self.rng.gen_range(0..5) {
            0 => (format!("a[{idx}]"), 2.0),
            1 => (format!("b[{idx}]"), 2.0),
            2 if !self.locals.is_empty() => {
                let l = self.locals.choose(&mut self.rng).unwrap();
                (l.name.clone(), l.bound)
            }
            3 => match self.elem {
                ScalarType::F32 => (format!("(({idx} % 17) as f32)"), 16.0),
                _ => (format!("({idx} % 17)"), 16.0),
            },
            _ => self.lit(),
        }
    }

    /// An expression of the kernel's element type whose magnitude bound is
    /// returned alongside the text. Integer kernels wrap, so their "bound"
    /// is tracked but never constrains anything.
    fn expr(&mut self, depth: usize) -> (String, f64) {
        if depth == 0 {
            return self.leaf();
        }
        let (a, ba) = self.expr(depth - 1);
        match self.elem {
            ScalarType::F32 => self.f32_node(depth, a, ba),
            _ => self.i32_node(depth, a),
        }
    }

    fn f32_node(&mut self, depth: usize, a: String, ba: f64) -> (String, f64) {
        let choice = self.rng.gen_range(0..10);
        match choice {
            0 | 1 => {
                let (b, bb) = self.expr(depth - 1);
                ((format!("({a} + {b})")), ba + bb)
            }
            2 => {
                let (b, bb) = self.expr(depth - 1);
                ((format!("({a} - {b})")), ba + bb)
            }
            3 | 4 => {
                let (b, bb) = self.expr(depth - 1);
                if ba * bb <= MAG_CAP {
                    ((format!("({a} * {b})")), ba * bb)
                } else {
                    // Too big to multiply safely; tame one side first.
                    ((format!("(sin({a}) * {b})")), bb)
                }
            }
            5 => {
                // Divisor is >= 1 by construction.
                let (b, bb) = self.expr(depth - 1);
                if bb * bb <= MAG_CAP {
                    ((format!("({a} / (({b} * {b}) + 1.0))")), ba)
                } else {
                    ((format!("({a} / ((sin({b}) * sin({b})) + 1.0))")), ba)
                }
            }
            6 => {
                if ba * ba <= MAG_CAP {
                    ((format!("sqrt(({a} * {a}) + 1.0)")), ba + 1.0)
                } else {
                    ((format!("sqrt((sin({a}) * sin({a})) + 1.0)")), 2.0)
                }
            }
            7 => ((format!("sin({a})")), 1.0),
            8 => ((format!("cos({a})")), 1.0),
            _ => ((format!("((({a} as i32) & 255) as f32)")), 255.0),
        }
    }

    fn i32_node(&mut self, depth: usize, a: String) -> (String, f64) {
        let choice = self.rng.gen_range(0..11);
        let big = f64::INFINITY; // wrapping: bounds are irrelevant
        match choice {
            0 | 1 => {
                let (b, _) = self.expr(depth - 1);
                ((format!("({a} + {b})")), big)
            }
            2 => {
                let (b, _) = self.expr(depth - 1);
                ((format!("({a} - {b})")), big)
            }
            3 => {
                let (b, _) = self.expr(depth - 1);
                ((format!("({a} * {b})")), big)
            }
            4 => {
                let (b, _) = self.expr(depth - 1);
                ((format!("({a} & {b})")), big)
            }
            5 => {
                let (b, _) = self.expr(depth - 1);
                ((format!("({a} | {b})")), big)
            }
            6 => {
                let (b, _) = self.expr(depth - 1);
                ((format!("({a} ^ {b})")), big)
            }
            7 => {
                let (b, _) = self.expr(depth - 1);
                let op = if self.rng.gen_bool(0.5) { "<<" } else { ">>" };
                ((format!("({a} {op} ({b} & 15))")), big)
            }
            8 => {
                // Masked divisor: always in 1..=8.
                let (b, _) = self.expr(depth - 1);
                let op = if self.rng.gen_bool(0.5) { "/" } else { "%" };
                ((format!("({a} {op} (({b} & 7) + 1))")), big)
            }
            9 => ((format!("popc({a})")), big),
            _ => {
                // Widen, combine, truncate: exercises the 64-bit register
                // class end to end.
                let (b, _) = self.expr(depth - 1);
                ((format!("((({a} as i64) * ({b} as i64)) as i32)")), big)
            }
        }
    }

    fn cond(&mut self) -> String {
        let (a, _) = self.expr(1);
        let (b, _) = self.expr(1);
        let cmp = ["<", "<=", ">", ">=", "==", "!="].choose(&mut self.rng).unwrap();
        let base = format!("{a} {cmp} {b}");
        if self.rng.gen_bool(0.25) {
            let (c, _) = self.expr(1);
            let (d, _) = self.expr(1);
            let cmp2 = ["<", ">"].choose(&mut self.rng).unwrap();
            let join = if self.rng.gen_bool(0.5) { "&&" } else { "||" };
            format!("({base}) {join} ({c} {cmp2} {d})")
        } else {
            base
        }
    }

    /// One conditional arm: reassign one or two existing locals from short
    /// expressions.
    fn arm(&mut self, src: &mut String) {
        for _ in 0..self.rng.gen_range(1..=2) {
            let pick = self.rng.gen_range(0..self.locals.len());
            let (e, bound) = self.expr(2);
            let l = &mut self.locals[pick];
            l.bound = l.bound.max(bound);
            let _ = writeln!(src, "            {} = {e};", l.name);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{compile, PassConfig};

    #[test]
    fn generated_kernels_compile_across_many_seeds() {
        for seed in 0..60 {
            let g = random_kernel(seed);
            let cu = compile(&g.source, "gen", &PassConfig::default())
                .unwrap_or_else(|e| panic!("seed {seed}: {e}\n{}", g.source));
            assert_eq!(cu.kernels[0].name, g.name);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(random_kernel(7).source, random_kernel(7).source);
        let (a1, b1, n1) = random_args(7, ScalarType::F32, 64);
        let (a2, b2, n2) = random_args(7, ScalarType::F32, 64);
        assert_eq!(n1, n2);
        match ((a1, a2), (b1, b2)) {
            ((ArrayData::F32(x), ArrayData::F32(y)), (ArrayData::F32(u), ArrayData::F32(v))) => {
                assert_eq!(x, y);
                assert_eq!(u, v);
            }
            _ => panic!("unexpected array types"),
        }
    }

    #[test]
    fn seeds_vary_the_program() {
        let distinct: std::collections::HashSet<String> =
            (0..20).map(|s| random_kernel(s).source).collect();
        assert!(distinct.len() > 15, "only {} distinct programs", distinct.len());
    }

    #[test]
    fn interpreting_generated_kernels_never_traps() {
        use crate::interp::{run_kernel, ArgValue};
        use crate::parser::parse_unit;
        use crate::validate::validate_unit;
        for seed in 0..40 {
            let g = random_kernel(seed);
            let unit = parse_unit(&g.source, "gen").unwrap();
            let checked = validate_unit(&unit).unwrap();
            let len = 33;
            let (a, b, n) = random_args(seed, g.elem, len);
            let args = vec![
                ArgValue::Array(a),
                ArgValue::Array(b),
                ArgValue::Scalar(crate::interp::ScalarValue::I32(n)),
                ArgValue::Array(ArrayData::zeros(g.elem, len)),
            ];
            let out = run_kernel(&unit, &checked, &g.name, args, &[])
                .unwrap_or_else(|t| panic!("seed {seed} trapped: {t}\n{}", g.source));
            // Float kernels must stay finite by construction.
            if let ArgValue::Array(ArrayData::F32(c)) = &out.args[3] {
                for (i, v) in c.iter().enumerate() {
                    assert!(v.is_finite(), "seed {seed}: c[{i}] = {v}\n{}", g.source);
                }
            }
        }
    }
}
