//! The compilation pipeline: source text to virtual-ISA text.
//!
//! Stages run in a fixed order. On the structured IR: parallelization
//! (grid-striding annotated loops), call inlining, scalar replacement of
//! composite locals, and optional bounds-guard insertion; the unit is then
//! re-validated and each kernel lowered to the flat IR. On the flat IR: the
//! six-pass optimizer runs to a fixpoint, branches are if-converted to
//! `selp` where profitable, and the ISA bridge materializes immediates the
//! text format cannot carry. Inlining, scalar replacement, lowering, and
//! the bridge are mandatory; the other eight stages can be toggled
//! individually, which is how the pass-ablation harness measures each one.

use crate::bridge::bridge;
use crate::diag::Result;
use crate::lower::{lower_kernel, LoweredKernel};
use crate::opt::{optimize_lir, OptOptions};
use crate::parser::parse_unit;
use crate::passes::{inline_calls, insert_bounds_guards, parallelize, scalar_replace};
use crate::predicate::predicate;
use crate::pretty::pp_kernel;
use crate::ast::IdGen;
use crate::validate::validate_unit;
use crate::vka;

/// The individually toggleable passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PassId {
    Parallelize,
    ConstFold,
    CopyProp,
    Cse,
    Licm,
    Straighten,
    Dce,
    Predicate,
}

impl PassId {
    pub const ALL: [PassId; 8] = [
        PassId::Parallelize,
        PassId::ConstFold,
        PassId::CopyProp,
        PassId::Cse,
        PassId::Licm,
        PassId::Straighten,
        PassId::Dce,
        PassId::Predicate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PassId::Parallelize => "parallelize",
            PassId::ConstFold => "const-fold",
            PassId::CopyProp => "copy-prop",
            PassId::Cse => "cse",
            PassId::Licm => "licm",
            PassId::Straighten => "straighten",
            PassId::Dce => "dce",
            PassId::Predicate => "predicate",
        }
    }

    pub fn from_name(s: &str) -> Option<PassId> {
        PassId::ALL.iter().copied().find(|p| p.name() == s)
    }

    fn bit(self) -> u8 {
        match self {
            PassId::Parallelize => 1 << 0,
            PassId::ConstFold => 1 << 1,
            PassId::CopyProp => 1 << 2,
            PassId::Cse => 1 << 3,
            PassId::Licm => 1 << 4,
            PassId::Straighten => 1 << 5,
            PassId::Dce => 1 << 6,
            PassId::Predicate => 1 << 7,
        }
    }
}

/// Set of enabled passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PassSet(u8);

impl PassSet {
    pub fn all() -> Self {
        PassSet(0xFF)
    }

    pub fn none() -> Self {
        PassSet(0)
    }

    pub fn contains(self, p: PassId) -> bool {
        self.0 & p.bit() != 0
    }

    pub fn without(self, p: PassId) -> Self {
        PassSet(self.0 & !p.bit())
    }

    pub fn with(self, p: PassId) -> Self {
        PassSet(self.0 | p.bit())
    }
}

impl Default for PassSet {
    fn default() -> Self {
        PassSet::all()
    }
}

/// Pipeline stages a dump can be requested after.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Parallelize,
    Inline,
    ScalarReplace,
    ExceptionChecks,
    Lower,
    Optimize,
    Predicate,
    Bridge,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Parallelize,
        Stage::Inline,
        Stage::ScalarReplace,
        Stage::ExceptionChecks,
        Stage::Lower,
        Stage::Optimize,
        Stage::Predicate,
        Stage::Bridge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Parallelize => "parallelize",
            Stage::Inline => "inline",
            Stage::ScalarReplace => "scalar-replace",
            Stage::ExceptionChecks => "exception-checks",
            Stage::Lower => "lower",
            Stage::Optimize => "optimize",
            Stage::Predicate => "predicate",
            Stage::Bridge => "bridge",
        }
    }

    pub fn from_name(s: &str) -> Option<Stage> {
        Stage::ALL.iter().copied().find(|st| st.name() == s)
    }
}

/// Everything the pipeline needs to know besides the source text.
#[derive(Debug, Clone)]
pub struct PassConfig {
    /// Maximum call-inlining depth before the pipeline reports an error.
    pub inline_depth_limit: u32,
    /// Insert bounds guards ahead of every array access.
    pub exception_checks: bool,
    /// Which optional passes run.
    pub passes: PassSet,
    /// Capture a per-kernel dump after this stage.
    pub dump_after: Option<Stage>,
}

impl Default for PassConfig {
    fn default() -> Self {
        PassConfig {
            inline_depth_limit: 8,
            exception_checks: true,
            passes: PassSet::all(),
            dump_after: None,
        }
    }
}

/// One compiled kernel: the final flat IR plus host-side metadata, and the
/// requested stage dump if any.
#[derive(Debug)]
pub struct CompiledKernel {
    pub name: String,
    pub lowered: LoweredKernel,
    pub dump: Option<String>,
}

/// A compiled unit: all kernels plus the emitted module text.
#[derive(Debug)]
pub struct CompiledUnit {
    pub kernels: Vec<CompiledKernel>,
    pub vka_text: String,
}

/// Run the full pipeline over a source unit.
pub fn compile(src: &str, file: &str, cfg: &PassConfig) -> Result<CompiledUnit> {
    let mut unit = parse_unit(src, file)?;
    let env = validate_unit(&unit)?.env;
    let mut ids = IdGen::starting_at(unit.next_id);
    let mut dumps: Vec<Option<String>> = Vec::new();

    // Structured-IR stages. Kernels are taken out of the unit so inlining
    // can keep borrowing it for helper-function lookups.
    let mut hir = std::mem::take(&mut unit.kernels);
    for k in &mut hir {
        let mut dump = None;
        let mut grab = |stage: Stage, k: &crate::ast::KernelHir| {
            if cfg.dump_after == Some(stage) {
                dump = Some(pp_kernel(k));
            }
        };
        if cfg.passes.contains(PassId::Parallelize) {
            parallelize(k, &mut ids)?;
        }
        grab(Stage::Parallelize, k);
        inline_calls(&unit, k, &mut ids, cfg.inline_depth_limit)?;
        grab(Stage::Inline, k);
        scalar_replace(&env, k, &mut ids)?;
        grab(Stage::ScalarReplace, k);
        if cfg.exception_checks {
            insert_bounds_guards(k, &mut ids)?;
        }
        grab(Stage::ExceptionChecks, k);
        dumps.push(dump);
    }
    unit.kernels = hir;
    unit.next_id = ids.watermark();

    // Re-validate to mint fresh side tables for the transformed bodies.
    let checked = validate_unit(&unit)?;

    let mut kernels = Vec::new();
    let mut funcs = Vec::new();
    for (ki, k) in unit.kernels.iter().enumerate() {
        let mut dump = dumps[ki].take();
        let mut lk = lower_kernel(&checked.env, &checked.kernels[&k.name], k)?;
        grab_lir(cfg, Stage::Lower, &lk.func, &mut dump);
        optimize_lir(&mut lk.func, &opt_options(cfg.passes))?;
        grab_lir(cfg, Stage::Optimize, &lk.func, &mut dump);
        if cfg.passes.contains(PassId::Predicate) {
            predicate(&mut lk.func)?;
        }
        grab_lir(cfg, Stage::Predicate, &lk.func, &mut dump);
        bridge(&mut lk.func)?;
        grab_lir(cfg, Stage::Bridge, &lk.func, &mut dump);
        funcs.push(lk.func.clone());
        kernels.push(CompiledKernel { name: k.name.clone(), lowered: lk, dump });
    }
    let vka_text = vka::emit_module(&funcs);
    Ok(CompiledUnit { kernels, vka_text })
}

fn grab_lir(cfg: &PassConfig, stage: Stage, f: &crate::lir::LirFunc, dump: &mut Option<String>) {
    if cfg.dump_after == Some(stage) {
        *dump = Some(f.dump());
    }
}

fn opt_options(passes: PassSet) -> OptOptions {
    OptOptions {
        const_fold: passes.contains(PassId::ConstFold),
        copy_prop: passes.contains(PassId::CopyProp),
        cse: passes.contains(PassId::Cse),
        licm: passes.contains(PassId::Licm),
        straighten: passes.contains(PassId::Straighten),
        dce: passes.contains(PassId::Dce),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const VECADD: &str = r#"
        @jacc(iterationSpace=ONE_DIMENSION)
        kernel vecadd(@read a: f32[], @read b: f32[], @write c: f32[]) {
            for i in 0..len(c) {
                c[i] = a[i] + b[i];
            }
        }
    "#;

    #[test]
    fn default_compile_produces_assemblable_text() {
        let cu = compile(VECADD, "t", &PassConfig::default()).unwrap();
        assert_eq!(cu.kernels.len(), 1);
        let fs = crate::vka::assemble(&cu.vka_text).unwrap();
        assert_eq!(fs.len(), 1);
        assert_eq!(crate::vka::emit_module(&fs), cu.vka_text);
    }

    #[test]
    fn compilation_is_deterministic() {
        let a = compile(VECADD, "t", &PassConfig::default()).unwrap();
        let b = compile(VECADD, "t", &PassConfig::default()).unwrap();
        assert_eq!(a.vka_text, b.vka_text);
    }

    #[test]
    fn disabling_parallelize_drops_grid_striding() {
        let on = compile(VECADD, "t", &PassConfig::default()).unwrap();
        let mut cfg = PassConfig::default();
        cfg.passes = cfg.passes.without(PassId::Parallelize);
        let off = compile(VECADD, "t", &cfg).unwrap();
        assert!(on.vka_text.contains("%gid.0"), "{}", on.vka_text);
        assert!(!off.vka_text.contains("%gid.0"), "{}", off.vka_text);
    }

    #[test]
    fn every_single_pass_ablation_compiles_and_verifies() {
        for p in PassId::ALL {
            let mut cfg = PassConfig::default();
            cfg.passes = cfg.passes.without(p);
            let cu = compile(VECADD, "t", &cfg)
                .unwrap_or_else(|e| panic!("without {}: {e}", p.name()));
            crate::vka::assemble(&cu.vka_text)
                .unwrap_or_else(|e| panic!("without {}: {e}", p.name()));
        }
        // And with everything off at once.
        let cfg = PassConfig {
            passes: PassSet::none(),
            ..PassConfig::default()
        };
        let cu = compile(VECADD, "t", &cfg).unwrap();
        crate::vka::assemble(&cu.vka_text).unwrap();
    }

    #[test]
    fn ablations_never_shrink_instruction_count() {
        // Removing an eliminating pass must not make code smaller.
        let base = compile(VECADD, "t", &PassConfig::default()).unwrap();
        let base_count = base.kernels[0].lowered.func.instruction_count();
        for p in [PassId::Dce, PassId::Cse, PassId::Predicate, PassId::ConstFold] {
            let mut cfg = PassConfig::default();
            cfg.passes = cfg.passes.without(p);
            let cu = compile(VECADD, "t", &cfg).unwrap();
            assert!(
                cu.kernels[0].lowered.func.instruction_count() >= base_count,
                "disabling {} shrank the kernel",
                p.name()
            );
        }
    }

    #[test]
    fn dump_after_each_stage_is_available() {
        for stage in Stage::ALL {
            let cfg = PassConfig { dump_after: Some(stage), ..PassConfig::default() };
            let cu = compile(VECADD, "t", &cfg).unwrap();
            let dump = cu.kernels[0].dump.as_ref().unwrap();
            assert!(!dump.is_empty(), "stage {} produced no dump", stage.name());
        }
    }

    #[test]
    fn exception_toggle_controls_guards() {
        let with = compile(VECADD, "t", &PassConfig::default()).unwrap();
        let cfg = PassConfig { exception_checks: false, ..PassConfig::default() };
        let without = compile(VECADD, "t", &cfg).unwrap();
        assert!(with.vka_text.contains("trap.bounds"), "{}", with.vka_text);
        assert!(!without.vka_text.contains("trap.bounds"));
        assert!(
            with.kernels[0].lowered.func.instruction_count()
                > without.kernels[0].lowered.func.instruction_count()
        );
    }

    #[test]
    fn pass_names_round_trip() {
        for p in PassId::ALL {
            assert_eq!(PassId::from_name(p.name()), Some(p));
        }
        for s in Stage::ALL {
            assert_eq!(Stage::from_name(s.name()), Some(s));
        }
        assert_eq!(PassId::from_name("nope"), None);
    }

    #[test]
    fn multi_kernel_unit_compiles_to_one_module() {
        let src = r#"
            @jacc(iterationSpace=ONE_DIMENSION)
            kernel scale(@read a: f32[], @write c: f32[]) {
                for i in 0..len(c) { c[i] = a[i] * 2.0; }
            }
            @jacc(iterationSpace=ONE_DIMENSION)
            kernel shift(@read a: f32[], @write c: f32[]) {
                for i in 0..len(c) { c[i] = a[i] + 1.0; }
            }
        "#;
        let cu = compile(src, "t", &PassConfig::default()).unwrap();
        assert_eq!(cu.kernels.len(), 2);
        let fs = crate::vka::assemble(&cu.vka_text).unwrap();
        assert_eq!(fs.len(), 2);
    }

    #[test]
    fn inline_depth_limit_is_enforced() {
        let src = r#"
            fn f(x: i32) -> i32 {
                return g(x) + 1;
            }
            fn g(x: i32) -> i32 {
                return f(x) + 1;
            }
            @jacc(iterationSpace=NONE)
            kernel k(@write out: i32[]) {
                out[0] = f(3);
            }
        "#;
        let err = compile(src, "t", &PassConfig::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("inlin"), "{msg}");
    }
}
