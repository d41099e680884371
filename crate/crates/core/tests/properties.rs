//! Cross-module properties, driven by the seeded kernel generator: the
//! pretty-printer/parser round trip, the virtual-ISA text round trip, and
//! assembler robustness against arbitrary and near-valid input.

use jacc_core::gen::random_kernel;
use jacc_core::parser::parse_unit;
use jacc_core::pipeline::{compile, PassConfig, PassId, PassSet};
use jacc_core::pretty::pp_unit;
use jacc_core::vka;
use proptest::prelude::*;

proptest! {
    /// Pretty-printing a parsed unit and parsing the result again is a
    /// fixpoint: the second print is byte-identical to the first.
    #[test]
    fn pretty_print_parse_fixpoint(seed in 0u64..500) {
        let g = random_kernel(seed);
        let unit0 = parse_unit(&g.source, "gen").unwrap();
        let s1 = pp_unit(&unit0);
        let unit1 = parse_unit(&s1, "pp").unwrap_or_else(|e| panic!("reparse failed: {e}\n{s1}"));
        let s2 = pp_unit(&unit1);
        prop_assert_eq!(s1, s2);
    }

    /// Emitted module text assembles back to functions that emit the very
    /// same text.
    #[test]
    fn vka_round_trip(seed in 0u64..500) {
        let g = random_kernel(seed);
        let cu = compile(&g.source, "gen", &PassConfig::default()).unwrap();
        let funcs = vka::assemble(&cu.vka_text)
            .unwrap_or_else(|e| panic!("assemble failed: {e}\n{}", cu.vka_text));
        prop_assert_eq!(vka::emit_module(&funcs), cu.vka_text);
    }

    /// Any pass subset still produces a verifiable, assemblable module, and
    /// the full pipeline never produces more instructions than no
    /// optimization at all.
    #[test]
    fn every_pass_subset_compiles(seed in 0u64..200, mask in 0u8..=255) {
        let g = random_kernel(seed);
        let mut passes = PassSet::none();
        for (bit, p) in PassId::ALL.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                passes = passes.with(*p);
            }
        }
        let cfg = PassConfig { passes, ..PassConfig::default() };
        let cu = compile(&g.source, "gen", &cfg).unwrap();
        vka::assemble(&cu.vka_text)
            .unwrap_or_else(|e| panic!("assemble failed: {e}\n{}", cu.vka_text));

        // Grid-striding itself adds setup instructions, so compare the
        // optimizing passes against a baseline with the same loop shape.
        let full = compile(&g.source, "gen", &PassConfig::default()).unwrap();
        let none = compile(
            &g.source,
            "gen",
            &PassConfig {
                passes: PassSet::none().with(PassId::Parallelize),
                ..PassConfig::default()
            },
        )
        .unwrap();
        prop_assert!(
            full.kernels[0].lowered.func.instruction_count()
                <= none.kernels[0].lowered.func.instruction_count()
        );
    }

    /// The assembler rejects or accepts, but never panics, on arbitrary
    /// text.
    #[test]
    fn assembler_never_panics_on_noise(s in "\\PC*") {
        let _ = vka::assemble(&s);
    }

    /// Nor on near-valid text: valid output with lines dropped, duplicated,
    /// or spliced with noise.
    #[test]
    fn assembler_never_panics_on_mutations(
        seed in 0u64..100,
        drop_at in 0usize..64,
        dup_at in 0usize..64,
        splice in "[ -~]{0,40}",
        splice_at in 0usize..64,
    ) {
        let g = random_kernel(seed);
        let cu = compile(&g.source, "gen", &PassConfig::default()).unwrap();
        let mut lines: Vec<String> = cu.vka_text.lines().map(str::to_owned).collect();
        if !lines.is_empty() {
            lines.remove(drop_at % lines.len());
        }
        if !lines.is_empty() {
            let d = lines[dup_at % lines.len()].clone();
            lines.push(d);
        }
        let at = splice_at % (lines.len() + 1);
        lines.insert(at, splice);
        let mutated = lines.join("\n");
        let _ = vka::assemble(&mutated);
    }
}

/// Assembler diagnostics carry 1-based line numbers that stay within the
/// input.
#[test]
fn assembler_errors_point_at_real_lines() {
    for seed in 0..50u64 {
        let g = random_kernel(seed);
        let cu = compile(&g.source, "gen", &PassConfig::default()).unwrap();
        let mut lines: Vec<&str> = cu.vka_text.lines().collect();
        let mid = lines.len() / 2;
        lines.insert(mid, "frobnicate %r0, %r1;");
        let text = lines.join("\n");
        match vka::assemble(&text) {
            Ok(_) => panic!("seed {seed}: junk line accepted"),
            Err(e) => {
                assert!(e.line >= 1 && e.line <= lines.len(), "seed {seed}: line {}", e.line);
                assert!(!e.message.is_empty());
            }
        }
    }
}
