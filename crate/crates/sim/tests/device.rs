//! End-to-end device tests: kernels written in the DSL, compiled through the
//! full pipeline, and executed on the simulator. Covers the documented
//! execution-model contracts (atomic reductions, barrier semantics, racy
//! cross-group visibility, performance counters) and the differential
//! equivalence between the simulator and the reference interpreter.

use jacc_core::gen;
use jacc_core::interp::{self, ArgValue, ArrayData, FieldValue, ScalarValue};
use jacc_core::lir::LirFunc;
use jacc_core::parser::parse_unit;
use jacc_core::pipeline::{compile, PassConfig};
use jacc_core::types::ScalarType;
use jacc_core::validate::validate_unit;
use jacc_sim::{Device, DeviceConfig, LaunchSchedule, SimArg, SimTrap};

fn compile_kernel(src: &str, cfg: &PassConfig) -> LirFunc {
    let unit = compile(src, "test", cfg).expect("kernel compiles");
    assert_eq!(unit.kernels.len(), 1, "expected a single kernel");
    unit.kernels.into_iter().next().unwrap().lowered.func
}

fn field<'a>(fields: &'a [(String, FieldValue)], name: &str) -> &'a FieldValue {
    &fields.iter().find(|(n, _)| n == name).expect("field present").1
}

const REDUCE_SRC: &str = "\
@jacc(iterationSpace=ONE_DIMENSION)
kernel reduce(@read a: i32[]) {
    @atomic(op=ADD) field result: i32;
    for i in 0..len(a) {
        result += a[i];
    }
}
";

#[test]
fn atomic_reduction_is_exact_for_every_seed_and_worker_count() {
    let func = compile_kernel(REDUCE_SRC, &PassConfig::default());
    let input = ArrayData::I32((1..=1024).collect());
    let sched = LaunchSchedule::linear(256, 64);
    for workers in [1usize, 2, 8] {
        let dev = Device::with_config(DeviceConfig { workers, ..DeviceConfig::default() });
        for seed in 0..24u64 {
            let out = dev
                .launch(&func, &sched, vec![SimArg::Buffer(input.clone())], &[], seed)
                .unwrap();
            assert_eq!(
                *field(&out.fields, "result"),
                FieldValue::Scalar(ScalarValue::I32(524_800)),
                "seed {seed}, {workers} workers"
            );
            assert!(
                out.metrics.shared_atomics > 0,
                "the accumulator is staged through shared memory"
            );
            assert!(out.metrics.barriers_executed > 0, "the flush epilogue synchronizes");
        }
    }
}

#[test]
fn barrier_publishes_shared_writes_to_group_neighbors() {
    let src = "\
@jacc(iterationSpace=NONE)
kernel neigh(@write out: i32[]) {
    @shared field tmp: i32[4];
    var t = thread_id(0);
    tmp[t] = (t + 1) * 10;
    barrier();
    out[global_id(0)] = tmp[(t + 1) % 4];
}
";
    let func = compile_kernel(src, &PassConfig::default());
    let dev = Device::new();
    let sched = LaunchSchedule::linear(8, 4);
    for seed in 0..8u64 {
        let out = dev
            .launch(&func, &sched, vec![SimArg::Buffer(ArrayData::zeros(ScalarType::I32, 8))], &[], seed)
            .unwrap();
        let SimArg::Buffer(ArrayData::I32(v)) = &out.args[0] else {
            panic!("i32 buffer comes back");
        };
        // Every thread must observe its neighbor's pre-barrier write.
        let expect: Vec<i32> =
            (0..8).map(|i| ((i % 4 + 1) % 4 + 1) * 10).collect();
        assert_eq!(*v, expect, "seed {seed}");
        assert_eq!(out.metrics.barriers_executed, 2, "one rendezvous per group");
    }
}

#[test]
fn unsynchronized_cross_group_reads_vary_with_the_schedule() {
    let src = "\
@jacc(iterationSpace=NONE)
kernel racy(@write out: i32[]) {
    field flag: i32;
    if (thread_id(0) == 0) {
        if (group_id(0) == 0) {
            flag = 1;
        }
        out[group_id(0)] = flag;
    }
}
";
    let func = compile_kernel(src, &PassConfig::default());
    // Sequential execution isolates the schedule effect: the only source of
    // variation is the seeded group permutation.
    let dev = Device::with_config(DeviceConfig { workers: 1, ..DeviceConfig::default() });
    let sched = LaunchSchedule::linear(64, 4);
    let mut distinct = std::collections::HashSet::new();
    for seed in 0..24u64 {
        let out = dev
            .launch(&func, &sched, vec![SimArg::Buffer(ArrayData::zeros(ScalarType::I32, 16))], &[], seed)
            .unwrap();
        let SimArg::Buffer(ArrayData::I32(v)) = &out.args[0] else {
            panic!("i32 buffer comes back");
        };
        assert_eq!(v[0], 1, "group 0 always sees its own write");
        distinct.insert(v.clone());
    }
    assert!(
        distinct.len() >= 2,
        "a racy flag must be schedule-dependent; saw {} distinct outcomes",
        distinct.len()
    );
}

#[test]
fn vector_add_issues_exactly_2n_loads_and_n_stores() {
    let src = "\
@jacc(iterationSpace=ONE_DIMENSION)
kernel vecadd(@read a: f32[], @read b: f32[], @write c: f32[]) {
    for i in 0..len(c) {
        c[i] = a[i] + b[i];
    }
}
";
    let cfg = PassConfig { exception_checks: false, ..PassConfig::default() };
    let func = compile_kernel(src, &cfg);
    let n = 1 << 12;
    let a = ArrayData::F32((0..n).map(|i| i as f32).collect());
    let b = ArrayData::F32((0..n).map(|i| (n - i) as f32).collect());
    let dev = Device::new();
    let sched = LaunchSchedule::linear(256, 64);
    let out = dev
        .launch(
            &func,
            &sched,
            vec![
                SimArg::Buffer(a),
                SimArg::Buffer(b),
                SimArg::Buffer(ArrayData::zeros(ScalarType::F32, n)),
            ],
            &[],
            3,
        )
        .unwrap();
    assert_eq!(out.metrics.global_loads, 2 * n as u64);
    assert_eq!(out.metrics.global_stores, n as u64);
    let SimArg::Buffer(ArrayData::F32(c)) = &out.args[2] else {
        panic!("f32 buffer comes back");
    };
    assert!(c.iter().all(|&x| x == n as f32), "every element sums to n");
}

#[test]
fn integer_kernels_are_bit_identical_across_seeds_and_worker_counts() {
    let func = compile_kernel(REDUCE_SRC, &PassConfig::default());
    let input = ArrayData::I32((0..2048i64).map(|i| (i.wrapping_mul(2654435761)) as i32).collect());
    let sched = LaunchSchedule::linear(128, 32);

    let reference = Device::with_config(DeviceConfig { workers: 1, ..DeviceConfig::default() })
        .launch(&func, &sched, vec![SimArg::Buffer(input.clone())], &[], 0)
        .unwrap();

    for workers in [1usize, 2, 8] {
        let dev = Device::with_config(DeviceConfig { workers, ..DeviceConfig::default() });
        for seed in 0..20u64 {
            let out = dev
                .launch(&func, &sched, vec![SimArg::Buffer(input.clone())], &[], seed)
                .unwrap();
            assert_eq!(out.args, reference.args, "seed {seed}, {workers} workers");
            assert_eq!(out.fields, reference.fields, "seed {seed}, {workers} workers");
            // Per-group tallies are schedule-independent, so whole-launch
            // metrics are too (the seed field aside).
            let mut m = out.metrics;
            m.group_schedule_seed = reference.metrics.group_schedule_seed;
            assert_eq!(m, reference.metrics, "seed {seed}, {workers} workers");
        }
    }
}

#[test]
fn exiting_a_barrier_group_early_is_a_trap() {
    // The waiters reach the barrier within a few instructions; the other
    // two threads grind through a long loop first, so the exit is guaranteed
    // to happen while peers are parked.
    let src = "\
@jacc(iterationSpace=NONE)
kernel skew(@write out: i32[]) {
    var t = thread_id(0);
    if (t < 2) {
        barrier();
        out[global_id(0)] = 0 - 1;
    } else {
        var acc = 0;
        for j in 0..64 {
            acc = acc + j;
        }
        out[global_id(0)] = acc;
    }
}
";
    let func = compile_kernel(src, &PassConfig::default());
    let dev = Device::new();
    let err = dev
        .launch(
            &func,
            &LaunchSchedule::linear(4, 4),
            vec![SimArg::Buffer(ArrayData::zeros(ScalarType::I32, 4))],
            &[],
            0,
        )
        .unwrap_err();
    match err {
        SimTrap::BarrierDivergence { group: 0, waiting } => {
            assert_eq!(waiting, 2, "both branch-takers were parked")
        }
        other => panic!("expected a barrier-divergence trap, got {other}"),
    }
}

#[test]
fn constant_fields_feed_kernels_and_reject_host_writes_to_group_space() {
    let src = "\
@jacc(iterationSpace=ONE_DIMENSION)
kernel lutk(@write out: i32[]) {
    @constant field lut: i32[4];
    for i in 0..len(out) {
        out[i] = lut[i % 4];
    }
}
";
    let func = compile_kernel(src, &PassConfig::default());
    let dev = Device::new();
    let init = vec![("lut".to_string(), FieldValue::Array(ArrayData::I32(vec![7, 8, 9, 10])))];
    let out = dev
        .launch(
            &func,
            &LaunchSchedule::linear(8, 4),
            vec![SimArg::Buffer(ArrayData::zeros(ScalarType::I32, 8))],
            &init,
            0,
        )
        .unwrap();
    let SimArg::Buffer(ArrayData::I32(v)) = &out.args[0] else {
        panic!("i32 buffer comes back");
    };
    assert_eq!(*v, vec![7, 8, 9, 10, 7, 8, 9, 10]);
    assert_eq!(
        *field(&out.fields, "lut"),
        FieldValue::Array(ArrayData::I32(vec![7, 8, 9, 10])),
        "constant contents are unchanged"
    );

    // Kernel writes to constant space never compile.
    let bad = "\
@jacc(iterationSpace=NONE)
kernel badk() {
    @constant field lut: i32[4];
    lut[0] = 1;
}
";
    assert!(compile(bad, "test", &PassConfig::default()).is_err());

    // Shared fields are group-local; host initialization is rejected.
    let shared_src = "\
@jacc(iterationSpace=NONE)
kernel sh(@write out: i32[]) {
    @shared field tmp: i32[4];
    tmp[thread_id(0)] = 1;
    out[global_id(0)] = tmp[thread_id(0)];
}
";
    let func = compile_kernel(shared_src, &PassConfig::default());
    let err = dev
        .launch(
            &func,
            &LaunchSchedule::linear(4, 4),
            vec![SimArg::Buffer(ArrayData::zeros(ScalarType::I32, 4))],
            &[("tmp".to_string(), FieldValue::Array(ArrayData::I32(vec![0; 4])))],
            0,
        )
        .unwrap_err();
    assert!(matches!(err, SimTrap::Invalid(_)), "{err}");
}

#[test]
fn atomic_accumulators_ignore_host_initialization() {
    let func = compile_kernel(REDUCE_SRC, &PassConfig::default());
    let dev = Device::new();
    let out = dev
        .launch(
            &func,
            &LaunchSchedule::linear(16, 4),
            vec![SimArg::Buffer(ArrayData::I32(vec![1; 64]))],
            &[("result".to_string(), FieldValue::Scalar(ScalarValue::I32(1_000_000)))],
            0,
        )
        .unwrap();
    assert_eq!(
        *field(&out.fields, "result"),
        FieldValue::Scalar(ScalarValue::I32(64)),
        "accumulation starts at zero"
    );
}

#[test]
fn data_dependent_branches_show_up_in_the_divergence_counter() {
    let src = "\
@jacc(iterationSpace=ONE_DIMENSION)
kernel sign(@read a: i32[], @write c: i32[]) {
    for i in 0..len(c) {
        if (a[i] > 0) {
            c[i] = 1;
        } else {
            c[i] = 0 - 1;
        }
    }
}
";
    let func = compile_kernel(src, &PassConfig::default());
    let dev = Device::new();
    let sched = LaunchSchedule::linear(64, 16);
    let n = 256usize;
    let run = |a: ArrayData| {
        dev.launch(
            &func,
            &sched,
            vec![SimArg::Buffer(a), SimArg::Buffer(ArrayData::zeros(ScalarType::I32, n))],
            &[],
            0,
        )
        .unwrap()
        .metrics
        .divergent_branches
    };
    let alternating = run(ArrayData::I32((0..n).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect()));
    let uniform = run(ArrayData::I32(vec![1; n]));
    assert!(
        alternating > uniform,
        "alternating signs ({alternating}) must out-diverge a uniform input ({uniform})"
    );
}

/// The generated-kernel differential: the compiled kernel on the simulator
/// must reproduce the reference interpreter bit for bit. The generator
/// produces race-free kernels (each thread owns `c[i]`), so this holds for
/// f32 as well — both engines share the same arithmetic kernels.
#[test]
fn compiled_kernels_match_the_interpreter_on_random_programs() {
    let sched = LaunchSchedule::linear(128, 32);
    let dev = Device::new();
    for seed in 0..60u64 {
        let gk = gen::random_kernel(seed);
        let len = 257; // deliberately not a multiple of the thread count
        let (a, b, n) = gen::random_args(seed, gk.elem, len);

        let unit = parse_unit(&gk.source, "gen").expect("generated source parses");
        let checked = validate_unit(&unit).expect("generated source validates");
        let reference = interp::run_kernel(
            &unit,
            &checked,
            &gk.name,
            vec![
                ArgValue::Array(a.clone()),
                ArgValue::Array(b.clone()),
                ArgValue::Scalar(ScalarValue::I32(n)),
                ArgValue::Array(ArrayData::zeros(gk.elem, len)),
            ],
            &[],
        )
        .expect("generated kernels never trap");

        let func = compile_kernel(&gk.source, &PassConfig::default());
        let out = dev
            .launch(
                &func,
                &sched,
                vec![
                    SimArg::Buffer(a),
                    SimArg::Buffer(b),
                    SimArg::Scalar(ScalarValue::I32(n)),
                    SimArg::Buffer(ArrayData::zeros(gk.elem, len)),
                ],
                &[],
                seed,
            )
            .unwrap_or_else(|t| panic!("seed {seed}: simulator trapped: {t}"));

        let ArgValue::Array(want) = &reference.args[3] else { panic!("array result") };
        let SimArg::Buffer(got) = &out.args[3] else { panic!("array result") };
        assert_bits_equal(want, got, seed);
    }
}

fn assert_bits_equal(want: &ArrayData, got: &ArrayData, seed: u64) {
    match (want, got) {
        (ArrayData::F32(w), ArrayData::F32(g)) => {
            for (i, (x, y)) in w.iter().zip(g).enumerate() {
                assert!(
                    x.to_bits() == y.to_bits(),
                    "seed {seed}, element {i}: interpreter {x:?} vs simulator {y:?}"
                );
            }
        }
        (w, g) => assert_eq!(w, g, "seed {seed}"),
    }
}

/// Oversized iteration spaces are legal: the grid-stride schedule simply
/// leaves surplus threads without elements, and undersized launches make
/// each thread cover several.
#[test]
fn any_positive_thread_count_covers_the_iteration_space() {
    let src = "\
@jacc(iterationSpace=ONE_DIMENSION)
kernel fill(@write c: i32[]) {
    for i in 0..len(c) {
        c[i] = i * 3;
    }
}
";
    let func = compile_kernel(src, &PassConfig::default());
    let dev = Device::new();
    let n = 100usize;
    let expect: Vec<i32> = (0..n as i32).map(|i| i * 3).collect();
    for (global, group) in [(4u32, 2u32), (64, 16), (512, 64), (1024, 128)] {
        let out = dev
            .launch(
                &func,
                &LaunchSchedule::linear(global, group),
                vec![SimArg::Buffer(ArrayData::zeros(ScalarType::I32, n))],
                &[],
                1,
            )
            .unwrap();
        let SimArg::Buffer(ArrayData::I32(v)) = &out.args[0] else { panic!() };
        assert_eq!(*v, expect, "global {global}, group {group}");
    }
}

#[test]
fn bounds_violations_trap_with_the_faulting_index() {
    let src = "\
@jacc(iterationSpace=ONE_DIMENSION)
kernel oob(@read a: i32[], @write c: i32[]) {
    for i in 0..len(c) {
        c[i] = a[i + 3];
    }
}
";
    let func = compile_kernel(src, &PassConfig::default());
    let dev = Device::new();
    let err = dev
        .launch(
            &func,
            &LaunchSchedule::linear(8, 4),
            vec![
                SimArg::Buffer(ArrayData::I32(vec![0; 8])),
                SimArg::Buffer(ArrayData::zeros(ScalarType::I32, 8)),
            ],
            &[],
            0,
        )
        .unwrap_err();
    match err {
        SimTrap::Bounds { array, index, len } => {
            assert_eq!(array, "a");
            assert_eq!(len, 8);
            assert!((8..11).contains(&index), "first out-of-range access, got {index}");
        }
        other => panic!("expected a bounds trap, got {other}"),
    }
}
