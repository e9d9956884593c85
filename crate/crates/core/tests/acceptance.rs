//! Acceptance checks. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; exits nonzero if any fails.

mod common;

use std::path::Path;
use std::time::Instant;

use common::kernel_cases::{check_f32, check_i8};
use common::serialization::{check_identity, fuzz_case};
use common::*;
use mico::arena::{Arena, ArenaError, TensorArena};
use mico::cli::{run_cli, BenchResult};
use mico::converter::{attach_offline_plan, build_graph_text, quantize_post_training};
use mico::interpreter::Interpreter;
use mico::model::{serialize_model, Model};
use mico::planner::{optimal_plan_bruteforce, plan_greedy, plan_naive, validate_plan, AllocationRequest};
use mico::registry::Registry;
use mico::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

// Pinned thresholds.
const FIXTURE_OVERHEAD_MAX: f64 = 0.10;
const CONV_HEAVY_OVERHEAD_MAX: f64 = 0.01;
const COMPACTION_RATIO_MAX: f64 = 0.6;
const FIXTURE_TOTAL_MAX: usize = 64 * 1024;
const I8_QUANTA_MAX: i32 = 1;

type Check = Result<String, String>;

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut argv = vec!["mico"];
    argv.extend_from_slice(args);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_cli(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn bench(model: &Path, runs: usize) -> Result<BenchResult, String> {
    let runs = runs.to_string();
    let (code, out, err) = cli(&["--json", "bench", "--model", model.to_str().unwrap(), "--runs", &runs]);
    if code != 0 {
        return Err(format!("bench exited {code}: {err}"));
    }
    serde_json::from_str(&out).map_err(|e| e.to_string())
}

/// Eight 3x3 SAME convolutions over a 32x32x8 activation, then a classifier.
fn conv_heavy_model() -> Model<'static> {
    let mut tensors = vec![json!({"name": "x", "shape": [1, 32, 32, 3]})];
    let mut ops = Vec::new();
    let mut cur = "x".to_string();
    let mut channels = 3;
    for k in 0..8 {
        let (w, b, out) = (format!("w{k}"), format!("b{k}"), format!("c{k}"));
        tensors.push(json!({"name": w, "shape": [8, 3, 3, channels], "init": {"uniform": {"seed": 100 + k, "low": -0.3, "high": 0.3}}}));
        tensors.push(json!({"name": b, "shape": [8], "init": {"uniform": {"seed": 200 + k, "low": -0.05, "high": 0.05}}}));
        ops.push(json!({"opcode": "CONV_2D", "inputs": [cur, w, b], "outputs": [out],
            "params": {"padding": "SAME", "fused_activation": "RELU"}}));
        cur = out;
        channels = 8;
    }
    tensors.push(json!({"name": "fw", "shape": [10, 2048], "init": {"uniform": {"seed": 300, "low": -0.1, "high": 0.1}}}));
    ops.push(json!({"opcode": "MAX_POOL_2D", "inputs": [cur], "outputs": ["p"],
        "params": {"filter_h": 2, "filter_w": 2, "stride_h": 2, "stride_w": 2}}));
    ops.push(json!({"opcode": "RESHAPE", "inputs": ["p"], "outputs": ["f"], "params": {"new_shape": [1, 2048]}}));
    ops.push(json!({"opcode": "FULLY_CONNECTED", "inputs": ["f", "fw"], "outputs": ["l"]}));
    ops.push(json!({"opcode": "SOFTMAX", "inputs": ["l"], "outputs": ["y"]}));
    let spec = json!({"tensors": tensors, "ops": ops, "inputs": ["x"], "outputs": ["y"]});
    let float = build_graph_text(&spec.to_string()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples: Vec<Vec<Tensor>> = (0..4)
        .map(|_| vec![Tensor::from_f32(&[1, 32, 32, 3], &(0..3072).map(|_| rng.random_range(0.0f32..1.0)).collect::<Vec<_>>())])
        .collect();
    quantize_post_training(&float, &samples).unwrap()
}

fn interpreter_overhead() -> Check {
    let fixture = bench(&fixture_path("fixture_i8.mico"), 100)?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let heavy_path = dir.path().join("heavy.mico");
    let heavy = conv_heavy_model();
    let convs = heavy.ops.iter().filter(|o| o.opcode() == mico::model::Opcode::Conv2d).count();
    std::fs::write(&heavy_path, serialize_model(&heavy).unwrap()).map_err(|e| e.to_string())?;
    let heavy_bench = bench(&heavy_path, 20)?;
    let line = format!(
        "fixture overhead {:.3}% (< {:.0}%), {convs}-conv 32x32 model overhead {:.4}% (< {:.0}%)",
        fixture.overhead_ratio * 100.0,
        FIXTURE_OVERHEAD_MAX * 100.0,
        heavy_bench.overhead_ratio * 100.0,
        CONV_HEAVY_OVERHEAD_MAX * 100.0
    );
    if fixture.overhead_ratio < FIXTURE_OVERHEAD_MAX && heavy_bench.overhead_ratio < CONV_HEAVY_OVERHEAD_MAX && convs >= 8 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn random_requests(rng: &mut ChaCha8Rng, max_n: usize) -> Vec<AllocationRequest> {
    let n = rng.random_range(0..=max_n);
    let horizon = rng.random_range(1..=2 * max_n.max(1));
    (0..n)
        .map(|id| {
            let first = rng.random_range(0..horizon);
            let last = first + rng.random_range(0..=horizon / 2 + 1);
            AllocationRequest::new(id, rng.random_range(1..=512), first, last)
        })
        .collect()
}

fn planner_safety_and_dominance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut invalid, mut worse, mut raw_padding_losses) = (0, 0, 0);
    for _ in 0..10_000 {
        let reqs = random_requests(&mut rng, 100);
        let alignment = [1, 4, 16][rng.random_range(0..3)];
        if !validate_plan(&reqs, &plan_greedy(&reqs, alignment)).is_empty() {
            invalid += 1;
        }
        if plan_greedy(&reqs, alignment).arena_size > plan_naive(&reqs, alignment).arena_size {
            raw_padding_losses += 1;
        }
        // dominance holds once sizes are whole multiples of the alignment
        let padded: Vec<_> = reqs.iter().map(|r| AllocationRequest { size: r.size.next_multiple_of(alignment), ..*r }).collect();
        if plan_greedy(&padded, alignment).arena_size > plan_naive(&padded, alignment).arena_size {
            worse += 1;
        }
    }
    let line = format!(
        "10000 instances n<=100: {invalid} invalid plans, {worse} with greedy > naive \
         (alignment 1 or sizes padded to alignment; {raw_padding_losses} unpadded instances lose to alignment padding)"
    );
    if invalid == 0 && worse == 0 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn planner_optimality_sandwich() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = 0;
    let mut matched = 0;
    for _ in 0..1000 {
        let reqs = random_requests(&mut rng, 6);
        let optimal = optimal_plan_bruteforce(&reqs).map_err(|e| e.to_string())?;
        let greedy = plan_greedy(&reqs, 1).arena_size;
        if optimal > greedy || clique_lower_bound(&reqs) > optimal {
            violations += 1;
        }
        matched += usize::from(optimal == greedy);
    }
    let xyz = [AllocationRequest::new(0, 8, 0, 1), AllocationRequest::new(1, 4, 1, 2), AllocationRequest::new(2, 8, 2, 3)];
    let abc = [AllocationRequest::new(0, 10, 0, 2), AllocationRequest::new(1, 20, 1, 3), AllocationRequest::new(2, 15, 2, 4)];
    let examples = [
        (plan_greedy(&xyz, 1).arena_size, optimal_plan_bruteforce(&xyz).unwrap()),
        (plan_greedy(&abc, 1).arena_size, optimal_plan_bruteforce(&abc).unwrap()),
    ];
    let line = format!(
        "1000 instances n<=6: {violations} with lower bound <= optimal <= greedy violated ({matched} greedy-optimal); worked examples greedy/optimal {:?}",
        examples
    );
    if violations == 0 && examples == [(12, 12), (45, 45)] {
        Ok(line)
    } else {
        Err(line)
    }
}

/// Largest total size of requests live at one op. Those must be pairwise
/// disjoint, so no valid plan is smaller.
fn clique_lower_bound(reqs: &[AllocationRequest]) -> usize {
    let horizon = reqs.iter().map(|r| r.last_use).max().unwrap_or(0);
    (0..=horizon).map(|t| reqs.iter().filter(|r| r.first_use <= t && t <= r.last_use).map(|r| r.size).sum()).max().unwrap_or(0)
}

fn compaction() -> Check {
    // each buffer is produced by op i and consumed by op i+1, sizes staggered
    let sizes = [64, 48, 80, 32, 96, 40, 72, 56];
    let reqs: Vec<_> = sizes.iter().enumerate().map(|(i, &s)| AllocationRequest::new(i, s, i, i + 1)).collect();
    let naive = plan_naive(&reqs, 1).arena_size;
    let greedy = plan_greedy(&reqs, 1);
    let bound = clique_lower_bound(&reqs);
    let ratio = greedy.arena_size as f64 / naive as f64;
    let line = format!(
        "8 staggered buffers: naive {naive}, greedy {} (lower bound {bound}, so optimal), ratio {ratio:.3} (<= {COMPACTION_RATIO_MAX})",
        greedy.arena_size
    );
    if ratio <= COMPACTION_RATIO_MAX && validate_plan(&reqs, &greedy).is_empty() && greedy.arena_size == bound {
        Ok(line)
    } else {
        Err(line)
    }
}

fn zero_allocation_invoke() -> Check {
    let model = int8_fixture();
    let input = fixture_bytes("fixture_input.mten");
    let input = mico::tensor_file::decode_tensor(&input).map_err(|e| e.to_string())?;
    let registry = Registry::reference();
    let arena = TensorArena::new(16 * 1024).unwrap();
    let mut interp = Interpreter::new(&model, &registry, &arena).unwrap();
    interp.allocate_tensors().map_err(|e| e.to_string())?;
    let (before, state) = (arena.mutations(), arena.state());
    for _ in 0..1000 {
        interp.set_input(0, &input.data).unwrap();
        interp.invoke().map_err(|e| e.to_string())?;
    }
    let after = arena.mutations();
    let line = format!("1000 invokes: mutation counter {before} -> {after}");
    if before == after && state == arena.state() {
        Ok(line)
    } else {
        Err(line)
    }
}

#[derive(Clone, Copy)]
enum Step {
    Head,
    Tail,
}

/// Walks every sequence of up to `depth` head/tail allocations and compares
/// each outcome with the two-stack rule.
fn walk(arena: &Arena, depth: usize, steps: &mut usize, mismatches: &mut Vec<String>) {
    if depth == 0 {
        return;
    }
    const SIZES: [usize; 9] = [1, 7, 16, 33, 64, 100, 128, 200, 256];
    for step in [Step::Head, Step::Tail] {
        for size in SIZES {
            for align in [1, 16] {
                *steps += 1;
                let (head, tail) = (arena.head(), arena.tail());
                // independent statement of the rule
                let fits = match step {
                    Step::Head => head.next_multiple_of(align) + size <= tail,
                    Step::Tail => size <= tail && (tail - size) / align * align >= head,
                };
                let mut next = arena.clone();
                let result = match step {
                    Step::Head => next.alloc_head(size, align),
                    Step::Tail => next.alloc_tail(size, align),
                };
                match (fits, result) {
                    (true, Ok(_)) => walk(&next, depth - 1, steps, mismatches),
                    (false, Err(ArenaError::ArenaExhausted { .. })) if next == *arena => {}
                    (_, other) => mismatches.push(format!(
                        "head {head} tail {tail} {} size {size} align {align}: expected fit={fits}, got {other:?}",
                        if matches!(step, Step::Head) { "head" } else { "tail" }
                    )),
                }
            }
        }
    }
}

fn two_stack_exhaustion() -> Check {
    let mut steps = 0;
    let mut mismatches = Vec::new();
    walk(&Arena::new(256).unwrap(), 4, &mut steps, &mut mismatches);
    let line = format!("{steps} allocation steps over all sequences of length <= 4: {} false accepts/rejects", mismatches.len());
    if mismatches.is_empty() {
        Ok(line)
    } else {
        Err(format!("{line}; first: {}", mismatches[0]))
    }
}

fn kernel_oracles() -> Check {
    let mut worst = 0;
    for seed in 0..1000 {
        check_f32(seed)?;
        worst = worst.max(check_i8(seed)?);
    }
    let line = format!("1000 cases: F32 bit-exact, I8 worst {worst} quantum (<= {I8_QUANTA_MAX})");
    if worst <= I8_QUANTA_MAX {
        Ok(line)
    } else {
        Err(line)
    }
}

fn end_to_end_golden() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let planned = dir.path().join("planned.mico");
    let with_plan = attach_offline_plan(&int8_fixture(), 16).map_err(|e| e.to_string())?;
    std::fs::write(&planned, serialize_model(&with_plan).unwrap()).map_err(|e| e.to_string())?;
    let golden = fixture_bytes("fixture_golden.mten");
    let mut same = Vec::new();
    for (label, model) in [("greedy", fixture_path("fixture_i8.mico")), ("offline", planned)] {
        let out = dir.path().join(format!("{label}.mten"));
        let input = fixture_path("fixture_input.mten");
        let (code, _, err) = cli(&[
            "run",
            "--model",
            model.to_str().unwrap(),
            "--input",
            input.to_str().unwrap(),
            "--output",
            out.to_str().unwrap(),
        ]);
        if code != 0 {
            return Err(format!("{label} run exited {code}: {err}"));
        }
        same.push(std::fs::read(&out).map_err(|e| e.to_string())? == golden);
    }
    let line = format!("run output equals oracle golden: greedy {}, offline plan {}", same[0], same[1]);
    if same == [true, true] {
        Ok(line)
    } else {
        Err(line)
    }
}

fn run_solo(model: &Model<'_>, input: &Tensor) -> (mico::arena::ArenaUsage, Vec<u8>) {
    let registry = Registry::reference();
    let arena = TensorArena::new(64 * 1024).unwrap();
    let mut interp = Interpreter::new(model, &registry, &arena).unwrap();
    interp.allocate_tensors().unwrap();
    interp.set_input(0, &input.data).unwrap();
    interp.invoke().unwrap();
    (arena.usage(), interp.output_bytes(0).unwrap())
}

fn multitenancy() -> Check {
    let a = int8_fixture();
    let b = float_fixture();
    let input_b = mico::tensor_file::read_tensor_file(fixture_path("input_f32.mten")).map_err(|e| e.to_string())?;
    let input_a = quantize_input(&input_b, a.tensors[a.inputs[0]].quant.unwrap());
    let (solo_a, out_a) = run_solo(&a, &input_a);
    let (solo_b, out_b) = run_solo(&b, &input_b);

    let registry = Registry::reference();
    let arena = TensorArena::new(64 * 1024).unwrap();
    let mut ia = Interpreter::new(&a, &registry, &arena).unwrap();
    let mut ib = Interpreter::new(&b, &registry, &arena).unwrap();
    ia.allocate_tensors().map_err(|e| e.to_string())?;
    ib.allocate_tensors().map_err(|e| e.to_string())?;
    let shared = arena.usage();
    let mut outputs_match = true;
    for _ in 0..3 {
        ia.set_input(0, &input_a.data).unwrap();
        ia.invoke().map_err(|e| e.to_string())?;
        outputs_match &= ia.output_bytes(0).unwrap() == out_a;
        ib.set_input(0, &input_b.data).unwrap();
        ib.invoke().map_err(|e| e.to_string())?;
        outputs_match &= ib.output_bytes(0).unwrap() == out_b;
    }
    let persistent_ok = shared.persistent_bytes == solo_a.persistent_bytes + solo_b.persistent_bytes;
    let nonpersistent_ok = shared.nonpersistent_bytes == solo_a.nonpersistent_bytes.max(solo_b.nonpersistent_bytes);
    let line = format!(
        "I8 + F32 fixture: persistent {} = {} + {}, nonpersistent {} = max({}, {}), outputs match solo: {outputs_match}",
        shared.persistent_bytes,
        solo_a.persistent_bytes,
        solo_b.persistent_bytes,
        shared.nonpersistent_bytes,
        solo_a.nonpersistent_bytes,
        solo_b.nonpersistent_bytes
    );
    if persistent_ok && nonpersistent_ok && outputs_match {
        Ok(line)
    } else {
        Err(line)
    }
}

fn serialization() -> Check {
    for seed in 0..1000 {
        check_identity(seed)?;
    }
    let mut accepted = 0;
    for seed in 0..10_000 {
        accepted += usize::from(fuzz_case(seed)? == common::serialization::FuzzOutcome::Accepted);
    }
    Ok(format!(
        "1000 random models round-trip; 10000 mutated files: {} categorized rejections, {accepted} still valid and runnable, 0 panics",
        10_000 - accepted
    ))
}

fn memory_report() -> Check {
    let model = int8_fixture();
    let registry = Registry::reference();
    let arena = TensorArena::new(64 * 1024).unwrap();
    let mut interp = Interpreter::new(&model, &registry, &arena).unwrap();
    interp.allocate_tensors().map_err(|e| e.to_string())?;
    let report = interp.memory_report().map_err(|e| e.to_string())?;
    let weights: usize = model.buffers.iter().map(|b| b.len()).sum();
    let line = format!(
        "I8 fixture: persistent {} + nonpersistent {} = {} bytes (< {FIXTURE_TOTAL_MAX}); weights {weights} bytes stay in the model",
        report.persistent_bytes, report.nonpersistent_bytes, report.total_bytes
    );
    if report.total_bytes < FIXTURE_TOTAL_MAX {
        Ok(line)
    } else {
        Err(line)
    }
}

fn main() {
    let criteria: [(&str, fn() -> Check); 11] = [
        ("interpreter overhead", interpreter_overhead),
        ("planner safety and dominance", planner_safety_and_dominance),
        ("planner optimality sandwich", planner_optimality_sandwich),
        ("plan compaction", compaction),
        ("zero-allocation invoke", zero_allocation_invoke),
        ("two-stack exhaustion", two_stack_exhaustion),
        ("kernel oracle equivalence", kernel_oracles),
        ("end-to-end golden", end_to_end_golden),
        ("multitenancy accounting", multitenancy),
        ("serialization", serialization),
        ("memory report", memory_report),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
