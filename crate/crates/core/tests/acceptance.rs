//! Acceptance suite: one test per criterion, each printing a PASS line
//! when its checks hold. Oracles here are written against definitions,
//! not against the library's internals.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use parasearch_core::catalog::{GpuCatalog, ModelArch, TrainConfig};
use parasearch_core::costsim::{
    op_compute_time, EfficiencyModel, OpDesc, OpKind, Phase, StageCost,
};
use parasearch_core::fixtures::{list_fixtures, load_fixture, Fixture};
use parasearch_core::hetero::{
    enumerate_partitions, hetero_pipeline_time, simulate_pipeline_schedule, LayerMode, StageTimes,
    TypeLimit,
};
use parasearch_core::memest::{check_strategy, stage_memory, MemCoeffs};
use parasearch_core::modes::{GpuConfig, SearchRequest};
use parasearch_core::pareto::{
    pareto_pool, select_best_within_budget, Dominance, ParetoPoint,
};
use parasearch_core::report::{report_json, SearchReport};
use parasearch_core::rulelang::{
    eval_expr, parse_expr, parse_rules, BinOp, RuleExpr, Value,
};
use parasearch_core::search::{run_search, SearchInputs};
use parasearch_core::strategy::{
    MoeParams, ParallelParams, RecomputeGranularity, RecomputeMethod, Strategy, StrategyId,
};

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    let scale = a.abs().max(b.abs()).max(1e-300);
    (a - b).abs() <= tol * scale
}

fn random_stage_times(rng: &mut ChaCha8Rng, stages: usize) -> StageTimes {
    let compute: Vec<f64> = (0..stages).map(|_| 10.0 - rng.gen_range(0.0..10.0)).collect();
    let p2p: Vec<f64> = (0..stages)
        .map(|_| {
            if rng.gen_bool(0.3) {
                0.0
            } else {
                rng.gen_range(0.0..2.0)
            }
        })
        .collect();
    StageTimes::new(compute, p2p)
}

/// Criterion 1: the closed-form pipeline latency equals the event-driven
/// schedule on 1000 random instances, within 1e-12 relative, in under a
/// second.
#[test]
fn acceptance_01_hetero_formula_matches_schedule_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0001);
    let start = Instant::now();
    for trial in 0..1000 {
        let stages = rng.gen_range(1..=6);
        let k = rng.gen_range(1..=8);
        let times = random_stage_times(&mut rng, stages);
        let closed = hetero_pipeline_time(&times, k);
        let simulated = simulate_pipeline_schedule(&times, k);
        assert!(
            rel_close(closed, simulated, 1e-12),
            "trial {trial}: closed {closed} vs schedule {simulated} for {times:?} K={k}"
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 1.0, "oracle comparison took {elapsed}s");
    println!("acceptance 1 (hetero formula == schedule oracle, 1000 instances, {elapsed:.3}s): PASS");
}

/// Criterion 2: equal stages with no transfer time reduce to the classic
/// (P + K - 1) * t fill-drain count exactly, and a single-stage pipeline
/// has exactly zero bubble.
#[test]
fn acceptance_02_degenerate_consistency() {
    for (p, k, t) in [
        (1usize, 1u64, 1.0f64),
        (4, 8, 0.25),
        (4, 8, 1.75),
        (6, 3, 2.5),
        (3, 7, 0.5),
    ] {
        let stages = StageTimes::new(vec![t; p], vec![0.0; p]);
        let expected = (p as u64 + k - 1) as f64 * t;
        assert_eq!(hetero_pipeline_time(&stages, k), expected, "P={p} K={k} t={t}");
        assert_eq!(simulate_pipeline_schedule(&stages, k), expected);
    }

    // homogeneous path: one pipeline stage means no bubble at all
    let train = TrainConfig::new(8, 128);
    let s = test_strategy(1, 1, 8, 1, &tiny_arch());
    let stage = StageCost {
        t_fwd: 0.125,
        t_bwd: 0.25,
        h_fwd: 0.0,
        h_bwd: 0.0,
        t_dp_comm: 0.5,
    };
    let bd =
        parasearch_core::costsim::iteration_time_homogeneous(&s, &stage, 1, &train).unwrap();
    assert_eq!(bd.t_bubble, 0.0);
    assert_eq!(bd.t_total, bd.t_comp + bd.t_comm + bd.t_bubble);
    println!("acceptance 2 (degenerate pipeline consistency): PASS");
}

/// Brute-force generate-and-test over every (m_i, n_i) tuple, straight
/// from the constraint system's definition.
fn brute_force_partitions(
    p: u64,
    n: u64,
    limits: &[TypeLimit],
    dp: u64,
    tp: u64,
) -> BTreeSet<Vec<(String, u64, u64)>> {
    let m = limits.len() as u32;
    let mut results = BTreeSet::new();
    for code in 0..(p + 1).pow(m) {
        let mut split = Vec::new();
        let mut rest = code;
        for _ in 0..m {
            split.push(rest % (p + 1));
            rest /= p + 1;
        }
        let feasible = split.iter().sum::<u64>() == p
            && split
                .iter()
                .enumerate()
                .all(|(i, &mi)| mi <= limits[i].max_gpus / (dp * tp));
        if !feasible {
            continue;
        }
        let used: Vec<usize> = (0..m as usize).filter(|&i| split[i] > 0).collect();
        for layer_code in 0..n.pow(used.len() as u32) {
            let mut layers = Vec::new();
            let mut rest = layer_code;
            for _ in 0..used.len() {
                layers.push(rest % n + 1);
                rest /= n;
            }
            let total: u64 = used
                .iter()
                .zip(&layers)
                .map(|(&i, &ni)| split[i] * ni)
                .sum();
            if total == n {
                results.insert(
                    used.iter()
                        .zip(&layers)
                        .map(|(&i, &ni)| (limits[i].gpu_type.clone(), split[i], ni))
                        .collect(),
                );
            }
        }
    }
    results
}

/// Criterion 3: partition enumeration equals brute force over the whole
/// small grid, and the documented P=2, M=2, N=4 case yields exactly 5
/// partitions, in under five seconds.
#[test]
fn acceptance_03_partition_enumeration_completeness() {
    let start = Instant::now();
    let limit_choices: Vec<Vec<u64>> = vec![
        vec![u64::MAX / 4],
        vec![u64::MAX / 4, u64::MAX / 4],
        vec![4, u64::MAX / 4],
        vec![0, u64::MAX / 4],
        vec![u64::MAX / 4, u64::MAX / 4, u64::MAX / 4],
        vec![2, 3, u64::MAX / 4],
    ];
    let mut checked = 0u64;
    for p in 1..=6u64 {
        for n in 1..=12u64 {
            for caps in &limit_choices {
                for (dp, tp) in [(1u64, 1u64), (2, 1), (2, 2)] {
                    let limits: Vec<TypeLimit> = caps
                        .iter()
                        .enumerate()
                        .map(|(i, &max_gpus)| TypeLimit {
                            gpu_type: format!("T{i}"),
                            max_gpus,
                        })
                        .collect();
                    let got =
                        enumerate_partitions(p, n, &limits, dp, tp, LayerMode::UniformPerType)
                            .unwrap();
                    let got_set: BTreeSet<Vec<(String, u64, u64)>> = got
                        .iter()
                        .map(|part| {
                            part.segments
                                .iter()
                                .map(|s| (s.gpu_type.clone(), s.stages, s.layers_per_stage))
                                .collect()
                        })
                        .collect();
                    assert_eq!(got_set.len(), got.len(), "duplicates at P={p} N={n}");
                    let want = brute_force_partitions(p, n, &limits, dp, tp);
                    assert_eq!(got_set, want, "P={p} N={n} caps={caps:?} dp={dp} tp={tp}");
                    checked += 1;
                    // polynomial growth: measured count stays within the
                    // O(P^(M-1)) * O(N^(M-1)) envelope
                    let m = limits.len() as u32;
                    let bound = 16u128 * (p as u128 * n as u128).pow(m.saturating_sub(1)) + 1;
                    assert!((got.len() as u128) <= bound, "count {} beyond bound {bound}", got.len());
                }
            }
        }
    }
    let five_case = enumerate_partitions(
        2,
        4,
        &[
            TypeLimit {
                gpu_type: "A".into(),
                max_gpus: u64::MAX / 4,
            },
            TypeLimit {
                gpu_type: "B".into(),
                max_gpus: u64::MAX / 4,
            },
        ],
        1,
        1,
        LayerMode::UniformPerType,
    )
    .unwrap();
    assert_eq!(five_case.len(), 5);
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 5.0, "completeness sweep took {elapsed}s");
    println!(
        "acceptance 3 (partition enumeration == brute force, {checked} grids, {elapsed:.3}s): PASS"
    );
}

fn tiny_arch() -> ModelArch {
    ModelArch {
        family: "tiny".into(),
        num_layers: 8,
        hidden_size: 64,
        num_heads: 8,
        intermediate_size: 128,
        vocab_size: 256,
    }
}

fn test_strategy(pp: u64, tp: u64, dp: u64, micro_batch: u64, arch: &ModelArch) -> Strategy {
    let total = pp * tp * dp;
    Strategy::new(
        GpuConfig::Fixed {
            entries: vec![("A".into(), total)],
            total,
        },
        ParallelParams {
            pp,
            tp,
            dp,
            micro_batch,
            vpp_layers: None,
            sequence_parallel: false,
            distributed_optimizer: false,
            recompute_granularity: RecomputeGranularity::None,
            recompute_method: RecomputeMethod::None,
            recompute_num_layers: 1,
            offload_optimizer: false,
            overlap_p2p: false,
            tp_comm_overlap: false,
            overlap_grad_reduce: false,
            overlap_param_gather: false,
            use_flash_attn: true,
            moe: None,
        },
        arch.clone(),
        None,
    )
}

const FUZZ_ALPHABET: &[char] = &[
    '0', '1', '2', '9', 'a', 'b', 'x', '_', '$', '(', ')', '*', '%', '+', '-', '=', '!', '<',
    '>', '&', '|', ' ', '\t', 'N', 'λ', '#',
];

fn random_tree(rng: &mut ChaCha8Rng, depth: u32) -> RuleExpr {
    if depth == 0 || rng.gen_bool(0.3) {
        return match rng.gen_range(0..5) {
            // the grammar has no unary minus, so literals are non-negative
            // (negatives still arise through subtraction)
            0 => RuleExpr::Int(rng.gen_range(0..20)),
            1 => RuleExpr::Bool(rng.gen_bool(0.5)),
            2 => RuleExpr::Sym(["selective", "block", "alpha"][rng.gen_range(0..3)].into()),
            3 => RuleExpr::None,
            _ => RuleExpr::Var(["a", "b", "c", "x", "y"][rng.gen_range(0..5)].into()),
        };
    }
    let ops = [
        BinOp::Mul,
        BinOp::Mod,
        BinOp::Add,
        BinOp::Sub,
        BinOp::Eq,
        BinOp::Ne,
        BinOp::Lt,
        BinOp::Le,
        BinOp::Gt,
        BinOp::Ge,
        BinOp::And,
        BinOp::Or,
    ];
    RuleExpr::binary(
        ops[rng.gen_range(0..ops.len())],
        random_tree(rng, depth - 1),
        random_tree(rng, depth - 1),
    )
}

fn random_env(rng: &mut ChaCha8Rng) -> impl Fn(&str) -> Option<Value> {
    let values: Vec<(String, Value)> = ["a", "b", "c", "x", "y"]
        .iter()
        .map(|name| {
            let v = match rng.gen_range(0..4) {
                0 => Value::Int(rng.gen_range(-10..10)),
                1 => Value::Bool(rng.gen_bool(0.5)),
                2 => Value::Sym(["selective", "alpha"][rng.gen_range(0..2)].into()),
                _ => Value::None,
            };
            (name.to_string(), v)
        })
        .collect();
    move |name: &str| {
        values
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.clone())
    }
}

/// Criterion 4: the stock rules reproduce the hand-tabulated keep/drop
/// vector on a six-strategy fixture; render -> parse round-trips preserve
/// structure and evaluation over 10,000 random trees; the precedence and
/// associativity laws hold; the parser survives 100,000 fuzz inputs.
#[test]
fn acceptance_04_rule_dsl_conformance() {
    // six-strategy fixture, tabulated by hand against the three rules
    let rules = parse_rules(
        "$use_flash_attn != None && $recompute_granularity == selective\n\
         $recompute_num_layers > $pipeline_model_parallel_size\n\
         $num_gpus % ($pipeline_model_parallel_size * $tensor_model_parallel_size) != 0\n",
    )
    .unwrap();
    let train = TrainConfig::new(64, 16);
    let arch = tiny_arch();
    let mk = |pp: u64, tp: u64, flash: bool, gran: RecomputeGranularity, rnl: u64| {
        let mut s = test_strategy(pp, tp, 1, 1, &arch);
        // six fixtures all claim 64 GPUs regardless of divisibility
        s.gpu_config = GpuConfig::Fixed {
            entries: vec![("A".into(), 64)],
            total: 64,
        };
        s.params.use_flash_attn = flash;
        s.params.recompute_granularity = gran;
        s.params.recompute_num_layers = rnl;
        s
    };
    let fixture = [
        (mk(2, 2, true, RecomputeGranularity::Selective, 1), false), // rule1
        (mk(4, 2, true, RecomputeGranularity::Full, 5), false),      // rule2
        (mk(4, 8, true, RecomputeGranularity::Full, 2), true),
        (mk(3, 8, true, RecomputeGranularity::None, 1), false), // rule3: 64 % 24 != 0
        (mk(2, 2, false, RecomputeGranularity::Selective, 1), false), // rule1 (flags are booleans)
        (mk(8, 1, true, RecomputeGranularity::None, 1), true),
    ];
    for (i, (s, expect_kept)) in fixture.iter().enumerate() {
        let kept = rules.first_match(s, &train).unwrap().is_none();
        assert_eq!(kept, *expect_kept, "fixture strategy {i}");
    }
    let kept = fixture.iter().filter(|(_, k)| *k).count();
    assert_eq!(kept, 2);

    // render -> parse round-trips: structure and evaluation
    let mut rng = ChaCha8Rng::seed_from_u64(0x0004);
    for trial in 0..10_000 {
        let tree = random_tree(&mut rng, 4);
        let rendered = tree.to_string();
        let reparsed = parse_expr(&rendered, 1)
            .unwrap_or_else(|e| panic!("trial {trial}: `{rendered}` failed to parse: {e}"));
        assert_eq!(reparsed, tree, "trial {trial}: `{rendered}`");
        let env = random_env(&mut rng);
        let a = eval_expr(&tree, &env);
        let b = eval_expr(&reparsed, &env);
        match (&a, &b) {
            (Ok(x), Ok(y)) => assert_eq!(x, y, "trial {trial}: `{rendered}`"),
            (Err(_), Err(_)) => {}
            other => panic!("trial {trial}: `{rendered}` diverged: {other:?}"),
        }
    }

    // precedence and associativity laws on the operator pair
    let or_and = parse_expr("$a || $b && $c", 1).unwrap();
    let or_and_explicit = parse_expr("$a || ($b && $c)", 1).unwrap();
    let and_chain = parse_expr("$a && $b && $c", 1).unwrap();
    let and_chain_explicit = parse_expr("($a && $b) && $c", 1).unwrap();
    assert_eq!(or_and, or_and_explicit);
    assert_eq!(and_chain, and_chain_explicit);
    for _ in 0..1000 {
        let env = random_env(&mut rng);
        let pairs = [(&or_and, &or_and_explicit), (&and_chain, &and_chain_explicit)];
        for (left, right) in pairs {
            match (eval_expr(left, &env), eval_expr(right, &env)) {
                (Ok(x), Ok(y)) => assert_eq!(x, y),
                (Err(_), Err(_)) => {}
                other => panic!("law divergence: {other:?}"),
            }
        }
    }

    // fuzzing: anything parses or errors, never panics
    for _ in 0..100_000 {
        let len = rng.gen_range(0..40);
        let text: String = (0..len)
            .map(|_| FUZZ_ALPHABET[rng.gen_range(0..FUZZ_ALPHABET.len())])
            .collect();
        let _ = parse_expr(&text, 1);
    }
    println!("acceptance 4 (rule DSL conformance, 10k trees + 100k fuzz): PASS");
}

fn oracle_pool(points: &[ParetoPoint]) -> BTreeSet<StrategyId> {
    // weak dominance straight from the definition, plus duplicate
    // collapse onto the lowest id
    let mut kept = BTreeSet::new();
    for p in points {
        let dominated = points.iter().any(|q| {
            (q.throughput >= p.throughput && q.money < p.money)
                || (q.throughput > p.throughput && q.money <= p.money)
        });
        if dominated {
            continue;
        }
        let min_id = points
            .iter()
            .filter(|q| q.throughput == p.throughput && q.money == p.money)
            .map(|q| q.strategy_id)
            .min()
            .unwrap();
        kept.insert(min_id);
    }
    kept
}

fn point(id: u64, throughput: f64, money: f64) -> ParetoPoint {
    ParetoPoint {
        strategy_id: StrategyId(id),
        throughput,
        money,
        total_seconds: 1.0,
        gpu_bill: vec![],
    }
}

/// Criterion 5: the frontier equals the quadratic dominance oracle on 200
/// random sets, the documented example holds, and budget selection is
/// monotone in the budget.
#[test]
fn acceptance_05_pareto_soundness_completeness() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0005);
    for trial in 0..200 {
        let n = rng.gen_range(1..=500);
        let points: Vec<ParetoPoint> = (0..n)
            .map(|i| {
                // discrete grids force plenty of ties and duplicates
                point(
                    i,
                    rng.gen_range(0..40) as f64,
                    rng.gen_range(0..40) as f64 / 2.0,
                )
            })
            .collect();
        let frontier = pareto_pool(&points, Dominance::Weak);
        let got: BTreeSet<StrategyId> = frontier.iter().map(|p| p.strategy_id).collect();
        let want = oracle_pool(&points);
        assert_eq!(got, want, "trial {trial} with {n} points");
        // soundness: no output point weakly dominated by any input point
        for f in &frontier {
            assert!(!points.iter().any(|q| {
                (q.throughput >= f.throughput && q.money < f.money)
                    || (q.throughput > f.throughput && q.money <= f.money)
            }));
        }
        // completeness re-check is the set equality above; also verify
        // budget monotonicity on this frontier
        let mut last = f64::NEG_INFINITY;
        for budget in [0.0, 1.0, 2.5, 5.0, 10.0, 20.0, 1e9] {
            if let Some(best) = select_best_within_budget(&frontier, Some(budget)) {
                assert!(best.throughput >= last);
                assert!(best.money <= budget);
                last = best.throughput;
            }
        }
    }

    let example = vec![
        point(1, 10.0, 5.0),
        point(2, 8.0, 3.0),
        point(3, 9.0, 6.0),
        point(4, 10.0, 7.0),
    ];
    let pool = pareto_pool(&example, Dominance::Weak);
    let kept: Vec<(f64, f64)> = pool.iter().map(|p| (p.throughput, p.money)).collect();
    assert_eq!(kept, vec![(10.0, 5.0), (8.0, 3.0)]);
    println!("acceptance 5 (pareto frontier == dominance oracle, 200 sets): PASS");
}

fn fixture_inputs(fixture: &Fixture, request: SearchRequest, train: TrainConfig) -> SearchInputs {
    let configs =
        parasearch_core::modes::generate_gpu_configs(&request, &fixture.catalog).unwrap();
    let space = fixture.space(&train, &configs[0]).unwrap();
    SearchInputs {
        request,
        catalog: fixture.catalog.clone(),
        arch: fixture.arch.clone(),
        train,
        space: Some(space),
        rules: fixture.rules.clone(),
        coeffs: fixture.coeffs.clone(),
        eff: fixture.efficiency().unwrap(),
        total_tokens: 1e9,
        top_k: 10,
        strict_dominance: false,
        workers: 2,
    }
}

fn fixture_request(name: &str) -> (SearchRequest, TrainConfig) {
    match name {
        "llama2-7b-a800-64" => (
            SearchRequest::homogeneous("A800", 64),
            TrainConfig::new(512, 4096),
        ),
        "llama2-13b-a800-256" => (
            SearchRequest::homogeneous("A800", 256),
            TrainConfig::new(512, 4096),
        ),
        "llama2-70b-a800-1024" => (
            SearchRequest::homogeneous("A800", 1024),
            TrainConfig::new(1024, 4096),
        ),
        "llama3-8b-h100-64" => (
            SearchRequest::homogeneous("H100", 64),
            TrainConfig::new(512, 4096),
        ),
        "hetero-a800-h100-1024" => (
            SearchRequest::heterogeneous(
                1024,
                vec![("A800".into(), 512), ("H100".into(), 512)],
            ),
            TrainConfig::new(1024, 4096),
        ),
        other => panic!("no request mapping for fixture {other}"),
    }
}

/// Criterion 6: the cost-model identities. theta = phi at full efficiency
/// costs exactly one second; time is linear in theta and inverse-linear
/// in eta; throughput times iteration time recovers the iteration's
/// token count on every fixture.
#[test]
fn acceptance_06_cost_model_identities() {
    let gpu = parasearch_core::catalog::GpuSpec {
        name: "G".into(),
        peak_flops: 312e12,
        mem_bytes: 1e12,
        intra_node_bw: 1e11,
        inter_node_bw: 1e10,
        gpus_per_node: 8,
        price_per_second: 0.0,
        max_available: None,
    };
    let unit = EfficiencyModel::constant(1.0);
    let desc = |theta: f64| OpDesc {
        kind: OpKind::MatmulQkv,
        theta_flops: theta,
        phase: Phase::Fwd,
    };
    assert_eq!(op_compute_time(&desc(312e12), &gpu, &unit), 1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(0x0006);
    for _ in 0..1000 {
        let theta = rng.gen_range(1.0..1e15);
        let c = rng.gen_range(0.001..1000.0);
        let t1 = op_compute_time(&desc(theta), &gpu, &unit);
        let tc = op_compute_time(&desc(theta * c), &gpu, &unit);
        assert!(rel_close(tc, c * t1, 1e-12), "linearity in theta");

        let eta = rng.gen_range(0.01..1.0);
        let te = op_compute_time(&desc(theta), &gpu, &EfficiencyModel::constant(eta));
        let te2 = op_compute_time(&desc(theta), &gpu, &EfficiencyModel::constant(eta / 2.0));
        assert!(rel_close(te2, 2.0 * te, 1e-12), "inverse linearity in eta");
    }

    for name in list_fixtures() {
        let fixture = load_fixture(&name).unwrap();
        let (request, train) = fixture_request(&name);
        let report = run_search(&fixture_inputs(&fixture, request, train.clone())).unwrap();
        assert!(report.counts.simulated > 0, "{name}: nothing simulated");
        let tokens = train.tokens_per_iteration() as f64;
        for s in &report.strategies {
            let product = s.cost.throughput_tokens_per_s * s.cost.t_total;
            assert!(
                rel_close(product, tokens, 1e-9),
                "{name}: throughput * t_total = {product}, want {tokens}"
            );
        }
    }
    println!("acceptance 6 (cost-model identities on all fixtures): PASS");
}

/// Criterion 7: the memory filter's verdict equals the max-stage
/// recomputation on 1000 random strategies, and stage memory is monotone
/// along the tp, pp, micro-batch, and sequence-length axes.
#[test]
fn acceptance_07_memory_filter_semantics() {
    let arch = tiny_arch();
    let coeffs = MemCoeffs {
        overhead_bytes: 1e4,
        ..MemCoeffs::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x0007);
    let mut survived = 0u64;
    let mut dropped = 0u64;
    for trial in 0..1000 {
        let pp = 1u64 << rng.gen_range(0..3); // 1, 2, 4 <= num_layers
        let tp = 1u64 << rng.gen_range(0..3);
        let dp = rng.gen_range(1..=4);
        let micro = 1u64 << rng.gen_range(0..2);
        let k: u64 = rng.gen_range(1..=4);
        let train = TrainConfig::new(dp * micro * k, 1 << rng.gen_range(4..8));
        let mut s = test_strategy(pp, tp, dp, micro, &arch);
        s.params.sequence_parallel = rng.gen_bool(0.5);
        s.params.distributed_optimizer = rng.gen_bool(0.5);
        s.params.use_flash_attn = rng.gen_bool(0.5);
        s.params.recompute_granularity = [
            RecomputeGranularity::None,
            RecomputeGranularity::Selective,
            RecomputeGranularity::Full,
            RecomputeGranularity::Hybrid,
        ][rng.gen_range(0..4)];
        s.params.recompute_method = [
            RecomputeMethod::None,
            RecomputeMethod::Block,
            RecomputeMethod::Uniform,
        ][rng.gen_range(0..3)];
        s.params.recompute_num_layers = rng.gen_range(1..=4);

        let capacity = 10f64.powf(rng.gen_range(4.0..9.0));
        let catalog = capacity_catalog(capacity);
        let verdict = check_strategy(&s, &catalog, &coeffs, &train).unwrap();

        // oracle: recompute every stage and compare the max to capacity
        let max_stage = (0..pp)
            .map(|i| stage_memory(&s, i, &coeffs, &train).unwrap().total_bytes)
            .fold(0.0f64, f64::max);
        let should_survive = max_stage <= capacity;
        assert_eq!(
            verdict.is_none(),
            should_survive,
            "trial {trial}: max {max_stage} vs capacity {capacity}"
        );
        if let Some(drop) = verdict {
            dropped += 1;
            assert!(drop.required_bytes > drop.capacity_bytes);
        } else {
            survived += 1;
        }
    }
    assert!(survived >= 50 && dropped >= 50, "both outcomes must occur: {survived}/{dropped}");

    // monotonicity sweep on the desk model
    let fixture = load_fixture("llama2-7b-a800-64").unwrap();
    let arch = fixture.arch.clone();
    let coeffs = fixture.coeffs.clone();
    let num_gpus = 64u64;
    let max_stage = |tp: u64, pp: u64, micro: u64, seq: u64, dist_opt: bool| -> f64 {
        let dp = num_gpus / (pp * tp);
        let train = TrainConfig::new(512, seq);
        let mut s = test_strategy(pp, tp, dp, micro, &arch);
        s.params.distributed_optimizer = dist_opt;
        (0..pp)
            .map(|i| stage_memory(&s, i, &coeffs, &train).unwrap().total_bytes)
            .fold(0.0f64, f64::max)
    };
    let pps = [1u64, 2, 4, 8, 16, 32];
    let tps = [1u64, 2, 4, 8];
    let micros = [1u64, 2, 4, 8];
    let seqs = [2048u64, 4096, 8192];
    for dist_opt in [false, true] {
        for &pp in &pps {
            for &tp in &tps {
                if pp * tp > num_gpus {
                    continue;
                }
                for &micro in &micros {
                    for &seq in &seqs {
                        let here = max_stage(tp, pp, micro, seq, dist_opt);
                        // non-increasing in tp
                        if tp > 1 {
                            assert!(
                                here <= max_stage(tp / 2, pp, micro, seq, dist_opt) * (1.0 + 1e-12),
                                "tp axis at pp={pp} tp={tp} b={micro} s={seq}"
                            );
                        }
                        // non-increasing in pp
                        if pp > 1 {
                            assert!(
                                here <= max_stage(tp, pp / 2, micro, seq, dist_opt) * (1.0 + 1e-12),
                                "pp axis at pp={pp} tp={tp} b={micro} s={seq}"
                            );
                        }
                        // non-decreasing in micro-batch
                        if micro > 1 {
                            assert!(
                                here >= max_stage(tp, pp, micro / 2, seq, dist_opt) * (1.0 - 1e-12),
                                "micro axis at pp={pp} tp={tp} b={micro} s={seq}"
                            );
                        }
                        // non-decreasing in sequence length
                        if seq > 2048 {
                            assert!(
                                here >= max_stage(tp, pp, micro, seq / 2, dist_opt) * (1.0 - 1e-12),
                                "seq axis at pp={pp} tp={tp} b={micro} s={seq}"
                            );
                        }
                    }
                }
            }
        }
    }
    println!("acceptance 7 (memory filter semantics + monotonicity sweep): PASS");
}

fn capacity_catalog(mem_bytes: f64) -> GpuCatalog {
    parasearch_core::catalog::parse_catalog(
        &format!(
            r#"{{"gpus":[{{"name":"A","peak_flops":1e12,"mem_bytes":{mem_bytes},
                "intra_node_bw":1e11,"inter_node_bw":1e10,"gpus_per_node":8,
                "price_per_second":0.001}}]}}"#
        ),
        "test",
    )
    .unwrap()
}

/// Criterion 8: the desk-scale search generates at least 10,000
/// strategies, completes in under ten seconds, and produces byte-identical
/// reports across runs and worker counts.
#[test]
fn acceptance_08_desk_search_end_to_end() {
    let fixture = load_fixture("llama2-7b-a800-64").unwrap();
    let (request, train) = fixture_request("llama2-7b-a800-64");
    let mut inputs = fixture_inputs(&fixture, request, train);

    let start = Instant::now();
    let report = run_search(&inputs).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    assert!(
        report.counts.generated >= 10_000,
        "only {} strategies generated",
        report.counts.generated
    );
    assert!(report.counts.simulated > 0);
    assert!(report.counts.is_conserved());
    assert!(elapsed < 10.0, "desk search took {elapsed}s");
    // the report keeps exactly top-k of the many survivors, best first
    assert_eq!(report.strategies.len(), 10);
    for pair in report.strategies.windows(2) {
        assert!(
            pair[0].cost.throughput_tokens_per_s >= pair[1].cost.throughput_tokens_per_s
        );
    }

    let baseline = report_json(&report, false).unwrap();
    let again = report_json(&run_search(&inputs).unwrap(), false).unwrap();
    assert_eq!(baseline, again, "same inputs, same bytes");
    inputs.workers = 1;
    let single = report_json(&run_search(&inputs).unwrap(), false).unwrap();
    assert_eq!(baseline, single, "independent of worker count");
    println!(
        "acceptance 8 (desk search: {} generated, {:.2}s, deterministic): PASS",
        report.counts.generated, elapsed
    );
}

/// Criterion 9: with the shipped catalog, best-strategy throughput at
/// 1024 GPUs orders H100 >= H800 >= heterogeneous(A800+H100) >= A800 for
/// the 7B model. Ordering only; absolute numbers are not claims.
#[test]
fn acceptance_09_throughput_ordering() {
    let fixture = load_fixture("hetero-a800-h100-1024").unwrap();
    let train = TrainConfig::new(1024, 4096);
    let best = |request: SearchRequest| -> f64 {
        let report = run_search(&fixture_inputs(&fixture, request, train.clone())).unwrap();
        assert!(report.counts.is_conserved());
        assert!(
            !report.strategies.is_empty(),
            "no survivors for the ordering run"
        );
        report.strategies[0].cost.throughput_tokens_per_s
    };
    let h100 = best(SearchRequest::homogeneous("H100", 1024));
    let h800 = best(SearchRequest::homogeneous("H800", 1024));
    let a800 = best(SearchRequest::homogeneous("A800", 1024));
    let heter = best(SearchRequest::heterogeneous(
        1024,
        vec![("A800".into(), 512), ("H100".into(), 512)],
    ));
    assert!(h100 >= h800, "H100 {h100} < H800 {h800}");
    assert!(h800 >= heter, "H800 {h800} < heterogeneous {heter}");
    assert!(heter >= a800, "heterogeneous {heter} < A800 {a800}");
    println!(
        "acceptance 9 (throughput ordering H100 {h100:.0} >= H800 {h800:.0} >= heter {heter:.0} >= A800 {a800:.0}): PASS"
    );
}

/// Criterion 10: counter conservation holds on every run and identical
/// inputs give byte-identical JSON, including the heterogeneous path.
#[test]
fn acceptance_10_conservation_and_determinism() {
    let fixture = load_fixture("hetero-a800-h100-1024").unwrap();
    let (request, train) = fixture_request("hetero-a800-h100-1024");
    let mut inputs = fixture_inputs(&fixture, request, train);

    let a: SearchReport = run_search(&inputs).unwrap();
    assert!(a.counts.is_conserved());
    assert_eq!(
        a.counts.generated,
        a.counts.simulated
            + a.counts.total_rule_drops()
            + a.counts.memory_dropped
            + a.counts.infeasible_partition
            + a.counts.unsupported
    );
    let a_json = report_json(&a, false).unwrap();
    inputs.workers = 4;
    let b_json = report_json(&run_search(&inputs).unwrap(), false).unwrap();
    assert_eq!(a_json, b_json);

    // a run with MoE candidates exercises the unsupported counter without
    // breaking conservation
    let (request, train) = fixture_request("llama2-7b-a800-64");
    let fixture = load_fixture("llama2-7b-a800-64").unwrap();
    let mut inputs = fixture_inputs(&fixture, request, train);
    let mut space = inputs.space.clone().unwrap();
    space.pp = vec![1, 2];
    space.tp = vec![1];
    space.micro_batch = vec![1];
    space.sequence_parallel = vec![false];
    space.distributed_optimizer = vec![false];
    space.recompute_granularity = vec![RecomputeGranularity::None];
    space.recompute_method = vec![RecomputeMethod::None];
    space.recompute_num_layers = vec![1];
    space.offload_optimizer = vec![false];
    space.moe = vec![
        None,
        Some(MoeParams {
            num_experts: 8,
            ep_size: 1,
            topk: 2,
        }),
    ];
    inputs.space = Some(space);
    let report = run_search(&inputs).unwrap();
    assert!(report.counts.unsupported > 0);
    assert!(report.counts.is_conserved());
    println!("acceptance 10 (counter conservation + byte-identical reports): PASS");
}
