use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use fusedstencil::autotune::{tune, ScriptedClock, TrialStatus};
use fusedstencil::exec::Rejection;
use fusedstencil::fusion::{MaxOverRows, PassThrough, RowSpec};
use fusedstencil::harness::expr::{parse_phi_expression, ExprCombiner};
use fusedstencil::harness::oracle::naive_oracle_step;
use fusedstencil::harness::verify::verify_sets_ulp;
use fusedstencil::stencil::StencilKernel;
use fusedstencil::{
    parse_problem_spec, partition_domain, BoundaryPolicy, CoefficientMatrix, Combiner, Executor,
    FieldSet, FusedKernel, MacUnroll, Real, Shape, TilePlan,
};
use proptest::prelude::*;

fn plan_strategy() -> impl Strategy<Value = TilePlan> {
    (
        1usize..9,
        1usize..6,
        1usize..8,
        any::<bool>(),
        1usize..5,
        any::<bool>(),
        1usize..4,
    )
        .prop_map(|(x, y, z, streaming, opi, unroll, cpp)| TilePlan {
            tau: [x, y, z],
            strategy: if streaming {
                fusedstencil::exec::Strategy::Streaming
            } else {
                fusedstencil::exec::Strategy::Direct
            },
            outputs_per_item: opi,
            mac_unroll: if unroll {
                MacUnroll::Full
            } else {
                MacUnroll::None
            },
            columns_per_pass: cpp,
        })
}

/// Sparse random rows over a radius-`r` box; roughly a third of taps are zero.
fn random_matrix(ndim: usize, r: i32, rows: usize, seed: u64) -> CoefficientMatrix {
    let mut state = seed | 1;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let span = |axis: usize| if axis < ndim { -r..=r } else { 0..=0 };
    let specs = (0..rows)
        .map(|i| {
            let (mut offsets, mut coeffs) = (Vec::new(), Vec::new());
            for z in span(2) {
                for y in span(1) {
                    for x in span(0) {
                        let v = next();
                        if v % 3 != 0 {
                            offsets.push([x, y, z]);
                            coeffs.push((v >> 11) as f64 / (1u64 << 53) as f64 - 0.5);
                        }
                    }
                }
            }
            if offsets.is_empty() {
                offsets.push([0, 0, 0]);
                coeffs.push(1.0);
            }
            RowSpec {
                label: format!("row{i}"),
                kernel: StencilKernel::new(ndim, &offsets, &coeffs).unwrap(),
            }
        })
        .collect();
    CoefficientMatrix::from_rows(ndim, Some(r as usize), specs).unwrap()
}

fn random_fields(n_f: usize, shape: Shape, halo: usize, seed: u64) -> FieldSet<f64> {
    let names: Vec<String> = (0..n_f).map(|j| format!("f{j}")).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut s = FieldSet::new(&names, shape, halo, BoundaryPolicy::Periodic);
    s.fill_random(-1.0, 1.0, seed).unwrap();
    s.refresh_halo();
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn tiles_cover_the_domain_once(nx in 1usize..20, ny in 1usize..9, nz in 1usize..7,
                                   tx in 1usize..12, ty in 1usize..6, tz in 1usize..6) {
        let shape = Shape::d3(nx, ny, nz);
        let mut hits = vec![0u8; shape.len()];
        for t in partition_domain(shape, [tx, ty, tz]) {
            for z in 0..t.extent[2] {
                for y in 0..t.extent[1] {
                    for x in 0..t.extent[0] {
                        let i = shape.linear_index(t.origin[0] + x, t.origin[1] + y, t.origin[2] + z).unwrap();
                        hits[i] += 1;
                    }
                }
            }
        }
        prop_assert!(hits.iter().all(|&h| h == 1));
    }

    #[test]
    fn fused_matches_oracle_for_any_plan(seed in any::<u64>(), r in 0i32..3, rows in 1usize..4,
                                          n_f in 1usize..4, plan in plan_strategy(), max in any::<bool>()) {
        let shape = Shape::d3(7, 6, 5);
        let m = random_matrix(3, r, rows, seed);
        let combiner: Arc<dyn Combiner<f64>> = if max { Arc::new(MaxOverRows) } else { Arc::new(PassThrough { row: rows - 1 }) };
        let k = FusedKernel::new(m, combiner, n_f).unwrap();
        let plan = TilePlan { columns_per_pass: plan.columns_per_pass.min(n_f), ..plan };
        let fields = random_fields(n_f, shape, r as usize, seed ^ 0x5eed);
        let exec = Executor::new(2).unwrap();
        let oracle = naive_oracle_step(&fields, &k).unwrap();
        let fused = exec.fused_step(&fields, &k, &plan).unwrap();
        prop_assert!(verify_sets_ulp(&fused, &oracle, 5).unwrap().passed());
        let direct = TilePlan { columns_per_pass: 1, ..TilePlan::direct([64, 64, 64]) };
        let direct = exec.fused_step(&fields, &k, &direct).unwrap();
        prop_assert!(fused == direct);
        let pruned = exec.fused_step(&fields, &k.clone().prune(), &plan).unwrap();
        prop_assert!(pruned == fused);
        prop_assert!(k.clone().prune().mac_count() <= k.mac_count());
    }

    #[test]
    fn tuner_returns_argmin_of_valid_plans(times in prop::collection::vec(1u64..50, 6), reject in prop::collection::vec(any::<bool>(), 6)) {
        prop_assume!(reject.iter().any(|r| !r));
        let cands: Vec<TilePlan> = (0..6).map(|i| TilePlan::direct([8 << (i % 3), 1 + i / 3, 1])).collect();
        let script: Vec<Duration> = cands
            .iter()
            .zip(&reject)
            .zip(&times)
            .filter(|((_, r), _)| !**r)
            .flat_map(|(_, &t)| [t, t + 1, t].map(Duration::from_millis))
            .collect();
        let mut clock = ScriptedClock::new(script);
        let validate = |p: &TilePlan| {
            let i = cands.iter().position(|c| c == p).unwrap();
            if reject[i] { Err(Rejection("over budget".into())) } else { Ok(()) }
        };
        let r = tune(&cands, validate, |_| Ok(()), &mut clock, &Default::default()).unwrap();
        let best = cands
            .iter()
            .zip(&reject)
            .zip(&times)
            .filter(|((_, r), _)| !**r)
            .map(|((p, _), &t)| (t, *p))
            .min()
            .unwrap();
        prop_assert_eq!(r.best, best.1);
        prop_assert_eq!(r.best_median, Duration::from_millis(best.0));
        for (t, rej) in r.trials.iter().zip(&reject) {
            prop_assert_eq!(matches!(t.status, TrialStatus::Rejected(_)), *rej);
        }
    }

    #[test]
    fn ulp_distance_is_a_metric(a in -1e6f64..1e6, b in -1e6f64..1e6, steps in 0u64..1000) {
        prop_assert_eq!(a.ulp_distance(b), b.ulp_distance(a));
        prop_assert_eq!(a.ulp_distance(a), 0);
        let mut c = a;
        for _ in 0..steps {
            c = f64::from_bits(if c >= 0.0 { c.to_bits() + 1 } else { c.to_bits() - 1 });
        }
        prop_assert_eq!(a.ulp_distance(c), steps);
    }

    #[test]
    fn phi_display_reparses(text in phi_text()) {
        let e = parse_phi_expression(&text).unwrap();
        let again = parse_phi_expression(&e.to_string()).unwrap();
        prop_assert_eq!(again, e);
    }

    #[test]
    fn diffusion_spec_round_trips(alpha in 1e-3f64..10.0, dt in 1e-4f64..1e-1, acc in prop::sample::select(vec![2u32, 4, 6]),
                                  n in 8usize..40, seed in any::<u64>(), f32_ in any::<bool>()) {
        let text = format!(
            "[problem]\nkind = \"diffusion\"\ndtype = \"{}\"\ndomain = [{n}, {n}]\nseed = {}\n[diffusion]\nalpha = {alpha:?}\ndt = {dt:?}\naccuracy = {acc}\n",
            if f32_ { "fp32" } else { "fp64" },
            seed >> 1,
        );
        let spec = parse_problem_spec(&text).unwrap();
        prop_assert_eq!(parse_problem_spec(&spec.to_toml()).unwrap(), spec);
    }
}

fn phi_text() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        (0usize..3, 0usize..2).prop_map(|(i, j)| format!("q({i}, {j})")),
        (0.0f64..100.0).prop_map(|v| format!("{v:?}")),
        Just("nu".to_string()),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (
                inner.clone(),
                prop::sample::select(vec!["+", "-", "*", "/", "^"]),
                inner.clone()
            )
                .prop_map(|(a, op, b)| format!("({a}) {op} ({b})")),
            inner.clone().prop_map(|a| format!("-({a})")),
            (
                prop::sample::select(vec!["exp", "log", "sqrt", "abs"]),
                inner.clone()
            )
                .prop_map(|(f, a)| format!("{f}({a})")),
            (inner.clone(), inner).prop_map(|(a, b)| format!("max({a}, {b})")),
        ]
    })
}

#[test]
fn expression_combiner_matches_pass_through() {
    let shape = Shape::d3(6, 6, 6);
    let m = random_matrix(3, 1, 2, 7);
    let params = BTreeMap::from([("w".to_string(), 1.0)]);
    let expr = ExprCombiner::new(&["w * q(1, 0)".into(), "q(1, 1)".into()], &params, 2, 2).unwrap();
    let a = FusedKernel::new(m.clone(), Arc::new(expr), 2)
        .unwrap()
        .prune();
    let b = FusedKernel::new(m, Arc::new(PassThrough { row: 1 }), 2)
        .unwrap()
        .prune();
    let f = random_fields(2, shape, 1, 3);
    let exec = Executor::new(1).unwrap();
    let plan = TilePlan::streaming([4, 4, 4], 2);
    assert_eq!(
        exec.fused_step(&f, &a, &plan).unwrap(),
        exec.fused_step(&f, &b, &plan).unwrap()
    );
}
