mod common;

use std::collections::BTreeSet;

use districting::contiguity::{analyze_district, composite_moves, minimal_move_oracle, SizeMeasure, UnitSetAggregate};
use districting::moves::{best_switch, best_switch_exhaustive, shared_between, switch_valid, CandidatePool, PoolOptions};
use districting::objective::{score_move, score_switch};
use districting::plan::{build_aggregates, is_plan_contiguous, Plan};
use districting::search::{Method, Search, SearchConfig, StepOutcome};
use districting::stats::{rank_sum_test, PValueMethod};
use districting::{evaluate, generate_grid, pop_dev, Instance, Instance32, ObjectiveConfig, PopulationModel};
use proptest::prelude::*;
use rand::Rng;

use common::*;

#[test]
fn cut_points_and_blocks_match_brute_force() {
    let mut rng = rng(11);
    for case in 0..100 {
        let n = rng.random_range(1..=30);
        let extra = rng.random_range(0..=n);
        let g = random_connected(n, extra, &mut rng);
        let members: Vec<usize> = (0..n).collect();
        let tree = analyze_district(&g, &members).unwrap();
        assert_eq!(tree.cut_points, brute_cut_points(&g, &members), "case {case}");
        let mut blocks = tree.bcc_edges.clone();
        blocks.retain(|b| !b.is_empty());
        for b in &mut blocks {
            b.sort_unstable();
        }
        blocks.sort();
        assert_eq!(blocks, brute_bcc_edges(&g, &members), "case {case}");
    }
}

#[test]
fn composites_match_oracle_on_random_graphs() {
    let mut rng = rng(12);
    for _ in 0..150 {
        let n = rng.random_range(2..=18);
        let extra = rng.random_range(0..=n / 2);
        let g = random_connected(n, extra, &mut rng);
        let members: Vec<usize> = (0..n).collect();
        let tree = analyze_district(&g, &members).unwrap();
        for c in composite_moves(&g, &members, &tree, SizeMeasure::Units) {
            let oracle = minimal_move_oracle(&g, &members, c.anchor).unwrap();
            assert_eq!(Some(c.members.clone()), oracle, "anchor {}", c.anchor);
            assert_eq!(c.aggregate.population, UnitSetAggregate::of(&g, &c.members).population);
        }
    }
}

#[test]
fn composites_on_seed_grown_districts() {
    let mut rng = rng(13);
    let mut seed = 0;
    for _ in 0..20 {
        let side = rng.random_range(6..=8);
        let g = jittered_grid(side, side, &mut rng);
        let r = rng.random_range(3..=5);
        let plan = capped_plan(&g, r, 25, &mut seed);
        for d in 0..r {
            let mut members = plan.members(d).to_vec();
            members.sort_unstable();
            let tree = analyze_district(&g, &members).unwrap();
            for c in composite_moves(&g, &members, &tree, SizeMeasure::Units) {
                assert_eq!(Some(c.members), minimal_move_oracle(&g, &members, c.anchor).unwrap());
            }
        }
    }
}

fn cfg(g: &Instance, r: usize, w: (f64, f64)) -> ObjectiveConfig {
    ObjectiveConfig::new(w.0, w.1, r, g.total_population()).unwrap()
}

#[test]
fn dynamic_scores_match_recomputation() {
    let mut rng = rng(14);
    let mut moves = 0;
    let mut switches = 0;
    let mut seed = 100;
    while moves < 300 || switches < 300 {
        let g = jittered_grid(rng.random_range(5..=8), rng.random_range(5..=8), &mut rng);
        let r = rng.random_range(2..=5);
        let plan = districting::init_plan(&g, r, seed).unwrap();
        seed += 1;
        let c = cfg(&g, r, (1.0, 1.0));
        let aggs = build_aggregates(&g, &plan);
        let before = evaluate(&aggs, &c).unwrap();
        let pool = CandidatePool::enumerate(&g, &plan, PoolOptions::default()).unwrap();
        for m in pool.iter() {
            let d = score_move(m, &aggs[m.source], &aggs[m.dest], &c).unwrap();
            let after = objective_after(&g, &plan, &[m], &c);
            assert_eq!(d.popdev, before.popdev - after.popdev);
            assert!((d.compactness - (before.compactness - after.compactness)).abs() <= 1e-9 * before.compactness.max(1.0));
            moves += 1;
        }
        for a in 0..r {
            for b in a + 1..r {
                for m1 in pool.moves(a, b) {
                    for m2 in pool.moves(b, a) {
                        if !switch_valid(m1, m2).unwrap() {
                            continue;
                        }
                        let cross = shared_between(&g, &m1.members, &m2.members);
                        let d = score_switch(m1, m2, cross, &aggs, &c).unwrap();
                        let after = objective_after(&g, &plan, &[m1, m2], &c);
                        assert_eq!(d.popdev, before.popdev - after.popdev);
                        assert!((d.compactness - (before.compactness - after.compactness)).abs() <= 1e-9 * before.compactness.max(1.0));
                        switches += 1;
                    }
                }
            }
        }
    }
}

#[test]
fn best_switch_is_exact_without_compactness() {
    let mut rng = rng(15);
    for seed in 0..60 {
        let g = jittered_grid(rng.random_range(4..=7), rng.random_range(4..=7), &mut rng);
        let r = rng.random_range(2..=4);
        let plan = districting::init_plan(&g, r, seed).unwrap();
        let c = cfg(&g, r, (1.0, 0.0));
        let aggs = build_aggregates(&g, &plan);
        let pool = CandidatePool::enumerate(&g, &plan, PoolOptions::default()).unwrap();
        let any = |_: &districting::Move| true;
        for a in 0..r {
            for b in a + 1..r {
                let slow = best_switch_exhaustive(&g, &pool, a, b, &aggs, &c, &any).unwrap();
                for window in [0, 3] {
                    let fast = best_switch(&g, &pool, a, b, &aggs, &c, window, &any).unwrap();
                    assert_eq!(fast.map(|s| s.delta.combined), slow.map(|s| s.delta.combined));
                }
            }
        }
    }
}

#[test]
fn incremental_state_matches_rebuild() {
    let mut rng = rng(16);
    for seed in 0..6 {
        let g = jittered_grid(7, 7, &mut rng);
        let mut config = SearchConfig::new(Method::Tabu, true, 4, seed).with_weights(1.0, 0.5);
        config.max_iterations = Some(120);
        let mut s = Search::new(&g, config).unwrap();
        while let StepOutcome::Applied(_) = s.step().unwrap() {
            let fresh = build_aggregates(&g, s.plan());
            for (x, y) in s.aggregates().iter().zip(&fresh) {
                assert_eq!(x.population, y.population);
                assert_eq!(x.unit_count, y.unit_count);
                assert!((x.area - y.area).abs() < 1e-9);
                assert!((x.perimeter - y.perimeter).abs() < 1e-9);
            }
            let rebuilt = CandidatePool::enumerate(&g, s.plan(), PoolOptions::default()).unwrap();
            assert_eq!(s.pool(), &rebuilt);
            assert!(is_plan_contiguous(&g, s.plan()));
        }
    }
}

/// Plain hill climber written against full recomputation only: single-unit
/// moves that keep the source connected, and exchanges of two such moves
/// that keep both districts connected.
struct Reference<'a> {
    g: &'a Instance,
    cfg: ObjectiveConfig,
    once: bool,
}

type Step = BTreeSet<(Vec<usize>, usize, usize)>;

impl Reference<'_> {
    fn value(&self, assignment: &[usize], r: usize) -> f64 {
        let plan = Plan::from_assignment(assignment.to_vec(), r).unwrap();
        evaluate(&build_aggregates(self.g, &plan), &self.cfg).unwrap().combined
    }

    fn connected(&self, assignment: &[usize], d: usize) -> bool {
        let members: Vec<usize> = (0..assignment.len()).filter(|&u| assignment[u] == d).collect();
        !members.is_empty() && connected_within(self.g, &members, None) == 1
    }

    fn singles(&self, assignment: &[usize], moved: &[bool]) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for u in 0..assignment.len() {
            if self.once && moved[u] {
                continue;
            }
            let s = assignment[u];
            let dests: BTreeSet<usize> = self.g.neighbors(u).iter().map(|nb| assignment[nb.unit]).filter(|&d| d != s).collect();
            if dests.is_empty() {
                continue;
            }
            let mut without = assignment.to_vec();
            without[u] = usize::MAX;
            if !self.connected(&without, s) {
                continue;
            }
            for d in dests {
                out.push((u, s, d));
            }
        }
        out
    }

    /// Best step and its objective value after applying it.
    fn best(&self, assignment: &[usize], r: usize, moved: &[bool]) -> Option<(Step, Vec<usize>, f64)> {
        let singles = self.singles(assignment, moved);
        let mut best: Option<(Step, Vec<usize>, f64)> = None;
        let mut offer = |step: Step, next: Vec<usize>, v: f64| {
            if best.as_ref().is_none_or(|b| v < b.2) {
                best = Some((step, next, v));
            }
        };
        for &(u, s, d) in &singles {
            let mut next = assignment.to_vec();
            next[u] = d;
            let v = self.value(&next, r);
            offer(BTreeSet::from([(vec![u], s, d)]), next, v);
        }
        for &(u, s, d) in &singles {
            for &(w, s2, d2) in &singles {
                if s2 != d || d2 != s || s > d {
                    continue;
                }
                let mut next = assignment.to_vec();
                next[u] = d;
                next[w] = s;
                if !self.connected(&next, s) || !self.connected(&next, d) {
                    continue;
                }
                let v = self.value(&next, r);
                offer(BTreeSet::from([(vec![u], s, d), (vec![w], d, s)]), next, v);
            }
        }
        best
    }
}

fn engine_trace(g: &Instance, config: SearchConfig) -> (Plan, Vec<Step>) {
    let mut s = Search::new(g, config).unwrap();
    let start = s.plan().clone();
    let mut trace = Vec::new();
    while let StepOutcome::Applied(step) = s.step().unwrap() {
        trace.push(step.moves.into_iter().map(|k| (k.members, k.source, k.dest)).collect());
    }
    (start, trace)
}

#[test]
fn greedy_and_kl_match_reference_climbers() {
    let mut rng = rng(17);
    let mut steps = 0;
    for seed in 0..8 {
        let g = jittered_grid(4, 5, &mut rng);
        let r = 3;
        for method in [Method::Greedy, Method::Kl] {
            let mut config = SearchConfig::new(method, false, r, seed).with_weights(1.0, 0.7);
            config.switch_window = usize::MAX;
            let (start, trace) = engine_trace(&g, config);
            let reference = Reference { g: &g, cfg: cfg(&g, r, (1.0, 0.7)), once: method == Method::Kl };
            let mut assignment = start.assignment().to_vec();
            let mut best_value = reference.value(&assignment, r);
            let mut moved = vec![false; g.len()];
            let mut expected = Vec::new();
            while let Some((step, next, v)) = reference.best(&assignment, r, &moved) {
                if method == Method::Greedy && v >= best_value {
                    break;
                }
                for (members, _, _) in &step {
                    for &u in members {
                        moved[u] = true;
                    }
                }
                best_value = best_value.min(v);
                expected.push(step);
                assignment = next;
            }
            steps += trace.len();
            assert_eq!(trace, expected, "{method} seed {seed}");
        }
    }
    assert!(steps > 50, "only {steps} steps compared");
}

fn brute_rank_sum_p(a: &[f64], b: &[f64]) -> f64 {
    // U by direct pair counting over every relabelling of the pooled sample
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    let na = a.len();
    let u_of = |mask: u32| {
        let mut u = 0.0;
        for i in 0..n {
            if mask >> i & 1 == 0 {
                continue;
            }
            for j in 0..n {
                if mask >> j & 1 == 1 {
                    continue;
                }
                u += if pooled[i] > pooled[j] { 1.0 } else if pooled[i] == pooled[j] { 0.5 } else { 0.0 };
            }
        }
        u
    };
    let mean = (na * (n - na)) as f64 / 2.0;
    let observed = (u_of((1u32 << na) - 1) - mean).abs();
    let (mut hit, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != na {
            continue;
        }
        total += 1;
        if (u_of(mask) - mean).abs() >= observed - 1e-9 {
            hit += 1;
        }
    }
    hit as f64 / total as f64
}

#[test]
fn exact_rank_sum_matches_enumeration() {
    let mut rng = rng(18);
    for na in 1..=8 {
        for nb in 1..=8 {
            let a: Vec<f64> = (0..na).map(|_| f64::from(rng.random_range(0..6))).collect();
            let b: Vec<f64> = (0..nb).map(|_| f64::from(rng.random_range(0..6))).collect();
            let t = rank_sum_test(&a, &b).unwrap();
            assert_eq!(t.method, PValueMethod::Exact);
            assert!((t.p_value - brute_rank_sum_p(&a, &b)).abs() < 1e-12, "{a:?} {b:?}");
        }
    }
}

#[test]
fn single_precision_instantiation() {
    let g: Instance32 = generate_grid(5, 5, PopulationModel::Uniform(4), 0).unwrap();
    let mut config = SearchConfig::<f32>::new(Method::Tabu, true, 5, 3);
    config.verify = true;
    let res = districting::run(&g, &config).unwrap();
    assert_eq!(res.value.popdev, 0);
    assert!(is_plan_contiguous(&g, &res.plan));
}

proptest! {
    #[test]
    fn pop_dev_is_permutation_invariant(mut pops in prop::collection::vec(0i64..1_000_000, 1..12), rot in 0usize..12) {
        let total: i64 = pops.iter().sum();
        let before = pop_dev(&pops, total).unwrap();
        let k = rot % pops.len();
        pops.rotate_left(k);
        prop_assert_eq!(before, pop_dev(&pops, total).unwrap());
        pops.reverse();
        prop_assert_eq!(before, pop_dev(&pops, total).unwrap());
    }

    #[test]
    fn ppi_is_bounded_for_regular_polygons(sides in 3u32..200, radius in 0.01f64..100.0) {
        let theta = std::f64::consts::TAU / f64::from(sides);
        let area = 0.5 * f64::from(sides) * radius * radius * theta.sin();
        let perimeter = f64::from(sides) * 2.0 * radius * (theta / 2.0).sin();
        let p = districting::ppi(area, perimeter).unwrap();
        prop_assert!(p > 0.0 && p <= 1.0 + 1e-12);
        prop_assert!(districting::ppi(area, perimeter * 1.1).unwrap() < p);
    }

    #[test]
    fn seed_growing_is_contiguous(rows in 1usize..9, cols in 1usize..9, seed in any::<u64>(), frac in 0.0f64..1.0) {
        let g: Instance = generate_grid(rows, cols, PopulationModel::Uniform(1), 0).unwrap();
        let r = 1 + ((g.len() - 1) as f64 * frac) as usize;
        let plan = districting::init_plan(&g, r, seed).unwrap();
        prop_assert!(is_plan_contiguous(&g, &plan));
    }

    #[test]
    fn scaling_weights_keeps_the_best_move(scale in 0.1f64..50.0, seed in 0u64..1000) {
        let mut rng = common::rng(seed);
        let g = jittered_grid(5, 5, &mut rng);
        let plan = districting::init_plan(&g, 3, seed).unwrap();
        let aggs = build_aggregates(&g, &plan);
        let pool = CandidatePool::enumerate(&g, &plan, PoolOptions::default()).unwrap();
        let argmax = |c: &ObjectiveConfig| {
            pool.iter()
                .enumerate()
                .map(|(i, m)| (score_move(m, &aggs[m.source], &aggs[m.dest], c).unwrap().combined, i))
                .fold((f64::NEG_INFINITY, 0), |a, b| if b.0 > a.0 { b } else { a })
        };
        let base = argmax(&cfg(&g, 3, (1.0, 0.3)));
        let scaled = argmax(&cfg(&g, 3, (scale, 0.3 * scale)));
        prop_assert_eq!(base.1, scaled.1);
        prop_assert!((scaled.0 - scale * base.0).abs() <= 1e-9 * scaled.0.abs().max(1.0));
    }
}
