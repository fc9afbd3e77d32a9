#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};
use std::path::PathBuf;

use districting::instance::{Edge, InstanceData, Unit};
use districting::moves::{CandidatePool, Move};
use districting::plan::{build_aggregates, Plan};
use districting::{Instance, ObjectiveConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random connected graph: a random spanning tree plus `extra` random edges,
/// with random geometry that keeps shared lengths below perimeters.
pub fn random_connected(n: usize, extra: usize, rng: &mut ChaCha8Rng) -> Instance {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut pairs = BTreeSet::new();
    for i in 1..n {
        let j = rng.random_range(0..i);
        let (a, b) = (order[i].min(order[j]), order[i].max(order[j]));
        pairs.insert((a, b));
    }
    for _ in 0..extra {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            pairs.insert((a.min(b), a.max(b)));
        }
    }
    let edges: Vec<Edge> = pairs
        .into_iter()
        .map(|(a, b)| Edge {
            u: a as i64 * 3 + 1,
            v: b as i64 * 3 + 1,
            shared_length: rng.random_range(0.1..1.0),
        })
        .collect();
    let units = (0..n)
        .map(|i| Unit {
            id: i as i64 * 3 + 1,
            population: rng.random_range(1..1000),
            area: rng.random_range(0.5..2.0),
            perimeter: rng.random_range(4.0 * n as f64..5.0 * n as f64),
        })
        .collect();
    Instance::new(InstanceData { units, edges }).unwrap()
}

/// Grid with random geometry, so objective ties are unlikely.
pub fn jittered_grid(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Instance {
    let id = |r: usize, c: usize| (r * cols + c) as i64;
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                edges.push(Edge { u: id(r, c), v: id(r, c + 1), shared_length: rng.random_range(0.5..1.5) });
            }
            if r + 1 < rows {
                edges.push(Edge { u: id(r, c), v: id(r + 1, c), shared_length: rng.random_range(0.5..1.5) });
            }
        }
    }
    let units = (0..rows * cols)
        .map(|i| Unit {
            id: i as i64,
            population: rng.random_range(100..10_000),
            area: rng.random_range(0.5..1.5),
            perimeter: rng.random_range(6.0..8.0),
        })
        .collect();
    Instance::new(InstanceData { units, edges }).unwrap()
}

pub fn connected_within(instance: &Instance, members: &[usize], removed: Option<usize>) -> usize {
    // number of connected components of `members` minus `removed`
    let keep: BTreeSet<usize> = members.iter().copied().filter(|&u| Some(u) != removed).collect();
    let mut seen = BTreeSet::new();
    let mut comps = 0;
    for &s in &keep {
        if seen.contains(&s) {
            continue;
        }
        comps += 1;
        seen.insert(s);
        let mut q = VecDeque::from([s]);
        while let Some(v) = q.pop_front() {
            for nb in instance.neighbors(v) {
                if keep.contains(&nb.unit) && seen.insert(nb.unit) {
                    q.push_back(nb.unit);
                }
            }
        }
    }
    comps
}

/// Cut points by removing each vertex in turn.
pub fn brute_cut_points(instance: &Instance, members: &[usize]) -> Vec<usize> {
    let base = connected_within(instance, members, None);
    let mut out: Vec<usize> = members
        .iter()
        .copied()
        .filter(|&v| connected_within(instance, members, Some(v)) > base)
        .collect();
    out.sort_unstable();
    out
}

/// Edge partition into blocks: two edges share a block unless removing some
/// single vertex separates their remaining endpoints.
pub fn brute_bcc_edges(instance: &Instance, members: &[usize]) -> Vec<Vec<(usize, usize)>> {
    let set: BTreeSet<usize> = members.iter().copied().collect();
    let edges: Vec<(usize, usize)> = instance
        .index_edges()
        .filter(|(a, b, _)| set.contains(a) && set.contains(b))
        .map(|(a, b, _)| (a, b))
        .collect();
    let m = edges.len();
    let comp_of = |removed: usize| -> Vec<usize> {
        let mut label = vec![usize::MAX; instance.len()];
        let mut next = 0;
        for &s in &set {
            if s == removed || label[s] != usize::MAX {
                continue;
            }
            label[s] = next;
            let mut q = VecDeque::from([s]);
            while let Some(v) = q.pop_front() {
                for nb in instance.neighbors(v) {
                    let w = nb.unit;
                    if w != removed && set.contains(&w) && label[w] == usize::MAX {
                        label[w] = next;
                        q.push_back(w);
                    }
                }
            }
            next += 1;
        }
        label
    };
    let labels: Vec<Vec<usize>> = members.iter().map(|&v| comp_of(v)).collect();
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut x = x;
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..m {
        for j in i + 1..m {
            let mut together = true;
            for (k, &v) in members.iter().enumerate() {
                let side = |e: (usize, usize)| if e.0 == v { e.1 } else { e.0 };
                if labels[k][side(edges[i])] != labels[k][side(edges[j])] {
                    together = false;
                    break;
                }
            }
            if together {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<(usize, usize)>> = Default::default();
    for i in 0..m {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(edges[i]);
    }
    let mut out: Vec<Vec<(usize, usize)>> = groups.into_values().collect();
    for g in &mut out {
        g.sort_unstable();
    }
    out.sort();
    out
}

/// Seed-grown plan whose districts all have at most `cap` units.
pub fn capped_plan(instance: &Instance, districts: usize, cap: usize, seed: &mut u64) -> Plan {
    loop {
        let plan = districting::init_plan(instance, districts, *seed).unwrap();
        *seed += 1;
        if (0..districts).all(|d| plan.members(d).len() <= cap) {
            return plan;
        }
    }
}

/// Applies `members` from `source` to `dest` on a copy and returns the full
/// objective afterwards.
pub fn objective_after(instance: &Instance, plan: &Plan, moves: &[&Move], cfg: &ObjectiveConfig) -> districting::ObjectiveValue {
    let mut assignment = plan.assignment().to_vec();
    for m in moves {
        for &u in &m.members {
            assignment[u] = m.dest;
        }
    }
    let after = Plan::from_assignment(assignment, plan.districts()).unwrap();
    districting::evaluate(&build_aggregates(instance, &after), cfg).unwrap()
}

pub fn total_candidates(pool: &CandidatePool) -> usize {
    let r = pool.districts();
    let mut n = pool.len();
    for a in 0..r {
        for b in a + 1..r {
            n += districting::moves::count_valid_switches(pool, a, b).unwrap();
        }
    }
    n
}

/// Relative difference scaled by the larger magnitude (floored at 1).
pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}
