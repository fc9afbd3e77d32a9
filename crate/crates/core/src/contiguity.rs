//! Per-district structure: cut points, biconnected components, the
//! block-cut tree, and the composite move attached to every cut point.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, HashSet, VecDeque};

use crate::error::{Error, Result};
use crate::instance::{Instance, Unit};
use crate::scalar::Real;

const UNSET: usize = usize::MAX;

/// Decomposition of a connected district into biconnected components.
///
/// All unit references are instance indices. `bccs[i]` is sorted and
/// `bcc_edges[i]` lists that component's edges as `(low, high)` pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockCutTree {
    pub bccs: Vec<Vec<usize>>,
    pub bcc_edges: Vec<Vec<(usize, usize)>>,
    pub cut_points: Vec<usize>,
    /// Cut points contained in each component.
    pub bcc_cut_points: Vec<Vec<usize>>,
    /// Components containing each cut point.
    pub cut_point_bccs: BTreeMap<usize, Vec<usize>>,
}

impl BlockCutTree {
    pub fn is_cut_point(&self, unit: usize) -> bool {
        self.cut_point_bccs.contains_key(&unit)
    }
}

/// Dense local numbering of a member set plus its induced adjacency.
struct LocalGraph<R> {
    units: Vec<usize>,
    offsets: Vec<usize>,
    adj: Vec<(usize, R)>,
}

impl<R: Real> LocalGraph<R> {
    fn new(instance: &Instance<R>, members: &[usize]) -> Self {
        let mut local = vec![UNSET; instance.len()];
        for (i, &u) in members.iter().enumerate() {
            local[u] = i;
        }
        let mut offsets = Vec::with_capacity(members.len() + 1);
        let mut adj = Vec::new();
        offsets.push(0);
        for &u in members {
            for nb in instance.neighbors(u) {
                let w = local[nb.unit];
                if w != UNSET {
                    adj.push((w, nb.shared));
                }
            }
            offsets.push(adj.len());
        }
        LocalGraph {
            units: members.to_vec(),
            offsets,
            adj,
        }
    }

    fn neighbors(&self, v: usize) -> &[(usize, R)] {
        &self.adj[self.offsets[v]..self.offsets[v + 1]]
    }
}

/// Finds cut points and biconnected components with an iterative Tarjan DFS.
/// Runs in time linear in the members and their induced edges.
pub fn analyze_district<R: Real>(instance: &Instance<R>, members: &[usize]) -> Result<BlockCutTree> {
    if members.is_empty() {
        return Err(Error::Parameter("cannot analyze an empty district".into()));
    }
    let g = LocalGraph::new(instance, members);
    let m = members.len();
    let mut disc = vec![UNSET; m];
    let mut low = vec![0usize; m];
    let mut time = 1;
    // (vertex, dfs parent, next neighbor slot)
    let mut stack: Vec<(usize, usize, usize)> = vec![(0, UNSET, 0)];
    let mut edge_stack: Vec<(usize, usize)> = Vec::new();
    let mut local_bccs: Vec<Vec<(usize, usize)>> = Vec::new();
    disc[0] = 0;

    while let Some(top) = stack.last_mut() {
        let (v, parent) = (top.0, top.1);
        if let Some(&(w, _)) = g.neighbors(v).get(top.2) {
            top.2 += 1;
            if disc[w] == UNSET {
                disc[w] = time;
                low[w] = time;
                time += 1;
                edge_stack.push((v, w));
                stack.push((w, v, 0));
            } else if w != parent && disc[w] < disc[v] {
                edge_stack.push((v, w));
                low[v] = low[v].min(disc[w]);
            }
        } else {
            stack.pop();
            if parent != UNSET {
                low[parent] = low[parent].min(low[v]);
                if low[v] >= disc[parent] {
                    let mut comp = Vec::new();
                    while let Some(e) = edge_stack.pop() {
                        comp.push(e);
                        if e == (parent, v) {
                            break;
                        }
                    }
                    local_bccs.push(comp);
                }
            }
        }
    }
    if time < m {
        return Err(Error::Parameter(format!(
            "district of {m} units is not connected"
        )));
    }

    let mut bccs = Vec::new();
    let mut bcc_edges = Vec::new();
    if local_bccs.is_empty() {
        bccs.push(vec![members[0]]);
        bcc_edges.push(Vec::new());
    }
    let mut mark = vec![UNSET; m];
    for (i, comp) in local_bccs.iter().enumerate() {
        let mut units = Vec::new();
        let mut edges = Vec::with_capacity(comp.len());
        for &(a, b) in comp {
            for x in [a, b] {
                if mark[x] != i {
                    mark[x] = i;
                    units.push(g.units[x]);
                }
            }
            let (ua, ub) = (g.units[a], g.units[b]);
            edges.push((ua.min(ub), ua.max(ub)));
        }
        units.sort_unstable();
        edges.sort_unstable();
        bccs.push(units);
        bcc_edges.push(edges);
    }
    // canonical order: by smallest member, then by edge list
    let mut order: Vec<usize> = (0..bccs.len()).collect();
    order.sort_by(|&a, &b| bccs[a].cmp(&bccs[b]).then_with(|| bcc_edges[a].cmp(&bcc_edges[b])));
    let bccs: Vec<Vec<usize>> = order.iter().map(|&i| bccs[i].clone()).collect();
    let bcc_edges: Vec<Vec<(usize, usize)>> = order.iter().map(|&i| bcc_edges[i].clone()).collect();

    let mut membership: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, units) in bccs.iter().enumerate() {
        for &u in units {
            membership.entry(u).or_default().push(i);
        }
    }
    let cut_point_bccs: BTreeMap<usize, Vec<usize>> =
        membership.into_iter().filter(|(_, b)| b.len() >= 2).collect();
    let cut_points: Vec<usize> = cut_point_bccs.keys().copied().collect();
    let bcc_cut_points = bccs
        .iter()
        .map(|units| {
            units
                .iter()
                .copied()
                .filter(|u| cut_point_bccs.contains_key(u))
                .collect()
        })
        .collect();
    Ok(BlockCutTree {
        bccs,
        bcc_edges,
        cut_points,
        bcc_cut_points,
        cut_point_bccs,
    })
}

/// Attribute sums over a set of units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitSetAggregate<R = f64> {
    pub count: usize,
    pub population: i64,
    pub area: R,
    pub perimeter_sum: R,
    /// Total shared length over edges with both endpoints in the set.
    pub internal_shared: R,
}

impl<R: Real> UnitSetAggregate<R> {
    pub fn zero() -> Self {
        UnitSetAggregate {
            count: 0,
            population: 0,
            area: R::zero(),
            perimeter_sum: R::zero(),
            internal_shared: R::zero(),
        }
    }

    pub fn add_unit(&mut self, unit: &Unit<R>) {
        self.count += 1;
        self.population += unit.population;
        self.area += unit.area;
        self.perimeter_sum += unit.perimeter;
    }

    pub fn merge(&mut self, other: &Self) {
        self.count += other.count;
        self.population += other.population;
        self.area += other.area;
        self.perimeter_sum += other.perimeter_sum;
        self.internal_shared += other.internal_shared;
    }

    /// Direct sum over `members` (sorted), scanning incident edges.
    pub fn of(instance: &Instance<R>, members: &[usize]) -> Self {
        let mut agg = Self::zero();
        for &u in members {
            agg.add_unit(instance.unit(u));
            for nb in instance.neighbors(u) {
                if nb.unit > u && members.binary_search(&nb.unit).is_ok() {
                    agg.internal_shared += nb.shared;
                }
            }
        }
        agg
    }

    /// Perimeter of the set with internal boundaries dissolved.
    pub fn dissolved_perimeter(&self) -> R {
        self.perimeter_sum - R::lit(2.0) * self.internal_shared
    }
}

/// What "size" means when deciding which side of a cut point stays put.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SizeMeasure {
    #[default]
    Units,
    Population,
}

impl SizeMeasure {
    fn weight<R: Real>(self, instance: &Instance<R>, unit: usize) -> i64 {
        match self {
            SizeMeasure::Units => 1,
            SizeMeasure::Population => instance.population(unit),
        }
    }
}

/// The smallest contiguity-preserving set that moves together with a cut
/// point: the cut point plus every component that is not kept as the main
/// part of the district.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositeMove<R = f64> {
    pub anchor: usize,
    /// Sorted instance indices, anchor included.
    pub members: Vec<usize>,
    pub aggregate: UnitSetAggregate<R>,
}

/// Running totals for a block plus everything already folded into it,
/// excluding the block's current cut points.
#[derive(Clone, Copy)]
struct Blob<R> {
    weight: i64,
    min: usize,
    agg: UnitSetAggregate<R>,
}

impl<R: Real> Blob<R> {
    fn empty() -> Self {
        Blob {
            weight: 0,
            min: UNSET,
            agg: UnitSetAggregate::zero(),
        }
    }

    fn add_unit(&mut self, instance: &Instance<R>, measure: SizeMeasure, u: usize) {
        self.weight += measure.weight(instance, u);
        self.min = self.min.min(u);
        self.agg.add_unit(instance.unit(u));
    }

    fn merge(&mut self, other: &Self) {
        self.weight += other.weight;
        self.min = self.min.min(other.min);
        self.agg.merge(&other.agg);
    }

    /// Ordering used to pick the component that stays: heavier wins, and on
    /// equal weight the component holding the lowest unit id wins.
    fn rank(&self, other: &Self) -> Ordering {
        self.weight
            .cmp(&other.weight)
            .then_with(|| Reverse(self.min).cmp(&Reverse(other.min)))
    }
}

struct BlockState<R> {
    cut_points: Vec<usize>,
    blob: Blob<R>,
    absorbed: Vec<usize>,
}

#[derive(Default)]
struct CutState {
    remaining: Vec<usize>,
    largest: Option<usize>,
    rest: Vec<usize>,
    processed_weight: i64,
}

/// Builds one composite move per cut point by peeling leaf blocks of the
/// block-cut tree toward its interior. Attribute sums are folded along the
/// way, so every composite's aggregate is available without rescanning its
/// members.
pub fn composite_moves<R: Real>(
    instance: &Instance<R>,
    members: &[usize],
    tree: &BlockCutTree,
    measure: SizeMeasure,
) -> Vec<CompositeMove<R>> {
    if tree.cut_points.is_empty() {
        return Vec::new();
    }
    let total_weight: i64 = members.iter().map(|&u| measure.weight(instance, u)).sum();

    let mut blocks: Vec<BlockState<R>> = tree
        .bccs
        .iter()
        .zip(&tree.bcc_edges)
        .zip(&tree.bcc_cut_points)
        .map(|((units, edges), cpts)| {
            let mut blob = Blob::empty();
            for &u in units {
                if !tree.is_cut_point(u) {
                    blob.add_unit(instance, measure, u);
                }
            }
            for &(a, b) in edges {
                blob.agg.internal_shared += shared_length(instance, a, b);
            }
            BlockState {
                cut_points: cpts.clone(),
                blob,
                absorbed: Vec::new(),
            }
        })
        .collect();

    let mut cuts: BTreeMap<usize, CutState> = tree
        .cut_point_bccs
        .iter()
        .map(|(&c, bccs)| {
            (
                c,
                CutState {
                    remaining: bccs.clone(),
                    ..CutState::default()
                },
            )
        })
        .collect();

    let mut leaves: VecDeque<usize> = (0..blocks.len())
        .filter(|&b| blocks[b].cut_points.len() == 1)
        .collect();
    let mut out = Vec::with_capacity(cuts.len());

    while let Some(b) = leaves.pop_front() {
        let Some(&c) = blocks[b].cut_points.first() else {
            continue;
        };
        let cut_weight = measure.weight(instance, c);
        let state = cuts.get_mut(&c).expect("cut point state");

        match state.largest {
            Some(m) if blocks[b].blob.rank(&blocks[m].blob) != Ordering::Greater => {
                state.rest.push(b)
            }
            Some(m) => {
                state.rest.push(m);
                state.largest = Some(b);
            }
            None => state.largest = Some(b),
        }
        state.processed_weight += blocks[b].blob.weight;
        state.remaining.retain(|&x| x != b);

        if state.remaining.len() == 1 {
            let largest = state.largest.expect("largest component");
            let size_max = cut_weight + blocks[largest].blob.weight;
            let size_union = cut_weight + state.processed_weight;
            if size_max < total_weight - size_union + cut_weight {
                // the unprocessed side is the main part: everything peeled
                // so far travels with the cut point
                state.rest.push(largest);
                state.largest = None;
                let main = state.remaining.pop().expect("remaining block");
                let mut carried = Blob::empty();
                carried.add_unit(instance, measure, c);
                for &r in &state.rest {
                    carried.merge(&blocks[r].blob);
                }
                let target = &mut blocks[main];
                target.cut_points.retain(|&x| x != c);
                target.blob.merge(&carried);
                target.absorbed.push(c);
                if target.cut_points.len() == 1 {
                    leaves.push_back(main);
                }
            }
        }

        if state.remaining.is_empty() {
            let mut agg = UnitSetAggregate::zero();
            agg.add_unit(instance.unit(c));
            for &r in &state.rest {
                agg.merge(&blocks[r].blob.agg);
            }
            out.push((c, agg));
        }
    }

    debug_assert_eq!(out.len(), cuts.len(), "every cut point yields one composite");
    let mut seen = HashSet::new();
    let mut composites: Vec<CompositeMove<R>> = out
        .into_iter()
        .map(|(c, aggregate)| {
            seen.clear();
            let members = materialize(tree, &blocks, &cuts, c, &mut seen);
            CompositeMove {
                anchor: c,
                members,
                aggregate,
            }
        })
        .collect();
    composites.sort_by_key(|cm| cm.anchor);
    composites
}

fn materialize<R>(
    tree: &BlockCutTree,
    blocks: &[BlockState<R>],
    cuts: &BTreeMap<usize, CutState>,
    anchor: usize,
    seen: &mut HashSet<usize>,
) -> Vec<usize> {
    let mut out = vec![anchor];
    seen.insert(anchor);
    let mut stack: Vec<usize> = cuts[&anchor].rest.clone();
    while let Some(b) = stack.pop() {
        for &u in &tree.bccs[b] {
            if seen.insert(u) {
                out.push(u);
            }
        }
        for c in &blocks[b].absorbed {
            stack.extend_from_slice(&cuts[c].rest);
        }
    }
    out.sort_unstable();
    out
}

fn shared_length<R: Real>(instance: &Instance<R>, a: usize, b: usize) -> R {
    let nbs = instance.neighbors(a);
    let i = nbs
        .binary_search_by_key(&b, |nb| nb.unit)
        .expect("block edge exists in instance");
    nbs[i].shared
}

/// Default member-set limit for [`minimal_move_oracle`].
pub const ORACLE_LIMIT: usize = 25;

/// Exhaustive reference for composite moves: the smallest connected set
/// containing `anchor` whose removal leaves the rest of `members` connected
/// and non-empty. Among equally small sets, the one whose remainder holds
/// the lowest unit id is returned. `None` when no such set exists.
pub fn minimal_move_oracle<R: Real>(
    instance: &Instance<R>,
    members: &[usize],
    anchor: usize,
) -> Result<Option<Vec<usize>>> {
    minimal_move_oracle_with_limit(instance, members, anchor, ORACLE_LIMIT)
}

pub fn minimal_move_oracle_with_limit<R: Real>(
    instance: &Instance<R>,
    members: &[usize],
    anchor: usize,
    limit: usize,
) -> Result<Option<Vec<usize>>> {
    let limit = limit.min(64);
    if members.len() > limit {
        return Err(Error::OracleTooLarge {
            size: members.len(),
            limit,
        });
    }
    let mut sorted = members.to_vec();
    sorted.sort_unstable();
    let Ok(a) = sorted.binary_search(&anchor) else {
        return Err(Error::Parameter(format!(
            "anchor {anchor} is not a member of the district"
        )));
    };
    let m = sorted.len();
    let full: u64 = if m == 64 { u64::MAX } else { (1u64 << m) - 1 };
    let adj: Vec<u64> = sorted
        .iter()
        .map(|&u| {
            instance
                .neighbors(u)
                .iter()
                .filter_map(|nb| sorted.binary_search(&nb.unit).ok())
                .fold(0u64, |acc, j| acc | (1 << j))
        })
        .collect();

    let mut level: HashSet<u64> = HashSet::from([1u64 << a]);
    for _ in 1..m {
        let mut best: Option<(u32, u64)> = None;
        for &set in &level {
            let rest = full & !set;
            if connected(rest, &adj) {
                let key = (rest.trailing_zeros(), set);
                if best.is_none_or(|b| key < b) {
                    best = Some(key);
                }
            }
        }
        if let Some((_, set)) = best {
            return Ok(Some(
                (0..m).filter(|&i| set >> i & 1 == 1).map(|i| sorted[i]).collect(),
            ));
        }
        let mut next = HashSet::new();
        for &set in &level {
            let mut frontier = adj_of(set, &adj) & !set & full;
            while frontier != 0 {
                let bit = frontier & frontier.wrapping_neg();
                frontier ^= bit;
                next.insert(set | bit);
            }
        }
        level = next;
    }
    Ok(None)
}

fn adj_of(set: u64, adj: &[u64]) -> u64 {
    let mut bits = set;
    let mut out = 0;
    while bits != 0 {
        let i = bits.trailing_zeros() as usize;
        bits &= bits - 1;
        out |= adj[i];
    }
    out
}

fn connected(set: u64, adj: &[u64]) -> bool {
    if set == 0 {
        return false;
    }
    let mut reach = set & set.wrapping_neg();
    loop {
        let grown = (reach | adj_of(reach, adj)) & set;
        if grown == reach {
            return reach == set;
        }
        reach = grown;
    }
}
