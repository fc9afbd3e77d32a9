//! Candidate moves between adjacent districts, switch validity, and the
//! population-sorted switch search.

use crate::contiguity::{analyze_district, composite_moves, SizeMeasure, UnitSetAggregate};
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::objective::{district_deviation, score_switch, Delta, ObjectiveConfig};
use crate::plan::{DistrictAggregate, Plan};
use crate::scalar::Real;

/// Pre-summed attributes of a move's member set `M`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MoveAggregate<R = f64> {
    pub count: usize,
    pub population: i64,
    pub area: R,
    /// Sum of the members' own perimeters.
    pub perimeter_sum: R,
    /// Shared length of edges inside `M`.
    pub internal_shared: R,
    /// Shared length between `M` and the rest of the source district.
    pub shared_with_source: R,
    /// Shared length between `M` and the destination district.
    pub shared_with_dest: R,
}

impl<R: Real> MoveAggregate<R> {
    pub fn zero() -> Self {
        MoveAggregate {
            count: 0,
            population: 0,
            area: R::zero(),
            perimeter_sum: R::zero(),
            internal_shared: R::zero(),
            shared_with_source: R::zero(),
            shared_with_dest: R::zero(),
        }
    }

    fn from_set(set: &UnitSetAggregate<R>, shared_with_source: R, shared_with_dest: R) -> Self {
        MoveAggregate {
            count: set.count,
            population: set.population,
            area: set.area,
            perimeter_sum: set.perimeter_sum,
            internal_shared: set.internal_shared,
            shared_with_source,
            shared_with_dest,
        }
    }
}

/// Reassignment of `members` from `source` to `dest`.
#[derive(Clone, Debug, PartialEq)]
pub struct Move<R = f64> {
    /// Sorted instance indices.
    pub members: Vec<usize>,
    /// Cut point a composite move is attached to; `None` for single units.
    pub anchor: Option<usize>,
    pub source: usize,
    pub dest: usize,
    pub aggregate: MoveAggregate<R>,
    /// Sorted units of `dest` adjacent to some member.
    pub dest_contacts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MoveKey {
    pub source: usize,
    pub dest: usize,
    pub members: Vec<usize>,
}

impl<R> Move<R> {
    pub fn is_composite(&self) -> bool {
        self.anchor.is_some()
    }

    pub fn key(&self) -> MoveKey {
        MoveKey {
            source: self.source,
            dest: self.dest,
            members: self.members.clone(),
        }
    }

    /// Key of the move that would undo this one.
    pub fn reverse_key(&self) -> MoveKey {
        MoveKey {
            source: self.dest,
            dest: self.source,
            members: self.members.clone(),
        }
    }
}

/// Which members must touch a district for a composite move into it to be
/// generated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BorderRule {
    #[default]
    AnyMember,
    AnchorOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolOptions {
    pub composite: bool,
    pub border: BorderRule,
    pub size: SizeMeasure,
}

impl Default for PoolOptions {
    fn default() -> Self {
        PoolOptions {
            composite: true,
            border: BorderRule::default(),
            size: SizeMeasure::default(),
        }
    }
}

impl PoolOptions {
    pub fn traditional() -> Self {
        PoolOptions {
            composite: false,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Movable<R> {
    members: Vec<usize>,
    anchor: Option<usize>,
    set: UnitSetAggregate<R>,
}

/// All feasible moves of a plan, bucketed by ordered district pair and
/// sorted by population within each bucket.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidatePool<R = f64> {
    options: PoolOptions,
    districts: usize,
    movable: Vec<Vec<Movable<R>>>,
    pairs: Vec<Vec<Move<R>>>,
}

impl<R: Real> CandidatePool<R> {
    pub fn enumerate(instance: &Instance<R>, plan: &Plan, options: PoolOptions) -> Result<Self> {
        let r = plan.districts();
        let mut pool = CandidatePool {
            options,
            districts: r,
            movable: vec![Vec::new(); r],
            pairs: vec![Vec::new(); r * r],
        };
        let all: Vec<usize> = (0..r).collect();
        pool.update(instance, plan, &all)?;
        Ok(pool)
    }

    /// Regenerates every bucket touching a district in `affected`. Buckets
    /// between two unaffected districts are kept as they are.
    pub fn update(&mut self, instance: &Instance<R>, plan: &Plan, affected: &[usize]) -> Result<()> {
        let r = self.districts;
        if plan.districts() != r {
            return Err(Error::Plan("district count changed under the candidate pool".into()));
        }
        let mut hit = vec![false; r];
        for &d in affected {
            if d >= r {
                return Err(Error::Plan(format!("district {d} out of range")));
            }
            hit[d] = true;
        }
        for (d, &h) in hit.iter().enumerate() {
            if h {
                self.movable[d] = district_movables(instance, plan, d, self.options)?;
            }
        }
        for a in 0..r {
            for b in 0..r {
                if hit[a] || hit[b] {
                    self.pairs[a * r + b].clear();
                }
            }
        }
        let mut shared = vec![R::zero(); r];
        let mut contacts: Vec<Vec<usize>> = vec![Vec::new(); r];
        for d in 0..r {
            for mv in &self.movable[d] {
                generate_moves(
                    instance,
                    plan,
                    d,
                    mv,
                    self.options.border,
                    |dest| hit[d] || hit[dest],
                    &mut shared,
                    &mut contacts,
                    &mut self.pairs[d * r..(d + 1) * r],
                );
            }
        }
        for a in 0..r {
            for b in 0..r {
                if hit[a] || hit[b] {
                    self.pairs[a * r + b].sort_by(|x, y| {
                        x.aggregate
                            .population
                            .cmp(&y.aggregate.population)
                            .then_with(|| x.members.cmp(&y.members))
                    });
                }
            }
        }
        Ok(())
    }

    pub fn options(&self) -> PoolOptions {
        self.options
    }

    pub fn districts(&self) -> usize {
        self.districts
    }

    /// Moves from `source` to `dest`, sorted by population.
    pub fn moves(&self, source: usize, dest: usize) -> &[Move<R>] {
        &self.pairs[source * self.districts + dest]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Move<R>> {
        self.pairs.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.pairs.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unordered district pairs `(a, b)`, `a < b`, with moves in both
    /// directions.
    pub fn switch_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let r = self.districts;
        (0..r).flat_map(move |a| {
            (a + 1..r).filter_map(move |b| {
                (!self.moves(a, b).is_empty() && !self.moves(b, a).is_empty()).then_some((a, b))
            })
        })
    }
}

fn district_movables<R: Real>(
    instance: &Instance<R>,
    plan: &Plan,
    d: usize,
    options: PoolOptions,
) -> Result<Vec<Movable<R>>> {
    let mut members = plan.members(d).to_vec();
    if members.len() <= 1 {
        return Ok(Vec::new());
    }
    members.sort_unstable();
    let tree = analyze_district(instance, &members)?;
    let mut out: Vec<Movable<R>> = members
        .iter()
        .filter(|&&u| !tree.is_cut_point(u))
        .map(|&u| Movable {
            members: vec![u],
            anchor: None,
            set: UnitSetAggregate::of(instance, &[u]),
        })
        .collect();
    if options.composite {
        out.extend(
            composite_moves(instance, &members, &tree, options.size)
                .into_iter()
                .map(|c| Movable {
                    members: c.members,
                    anchor: Some(c.anchor),
                    set: c.aggregate,
                }),
        );
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn generate_moves<R: Real>(
    instance: &Instance<R>,
    plan: &Plan,
    source: usize,
    mv: &Movable<R>,
    border: BorderRule,
    wanted: impl Fn(usize) -> bool,
    shared: &mut [R],
    contacts: &mut [Vec<usize>],
    out: &mut [Vec<Move<R>>],
) {
    let mut shared_with_source = R::zero();
    let mut touched: Vec<usize> = Vec::new();
    for &u in &mv.members {
        for nb in instance.neighbors(u) {
            let d = plan.district_of(nb.unit);
            if d == source {
                if mv.members.binary_search(&nb.unit).is_err() {
                    shared_with_source += nb.shared;
                }
                continue;
            }
            if contacts[d].is_empty() {
                touched.push(d);
                shared[d] = R::zero();
            }
            shared[d] += nb.shared;
            contacts[d].push(nb.unit);
        }
    }
    let anchor_dests: Vec<usize> = match (border, mv.anchor) {
        (BorderRule::AnchorOnly, Some(a)) => instance
            .neighbors(a)
            .iter()
            .map(|nb| plan.district_of(nb.unit))
            .filter(|&d| d != source)
            .collect(),
        _ => Vec::new(),
    };
    touched.sort_unstable();
    for &d in &touched {
        let mut cs = std::mem::take(&mut contacts[d]);
        let allowed = match (border, mv.anchor) {
            (BorderRule::AnchorOnly, Some(_)) => anchor_dests.contains(&d),
            _ => true,
        };
        if allowed && wanted(d) {
            cs.sort_unstable();
            cs.dedup();
            out[d].push(Move {
                members: mv.members.clone(),
                anchor: mv.anchor,
                source,
                dest: d,
                aggregate: MoveAggregate::from_set(&mv.set, shared_with_source, shared[d]),
                dest_contacts: cs,
            });
        }
    }
}

/// A switch exchanges `first` (A to B) with `second` (B to A). It is invalid
/// when all of a move's contacts with its destination belong to the partner
/// move, since the moved set would arrive disconnected.
pub fn switch_valid<R>(first: &Move<R>, second: &Move<R>) -> Result<bool> {
    if first.source != second.dest || first.dest != second.source || first.source == first.dest {
        return Err(Error::InvalidSwitch(format!(
            "moves {}->{} and {}->{} do not run in opposite directions",
            first.source, first.dest, second.source, second.dest
        )));
    }
    let covered = |contacts: &[usize], members: &[usize]| {
        contacts.iter().all(|c| members.binary_search(c).is_ok())
    };
    Ok(!covered(&first.dest_contacts, &second.members)
        && !covered(&second.dest_contacts, &first.members))
}

/// Total shared length between two disjoint member sets.
pub fn shared_between<R: Real>(instance: &Instance<R>, a: &[usize], b: &[usize]) -> R {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut total = R::zero();
    for &u in small {
        for nb in instance.neighbors(u) {
            if large.binary_search(&nb.unit).is_ok() {
                total += nb.shared;
            }
        }
    }
    total
}

/// A switch found by [`best_switch`]: indices into `pool.moves(a, b)` and
/// `pool.moves(b, a)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwitchChoice<R = f64> {
    pub first: usize,
    pub second: usize,
    pub delta: Delta<R>,
}

/// Best valid switch between `a` and `b`.
///
/// For each forward move of population `x` the backward list is binary
/// searched for the counter-transfer closest to `x - (pA - pB) / 2` and
/// `window` neighbours on each side are scored. With a zero compactness
/// weight the scan continues past the window until population deviation can
/// no longer improve on the best found, which makes the result optimal.
#[allow(clippy::too_many_arguments)]
pub fn best_switch<R: Real>(
    instance: &Instance<R>,
    pool: &CandidatePool<R>,
    a: usize,
    b: usize,
    aggs: &[DistrictAggregate<R>],
    config: &ObjectiveConfig<R>,
    window: usize,
    allowed: &dyn Fn(&Move<R>) -> bool,
) -> Result<Option<SwitchChoice<R>>> {
    let forward = pool.moves(a, b);
    let backward = pool.moves(b, a);
    if forward.is_empty() || backward.is_empty() {
        return Ok(None);
    }
    let exact = config.weight_compactness == R::zero();
    let (pa, pb) = (aggs[a].population, aggs[b].population);
    let total = config.total_population;
    let r = config.districts;
    let ri = r as i128;
    let dev = |p: i64| district_deviation(p, total, r);
    let base = dev(pa) + dev(pb);

    let mut best: Option<SwitchChoice<R>> = None;
    for (i, m1) in forward.iter().enumerate() {
        if !allowed(m1) {
            continue;
        }
        let x = m1.aggregate.population;
        let target2 = 2 * x - pa + pb;
        let pos = backward.partition_point(|m| 2 * m.aggregate.population < target2);
        let center = if pos == backward.len()
            || (pos > 0
                && target2 - 2 * backward[pos - 1].aggregate.population
                    <= 2 * backward[pos].aggregate.population - target2)
        {
            pos - 1
        } else {
            pos
        };

        let consider = |j: usize, best: &mut Option<SwitchChoice<R>>| -> Result<()> {
            let m2 = &backward[j];
            if !allowed(m2) || !switch_valid(m1, m2)? {
                return Ok(());
            }
            let cross = if exact {
                R::zero()
            } else {
                shared_between(instance, &m1.members, &m2.members)
            };
            let delta = score_switch(m1, m2, cross, aggs, config)?;
            if best.is_none_or(|b| delta.combined > b.delta.combined) {
                *best = Some(SwitchChoice {
                    first: i,
                    second: j,
                    delta,
                });
            }
            Ok(())
        };

        // population-only gain and whether moving further in `up` direction
        // can only make it worse
        let pop_gain = |t: i64| base - dev(pa - x + t) - dev(pb + x - t);
        let monotone = |t: i64, up: bool| {
            let a_after = (pa - x + t) as i128;
            let da = ri * a_after - total as i128;
            let db = ri * (pa as i128 + pb as i128 - a_after) - total as i128;
            if up {
                da >= 0 && db <= 0
            } else {
                da <= 0 && db >= 0
            }
        };
        let stop = |j: usize, steps: usize, up: bool, best: &Option<SwitchChoice<R>>| {
            if steps <= window {
                return false;
            }
            if !exact {
                return true;
            }
            let t = backward[j].aggregate.population;
            monotone(t, up)
                && best.is_some_and(|b| config.weight_popdev * R::from_count(pop_gain(t)) <= b.delta.combined)
        };

        for (steps, j) in (center..backward.len()).enumerate() {
            if stop(j, steps, true, &best) {
                break;
            }
            consider(j, &mut best)?;
        }
        for (steps, j) in (1..).zip((0..center).rev()) {
            if stop(j, steps, false, &best) {
                break;
            }
            consider(j, &mut best)?;
        }
    }
    Ok(best)
}

/// Scores every valid switch between `a` and `b`; reference for
/// [`best_switch`].
pub fn best_switch_exhaustive<R: Real>(
    instance: &Instance<R>,
    pool: &CandidatePool<R>,
    a: usize,
    b: usize,
    aggs: &[DistrictAggregate<R>],
    config: &ObjectiveConfig<R>,
    allowed: &dyn Fn(&Move<R>) -> bool,
) -> Result<Option<SwitchChoice<R>>> {
    let mut best: Option<SwitchChoice<R>> = None;
    for (i, m1) in pool.moves(a, b).iter().enumerate() {
        if !allowed(m1) {
            continue;
        }
        for (j, m2) in pool.moves(b, a).iter().enumerate() {
            if !allowed(m2) || !switch_valid(m1, m2)? {
                continue;
            }
            let cross = shared_between(instance, &m1.members, &m2.members);
            let delta = score_switch(m1, m2, cross, aggs, config)?;
            if best.is_none_or(|b| delta.combined > b.delta.combined) {
                best = Some(SwitchChoice {
                    first: i,
                    second: j,
                    delta,
                });
            }
        }
    }
    Ok(best)
}

/// Number of valid switches between `a` and `b`.
pub fn count_valid_switches<R: Real>(pool: &CandidatePool<R>, a: usize, b: usize) -> Result<usize> {
    let mut n = 0;
    for m1 in pool.moves(a, b) {
        for m2 in pool.moves(b, a) {
            if switch_valid(m1, m2)? {
                n += 1;
            }
        }
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_grid, PopulationModel};

    fn strip_plan(cols: usize, split: usize) -> (Instance, Plan) {
        let g = generate_grid(1, cols, PopulationModel::Uniform(10), 0).unwrap();
        let assignment = (0..cols).map(|c| usize::from(c >= split)).collect();
        (g, Plan::from_assignment(assignment, 2).unwrap())
    }

    #[test]
    fn path_split_moves() {
        let (g, plan) = strip_plan(6, 3);
        let pool = CandidatePool::enumerate(&g, &plan, PoolOptions::traditional()).unwrap();
        // only the two end units of each half can move, and only unit 2 and
        // unit 3 touch the other district
        let ab: Vec<_> = pool.moves(0, 1).iter().map(|m| m.members.clone()).collect();
        let ba: Vec<_> = pool.moves(1, 0).iter().map(|m| m.members.clone()).collect();
        assert_eq!(ab, vec![vec![2]]);
        assert_eq!(ba, vec![vec![3]]);
        let m = &pool.moves(0, 1)[0];
        assert_eq!(m.dest_contacts, vec![3]);
        assert_eq!(m.aggregate.shared_with_source, 1.0);
        assert_eq!(m.aggregate.shared_with_dest, 1.0);
        // swapping 2 and 3 would detach both
        assert!(!switch_valid(m, &pool.moves(1, 0)[0]).unwrap());
        assert_eq!(count_valid_switches(&pool, 0, 1).unwrap(), 0);
    }

    #[test]
    fn composite_moves_appear() {
        let (g, plan) = strip_plan(6, 3);
        let pool = CandidatePool::enumerate(&g, &plan, PoolOptions::default()).unwrap();
        let ab: Vec<_> = pool.moves(0, 1).iter().map(|m| m.members.clone()).collect();
        assert_eq!(ab, vec![vec![2], vec![1, 2]]);
        let m = &pool.moves(0, 1)[1];
        assert_eq!(m.anchor, Some(1));
        assert_eq!(m.aggregate.internal_shared, 1.0);
        assert_eq!(m.aggregate.population, 20);
        // the tie at cut point 4 keeps unit 3, so {4, 5} never touches A
        let ba: Vec<_> = pool.moves(1, 0).iter().map(|m| m.members.clone()).collect();
        assert_eq!(ba, vec![vec![3]]);
        assert_eq!(count_valid_switches(&pool, 0, 1).unwrap(), 0);
    }

    #[test]
    fn switch_requires_opposite_directions() {
        let (g, plan) = strip_plan(4, 2);
        let pool = CandidatePool::enumerate(&g, &plan, PoolOptions::traditional()).unwrap();
        let m = &pool.moves(0, 1)[0];
        assert!(switch_valid(m, m).is_err());
    }

    #[test]
    fn grid_switch_matches_exhaustive() {
        let g = generate_grid(4, 4, PopulationModel::LogNormal { mu: 3.0, sigma: 1.0 }, 7).unwrap();
        let assignment = (0..16).map(|i| usize::from(i % 4 >= 2)).collect();
        let plan = Plan::from_assignment(assignment, 2).unwrap();
        let aggs = crate::plan::build_aggregates(&g, &plan);
        let pool = CandidatePool::enumerate(&g, &plan, PoolOptions::default()).unwrap();
        let cfg = ObjectiveConfig::new(1.0, 0.0, 2, g.total_population()).unwrap();
        let any = |_: &Move| true;
        let fast = best_switch(&g, &pool, 0, 1, &aggs, &cfg, 0, &any).unwrap();
        let slow = best_switch_exhaustive(&g, &pool, 0, 1, &aggs, &cfg, &any).unwrap();
        assert_eq!(fast.map(|s| s.delta.combined), slow.map(|s| s.delta.combined));
        assert!(count_valid_switches(&pool, 0, 1).unwrap() > 0);
    }
}
