//! Districting plans and their per-district aggregates.

use std::collections::{BTreeMap, VecDeque};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{Instance, UnitId};
use crate::moves::{switch_valid, Move};
use crate::objective::ppi;
use crate::scalar::Real;

/// Assignment of every unit to one of `r` districts.
///
/// Member lists are kept alongside the assignment so that a district's units
/// can be visited without scanning the whole instance. Member order is an
/// implementation detail; it only changes through `apply_*`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Plan {
    assignment: Vec<usize>,
    members: Vec<Vec<usize>>,
    slot: Vec<usize>,
}

impl Plan {
    /// Builds a plan from a district index per unit (indexed like the
    /// instance's units). Every district in `0..districts` must be non-empty.
    pub fn from_assignment(assignment: Vec<usize>, districts: usize) -> Result<Self> {
        if districts == 0 {
            return Err(Error::Plan("plan needs at least one district".into()));
        }
        let mut members = vec![Vec::new(); districts];
        let mut slot = vec![0; assignment.len()];
        for (unit, &d) in assignment.iter().enumerate() {
            if d >= districts {
                return Err(Error::Plan(format!(
                    "unit index {unit} assigned to district {d}, but only {districts} exist"
                )));
            }
            slot[unit] = members[d].len();
            members[d].push(unit);
        }
        if let Some(d) = members.iter().position(|m| m.is_empty()) {
            return Err(Error::Plan(format!("district {d} is empty")));
        }
        Ok(Plan {
            assignment,
            members,
            slot,
        })
    }

    pub fn districts(&self) -> usize {
        self.members.len()
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn district_of(&self, unit: usize) -> usize {
        self.assignment[unit]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn members(&self, district: usize) -> &[usize] {
        &self.members[district]
    }

    fn reassign(&mut self, unit: usize, to: usize) {
        let from = self.assignment[unit];
        let pos = self.slot[unit];
        self.members[from].swap_remove(pos);
        if let Some(&moved) = self.members[from].get(pos) {
            self.slot[moved] = pos;
        }
        self.slot[unit] = self.members[to].len();
        self.members[to].push(unit);
        self.assignment[unit] = to;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "R: Real")]
pub struct DistrictAggregate<R = f64> {
    pub population: i64,
    pub area: R,
    /// Dissolved perimeter: member perimeters minus twice the internal
    /// shared boundary.
    pub perimeter: R,
    pub unit_count: usize,
}

pub fn build_aggregates<R: Real>(instance: &Instance<R>, plan: &Plan) -> Vec<DistrictAggregate<R>> {
    let mut aggs = vec![
        DistrictAggregate {
            population: 0,
            area: R::zero(),
            perimeter: R::zero(),
            unit_count: 0,
        };
        plan.districts()
    ];
    for (i, u) in instance.units().iter().enumerate() {
        let a = &mut aggs[plan.district_of(i)];
        a.population += u.population;
        a.area += u.area;
        a.perimeter += u.perimeter;
        a.unit_count += 1;
    }
    let two = R::lit(2.0);
    for (a, b, len) in instance.index_edges() {
        let d = plan.district_of(a);
        if d == plan.district_of(b) {
            aggs[d].perimeter -= two * len;
        }
    }
    aggs
}

/// Breadth-first check that a district induces a connected subgraph.
pub fn is_contiguous<R: Real>(instance: &Instance<R>, plan: &Plan, district: usize) -> bool {
    is_connected_set(instance, plan.members(district), |u| {
        plan.district_of(u) == district
    })
}

/// Every district is non-empty and contiguous.
pub fn is_plan_contiguous<R: Real>(instance: &Instance<R>, plan: &Plan) -> bool {
    (0..plan.districts()).all(|d| is_contiguous(instance, plan, d))
}

pub(crate) fn is_connected_set<R: Real>(
    instance: &Instance<R>,
    members: &[usize],
    contains: impl Fn(usize) -> bool,
) -> bool {
    let Some(&start) = members.first() else {
        return false;
    };
    let mut seen = std::collections::HashSet::with_capacity(members.len());
    seen.insert(start);
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        for nb in instance.neighbors(v) {
            if contains(nb.unit) && seen.insert(nb.unit) {
                queue.push_back(nb.unit);
            }
        }
    }
    seen.len() == members.len()
}

/// Shared-boundary sums between a unit set `set` (sorted) and its
/// surroundings, split by where the other endpoint lives.
struct Boundary<R> {
    internal: R,
    to_source_rest: R,
    to_dest: R,
    perimeter_sum: R,
    area: R,
    population: i64,
}

fn measure<R: Real>(
    instance: &Instance<R>,
    plan: &Plan,
    set: &[usize],
    source: usize,
    dest: usize,
) -> Boundary<R> {
    let mut b = Boundary {
        internal: R::zero(),
        to_source_rest: R::zero(),
        to_dest: R::zero(),
        perimeter_sum: R::zero(),
        area: R::zero(),
        population: 0,
    };
    for &u in set {
        let unit = instance.unit(u);
        b.population += unit.population;
        b.area += unit.area;
        b.perimeter_sum += unit.perimeter;
        for nb in instance.neighbors(u) {
            if set.binary_search(&nb.unit).is_ok() {
                if nb.unit > u {
                    b.internal += nb.shared;
                }
                continue;
            }
            let d = plan.district_of(nb.unit);
            if d == source {
                b.to_source_rest += nb.shared;
            } else if d == dest {
                b.to_dest += nb.shared;
            }
        }
    }
    b
}

fn move_set<R: Real>(
    instance: &Instance<R>,
    plan: &mut Plan,
    aggs: &mut [DistrictAggregate<R>],
    members: &[usize],
    source: usize,
    dest: usize,
) {
    let b = measure(instance, plan, members, source, dest);
    let two = R::lit(2.0);
    let dissolved = b.perimeter_sum - two * b.internal;
    let src = &mut aggs[source];
    src.population -= b.population;
    src.area -= b.area;
    src.perimeter = src.perimeter - dissolved + two * b.to_source_rest;
    src.unit_count -= members.len();
    let dst = &mut aggs[dest];
    dst.population += b.population;
    dst.area += b.area;
    dst.perimeter = dst.perimeter + dissolved - two * b.to_dest;
    dst.unit_count += members.len();
    for &u in members {
        plan.reassign(u, dest);
    }
}

fn check_move<R: Real>(plan: &Plan, mv: &Move<R>) -> Result<()> {
    if mv.source == mv.dest || mv.source >= plan.districts() || mv.dest >= plan.districts() {
        return Err(Error::InfeasibleMove(format!(
            "bad district pair {} -> {}",
            mv.source, mv.dest
        )));
    }
    if mv.members.is_empty() {
        return Err(Error::InfeasibleMove("empty member set".into()));
    }
    if let Some(&u) = mv.members.iter().find(|&&u| plan.district_of(u) != mv.source) {
        return Err(Error::InfeasibleMove(format!(
            "unit index {u} is not in source district {}",
            mv.source
        )));
    }
    if plan.members(mv.source).len() <= mv.members.len() {
        return Err(Error::InfeasibleMove(format!(
            "move would empty district {}",
            mv.source
        )));
    }
    Ok(())
}

/// Reassigns `mv.members` from its source to its destination and updates
/// both aggregates in time linear in the members' incident edges.
pub fn apply_move<R: Real>(
    instance: &Instance<R>,
    plan: &mut Plan,
    aggs: &mut [DistrictAggregate<R>],
    mv: &Move<R>,
) -> Result<()> {
    check_move(plan, mv)?;
    move_set(instance, plan, aggs, &mv.members, mv.source, mv.dest);
    Ok(())
}

/// Exchanges two opposite-direction moves atomically.
pub fn apply_switch<R: Real>(
    instance: &Instance<R>,
    plan: &mut Plan,
    aggs: &mut [DistrictAggregate<R>],
    first: &Move<R>,
    second: &Move<R>,
) -> Result<()> {
    if !switch_valid(first, second)? {
        return Err(Error::InvalidSwitch(
            "a move's destination contacts lie inside its partner".into(),
        ));
    }
    check_move(plan, first)?;
    check_move(plan, second)?;
    move_set(instance, plan, aggs, &first.members, first.source, first.dest);
    move_set(instance, plan, aggs, &second.members, second.source, second.dest);
    Ok(())
}

/// Writes `unit_id,district` rows.
pub fn write_plan_csv<R: Real, W: Write>(
    instance: &Instance<R>,
    plan: &Plan,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["unit_id", "district"])?;
    for i in 0..plan.len() {
        w.write_record([instance.id(i).to_string(), plan.district_of(i).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct PlanRow {
    unit_id: UnitId,
    district: usize,
}

/// Reads a `unit_id,district` CSV. The district count is one more than the
/// largest district index.
pub fn read_plan_csv<R: Real, Rd: Read>(instance: &Instance<R>, reader: Rd) -> Result<Plan> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut assignment = vec![usize::MAX; instance.len()];
    for row in rdr.deserialize() {
        let row: PlanRow = row?;
        let i = instance
            .index_of(row.unit_id)
            .ok_or_else(|| Error::Plan(format!("unknown unit id {}", row.unit_id)))?;
        if assignment[i] != usize::MAX {
            return Err(Error::Plan(format!("unit {} assigned twice", row.unit_id)));
        }
        assignment[i] = row.district;
    }
    if let Some(i) = assignment.iter().position(|&d| d == usize::MAX) {
        return Err(Error::Plan(format!("unit {} is unassigned", instance.id(i))));
    }
    let districts = assignment.iter().max().map_or(0, |m| m + 1);
    Plan::from_assignment(assignment, districts)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(bound = "R: Real")]
pub struct DistrictSummary<R = f64> {
    pub population: i64,
    pub area: R,
    pub perimeter: R,
    pub ppi: Option<R>,
}

/// Per-district summary keyed by district index, as exported next to the
/// plan CSV.
pub fn plan_summary<R: Real>(aggs: &[DistrictAggregate<R>]) -> BTreeMap<usize, DistrictSummary<R>> {
    aggs.iter()
        .enumerate()
        .map(|(d, a)| {
            (
                d,
                DistrictSummary {
                    population: a.population,
                    area: a.area,
                    perimeter: a.perimeter,
                    ppi: ppi(a.area, a.perimeter).ok(),
                },
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_grid, PopulationModel};
    use crate::moves::MoveAggregate;

    fn single(inst: &Instance, plan: &Plan, members: Vec<usize>, dest: usize) -> Move {
        let source = plan.district_of(members[0]);
        Move {
            aggregate: MoveAggregate::zero(),
            anchor: None,
            dest_contacts: members
                .iter()
                .flat_map(|&u| inst.neighbors(u).iter().map(|nb| nb.unit))
                .filter(|&w| plan.district_of(w) == dest)
                .collect(),
            members,
            source,
            dest,
        }
    }

    #[test]
    fn aggregates_of_two_cells() {
        let g: Instance = generate_grid(1, 3, PopulationModel::Uniform(5), 0).unwrap();
        let plan = Plan::from_assignment(vec![0, 0, 1], 2).unwrap();
        let aggs = build_aggregates(&g, &plan);
        assert_eq!(aggs[0].area, 2.0);
        assert_eq!(aggs[0].perimeter, 6.0);
        assert_eq!(aggs[0].population, 10);
        assert_eq!(aggs[1].perimeter, 4.0);
        assert_eq!(aggs[1].unit_count, 1);
    }

    #[test]
    fn contiguity_checks() {
        let g: Instance = generate_grid(1, 3, PopulationModel::Uniform(1), 0).unwrap();
        let plan = Plan::from_assignment(vec![0, 0, 1], 2).unwrap();
        assert!(is_contiguous(&g, &plan, 0));
        let plan = Plan::from_assignment(vec![0, 1, 0], 2).unwrap();
        assert!(!is_contiguous(&g, &plan, 0));
        assert!(is_contiguous(&g, &plan, 1));
    }

    #[test]
    fn move_updates_population_and_members() {
        let g: Instance = generate_grid(1, 4, PopulationModel::Uniform(50), 0).unwrap();
        let mut plan = Plan::from_assignment(vec![0, 0, 0, 1], 2).unwrap();
        let mut aggs = build_aggregates(&g, &plan);
        let mv = single(&g, &plan, vec![2], 1);
        apply_move(&g, &mut plan, &mut aggs, &mv).unwrap();
        assert_eq!(aggs[0].population, 100);
        assert_eq!(aggs[1].population, 100);
        assert_eq!(aggs, build_aggregates(&g, &plan));

        let mv = single(&g, &plan, vec![0, 1], 1);
        assert!(matches!(
            apply_move(&g, &mut plan, &mut aggs, &mv),
            Err(Error::InfeasibleMove(_))
        ));
    }

    #[test]
    fn composite_move_changes_both_units() {
        let g: Instance = generate_grid(1, 5, PopulationModel::Uniform(1), 0).unwrap();
        let mut plan = Plan::from_assignment(vec![0, 0, 0, 1, 1], 2).unwrap();
        let mut aggs = build_aggregates(&g, &plan);
        let mv = single(&g, &plan, vec![3, 4], 0);
        apply_move(&g, &mut plan, &mut aggs, &mv).unwrap_err();
        let mv = single(&g, &plan, vec![1, 2], 1);
        apply_move(&g, &mut plan, &mut aggs, &mv).unwrap();
        assert_eq!(plan.assignment(), &[0, 1, 1, 1, 1]);
        assert_eq!(aggs, build_aggregates(&g, &plan));
    }

    #[test]
    fn switch_and_back_is_identity() {
        let g: Instance = generate_grid(2, 4, PopulationModel::Uniform(3), 0).unwrap();
        // 0 1 | 2 3
        // 4 5 | 6 7
        let plan0 = Plan::from_assignment(vec![0, 0, 1, 1, 0, 0, 1, 1], 2).unwrap();
        let mut plan = plan0.clone();
        let mut aggs = build_aggregates(&g, &plan);
        let aggs0 = aggs.clone();
        let m1 = single(&g, &plan, vec![1], 1);
        let m2 = single(&g, &plan, vec![6], 0);
        apply_switch(&g, &mut plan, &mut aggs, &m1, &m2).unwrap();
        assert!(is_contiguous(&g, &plan, 0) && is_contiguous(&g, &plan, 1));
        assert_eq!(aggs, build_aggregates(&g, &plan));
        let b1 = single(&g, &plan, vec![1], 0);
        let b2 = single(&g, &plan, vec![6], 1);
        apply_switch(&g, &mut plan, &mut aggs, &b1, &b2).unwrap();
        assert_eq!(plan.assignment(), plan0.assignment());
        assert_eq!(aggs, aggs0);
    }

    #[test]
    fn plan_csv_round_trip() {
        let g: Instance = generate_grid(2, 2, PopulationModel::Uniform(1), 0).unwrap();
        let plan = Plan::from_assignment(vec![0, 1, 0, 1], 2).unwrap();
        let mut buf = Vec::new();
        write_plan_csv(&g, &plan, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("unit_id,district\n"));
        let back = read_plan_csv(&g, buf.as_slice()).unwrap();
        assert_eq!(back.assignment(), plan.assignment());
        assert!(read_plan_csv(&g, "unit_id,district\n0,0\n1,1\n".as_bytes()).is_err());
    }

    #[test]
    fn empty_district_rejected() {
        assert!(Plan::from_assignment(vec![0, 0, 2], 3).is_err());
    }
}
