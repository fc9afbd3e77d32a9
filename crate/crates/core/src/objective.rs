//! Population deviation, Polsby-Popper compactness, the weighted objective,
//! and aggregate-only ("dynamic") scoring of moves and switches.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::moves::Move;
use crate::plan::DistrictAggregate;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveConfig<R = f64> {
    pub weight_popdev: R,
    pub weight_compactness: R,
    pub districts: usize,
    pub total_population: i64,
}

impl<R: Real> ObjectiveConfig<R> {
    pub fn new(
        weight_popdev: R,
        weight_compactness: R,
        districts: usize,
        total_population: i64,
    ) -> Result<Self> {
        if !(weight_popdev >= R::zero() && weight_compactness >= R::zero()) {
            return Err(Error::Parameter("objective weights must be non-negative".into()));
        }
        if weight_popdev == R::zero() && weight_compactness == R::zero() {
            return Err(Error::Parameter("at least one objective weight must be positive".into()));
        }
        if districts == 0 {
            return Err(Error::Parameter("district count must be positive".into()));
        }
        Ok(ObjectiveConfig {
            weight_popdev,
            weight_compactness,
            districts,
            total_population,
        })
    }

    fn combine(&self, popdev: i64, compactness: R) -> R {
        self.weight_popdev * R::from_count(popdev) + self.weight_compactness * compactness
    }

    fn district_terms(&self, population: i64, area: R, perimeter: R, district: usize) -> Result<(i64, R)> {
        Ok((
            district_deviation(population, self.total_population, self.districts),
            compactness_term(self.total_population, area, perimeter, district)?,
        ))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(bound = "R: Real")]
pub struct ObjectiveValue<R = f64> {
    pub popdev: i64,
    pub compactness: R,
    pub combined: R,
}

/// Objective change caused by a move or switch, `f(before) - f(after)`.
/// Positive means the objective goes down.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Delta<R = f64> {
    pub popdev: i64,
    pub compactness: R,
    pub combined: R,
}

/// `floor(|p - total/r|)` computed exactly as `|r*p - total| div r`.
pub fn district_deviation(population: i64, total: i64, districts: usize) -> i64 {
    let r = districts as i128;
    ((r * population as i128 - total as i128).abs() / r) as i64
}

pub fn pop_dev(populations: &[i64], total: i64) -> Result<i64> {
    if populations.is_empty() {
        return Err(Error::Parameter("population deviation needs at least one district".into()));
    }
    Ok(populations
        .iter()
        .map(|&p| district_deviation(p, total, populations.len()))
        .sum())
}

/// Polsby-Popper index `4*pi*area / perimeter^2`.
pub fn ppi<R: Real>(area: R, perimeter: R) -> Result<R> {
    if !(area > R::zero() && perimeter > R::zero()) {
        return Err(Error::DegenerateGeometry {
            district: usize::MAX,
            area: area.to_f64().unwrap_or(f64::NAN),
            perimeter: perimeter.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(R::lit(4.0) * R::pi() * area / (perimeter * perimeter))
}

fn compactness_term<R: Real>(total: i64, area: R, perimeter: R, district: usize) -> Result<R> {
    let index = ppi(area, perimeter).map_err(|e| match e {
        Error::DegenerateGeometry { area, perimeter, .. } => Error::DegenerateGeometry {
            district,
            area,
            perimeter,
        },
        other => other,
    })?;
    Ok(R::from_count(total) / R::lit(1000.0) * (R::one() - index))
}

/// Sum over districts of `(Pop / 1000) * (1 - PPI)`.
pub fn compactness<R: Real>(aggs: &[DistrictAggregate<R>], total_population: i64) -> Result<R> {
    aggs.iter()
        .enumerate()
        .map(|(d, a)| compactness_term(total_population, a.area, a.perimeter, d))
        .sum()
}

pub fn evaluate<R: Real>(aggs: &[DistrictAggregate<R>], config: &ObjectiveConfig<R>) -> Result<ObjectiveValue<R>> {
    let pops: Vec<i64> = aggs.iter().map(|a| a.population).collect();
    let popdev = pop_dev(&pops, config.total_population)?;
    let compactness = compactness(aggs, config.total_population)?;
    Ok(ObjectiveValue {
        popdev,
        compactness,
        combined: config.combine(popdev, compactness),
    })
}

fn delta_of<R: Real>(
    config: &ObjectiveConfig<R>,
    before: [(i64, R); 2],
    after: [(i64, R); 2],
) -> Delta<R> {
    let popdev = before[0].0 + before[1].0 - after[0].0 - after[1].0;
    let compactness = (before[0].1 + before[1].1) - (after[0].1 + after[1].1);
    Delta {
        popdev,
        compactness,
        combined: config.combine(popdev, compactness),
    }
}

/// Scores a move from the two district aggregates and the move's pre-summed
/// attributes; no unit is visited.
pub fn score_move<R: Real>(
    mv: &Move<R>,
    source: &DistrictAggregate<R>,
    dest: &DistrictAggregate<R>,
    config: &ObjectiveConfig<R>,
) -> Result<Delta<R>> {
    let m = &mv.aggregate;
    let two = R::lit(2.0);
    let dissolved = m.perimeter_sum - two * m.internal_shared;
    let src_after = config.district_terms(
        source.population - m.population,
        source.area - m.area,
        source.perimeter - dissolved + two * m.shared_with_source,
        mv.source,
    )?;
    let dst_after = config.district_terms(
        dest.population + m.population,
        dest.area + m.area,
        dest.perimeter + dissolved - two * m.shared_with_dest,
        mv.dest,
    )?;
    let src_before = config.district_terms(source.population, source.area, source.perimeter, mv.source)?;
    let dst_before = config.district_terms(dest.population, dest.area, dest.perimeter, mv.dest)?;
    Ok(delta_of(config, [src_before, dst_before], [src_after, dst_after]))
}

/// Scores the simultaneous exchange of `first` (A to B) and `second`
/// (B to A). `cross_shared` is the boundary length shared by the two member
/// sets; it only matters for the compactness term.
pub fn score_switch<R: Real>(
    first: &Move<R>,
    second: &Move<R>,
    cross_shared: R,
    aggs: &[DistrictAggregate<R>],
    config: &ObjectiveConfig<R>,
) -> Result<Delta<R>> {
    let (a, b) = (&aggs[first.source], &aggs[first.dest]);
    let (m1, m2) = (&first.aggregate, &second.aggregate);
    let two = R::lit(2.0);
    let dis1 = m1.perimeter_sum - two * m1.internal_shared;
    let dis2 = m2.perimeter_sum - two * m2.internal_shared;
    let a_after = config.district_terms(
        a.population - m1.population + m2.population,
        a.area - m1.area + m2.area,
        a.perimeter - dis1 + two * m1.shared_with_source + dis2
            - two * (m2.shared_with_dest - cross_shared),
        first.source,
    )?;
    let b_after = config.district_terms(
        b.population - m2.population + m1.population,
        b.area - m2.area + m1.area,
        b.perimeter - dis2 + two * m2.shared_with_source + dis1
            - two * (m1.shared_with_dest - cross_shared),
        first.dest,
    )?;
    let a_before = config.district_terms(a.population, a.area, a.perimeter, first.source)?;
    let b_before = config.district_terms(b.population, b.area, b.perimeter, first.dest)?;
    Ok(delta_of(config, [a_before, b_before], [a_after, b_after]))
}
