//! Problem input: spatial units, their attributes, and the shared-boundary
//! adjacency between them.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Integer identifier of a spatial unit as it appears in input files.
pub type UnitId = i64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "R: Real")]
pub struct Unit<R = f64> {
    pub id: UnitId,
    pub population: i64,
    pub area: R,
    pub perimeter: R,
}

/// Undirected adjacency between two units sharing a boundary segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "R: Real")]
pub struct Edge<R = f64> {
    pub u: UnitId,
    pub v: UnitId,
    pub shared_length: R,
}

/// Raw, unvalidated units and edges as read from (or written to) a file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "R: Real")]
pub struct InstanceData<R = f64> {
    pub units: Vec<Unit<R>>,
    pub edges: Vec<Edge<R>>,
}

/// A single invariant violation found by [`validate_instance`].
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    Empty,
    DuplicateUnit(UnitId),
    NegativePopulation(UnitId),
    NegativeArea(UnitId),
    NegativePerimeter(UnitId),
    NonFiniteGeometry(UnitId),
    SelfLoop(UnitId),
    DanglingEdge { u: UnitId, v: UnitId, missing: UnitId },
    NegativeSharedLength { u: UnitId, v: UnitId },
    ConflictingEdge { u: UnitId, v: UnitId },
    SharedExceedsPerimeter { u: UnitId, v: UnitId },
    Disconnected { components: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "instance has no units"),
            Violation::DuplicateUnit(id) => write!(f, "duplicate unit id {id}"),
            Violation::NegativePopulation(id) => write!(f, "negative population on unit {id}"),
            Violation::NegativeArea(id) => write!(f, "negative area on unit {id}"),
            Violation::NegativePerimeter(id) => write!(f, "negative perimeter on unit {id}"),
            Violation::NonFiniteGeometry(id) => write!(f, "non-finite geometry on unit {id}"),
            Violation::SelfLoop(id) => write!(f, "self loop on unit {id}"),
            Violation::DanglingEdge { u, v, missing } => {
                write!(f, "dangling edge ({u}, {v}): unknown unit {missing}")
            }
            Violation::NegativeSharedLength { u, v } => {
                write!(f, "negative shared_length on edge ({u}, {v})")
            }
            Violation::ConflictingEdge { u, v } => {
                write!(f, "duplicate edge ({u}, {v}) with conflicting shared_length")
            }
            Violation::SharedExceedsPerimeter { u, v } => {
                write!(f, "edge ({u}, {v}) shared_length exceeds an endpoint perimeter")
            }
            Violation::Disconnected { components } => {
                write!(f, "disconnected: {components} components")
            }
        }
    }
}

/// Neighbor entry in the compressed adjacency index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor<R = f64> {
    pub unit: usize,
    pub shared: R,
}

/// Validated, immutable problem instance.
///
/// Units are stored sorted by id, so internal indices follow id order. Edges
/// are stored once per unordered pair with `u < v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance<R = f64> {
    units: Vec<Unit<R>>,
    edges: Vec<Edge<R>>,
    index: HashMap<UnitId, usize>,
    offsets: Vec<usize>,
    neighbors: Vec<Neighbor<R>>,
    total_population: i64,
}

impl<R: Real> Instance<R> {
    /// Validates raw data and builds the adjacency index. The first violation
    /// found is returned as the error.
    pub fn new(data: InstanceData<R>) -> Result<Self> {
        if let Some(v) = validate_instance(&data).into_iter().next() {
            return Err(Error::Invalid(v));
        }
        Ok(Self::build(data))
    }

    fn build(data: InstanceData<R>) -> Self {
        let mut units = data.units;
        units.sort_by_key(|u| u.id);
        let index: HashMap<UnitId, usize> =
            units.iter().enumerate().map(|(i, u)| (u.id, i)).collect();

        let mut pairs: Vec<(usize, usize, R)> = data
            .edges
            .iter()
            .map(|e| {
                let (a, b) = (index[&e.u], index[&e.v]);
                (a.min(b), a.max(b), e.shared_length)
            })
            .collect();
        pairs.sort_by_key(|x| (x.0, x.1));
        pairs.dedup_by(|x, y| x.0 == y.0 && x.1 == y.1);

        let n = units.len();
        let mut degree = vec![0usize; n];
        for &(a, b, _) in &pairs {
            degree[a] += 1;
            degree[b] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..n].to_vec();
        let mut neighbors = vec![
            Neighbor {
                unit: 0,
                shared: R::zero()
            };
            offsets[n]
        ];
        for &(a, b, len) in &pairs {
            neighbors[fill[a]] = Neighbor { unit: b, shared: len };
            fill[a] += 1;
            neighbors[fill[b]] = Neighbor { unit: a, shared: len };
            fill[b] += 1;
        }
        for i in 0..n {
            neighbors[offsets[i]..offsets[i + 1]].sort_by_key(|nb| nb.unit);
        }

        let edges = pairs
            .iter()
            .map(|&(a, b, len)| Edge {
                u: units[a].id,
                v: units[b].id,
                shared_length: len,
            })
            .collect();
        let total_population = units.iter().map(|u| u.population).sum();
        Instance {
            units,
            edges,
            index,
            offsets,
            neighbors,
            total_population,
        }
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn units(&self) -> &[Unit<R>] {
        &self.units
    }

    pub fn unit(&self, index: usize) -> &Unit<R> {
        &self.units[index]
    }

    pub fn edges(&self) -> &[Edge<R>] {
        &self.edges
    }

    pub fn neighbors(&self, index: usize) -> &[Neighbor<R>] {
        &self.neighbors[self.offsets[index]..self.offsets[index + 1]]
    }

    pub fn index_of(&self, id: UnitId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn id(&self, index: usize) -> UnitId {
        self.units[index].id
    }

    pub fn population(&self, index: usize) -> i64 {
        self.units[index].population
    }

    pub fn total_population(&self) -> i64 {
        self.total_population
    }

    /// Edges as `(index, index, shared_length)` with the lower index first.
    pub fn index_edges(&self) -> impl Iterator<Item = (usize, usize, R)> + '_ {
        (0..self.len()).flat_map(move |a| {
            self.neighbors(a)
                .iter()
                .filter(move |nb| nb.unit > a)
                .map(move |nb| (a, nb.unit, nb.shared))
        })
    }

    pub fn to_data(&self) -> InstanceData<R> {
        InstanceData {
            units: self.units.clone(),
            edges: self.edges.clone(),
        }
    }
}

/// Input encodings accepted by [`load_instance`].
pub enum InstanceSource<'a> {
    Json(&'a mut dyn Read),
    CsvPair {
        units: &'a mut dyn Read,
        edges: &'a mut dyn Read,
    },
}

pub fn load_instance<R: Real>(source: InstanceSource<'_>) -> Result<Instance<R>> {
    let data = match source {
        InstanceSource::Json(reader) => serde_json::from_reader(reader)?,
        InstanceSource::CsvPair { units, edges } => InstanceData {
            units: read_csv(units)?,
            edges: read_csv(edges)?,
        },
    };
    Instance::new(data)
}

fn read_csv<T: serde::de::DeserializeOwned>(reader: &mut dyn Read) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

/// Loads an instance from a `.json` file or from a directory holding
/// `units.csv` and `edges.csv`.
pub fn load_instance_path<R: Real>(path: &std::path::Path) -> Result<Instance<R>> {
    if path.is_dir() {
        let mut units = std::fs::File::open(path.join("units.csv"))?;
        let mut edges = std::fs::File::open(path.join("edges.csv"))?;
        load_instance(InstanceSource::CsvPair {
            units: &mut units,
            edges: &mut edges,
        })
    } else {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        load_instance(InstanceSource::Json(&mut file))
    }
}

pub fn write_json<R: Real, W: Write>(instance: &Instance<R>, writer: W) -> Result<()> {
    serde_json::to_writer_pretty(writer, &instance.to_data())?;
    Ok(())
}

pub fn write_csv_pair<R: Real, W1: Write, W2: Write>(
    instance: &Instance<R>,
    units: W1,
    edges: W2,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(units);
    for u in instance.units() {
        w.serialize(u)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(edges);
    for e in instance.edges() {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

/// Lists every violated instance invariant. An empty report means the data
/// can be turned into an [`Instance`].
pub fn validate_instance<R: Real>(data: &InstanceData<R>) -> Vec<Violation> {
    let mut out = Vec::new();
    if data.units.is_empty() {
        out.push(Violation::Empty);
        return out;
    }
    let mut index: HashMap<UnitId, usize> = HashMap::with_capacity(data.units.len());
    for (i, u) in data.units.iter().enumerate() {
        if index.insert(u.id, i).is_some() {
            out.push(Violation::DuplicateUnit(u.id));
        }
        if u.population < 0 {
            out.push(Violation::NegativePopulation(u.id));
        }
        if !u.area.is_finite() || !u.perimeter.is_finite() {
            out.push(Violation::NonFiniteGeometry(u.id));
        }
        if u.area < R::zero() {
            out.push(Violation::NegativeArea(u.id));
        }
        if u.perimeter < R::zero() {
            out.push(Violation::NegativePerimeter(u.id));
        }
    }

    let n = data.units.len();
    let mut seen: HashMap<(UnitId, UnitId), R> = HashMap::new();
    let mut uf = UnionFind::new(n);
    for e in &data.edges {
        if e.u == e.v {
            out.push(Violation::SelfLoop(e.u));
            continue;
        }
        let (iu, iv) = match (index.get(&e.u), index.get(&e.v)) {
            (Some(&a), Some(&b)) => (a, b),
            (None, _) => {
                out.push(Violation::DanglingEdge {
                    u: e.u,
                    v: e.v,
                    missing: e.u,
                });
                continue;
            }
            (_, None) => {
                out.push(Violation::DanglingEdge {
                    u: e.u,
                    v: e.v,
                    missing: e.v,
                });
                continue;
            }
        };
        if !(e.shared_length >= R::zero()) {
            out.push(Violation::NegativeSharedLength { u: e.u, v: e.v });
        }
        let key = (e.u.min(e.v), e.u.max(e.v));
        match seen.get(&key) {
            Some(&len) if len != e.shared_length => {
                out.push(Violation::ConflictingEdge { u: key.0, v: key.1 })
            }
            Some(_) => {}
            None => {
                seen.insert(key, e.shared_length);
            }
        }
        let (pu, pv) = (data.units[iu].perimeter, data.units[iv].perimeter);
        if e.shared_length > pu.min(pv) {
            out.push(Violation::SharedExceedsPerimeter { u: e.u, v: e.v });
        }
        uf.union(iu, iv);
    }
    let components = uf.components();
    if components > 1 {
        out.push(Violation::Disconnected { components });
    }
    out
}

/// Number of connected components of a validated instance, by breadth-first
/// traversal.
pub fn component_count<R: Real>(instance: &Instance<R>) -> usize {
    let n = instance.len();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::new();
    let mut count = 0;
    for s in 0..n {
        if seen[s] {
            continue;
        }
        count += 1;
        seen[s] = true;
        queue.push_back(s);
        while let Some(v) = queue.pop_front() {
            for nb in instance.neighbors(v) {
                if !seen[nb.unit] {
                    seen[nb.unit] = true;
                    queue.push_back(nb.unit);
                }
            }
        }
    }
    count
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }

    fn components(&mut self) -> usize {
        (0..self.parent.len()).filter(|&i| self.find(i) == i).count()
    }
}

/// How synthetic unit populations are drawn.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PopulationModel {
    /// Every unit gets the same population.
    Uniform(i64),
    /// `round(exp(N(mu, sigma)))`, heavy-tailed.
    LogNormal { mu: f64, sigma: f64 },
}

/// Rook-adjacency grid of unit squares. Unit ids are `row * cols + col`.
pub fn generate_grid<R: Real>(
    rows: usize,
    cols: usize,
    model: PopulationModel,
    seed: u64,
) -> Result<Instance<R>> {
    if rows == 0 || cols == 0 {
        return Err(Error::Parameter(format!(
            "grid dimensions must be positive, got {rows}x{cols}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw: Box<dyn FnMut() -> i64> = match model {
        PopulationModel::Uniform(c) => {
            if c < 0 {
                return Err(Error::Parameter(format!("negative population {c}")));
            }
            Box::new(move || c)
        }
        PopulationModel::LogNormal { mu, sigma } => {
            let dist = LogNormal::new(mu, sigma)
                .map_err(|e| Error::Parameter(format!("lognormal({mu}, {sigma}): {e}")))?;
            Box::new(move || dist.sample(&mut rng).round() as i64)
        }
    };
    let mut units = Vec::with_capacity(rows * cols);
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let id = (r * cols + c) as UnitId;
            units.push(Unit {
                id,
                population: draw(),
                area: R::one(),
                perimeter: R::lit(4.0),
            });
            if c + 1 < cols {
                edges.push(Edge {
                    u: id,
                    v: id + 1,
                    shared_length: R::one(),
                });
            }
            if r + 1 < rows {
                edges.push(Edge {
                    u: id,
                    v: id + cols as UnitId,
                    shared_length: R::one(),
                });
            }
        }
    }
    Instance::new(InstanceData { units, edges })
}
