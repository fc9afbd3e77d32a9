//! Seed-growing initialization, the Tabu engine, method presets and the
//! multi-restart driver.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::time::{Duration, Instant};

use indexmap::IndexSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contiguity::SizeMeasure;
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::moves::{best_switch, BorderRule, CandidatePool, Move, MoveKey, PoolOptions};
use crate::objective::{evaluate, score_move, Delta, ObjectiveConfig, ObjectiveValue};
use crate::plan::{apply_move, apply_switch, build_aggregates, is_contiguous, is_plan_contiguous, DistrictAggregate, Plan};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Greedy,
    Kl,
    Tabu,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Greedy => "greedy",
            Method::Kl => "kl",
            Method::Tabu => "tabu",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "greedy" => Ok(Method::Greedy),
            "kl" => Ok(Method::Kl),
            "tabu" => Ok(Method::Tabu),
            other => Err(Error::Parameter(format!("unknown method {other:?}"))),
        }
    }
}

/// A method with or without composite moves; the six combinations are the
/// compared presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Preset {
    pub method: Method,
    pub composite: bool,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset { method: Method::Greedy, composite: false },
        Preset { method: Method::Greedy, composite: true },
        Preset { method: Method::Kl, composite: false },
        Preset { method: Method::Kl, composite: true },
        Preset { method: Method::Tabu, composite: false },
        Preset { method: Method::Tabu, composite: true },
    ];

    /// `tabu`, `tabu_composite`, ...
    pub fn name(&self) -> String {
        if self.composite {
            format!("{}_composite", self.method)
        } else {
            self.method.to_string()
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    /// Accepts `tabu`, `tabu*`, `tabu_composite` and `tabu+composite`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        for suffix in ["_composite", "+composite", "*"] {
            if let Some(base) = lower.strip_suffix(suffix) {
                return Ok(Preset { method: base.parse()?, composite: true });
            }
        }
        Ok(Preset { method: lower.parse()?, composite: false })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchConfig<R = f64> {
    pub method: Method,
    pub composite: bool,
    pub tabu_factor: f64,
    pub nim_factor: f64,
    pub weight_popdev: R,
    pub weight_compactness: R,
    pub districts: usize,
    pub seed: u64,
    pub border: BorderRule,
    pub size: SizeMeasure,
    /// Neighbours scored on each side of the population target in the
    /// switch search.
    pub switch_window: usize,
    /// Allow a tabu candidate when it would produce a new best.
    pub aspiration: bool,
    /// Hard cap on steps; `None` leaves stopping to the method.
    pub max_iterations: Option<u64>,
    /// Check contiguity and non-emptiness of both touched districts after
    /// every step.
    pub verify: bool,
}

impl<R: Real> SearchConfig<R> {
    pub fn new(method: Method, composite: bool, districts: usize, seed: u64) -> Self {
        SearchConfig {
            method,
            composite,
            tabu_factor: 0.08,
            nim_factor: 3.0,
            weight_popdev: R::one(),
            weight_compactness: R::zero(),
            districts,
            seed,
            border: BorderRule::default(),
            size: SizeMeasure::default(),
            switch_window: 3,
            aspiration: false,
            max_iterations: None,
            verify: cfg!(debug_assertions),
        }
    }

    pub fn preset(preset: Preset, districts: usize, seed: u64) -> Self {
        Self::new(preset.method, preset.composite, districts, seed)
    }

    pub fn with_weights(mut self, weight_popdev: R, weight_compactness: R) -> Self {
        self.weight_popdev = weight_popdev;
        self.weight_compactness = weight_compactness;
        self
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SearchConfig { seed, ..self.clone() }
    }

    pub fn pool_options(&self) -> PoolOptions {
        PoolOptions {
            composite: self.composite,
            border: self.border,
            size: self.size,
        }
    }

    /// Tabu tenure `k` and non-improving limit `maxNIM` for `n` units;
    /// `None` stands for unbounded.
    pub fn limits(&self, n: usize) -> (Option<usize>, Option<usize>) {
        match self.method {
            Method::Greedy => (Some(0), Some(0)),
            Method::Kl => (None, None),
            Method::Tabu => (
                Some((self.tabu_factor * n as f64).round() as usize),
                Some((self.nim_factor * n as f64).round() as usize),
            ),
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.districts == 0 || self.districts > n {
            return Err(Error::Parameter(format!(
                "district count {} must be between 1 and {n}",
                self.districts
            )));
        }
        if !(self.tabu_factor >= 0.0 && self.tabu_factor.is_finite()) {
            return Err(Error::Parameter("tabu factor must be a non-negative number".into()));
        }
        if !(self.nim_factor >= 0.0 && self.nim_factor.is_finite()) {
            return Err(Error::Parameter("non-improving factor must be a non-negative number".into()));
        }
        Ok(())
    }
}

/// splitmix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of restart `index` under base seed `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

/// Grows `districts` contiguous districts from distinct random seed units,
/// each district in turn taking one random unassigned neighbour.
pub fn init_plan<R: Real>(instance: &Instance<R>, districts: usize, seed: u64) -> Result<Plan> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_plan_with(instance, districts, &mut rng)
}

pub fn init_plan_with<R: Real>(instance: &Instance<R>, districts: usize, rng: &mut ChaCha8Rng) -> Result<Plan> {
    let n = instance.len();
    if districts == 0 || districts > n {
        return Err(Error::Parameter(format!(
            "district count {districts} must be between 1 and {n}"
        )));
    }
    const FREE: usize = usize::MAX;
    let mut assignment = vec![FREE; n];
    let seeds = rand::seq::index::sample(rng, n, districts);
    let mut frontier: Vec<IndexSet<usize>> = vec![IndexSet::new(); districts];
    let mut assigned = 0;
    let take = |u: usize, d: usize, assignment: &mut Vec<usize>, frontier: &mut Vec<IndexSet<usize>>| {
        assignment[u] = d;
        for nb in instance.neighbors(u) {
            if assignment[nb.unit] == FREE {
                frontier[d].insert(nb.unit);
            }
        }
    };
    for (d, u) in seeds.into_iter().enumerate() {
        take(u, d, &mut assignment, &mut frontier);
        assigned += 1;
    }
    while assigned < n {
        let mut grew = false;
        for d in 0..districts {
            while !frontier[d].is_empty() {
                let i = rng.random_range(0..frontier[d].len());
                let u = frontier[d].swap_remove_index(i).expect("index in range");
                if assignment[u] == FREE {
                    take(u, d, &mut assignment, &mut frontier);
                    assigned += 1;
                    grew = true;
                    break;
                }
            }
        }
        if !grew {
            return Err(Error::Plan("seed growing stalled; instance is not connected".into()));
        }
    }
    Plan::from_assignment(assignment, districts)
}

/// Why a run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    NoCandidate,
    NonImproving,
    IterationLimit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AppliedStep<R = f64> {
    /// One key for a move, two for a switch.
    pub moves: Vec<MoveKey>,
    pub composite: bool,
    pub delta: Delta<R>,
    pub value: ObjectiveValue<R>,
    pub new_best: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome<R = f64> {
    Applied(AppliedStep<R>),
    Stopped(StopReason),
}

/// Recently applied steps. Each record holds the keys of the moved sets in
/// both directions; a record expires after `capacity` further steps.
#[derive(Clone, Debug, Default)]
pub struct TabuList {
    capacity: Option<usize>,
    records: VecDeque<Vec<MoveKey>>,
    counts: HashMap<MoveKey, usize>,
}

impl TabuList {
    /// `None` means entries never expire.
    pub fn new(capacity: Option<usize>) -> Self {
        TabuList {
            capacity,
            records: VecDeque::new(),
            counts: HashMap::new(),
        }
    }

    pub fn push(&mut self, keys: Vec<MoveKey>) {
        if self.capacity == Some(0) {
            return;
        }
        for k in &keys {
            *self.counts.entry(k.clone()).or_insert(0) += 1;
        }
        self.records.push_back(keys);
        if let Some(cap) = self.capacity {
            while self.records.len() > cap {
                let old = self.records.pop_front().expect("non-empty");
                for k in old {
                    if let Some(c) = self.counts.get_mut(&k) {
                        *c -= 1;
                        if *c == 0 {
                            self.counts.remove(&k);
                        }
                    }
                }
            }
        }
    }

    pub fn contains(&self, key: &MoveKey) -> bool {
        self.counts.contains_key(key)
    }

    pub fn contains_move<R>(&self, mv: &Move<R>) -> bool {
        !self.counts.is_empty()
            && self.counts.contains_key(&MoveKey {
                source: mv.source,
                dest: mv.dest,
                members: mv.members.clone(),
            })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Clone, Copy, Debug)]
enum Choice {
    Single { source: usize, dest: usize, index: usize },
    Switch { a: usize, b: usize, first: usize, second: usize },
}

/// One Tabu search trajectory.
pub struct Search<'a, R: Real = f64> {
    instance: &'a Instance<R>,
    config: SearchConfig<R>,
    objective: ObjectiveConfig<R>,
    plan: Plan,
    aggs: Vec<DistrictAggregate<R>>,
    pool: CandidatePool<R>,
    tabu: TabuList,
    max_nim: Option<usize>,
    moved: Vec<bool>,
    rng: ChaCha8Rng,
    current: ObjectiveValue<R>,
    best_plan: Plan,
    best_value: ObjectiveValue<R>,
    initial_value: ObjectiveValue<R>,
    non_improving: usize,
    iterations: u64,
    moves_applied: u64,
    switches_applied: u64,
    stopped: Option<StopReason>,
}

impl<'a, R: Real> Search<'a, R> {
    /// Seeds the run's generator, grows the initial plan from it, and builds
    /// the candidate pool.
    pub fn new(instance: &'a Instance<R>, config: SearchConfig<R>) -> Result<Self> {
        config.check(instance.len())?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let plan = init_plan_with(instance, config.districts, &mut rng)?;
        Self::from_plan_with(instance, config, plan, rng)
    }

    /// Starts from a given plan instead of a seed-grown one.
    pub fn from_plan(instance: &'a Instance<R>, config: SearchConfig<R>, plan: Plan) -> Result<Self> {
        config.check(instance.len())?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::from_plan_with(instance, config, plan, rng)
    }

    fn from_plan_with(
        instance: &'a Instance<R>,
        config: SearchConfig<R>,
        plan: Plan,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        if plan.len() != instance.len() || plan.districts() != config.districts {
            return Err(Error::Plan("plan does not match instance and district count".into()));
        }
        if !is_plan_contiguous(instance, &plan) {
            return Err(Error::Plan("initial plan is not contiguous".into()));
        }
        let objective = ObjectiveConfig::new(
            config.weight_popdev,
            config.weight_compactness,
            config.districts,
            instance.total_population(),
        )?;
        let aggs = build_aggregates(instance, &plan);
        let pool = CandidatePool::enumerate(instance, &plan, config.pool_options())?;
        let current = evaluate(&aggs, &objective)?;
        let (tenure, max_nim) = config.limits(instance.len());
        Ok(Search {
            instance,
            objective,
            best_plan: plan.clone(),
            plan,
            aggs,
            pool,
            tabu: TabuList::new(tenure),
            max_nim,
            moved: vec![false; instance.len()],
            rng,
            current,
            best_value: current,
            initial_value: current,
            non_improving: 0,
            iterations: 0,
            moves_applied: 0,
            switches_applied: 0,
            stopped: None,
            config,
        })
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    pub fn aggregates(&self) -> &[DistrictAggregate<R>] {
        &self.aggs
    }

    pub fn pool(&self) -> &CandidatePool<R> {
        &self.pool
    }

    pub fn current(&self) -> ObjectiveValue<R> {
        self.current
    }

    pub fn best(&self) -> (&Plan, ObjectiveValue<R>) {
        (&self.best_plan, self.best_value)
    }

    pub fn tabu(&self) -> &TabuList {
        &self.tabu
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    fn blocked(&self, mv: &Move<R>) -> bool {
        (self.config.method == Method::Kl && mv.members.iter().any(|&u| self.moved[u]))
            || self.tabu.contains_move(mv)
    }

    fn improves_best(&self, delta: R) -> bool {
        self.current.combined - delta < self.best_value.combined
    }

    /// Picks the best admissible candidate; ties are broken uniformly at
    /// random by reservoir sampling in pool order.
    fn select(&mut self) -> Result<Option<(Choice, Delta<R>)>> {
        let mut best: Option<(Choice, Delta<R>)> = None;
        let mut ties = 0u64;
        let mut offer = |choice: Choice, delta: Delta<R>, rng: &mut ChaCha8Rng, best: &mut Option<(Choice, Delta<R>)>| {
            match best {
                Some((_, b)) if delta.combined < b.combined => {}
                Some((_, b)) if delta.combined == b.combined => {
                    ties += 1;
                    if rng.random_range(0..ties) == 0 {
                        *best = Some((choice, delta));
                    }
                }
                _ => {
                    ties = 1;
                    *best = Some((choice, delta));
                }
            }
        };

        let r = self.config.districts;
        for source in 0..r {
            for dest in 0..r {
                for (index, mv) in self.pool.moves(source, dest).iter().enumerate() {
                    let kl_blocked =
                        self.config.method == Method::Kl && mv.members.iter().any(|&u| self.moved[u]);
                    if kl_blocked {
                        continue;
                    }
                    let tabu = self.tabu.contains_move(mv);
                    if tabu && !self.config.aspiration {
                        continue;
                    }
                    let delta = score_move(mv, &self.aggs[source], &self.aggs[dest], &self.objective)?;
                    if tabu && !self.improves_best(delta.combined) {
                        continue;
                    }
                    offer(Choice::Single { source, dest, index }, delta, &mut self.rng, &mut best);
                }
            }
        }

        let pairs: Vec<(usize, usize)> = self.pool.switch_pairs().collect();
        for (a, b) in pairs {
            let admissible = |mv: &Move<R>| !self.blocked(mv);
            let found = best_switch(
                self.instance,
                &self.pool,
                a,
                b,
                &self.aggs,
                &self.objective,
                self.config.switch_window,
                &admissible,
            )?;
            let mut found = found;
            if self.config.aspiration {
                let kl_only = |mv: &Move<R>| {
                    !(self.config.method == Method::Kl && mv.members.iter().any(|&u| self.moved[u]))
                };
                if let Some(s) = best_switch(
                    self.instance,
                    &self.pool,
                    a,
                    b,
                    &self.aggs,
                    &self.objective,
                    self.config.switch_window,
                    &kl_only,
                )? {
                    let better = found.is_none_or(|f| s.delta.combined > f.delta.combined);
                    if better && self.improves_best(s.delta.combined) {
                        found = Some(s);
                    }
                }
            }
            if let Some(s) = found {
                offer(
                    Choice::Switch { a, b, first: s.first, second: s.second },
                    s.delta,
                    &mut self.rng,
                    &mut best,
                );
            }
        }
        Ok(best)
    }

    /// Selects and applies one step, or reports why the run is over.
    pub fn step(&mut self) -> Result<StepOutcome<R>> {
        if let Some(reason) = self.stopped {
            return Ok(StepOutcome::Stopped(reason));
        }
        if self.config.max_iterations.is_some_and(|m| self.iterations >= m) {
            return Ok(self.stop(StopReason::IterationLimit));
        }
        let Some((choice, delta)) = self.select()? else {
            return Ok(self.stop(StopReason::NoCandidate));
        };
        if !self.improves_best(delta.combined)
            && self.max_nim.is_some_and(|m| self.non_improving + 1 > m)
        {
            return Ok(self.stop(StopReason::NonImproving));
        }

        let (applied, composite, touched): (Vec<Move<R>>, bool, [usize; 2]) = match choice {
            Choice::Single { source, dest, index } => {
                let mv = self.pool.moves(source, dest)[index].clone();
                apply_move(self.instance, &mut self.plan, &mut self.aggs, &mv)?;
                self.moves_applied += 1;
                let c = mv.is_composite();
                (vec![mv], c, [source, dest])
            }
            Choice::Switch { a, b, first, second } => {
                let m1 = self.pool.moves(a, b)[first].clone();
                let m2 = self.pool.moves(b, a)[second].clone();
                apply_switch(self.instance, &mut self.plan, &mut self.aggs, &m1, &m2)?;
                self.switches_applied += 1;
                let c = m1.is_composite() || m2.is_composite();
                (vec![m1, m2], c, [a, b])
            }
        };
        self.iterations += 1;
        if self.config.verify {
            self.verify(&touched)?;
        }
        self.pool.update(self.instance, &self.plan, &touched)?;

        let mut keys = Vec::with_capacity(2 * applied.len());
        for mv in &applied {
            keys.push(mv.key());
            keys.push(mv.reverse_key());
            if self.config.method == Method::Kl {
                for &u in &mv.members {
                    self.moved[u] = true;
                }
            }
        }
        self.tabu.push(keys);

        self.current = evaluate(&self.aggs, &self.objective)?;
        let new_best = self.current.combined < self.best_value.combined;
        if new_best {
            self.best_value = self.current;
            self.best_plan = self.plan.clone();
            self.non_improving = 0;
        } else {
            self.non_improving += 1;
        }
        Ok(StepOutcome::Applied(AppliedStep {
            moves: applied.iter().map(Move::key).collect(),
            composite,
            delta,
            value: self.current,
            new_best,
        }))
    }

    fn stop(&mut self, reason: StopReason) -> StepOutcome<R> {
        self.stopped = Some(reason);
        StepOutcome::Stopped(reason)
    }

    fn verify(&self, touched: &[usize]) -> Result<()> {
        for &d in touched {
            if self.plan.members(d).is_empty() {
                return Err(Error::Plan(format!("district {d} became empty")));
            }
            if !is_contiguous(self.instance, &self.plan, d) {
                return Err(Error::Plan(format!("district {d} became discontiguous")));
            }
        }
        Ok(())
    }

    /// Steps until the method stops.
    pub fn run_to_end(&mut self) -> Result<StopReason> {
        loop {
            if let StepOutcome::Stopped(reason) = self.step()? {
                return Ok(reason);
            }
        }
    }

    pub fn into_result(self, elapsed: Duration) -> RunResult<R> {
        RunResult {
            seed: self.config.seed,
            plan: self.best_plan,
            value: self.best_value,
            initial_value: self.initial_value,
            iterations: self.iterations,
            moves: self.moves_applied,
            switches: self.switches_applied,
            stop: self.stopped.unwrap_or(StopReason::IterationLimit),
            elapsed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult<R = f64> {
    pub seed: u64,
    /// Best plan seen during the run.
    pub plan: Plan,
    pub value: ObjectiveValue<R>,
    pub initial_value: ObjectiveValue<R>,
    pub iterations: u64,
    pub moves: u64,
    pub switches: u64,
    pub stop: StopReason,
    /// Wall-clock time from initialization to stop.
    pub elapsed: Duration,
}

pub fn run<R: Real>(instance: &Instance<R>, config: &SearchConfig<R>) -> Result<RunResult<R>> {
    let start = Instant::now();
    let mut search = Search::new(instance, config.clone())?;
    search.run_to_end()?;
    Ok(search.into_result(start.elapsed()))
}

/// Runs `restarts` independent searches, restart `i` seeded with
/// [`derive_seed`]`(config.seed, i)`, on `parallelism` threads. Results are
/// in restart order regardless of scheduling.
pub fn multi_restart<R: Real>(
    instance: &Instance<R>,
    config: &SearchConfig<R>,
    restarts: usize,
    parallelism: usize,
) -> Result<Vec<RunResult<R>>> {
    if restarts == 0 {
        return Err(Error::Parameter("at least one restart is required".into()));
    }
    let job = |i: usize| run(instance, &config.with_seed(derive_seed(config.seed, i as u64)));
    if parallelism <= 1 {
        return (0..restarts).map(job).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::Parameter(format!("cannot start worker threads: {e}")))?;
    pool.install(|| (0..restarts).into_par_iter().map(job).collect())
}
