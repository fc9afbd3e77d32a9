//! Multi-preset experiments, raw score export, and plan validation reports.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::instance::{load_instance_path, Instance, UnitId};
use crate::moves::BorderRule;
use crate::objective::{compactness, pop_dev, ppi, ObjectiveConfig};
use crate::plan::{build_aggregates, is_contiguous, read_plan_csv, Plan};
use crate::search::{multi_restart, Preset, RunResult, SearchConfig};
use crate::stats::{rank_sum_test, summarize, RankSumResult, RunStats};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub instance: PathBuf,
    pub presets: Vec<Preset>,
    pub restarts: usize,
    pub seed: u64,
    pub districts: usize,
    pub weight_popdev: f64,
    pub weight_compactness: f64,
    pub tabu_factor: f64,
    pub nim_factor: f64,
    pub border: BorderRule,
    pub parallelism: usize,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(instance: impl Into<PathBuf>, districts: usize) -> Self {
        ExperimentConfig {
            instance: instance.into(),
            presets: Preset::ALL.to_vec(),
            restarts: 1000,
            seed: 0,
            districts,
            weight_popdev: 1.0,
            weight_compactness: 0.0,
            tabu_factor: 0.08,
            nim_factor: 3.0,
            border: BorderRule::default(),
            parallelism: 1,
            out_dir: None,
        }
    }

    pub fn search_config(&self, preset: Preset) -> SearchConfig<f64> {
        let mut c = SearchConfig::preset(preset, self.districts, self.seed)
            .with_weights(self.weight_popdev, self.weight_compactness);
        c.tabu_factor = self.tabu_factor;
        c.nim_factor = self.nim_factor;
        c.border = self.border;
        c.verify = false;
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PresetSummary {
    pub preset: String,
    pub stats: RunStats,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairwiseTest {
    pub a: String,
    pub b: String,
    #[serde(flatten)]
    pub test: RankSumResult,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentSummary {
    pub instance: String,
    pub units: usize,
    pub districts: usize,
    pub restarts: usize,
    pub seed: u64,
    pub weight_popdev: f64,
    pub weight_compactness: f64,
    pub presets: Vec<PresetSummary>,
}

/// Per-preset run results in restart order.
#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub summary: ExperimentSummary,
    pub pairwise: Vec<PairwiseTest>,
    pub runs: Vec<(Preset, Vec<RunResult<f64>>)>,
}

impl ExperimentReport {
    pub fn scores(&self, preset: Preset) -> Option<Vec<f64>> {
        self.runs
            .iter()
            .find(|(p, _)| *p == preset)
            .map(|(_, runs)| runs.iter().map(|r| r.value.combined).collect())
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let instance: Instance = load_instance_path(&config.instance)?;
    run_experiment_on(&instance, config)
}

/// Runs every preset with the same base seed, so restart `i` of each preset
/// starts from the same initial plan, then writes the output files when
/// `out_dir` is set.
pub fn run_experiment_on(instance: &Instance, config: &ExperimentConfig) -> Result<ExperimentReport> {
    if config.presets.is_empty() {
        return Err(Error::Parameter("an experiment needs at least one preset".into()));
    }
    if config.restarts == 0 {
        return Err(Error::Parameter("an experiment needs at least one restart".into()));
    }
    let mut runs = Vec::with_capacity(config.presets.len());
    let mut presets = Vec::with_capacity(config.presets.len());
    for &preset in &config.presets {
        let results = multi_restart(
            instance,
            &config.search_config(preset),
            config.restarts,
            config.parallelism,
        )?;
        let scores: Vec<f64> = results.iter().map(|r| r.value.combined).collect();
        let times: Vec<f64> = results.iter().map(|r| r.elapsed.as_secs_f64()).collect();
        presets.push(PresetSummary {
            preset: preset.name(),
            stats: summarize(&scores, &times)?,
        });
        runs.push((preset, results));
    }
    let mut pairwise = Vec::new();
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            let a: Vec<f64> = runs[i].1.iter().map(|r| r.value.combined).collect();
            let b: Vec<f64> = runs[j].1.iter().map(|r| r.value.combined).collect();
            pairwise.push(PairwiseTest {
                a: runs[i].0.name(),
                b: runs[j].0.name(),
                test: rank_sum_test(&a, &b)?,
            });
        }
    }
    let report = ExperimentReport {
        summary: ExperimentSummary {
            instance: config.instance.display().to_string(),
            units: instance.len(),
            districts: config.districts,
            restarts: config.restarts,
            seed: config.seed,
            weight_popdev: config.weight_popdev,
            weight_compactness: config.weight_compactness,
            presets,
        },
        pairwise,
        runs,
    };
    if let Some(dir) = &config.out_dir {
        write_report(&report, dir)?;
    }
    Ok(report)
}

/// Writes `scores_<preset>.csv`, `times_<preset>.csv`, `summary.json` and
/// `pairwise_tests.json` into `dir`.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (preset, results) in &report.runs {
        let name = preset.name();
        let mut scores = csv::Writer::from_writer(BufWriter::new(File::create(
            dir.join(format!("scores_{name}.csv")),
        )?));
        scores.write_record(["restart", "seed", "score", "popdev", "compactness"])?;
        let mut times = csv::Writer::from_writer(BufWriter::new(File::create(
            dir.join(format!("times_{name}.csv")),
        )?));
        times.write_record(["restart", "seconds"])?;
        for (i, r) in results.iter().enumerate() {
            scores.write_record([
                i.to_string(),
                r.seed.to_string(),
                r.value.combined.to_string(),
                r.value.popdev.to_string(),
                r.value.compactness.to_string(),
            ])?;
            times.write_record([i.to_string(), r.elapsed.as_secs_f64().to_string()])?;
        }
        scores.flush()?;
        times.flush()?;
    }
    let mut f = BufWriter::new(File::create(dir.join("summary.json"))?);
    serde_json::to_writer_pretty(&mut f, &report.summary)?;
    f.write_all(b"\n")?;
    f.flush()?;
    let mut f = BufWriter::new(File::create(dir.join("pairwise_tests.json"))?);
    serde_json::to_writer_pretty(&mut f, &report.pairwise)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistrictReport {
    pub district: usize,
    pub units: usize,
    pub population: i64,
    pub area: f64,
    pub perimeter: f64,
    pub ppi: Option<f64>,
    pub contiguous: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlanReport {
    pub districts: Vec<DistrictReport>,
    pub popdev: i64,
    /// `None` when some district has degenerate geometry.
    pub compactness: Option<f64>,
    pub all_contiguous: bool,
    pub discontiguous: Vec<usize>,
    pub ideal_population: f64,
}

pub fn validate_plan(instance: &Instance, plan: &Plan) -> Result<PlanReport> {
    if plan.len() != instance.len() {
        return Err(Error::Plan(format!(
            "plan assigns {} units but the instance has {}",
            plan.len(),
            instance.len()
        )));
    }
    let aggs = build_aggregates(instance, plan);
    let districts: Vec<DistrictReport> = aggs
        .iter()
        .enumerate()
        .map(|(d, a)| DistrictReport {
            district: d,
            units: a.unit_count,
            population: a.population,
            area: a.area,
            perimeter: a.perimeter,
            ppi: ppi(a.area, a.perimeter).ok(),
            contiguous: is_contiguous(instance, plan, d),
        })
        .collect();
    let pops: Vec<i64> = aggs.iter().map(|a| a.population).collect();
    let discontiguous: Vec<usize> = districts.iter().filter(|d| !d.contiguous).map(|d| d.district).collect();
    Ok(PlanReport {
        popdev: pop_dev(&pops, instance.total_population())?,
        compactness: compactness(&aggs, instance.total_population()).ok(),
        all_contiguous: discontiguous.is_empty(),
        discontiguous,
        ideal_population: instance.total_population() as f64 / plan.districts() as f64,
        districts,
    })
}

pub fn validate_plan_file(instance: &Instance, path: &Path) -> Result<PlanReport> {
    let plan = read_plan_csv(instance, File::open(path)?)?;
    validate_plan(instance, &plan)
}

/// Objective of a plan under `config`, for reporting.
pub fn plan_objective(instance: &Instance, plan: &Plan, weights: (f64, f64)) -> Result<crate::objective::ObjectiveValue> {
    let cfg = ObjectiveConfig::new(weights.0, weights.1, plan.districts(), instance.total_population())?;
    crate::objective::evaluate(&build_aggregates(instance, plan), &cfg)
}

/// Unit id to district map for JSON output.
pub fn assignment_by_id(instance: &Instance, plan: &Plan) -> BTreeMap<UnitId, usize> {
    (0..plan.len()).map(|i| (instance.id(i), plan.district_of(i))).collect()
}
