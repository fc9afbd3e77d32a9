use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use districting::experiment::{assignment_by_id, run_experiment, validate_plan, ExperimentConfig};
use districting::instance::{load_instance_path, write_csv_pair, write_json};
use districting::moves::{BorderRule, CandidatePool, PoolOptions};
use districting::plan::{plan_summary, read_plan_csv, write_plan_csv, build_aggregates};
use districting::search::{derive_seed, multi_restart, Method, Preset, SearchConfig};
use districting::{generate_grid, Instance, PopulationModel};

#[derive(Parser)]
#[command(name = "districting", version, about = "Composite-move Tabu search for districting")]
struct Cli {
    /// Base random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Border {
    Any,
    Anchor,
}

impl From<Border> for BorderRule {
    fn from(b: Border) -> Self {
        match b {
            Border::Any => BorderRule::AnyMember,
            Border::Anchor => BorderRule::AnchorOnly,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a random rook-adjacency grid instance.
    Generate {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        /// Same population for every unit.
        #[arg(long, conflicts_with_all = ["mu", "sigma"])]
        uniform: Option<i64>,
        /// Log-normal location parameter.
        #[arg(long, default_value_t = 8.0)]
        mu: f64,
        /// Log-normal scale parameter.
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
    },
    /// Optimize a plan.
    Solve {
        #[command(flatten)]
        search: SearchArgs,
        /// Independent restarts; the best plan is reported.
        #[arg(long, default_value_t = 1)]
        restarts: usize,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Compare presets over many restarts.
    Experiment {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        districts: usize,
        #[arg(long, default_value_t = 1000)]
        restarts: usize,
        /// Comma-separated presets such as `tabu,tabu*`; all six by default.
        #[arg(long, value_delimiter = ',')]
        presets: Vec<String>,
        #[arg(long, default_value_t = 1.0)]
        w_pop: f64,
        #[arg(long, default_value_t = 0.0)]
        w_comp: f64,
        #[arg(long, default_value_t = 0.08)]
        tabu_factor: f64,
        #[arg(long, default_value_t = 3.0)]
        nim_factor: f64,
        #[arg(long, value_enum, default_value_t = Border::Any)]
        border: Border,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Report contiguity, population deviation and compactness of a plan.
    Validate {
        #[arg(long)]
        instance: PathBuf,
        /// CSV with `unit_id,district` rows.
        #[arg(long)]
        plan: PathBuf,
    },
    /// List candidate moves of a plan.
    Moves {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        /// Moves out of this district.
        #[arg(long, conflicts_with = "pair")]
        district: Option<usize>,
        /// Moves from the first district to the second.
        #[arg(long, num_args = 2, value_names = ["A", "B"])]
        pair: Option<Vec<usize>>,
        #[arg(long, value_enum, default_value_t = Switch::On)]
        composite: Switch,
        #[arg(long, value_enum, default_value_t = Border::Any)]
        border: Border,
    },
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    districts: usize,
    #[arg(long, default_value = "tabu")]
    method: String,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    composite: Switch,
    #[arg(long, default_value_t = 1.0)]
    w_pop: f64,
    #[arg(long, default_value_t = 0.0)]
    w_comp: f64,
    #[arg(long, default_value_t = 0.08)]
    tabu_factor: f64,
    #[arg(long, default_value_t = 3.0)]
    nim_factor: f64,
    #[arg(long, value_enum, default_value_t = Border::Any)]
    border: Border,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Generate { rows, cols, uniform, mu, sigma } => {
            let model = match uniform {
                Some(p) => PopulationModel::Uniform(*p),
                None => PopulationModel::LogNormal { mu: *mu, sigma: *sigma },
            };
            let g: Instance = generate_grid(*rows, *cols, model, cli.seed)?;
            match (cli.format, &cli.out) {
                (Format::Json, None) => write_json(&g, io::stdout().lock())?,
                (Format::Json, Some(path)) => write_json(&g, BufWriter::new(File::create(path)?))?,
                (Format::Csv, Some(dir)) => {
                    fs::create_dir_all(dir)?;
                    write_csv_pair(
                        &g,
                        BufWriter::new(File::create(dir.join("units.csv"))?),
                        BufWriter::new(File::create(dir.join("edges.csv"))?),
                    )?;
                }
                (Format::Csv, None) => bail!("--format csv needs --out DIR for units.csv and edges.csv"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Solve { search, restarts, threads } => solve(cli, search, *restarts, *threads),
        Command::Experiment {
            instance,
            districts,
            restarts,
            presets,
            w_pop,
            w_comp,
            tabu_factor,
            nim_factor,
            border,
            threads,
        } => {
            let mut cfg = ExperimentConfig::new(instance, *districts);
            if !presets.is_empty() {
                cfg.presets = presets.iter().map(|p| p.parse()).collect::<Result<_, _>>()?;
            }
            cfg.restarts = *restarts;
            cfg.seed = cli.seed;
            cfg.weight_popdev = *w_pop;
            cfg.weight_compactness = *w_comp;
            cfg.tabu_factor = *tabu_factor;
            cfg.nim_factor = *nim_factor;
            cfg.border = (*border).into();
            cfg.parallelism = *threads;
            cfg.out_dir = Some(cli.out.clone().unwrap_or_else(|| PathBuf::from("results")));
            let report = run_experiment(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report.summary)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { instance, plan } => {
            let g: Instance = load_instance_path(instance)?;
            let plan = read_plan_csv(&g, File::open(plan).with_context(|| plan.display().to_string())?)?;
            let report = validate_plan(&g, &plan)?;
            emit(cli, &serde_json::to_value(&report)?)?;
            Ok(if report.all_contiguous { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Moves { instance, plan, district, pair, composite, border } => {
            let g: Instance = load_instance_path(instance)?;
            let plan = read_plan_csv(&g, File::open(plan).with_context(|| plan.display().to_string())?)?;
            let options = PoolOptions {
                composite: *composite == Switch::On,
                border: (*border).into(),
                ..PoolOptions::default()
            };
            let pool = CandidatePool::enumerate(&g, &plan, options)?;
            let r = plan.districts();
            let selected: Vec<(usize, usize)> = match (district, pair) {
                (Some(d), _) => (0..r).filter(|&b| b != *d).map(|b| (*d, b)).collect(),
                (None, Some(p)) => vec![(p[0], p[1])],
                (None, None) => (0..r).flat_map(|a| (0..r).map(move |b| (a, b))).filter(|(a, b)| a != b).collect(),
            };
            for &(a, b) in &selected {
                if a >= r || b >= r {
                    bail!("district out of range 0..{r}");
                }
            }
            let ids = |units: &[usize]| units.iter().map(|&u| g.id(u)).collect::<Vec<_>>();
            let moves: Vec<_> = selected
                .iter()
                .flat_map(|&(a, b)| pool.moves(a, b))
                .map(|m| {
                    json!({
                        "source": m.source,
                        "dest": m.dest,
                        "anchor": m.anchor.map(|a| g.id(a)),
                        "members": ids(&m.members),
                        "population": m.aggregate.population,
                    })
                })
                .collect();
            if cli.format == Format::Csv {
                let mut w = output(cli)?;
                writeln!(w, "source,dest,anchor,population,members")?;
                for m in &moves {
                    let members: Vec<String> = m["members"].as_array().unwrap().iter().map(|v| v.to_string()).collect();
                    writeln!(
                        w,
                        "{},{},{},{},{}",
                        m["source"],
                        m["dest"],
                        if m["anchor"].is_null() { String::new() } else { m["anchor"].to_string() },
                        m["population"],
                        members.join(" ")
                    )?;
                }
                w.flush()?;
            } else {
                emit(cli, &json!({ "count": moves.len(), "moves": moves }))?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn solve(cli: &Cli, args: &SearchArgs, restarts: usize, threads: usize) -> Result<ExitCode> {
    let g: Instance = load_instance_path(&args.instance)?;
    let method: Method = args.method.parse()?;
    let preset = Preset { method, composite: args.composite == Switch::On };
    let mut cfg = SearchConfig::preset(preset, args.districts, cli.seed).with_weights(args.w_pop, args.w_comp);
    cfg.tabu_factor = args.tabu_factor;
    cfg.nim_factor = args.nim_factor;
    cfg.border = args.border.into();
    cfg.verify = false;
    let start = Instant::now();
    let results = multi_restart(&g, &cfg, restarts, threads)?;
    let elapsed = start.elapsed().as_secs_f64();
    let (index, best) = results
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.value.combined.total_cmp(&b.1.value.combined))
        .expect("at least one restart");
    let aggs = build_aggregates(&g, &best.plan);
    let summary = json!({
        "preset": preset.name(),
        "districts": args.districts,
        "restarts": restarts,
        "best_restart": index,
        "seed": derive_seed(cli.seed, index as u64),
        "objective": best.value,
        "initial_objective": best.initial_value,
        "iterations": best.iterations,
        "moves": best.moves,
        "switches": best.switches,
        "stop": best.stop,
        "seconds": elapsed,
        "district_summary": plan_summary(&aggs),
    });
    match &cli.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_plan_csv(&g, &best.plan, BufWriter::new(File::create(dir.join("plan.csv"))?))?;
            write_json_file(&dir.join("summary.json"), &summary)?;
        }
        None if cli.format == Format::Csv => write_plan_csv(&g, &best.plan, io::stdout().lock())?,
        None => {
            let mut full = summary;
            full["assignment"] = serde_json::to_value(assignment_by_id(&g, &best.plan))?;
            println!("{}", serde_json::to_string_pretty(&full)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn output(cli: &Cli) -> Result<Box<dyn Write>> {
    Ok(match &cli.out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit(cli: &Cli, value: &serde_json::Value) -> Result<()> {
    let mut w = output(cli)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_json_file(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
