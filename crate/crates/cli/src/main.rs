//! `relprune`: train toy CNNs, prune them with PX, DPX, or SD-DPX, sweep
//! reference-set size and class count, and summarize the resulting CSVs.
//!
//! Exit codes: 0 success, 1 usage error, 2 I/O or file-format error,
//! 3 numeric failure (divergence, non-finite values, layer starvation).

use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use relprune::experiment::{prepare, run_strategy, ExperimentConfig};
use relprune::io::{load_dataset, load_model, save_dataset, save_model};
use relprune::lrp::{FilterAggregation, SeedMode};
use relprune::metrics::{auc_lowest_class, rate_grid, CurveRecord};
use relprune::pruning::compact;
use relprune::report::{
    auc_by_strategy, read_curves, seed_average, write_auc_summary, write_curve_points, write_curves,
};
use relprune::strategy::{StrategyConfig, StrategyKind};
use relprune::toylab::{Architecture, Head, SyntheticSpec, TrainConfig};
use relprune::{LabeledSet, LrpConfig, ModelGraph, Rate};

#[derive(Parser)]
#[command(name = "relprune", version, about = "Relevance-guided structured filter pruning on toy CNNs")]
struct Cli {
    /// Log rejected candidates and other progress to stderr
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic task, train a model, and save model plus splits
    Train(TrainArgs),
    /// Run one pruning strategy and write its trajectory and final model
    Prune(PruneArgs),
    /// Rerun strategies over several reference counts or class counts
    Sweep(SweepArgs),
    /// Lowest-class AUC and seed-averaged curves from trajectory CSVs
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct TaskArgs {
    #[arg(long, default_value_t = 2)]
    classes: usize,
    /// Image height and width
    #[arg(long, default_value_t = 12)]
    size: usize,
    #[arg(long, default_value_t = 200)]
    samples_per_class: usize,
    #[arg(long, default_value_t = 30)]
    ref_per_class: usize,
    #[arg(long, default_value_t = 70)]
    eval_per_class: usize,
    #[arg(long, default_value_t = 0.8)]
    noise: f64,
    #[arg(long, default_value_t = 0.8)]
    bar_width: f64,
    /// Conv output channels, comma separated
    #[arg(long, value_delimiter = ',', default_value = "8,16")]
    conv_channels: Vec<usize>,
    #[arg(long)]
    batch_norm: bool,
    /// Flatten instead of global average pooling before the dense head
    #[arg(long)]
    flatten_head: bool,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
}

impl TaskArgs {
    fn config(&self, prune: &PruneFlags) -> Result<ExperimentConfig, Failure> {
        Ok(ExperimentConfig {
            data: SyntheticSpec {
                height: self.size,
                width: self.size,
                num_classes: self.classes,
                samples_per_class: self.samples_per_class,
                ref_per_class: self.ref_per_class,
                eval_per_class: self.eval_per_class,
                noise_std: self.noise,
                bar_width: self.bar_width,
                ..Default::default()
            },
            arch: Architecture {
                conv_channels: self.conv_channels.clone(),
                batch_norm: self.batch_norm,
                head: if self.flatten_head { Head::Flatten } else { Head::GlobalAvgPool },
                ..Default::default()
            },
            train: TrainConfig { epochs: self.epochs, lr: self.lr, batch_size: self.batch_size, seed: 0 },
            strategy: prune.strategy()?,
            lrp: prune.lrp()?,
        })
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    task: TaskArgs,
    /// Output directory for model.*, train.*, ref.*, and eval.*
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SeedArg {
    True,
    Predicted,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationArg {
    Signed,
    Absolute,
}

/// Strategy and relevance parameters shared by `prune` and `sweep`.
#[derive(Args, Clone)]
struct PruneFlags {
    /// Initial pruning step (decimal, percentage, or fraction such as 1/20)
    #[arg(long, default_value = "0.05")]
    n: Rate,
    /// Maximum pruning rate
    #[arg(long, default_value = "0.95")]
    pmax: Rate,
    /// Maximum number of skipped filters per order-change phase
    #[arg(long, default_value_t = 10)]
    tmax: usize,
    #[arg(long)]
    no_rate_change: bool,
    #[arg(long)]
    no_order_change: bool,
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    /// Which logit seeds relevance
    #[arg(long, value_enum, default_value_t = SeedArg::True)]
    seed_mode: SeedArg,
    /// How a filter's spatial relevance is reduced to one score
    #[arg(long, value_enum, default_value_t = AggregationArg::Signed)]
    aggregation: AggregationArg,
}

impl PruneFlags {
    fn strategy(&self) -> Result<StrategyConfig, Failure> {
        if self.pmax > Rate::ONE {
            return Err(Failure::usage("--pmax must be at most 1"));
        }
        Ok(StrategyConfig {
            step: self.n,
            max_rate: self.pmax,
            max_skips: self.tmax,
            rate_change: !self.no_rate_change,
            order_change: !self.no_order_change,
        })
    }

    fn lrp(&self) -> Result<LrpConfig, Failure> {
        let mut cfg = LrpConfig::new(self.epsilon).map_err(|e| Failure::usage(e.to_string()))?;
        cfg.seed_mode = match self.seed_mode {
            SeedArg::True => SeedMode::TrueClass,
            SeedArg::Predicted => SeedMode::PredictedClass,
        };
        cfg.aggregation = match self.aggregation {
            AggregationArg::Signed => FilterAggregation::Signed,
            AggregationArg::Absolute => FilterAggregation::Absolute,
        };
        Ok(cfg)
    }

    fn grid(&self) -> Vec<f64> {
        rate_grid(self.n.to_f64(), self.pmax.to_f64())
    }
}

#[derive(Args)]
struct PruneArgs {
    /// Model base path (without .manifest)
    #[arg(long)]
    model: PathBuf,
    /// Reference set: relevance source and accuracy gate
    #[arg(long)]
    refs: PathBuf,
    /// Evaluation set for the reported curves
    #[arg(long)]
    eval: PathBuf,
    #[arg(long, default_value = "sd-dpx")]
    strategy: StrategyKind,
    /// Recorded in the CSV
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use only the first K reference images of each class
    #[arg(long)]
    refs_per_class: Option<usize>,
    #[command(flatten)]
    flags: PruneFlags,
    /// Output directory for trajectory.csv and pruned.*
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Vary {
    Refs,
    Classes,
}

impl fmt::Display for Vary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Vary::Refs => "refs",
            Vary::Classes => "classes",
        })
    }
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    vary: Vary,
    /// Comma separated values of the varied quantity
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<usize>,
    /// Seed list: `0..4` (inclusive), `0..=4`, or `0,2,5`
    #[arg(long, default_value = "0..4")]
    seeds: SeedList,
    #[arg(long, value_delimiter = ',', default_value = "px,dpx,sd-dpx")]
    strategies: Vec<StrategyKind>,
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    flags: PruneFlags,
    #[arg(long, default_value = "sweep")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Trajectory CSV files
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    /// Resample every trajectory onto this rate step before computing AUC
    #[arg(long)]
    grid_step: Option<f64>,
    /// Output directory for comparison.csv and curves.csv
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Clone, Debug)]
struct SeedList(Vec<u64>);

impl FromStr for SeedList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("bad seed list {s:?}");
        let range = s.split_once("..=").or_else(|| s.split_once(".."));
        let seeds: Vec<u64> = match range {
            Some((a, b)) => {
                let a: u64 = a.trim().parse().map_err(|_| bad())?;
                let b: u64 = b.trim().parse().map_err(|_| bad())?;
                if b < a {
                    return Err(bad());
                }
                (a..=b).collect()
            }
            None => s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?,
        };
        if seeds.is_empty() {
            return Err(bad());
        }
        Ok(SeedList(seeds))
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Io(String),
    Numeric(String),
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Failure::Usage(msg.into())
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Io(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Io(m) | Failure::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<relprune::Error> for Failure {
    fn from(e: relprune::Error) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else if e.is_numeric() {
            Failure::Numeric(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

fn io_fail(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(io_fail(dir))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(io_fail(path))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Debug } else { log::LevelFilter::Warn })
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Prune(a) => cmd_prune(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let cfg = args.task.config(&default_flags())?;
    let p = prepare(&cfg, args.seed)?;
    create_dir(&args.out)?;
    save_model(&p.model, &args.out.join("model"))?;
    save_dataset(&p.splits.train, &args.out.join("train"))?;
    save_dataset(&p.splits.refs, &args.out.join("ref"))?;
    save_dataset(&p.splits.eval, &args.out.join("eval"))?;
    let eval = relprune::metrics::per_class_accuracy(&p.model, &p.splits.eval)?;
    println!(
        "seed {}: {} filters, train accuracy {:.4}, eval accuracy {:.4} (lowest class {:.4}) -> {}",
        args.seed,
        p.model.filter_count(),
        p.train_accuracy,
        eval.overall(),
        eval.lowest().unwrap_or(0.0),
        args.out.display()
    );
    Ok(())
}

fn default_flags() -> PruneFlags {
    PruneFlags {
        n: Rate::new(1, 20).expect("valid"),
        pmax: Rate::new(19, 20).expect("valid"),
        tmax: 10,
        no_rate_change: false,
        no_order_change: false,
        epsilon: 1e-6,
        seed_mode: SeedArg::True,
        aggregation: AggregationArg::Signed,
    }
}

fn subset(refs: LabeledSet, per_class: Option<usize>) -> Result<LabeledSet, Failure> {
    match per_class {
        None => Ok(refs),
        Some(0) => Err(Failure::usage("--refs-per-class must be positive")),
        Some(k) => Ok(refs.take_per_class(k)?),
    }
}

fn cmd_prune(args: PruneArgs) -> Result<(), Failure> {
    let strategy = args.flags.strategy()?;
    let lrp = args.flags.lrp()?;
    let model: ModelGraph = load_model(&args.model)?;
    let refs = subset(load_dataset(&args.refs)?, args.refs_per_class)?;
    let eval: LabeledSet = load_dataset(&args.eval)?;
    for (name, set) in [("reference", &refs), ("evaluation", &eval)] {
        if set.image_shape() != model.input_shape() || set.num_classes() != model.num_classes() {
            return Err(Failure::usage(format!(
                "{name} set ({:?}, {} classes) does not match the model ({:?}, {} classes)",
                set.image_shape(),
                set.num_classes(),
                model.input_shape(),
                model.num_classes()
            )));
        }
    }
    strategy.validate(model.filter_count())?;
    let (traj, records) = run_strategy(args.strategy, &model, &refs, &eval, &strategy, &lrp, args.seed)?;
    create_dir(&args.out)?;
    let csv = args.out.join("trajectory.csv");
    write_curves(create(&csv)?, &records)?;
    let last = traj.final_model().ok_or_else(|| Failure::usage("empty trajectory"))?;
    let pruned = compact(last)?;
    save_model(&pruned, &args.out.join("pruned"))?;
    println!(
        "{}: {} states, final rate {}, {} of {} filters kept, lowest-class AUC {:.4}, {:.2}s -> {}",
        args.strategy,
        records.len(),
        traj.rates().last().map(|r| r.to_string()).unwrap_or_default(),
        pruned.filter_count(),
        model.filter_count(),
        auc_lowest_class(&records)?,
        traj.elapsed.as_secs_f64(),
        csv.display()
    );
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    if args.values.is_empty() || args.strategies.is_empty() {
        return Err(Failure::usage("--values and --strategies must not be empty"));
    }
    if args.vary == Vary::Refs {
        if let Some(&v) = args.values.iter().find(|&&v| v == 0 || v > args.task.ref_per_class) {
            return Err(Failure::usage(format!(
                "reference count {v} outside 1..={} (raise --ref-per-class)",
                args.task.ref_per_class
            )));
        }
    }
    let base = args.task.config(&args.flags)?;
    create_dir(&args.out)?;
    let grid = args.flags.grid();
    let mut aggregate = Vec::new();
    let mut summary: Vec<(usize, String, usize, f64, f64)> = Vec::new();
    let mut prepared = std::collections::HashMap::new();
    for &value in &args.values {
        let mut cfg = base.clone();
        if args.vary == Vary::Classes {
            cfg.data.num_classes = value;
        }
        let mut runs: Vec<Vec<CurveRecord>> = Vec::new();
        let mut totals: Vec<(StrategyKind, f64)> = Vec::new();
        for &seed in &args.seeds.0 {
            let key = (cfg.data.num_classes, seed);
            if !prepared.contains_key(&key) {
                let started = Instant::now();
                let p = prepare(&cfg, seed)?;
                log::info!("trained {key:?} in {:.2}s", started.elapsed().as_secs_f64());
                prepared.insert(key, p);
            }
            let p = &prepared[&key];
            let refs = match args.vary {
                Vary::Refs => p.splits.refs.take_per_class(value)?,
                Vary::Classes => p.splits.refs.clone(),
            };
            let mut rows = Vec::new();
            for &kind in &args.strategies {
                let (traj, records) =
                    run_strategy(kind, &p.model, &refs, &p.splits.eval, &cfg.strategy, &cfg.lrp, seed)?;
                totals.push((kind, traj.elapsed.as_secs_f64()));
                rows.extend(records.iter().cloned());
                runs.push(records);
            }
            let path = args.out.join(format!("{}-{value}-seed{seed}.csv", args.vary));
            write_curves(create(&path)?, &rows)?;
        }
        aggregate.push((value, seed_average(&runs, &grid)?));
        for s in auc_by_strategy(&runs, None)? {
            let times: Vec<f64> =
                totals.iter().filter(|(k, _)| k.label() == s.strategy).map(|(_, t)| *t).collect();
            let mean_time = times.iter().sum::<f64>() / times.len().max(1) as f64;
            println!(
                "{}={value} {}: mean lowest-class AUC {:.4} over {} seeds, mean wall time {:.3}s",
                args.vary,
                s.strategy,
                s.band.mean,
                s.runs.len(),
                mean_time
            );
            summary.push((value, s.strategy.clone(), s.runs.len(), s.band.mean, mean_time));
        }
    }

    // One aggregate file with every value's seed-averaged curves.
    let path = args.out.join("aggregate.csv");
    let mut buf = Vec::new();
    for (i, (value, points)) in aggregate.iter().enumerate() {
        let mut part = Vec::new();
        write_curve_points(&mut part, points, &[(args.vary.to_string().as_str(), value.to_string())])?;
        let text = String::from_utf8(part).expect("csv is utf-8");
        // keep the header of the first block only
        let body = if i == 0 { text.as_str() } else { text.split_once('\n').map_or("", |(_, b)| b) };
        buf.extend_from_slice(body.as_bytes());
    }
    fs::write(&path, buf).map_err(io_fail(&path))?;

    let path = args.out.join("summary.csv");
    let mut text = format!("{},strategy,runs,mean_auc_lowest_class,mean_total_wall_time_s\n", args.vary);
    for (value, strategy, runs, auc, time) in summary {
        text.push_str(&format!("{value},{strategy},{runs},{auc},{time}\n"));
    }
    fs::write(&path, text).map_err(io_fail(&path))?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), Failure> {
    let mut runs: Vec<Vec<CurveRecord>> = Vec::new();
    for path in &args.inputs {
        let file = File::open(path).map_err(io_fail(path))?;
        let records = read_curves(file).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        if records.is_empty() {
            return Err(Failure::Io(format!("{}: no trajectory rows", path.display())));
        }
        // a file may hold several (strategy, seed) runs
        let mut current: Vec<CurveRecord> = Vec::new();
        for r in records {
            if let Some(last) = current.last() {
                if last.strategy != r.strategy || last.seed != r.seed {
                    runs.push(std::mem::take(&mut current));
                }
            }
            current.push(r);
        }
        runs.push(current);
    }
    let grid = match args.grid_step {
        Some(step) if !(step > 0.0 && step <= 1.0) => return Err(Failure::usage("--grid-step must be in (0, 1]")),
        Some(step) => Some(rate_grid(step, 1.0)),
        None => None,
    };
    let summary = auc_by_strategy(&runs, grid.as_deref())?;
    let curve_grid = grid.clone().unwrap_or_else(|| {
        let max = runs.iter().flat_map(|r| r.iter().map(|c| c.rate)).fold(0.0, f64::max);
        rate_grid(0.05, max)
    });
    let points = seed_average(&runs, &curve_grid)?;
    create_dir(&args.out)?;
    write_auc_summary(create(&args.out.join("comparison.csv"))?, &summary)?;
    write_curve_points(create(&args.out.join("curves.csv"))?, &points, &[])?;
    for s in &summary {
        println!(
            "{:<8} runs {:>2}  lowest-class AUC mean {:.4}  min {:.4}  max {:.4}",
            s.strategy,
            s.runs.len(),
            s.band.mean,
            s.band.min,
            s.band.max
        );
    }
    Ok(())
}
