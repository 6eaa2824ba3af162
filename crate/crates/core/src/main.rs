use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use condgan::data::read_points_csv;
use condgan::harness::{
    load_checkpoint, resume, sweep, train, write_sweep_csv, Mode, SweepAxis, Trainer, TrainingConfig,
};
use condgan::metrics::{classwise, default_block_size, fid, kid, precision_recall, FeatureSet, MetricKind};
use condgan::objective::Formulation;
use condgan::schedule::TransitionSchedule;
use condgan::{Error, Result};

#[derive(Parser)]
#[command(name = "condgan", version, about = "Unconditional-to-conditional GAN training lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run; flags override the config file.
    Train(TrainArgs),
    /// Independent runs over one axis and a list of seeds; tidy CSV on stdout.
    Sweep(SweepArgs),
    /// Evaluate a checkpoint's generator at a fixed conditioning weight.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        lambda: f64,
    },
    /// Metrics between two point files (`label,x0,...`); one CSV row on stdout.
    ///
    /// Columns, in order, for each selected metric: fid, kid, precision,recall,
    /// classwise_fid, classwise_kid (the last two are per-class means). With no
    /// metric flags, fid, kid and precision/recall are reported.
    Metrics(MetricsArgs),
    /// Print the λ curve as `t,lambda`.
    Schedule {
        #[arg(long)]
        ts: i64,
        #[arg(long)]
        te: i64,
        #[arg(long)]
        tm: i64,
        #[arg(long, default_value_t = 1)]
        stride: i64,
        #[arg(long, default_value_t = 1.0)]
        clip_max: f64,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, required_unless_present = "resume")]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    ts: Option<i64>,
    #[arg(long, allow_hyphen_values = true)]
    te: Option<i64>,
    #[arg(long)]
    tm: Option<i64>,
    #[arg(long)]
    clip_max: Option<f64>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    formulation: Option<String>,
    /// Continue from a checkpoint instead of starting fresh; config flags other than --out are ignored.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    axis: String,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    values: Vec<i64>,
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct MetricsArgs {
    real: PathBuf,
    fake: PathBuf,
    #[arg(long)]
    fid: bool,
    #[arg(long)]
    kid: bool,
    #[arg(long)]
    pr: bool,
    #[arg(long)]
    classwise: bool,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long)]
    block_size: Option<usize>,
}

fn run_train(a: TrainArgs) -> Result<()> {
    let outcome = if let Some(path) = &a.resume {
        resume(&load_checkpoint(path)?, a.out.clone())?
    } else {
        let path = a.config.as_deref().expect("clap enforces --config");
        let mut cfg = TrainingConfig::load(path)?;
        if let Some(m) = &a.mode {
            cfg.mode = m.parse::<Mode>()?;
        }
        if let Some(f) = &a.formulation {
            cfg.formulation = f.parse::<Formulation>()?;
        }
        cfg.t_start = a.ts.unwrap_or(cfg.t_start);
        cfg.t_end = a.te.unwrap_or(cfg.t_end);
        cfg.t_max = a.tm.unwrap_or(cfg.t_max);
        cfg.clip_max = a.clip_max.unwrap_or(cfg.clip_max);
        cfg.num_classes = a.classes.unwrap_or(cfg.num_classes);
        cfg.samples_per_class = a.per_class.unwrap_or(cfg.samples_per_class);
        cfg.seed = a.seed.unwrap_or(cfg.seed);
        if a.out.is_some() {
            cfg.output_dir = a.out.clone();
        }
        cfg.validate()?;
        train(&cfg)?
    };
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", condgan::harness::METRICS_HEADER)?;
    if let Some(r) = outcome.log.last() {
        let v = r.to_array();
        let fields: Vec<String> = std::iter::once(r.step.to_string())
            .chain(v[1..].iter().map(f64::to_string))
            .collect();
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

fn run_sweep(a: SweepArgs) -> Result<()> {
    let base = TrainingConfig::load(&a.config)?;
    let axis: SweepAxis = a.axis.parse()?;
    let rows = sweep(&base, axis, &a.values, &a.seeds)?;
    if let Some(dir) = &base.output_dir {
        std::fs::create_dir_all(dir)?;
        write_sweep_csv(&rows, std::fs::File::create(PathBuf::from(dir).join("sweep.csv"))?)?;
    }
    write_sweep_csv(&rows, std::io::stdout().lock())
}

fn run_eval(checkpoint: PathBuf, lambda: f64) -> Result<()> {
    let record = load_checkpoint(&checkpoint)?;
    let trainer = Trainer::from_checkpoint(&record)?;
    let r = trainer.evaluate_at(lambda, record.step)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "step,lambda,fid,kid,precision,recall,mode_coverage,class_fidelity")?;
    writeln!(
        out,
        "{},{},{},{},{},{},{},{}",
        record.step, lambda, r.fid, r.kid, r.precision, r.recall, r.mode_coverage, r.class_fidelity
    )?;
    Ok(())
}

fn read_set(path: &PathBuf) -> Result<FeatureSet> {
    let (dim, points, labels) = read_points_csv(std::fs::File::open(path)?)?;
    FeatureSet::new(dim, points, Some(labels))
}

fn run_metrics(a: MetricsArgs) -> Result<()> {
    let real = read_set(&a.real)?;
    let fake = read_set(&a.fake)?;
    let all = !(a.fid || a.kid || a.pr || a.classwise);
    let block = a.block_size.unwrap_or_else(|| default_block_size(&real, &fake));
    let mut row = Vec::new();
    if a.fid || all {
        row.push(fid(&real, &fake)?);
    }
    if a.kid || all {
        row.push(kid(&real, &fake, block)?);
    }
    if a.pr || all {
        let (p, r) = precision_recall(&real, &fake, a.k)?;
        row.extend([p, r]);
    }
    if a.classwise {
        row.push(classwise(MetricKind::Fid, &real, &fake)?.mean);
        row.push(classwise(MetricKind::Kid(block), &real, &fake)?.mean);
    }
    let text: Vec<String> = row.iter().map(f64::to_string).collect();
    writeln!(std::io::stdout().lock(), "{}", text.join(","))?;
    Ok(())
}

fn run_schedule(ts: i64, te: i64, tm: i64, stride: i64, clip_max: f64) -> Result<()> {
    let s = TransitionSchedule {
        t_start: ts,
        t_end: te,
        t_max: tm,
        clip_max,
    };
    s.validate()?;
    s.write_curve_csv(stride, std::io::stdout().lock())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => run_train(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Eval { checkpoint, lambda } => run_eval(checkpoint, lambda),
        Command::Metrics(a) => run_metrics(a),
        Command::Schedule {
            ts,
            te,
            tm,
            stride,
            clip_max,
        } => run_schedule(ts, te, tm, stride, clip_max),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
