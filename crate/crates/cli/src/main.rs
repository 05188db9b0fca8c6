use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use flowconf::confidence::{
    confidence_db_flow, confidence_db_stereo, confidence_oa, confidence_oa_stereo, occlusion_mask,
    occlusion_mask_stereo, CycleParams,
};
use flowconf::fields::reverse_disparity_restore;
use flowconf::io::{
    read_flo, read_mask_pgm, read_pfm, write_metrics_csv, write_pfm, write_pgm_confidence, write_pgm_mask,
};
use flowconf::losses::{sequence_loss, SequenceParams};
use flowconf::metrics::MetricReport;
use flowconf::toytrain::{compare_runs, synth_scenes, BlockFlowModel};
use flowconf::{BinaryMask, Grid, Grid1, LossMode, Task, WeightSpec};

mod config;

/// Confidence-weighted correspondence losses, metrics and file tools.
#[derive(Debug, Parser)]
#[command(name = "flowconf", version, arg_required_else_help = true)]
struct Cli {
    /// Print every default hyperparameter and exit.
    #[arg(long)]
    show_defaults: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a confidence map as PFM plus a PGM preview.
    Confmap(ConfmapArgs),
    /// Write the cycle-consistency occlusion mask as a bilevel PGM.
    Occmask(OccmaskArgs),
    /// Evaluate a loss mode on one prediction or a refinement sequence.
    Loss(LossArgs),
    /// Compute benchmark metrics and print them as CSV.
    Eval(EvalArgs),
    /// Restore a disparity estimated on horizontally flipped views.
    ReverseDisparity(ReverseArgs),
    /// Run the synthetic training comparison.
    Toytrain(ToytrainArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskArg {
    Flow,
    Stereo,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Flow => Task::Flow,
            TaskArg::Stereo => Task::Stereo,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ConfMode {
    Db,
    Oa,
}

#[derive(Debug, Args)]
struct CycleArgs {
    /// Relative tolerance of the cycle check.
    #[arg(long, default_value_t = CycleParams::default().gamma1)]
    gamma1: f64,
    /// Absolute tolerance of the cycle check.
    #[arg(long, default_value_t = CycleParams::default().gamma2)]
    gamma2: f64,
}

impl CycleArgs {
    fn params(&self) -> anyhow::Result<CycleParams> {
        CycleParams::new(self.gamma1, self.gamma2).map_err(usage)
    }
}

#[derive(Debug, Args)]
struct ConfmapArgs {
    #[arg(long, value_enum)]
    mode: ConfMode,
    #[arg(long, value_enum, default_value = "flow")]
    task: TaskArg,
    /// Prediction (db mode).
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Ground truth (db mode).
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Extra validity mask PGM (db mode).
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Forward flow or left disparity (oa mode).
    #[arg(long)]
    forward: Option<PathBuf>,
    /// Backward flow or right disparity (oa mode).
    #[arg(long)]
    backward: Option<PathBuf>,
    #[command(flatten)]
    cycle: CycleArgs,
    /// Output prefix; `.pfm` and `.pgm` are appended.
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct OccmaskArgs {
    #[arg(long, value_enum, default_value = "flow")]
    task: TaskArg,
    #[arg(long)]
    forward: PathBuf,
    #[arg(long)]
    backward: PathBuf,
    #[command(flatten)]
    cycle: CycleArgs,
    /// Output PGM path.
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct LossArgs {
    #[arg(long, value_enum, default_value = "flow")]
    task: TaskArg,
    /// Prediction file; repeat for a refinement sequence, earliest first.
    #[arg(long, required = true)]
    pred: Vec<PathBuf>,
    /// Backward prediction matching each `--pred`, for cycle-based modes.
    #[arg(long)]
    backward: Vec<PathBuf>,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long, default_value = "plain_l1")]
    mode: String,
    /// Overrides the task default.
    #[arg(long)]
    alpha1: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    alpha2: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[command(flatten)]
    cycle: CycleArgs,
    #[arg(long, default_value_t = SequenceParams::default().gamma_seq)]
    gamma_seq: f64,
    /// Output prefix for the per-iteration CSV and the loss/weight maps.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, value_enum, default_value = "flow")]
    task: TaskArg,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Matched-region mask PGM; enables the matched/unmatched columns.
    #[arg(long)]
    region: Option<PathBuf>,
    /// CSV path; stdout when omitted.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReverseArgs {
    /// Disparity PFM estimated on the flipped pair.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct ToytrainArgs {
    /// `key = value` file; see `--show-defaults` for the keys.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output_dir: PathBuf,
}

/// Invocation problem: bad flag combination or parameter value.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(e: impl std::fmt::Display) -> anyhow::Error {
    UsageError(e.to_string()).into()
}

fn read_file(path: &Path) -> anyhow::Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn shape_str(shape: (usize, usize)) -> String {
    format!("{}x{}", shape.0, shape.1)
}

/// A decoded input: values, per-pixel validity and the path it came from.
struct Loaded<T> {
    path: PathBuf,
    grid: Grid<T>,
    valid: BinaryMask,
}

impl<T: flowconf::fields::Cell> Loaded<T> {
    fn expect_shape(&self, reference: &Loaded<impl flowconf::fields::Cell>) -> anyhow::Result<()> {
        if self.grid.shape() != reference.grid.shape() {
            bail!(
                "{} is {} (HxW) but {} is {}",
                self.path.display(),
                shape_str(self.grid.shape()),
                reference.path.display(),
                shape_str(reference.grid.shape())
            );
        }
        Ok(())
    }

    /// Predictions must be dense.
    fn expect_complete(&self) -> anyhow::Result<()> {
        let missing = self.valid.len() - self.valid.count();
        if missing > 0 {
            bail!("{} has {missing} unknown pixels; predictions must be dense", self.path.display());
        }
        Ok(())
    }
}

trait Readable: flowconf::fields::Value + flowconf::confidence::Correspondence {
    fn load(path: &Path) -> anyhow::Result<Loaded<Self>>;
}

impl Readable for [f64; 2] {
    fn load(path: &Path) -> anyhow::Result<Loaded<Self>> {
        let d = read_flo(&read_file(path)?).with_context(|| format!("cannot decode {}", path.display()))?;
        Ok(Loaded {
            path: path.to_owned(),
            grid: d.flow,
            valid: d.valid,
        })
    }
}

impl Readable for f64 {
    fn load(path: &Path) -> anyhow::Result<Loaded<Self>> {
        let d = read_pfm(&read_file(path)?).with_context(|| format!("cannot decode {}", path.display()))?;
        Ok(Loaded {
            path: path.to_owned(),
            grid: d.map,
            valid: d.valid,
        })
    }
}

fn load_mask(path: &Path, reference: &Loaded<impl flowconf::fields::Cell>) -> anyhow::Result<BinaryMask> {
    let mask = read_mask_pgm(&read_file(path)?).with_context(|| format!("cannot decode {}", path.display()))?;
    if mask.shape() != reference.grid.shape() {
        bail!(
            "{} is {} (HxW) but {} is {}",
            path.display(),
            shape_str(mask.shape()),
            reference.path.display(),
            shape_str(reference.grid.shape())
        );
    }
    Ok(mask)
}

/// Ground-truth validity, narrowed by an optional mask file.
fn evaluation_mask<T: flowconf::fields::Cell>(gt: &Loaded<T>, extra: Option<&Path>) -> anyhow::Result<BinaryMask> {
    match extra {
        Some(p) => Ok(gt.valid.and(&load_mask(p, gt)?)?),
        None => Ok(gt.valid.clone()),
    }
}

fn load_pair<T: Readable>(forward: &Path, backward: &Path) -> anyhow::Result<(Loaded<T>, Loaded<T>)> {
    let fw = T::load(forward)?;
    let bw = T::load(backward)?;
    bw.expect_shape(&fw)?;
    fw.expect_complete()?;
    bw.expect_complete()?;
    Ok((fw, bw))
}

fn write_confidence(prefix: &Path, map: &Grid1) -> anyhow::Result<()> {
    write_file(&with_suffix(prefix, ".pfm"), &write_pfm(map, None))?;
    write_file(&with_suffix(prefix, ".pgm"), &write_pgm_confidence(map).bytes)
}

fn cmd_confmap(args: &ConfmapArgs) -> anyhow::Result<()> {
    let params = args.cycle.params()?;
    let task = Task::from(args.task);
    let map = match args.mode {
        ConfMode::Db => {
            let (Some(pred), Some(gt)) = (&args.pred, &args.gt) else {
                return Err(usage("db mode needs --pred and --gt"));
            };
            match task {
                Task::Flow => db_map::<[f64; 2]>(pred, gt, args.valid.as_deref(), confidence_db_flow)?,
                Task::Stereo => db_map::<f64>(pred, gt, args.valid.as_deref(), confidence_db_stereo)?,
            }
        }
        ConfMode::Oa => {
            let (Some(fw), Some(bw)) = (&args.forward, &args.backward) else {
                return Err(usage("oa mode needs --forward and --backward"));
            };
            match task {
                Task::Flow => {
                    let (fw, bw) = load_pair::<[f64; 2]>(fw, bw)?;
                    confidence_oa(&fw.grid, &bw.grid, &params)?
                }
                Task::Stereo => {
                    let (fw, bw) = load_pair::<f64>(fw, bw)?;
                    confidence_oa_stereo(&fw.grid, &bw.grid, &params)?
                }
            }
        }
    };
    write_confidence(&args.output, &map)
}

fn db_map<T: Readable>(
    pred: &Path,
    gt: &Path,
    valid: Option<&Path>,
    f: fn(&Grid<T>, &Grid<T>, &BinaryMask) -> flowconf::Result<Grid1>,
) -> anyhow::Result<Grid1> {
    let pred = T::load(pred)?;
    let gt = T::load(gt)?;
    pred.expect_shape(&gt)?;
    pred.expect_complete()?;
    let mask = evaluation_mask(&gt, valid)?;
    Ok(f(&pred.grid, &gt.grid, &mask)?)
}

fn cmd_occmask(args: &OccmaskArgs) -> anyhow::Result<()> {
    let params = args.cycle.params()?;
    let mask = match Task::from(args.task) {
        Task::Flow => {
            let (fw, bw) = load_pair::<[f64; 2]>(&args.forward, &args.backward)?;
            occlusion_mask(&fw.grid, &bw.grid, &params)?
        }
        Task::Stereo => {
            let (fw, bw) = load_pair::<f64>(&args.forward, &args.backward)?;
            occlusion_mask_stereo(&fw.grid, &bw.grid, &params)?
        }
    };
    write_file(&args.output, &write_pgm_mask(&mask).bytes)
}

fn loss_spec(args: &LossArgs) -> anyhow::Result<WeightSpec> {
    let mode: LossMode = args.mode.parse().map_err(usage)?;
    let mut spec = WeightSpec::defaults(args.task.into(), mode);
    spec.alpha1 = args.alpha1.unwrap_or(spec.alpha1);
    spec.beta1 = args.beta1.unwrap_or(spec.beta1);
    spec.alpha2 = args.alpha2.unwrap_or(spec.alpha2);
    spec.beta2 = args.beta2.unwrap_or(spec.beta2);
    spec.cycle = args.cycle.params()?;
    spec.validate().map_err(usage)?;
    if mode.needs_backward() && args.backward.len() != args.pred.len() {
        return Err(usage(format!(
            "mode {mode} needs one --backward per --pred ({} given for {} predictions)",
            args.backward.len(),
            args.pred.len()
        )));
    }
    Ok(spec)
}

fn cmd_loss(args: &LossArgs) -> anyhow::Result<()> {
    let spec = loss_spec(args)?;
    let seq = SequenceParams::new(args.gamma_seq).map_err(usage)?;
    match Task::from(args.task) {
        Task::Flow => run_loss::<[f64; 2]>(args, &spec, &seq),
        Task::Stereo => run_loss::<f64>(args, &spec, &seq),
    }
}

fn run_loss<T: Readable>(args: &LossArgs, spec: &WeightSpec, seq: &SequenceParams) -> anyhow::Result<()> {
    let gt = T::load(&args.gt)?;
    let mask = evaluation_mask(&gt, args.valid.as_deref())?;
    let load_all = |paths: &[PathBuf]| -> anyhow::Result<Vec<Grid<T>>> {
        paths
            .iter()
            .map(|p| {
                let l = T::load(p)?;
                l.expect_shape(&gt)?;
                l.expect_complete()?;
                Ok(l.grid)
            })
            .collect()
    };
    let preds = load_all(&args.pred)?;
    let backward = if spec.mode.needs_backward() {
        Some(load_all(&args.backward)?)
    } else {
        None
    };
    let result = sequence_loss(&preds, backward.as_deref(), &gt.grid, &mask, spec, seq)?;
    println!("{}", result.total);

    if let Some(prefix) = &args.output {
        let mut csv = String::from("iteration,loss\n");
        for (i, r) in result.per_iteration.iter().enumerate() {
            csv.push_str(&format!("{},{}\n", i + 1, r.scalar));
        }
        csv.push_str(&format!("total,{}\n", result.total));
        write_file(&with_suffix(prefix, ".csv"), csv.as_bytes())?;
        let single = result.per_iteration.len() == 1;
        for (i, r) in result.per_iteration.iter().enumerate() {
            let tag = if single { String::new() } else { format!(".iter{}", i + 1) };
            write_file(&with_suffix(prefix, &format!("{tag}.loss.pfm")), &write_pfm(&r.loss_map, None))?;
            write_file(&with_suffix(prefix, &format!("{tag}.weight.pfm")), &write_pfm(&r.weight_map, None))?;
        }
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> anyhow::Result<()> {
    let report = match Task::from(args.task) {
        Task::Flow => eval_report::<[f64; 2]>(args, MetricReport::flow)?,
        Task::Stereo => eval_report::<f64>(args, MetricReport::stereo)?,
    };
    let mut buf = Vec::new();
    write_metrics_csv(&report, &mut buf)?;
    match &args.output {
        Some(path) => write_file(path, &buf),
        None => Ok(std::io::stdout().write_all(&buf)?),
    }
}

type ReportFn<T> = fn(&Grid<T>, &Grid<T>, &BinaryMask, Option<&BinaryMask>) -> flowconf::Result<MetricReport>;

fn eval_report<T: Readable>(args: &EvalArgs, f: ReportFn<T>) -> anyhow::Result<MetricReport> {
    let pred = T::load(&args.pred)?;
    let gt = T::load(&args.gt)?;
    pred.expect_shape(&gt)?;
    pred.expect_complete()?;
    let mask = evaluation_mask(&gt, args.valid.as_deref())?;
    let region = args.region.as_deref().map(|p| load_mask(p, &gt)).transpose()?;
    Ok(f(&pred.grid, &gt.grid, &mask, region.as_ref())?)
}

fn cmd_reverse_disparity(args: &ReverseArgs) -> anyhow::Result<()> {
    let input = f64::load(&args.input)?;
    let restored = reverse_disparity_restore(&input.grid);
    let valid = flowconf::fields::hflip(&input.valid);
    write_file(&args.output, &write_pfm(&restored, Some(&valid)))
}

fn cmd_toytrain(args: &ToytrainArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(&args.config).with_context(|| format!("cannot read {}", args.config.display()))?;
    let cfg = config::parse_config(&text).map_err(|e| usage(format!("{}: {e}", args.config.display())))?;
    let scene = &cfg.scene;
    let model = BlockFlowModel::new(scene.height, scene.width, cfg.block_size).map_err(usage)?;
    let scenes = synth_scenes(scene, cfg.seeds(), cfg.randomize_scenes).map_err(usage)?;
    info!(
        "training {} modes on {} scenes of {}x{}",
        cfg.configs.len(),
        scenes.len(),
        scene.height,
        scene.width
    );
    let comparison = compare_runs(&cfg.configs, &scenes, &model)?;

    let dir = &args.output_dir;
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut summary = Vec::new();
    comparison.write_csv(&mut summary)?;
    write_file(&dir.join("summary.csv"), &summary)?;
    let mut runs = Vec::new();
    comparison.write_runs_csv(&mut runs)?;
    write_file(&dir.join("runs.csv"), &runs)?;

    for report in &comparison.reports {
        for run in &report.runs {
            let stem = format!("{}_seed{}", report.label, run.seed);
            let mut metrics = Vec::new();
            write_metrics_csv(&run.metrics, &mut metrics)?;
            write_file(&dir.join(format!("{stem}_metrics.csv")), &metrics)?;
            let mut loss = String::from("step,loss\n");
            for (i, l) in run.loss_trajectory.iter().enumerate() {
                loss.push_str(&format!("{i},{l}\n"));
            }
            write_file(&dir.join(format!("{stem}_loss.csv")), loss.as_bytes())?;
            for snap in &run.snapshots {
                let base = dir.join(format!("{stem}_step{:05}", snap.step));
                write_file(&with_suffix(&base, "_db.pgm"), &write_pgm_confidence(&snap.confidence_db).bytes)?;
                write_file(&with_suffix(&base, "_oa.pgm"), &write_pgm_confidence(&snap.confidence_oa).bytes)?;
            }
        }
    }
    std::io::stdout().write_all(&summary)?;
    Ok(())
}

fn show_defaults() {
    let cycle = CycleParams::default();
    println!("parameter,flow,stereo");
    for (name, pick) in [
        ("alpha1", 0usize),
        ("beta1", 1),
        ("alpha2", 2),
        ("beta2", 3),
    ] {
        let value = |task: Task| {
            let (db, oa) = (task.db_defaults(), task.oa_defaults());
            [db.0, db.1, oa.0, oa.1][pick]
        };
        println!("{name},{},{}", value(Task::Flow), value(Task::Stereo));
    }
    println!("gamma1,{},{}", cycle.gamma1, cycle.gamma1);
    println!("gamma2,{},{}", cycle.gamma2, cycle.gamma2);
    let g = SequenceParams::default().gamma_seq;
    println!("gamma_seq,{g},{g}");
    println!();
    println!("toytrain keys:");
    for (key, help) in config::KEYS {
        println!("  {key:<28}{help}");
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if cli.show_defaults {
        show_defaults();
        return Ok(());
    }
    match &cli.command {
        Some(Command::Confmap(a)) => cmd_confmap(a),
        Some(Command::Occmask(a)) => cmd_occmask(a),
        Some(Command::Loss(a)) => cmd_loss(a),
        Some(Command::Eval(a)) => cmd_eval(a),
        Some(Command::ReverseDisparity(a)) => cmd_reverse_disparity(a),
        Some(Command::Toytrain(a)) => cmd_toytrain(a),
        None => Err(usage("a subcommand is required (see --help)")),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<flowconf::Error>() {
        Some(flowconf::Error::InvalidParameter { .. } | flowconf::Error::MissingInput { .. }) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
