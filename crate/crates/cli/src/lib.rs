//! `pcc` command-line driver: data generation, training, inference,
//! adaptation and evaluation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use pcc_core::data::{build_toy_dataset, load_dataset, read_cloud, write_cloud, ShapeKind, ToyDatasetConfig};
use pcc_core::model::load_params_for;
use pcc_core::train::{Checkpoint, EpochRecord, TrainConfig, Trainer};
use pcc_core::view::ViewParams;
use pcc_core::{evaluate_dataset, forward_complete, synthesize_partial, Error, PointCloud, SeededRng};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_COMPUTE: i32 = 3;

pub const LOSS_LOG: &str = "loss.log";
pub const BEST_CKPT: &str = "best.ckpt";
pub const FINAL_CKPT: &str = "final.ckpt";
pub const RESOLVED_CONFIG: &str = "config.json";

#[derive(Parser, Debug)]
#[command(name = "pcc", version, about = "Self-supervised point cloud completion")]
struct Cli {
    /// Worker threads for internal parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate procedural shapes and their partial views.
    GenData(GenDataArgs),
    /// Train from scratch (or resume) on the partials of a dataset.
    Train(TrainArgs),
    /// Complete a single partial cloud.
    Complete(CompleteArgs),
    /// Synthesize a partial view of a cloud.
    SynthView(SynthViewArgs),
    /// Adapt a pretrained model on the partials of a dataset.
    Ttadapt(TtadaptArgs),
    /// Evaluate a model on a dataset.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long, default_value_t = 40)]
    shapes: usize,
    #[arg(long, default_value_t = 5)]
    views: usize,
    /// Points per partial.
    #[arg(long, default_value_t = 1024)]
    points: usize,
    /// Points per complete shape.
    #[arg(long, default_value_t = 2048)]
    gt_points: usize,
    /// Comma-separated shape kinds, cycled in order.
    #[arg(long, value_delimiter = ',', default_value = "sphere,cuboid,cylinder,capsule")]
    kinds: Vec<ShapeKind>,
    #[arg(long, default_value_t = pcc_core::view::DEFAULT_GRID_RESOLUTION)]
    grid_resolution: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Flags that override fields of the JSON config.
#[derive(Args, Debug, Default)]
struct ConfigOverrides {
    /// JSON file with TrainConfig fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    n_syn_views: Option<usize>,
    #[arg(long)]
    n_out: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda_cons: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    grid_resolution: Option<usize>,
}

impl ConfigOverrides {
    fn resolve(&self, base: TrainConfig) -> anyhow::Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                serde_json::from_str(&text)
                    .map_err(Error::from)
                    .with_context(|| format!("config {}", path.display()))?
            }
            None => base,
        };
        macro_rules! set {
            ($flag:ident => $($field:ident).+) => {
                if let Some(v) = self.$flag {
                    cfg.$($field).+ = v;
                }
            };
        }
        set!(seed => seed);
        set!(epochs => epochs);
        set!(batch_size => batch_size);
        set!(n_syn_views => n_syn_views);
        set!(n_out => n_out);
        set!(lr => lr0);
        set!(lambda_cons => weights.lambda_cons);
        set!(alpha => weights.alpha);
        set!(beta => weights.beta);
        set!(grid_resolution => grid_resolution);
        cfg.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    overrides: ConfigOverrides,
    /// Dataset directory or manifest file.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the loss log and checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// Also write `epoch_NNNN.ckpt` every this many epochs (0 = never).
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    /// Resume from a checkpoint written by an earlier run with the same config.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TtadaptArgs {
    #[command(flatten)]
    overrides: ConfigOverrides,
    /// Pretrained checkpoint.
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
}

#[derive(Args, Debug)]
struct CompleteArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct SynthViewArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Azimuth in degrees; sampled when omitted.
    #[arg(long, allow_negative_numbers = true)]
    azimuth: Option<f64>,
    /// Elevation in degrees; sampled when omitted.
    #[arg(long, allow_negative_numbers = true)]
    elevation: Option<f64>,
    #[arg(long, default_value_t = pcc_core::view::DEFAULT_GRID_RESOLUTION)]
    grid_resolution: usize,
    /// Output point count (defaults to the input size).
    #[arg(long)]
    points: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// `.json` writes JSON, anything else CSV.
    #[arg(long)]
    report: PathBuf,
    /// Multiplier applied to every reported value.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
}

/// Invalid flag or config values; reported with the usage exit code.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        let data = err
            .chain()
            .any(|e| e.downcast_ref::<Error>().is_some_and(Error::is_data_error));
        let io = err.chain().any(|e| e.is::<std::io::Error>());
        let usage = err.chain().any(|e| e.is::<UsageError>());
        let code = if usage {
            EXIT_USAGE
        } else if data || io {
            EXIT_DATA
        } else {
            EXIT_COMPUTE
        };
        Failure {
            code,
            message: format!("{err:#}").replace('\n', " "),
        }
    }
}

/// Runs the command line `argv` (including the program name) and returns the
/// process exit status. Diagnostics go to stderr as a single line.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if cli.threads == 0 {
        eprintln!("error: --threads must be >= 1");
        return EXIT_USAGE;
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_COMPUTE;
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Complete(a) => complete(a),
        Command::SynthView(a) => synth_view(a),
        Command::Ttadapt(a) => ttadapt(a),
        Command::Eval(a) => eval(a),
    }
    .map_err(Failure::from)
}

fn gen_data(a: GenDataArgs) -> anyhow::Result<()> {
    let cfg = ToyDatasetConfig {
        n_shapes: a.shapes,
        views_per_shape: a.views,
        n_partial_points: a.points,
        gt_points: a.gt_points,
        kinds: a.kinds,
        grid_resolution: a.grid_resolution,
        seed: a.seed,
    };
    let manifest = build_toy_dataset(&cfg, &a.out)?;
    println!("wrote {} partials to {}", manifest.records.len(), a.out.display());
    Ok(())
}

/// Accepts `dir/best` as shorthand for `dir/best.ckpt`.
pub fn resolve_checkpoint(path: &Path) -> PathBuf {
    if path.exists() {
        return path.to_path_buf();
    }
    let with_ext = path.with_extension("ckpt");
    if with_ext.exists() {
        with_ext
    } else {
        path.to_path_buf()
    }
}

fn load_partials(data: &Path) -> anyhow::Result<Vec<PointCloud>> {
    Ok(load_dataset(data)?.into_iter().map(|s| s.partial).collect())
}

fn io_context(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Parses the total column of each line of a loss log.
fn parse_log_totals(text: &str) -> Vec<(String, f64)> {
    text.lines()
        .filter_map(|l| {
            let total = l.rsplit(',').next()?.parse().ok()?;
            Some((l.to_string(), total))
        })
        .collect()
}

/// Runs `trainer` to completion, writing the loss log, `best.ckpt` (lowest
/// epoch total loss), `final.ckpt` and periodic checkpoints into `out`.
fn drive(mut trainer: Trainer, out: &Path, checkpoint_every: usize, prior_log: Vec<(String, f64)>) -> anyhow::Result<()> {
    fs::create_dir_all(out).map_err(io_context(out))?;
    fs::write(
        out.join(RESOLVED_CONFIG),
        serde_json::to_string_pretty(trainer.config()).map_err(Error::from)?,
    )
    .map_err(io_context(out))?;

    let mut log = String::new();
    let mut best = f64::INFINITY;
    for (line, total) in &prior_log {
        let _ = writeln!(log, "{line}");
        best = best.min(*total);
    }
    let log_path = out.join(LOSS_LOG);
    fs::write(&log_path, &log).map_err(io_context(&log_path))?;

    while !trainer.is_done() {
        let rec: EpochRecord = trainer.run_epoch()?;
        let _ = writeln!(log, "{}", rec.log_line());
        fs::write(&log_path, &log).map_err(io_context(&log_path))?;
        let ckpt = trainer.checkpoint();
        if rec.loss.total < best {
            best = rec.loss.total;
            ckpt.save(&out.join(BEST_CKPT))?;
        }
        if checkpoint_every > 0 && (rec.epoch + 1) % checkpoint_every == 0 {
            ckpt.save(&out.join(format!("epoch_{:04}.ckpt", rec.epoch + 1)))?;
        }
    }
    let ckpt = trainer.checkpoint();
    ckpt.save(&out.join(FINAL_CKPT))?;
    if !out.join(BEST_CKPT).exists() {
        ckpt.save(&out.join(BEST_CKPT))?;
    }
    println!("trained to epoch {} in {}", ckpt.state.epoch, out.display());
    Ok(())
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let cfg = a.overrides.resolve(TrainConfig::desk())?;
    let partials = load_partials(&a.data)?;
    match &a.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(&resolve_checkpoint(path))?;
            let done = ckpt.state.epoch;
            let log_path = a.out.join(LOSS_LOG);
            let prior = match fs::read_to_string(&log_path) {
                Ok(text) => parse_log_totals(&text),
                Err(_) => Vec::new(),
            };
            if prior.len() < done {
                anyhow::bail!(Error::Format {
                    path: log_path,
                    message: format!("has {} epochs, checkpoint is at epoch {done}", prior.len()),
                });
            }
            let trainer = Trainer::resume(&partials, cfg, ckpt)?;
            drive(trainer, &a.out, a.checkpoint_every, prior.into_iter().take(done).collect())
        }
        None => drive(Trainer::new(&partials, cfg)?, &a.out, a.checkpoint_every, Vec::new()),
    }
}

fn ttadapt(a: TtadaptArgs) -> anyhow::Result<()> {
    let cfg = a.overrides.resolve(TrainConfig::desk())?;
    let params = load_params_for(&resolve_checkpoint(&a.ckpt), cfg.n_out)?;
    let partials = load_partials(&a.data)?;
    drive(Trainer::from_params(&partials, cfg, params)?, &a.out, a.checkpoint_every, Vec::new())
}

fn load_model(path: &Path) -> anyhow::Result<pcc_core::ModelParams> {
    Ok(pcc_core::load_params(&resolve_checkpoint(path))?)
}

fn complete(a: CompleteArgs) -> anyhow::Result<()> {
    let params = load_model(&a.ckpt)?;
    let partial = read_cloud(&a.input)?;
    let completion = forward_complete(&params, &partial)?;
    write_cloud(&completion, &a.output)?;
    Ok(())
}

fn synth_view(a: SynthViewArgs) -> anyhow::Result<()> {
    let cloud = read_cloud(&a.input)?;
    let mut rng = SeededRng::new(a.seed);
    let sampled = pcc_core::view::sample_view_with_resolution(&mut rng, a.grid_resolution);
    let view = ViewParams::new(
        a.azimuth.unwrap_or(sampled.azimuth_deg),
        a.elevation.unwrap_or(sampled.elevation_deg),
        a.grid_resolution,
    )?;
    let n = a.points.unwrap_or(cloud.len());
    let partial = synthesize_partial(&cloud, &view, n, &mut rng)?;
    write_cloud(&partial, &a.output)?;
    println!(
        "azimuth {} elevation {} -> {} points",
        view.azimuth_deg,
        view.elevation_deg,
        partial.len()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let params = load_model(&a.ckpt)?;
    let samples = load_dataset(&a.data)?;
    let report = evaluate_dataset(&params, &samples)?.scaled(a.scale);
    let json = a
        .report
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let text = if json { report.to_json() } else { report.to_csv() };
    if let Some(dir) = a.report.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_context(dir))?;
    }
    fs::write(&a.report, text).map_err(io_context(&a.report))?;
    let m = &report.aggregate;
    println!(
        "samples {} cd {:?} ucd {:?} uhd {:?}",
        m.sample_count, m.cd, m.ucd, m.uhd
    );
    Ok(())
}
