//! `iaknn` command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use iaknn::data::{
    build_scenes, parse_ngsim_csv, read_scenes, select_split, synth_scenes, write_scenes, BehaviorConfig, ColumnMap,
    DataError, SceneConfig, SceneWindow, Split, Units, FRAME_DT, SCENE_FORMAT_VERSION,
};
use iaknn::eval::{cv_baseline, evaluate, future_positions, predict_scene, EvalError, EvalReport, Trajectory};
use iaknn::filter::FilterError;
use iaknn::model::{ControlSource, Iaknn, ModelConfig};
use iaknn::nn::NnError;
use iaknn::train::{load_checkpoint, save_checkpoint, train, write_loss_curve, TrainConfig, TrainError, TrainHooks, CHECKPOINT_FORMAT_VERSION};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Config(_) | NnError::Dimension { .. } => CliError::Usage(e.to_string()),
            NnError::Checkpoint(_) | NnError::UnknownParam(_) => CliError::Data(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<FilterError> for CliError {
    fn from(e: FilterError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Nn(inner) => inner.into(),
            TrainError::Data(_) | TrainError::Io { .. } | TrainError::Checkpoint { .. } | TrainError::VersionMismatch { .. } => {
                CliError::Data(e.to_string())
            }
            TrainError::NonFiniteLoss { .. } | TrainError::Interrupted(_) => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Nn(inner) => inner.into(),
            EvalError::Data(_) | EvalError::Io { .. } | EvalError::Shape(_) => CliError::Data(e.to_string()),
            EvalError::NotPsd { .. } => CliError::Numeric(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "iaknn", about = "Interaction-aware Kalman neural network trajectory forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    All,
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::All => Split::All,
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelArg {
    Iaknn,
    Nofl,
    Cv,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ControlArg {
    Forecast,
    SensorHeld,
}

#[derive(Subcommand)]
enum Command {
    /// Convert NGSIM trajectory CSVs into a scene file.
    Ingest {
        /// Input CSV; repeat to combine several recordings.
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[arg(long, default_value = "feet")]
        units: String,
        #[arg(long)]
        out: PathBuf,
        /// Column-name overrides as JSON.
        #[arg(long)]
        columns: Option<PathBuf>,
        #[arg(long, default_value_t = 7.0)]
        window_s: f64,
        #[arg(long, default_value_t = 2.0)]
        past_s: f64,
        /// Frames between consecutive windows of one host.
        #[arg(long, default_value_t = 10)]
        stride: usize,
        #[arg(long, default_value_t = 5)]
        neighbors: usize,
    },
    /// Generate synthetic interacting traffic scenes.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        scenes: usize,
        #[arg(long)]
        out: PathBuf,
        /// Behaviour overrides as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model and write a checkpoint plus a loss-curve CSV.
    Train {
        #[arg(long)]
        scenes: PathBuf,
        /// JSON file with optional `model` and `train` sections.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Loss-curve CSV; defaults to `<out>.losses.csv`.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        teacher_forcing: Option<f64>,
        #[arg(long)]
        obs_horizon: Option<usize>,
        #[arg(long)]
        positions_only: bool,
        #[arg(long)]
        no_filter: bool,
        #[arg(long, value_enum)]
        control: Option<ControlArg>,
        #[arg(long, hide = true)]
        abort_after_batches: Option<usize>,
    },
    /// Score a checkpoint and the constant-velocity baseline.
    Eval {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON report path.
        #[arg(long)]
        out: PathBuf,
        /// Flat CSV path; defaults to the report path with a `.csv` extension.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
    },
    /// Write predicted and true future positions of one scene.
    Predict {
        #[arg(long)]
        scenes: PathBuf,
        /// Required for the `iaknn` and `nofl` models.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Scene id as stored in the scene file.
        #[arg(long)]
        scene: String,
        #[arg(long, value_enum, default_value = "iaknn")]
        model: ModelArg,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Contents of `--config`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    model: ModelConfig,
    train: TrainConfig,
}

fn version_text() -> String {
    format!(
        "{} (checkpoint format {CHECKPOINT_FORMAT_VERSION}, scene format {SCENE_FORMAT_VERSION})",
        env!("CARGO_PKG_VERSION")
    )
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn load_scenes(path: &Path, split: SplitArg, split_seed: u64) -> Result<Vec<SceneWindow>, CliError> {
    let scenes = read_scenes(path)?;
    Ok(select_split(scenes, split.into(), split_seed))
}

fn cmd_ingest(
    inputs: &[PathBuf],
    units: &str,
    out: &Path,
    columns: Option<&Path>,
    scene_cfg: SceneConfig,
) -> Result<(), CliError> {
    let units: Units = units.parse().map_err(CliError::Usage)?;
    let mut map: ColumnMap = match columns {
        Some(p) => read_json(p)?,
        None => ColumnMap::default(),
    };
    map.units = units;
    let mut all = Vec::new();
    let (mut tracks, mut skipped_hosts, mut skipped_windows) = (0, 0, 0);
    for input in inputs {
        let t = parse_ngsim_csv(input, &map)?;
        let prefix = if inputs.len() > 1 {
            let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            format!("{stem}:")
        } else {
            String::new()
        };
        let cfg = SceneConfig {
            id_prefix: prefix,
            ..scene_cfg.clone()
        };
        let built = build_scenes(&t, &cfg)?;
        tracks += t.len();
        skipped_hosts += built.skipped_hosts;
        skipped_windows += built.skipped_windows;
        all.extend(built.scenes);
    }
    write_scenes(out, &all)?;
    println!(
        "tracks {tracks}, scenes {}, skipped hosts {skipped_hosts}, skipped windows {skipped_windows}",
        all.len()
    );
    Ok(())
}

fn cmd_synth(seed: u64, n: usize, out: &Path, config: Option<&Path>) -> Result<(), CliError> {
    let cfg: BehaviorConfig = match config {
        Some(p) => read_json(p)?,
        None => BehaviorConfig::default(),
    };
    let scenes = synth_scenes(seed, n, &cfg);
    write_scenes(out, &scenes)?;
    let events = scenes.iter().filter(|s| s.has_interaction_event(0.5)).count();
    println!("scenes {}, with interaction events {events}", scenes.len());
    Ok(())
}

fn default_loss_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".losses.csv");
    out.with_file_name(name)
}

struct TrainOverrides {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    seed: Option<u64>,
    teacher_forcing: Option<f64>,
    obs_horizon: Option<usize>,
    positions_only: bool,
    no_filter: bool,
    control: Option<ControlArg>,
}

fn resolve_config(config: Option<&Path>, o: &TrainOverrides) -> Result<RunConfig, CliError> {
    let mut rc: RunConfig = match config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    let t = &mut rc.train;
    t.epochs = o.epochs.unwrap_or(t.epochs);
    t.batch_size = o.batch_size.unwrap_or(t.batch_size);
    t.lr = o.lr.unwrap_or(t.lr);
    t.seed = o.seed.unwrap_or(t.seed);
    t.teacher_forcing = o.teacher_forcing.unwrap_or(t.teacher_forcing);
    let m = &mut rc.model;
    m.obs_horizon = o.obs_horizon.unwrap_or(m.obs_horizon);
    m.positions_only |= o.positions_only;
    m.use_filter &= !o.no_filter;
    if let Some(c) = o.control {
        m.control = match c {
            ControlArg::Forecast => ControlSource::Forecast,
            ControlArg::SensorHeld => ControlSource::SensorHeld,
        };
    }
    rc.train.validate()?;
    rc.model.validate()?;
    Ok(rc)
}

fn cmd_train(
    scenes: &Path,
    config: Option<&Path>,
    out: &Path,
    loss_csv: Option<&Path>,
    split: (SplitArg, u64),
    overrides: TrainOverrides,
    abort_after: Option<usize>,
) -> Result<(), CliError> {
    let rc = resolve_config(config, &overrides)?;
    let scenes = load_scenes(scenes, split.0, split.1)?;
    if scenes.is_empty() {
        return Err(CliError::Data("no scenes in the selected split".into()));
    }
    println!("training on {} scenes for {} epochs", scenes.len(), rc.train.epochs);
    let start = Instant::now();
    let mut report = |epoch: usize, loss: f64| println!("epoch {epoch}: mean loss {loss:.6}");
    let hooks = TrainHooks {
        max_batches: abort_after,
        on_epoch: Some(&mut report),
    };
    let ck = train(&scenes, &rc.model, &rc.train, hooks)?;
    save_checkpoint(out, &ck)?;
    let loss_path = loss_csv.map(Path::to_path_buf).unwrap_or_else(|| default_loss_path(out));
    write_loss_curve(&loss_path, &ck.losses)?;
    println!(
        "wrote {} and {} in {:.1} s",
        out.display(),
        loss_path.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn print_report(r: &EvalReport) {
    println!("{:<12} {:>9} {:>10} {:>10} {:>9}", "model", "horizon_s", "rmse_m", "nll", "hit_rate");
    for row in &r.rows {
        let nll = row.nll.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<12} {:>9.1} {:>10.4} {:>10} {:>9.3}",
            row.model, row.horizon_s, row.rmse_m, nll, row.hit_rate
        );
    }
}

fn cmd_eval(scenes: &Path, checkpoint: &Path, out: &Path, csv: Option<&Path>, split: (SplitArg, u64)) -> Result<(), CliError> {
    let ck = load_checkpoint(checkpoint)?;
    let model = Iaknn::new(ck.model.clone())?;
    let store = ck.params()?;
    let scenes = load_scenes(scenes, split.0, split.1)?;
    let start = Instant::now();
    let report = evaluate(&model, &store, &ck.standardizer, &scenes)?;
    let elapsed = start.elapsed().as_secs_f64();
    report.write_json(out)?;
    let csv_path = csv.map(Path::to_path_buf).unwrap_or_else(|| out.with_extension("csv"));
    report.write_csv(&csv_path)?;
    print_report(&report);
    println!(
        "{} scenes, {} agents evaluated in {elapsed:.2} s",
        report.scene_count, report.agent_count
    );
    Ok(())
}

fn write_prediction_csv(out: &Path, pred: &[Trajectory], truth: &[Trajectory], dt: f64) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::Data(format!("{}: {e}", out.display()));
    let mut w = csv::Writer::from_path(out).map_err(err)?;
    w.write_record(["t", "agent", "pred_x", "pred_y", "true_x", "true_y"]).map_err(err)?;
    for (agent, (p, t)) in pred.iter().zip(truth).enumerate() {
        for (k, (pp, tt)) in p.iter().zip(t).enumerate() {
            let time = ((k + 1) as f64 * dt * 1e6).round() / 1e6;
            w.write_record([
                time.to_string(),
                agent.to_string(),
                pp[0].to_string(),
                pp[1].to_string(),
                tt[0].to_string(),
                tt[1].to_string(),
            ])
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| CliError::Data(format!("{}: {e}", out.display())))
}

fn cmd_predict(scenes: &Path, checkpoint: Option<&Path>, id: &str, model: ModelArg, out: &Path) -> Result<(), CliError> {
    let scenes = read_scenes(scenes)?;
    let scene = scenes
        .iter()
        .find(|s| s.id == id)
        .ok_or_else(|| CliError::Data(format!("scene {id:?} not found")))?;
    let (pred, truth, dt) = match model {
        ModelArg::Cv => {
            let l = scene.future_len();
            (cv_baseline(scene, l, FRAME_DT), future_positions(scene, l), FRAME_DT)
        }
        ModelArg::Iaknn | ModelArg::Nofl => {
            let path = checkpoint.ok_or_else(|| CliError::Usage("--checkpoint is required for this model".into()))?;
            let ck = load_checkpoint(path)?;
            let m = Iaknn::new(ck.model.clone())?;
            let p = predict_scene(&m, &ck.params()?, &ck.standardizer, scene)?;
            let traj = if matches!(model, ModelArg::Iaknn) { p.iaknn } else { p.nofl };
            (traj, p.truth, ck.model.dt)
        }
    };
    write_prediction_csv(out, &pred, &truth, dt)?;
    println!("wrote {} agents × {} steps to {}", pred.len(), pred.first().map_or(0, Vec::len), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest {
            input,
            units,
            out,
            columns,
            window_s,
            past_s,
            stride,
            neighbors,
        } => {
            let cfg = SceneConfig {
                stride,
                neighbors,
                ..SceneConfig::from_seconds(window_s, past_s)
            };
            cmd_ingest(&input, &units, &out, columns.as_deref(), cfg)
        }
        Command::Synth { seed, scenes, out, config } => cmd_synth(seed, scenes, &out, config.as_deref()),
        Command::Train {
            scenes,
            config,
            out,
            loss_csv,
            split,
            split_seed,
            epochs,
            batch_size,
            lr,
            seed,
            teacher_forcing,
            obs_horizon,
            positions_only,
            no_filter,
            control,
            abort_after_batches,
        } => cmd_train(
            &scenes,
            config.as_deref(),
            &out,
            loss_csv.as_deref(),
            (split, split_seed),
            TrainOverrides {
                epochs,
                batch_size,
                lr,
                seed,
                teacher_forcing,
                obs_horizon,
                positions_only,
                no_filter,
                control,
            },
            abort_after_batches,
        ),
        Command::Eval {
            scenes,
            checkpoint,
            out,
            csv,
            split,
            split_seed,
        } => cmd_eval(&scenes, &checkpoint, &out, csv.as_deref(), (split, split_seed)),
        Command::Predict {
            scenes,
            checkpoint,
            scene,
            model,
            out,
        } => cmd_predict(&scenes, checkpoint.as_deref(), &scene, model, &out),
    }
}

fn main() -> ExitCode {
    let matches = match Cli::command().version(version_text()).try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
