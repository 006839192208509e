//! Experiment commands: dataset generation, training, inference, MSE and
//! model-order evaluation, and the two-sphere scenario.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_complex::Complex;
use rayon::prelude::*;
use serde::Serialize;

use delaydop::baselines::{
    edc_model_order, mse_sweep, order_error_stats, Estimator, OrderErrorCell, OrderErrorReport, PeakGnEstimator, SweepResult,
};
use delaydop::cnn::{checkpoint, history_csv, train, CnnEstimator, Detection, Model, SyntheticSource};
use delaydop::config::ExperimentConfig;
use delaydop::dataset::{self, write_atomic, Dataset};
use delaydop::rng::substream;
use delaydop::scenario::sphere_scenario;
use delaydop::signal::PathSet;
use delaydop::{Error, Result};
use rand::RngCore;

#[derive(Debug, Parser)]
#[command(name = "delaydop", version, about = "Delay/Doppler estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw training and validation scenes.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train the network on a generated dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory holding train.bin and val.bin; defaults to --out.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Overrides the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Estimate paths for every snapshot of a dataset.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Gauss-Newton steps applied to the network estimates.
        #[arg(long)]
        refine: Option<usize>,
        /// Detection threshold; defaults to the configured value.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// MSE versus SNR on the configured single-path scene.
    EvalMse {
        #[command(flatten)]
        common: Common,
        /// Adds the network (raw and refined) to the compared estimators.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Model-order error statistics of EDC and the network.
    EvalOrder {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Comma-separated detection thresholds.
        #[arg(long, value_delimiter = ',')]
        deltas: Option<Vec<f64>>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Delay/Doppler trajectories of the rotating two-sphere target.
    Scenario {
        #[command(flatten)]
        common: Common,
    },
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Validation(_) => 2,
        Error::Data(_) | Error::Io(_) | Error::OutOfRegion { .. } | Error::CellOverflow { .. } => 3,
        Error::RankDeficient { .. } | Error::Singular(_) | Error::Numerical(_) => 4,
    }
}

/// Runs one command line (including the program name) and returns the exit
/// status. Output files are written only once every result is computed.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

struct Context {
    cfg: ExperimentConfig,
    seed: u64,
    hash: String,
    out: PathBuf,
}

fn context(common: &Common) -> Result<Context> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    cfg.validate()?;
    let seed = common.seed.unwrap_or(cfg.scene.seed);
    Ok(Context { hash: cfg.hash(), seed, cfg, out: common.out.clone() })
}

impl Context {
    fn header(&self) -> String {
        format!("# config_hash={} seed={}\n", self.hash, self.seed)
    }

    fn tag(&self) -> String {
        format!("config_hash={} seed={}", self.hash, self.seed)
    }
}

/// Writes every `(name, bytes)` pair under `dir`.
fn emit(dir: &Path, files: Vec<(&str, Vec<u8>)>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, bytes) in files {
        write_atomic(&dir.join(name), &bytes)?;
    }
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate { common } => generate(&context(&common)?),
        Command::Train { common, data, epochs } => {
            let ctx = context(&common)?;
            let dir = data.unwrap_or_else(|| ctx.out.clone());
            run_train(&ctx, &dir, epochs)
        }
        Command::Infer { common, model, data, refine, threshold } => run_infer(&context(&common)?, &model, &data, refine, threshold),
        Command::EvalMse { common, model, trials } => eval_mse(&context(&common)?, model.as_deref(), trials),
        Command::EvalOrder { common, model, deltas, trials } => eval_order(&context(&common)?, model.as_deref(), deltas, trials),
        Command::Scenario { common } => scenario(&context(&common)?),
    }
}

fn generate(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let (n_train, n_val) = (cfg.training.train_size, cfg.training.val_size);
    let cells = cfg.cell_spec();
    let records = dataset::generate(&cfg.scene, &cfg.grid, Some(&cells), n_train + n_val, cfg.scene.seed)?;
    let created = dataset::creation_time();
    let train = dataset::to_bytes(&cfg.scene, &cfg.grid, &records[..n_train], cfg.scene.seed, &ctx.hash, created)?;
    let val = dataset::to_bytes(&cfg.scene, &cfg.grid, &records[n_train..], cfg.scene.seed, &ctx.hash, created)?;
    emit(&ctx.out, vec![("train.bin", train), ("val.bin", val)])
}

fn source(ctx: &Context, data: &Dataset, redraw: bool, stream: u64) -> Result<SyntheticSource<f32>> {
    if data.manifest.grid != ctx.cfg.grid {
        return Err(Error::Config("dataset grid differs from the configuration".into()));
    }
    let scenes = data.records.iter().map(|r| (r.truth.cast::<f32>(), r.sigma as f32)).collect();
    SyntheticSource::new(ctx.cfg.preprocessor()?, ctx.cfg.cell_spec(), scenes, ctx.cfg.training.seed ^ stream, redraw)
}

fn run_train(ctx: &Context, dir: &Path, epochs: Option<usize>) -> Result<()> {
    let train_set = dataset::read(&dir.join("train.bin"))?;
    let val_set = dataset::read(&dir.join("val.bin"))?;
    let mut tcfg = ctx.cfg.training.clone();
    if let Some(e) = epochs {
        tcfg.epochs = e;
    }
    let train_src = source(ctx, &train_set, true, 0)?;
    let val_src = source(ctx, &val_set, false, 1)?;
    let mut model = Model::<f32>::new(ctx.cfg.model_config())?;
    let history = train(&mut model, &tcfg, &train_src, Some(&val_src), |s| {
        eprintln!("epoch {:>4}  train {:.6}  val {:.6}", s.epoch, s.train_loss, s.val_loss);
    })?;
    let csv = format!("{}{}", ctx.header(), history_csv(&history));
    emit(&ctx.out, vec![("model.ckpt", checkpoint::to_bytes(&model, &ctx.tag())?), ("loss_history.csv", csv.into_bytes())])
}

fn load_model(ctx: &Context, path: &Path) -> Result<Model<f32>> {
    let (model, _) = checkpoint::load::<f32>(path)?;
    let mut want = ctx.cfg.model_config();
    want.seed = model.config.seed;
    if model.config != want {
        return Err(Error::Config("checkpoint architecture differs from the configuration".into()));
    }
    Ok(model)
}

#[derive(Serialize)]
struct PathOut {
    delay: f64,
    doppler: f64,
    delay_s: f64,
    doppler_hz: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gain: Option<[f64; 2]>,
}

#[derive(Serialize)]
struct SnapshotEstimates {
    index: usize,
    raw: Vec<PathOut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    refined: Option<Vec<PathOut>>,
    truth: Vec<PathOut>,
}

#[derive(Serialize)]
struct EstimatesFile {
    schema_version: u32,
    config_hash: String,
    seed: u64,
    threshold: f64,
    refine_steps: Option<usize>,
    snapshots: Vec<SnapshotEstimates>,
}

fn paths_out(ctx: &Context, p: &PathSet<f64>) -> Vec<PathOut> {
    let g = &ctx.cfg.grid;
    p.iter()
        .map(|(gain, t, a)| PathOut {
            delay: t,
            doppler: a,
            delay_s: g.delay_to_seconds(t),
            doppler_hz: g.doppler_to_hz(a),
            score: None,
            gain: Some([gain.re, gain.im]),
        })
        .collect()
}

fn run_infer(ctx: &Context, model_path: &Path, data_path: &Path, refine: Option<usize>, threshold: Option<f64>) -> Result<()> {
    let model = load_model(ctx, model_path)?;
    let data = dataset::read(data_path)?;
    let delta = threshold.unwrap_or(ctx.cfg.evaluation.threshold);
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("threshold {delta} outside (0, 1)")));
    }
    let est = CnnEstimator {
        name: "cnn".into(),
        model,
        pre: ctx.cfg.preprocessor()?,
        detection: Detection::Threshold(delta),
        refine: refine.map(|n| delaydop::refine::GnConfig { max_iters: n, ..ctx.cfg.refinement }),
    };
    let grid = data.manifest.grid;
    let snapshots = data
        .records
        .par_iter()
        .enumerate()
        .map(|(index, rec)| -> Result<SnapshotEstimates> {
            let snap = rec.snapshot(&grid)?;
            let found = est.detect(&snap)?;
            let raw = (0..found.len())
                .map(|i| {
                    let (t, a) = (f64::from(found.delays[i]), f64::from(found.dopplers[i]));
                    PathOut { delay: t, doppler: a, delay_s: grid.delay_to_seconds(t), doppler_hz: grid.doppler_to_hz(a), score: Some(f64::from(found.scores[i])), gain: None }
                })
                .collect();
            let refined = match refine {
                Some(_) => Some(paths_out(ctx, &est.estimate(&snap)?)),
                None => None,
            };
            Ok(SnapshotEstimates { index, raw, refined, truth: paths_out(ctx, &rec.truth) })
        })
        .collect::<Result<Vec<_>>>()?;
    let file = EstimatesFile { schema_version: 1, config_hash: ctx.hash.clone(), seed: ctx.seed, threshold: delta, refine_steps: refine, snapshots };
    let json = serde_json::to_vec_pretty(&file).map_err(|e| Error::Numerical(e.to_string()))?;
    emit(&ctx.out, vec![("estimates.json", json)])
}

fn eval_mse(ctx: &Context, model: Option<&Path>, trials: Option<usize>) -> Result<()> {
    let cfg = &ctx.cfg;
    let scene = PathSet::new(vec![Complex::new(1.0, 0.0)], vec![cfg.evaluation.sweep_delay], vec![cfg.evaluation.sweep_doppler])?;
    let mut sweep = cfg.sweep_config();
    if let Some(t) = trials {
        sweep.trials = t;
    }
    let ml = PeakGnEstimator { paths: 1, gn: cfg.refinement };
    let mut cnn = Vec::new();
    if let Some(path) = model {
        let m = load_model(ctx, path)?;
        for (name, refine) in [("cnn", None), ("cnn_gn", Some(cfg.refinement))] {
            cnn.push(CnnEstimator { name: name.into(), model: m.clone(), pre: cfg.preprocessor()?, detection: Detection::Strongest(1), refine });
        }
    }
    let mut estimators: Vec<&dyn Estimator<f64>> = vec![&ml];
    estimators.extend(cnn.iter().map(|e| e as &dyn Estimator<f64>));
    let rows = mse_sweep(&estimators, &scene, &cfg.grid, &sweep)?;
    let result = SweepResult { schema_version: delaydop::baselines::SCHEMA_VERSION, config_hash: ctx.hash.clone(), seed: ctx.seed, rows };
    emit(&ctx.out, vec![("mse_sweep.csv", result.to_csv().into_bytes()), ("mse_sweep.json", result.to_json().into_bytes())])
}

fn eval_order(ctx: &Context, model: Option<&Path>, deltas: Option<Vec<f64>>, trials: Option<usize>) -> Result<()> {
    let cfg = &ctx.cfg;
    let deltas = deltas.unwrap_or_else(|| cfg.evaluation.deltas.clone());
    if deltas.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
        return Err(Error::Config("thresholds must lie in (0, 1)".into()));
    }
    let trials = trials.unwrap_or(cfg.evaluation.order_trials);
    if trials == 0 {
        return Err(Error::Config("at least one trial is required".into()));
    }
    let net = match model {
        Some(p) => {
            let lowest = deltas.iter().copied().fold(1.0, f64::min);
            Some(CnnEstimator { name: "cnn".into(), model: load_model(ctx, p)?, pre: cfg.preprocessor()?, detection: Detection::Threshold(lowest), refine: None })
        }
        None => None,
    };
    let cells = cfg.cell_spec();
    let mut report = OrderErrorReport { schema_version: delaydop::baselines::SCHEMA_VERSION, config_hash: ctx.hash.clone(), seed: ctx.seed, cells: Vec::new() };
    for (si, &snr) in cfg.evaluation.order_snr_db.iter().enumerate() {
        let scene = delaydop::signal::SceneConfig { snr_range_db: [snr, snr], ..cfg.scene.clone() };
        let seed = substream(cfg.evaluation.seed, &[0x0DE7, si as u64]).next_u64();
        // Per trial: (true order, EDC order, network score list).
        let runs = (0..trials as u64)
            .into_par_iter()
            .map(|t| -> Result<(usize, usize, Vec<f32>)> {
                let rec = dataset::draw_record(&scene, &cfg.grid, Some(&cells), seed, t)?;
                let snap = rec.snapshot(&cfg.grid)?;
                let edc = edc_model_order(&snap, cfg.evaluation.p_max, &cfg.refinement)?.order;
                let scores = match &net {
                    Some(n) => n.detect(&snap)?.scores,
                    None => Vec::new(),
                };
                Ok((rec.truth.len(), edc, scores))
            })
            .collect::<Result<Vec<_>>>()?;
        let pairs: Vec<(usize, usize)> = runs.iter().map(|r| (r.1, r.0)).collect();
        report.cells.push(OrderErrorCell { method: "edc".into(), delta: None, snr_db: snr, stats: order_error_stats(&pairs)? });
        if net.is_some() {
            for &d in &deltas {
                let pairs: Vec<(usize, usize)> = runs.iter().map(|r| (r.2.iter().filter(|&&s| f64::from(s) >= d).count(), r.0)).collect();
                report.cells.push(OrderErrorCell { method: "cnn".into(), delta: Some(d), snr_db: snr, stats: order_error_stats(&pairs)? });
            }
        }
    }
    emit(&ctx.out, vec![("order_errors.csv", report.to_csv().into_bytes()), ("order_errors.json", report.to_json().into_bytes())])
}

fn scenario(ctx: &Context) -> Result<()> {
    let s = &ctx.cfg.scenario;
    let n = (s.duration_s / s.sample_interval_s).floor() as usize + 1;
    let times: Vec<f64> = (0..n).map(|i| i as f64 * s.sample_interval_s).collect();
    let tracks = sphere_scenario(&s.geometry, &times)?;
    let mut csv = ctx.header();
    csv.push_str(&format!("# los_tau_ns={}\n", s.geometry.los_delay() * 1e9));
    csv.push_str("time_s,sphere,tau_ns,doppler_hz\n");
    for (i, &t) in times.iter().enumerate() {
        for (k, tr) in tracks.iter().enumerate() {
            csv.push_str(&format!("{t},{k},{},{}\n", tr.delays_s[i] * 1e9, tr.dopplers_hz[i]));
        }
    }
    emit(&ctx.out, vec![("scenario.csv", csv.into_bytes())])
}
