//! Command-line front end over the library pipeline: cohort synthesis,
//! preprocessing, training, evaluation, compute profiling, and feature
//! export, all driven by one TOML configuration format whose resolved
//! form is echoed into every artifact.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use safenet::config::{load_run_config, save_run_config, RunConfig};
use safenet::data::{
    export_features, generate_synthetic_cohort, load_manifest, load_recording,
    save_manifest, save_recording, DatasetManifest, ManifestEntry,
};
use safenet::diffcore::Tensor;
use safenet::dsp::{
    load_stats, load_windows, save_stats, save_windows, window_params, NormStats,
    WindowedDataset,
};
use safenet::error::{Error, Result};
use safenet::model::{load_checkpoint, save_checkpoint, SafeNet};
use safenet::pipeline::{run_training, window_cohort};
use safenet::profiler::CostReport;
use safenet::train::{apply_stats, evaluate};

#[derive(Parser)]
#[command(
    name = "safenet",
    version,
    about = "Spiking sparse-attention sEMG toolkit: synthesize cohorts, preprocess, \
             train, evaluate, profile compute cost, and export decomposed features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-subject gait cohort with a manifest.
    Synth(SynthArgs),
    /// Filter, resample, and window a raw cohort into one container file.
    Preprocess(PreprocessArgs),
    /// Train a model; writes checkpoint, stats, log, and metrics.
    Train(TrainArgs),
    /// Evaluate a trained model on every window of a dataset.
    Eval(EvalArgs),
    /// Report parameters, FLOPs, spike-aware MACs, latency, and power.
    Profile(ProfileArgs),
    /// Export per-window kinematic/biological features as a table.
    Decompose(DecomposeArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// TOML run configuration; the synth table drives generation.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the synthesis and training seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving the recordings and manifest.
    #[arg(long)]
    out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct PreprocessArgs {
    /// TOML run configuration (echoed next to the container).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cohort directory or manifest file.
    #[arg(long)]
    data: PathBuf,
    /// Directory receiving windows.sfw and the configuration echo.
    #[arg(long)]
    out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML run configuration; absent keys use built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the synthesis and training seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Cohort directory, manifest file, or windows container (.sfw).
    /// Omitted: the cohort is synthesized in memory from the config.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory receiving model.sfn, norm.stats, train.log,
    /// metrics.txt, and config.toml.
    #[arg(long)]
    out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Train the encoder-only ablation without the decomposition stage.
    #[arg(long)]
    no_safd: bool,
    /// Override the number of decomposition iterations.
    #[arg(long)]
    safd_iters: Option<usize>,
    /// Override the epoch budget.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override the batch size.
    #[arg(long)]
    batch: Option<usize>,
    /// Override the initial learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Worker threads for tensor kernels (default: one per core).
    #[arg(long)]
    device_threads: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Model directory produced by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Cohort directory, manifest file, or windows container (.sfw).
    #[arg(long)]
    data: PathBuf,
    /// Optional directory receiving eval.txt and the configuration echo.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Override the evaluation batch size.
    #[arg(long)]
    batch: Option<usize>,
    /// Evaluate the encoder-only path even if the model has the
    /// decomposition stage.
    #[arg(long)]
    no_safd: bool,
    /// Worker threads for tensor kernels (default: one per core).
    #[arg(long)]
    device_threads: Option<usize>,
}

#[derive(Args)]
struct ProfileArgs {
    /// TOML run configuration for a fresh, seed-initialized model.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Profile a trained model directory instead of a fresh one.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Override the initialization seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Windows per forward pass during latency timing.
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// Timed repetitions after warm-up (minimum 10).
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    /// Optional directory receiving profile.txt.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Worker threads for tensor kernels (default: one per core).
    #[arg(long)]
    device_threads: Option<usize>,
}

#[derive(Args)]
struct DecomposeArgs {
    /// Model directory produced by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Cohort directory, manifest file, or windows container (.sfw).
    #[arg(long)]
    data: PathBuf,
    /// Directory receiving features.csv and the configuration echo.
    #[arg(long)]
    out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Override the export batch size.
    #[arg(long)]
    batch: Option<usize>,
    /// Worker threads for tensor kernels (default: one per core).
    #[arg(long)]
    device_threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Profile(a) => cmd_profile(a),
        Command::Decompose(a) => cmd_decompose(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Command-line overrides layered over the configuration file.
#[derive(Default)]
struct Overrides {
    seed: Option<u64>,
    epochs: Option<usize>,
    batch: Option<usize>,
    lr: Option<f64>,
    safd_iters: Option<usize>,
    no_safd: bool,
}

fn resolve_config(path: Option<&Path>, ov: &Overrides) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => load_run_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = ov.seed {
        cfg.train.seed = seed;
        cfg.synth.seed = seed;
    }
    if let Some(epochs) = ov.epochs {
        cfg.train.epochs = epochs;
    }
    if let Some(batch) = ov.batch {
        cfg.train.batch_size = batch;
    }
    if let Some(lr) = ov.lr {
        cfg.train.lr_init = lr;
    }
    if let Some(iters) = ov.safd_iters {
        cfg.model.safd.iterations = iters;
    }
    if ov.no_safd {
        cfg.use_safd = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Creates `out` if needed; refuses a non-empty directory unless
/// `--force` was given, so reruns cannot silently clobber results.
fn ensure_out_dir(out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        if !out.is_dir() {
            return Err(Error::InvalidArgument(format!(
                "output path {} exists and is not a directory",
                out.display()
            )));
        }
        if !force && fs::read_dir(out)?.next().is_some() {
            return Err(Error::InvalidArgument(format!(
                "output directory {} is not empty; pass --force to overwrite",
                out.display()
            )));
        }
    } else {
        fs::create_dir_all(out)?;
    }
    Ok(())
}

/// Sizes the global tensor-kernel worker pool. Must run before the
/// first kernel dispatch; only the first call in a process can win.
fn init_thread_pool(threads: Option<usize>) -> Result<()> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(Error::Range {
            what: "--device-threads".into(),
            value: 0.0,
            limit: "≥ 1".into(),
        });
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

fn windows_from_manifest(path: &Path) -> Result<WindowedDataset> {
    let m = load_manifest(path)?;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut recs = Vec::with_capacity(m.entries.len());
    for entry in &m.entries {
        recs.push(load_recording(dir, &m, entry)?);
    }
    window_cohort(&recs)
}

fn is_windows_container(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()) == Some("sfw")
}

/// Resolves `--data`: a directory means `<dir>/manifest.toml`, a `.sfw`
/// file is loaded directly, and any other file is read as a manifest.
fn load_cohort_windows(data: &Path) -> Result<WindowedDataset> {
    if !data.exists() {
        return Err(Error::InvalidArgument(format!(
            "data path {} does not exist",
            data.display()
        )));
    }
    if data.is_dir() {
        let manifest = data.join("manifest.toml");
        if !manifest.is_file() {
            return Err(Error::InvalidArgument(format!(
                "no manifest found at {}",
                manifest.display()
            )));
        }
        windows_from_manifest(&manifest)
    } else if is_windows_container(data) {
        load_windows(data)
    } else {
        windows_from_manifest(data)
    }
}

struct TrainedModel {
    cfg: RunConfig,
    net: SafeNet,
    stats: NormStats,
}

fn load_model_dir(dir: &Path) -> Result<TrainedModel> {
    for name in ["config.toml", "model.sfn", "norm.stats"] {
        let p = dir.join(name);
        if !p.is_file() {
            return Err(Error::InvalidArgument(format!(
                "model directory is missing {}",
                p.display()
            )));
        }
    }
    let cfg = load_run_config(&dir.join("config.toml"))?;
    let net = load_checkpoint(&dir.join("model.sfn"), &cfg.model)?;
    let stats = load_stats(&dir.join("norm.stats"))?;
    Ok(TrainedModel { cfg, net, stats })
}

fn check_data_shape(cfg: &RunConfig, ds: &WindowedDataset) -> Result<()> {
    let (c, n) = (ds.windows.dim(2), ds.targets.dim(1));
    if c != cfg.model.embed.c_in || n != cfg.model.n_joints {
        return Err(Error::Config(format!(
            "dataset has {c} channels and {n} joints but the model expects {} and {}",
            cfg.model.embed.c_in, cfg.model.n_joints
        )));
    }
    Ok(())
}

fn joint_names(n: usize) -> Vec<String> {
    if n == 3 {
        ["hip", "knee", "ankle"].map(String::from).to_vec()
    } else {
        (0..n).map(|i| format!("joint{i}")).collect()
    }
}

/// Duplicates training progress to the log buffer and the terminal.
struct Tee<'a>(&'a mut dyn Write, &'a mut dyn Write);

impl Write for Tee<'_> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.write_all(buf)?;
        self.1.write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.0.flush()?;
        self.1.flush()
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let ov = Overrides {
        seed: a.seed,
        ..Overrides::default()
    };
    let cfg = resolve_config(a.config.as_deref(), &ov)?;
    ensure_out_dir(&a.out, a.force)?;
    let recs = generate_synthetic_cohort(&cfg.synth)?;
    let manifest = DatasetManifest {
        channel_names: (0..cfg.synth.n_channels).map(|i| format!("emg{i}")).collect(),
        joint_names: joint_names(cfg.synth.n_joints),
        entries: recs
            .iter()
            .map(|r| ManifestEntry {
                path: format!("subject{:02}", r.subject_id),
                subject_id: r.subject_id,
                fs_emg: r.fs_emg,
                fs_ang: r.fs_ang,
                condition: r.condition.clone(),
            })
            .collect(),
    };
    save_manifest(&a.out.join("manifest.toml"), &manifest)?;
    for (entry, rec) in manifest.entries.iter().zip(&recs) {
        save_recording(&a.out, &manifest, entry, rec)?;
    }
    save_run_config(&a.out.join("config.toml"), &cfg)?;
    println!(
        "wrote {} recordings and manifest.toml to {}",
        recs.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_preprocess(a: PreprocessArgs) -> Result<()> {
    let cfg = resolve_config(a.config.as_deref(), &Overrides::default())?;
    if is_windows_container(&a.data) {
        return Err(Error::InvalidArgument(format!(
            "{} is already a windows container; preprocess expects a cohort \
             directory or manifest",
            a.data.display()
        )));
    }
    let ds = load_cohort_windows(&a.data)?;
    ensure_out_dir(&a.out, a.force)?;
    let container = a.out.join("windows.sfw");
    save_windows(&container, &ds)?;
    save_run_config(&a.out.join("config.toml"), &cfg)?;
    println!(
        "wrote {} windows of {}x{} samples to {}",
        ds.len(),
        ds.window_len,
        ds.windows.dim(2),
        container.display()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    init_thread_pool(a.device_threads)?;
    let ov = Overrides {
        seed: a.seed,
        epochs: a.epochs,
        batch: a.batch,
        lr: a.lr,
        safd_iters: a.safd_iters,
        no_safd: a.no_safd,
    };
    let cfg = resolve_config(a.config.as_deref(), &ov)?;
    ensure_out_dir(&a.out, a.force)?;
    let ds = match &a.data {
        Some(path) => load_cohort_windows(path)?,
        None => window_cohort(&generate_synthetic_cohort(&cfg.synth)?)?,
    };
    check_data_shape(&cfg, &ds)?;

    let echo = cfg.echo_commented()?;
    let mut log_buf: Vec<u8> = echo.clone().into_bytes();
    let outcome = {
        let stdout = io::stdout();
        let mut stdout = stdout.lock();
        let mut tee = Tee(&mut log_buf, &mut stdout);
        run_training(&ds, &cfg, &mut tee)?
    };
    writeln!(
        log_buf,
        "best epoch {}; stopped early: {}",
        outcome.fit.best_epoch, outcome.fit.stopped_early
    )?;

    save_run_config(&a.out.join("config.toml"), &cfg)?;
    save_checkpoint(&a.out.join("model.sfn"), &outcome.net)?;
    save_stats(&a.out.join("norm.stats"), &outcome.stats)?;
    fs::write(a.out.join("train.log"), &log_buf)?;
    fs::write(
        a.out.join("metrics.txt"),
        format!("{echo}{}\n", outcome.test_report),
    )?;

    println!("held-out metrics:\n{}", outcome.test_report);
    println!("artifacts written to {}", a.out.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    init_thread_pool(a.device_threads)?;
    let model = load_model_dir(&a.model)?;
    let mut cfg = model.cfg;
    if a.no_safd {
        cfg.use_safd = false;
    }
    if let Some(batch) = a.batch {
        cfg.train.batch_size = batch;
    }
    cfg.validate()?;

    let ds = load_cohort_windows(&a.data)?;
    check_data_shape(&cfg, &ds)?;
    let normalized = apply_stats(&ds, &model.stats)?;
    let report = evaluate(
        &model.net,
        &normalized,
        &model.stats,
        cfg.train.batch_size,
        cfg.use_safd,
    )?;

    let text = format!("{}{report}\n", cfg.echo_commented()?);
    if let Some(out) = &a.out {
        ensure_out_dir(out, a.force)?;
        fs::write(out.join("eval.txt"), &text)?;
        save_run_config(&out.join("config.toml"), &cfg)?;
    }
    print!("{text}");
    Ok(())
}

fn cmd_profile(a: ProfileArgs) -> Result<()> {
    init_thread_pool(a.device_threads)?;
    let (cfg, net) = match &a.model {
        Some(dir) => {
            let m = load_model_dir(dir)?;
            (m.cfg, m.net)
        }
        None => {
            let ov = Overrides {
                seed: a.seed,
                ..Overrides::default()
            };
            let cfg = resolve_config(a.config.as_deref(), &ov)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
            let net = SafeNet::init(&cfg.model, &mut rng)?;
            (cfg, net)
        }
    };
    if a.batch == 0 {
        return Err(Error::Range {
            what: "--batch".into(),
            value: 0.0,
            limit: "≥ 1".into(),
        });
    }

    let (t, _) = window_params(cfg.synth.fs);
    let c = cfg.model.embed.c_in;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let values = (0..a.batch * t * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let batch = Tensor::new(values, &[a.batch, t, c])?;
    let report = CostReport::collect(&net, &batch, a.repeats)?;

    let text = format!(
        "{}{report}\n{}\n{}\n",
        cfg.echo_commented()?,
        CostReport::delimited_header(),
        report.delimited_row()
    );
    if let Some(out) = &a.out {
        ensure_out_dir(out, a.force)?;
        fs::write(out.join("profile.txt"), &text)?;
        save_run_config(&out.join("config.toml"), &cfg)?;
    }
    print!("{text}");
    Ok(())
}

fn cmd_decompose(a: DecomposeArgs) -> Result<()> {
    init_thread_pool(a.device_threads)?;
    let model = load_model_dir(&a.model)?;
    if !model.cfg.use_safd {
        return Err(Error::Unsupported(
            "this model was trained without the decomposition stage; retrain \
             without --no-safd to export features"
                .into(),
        ));
    }
    let ds = load_cohort_windows(&a.data)?;
    check_data_shape(&model.cfg, &ds)?;
    let normalized = apply_stats(&ds, &model.stats)?;
    ensure_out_dir(&a.out, a.force)?;
    let table = a.out.join("features.csv");
    let batch = a.batch.unwrap_or(model.cfg.train.batch_size);
    let rows = export_features(&model.net, &normalized, &table, batch)?;
    save_run_config(&a.out.join("config.toml"), &model.cfg)?;
    println!("wrote {rows} feature rows to {}", table.display());
    Ok(())
}
