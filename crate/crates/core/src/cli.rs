//! Command-line front end and the on-disk formats it reads and writes.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};

use crate::cp_solver::{solve_dequant_window, CpConfig};
use crate::error::{Error, Result};
use crate::network::{init_from_cp, init_random, BlockParams, NetworkParams, Variant};
use crate::par;
use crate::pipeline::{
    delta_from_bits, load_wav, quantize_uniform, read_manifest, split_indices, synth_signal,
    write_wav, Dataset, Metrics, Signal, SplitIndices, SynthSpec, WindowSpec,
};
use crate::training::{evaluate, train, TrainConfig, TrainHistory};
use crate::transforms::{build_dct_matrix, operator_norm_estimate, DenseMatrix, OrthonormalTransform};

const DEFAULT_RATIOS: [f64; 3] = [0.7, 0.15, 0.15];
const RANDOM_INIT_SCALE: f64 = 0.01;

#[derive(Parser, Debug)]
#[command(name = "pdrn", version, about = "Dequantize signals with primal-dual solvers and unrolled networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Quantize a WAV file and write the quantized samples as JSON.
    Quantize {
        #[command(flatten)]
        step: StepArgs,
        input: PathBuf,
        output: PathBuf,
    },
    /// Run the primal-dual solver on every window and report per-iteration metrics.
    SolveCp {
        #[command(flatten)]
        step: StepArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        window: WindowArgs,
        #[arg(long, default_value_t = 50)]
        iters: usize,
        #[arg(long, default_value_t = 1.0)]
        theta: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network for each lambda and keep the best on the development set.
    Train {
        #[command(flatten)]
        step: StepArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        window: WindowArgs,
        #[arg(long, value_enum, default_value_t = VariantArg::Pdrn)]
        variant: VariantArg,
        #[arg(short = 'L', default_value_t = 10)]
        depth: usize,
        #[arg(long, default_value_t = 1000)]
        epochs: usize,
        #[arg(long, default_value_t = 128)]
        batch: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        /// Repeat to grid-search the regularization weight.
        #[arg(long = "lambda")]
        lambdas: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = InitArg::Cp)]
        init: InitArg,
        /// Model file for the selected lambda.
        #[arg(long)]
        out: PathBuf,
        /// Training history of the selected lambda as JSON.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Score a model on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        shift: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the quantized baseline, models and solver iterations.
    Compare {
        #[arg(long = "model")]
        models: Vec<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        step: OptionalStepArgs,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        shift: Option<usize>,
        #[arg(long = "iters")]
        iters: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a training history to CSV.
    ExportCurves {
        history: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic WAV files with a manifest and split sidecar.
    Synth {
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 4096)]
        length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct StepArgs {
    /// Bit depth over [-1, 1]; sets delta = 2/(2^bits - 1).
    #[arg(long)]
    bits: Option<u32>,
    #[arg(long)]
    delta: Option<f64>,
}

impl StepArgs {
    fn delta(&self) -> Result<f64> {
        match (self.bits, self.delta) {
            (Some(bits), _) => delta_from_bits(bits),
            (None, Some(d)) if d > 0.0 && d.is_finite() => Ok(d),
            (None, Some(d)) => Err(Error::InvalidParameter(format!("delta must be positive, got {d}"))),
            (None, None) => unreachable!("clap enforces one of --bits/--delta"),
        }
    }
}

#[derive(Args, Debug)]
#[group(required = false, multiple = false)]
struct OptionalStepArgs {
    #[arg(long)]
    bits: Option<u32>,
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Args, Debug)]
struct WindowArgs {
    #[arg(long, default_value_t = 1024)]
    window: usize,
    /// Defaults to the window size.
    #[arg(long)]
    shift: Option<usize>,
}

impl WindowArgs {
    fn spec(&self) -> Result<WindowSpec> {
        WindowSpec::new(self.window, self.shift.unwrap_or(self.window))
    }
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Text file listing WAV paths, one per line.
    #[arg(long)]
    manifest: PathBuf,
    /// Split sidecar JSON; when absent, all signals are used (or, for
    /// training, a seeded 70/15/15 split is drawn and written next to the model).
    #[arg(long)]
    split: Option<PathBuf>,
    /// Defaults to `test` when a split is given.
    #[arg(long, value_enum)]
    subset: Option<Subset>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Subset {
    Train,
    Dev,
    Test,
    All,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    Pdn,
    Pdrn,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Pdn => Variant::Pdn,
            VariantArg::Pdrn => Variant::Pdrn,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InitArg {
    Cp,
    Random,
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 1 on usage errors, 2 on data errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Quantize { step, input, output } => {
            require_file(&input)?;
            require_parent(&output)?;
            let delta = step.delta()?;
            let signal = load_wav(&input)?;
            let q = quantize_uniform(&signal, delta)?;
            let max_error = signal
                .samples
                .iter()
                .zip(&q.samples)
                .fold(0.0_f64, |m, (s, q)| m.max((s - q).abs()));
            let file = QuantizedFile {
                delta,
                sample_rate: signal.sample_rate,
                max_error,
                samples: q.samples,
            };
            write_json(&output, &file)?;
            println!("delta {delta:e}; max |s - q| = {max_error:e} (bound {:e})", delta / 2.0);
            Ok(())
        }
        Command::SolveCp {
            step,
            data,
            window,
            iters,
            theta,
            out,
        } => {
            data.validate()?;
            require_parent(&out)?;
            if iters == 0 {
                return Err(Error::InvalidParameter("--iters must be at least 1".into()));
            }
            let delta = step.delta()?;
            let spec = window.spec()?;
            let dataset = load_dataset(&data, data.subset_or_default(), delta, spec)?;
            let (k, config) = cp_setup(spec.size, theta, iters)?;
            let counts: Vec<usize> = (1..=iters).collect();
            let metrics = cp_metrics(&dataset, &k, &config, &counts)?;
            let report = SolveReport {
                delta,
                window: spec.size,
                shift: spec.shift,
                sigma: config.sigma,
                tau: config.tau,
                theta: config.theta,
                history: counts
                    .iter()
                    .zip(metrics)
                    .map(|(&iter, m)| IterMetrics {
                        iter,
                        mse: m.mse,
                        snr_db: m.snr_db,
                    })
                    .collect(),
            };
            write_json(&out, &report)
        }
        Command::Train {
            step,
            data,
            window,
            variant,
            depth,
            epochs,
            batch,
            lr,
            lambdas,
            seed,
            init,
            out,
            history,
        } => {
            data.validate()?;
            require_parent(&out)?;
            if let Some(h) = &history {
                require_parent(h)?;
            }
            let delta = step.delta()?;
            let spec = window.spec()?;
            let lambdas = if lambdas.is_empty() { vec![0.0] } else { lambdas };
            let paths = read_manifest(&data.manifest)?;
            let split = match &data.split {
                Some(p) => read_split(p, paths.len())?,
                None => {
                    let split = split_indices(paths.len(), DEFAULT_RATIOS, seed)?;
                    write_json(&sidecar_path(&out), &split)?;
                    split
                }
            };
            let signals = load_signals(&paths)?;
            let train_set = dataset_for(&signals, &split.train, delta, spec)?;
            let dev_set = dataset_for(&signals, &split.dev, delta, spec)?;
            let net0 = match init {
                InitArg::Cp => {
                    let k = build_dct_matrix(spec.size)?;
                    let (sigma, tau) = cp_steps(&k)?;
                    init_from_cp(&k, sigma, tau, depth, delta, variant.into())?
                }
                InitArg::Random => init_random(seed, depth, spec.size, delta, RANDOM_INIT_SCALE, variant.into())?,
            };
            let mut best: Option<(f64, f64, NetworkParams, TrainHistory)> = None;
            let mut grid = Vec::new();
            for &lambda in &lambdas {
                let config = TrainConfig {
                    learning_rate: lr,
                    epochs,
                    batch_size: batch,
                    lambda,
                    seed,
                    ..TrainConfig::default()
                };
                let outcome = train(&train_set.pairs, &dev_set.pairs, net0.clone(), &config)?;
                let record = outcome
                    .history
                    .best()
                    .copied()
                    .ok_or(Error::InvalidParameter("--epochs must be at least 1".into()))?;
                info!("lambda {lambda:e}: best dev MSE {:e} at epoch {}", record.dev_mse, record.epoch);
                grid.push(GridEntry {
                    lambda,
                    best_epoch: record.epoch,
                    best_dev_mse: record.dev_mse,
                });
                if best.as_ref().is_none_or(|b| record.dev_mse < b.0) {
                    best = Some((record.dev_mse, lambda, outcome.best_params, outcome.history));
                }
            }
            let (_, lambda, params, hist) = best.expect("at least one lambda");
            save_model(&params, &out)?;
            if let Some(h) = &history {
                write_json(h, &hist)?;
            }
            let summary = TrainSummary {
                selected_lambda: lambda,
                grid,
            };
            println!("{}", serde_json::to_string_pretty(&summary).expect("serializable"));
            Ok(())
        }
        Command::Eval {
            model,
            data,
            shift,
            out,
        } => {
            require_file(&model)?;
            data.validate()?;
            if let Some(o) = &out {
                require_parent(o)?;
            }
            let params = load_model(&model)?;
            let spec = WindowSpec::new(params.dim(), shift.unwrap_or(params.dim()))?;
            let dataset = load_dataset(&data, data.subset_or_default(), params.delta(), spec)?;
            let metrics = evaluate(&params, &dataset)?;
            emit_json(out.as_deref(), &metrics)
        }
        Command::Compare {
            models,
            data,
            step,
            window,
            shift,
            iters,
            out,
        } => {
            for m in &models {
                require_file(m)?;
            }
            data.validate()?;
            if let Some(o) = &out {
                require_parent(o)?;
            }
            let loaded = models.iter().map(|m| load_model(m)).collect::<Result<Vec<_>>>()?;
            let size = match (window, loaded.first()) {
                (Some(w), _) => w,
                (None, Some(m)) => m.dim(),
                (None, None) => {
                    return Err(Error::InvalidParameter("compare needs --window when no model is given".into()))
                }
            };
            let delta = match (step.bits, step.delta, loaded.first()) {
                (Some(bits), _, _) => delta_from_bits(bits)?,
                (None, Some(d), _) => d,
                (None, None, Some(m)) => m.delta(),
                (None, None, None) => {
                    return Err(Error::InvalidParameter("compare needs --bits or --delta when no model is given".into()))
                }
            };
            for (path, m) in models.iter().zip(&loaded) {
                if m.dim() != size {
                    return Err(Error::InvalidParameter(format!(
                        "{}: model window size {} does not match {size}",
                        path.display(),
                        m.dim()
                    )));
                }
            }
            let spec = WindowSpec::new(size, shift.unwrap_or(size))?;
            let dataset = load_dataset(&data, data.subset_or_default(), delta, spec)?;
            let report = compare(&dataset, &models, &loaded, &iters)?;
            print!("{}", report.to_text());
            if let Some(o) = &out {
                write_json(o, &report)?;
            }
            Ok(())
        }
        Command::ExportCurves { history, out } => {
            require_file(&history)?;
            require_parent(&out)?;
            let text = std::fs::read_to_string(&history).map_err(|e| Error::io(&history, e))?;
            let hist: TrainHistory = serde_json::from_str(&text).map_err(|e| Error::Json {
                path: history.clone(),
                source: e,
            })?;
            export_curves(&hist, &out)
        }
        Command::Synth { count, length, seed, out } => {
            if count == 0 || length == 0 {
                return Err(Error::InvalidParameter("--count and --length must be at least 1".into()));
            }
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let spec = SynthSpec::default();
            let width = count.to_string().len().max(3);
            let mut manifest = String::new();
            for i in 0..count {
                let name = format!("synth_{i:0width$}.wav");
                let signal = synth_signal(seed.wrapping_add(i as u64), length, &spec);
                write_atomic_with(&out.join(&name), |p| write_wav(p, &signal))?;
                manifest.push_str(&name);
                manifest.push('\n');
            }
            write_atomic(&out.join("manifest.txt"), manifest.as_bytes())?;
            write_json(&out.join("split.json"), &split_indices(count, DEFAULT_RATIOS, seed)?)?;
            println!("wrote {count} signals to {}", out.display());
            Ok(())
        }
    }
}

impl DataArgs {
    fn validate(&self) -> Result<()> {
        require_file(&self.manifest)?;
        if let Some(s) = &self.split {
            require_file(s)?;
        }
        if self.split.is_none() && matches!(self.subset, Some(s) if s != Subset::All) {
            return Err(Error::InvalidParameter("--subset needs --split".into()));
        }
        Ok(())
    }

    fn subset_or_default(&self) -> Subset {
        match (self.subset, &self.split) {
            (Some(s), _) => s,
            (None, Some(_)) => Subset::Test,
            (None, None) => Subset::All,
        }
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ))
    }
}

fn require_parent(path: &Path) -> Result<()> {
    let parent = parent_dir(path);
    if parent.is_dir() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
        ))
    }
}

fn parent_dir(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

fn sidecar_path(model: &Path) -> PathBuf {
    let mut name = model.file_stem().unwrap_or_default().to_os_string();
    name.push(".split.json");
    model.with_file_name(name)
}

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic_with(path, |tmp| {
        std::fs::write(tmp, bytes).map_err(|e| Error::io(tmp, e))
    })
}

fn write_atomic_with(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let tmp = tempfile::NamedTempFile::new_in(parent_dir(path)).map_err(|e| Error::io(path, e))?;
    write(tmp.path())?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            let text = serde_json::to_string_pretty(value).expect("serializable");
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}").map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_owned(),
        source: e,
    })
}

fn read_split(path: &Path, count: usize) -> Result<SplitIndices> {
    let split: SplitIndices = read_json(path)?;
    let mut seen = vec![false; count];
    for &i in split.train.iter().chain(&split.dev).chain(&split.test) {
        if i >= count || seen[i] {
            return Err(Error::InvalidParameter(format!(
                "{}: index {i} is out of range or repeated for {count} signals",
                path.display()
            )));
        }
        seen[i] = true;
    }
    Ok(split)
}

fn load_signals(paths: &[PathBuf]) -> Result<Vec<(String, Signal)>> {
    if paths.is_empty() {
        return Err(Error::Empty("manifest"));
    }
    par::map_ordered(paths, |p| Ok((p.display().to_string(), load_wav(p)?)))
        .into_iter()
        .collect()
}

fn dataset_for(signals: &[(String, Signal)], ids: &[usize], delta: f64, spec: WindowSpec) -> Result<Dataset> {
    let dataset = Dataset::from_signals(ids.iter().map(|&i| signals[i].clone()), delta, spec)?;
    if dataset.is_empty() {
        return Err(Error::Empty("dataset windows"));
    }
    Ok(dataset)
}

fn load_dataset(data: &DataArgs, subset: Subset, delta: f64, spec: WindowSpec) -> Result<Dataset> {
    let paths = read_manifest(&data.manifest)?;
    let ids: Vec<usize> = match (&data.split, subset) {
        (_, Subset::All) => (0..paths.len()).collect(),
        (Some(p), s) => {
            let split = read_split(p, paths.len())?;
            match s {
                Subset::Train => split.train,
                Subset::Dev => split.dev,
                _ => split.test,
            }
        }
        (None, _) => unreachable!("validated in DataArgs::validate"),
    };
    let selected: Vec<PathBuf> = ids.iter().map(|&i| paths[i].clone()).collect();
    let signals = load_signals(&selected)?;
    dataset_for(&signals, &(0..signals.len()).collect::<Vec<_>>(), delta, spec)
}

fn cp_steps(k: &OrthonormalTransform) -> Result<(f64, f64)> {
    crate::cp_solver::default_step_sizes(operator_norm_estimate(k.matrix(), 1000, 1e-12)?)
}

/// DCT of size `n` and the default solver configuration with history.
fn cp_setup(n: usize, theta: f64, iters: usize) -> Result<(OrthonormalTransform, CpConfig)> {
    let k = build_dct_matrix(n)?;
    let norm = operator_norm_estimate(k.matrix(), 1000, 1e-12)?;
    let (sigma, tau) = crate::cp_solver::default_step_sizes(norm)?;
    let config = CpConfig::new(sigma, tau, theta, iters, true, norm)?;
    Ok((k, config))
}

/// Metrics of the solver output after each iteration count in `counts`,
/// from a single run of `max(counts)` iterations per window.
pub fn cp_metrics(
    dataset: &Dataset,
    k: &OrthonormalTransform,
    config: &CpConfig,
    counts: &[usize],
) -> Result<Vec<Metrics>> {
    let max = counts.iter().copied().max().unwrap_or(0);
    if counts.contains(&0) {
        return Err(Error::InvalidParameter("iteration counts must be at least 1".into()));
    }
    let config = CpConfig {
        max_iter: max,
        record_history: true,
        ..config.clone()
    };
    let per_window = par::map_ordered(&dataset.pairs, |pair| -> Result<Vec<Vec<f64>>> {
        let (_, history) = solve_dequant_window(&pair.q, dataset.delta, k.matrix(), &config)?;
        Ok(counts
            .iter()
            .map(|&c| history[c - 1].x.iter().zip(&pair.q).map(|(x, q)| x + q).collect())
            .collect())
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    (0..counts.len())
        .map(|j| {
            let estimates: Vec<Vec<f64>> = per_window.iter().map(|w| w[j].clone()).collect();
            dataset.metrics_from_estimates(&estimates)
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct QuantizedFile {
    delta: f64,
    sample_rate: u32,
    max_error: f64,
    samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterMetrics {
    pub iter: usize,
    pub mse: f64,
    pub snr_db: f64,
}

/// Output of `solve-cp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub delta: f64,
    pub window: usize,
    pub shift: usize,
    pub sigma: f64,
    pub tau: f64,
    pub theta: f64,
    pub history: Vec<IterMetrics>,
}

#[derive(Debug, Serialize)]
struct GridEntry {
    lambda: f64,
    best_epoch: usize,
    best_dev_mse: f64,
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    selected_lambda: f64,
    grid: Vec<GridEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportColumn {
    pub name: String,
    pub mse: f64,
    pub snr_db: f64,
}

/// MSE and SNR per method, in column order QU, models, solver iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub columns: Vec<ReportColumn>,
}

impl CompareReport {
    /// Aligned text table with rows MSE and SNR.
    pub fn to_text(&self) -> String {
        let cells = |f: &dyn Fn(&ReportColumn) -> String| -> Vec<String> { self.columns.iter().map(f).collect() };
        let names = cells(&|c| c.name.clone());
        let mse = cells(&|c| format!("{:.4e}", c.mse));
        let snr = cells(&|c| format!("{:.2}", c.snr_db));
        let width = names.iter().chain(&mse).chain(&snr).map(String::len).max().unwrap_or(0);
        let mut out = String::new();
        for (label, row) in [("", &names), ("MSE", &mse), ("SNR dB", &snr)] {
            let _ = write!(out, "{label:<8}");
            for cell in row {
                let _ = write!(out, "  {cell:>width$}");
            }
            out.push('\n');
        }
        out
    }
}

/// Scores the identity (quantized input), each model and the solver after
/// each count in `cp_iters` on `dataset`.
pub fn compare(
    dataset: &Dataset,
    names: &[PathBuf],
    models: &[NetworkParams],
    cp_iters: &[usize],
) -> Result<CompareReport> {
    let mut columns = Vec::new();
    let qu = crate::pipeline::evaluate_estimator(dataset, |q| Ok(q.to_vec()))?;
    columns.push(ReportColumn {
        name: "QU".into(),
        mse: qu.mse,
        snr_db: qu.snr_db,
    });
    for (name, model) in names.iter().zip(models) {
        let m = evaluate(model, dataset)?;
        columns.push(ReportColumn {
            name: name.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
            mse: m.mse,
            snr_db: m.snr_db,
        });
    }
    if !cp_iters.is_empty() {
        let max = cp_iters.iter().copied().max().unwrap_or(1);
        let (k, config) = cp_setup(dataset.dim(), 1.0, max)?;
        for (&it, m) in cp_iters.iter().zip(cp_metrics(dataset, &k, &config, cp_iters)?) {
            columns.push(ReportColumn {
                name: format!("CP{it}"),
                mse: m.mse,
                snr_db: m.snr_db,
            });
        }
    }
    Ok(CompareReport { columns })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    variant: Variant,
    #[serde(rename = "L")]
    depth: usize,
    n: usize,
    delta: f64,
    theta: f64,
    blocks: Vec<BlockFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockFile {
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    #[serde(rename = "V")]
    v: Vec<Vec<f64>>,
    b: Vec<f64>,
}

/// Serializes a network as `{variant, L, n, delta, theta, blocks:[{W, V, b}]}`
/// with matrices as row lists and shortest round-trip float rendering.
pub fn model_to_json(params: &NetworkParams) -> String {
    let file = ModelFile {
        variant: params.variant(),
        depth: params.depth(),
        n: params.dim(),
        delta: params.delta(),
        theta: params.theta(),
        blocks: params
            .blocks()
            .iter()
            .map(|b| BlockFile {
                w: b.w.to_rows(),
                v: b.v.to_rows(),
                b: b.b.clone(),
            })
            .collect(),
    };
    serde_json::to_string(&file).expect("serializable")
}

pub fn model_from_json(text: &str) -> Result<NetworkParams> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::InvalidModel(e.to_string()))?;
    if file.blocks.len() != file.depth {
        return Err(Error::InvalidModel(format!(
            "L = {} but {} blocks are present",
            file.depth,
            file.blocks.len()
        )));
    }
    let square = |name: &str, rows: Vec<Vec<f64>>| -> Result<DenseMatrix> {
        if rows.len() != file.n || rows.iter().any(|r| r.len() != file.n) {
            return Err(Error::InvalidModel(format!("{name} must be {0}x{0}", file.n)));
        }
        DenseMatrix::from_rows(&rows).map_err(|e| Error::InvalidModel(e.to_string()))
    };
    let blocks = file
        .blocks
        .into_iter()
        .map(|b| {
            Ok(BlockParams {
                w: square("W", b.w)?,
                v: square("V", b.v)?,
                b: b.b,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    NetworkParams::new(file.variant, blocks, file.delta, file.theta).map_err(|e| Error::InvalidModel(e.to_string()))
}

pub fn save_model(params: &NetworkParams, path: &Path) -> Result<()> {
    write_atomic(path, model_to_json(params).as_bytes())
}

pub fn load_model(path: &Path) -> Result<NetworkParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text).map_err(|e| match e {
        Error::InvalidModel(msg) => Error::InvalidModel(format!("{}: {msg}", path.display())),
        other => other,
    })
}

const CURVE_HEADER: &str = "epoch,train_mse,dev_mse,loss";

/// Writes `epoch,train_mse,dev_mse,loss` rows with 17 significant digits.
/// An empty history is rejected and no file is created.
pub fn export_curves(history: &TrainHistory, path: &Path) -> Result<()> {
    if history.is_empty() {
        return Err(Error::Empty("training history"));
    }
    let mut csv = String::from(CURVE_HEADER);
    csv.push('\n');
    for r in &history.epochs {
        let _ = writeln!(csv, "{},{:.16e},{:.16e},{:.16e}", r.epoch, r.train_mse, r.dev_mse, r.loss);
    }
    write_atomic(path, csv.as_bytes())
}

/// Parses a file written by [`export_curves`].
pub fn read_curves(path: &Path) -> Result<TrainHistory> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(CURVE_HEADER) {
        return Err(Error::InvalidParameter(format!("{}: missing curve header", path.display())));
    }
    let bad = |line: &str| Error::InvalidParameter(format!("{}: malformed row {line:?}", path.display()));
    let mut history = TrainHistory::default();
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(bad(line));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(line));
        history.epochs.push(crate::training::EpochRecord {
            epoch: fields[0].parse().map_err(|_| bad(line))?,
            train_mse: num(fields[1])?,
            dev_mse: num(fields[2])?,
            loss: num(fields[3])?,
        });
    }
    Ok(history)
}
