//! `kanmix train | search | stats | report`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kanmix_core::data::{kfold_split, Fold};
use kanmix_core::search::{random_search, LrScale, SearchSpace, TrialConfig};
use kanmix_core::stats::{tabulate, ModelRun};
use kanmix_core::train::{train_fold, Summary};
use kanmix_core::{ImageSet, ModelKind, Scalar, Split, TrainConfig};
use serde_json::json;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::datasets::Dataset;
use crate::error::{exit, Error, Result};
use crate::report::{violin_csv, violin_points, violin_svg};
use crate::results::{
    ensure_dir, epochs_csv, fingerprint, fold_path, git_describe, read_folds, significance_csv, significance_text,
    unix_now, write_json, write_text, FoldFile, RunManifest, RunSummary,
};

pub const DATA_DIR_ENV: &str = "KANMIX_DATA_DIR";

#[derive(Debug, Parser)]
#[command(name = "kanmix", version, about = "Train and compare KAN-Mixers and baseline image classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// k-fold training of one model on one dataset.
    Train(TrainArgs),
    /// Random hyperparameter search over mixer architectures.
    Search(SearchArgs),
    /// Wilcoxon comparison of trained models against a reference.
    Stats(StatsArgs),
    /// Violin plots of per-epoch validation accuracy.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn as_str(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

/// Flags shared by `train` and `search`.
#[derive(Clone, Debug, Args)]
pub struct RunArgs {
    #[arg(long, default_value = "fashion-mnist")]
    pub dataset: Dataset,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Defaults to $KANMIX_DATA_DIR, then ./data.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    pub out_dir: PathBuf,
    /// Single worker; results are byte-identical across runs.
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Use only the first N training images.
    #[arg(long)]
    pub subset: Option<usize>,
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "f32")]
    pub precision: Precision,
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    /// Score every fold's final model on the test split instead of its validation fold.
    #[arg(long)]
    pub eval_test: bool,
    /// Also score the final model on its own training images (eval mode).
    #[arg(long)]
    pub eval_train: bool,
    #[arg(long)]
    pub no_checkpoints: bool,
    /// Report the sample (n - 1) standard deviation instead of the population one.
    #[arg(long)]
    pub sample_std: bool,
}

#[derive(Clone, Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    /// Mixer kind whose architecture is searched.
    #[arg(long, default_value = "kan-mixers")]
    pub model: ModelKind,
    /// Sample the learning rate log-uniformly.
    #[arg(long)]
    pub log_lr: bool,
    /// JSON search space replacing the default sets and learning-rate range.
    #[arg(long)]
    pub space: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct StatsArgs {
    /// Dataset directory holding one subdirectory of fold files per model.
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long, default_value = "kan-mixers")]
    pub reference: String,
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.10")]
    pub alpha: Vec<f64>,
    #[arg(long)]
    pub sample_std: bool,
    /// Defaults to the results directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct ReportArgs {
    /// Results root or a single dataset directory.
    #[arg(long)]
    pub results: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns its exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    let recorded: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli.command, &recorded) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, args: &[String]) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(&a, args),
        Command::Search(a) => cmd_search(&a, args),
        Command::Stats(a) => cmd_stats(&a, args),
        Command::Report(a) => cmd_report(&a, args),
    }
}

fn usage(e: kanmix_core::Error) -> Error {
    Error::Usage(e.to_string())
}

impl RunArgs {
    fn data_dir(&self) -> PathBuf {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"))
    }

    fn workers(&self) -> Result<usize> {
        if self.workers == 0 {
            return Err(Error::Usage("--workers must be at least 1".into()));
        }
        Ok(if self.deterministic { 1 } else { self.workers })
    }

    fn file_config(&self) -> Result<RunConfig> {
        match &self.config {
            Some(path) => RunConfig::load(path),
            None => Ok(RunConfig::default()),
        }
    }

    fn flag_config(&self) -> RunConfig {
        RunConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            folds: self.folds,
            seed: self.seed,
            augment: self.no_augment.then_some(false),
            ..RunConfig::default()
        }
    }

    fn load_train(&self, size: usize) -> Result<ImageSet> {
        let data = self.dataset.load(&self.data_dir(), Split::Train, size)?;
        match self.subset {
            Some(0) => Err(Error::Usage("--subset must be at least 1".into())),
            Some(n) if n > data.len() => {
                Err(Error::Usage(format!("--subset {n} exceeds the {} training images", data.len())))
            }
            Some(n) => Ok(data.take(n)),
            None => Ok(data),
        }
    }
}

/// Messages from pool workers to the single writer.
enum Msg<T> {
    Progress(String),
    Done { job: usize, result: Result<T>, secs: f64 },
}

/// Runs `work` over `jobs` on at most `workers` threads. The calling thread
/// receives every message in `on_msg` and is the only one doing output.
fn pool<J, T, W, F>(jobs: &[J], workers: usize, work: W, mut on_msg: F)
where
    J: Sync,
    T: Send,
    W: Fn(usize, &J, &dyn Fn(String)) -> Result<T> + Sync,
    F: FnMut(Msg<T>),
{
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<Msg<T>>();
    std::thread::scope(|scope| {
        for _ in 0..workers.min(jobs.len()).max(1) {
            let tx = tx.clone();
            let (next, work) = (&next, &work);
            scope.spawn(move || loop {
                let job = next.fetch_add(1, Ordering::SeqCst);
                if job >= jobs.len() {
                    break;
                }
                let start = Instant::now();
                let progress = |line: String| {
                    let _ = tx.send(Msg::Progress(line));
                };
                let result = work(job, &jobs[job], &progress);
                let _ = tx.send(Msg::Done { job, result, secs: start.elapsed().as_secs_f64() });
            });
        }
        drop(tx);
        for msg in rx {
            on_msg(msg);
        }
    });
}

fn model_dir(out_dir: &Path, dataset: Dataset, kind: ModelKind) -> PathBuf {
    out_dir.join(dataset.as_str()).join(kind.as_str())
}

fn remove_stale(dir: &Path) -> Result<()> {
    let Ok(entries) = fs::read_dir(dir) else { return Ok(()) };
    for entry in entries.flatten() {
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with("fold_") && name.ends_with(".json") {
            fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
    }
    let ckpt = dir.join("checkpoints");
    if ckpt.exists() {
        fs::remove_dir_all(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
    }
    Ok(())
}

fn cmd_train(a: &TrainArgs, args: &[String]) -> Result<()> {
    let started = unix_now();
    let workers = a.run.workers()?;
    let flags = RunConfig {
        model: a.model,
        lr: a.lr,
        patch_size: a.patch_size,
        dim: a.dim,
        depth: a.depth,
        ..a.run.flag_config()
    };
    let mut cfg = a.run.file_config()?.overlay(flags).resolve(a.run.dataset.channels())?;
    cfg.eval_train = a.eval_train;

    let data = a.run.load_train(cfg.model.image_size)?;
    let test = if a.eval_test {
        Some(a.run.dataset.load(&a.run.data_dir(), Split::Test, cfg.model.image_size)?)
    } else {
        None
    };
    let folds = kfold_split(data.len(), cfg.folds, cfg.seed).map_err(usage)?;
    let dir = model_dir(&a.run.out_dir, a.run.dataset, cfg.kind);
    ensure_dir(&dir)?;
    remove_stale(&dir)?;
    eprintln!(
        "training {} on {} ({} images, {} folds, {} epochs, {} worker(s))",
        cfg.kind,
        a.run.dataset,
        data.len(),
        cfg.folds,
        cfg.epochs,
        workers
    );

    let ctx = FoldRun { cfg: &cfg, data: &data, test: test.as_ref(), folds: &folds };
    let (results, wall) = match a.run.precision {
        Precision::F32 => ctx.run::<f32>(a, &dir, workers)?,
        Precision::F64 => ctx.run::<f64>(a, &dir, workers)?,
    };

    write_text(&dir.join("epochs.csv"), &epochs_csv(&results))?;
    let accs: Vec<f64> = results.iter().map(|r| r.accuracy()).collect();
    let summary = Summary::of(&accs, !a.sample_std)?;
    let run_summary = RunSummary {
        dataset: a.run.dataset.as_str().into(),
        model: cfg.kind.as_str().into(),
        fold_accuracies: accs,
        mean: summary.mean,
        std: summary.std,
        population_std: !a.sample_std,
        display: summary.display(),
    };
    write_json(&dir.join("summary.json"), &run_summary)?;
    if let Some(train) = results.iter().map(|r| r.train_eval.as_ref().map(|m| m.accuracy)).collect::<Option<Vec<_>>>() {
        let mean = train.iter().sum::<f64>() / train.len() as f64;
        eprintln!("train accuracy (eval mode): {mean:.4}");
    }
    println!("{} {}: {}", a.run.dataset, cfg.kind, summary.display());

    let manifest = RunManifest {
        command: "train".into(),
        args: args.to_vec(),
        config: json!({
            "dataset": a.run.dataset,
            "subset": a.run.subset,
            "train_images": data.len(),
            "eval_test": a.eval_test,
            "train": cfg,
        }),
        seed: cfg.seed,
        precision: a.run.precision.as_str().into(),
        deterministic: a.run.deterministic,
        git_describe: git_describe(),
        version: env!("CARGO_PKG_VERSION").into(),
        started_unix: started,
        finished_unix: unix_now(),
        out_dir: dir.clone(),
        fold_wall_secs: wall,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

struct FoldRun<'a> {
    cfg: &'a TrainConfig,
    data: &'a ImageSet,
    test: Option<&'a ImageSet>,
    folds: &'a [Fold],
}

impl FoldRun<'_> {
    /// Trains every fold and writes fold files and checkpoints as they finish.
    fn run<S: Scalar>(
        &self,
        a: &TrainArgs,
        dir: &Path,
        workers: usize,
    ) -> Result<(Vec<kanmix_core::FoldResult>, Vec<f64>)> {
        let n = self.folds.len();
        let mut results = vec![None; n];
        let mut wall = vec![0.0; n];
        let mut failure: Option<Error> = None;
        let epochs = self.cfg.epochs;
        pool(
            self.folds,
            workers,
            |_, fold, progress| {
                let mut on_epoch = |r: &kanmix_core::train::EpochRecord| {
                    let val = r.val_acc.map(|v| format!(" val_acc {v:.4}")).unwrap_or_default();
                    progress(format!(
                        "fold {} epoch {}/{} loss {:.4} train_acc {:.4}{val}",
                        fold.index, r.epoch, epochs, r.train_loss, r.train_acc
                    ));
                };
                Ok(train_fold::<S>(self.cfg, self.data, fold, self.test, &mut on_epoch)?)
            },
            |msg| match msg {
                Msg::Progress(line) => eprintln!("{line}"),
                Msg::Done { job, result, secs } => {
                    let written = result.and_then(|(model, r)| {
                        let fold = &self.folds[job];
                        let file = FoldFile {
                            dataset: a.run.dataset.as_str().into(),
                            model: self.cfg.kind.as_str().into(),
                            seed: self.cfg.seed,
                            folds: n,
                            fold: fold.index,
                            train_size: fold.train.len(),
                            test_split: self.test.is_some(),
                            val_fingerprint: fingerprint(&fold.val),
                            result: r.clone(),
                        };
                        write_json(&fold_path(dir, fold.index), &file)?;
                        if !a.no_checkpoints {
                            let ckpt = dir.join("checkpoints");
                            ensure_dir(&ckpt)?;
                            checkpoint::save(&model, self.cfg.seed, &ckpt.join(format!("fold_{}", fold.index)))?;
                        }
                        eprintln!("fold {} done: accuracy {:.4} ({secs:.1}s)", fold.index, r.accuracy());
                        Ok(r)
                    });
                    match written {
                        Ok(r) => {
                            results[job] = Some(r);
                            wall[job] = secs;
                        }
                        Err(e) => {
                            eprintln!("fold {} failed: {e}", self.folds[job].index);
                            failure.get_or_insert(e);
                        }
                    }
                }
            },
        );
        if let Some(e) = failure {
            return Err(e);
        }
        Ok((results.into_iter().map(|r| r.expect("every fold reported")).collect(), wall))
    }
}

fn cmd_search(a: &SearchArgs, args: &[String]) -> Result<()> {
    let started = unix_now();
    let workers = a.run.workers()?;
    if !a.model.is_mixer() {
        return Err(Error::Usage(format!("search covers mixer models only, got {}", a.model)));
    }
    if a.trials == 0 {
        return Err(Error::Usage("--trials must be at least 1".into()));
    }
    let flags = RunConfig { model: Some(a.model), ..a.run.flag_config() };
    let base = a.run.file_config()?.overlay(flags).resolve(a.run.dataset.channels())?;
    let mut space = match &a.space {
        Some(path) => crate::results::read_json::<SearchSpace>(path)?,
        None => SearchSpace::default(),
    };
    if a.log_lr {
        space.lr_scale = LrScale::Log;
    }
    space.validate().map_err(usage)?;
    let search_seed = base.seed;
    let configs = space.sample_trials(a.trials, search_seed).map_err(usage)?;

    let data = a.run.load_train(base.model.image_size)?;
    let folds = kfold_split(data.len(), base.folds, base.seed).map_err(usage)?;
    let jobs: Vec<(usize, usize)> = (0..configs.len()).flat_map(|t| (0..folds.len()).map(move |f| (t, f))).collect();
    eprintln!("searching {} trials x {} folds on {} ({} images)", configs.len(), folds.len(), a.run.dataset, data.len());

    let trial_cfg = |t: &TrialConfig| TrainConfig { model: t.apply(&base.model), lr: t.lr, ..base.clone() };
    let mut accs: Vec<Vec<Option<f64>>> = vec![vec![None; folds.len()]; configs.len()];
    let mut errors: Vec<Option<String>> = vec![None; configs.len()];
    let mut wall = vec![0.0; jobs.len()];
    let precision = a.run.precision;
    pool(
        &jobs,
        workers,
        |_, &(t, f), progress| {
            let cfg = trial_cfg(&configs[t]);
            cfg.validate()?;
            let mut quiet = |_: &kanmix_core::train::EpochRecord| {};
            let r = match precision {
                Precision::F32 => train_fold::<f32>(&cfg, &data, &folds[f], None, &mut quiet)?.1,
                Precision::F64 => train_fold::<f64>(&cfg, &data, &folds[f], None, &mut quiet)?.1,
            };
            progress(format!("trial {t} fold {f}: accuracy {:.4}", r.accuracy()));
            Ok(r.accuracy())
        },
        |msg| match msg {
            Msg::Progress(line) => eprintln!("{line}"),
            Msg::Done { job, result, secs } => {
                let (t, f) = jobs[job];
                wall[job] = secs;
                match result {
                    Ok(acc) => accs[t][f] = Some(acc),
                    Err(e) => {
                        eprintln!("trial {t} fold {f} failed: {e}");
                        errors[t].get_or_insert(e.to_string());
                    }
                }
            }
        },
    );

    let outcome = random_search(&space, a.trials, search_seed, |t, config| {
        debug_assert_eq!(config, &configs[t]);
        match &errors[t] {
            Some(e) => Err(kanmix_core::Error::Invalid { op: "trial", msg: e.clone() }),
            None => Ok(accs[t].iter().map(|a| a.expect("fold finished")).collect()),
        }
    })?;
    let best = outcome.best_trial();
    let best_cfg = trial_cfg(&best.config);
    let best_file = RunConfig {
        model: Some(best_cfg.kind),
        patch_size: Some(best_cfg.model.patch_size),
        dim: Some(best_cfg.model.dim),
        depth: Some(best_cfg.model.depth),
        token_hidden: Some(best_cfg.model.token_hidden),
        channel_hidden: Some(best_cfg.model.channel_hidden),
        lr: Some(best_cfg.lr),
        ..RunConfig::default()
    };

    let dir = a.run.out_dir.join(a.run.dataset.as_str()).join("search");
    write_json(&dir.join("search_trials.json"), &outcome)?;
    best_file.save(&dir.join("best_config.json"))?;
    println!(
        "best trial {}: patch {} dim {} depth {} lr {} mean accuracy {:.4}",
        best.trial,
        best.config.patch_size,
        best.config.dim,
        best.config.depth,
        best.config.lr,
        best.mean_accuracy.unwrap_or(f64::NAN)
    );

    let manifest = RunManifest {
        command: "search".into(),
        args: args.to_vec(),
        config: json!({
            "dataset": a.run.dataset,
            "subset": a.run.subset,
            "trials": a.trials,
            "space": space,
            "base": base,
        }),
        seed: search_seed,
        precision: precision.as_str().into(),
        deterministic: a.run.deterministic,
        git_describe: git_describe(),
        version: env!("CARGO_PKG_VERSION").into(),
        started_unix: started,
        finished_unix: unix_now(),
        out_dir: dir.clone(),
        fold_wall_secs: wall,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

/// Fold files keyed by model directory name.
type ModelRuns = BTreeMap<String, Vec<FoldFile>>;

/// Model subdirectories of `dir` that hold at least one fold file, by name.
fn model_runs(dir: &Path) -> Result<ModelRuns> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut runs = BTreeMap::new();
    for entry in entries.flatten() {
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let folds = read_folds(&path)?;
        if !folds.is_empty() {
            runs.insert(entry.file_name().to_string_lossy().into_owned(), folds);
        }
    }
    Ok(runs)
}

/// Every model must share the reference's fold definitions.
fn check_pairing(runs: &ModelRuns, reference: &str) -> Result<()> {
    let base = &runs[reference];
    for (name, folds) in runs {
        for (i, f) in folds.iter().enumerate() {
            if f.fold != i || f.folds != folds.len() {
                return Err(Error::Pairing(format!("{name}: fold files are incomplete ({} of {})", folds.len(), f.folds)));
            }
        }
        if folds.len() != base.len() {
            return Err(Error::Pairing(format!("{name} has {} folds, {reference} has {}", folds.len(), base.len())));
        }
        for (f, r) in folds.iter().zip(base) {
            if f.seed != r.seed {
                return Err(Error::Pairing(format!("{name} used fold seed {}, {reference} used {}", f.seed, r.seed)));
            }
            if f.test_split != r.test_split {
                return Err(Error::Pairing(format!("{name} and {reference} were scored on different splits")));
            }
            if f.val_fingerprint != r.val_fingerprint {
                return Err(Error::Pairing(format!("fold {} of {name} and {reference} hold different images", f.fold)));
            }
        }
    }
    Ok(())
}

fn cmd_stats(a: &StatsArgs, args: &[String]) -> Result<()> {
    let started = unix_now();
    if a.alpha.is_empty() || a.alpha.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
        return Err(Error::Usage("--alpha values must lie in (0, 1)".into()));
    }
    let runs = model_runs(&a.results)?;
    if runs.len() < 2 {
        return Err(Error::Missing(a.results.join("<model>/fold_0.json")));
    }
    if !runs.contains_key(&a.reference) {
        return Err(Error::Missing(a.results.join(&a.reference)));
    }
    check_pairing(&runs, &a.reference)?;
    let model_runs: Vec<ModelRun> = runs
        .iter()
        .map(|(name, folds)| ModelRun {
            model: name.clone(),
            fold_accuracies: folds.iter().map(|f| f.result.accuracy()).collect(),
        })
        .collect();
    let table = tabulate(&model_runs, &a.reference, &a.alpha, !a.sample_std)?;
    let out = a.out_dir.clone().unwrap_or_else(|| a.results.clone());
    write_text(&out.join("significance.csv"), &significance_csv(&table))?;
    let text = significance_text(&table);
    write_text(&out.join("significance.txt"), &text)?;
    print!("{text}");
    let seed = runs[&a.reference][0].seed;
    let manifest = RunManifest {
        command: "stats".into(),
        args: args.to_vec(),
        config: json!({
            "results": a.results,
            "reference": a.reference,
            "alphas": a.alpha,
            "population_std": !a.sample_std,
            "models": runs.keys().collect::<Vec<_>>(),
        }),
        seed,
        precision: "f64".into(),
        deterministic: true,
        git_describe: git_describe(),
        version: env!("CARGO_PKG_VERSION").into(),
        started_unix: started,
        finished_unix: unix_now(),
        out_dir: out.clone(),
        fold_wall_secs: Vec::new(),
    };
    write_json(&out.join("stats_manifest.json"), &manifest)
}

/// Directories under `root` (or `root` itself) whose subdirectories hold fold files.
fn dataset_dirs(root: &Path) -> Result<Vec<(PathBuf, ModelRuns)>> {
    let own = model_runs(root)?;
    if !own.is_empty() {
        return Ok(vec![(root.to_path_buf(), own)]);
    }
    let mut found = Vec::new();
    let mut subdirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for dir in subdirs {
        let runs = model_runs(&dir)?;
        if !runs.is_empty() {
            found.push((dir, runs));
        }
    }
    Ok(found)
}

fn cmd_report(a: &ReportArgs, args: &[String]) -> Result<()> {
    let started = unix_now();
    let sets = dataset_dirs(&a.results)?;
    if sets.is_empty() {
        return Err(Error::Missing(a.results.join("<dataset>/<model>/fold_0.json")));
    }
    let mut written = Vec::new();
    for (dir, runs) in &sets {
        let runs: Vec<(String, Vec<FoldFile>)> = runs.clone().into_iter().collect();
        let points = violin_points(&runs)?;
        let title = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        write_text(&dir.join("violin.csv"), &violin_csv(&points))?;
        write_text(&dir.join("violin.svg"), &violin_svg(&points, &title)?)?;
        eprintln!("{}: {} points from {} models", dir.display(), points.len(), runs.len());
        written.push(dir.clone());
    }
    let manifest = RunManifest {
        command: "report".into(),
        args: args.to_vec(),
        config: json!({ "results": a.results, "datasets": written }),
        seed: 0,
        precision: "f64".into(),
        deterministic: true,
        git_describe: git_describe(),
        version: env!("CARGO_PKG_VERSION").into(),
        started_unix: started,
        finished_unix: unix_now(),
        out_dir: a.results.clone(),
        fold_wall_secs: Vec::new(),
    };
    write_json(&a.results.join("report_manifest.json"), &manifest)
}
