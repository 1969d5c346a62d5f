//! Implementation of the `mrxlate` subcommands.
//!
//! Commands that process many items record per-item failures instead of
//! aborting; the binary exits 0 only when none were recorded.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use mrxlate_core::data::{
    discover_dataset, fit_to_shape, load_slice, split_dataset, write_slice, zscore_normalize, Direction, Domain,
    ImageSlice, PairedDataset, Split, SplitManifest, VolumeFormat,
};
use mrxlate_core::metrics::{write_error_map, InfoUnit, MetricOptions, MetricReport};
use mrxlate_core::models::{generate, ModelBundle, ModelKind};
use mrxlate_core::toy::toy_dataset;
use mrxlate_core::trainer::{checkpoint_path, load_checkpoint, save_checkpoint, write_history_csv, TrainConfig, Trainer};
use mrxlate_core::Scalar;
use mrxlate_study::{create_session, AppState, Composition, ImagePool, Store};

/// Overrides the data root given on the command line or stored in a manifest.
pub const DATA_ROOT_ENV: &str = "MRXLATE_DATA_ROOT";

pub fn data_root(given: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = std::env::var_os(DATA_ROOT_ENV).filter(|v| !v.is_empty()) {
        return Ok(PathBuf::from(p));
    }
    given
        .map(Path::to_path_buf)
        .with_context(|| format!("no data root: pass --root or set {DATA_ROOT_ENV}"))
}

// ---- prepare -------------------------------------------------------------

pub struct PrepareArgs {
    pub root: Option<PathBuf>,
    pub slice_index: Option<usize>,
    pub n_train: usize,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn prepare(a: &PrepareArgs) -> Result<SplitManifest> {
    let root = data_root(a.root.as_deref())?;
    let all = discover_dataset::<f32>(&root, a.slice_index, None)?;
    let (train, test) = split_dataset(&all, a.n_train, a.seed)?;
    let mut m = SplitManifest::from_split(a.seed, &train, &test);
    m.root = Some(root);
    m.slice_index = a.slice_index;
    m.save(&a.out)?;
    log::info!(
        "{} subjects: {} train, {} test -> {}",
        all.len(),
        train.len(),
        test.len(),
        a.out.display()
    );
    Ok(m)
}

/// Writes `n_pairs` phantom pairs as `<out>/{T1,T2}/toy-NNNN.nii`.
pub fn make_toy(out: &Path, n_pairs: usize, size: usize, seed: u64) -> Result<()> {
    let ds = toy_dataset::<f64>(n_pairs, size, seed)?;
    for d in Domain::ALL {
        fs::create_dir_all(out.join(d.as_str()))?;
    }
    for (t1, t2) in ds.pairs() {
        for s in [t1, t2] {
            let path = out.join(s.domain().as_str()).join(format!("{}.nii", s.subject_id()));
            write_slice(&path, s.pixels())?;
        }
    }
    log::info!("{n_pairs} toy pairs of {size}x{size} -> {}", out.display());
    Ok(())
}

/// Loads one side of a manifest, fitting slices to `shape` when given.
pub fn load_manifest_split<T: Scalar>(
    manifest: &Path,
    split: Split,
    shape: Option<(usize, usize)>,
) -> Result<PairedDataset<T>> {
    let m = SplitManifest::load(manifest)?;
    let root = data_root(m.root.as_deref())?;
    let subjects = match split {
        Split::Train => &m.train_subjects,
        Split::Test => &m.test_subjects,
    };
    let ds = discover_dataset::<T>(&root, m.slice_index, Some(subjects))?.with_split(split);
    match shape {
        None => Ok(ds),
        Some((h, w)) => {
            let fit = |s: &ImageSlice<T>| -> Result<ImageSlice<T>> {
                Ok(ImageSlice::new(fit_to_shape(s.pixels(), h, w)?, s.domain(), s.subject_id(), s.slice_index())?)
            };
            let pairs = ds
                .pairs()
                .iter()
                .map(|(a, b)| Ok((fit(a)?, fit(b)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(PairedDataset::new(pairs, split)?)
        }
    }
}

// ---- train ---------------------------------------------------------------

#[derive(Default)]
pub struct TrainArgs {
    pub config: PathBuf,
    pub kind: Option<ModelKind>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub manifest: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub double: bool,
}

pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub epochs: usize,
}

pub fn resolve_train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::load(&a.config)?;
    if let Some(k) = a.kind {
        cfg.set("kind", k.as_str())?;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(m) = &a.manifest {
        cfg.manifest = Some(m.clone());
    }
    if let Some(r) = &a.run_dir {
        cfg.run_dir = Some(r.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(a: &TrainArgs) -> Result<TrainOutcome> {
    let cfg = resolve_train_config(a)?;
    if a.double {
        train_as::<f64>(cfg, a.resume.as_deref())
    } else {
        train_as::<f32>(cfg, a.resume.as_deref())
    }
}

fn train_as<T: Scalar>(cfg: TrainConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    let manifest = cfg.manifest.clone().context("no manifest: set `manifest` in the config or pass --manifest")?;
    let run_dir = cfg.run_dir.clone().unwrap_or_else(|| PathBuf::from("runs"));
    fs::create_dir_all(&run_dir)?;
    let data = load_manifest_split::<T>(&manifest, Split::Train, cfg.image_shape_override())?;
    cfg.save(&run_dir.join(format!("{}_config.txt", cfg.kind)))?;

    let mut trainer = match resume {
        Some(p) => {
            let ck = load_checkpoint::<T>(p)?;
            log::info!("resuming {} from epoch {}", cfg.kind, ck.epoch);
            Trainer::resume(ck, cfg.clone(), &data)?
        }
        None => Trainer::new(cfg.clone(), &data)?,
    };
    let history = run_dir.join(format!("{}_history.csv", cfg.kind));
    let mut last = None;
    trainer.run(|t| {
        let rec = t.history().last().expect("an epoch just finished");
        let losses: Vec<String> = rec.losses.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
        log::info!("epoch {}/{} {:.1}s {}", rec.epoch, cfg.epochs, rec.wall_seconds, losses.join(" "));
        write_history_csv(&history, t.history())?;
        if rec.epoch % cfg.checkpoint_every == 0 || rec.epoch == cfg.epochs {
            let p = checkpoint_path(&run_dir, cfg.kind, rec.epoch);
            save_checkpoint(&p, &t.checkpoint())?;
            last = Some(p);
        }
        Ok(())
    })?;
    let checkpoint = match last {
        Some(p) => p,
        None => {
            // resumed at the final epoch: nothing ran, still leave a checkpoint
            let p = checkpoint_path(&run_dir, cfg.kind, trainer.epoch());
            save_checkpoint(&p, &trainer.checkpoint())?;
            write_history_csv(&history, trainer.history())?;
            p
        }
    };
    Ok(TrainOutcome {
        checkpoint,
        history,
        epochs: trainer.epoch(),
    })
}

// ---- translate -----------------------------------------------------------

pub struct TranslateArgs {
    pub checkpoint: PathBuf,
    pub input: PathBuf,
    pub direction: Direction,
    pub output: PathBuf,
}

#[derive(Debug, Default)]
pub struct TranslateSummary {
    pub written: Vec<PathBuf>,
    pub skipped: Vec<(PathBuf, String)>,
}

/// Name of the synthetic counterpart of `path`: `sub-01.nii.gz` becomes
/// `sub-01_syn.nii.gz`.
pub fn synthetic_name(path: &Path) -> Option<String> {
    let (stem, ext) = VolumeFormat::split_name(path)?;
    Some(format!("{stem}_syn{ext}"))
}

pub fn translate(a: &TranslateArgs) -> Result<TranslateSummary> {
    let bundle = load_checkpoint::<f64>(&a.checkpoint)?.bundle;
    if !a.input.is_dir() {
        bail!("input directory {} does not exist", a.input.display());
    }
    let mut inputs: Vec<PathBuf> = fs::read_dir(&a.input)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    inputs.retain(|p| VolumeFormat::from_path(p).is_some());
    inputs.sort();
    let mut out = TranslateSummary::default();
    if inputs.is_empty() {
        log::warn!("no input images in {}, nothing to do", a.input.display());
        return Ok(out);
    }
    fs::create_dir_all(&a.output)?;
    for p in inputs {
        match translate_one(&bundle, &p, a.direction, &a.output) {
            Ok(dst) => out.written.push(dst),
            Err(e) => {
                log::warn!("skipped {}: {e:#}", p.display());
                out.skipped.push((p, format!("{e:#}")));
            }
        }
    }
    log::info!("{} translated, {} skipped", out.written.len(), out.skipped.len());
    Ok(out)
}

fn translate_one(bundle: &ModelBundle<f64>, src: &Path, direction: Direction, out_dir: &Path) -> Result<PathBuf> {
    let (stem, _) = VolumeFormat::split_name(src).context("unsupported file name")?;
    let slice = load_slice::<f64>(src, None, direction.source(), &stem)?;
    if slice.pixels().shape() != bundle.image_shape() {
        bail!(
            "image is {:?} but the model expects {:?}",
            slice.pixels().shape(),
            bundle.image_shape()
        );
    }
    let y = generate(bundle, &zscore_normalize(&slice)?, direction)?;
    let dst = out_dir.join(synthetic_name(src).expect("checked above"));
    write_slice(&dst, &y.pixels)?;
    Ok(dst)
}

// ---- evaluate ------------------------------------------------------------

pub enum Predictions {
    Checkpoint(PathBuf),
    /// `<dir>/{T1,T2}/<subject>_syn.<ext>`, foldered by target domain.
    Directory(PathBuf),
}

pub struct EvaluateArgs {
    pub predictions: Predictions,
    pub manifest: PathBuf,
    pub directions: Vec<Direction>,
    pub bins: usize,
    pub mi_unit: InfoUnit,
    pub out: PathBuf,
}

pub fn evaluate(a: &EvaluateArgs) -> Result<MetricReport> {
    let options = MetricOptions {
        bins: a.bins,
        mi_unit: a.mi_unit,
        ..MetricOptions::default()
    };
    let eval = match &a.predictions {
        Predictions::Checkpoint(p) => {
            let ck = load_checkpoint::<f64>(p)?;
            let test = load_manifest_split::<f64>(&a.manifest, Split::Test, ck.config.image_shape_override())?;
            mrxlate_core::metrics::evaluate_with(&test, &a.directions, options, |src, d| {
                Ok(generate(&ck.bundle, &zscore_normalize(src)?, d)?.pixels)
            })?
        }
        Predictions::Directory(dir) => {
            let test = load_manifest_split::<f64>(&a.manifest, Split::Test, None)?;
            mrxlate_core::metrics::evaluate_with(&test, &a.directions, options, |src, d| {
                let found = find_prediction(dir, d.target(), src.subject_id())?;
                let s = load_slice::<f64>(&found, None, d.target(), src.subject_id())?;
                Ok(s.pixels().clone())
            })?
        }
    };
    fs::create_dir_all(&a.out)?;
    let report = eval.report;
    report.write_json(&a.out.join("report.json"))?;
    report.write_csv(&a.out.join("report.csv"))?;
    report.write_aggregate_csv(&a.out.join("aggregate.csv"))?;
    let maps = a.out.join("error_maps");
    fs::create_dir_all(&maps)?;
    for e in &eval.error_maps {
        write_error_map(&maps, &format!("{}_{}", e.subject_id, e.direction), &e.map)?;
    }
    for (domain, agg) in &report.aggregate {
        let fmt = |s: &Option<mrxlate_core::metrics::Summary>| {
            s.map_or("n/a".to_string(), |s| format!("{:.4} ± {:.4}", s.mean, s.std))
        };
        log::info!(
            "target {domain}: {} images, MAE {}, PSNR {}, MI {}",
            agg.images,
            fmt(&agg.mae),
            fmt(&agg.psnr),
            fmt(&agg.mi)
        );
    }
    Ok(report)
}

fn find_prediction(dir: &Path, target: Domain, subject: &str) -> mrxlate_core::Result<PathBuf> {
    let folder = dir.join(target.as_str());
    let want = format!("{subject}_syn");
    if let Ok(rd) = fs::read_dir(&folder) {
        for e in rd.flatten() {
            let p = e.path();
            if VolumeFormat::split_name(&p).is_some_and(|(stem, _)| stem == want) {
                return Ok(p);
            }
        }
    }
    Err(mrxlate_core::Error::NotFound(folder.join(want)))
}

// ---- study-serve ---------------------------------------------------------

pub struct ServeArgs {
    pub real: PathBuf,
    pub synthetic: Vec<(ModelKind, PathBuf)>,
    pub store: PathBuf,
    pub host: String,
    pub port: u16,
    pub seed: u64,
    pub composition: Composition,
}

/// Scans the pools and checks that the default composition can be drawn.
pub fn study_state(a: &ServeArgs) -> Result<AppState> {
    let real = ImagePool::scan(&a.real, None)?;
    let mut synthetic = ImagePool::default();
    for (m, dir) in &a.synthetic {
        synthetic.extend(ImagePool::scan(dir, Some(*m))?);
    }
    create_session("probe", &real, &synthetic, &a.composition, a.seed)
        .context("pools cannot supply the default composition")?;
    let display_shape = synthetic
        .images()
        .iter()
        .find(|im| !a.composition.excluded_models.contains(&im.source_model.expect("synthetic")))
        .map(|im| load_slice::<f32>(&im.path, None, im.domain, "").map(|s| s.pixels().shape()))
        .transpose()?;
    Ok(AppState {
        store: Arc::new(Store::open(&a.store)?),
        real_pool: Arc::new(real),
        synthetic_pool: Arc::new(synthetic),
        default_seed: a.seed,
        display_shape,
    })
}

pub async fn study_serve(state: AppState, listener: tokio::net::TcpListener) -> Result<()> {
    let store = state.store.clone();
    log::info!("study service on http://{}", listener.local_addr()?);
    axum::serve(listener, mrxlate_study::router(state))
        .with_graceful_shutdown(shutdown_signal())
        .await?;
    store.flush()?;
    log::info!("sessions flushed to {}", store.path().display());
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
