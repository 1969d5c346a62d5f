//! Test-set evaluation and the metric report.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{mae, mutual_information_in, psnr, relative_error_map, ErrorMap, InfoUnit, DEFAULT_BINS, DEFAULT_EPSILON};
use crate::data::{zscore_grid, zscore_normalize, Direction, Domain, Grid, ImageSlice, NormalizedImage, PairedDataset};
use crate::error::{Error, Result};
use crate::models::{generate, ModelBundle};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub bins: usize,
    pub mi_unit: InfoUnit,
    pub epsilon: f64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            bins: DEFAULT_BINS,
            mi_unit: InfoUnit::Nats,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// Metrics of one synthetic image against its ground truth. A metric that
/// could not be computed is `None` and explained in `failures`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub subject_id: String,
    pub direction: Direction,
    pub target_domain: Domain,
    pub mae: Option<f64>,
    pub psnr: Option<f64>,
    pub mi: Option<f64>,
    pub failures: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Summary {
            n: values.len(),
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainAggregate {
    pub images: usize,
    pub mae: Option<Summary>,
    pub psnr: Option<Summary>,
    pub mi: Option<Summary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bins: usize,
    pub mi_unit: InfoUnit,
    pub epsilon: f64,
    /// Sorted by `(subject_id, direction)`.
    pub per_image: Vec<ImageMetrics>,
    /// Keyed by target domain.
    pub aggregate: BTreeMap<Domain, DomainAggregate>,
}

impl MetricReport {
    fn new(options: MetricOptions, mut per_image: Vec<ImageMetrics>) -> Self {
        per_image.sort_by(|a, b| (&a.subject_id, a.direction).cmp(&(&b.subject_id, b.direction)));
        let mut aggregate = BTreeMap::new();
        for domain in Domain::ALL {
            let rows: Vec<&ImageMetrics> = per_image.iter().filter(|m| m.target_domain == domain).collect();
            if rows.is_empty() {
                continue;
            }
            let col = |f: fn(&ImageMetrics) -> Option<f64>| Summary::of(&rows.iter().filter_map(|m| f(m)).collect::<Vec<_>>());
            aggregate.insert(
                domain,
                DomainAggregate {
                    images: rows.len(),
                    mae: col(|m| m.mae),
                    psnr: col(|m| m.psnr),
                    mi: col(|m| m.mi),
                },
            );
        }
        MetricReport {
            bins: options.bins,
            mi_unit: options.mi_unit,
            epsilon: options.epsilon,
            per_image,
            aggregate,
        }
    }

    /// Images with at least one failed metric.
    pub fn failures(&self) -> usize {
        self.per_image.iter().filter(|m| !m.failures.is_empty()).count()
    }

    /// Mean MAE over every image with a value, both directions together.
    pub fn overall_mae(&self) -> Option<f64> {
        Summary::of(&self.per_image.iter().filter_map(|m| m.mae).collect::<Vec<_>>()).map(|s| s.mean)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// One row per image: `subject_id,direction,target_domain,mae,psnr,mi,failures`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(File::create(path)?);
        w.write_record(["subject_id", "direction", "target_domain", "mae", "psnr", "mi", "failures"])?;
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for m in &self.per_image {
            w.write_record([
                m.subject_id.clone(),
                m.direction.as_str().to_string(),
                m.target_domain.as_str().to_string(),
                cell(m.mae),
                cell(m.psnr),
                cell(m.mi),
                m.failures.join("; "),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `target_domain,metric,n,mean,std`.
    pub fn write_aggregate_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(File::create(path)?);
        w.write_record(["target_domain", "metric", "n", "mean", "std"])?;
        for (domain, agg) in &self.aggregate {
            for (name, s) in [("mae", agg.mae), ("psnr", agg.psnr), ("mi", agg.mi)] {
                let Some(s) = s else { continue };
                w.write_record([
                    domain.as_str().to_string(),
                    name.to_string(),
                    s.n.to_string(),
                    s.mean.to_string(),
                    s.std.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ErrorMapEntry<T> {
    pub subject_id: String,
    pub direction: Direction,
    pub map: ErrorMap<T>,
}

#[derive(Clone, Debug)]
pub struct Evaluation<T> {
    pub report: MetricReport,
    pub error_maps: Vec<ErrorMapEntry<T>>,
}

/// Translates every test image in both directions and scores the output.
pub fn evaluate_model<T: Scalar>(
    bundle: &ModelBundle<T>,
    test: &PairedDataset<T>,
    options: MetricOptions,
) -> Result<Evaluation<T>> {
    evaluate_with(test, &Direction::BOTH, options, |source, direction| {
        let x = zscore_normalize(source)?;
        Ok(generate(bundle, &x, direction)?.pixels)
    })
}

/// Scores predictions from `predict(source_slice, direction)`. Errors from
/// `predict` or from a degenerate image are recorded per image.
pub fn evaluate_with<T: Scalar>(
    test: &PairedDataset<T>,
    directions: &[Direction],
    options: MetricOptions,
    mut predict: impl FnMut(&ImageSlice<T>, Direction) -> Result<Grid<T>>,
) -> Result<Evaluation<T>> {
    if options.bins < 2 {
        return Err(Error::Config(format!("need at least 2 histogram bins, got {}", options.bins)));
    }
    if !(options.epsilon > 0.0) {
        return Err(Error::Config("epsilon must be positive".into()));
    }
    let mut rows = Vec::new();
    let mut maps = Vec::new();
    for (t1, t2) in test.pairs() {
        for &direction in directions {
            let (source, target) = match direction {
                Direction::T1ToT2 => (t1, t2),
                Direction::T2ToT1 => (t2, t1),
            };
            let mut m = ImageMetrics {
                subject_id: source.subject_id().to_string(),
                direction,
                target_domain: direction.target(),
                mae: None,
                psnr: None,
                mi: None,
                failures: Vec::new(),
            };
            match predict(source, direction) {
                Ok(pred) => {
                    if let Some(map) = score(&mut m, target.pixels(), &pred, options) {
                        maps.push(ErrorMapEntry {
                            subject_id: m.subject_id.clone(),
                            direction,
                            map,
                        });
                    }
                }
                Err(e) => m.failures.push(format!("prediction: {e}")),
            }
            if !m.failures.is_empty() {
                log::warn!("{} {}: {}", m.subject_id, direction, m.failures.join("; "));
            }
            rows.push(m);
        }
    }
    maps.sort_by(|a, b| (&a.subject_id, a.direction).cmp(&(&b.subject_id, b.direction)));
    Ok(Evaluation {
        report: MetricReport::new(options, rows),
        error_maps: maps,
    })
}

/// Fills in the metrics of one image. Both images are z-scored first; a
/// constant prediction is only centered, so MAE stays defined while PSNR and
/// MI are recorded as failures.
fn score<T: Scalar>(m: &mut ImageMetrics, truth: &Grid<T>, pred: &Grid<T>, options: MetricOptions) -> Option<ErrorMap<T>> {
    if truth.shape() != pred.shape() {
        m.failures.push(format!(
            "shape mismatch: truth {:?}, prediction {:?}",
            truth.shape(),
            pred.shape()
        ));
        return None;
    }
    if pred.data().iter().any(|v| !v.is_finite()) {
        m.failures.push("prediction has non-finite pixels".into());
        return None;
    }
    let real = match zscore_grid(truth) {
        Ok(z) => z,
        Err(e) => {
            m.failures.push(format!("ground truth: {e}"));
            return None;
        }
    };
    let (syn, syn_ok) = match zscore_grid(pred) {
        Ok(z) => (z, true),
        Err(e) => {
            m.failures.push(format!("prediction: {e}"));
            let n = T::from_usize_lossy(pred.data().len());
            let mean = pred.data().iter().copied().sum::<T>() / n;
            (NormalizedImage::from_grid(pred.map(|v| v - mean)), false)
        }
    };
    m.mae = mae(&real, &syn).ok();
    if syn_ok {
        match psnr(&real, &syn) {
            Ok(v) => m.psnr = Some(v),
            Err(e) => m.failures.push(format!("psnr: {e}")),
        }
        match mutual_information_in(&real, &syn, options.bins, options.mi_unit) {
            Ok(v) => m.mi = Some(v),
            Err(e) => m.failures.push(format!("mi: {e}")),
        }
    }
    relative_error_map(&real, &syn, options.epsilon).ok()
}
