//! Distortion sweeps: every (transform, class, intensity, replicate) cell is
//! evaluated over a whole split and scored with IoU of the distorted class.
//!
//! Cells whose distorted images are provably identical share one evaluation:
//! all zero-intensity cells of a class reuse the undistorted baseline, and a
//! context-mask cell is the masked baseline of its class.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{compute_channel_means, ChannelStats, DatasetManifest, Sample, Split};
use crate::distortions::{apply, Channel, Distortion, DistortionSpec};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::predictors::{
    collect_batch, stage_batch, BatchEntry, BatchManifest, Predictor, PredictorSpec, BATCH_MANIFEST,
};
use crate::raster::{ImageBuffer, LabelMap};
use crate::report::mean_curves;

/// 0.0, 0.1, ..., 1.0
pub fn default_grid() -> Vec<f64> {
    (0..=10).map(|i| f64::from(i) / 10.0).collect()
}

pub const DEFAULT_SWAP_REPLICATES: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformKind {
    Gray,
    PixelSwap,
    ColorDup,
    ContextMask,
}

impl TransformKind {
    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Gray => "gray",
            TransformKind::PixelSwap => "pixel-swap",
            TransformKind::ColorDup => "color-dup",
            TransformKind::ContextMask => "context-mask",
        }
    }

    pub fn is_stochastic(self) -> bool {
        self == TransformKind::PixelSwap
    }
}

impl std::str::FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gray" => Ok(TransformKind::Gray),
            "pixel-swap" => Ok(TransformKind::PixelSwap),
            "color-dup" => Ok(TransformKind::ColorDup),
            "context-mask" => Ok(TransformKind::ContextMask),
            other => Err(Error::InvalidConfig(format!(
                "unknown transform `{other}` (expected gray, pixel-swap, color-dup or context-mask)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformConfig {
    pub kind: TransformKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<Channel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<u32>,
}

impl TransformConfig {
    pub fn new(kind: TransformKind) -> Self {
        Self {
            kind,
            channel: None,
            grid: None,
            replicates: None,
        }
    }

    /// Name used in CSV rows, chart files and staging paths, e.g. `color-dup-r`.
    pub fn label(&self) -> String {
        match (self.kind, self.channel) {
            (TransformKind::ColorDup, Some(ch)) => format!("color-dup-{}", ch.letter()),
            (kind, _) => kind.name().to_string(),
        }
    }

    pub fn grid(&self) -> Vec<f64> {
        self.grid.clone().unwrap_or_else(default_grid)
    }

    pub fn replicates(&self) -> u32 {
        self.replicates.unwrap_or(if self.kind.is_stochastic() {
            DEFAULT_SWAP_REPLICATES
        } else {
            1
        })
    }

    fn validate(&self) -> Result<()> {
        let label = self.label();
        match (self.kind, self.channel) {
            (TransformKind::ColorDup, None) => {
                return Err(Error::InvalidConfig("color-dup needs a channel".into()))
            }
            (TransformKind::ColorDup, Some(_)) | (_, None) => {}
            (_, Some(_)) => {
                return Err(Error::InvalidConfig(format!(
                    "{label}: channel is only valid for color-dup"
                )))
            }
        }
        let grid = self.grid();
        if grid.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "{label}: empty intensity grid"
            )));
        }
        if let Some(x) = grid.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::InvalidConfig(format!(
                "{label}: intensity {x} outside [0, 1]"
            )));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "{label}: intensity grid must be strictly ascending"
            )));
        }
        let names: Vec<String> = grid.iter().map(|&x| intensity_dir(x)).collect();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig(format!(
                "{label}: grid points closer than 1e-6"
            )));
        }
        let replicates = self.replicates();
        if replicates == 0 {
            return Err(Error::InvalidConfig(format!(
                "{label}: replicates must be >= 1"
            )));
        }
        if !self.kind.is_stochastic() && replicates != 1 {
            return Err(Error::InvalidConfig(format!(
                "{label}: deterministic transforms take exactly 1 replicate"
            )));
        }
        Ok(())
    }
}

/// Where the context-mask fill comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FillSource {
    FromSplit { from_split: Split },
    Explicit { means: [f64; 3] },
}

impl Default for FillSource {
    fn default() -> Self {
        FillSource::FromSplit {
            from_split: Split::Train,
        }
    }
}

fn default_split() -> Split {
    Split::Val
}

fn default_max_external() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub manifest: PathBuf,
    #[serde(default = "default_split")]
    pub split: Split,
    pub transforms: Vec<TransformConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<u8>>,
    pub predictor: PredictorSpec,
    #[serde(default)]
    pub seed: u64,
    /// Replace every non-target pixel with the fill in every run.
    #[serde(default)]
    pub context_masking: bool,
    #[serde(default)]
    pub fill_stats: FillSource,
    /// Cap on simultaneous external predictor invocations.
    #[serde(default = "default_max_external")]
    pub max_external: usize,
    /// Directory the manifest path is resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl SweepConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::MissingFile {
                    path: path.to_path_buf(),
                })
            }
            Err(e) => return Err(Error::io(path, e)),
        };
        Self::from_json(&text, path.parent().unwrap_or(Path::new("")))
    }

    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut config: SweepConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.base_dir = base_dir.into();
        config.validate()?;
        Ok(config)
    }

    pub fn manifest_path(&self) -> PathBuf {
        if self.manifest.is_absolute() {
            self.manifest.clone()
        } else {
            self.base_dir.join(&self.manifest)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.transforms.is_empty() {
            return Err(Error::InvalidConfig("no transforms configured".into()));
        }
        let mut labels = Vec::new();
        for t in &self.transforms {
            t.validate()?;
            let label = t.label();
            if labels.contains(&label) {
                return Err(Error::InvalidConfig(format!(
                    "transform `{label}` listed twice"
                )));
            }
            labels.push(label);
        }
        if let Some(classes) = &self.classes {
            if classes.is_empty() {
                return Err(Error::InvalidConfig("empty class list".into()));
            }
        }
        if self.max_external == 0 {
            return Err(Error::InvalidConfig("max_external must be >= 1".into()));
        }
        Ok(())
    }

    fn needs_fill(&self) -> bool {
        self.context_masking
            || self
                .transforms
                .iter()
                .any(|t| t.kind == TransformKind::ContextMask)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Total number of report records this config yields, given the
    /// resolved class count.
    pub fn cell_count(&self, class_count: usize) -> usize {
        self.transforms
            .iter()
            .map(|t| t.grid().len() * t.replicates() as usize * class_count)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SweepOptions {
    /// Worker threads; `None` uses every core.
    pub jobs: Option<usize>,
}

impl SweepOptions {
    pub fn with_jobs(jobs: usize) -> Self {
        Self { jobs: Some(jobs) }
    }

    pub(crate) fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        match self.jobs {
            None => Ok(f()),
            Some(jobs) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(jobs.max(1))
                    .build()
                    .map_err(|e| Error::InvalidConfig(e.to_string()))?;
                Ok(pool.install(f))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub transform: String,
    pub class_id: u8,
    pub intensity: f64,
    pub replicate: u32,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// IoU of `class_id`; `None` when the class is absent from truth and prediction.
    pub iou: Option<f64>,
    /// Mean over target classes of the replicate-averaged IoU at this
    /// (transform, intensity).
    pub mean_iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_digest: String,
    pub started_unix: u64,
    pub finished_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub split: Split,
    pub seed: u64,
    pub class_names: BTreeMap<u8, String>,
    pub records: Vec<SweepRecord>,
    pub provenance: Provenance,
}

impl SweepReport {
    pub fn transforms(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.transform) {
                out.push(r.transform.clone());
            }
        }
        out
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// The report with timestamps zeroed, for reproducibility comparisons.
    pub fn without_timestamps(&self) -> Self {
        let mut copy = self.clone();
        copy.provenance.started_unix = 0;
        copy.provenance.finished_unix = 0;
        copy
    }
}

/// A failed sweep along with every record that did complete.
#[derive(Debug)]
pub struct SweepFailure {
    pub error: Error,
    pub partial: Option<Box<SweepReport>>,
}

impl std::fmt::Display for SweepFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for SweepFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Error> for SweepFailure {
    fn from(error: Error) -> Self {
        Self {
            error,
            partial: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cell {
    transform: usize,
    class_id: u8,
    intensity: f64,
    replicate: u32,
}

/// Identifies a distinct set of distorted images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum EvalKey {
    Baseline { masked_class: Option<u8> },
    Cell(usize),
}

struct Prepared {
    config: SweepConfig,
    manifest: DatasetManifest,
    samples: Vec<Sample>,
    classes: Vec<u8>,
    fill: Option<ChannelStats>,
    started: u64,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn intensity_dir(x: f64) -> String {
    format!("{x:.6}")
}

/// Images for one evaluation, or the failing image id and error.
type ImageResult = std::result::Result<Vec<(String, ImageBuffer)>, (Option<String>, Error)>;

impl Prepared {
    fn new(config: &SweepConfig) -> Result<Self> {
        config.validate()?;
        let started = unix_now();
        let manifest = DatasetManifest::load(config.manifest_path())?;
        if !manifest.classes.contains_key(&manifest.background_id) {
            return Err(Error::MalformedManifest(format!(
                "background id {} is not in the class table",
                manifest.background_id
            )));
        }
        let mut classes = match &config.classes {
            Some(c) => c.clone(),
            None => manifest.foreground_classes(),
        };
        classes.sort_unstable();
        classes.dedup();
        for &c in &classes {
            if c == manifest.background_id {
                return Err(Error::InvalidConfig(format!(
                    "class {c} is the background class"
                )));
            }
            if !manifest.classes.contains_key(&c) {
                return Err(Error::UnknownClass(c));
            }
        }
        if classes.is_empty() {
            return Err(Error::InvalidConfig("no target classes".into()));
        }
        let samples = manifest.load_split(config.split)?;
        let fill = if config.needs_fill() {
            Some(match &config.fill_stats {
                FillSource::FromSplit { from_split } => {
                    compute_channel_means(&manifest, *from_split)?
                }
                FillSource::Explicit { means } => ChannelStats::new(*means, 1)?,
            })
        } else {
            None
        };
        Ok(Self {
            config: config.clone(),
            manifest,
            samples,
            classes,
            fill,
            started,
        })
    }

    fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for (t, transform) in self.config.transforms.iter().enumerate() {
            for &class_id in &self.classes {
                for intensity in transform.grid() {
                    for replicate in 0..transform.replicates() {
                        cells.push(Cell {
                            transform: t,
                            class_id,
                            intensity,
                            replicate,
                        });
                    }
                }
            }
        }
        cells
    }

    fn distortion(&self, cell: &Cell) -> Distortion {
        let t = &self.config.transforms[cell.transform];
        match t.kind {
            TransformKind::Gray => Distortion::GrayScale {
                lambda: cell.intensity,
            },
            TransformKind::PixelSwap => Distortion::PixelSwap {
                proportion: cell.intensity,
                replicate: cell.replicate,
            },
            TransformKind::ColorDup => Distortion::ColorDuplication {
                channel: t.channel.expect("validated"),
                lambda: cell.intensity,
            },
            TransformKind::ContextMask => Distortion::ContextMask {
                fill: self.fill.expect("fill resolved for context-mask"),
            },
        }
    }

    fn key(&self, index: usize, cell: &Cell) -> EvalKey {
        let t = &self.config.transforms[cell.transform];
        if t.kind == TransformKind::ContextMask {
            return EvalKey::Baseline {
                masked_class: Some(cell.class_id),
            };
        }
        if cell.intensity == 0.0 {
            return EvalKey::Baseline {
                masked_class: self.config.context_masking.then_some(cell.class_id),
            };
        }
        EvalKey::Cell(index)
    }

    fn spec_for(&self, cell: &Cell, image_index: usize) -> DistortionSpec {
        DistortionSpec {
            distortion: self.distortion(cell),
            class_id: cell.class_id,
            seed: self.config.seed,
            image_index: image_index as u64,
            context_fill: if self.config.context_masking {
                self.fill
            } else {
                None
            },
        }
    }

    /// Distorted copies of every image in the split for one cell.
    fn distort(&self, cell: &Cell) -> ImageResult {
        self.samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                apply(&s.image, &s.labels, &self.spec_for(cell, i))
                    .map(|img| (s.id.clone(), img))
                    .map_err(|e| (Some(s.id.clone()), e))
            })
            .collect()
    }

    fn undistorted(&self, masked_class: Option<u8>) -> ImageResult {
        self.samples
            .par_iter()
            .map(|s| {
                let image = match masked_class {
                    Some(c) => crate::distortions::context_mask(
                        &s.image,
                        &s.labels,
                        c,
                        self.fill.as_ref().expect("fill resolved for masking"),
                    )
                    .map_err(|e| (Some(s.id.clone()), e))?,
                    None => s.image.clone(),
                };
                Ok((s.id.clone(), image))
            })
            .collect()
    }

    fn score(
        &self,
        predictions: &[(String, LabelMap)],
    ) -> std::result::Result<ConfusionMatrix, (Option<String>, Error)> {
        let by_id: HashMap<&str, &LabelMap> =
            predictions.iter().map(|(id, m)| (id.as_str(), m)).collect();
        let mut cm = ConfusionMatrix::new(self.manifest.classes.keys().copied());
        let missing: Vec<String> = self
            .samples
            .iter()
            .filter(|s| !by_id.contains_key(s.id.as_str()))
            .map(|s| s.id.clone())
            .collect();
        if !missing.is_empty() {
            return Err((None, Error::MissingPrediction { ids: missing }));
        }
        for s in &self.samples {
            cm.accumulate(&s.labels, by_id[s.id.as_str()], self.manifest.background_id)
                .map_err(|e| (Some(s.id.clone()), e))?;
        }
        Ok(cm)
    }

    fn tag(&self, cell: &Cell, image_id: Option<String>, error: Error) -> Error {
        Error::Cell {
            transform: self.config.transforms[cell.transform].label(),
            class_id: cell.class_id,
            intensity: cell.intensity,
            replicate: cell.replicate,
            image_id,
            source: Box::new(error),
        }
    }

    fn record(&self, cell: &Cell, cm: &ConfusionMatrix) -> SweepRecord {
        let (tp, fp, fn_) = cm.outcome(cell.class_id);
        SweepRecord {
            transform: self.config.transforms[cell.transform].label(),
            class_id: cell.class_id,
            intensity: cell.intensity,
            replicate: cell.replicate,
            tp,
            fp,
            fn_,
            iou: cm.iou(cell.class_id),
            mean_iou: None,
        }
    }

    fn report(&self, mut records: Vec<SweepRecord>) -> SweepReport {
        let curves = mean_curves(
            records
                .iter()
                .map(|r| (r.transform.as_str(), r.class_id, r.intensity, r.iou)),
        );
        for r in &mut records {
            r.mean_iou = curves
                .get(&(r.transform.clone(), r.intensity.to_bits()))
                .copied()
                .flatten();
        }
        SweepReport {
            split: self.config.split,
            seed: self.config.seed,
            class_names: self
                .classes
                .iter()
                .map(|&c| (c, self.manifest.class_name(c).to_string()))
                .collect(),
            records,
            provenance: Provenance {
                seed: self.config.seed,
                config_digest: self.config.digest(),
                started_unix: self.started,
                finished_unix: unix_now(),
            },
        }
    }

    fn cell_dir(&self, root: &Path, cell: &Cell) -> PathBuf {
        root.join(self.config.transforms[cell.transform].label())
            .join(cell.class_id.to_string())
            .join(intensity_dir(cell.intensity))
            .join(cell.replicate.to_string())
    }

    fn cell_name(&self, cell: &Cell) -> String {
        format!(
            "{}/{}/{}/{}",
            self.config.transforms[cell.transform].label(),
            cell.class_id,
            intensity_dir(cell.intensity),
            cell.replicate
        )
    }
}

/// Counting semaphore bounding concurrent external predictor runs.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut free = self.free.lock().unwrap();
            while *free == 0 {
                free = self.cv.wait(free).unwrap();
            }
            *free -= 1;
        }
        let out = f();
        *self.free.lock().unwrap() += 1;
        self.cv.notify_one();
        out
    }
}

/// Runs the whole sweep in-process against the configured predictor.
pub fn run_sweep(
    config: &SweepConfig,
    options: &SweepOptions,
) -> std::result::Result<SweepReport, SweepFailure> {
    options.install(|| run_sweep_inner(config))?
}

fn run_sweep_inner(config: &SweepConfig) -> std::result::Result<SweepReport, SweepFailure> {
    let prep = Prepared::new(config)?;
    let predictor: Predictor = config.predictor.build(&prep.samples)?;
    let gate = Gate::new(config.max_external);
    let cells = prep.cells();

    let mut first_cell: BTreeMap<EvalKey, usize> = BTreeMap::new();
    let keys: Vec<EvalKey> = cells
        .iter()
        .enumerate()
        .map(|(i, cell)| {
            let key = prep.key(i, cell);
            first_cell.entry(key).or_insert(i);
            key
        })
        .collect();

    let evaluated: HashMap<EvalKey, std::result::Result<ConfusionMatrix, Error>> = first_cell
        .par_iter()
        .map(|(&key, &i)| {
            let cell = &cells[i];
            let result = (|| {
                let images = match key {
                    EvalKey::Baseline { masked_class } => prep.undistorted(masked_class)?,
                    EvalKey::Cell(_) => prep.distort(cell)?,
                };
                let predictions = if predictor.is_external() {
                    gate.run(|| predictor.predict_batch(&images))
                } else {
                    predictor.predict_batch(&images)
                }
                .map_err(|e| (None, e))?;
                prep.score(&predictions)
            })();
            (
                key,
                result.map_err(|(image_id, e)| prep.tag(cell, image_id, e)),
            )
        })
        .collect();

    let mut records = Vec::with_capacity(cells.len());
    let mut failure = None;
    for (cell, key) in cells.iter().zip(&keys) {
        match &evaluated[key] {
            Ok(cm) => records.push(prep.record(cell, cm)),
            Err(_) if failure.is_some() => {}
            Err(_) => failure = Some(*key),
        }
    }
    let report = prep.report(records);
    match failure {
        None => Ok(report),
        Some(key) => {
            let mut evaluated = evaluated;
            let error = evaluated.remove(&key).expect("key evaluated").unwrap_err();
            Err(SweepFailure {
                error,
                partial: Some(Box::new(report)),
            })
        }
    }
}

pub const STAGING_MARKER: &str = "staging.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagingSummary {
    pub config_digest: String,
    pub cells: usize,
    pub images_per_cell: usize,
}

/// Writes every cell's distorted images, exactly as `run_sweep` would see
/// them, into `root/<transform>/<class>/<intensity>/<replicate>/`.
pub fn stage_sweep(
    config: &SweepConfig,
    root: &Path,
    options: &SweepOptions,
) -> Result<StagingSummary> {
    options.install(|| {
        let prep = Prepared::new(config)?;
        let cells = prep.cells();
        cells.par_iter().try_for_each(|cell| -> Result<()> {
            let dir = prep.cell_dir(root, cell);
            let images = prep
                .distort(cell)
                .map_err(|(id, e)| prep.tag(cell, id, e))?;
            let batch = stage_batch(&dir.join("input_dir"), &images)?;
            let output = dir.join("output_dir");
            std::fs::create_dir_all(&output).map_err(|e| Error::io(&output, e))?;
            let path = dir.join(BATCH_MANIFEST);
            std::fs::write(&path, batch.to_json()).map_err(|e| Error::io(&path, e))
        })?;
        let summary = StagingSummary {
            config_digest: config.digest(),
            cells: cells.len(),
            images_per_cell: prep.samples.len(),
        };
        let path = root.join(STAGING_MARKER);
        std::fs::write(
            &path,
            serde_json::to_string_pretty(&summary).expect("serializes"),
        )
        .map_err(|e| Error::io(&path, e))?;
        Ok(summary)
    })?
}

/// Scores predictions placed in each staged cell's `output_dir`.
pub fn collect_sweep(
    config: &SweepConfig,
    root: &Path,
    options: &SweepOptions,
) -> Result<SweepReport> {
    options.install(|| {
        let prep = Prepared::new(config)?;
        let marker = root.join(STAGING_MARKER);
        let summary: StagingSummary = match std::fs::read_to_string(&marker) {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| Error::MalformedManifest(format!("{}: {e}", marker.display())))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::MissingFile { path: marker })
            }
            Err(e) => return Err(Error::io(&marker, e)),
        };
        if summary.config_digest != config.digest() {
            return Err(Error::InvalidConfig(
                "staging tree was produced from a different config".into(),
            ));
        }
        let batch = BatchManifest {
            images: prep
                .samples
                .iter()
                .map(|s| BatchEntry {
                    id: s.id.clone(),
                    file: format!("{}.png", s.id),
                    width: s.image.width(),
                    height: s.image.height(),
                })
                .collect(),
        };
        let cells = prep.cells();

        let mut missing = Vec::new();
        for cell in &cells {
            let out = prep.cell_dir(root, cell).join("output_dir");
            for s in &prep.samples {
                if !out.join(format!("{}.png", s.id)).is_file() {
                    missing.push(format!("{}:{}", prep.cell_name(cell), s.id));
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingPrediction { ids: missing });
        }

        let records = cells
            .par_iter()
            .map(|cell| {
                let out = prep.cell_dir(root, cell).join("output_dir");
                let predictions =
                    collect_batch(&out, &batch).map_err(|e| prep.tag(cell, None, e))?;
                let cm = prep
                    .score(&predictions)
                    .map_err(|(id, e)| prep.tag(cell, id, e))?;
                Ok(prep.record(cell, &cm))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(prep.report(records))
    })?
}

/// Confusion matrix of precomputed predictions `<pred_dir>/<id>.png`
/// against the ground truth of a split.
pub fn evaluate_predictions(
    manifest: &DatasetManifest,
    split: Split,
    pred_dir: &Path,
) -> Result<ConfusionMatrix> {
    let samples = manifest.load_split(split)?;
    let batch = BatchManifest {
        images: samples
            .iter()
            .map(|s| BatchEntry {
                id: s.id.clone(),
                file: format!("{}.png", s.id),
                width: s.labels.width(),
                height: s.labels.height(),
            })
            .collect(),
    };
    let predictions = collect_batch(pred_dir, &batch)?;
    let mut cm = ConfusionMatrix::new(manifest.classes.keys().copied());
    for (s, (_, pred)) in samples.iter().zip(&predictions) {
        cm.accumulate(&s.labels, pred, manifest.background_id)?;
    }
    Ok(cm)
}
