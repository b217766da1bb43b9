//! Segmentation predictors: toy built-ins for tests, plus the directory
//! protocol that lets any external model take part in a sweep.
//!
//! External protocol: the harness writes `<id>.png` for every image and a
//! `batch.json` listing them into `{input_dir}`, runs the command, then reads
//! `{output_dir}/<id>.png` as 8-bit single-channel label maps.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::raster::{ensure_same_dims, load_labels, save_image, ImageBuffer, LabelMap, Rgb};

pub const DEFAULT_TIMEOUT_SECS: u64 = 3600;
pub const BATCH_MANIFEST: &str = "batch.json";

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_SECS
}

/// Serializable description of a predictor, as found in sweep configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PredictorSpec {
    Oracle,
    NearestColor {
        #[serde(deserialize_with = "class_keyed")]
        centroids: BTreeMap<u8, Rgb>,
    },
    ConstantClass {
        class_id: u8,
    },
    Variance {
        threshold: f64,
        window: u32,
        low_class: u8,
        high_class: u8,
    },
    External {
        command: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        staging_dir: Option<PathBuf>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

// Internally tagged enums buffer their content, which loses serde_json's
// string-to-integer map key coercion.
fn class_keyed<'de, D>(deserializer: D) -> std::result::Result<BTreeMap<u8, Rgb>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    let raw = BTreeMap::<String, Rgb>::deserialize(deserializer)?;
    raw.into_iter()
        .map(|(k, v)| {
            k.parse::<u8>()
                .map(|id| (id, v))
                .map_err(|_| serde::de::Error::custom(format!("invalid class id `{k}`")))
        })
        .collect()
}

impl PredictorSpec {
    /// Builds a predictor. `truth` feeds the oracle and is ignored otherwise.
    pub fn build(&self, truth: &[Sample]) -> Result<Predictor> {
        Ok(match self {
            PredictorSpec::Oracle => {
                Predictor::oracle(truth.iter().map(|s| (s.id.clone(), s.labels.clone())))
            }
            PredictorSpec::NearestColor { centroids } => {
                if centroids.is_empty() {
                    return Err(Error::InvalidConfig("nearest-color needs centroids".into()));
                }
                Predictor::NearestColor {
                    centroids: centroids.clone(),
                }
            }
            PredictorSpec::ConstantClass { class_id } => Predictor::ConstantClass {
                class_id: *class_id,
            },
            PredictorSpec::Variance {
                threshold,
                window,
                low_class,
                high_class,
            } => make_variance_predictor(*threshold, *window, *low_class, *high_class)?,
            PredictorSpec::External {
                command,
                staging_dir,
                timeout_secs,
            } => Predictor::External(ExternalPredictor::new(
                command.clone(),
                staging_dir.clone(),
                *timeout_secs,
            )?),
        })
    }

    pub fn is_external(&self) -> bool {
        matches!(self, PredictorSpec::External { .. })
    }
}

#[derive(Debug, Clone)]
pub enum Predictor {
    Oracle {
        truth: Arc<HashMap<String, LabelMap>>,
    },
    NearestColor {
        centroids: BTreeMap<u8, Rgb>,
    },
    ConstantClass {
        class_id: u8,
    },
    Variance {
        threshold: f64,
        window: u32,
        low_class: u8,
        high_class: u8,
    },
    External(ExternalPredictor),
}

pub fn make_variance_predictor(
    threshold: f64,
    window: u32,
    low_class: u8,
    high_class: u8,
) -> Result<Predictor> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "variance window must be odd and >= 3, got {window}"
        )));
    }
    Ok(Predictor::Variance {
        threshold,
        window,
        low_class,
        high_class,
    })
}

impl Predictor {
    pub fn oracle(truth: impl IntoIterator<Item = (String, LabelMap)>) -> Self {
        Predictor::Oracle {
            truth: Arc::new(truth.into_iter().collect()),
        }
    }

    pub fn is_external(&self) -> bool {
        matches!(self, Predictor::External(_))
    }

    /// One label map per input image, in input order.
    pub fn predict_batch(
        &self,
        images: &[(String, ImageBuffer)],
    ) -> Result<Vec<(String, LabelMap)>> {
        if let Predictor::External(ext) = self {
            return ext.predict_batch(images);
        }
        images
            .par_iter()
            .map(|(id, image)| {
                let map = self.predict_one(id, image)?;
                ensure_same_dims(image.dims(), map.dims())?;
                Ok((id.clone(), map))
            })
            .collect()
    }

    fn predict_one(&self, id: &str, image: &ImageBuffer) -> Result<LabelMap> {
        let (w, h) = image.dims();
        match self {
            Predictor::Oracle { truth } => {
                truth
                    .get(id)
                    .cloned()
                    .ok_or_else(|| Error::MissingPrediction {
                        ids: vec![id.to_string()],
                    })
            }
            Predictor::NearestColor { centroids } => Ok(LabelMap::new(
                w,
                h,
                image
                    .pixels()
                    .iter()
                    .map(|&px| nearest_centroid(centroids, px))
                    .collect(),
            )?),
            Predictor::ConstantClass { class_id } => Ok(LabelMap::filled(w, h, *class_id)),
            Predictor::Variance {
                threshold,
                window,
                low_class,
                high_class,
            } => {
                let variance = local_variance(image, *window);
                Ok(LabelMap::new(
                    w,
                    h,
                    variance
                        .into_iter()
                        .map(|v| {
                            if v < *threshold {
                                *low_class
                            } else {
                                *high_class
                            }
                        })
                        .collect(),
                )?)
            }
            Predictor::External(_) => unreachable!("external predictors run whole batches"),
        }
    }
}

/// Class whose centroid is closest in squared RGB distance; ties go to the
/// lowest class id.
fn nearest_centroid(centroids: &BTreeMap<u8, Rgb>, px: Rgb) -> u8 {
    let mut best = (u32::MAX, 0u8);
    for (&class_id, centroid) in centroids {
        let d: u32 = px
            .iter()
            .zip(centroid)
            .map(|(&a, &b)| {
                let diff = i32::from(a) - i32::from(b);
                (diff * diff) as u32
            })
            .sum();
        if d < best.0 {
            best = (d, class_id);
        }
    }
    best.1
}

/// Per-pixel population variance over a `window`×`window` neighbourhood,
/// averaged over the three channels. Out-of-range neighbours are clamped to
/// the nearest edge pixel.
pub fn local_variance(image: &ImageBuffer, window: u32) -> Vec<f64> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let r = (window / 2) as usize;
    let (pw, ph) = (w + 2 * r, h + 2 * r);

    // Integral images of the replicate-padded raster, per channel.
    let stride = pw + 1;
    let mut sum = vec![[0u64; 3]; stride * (ph + 1)];
    let mut sq = vec![[0u64; 3]; stride * (ph + 1)];
    for py in 0..ph {
        let sy = py.saturating_sub(r).min(h - 1);
        let mut row_sum = [0u64; 3];
        let mut row_sq = [0u64; 3];
        for px in 0..pw {
            let sx = px.saturating_sub(r).min(w - 1);
            let p = image.pixels()[sy * w + sx];
            for ch in 0..3 {
                let v = u64::from(p[ch]);
                row_sum[ch] += v;
                row_sq[ch] += v * v;
                sum[(py + 1) * stride + px + 1][ch] = sum[py * stride + px + 1][ch] + row_sum[ch];
                sq[(py + 1) * stride + px + 1][ch] = sq[py * stride + px + 1][ch] + row_sq[ch];
            }
        }
    }

    let n = u128::from(window) * u128::from(window);
    let k = window as usize;
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (y0, x0, y1, x1) = (y, x, y + k, x + k);
            let mut total = 0.0;
            for ch in 0..3 {
                let rect = |t: &[[u64; 3]]| {
                    t[y1 * stride + x1][ch] + t[y0 * stride + x0][ch]
                        - t[y0 * stride + x1][ch]
                        - t[y1 * stride + x0][ch]
                };
                let s = u128::from(rect(&sum));
                let q = u128::from(rect(&sq));
                total += (n * q - s * s) as f64 / (n * n) as f64;
            }
            out.push(total / 3.0);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub id: String,
    pub file: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchManifest {
    pub images: Vec<BatchEntry>,
}

impl BatchManifest {
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
        serde_json::from_str(&text).map_err(|e| Error::MalformedManifest(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("batch manifest serializes")
    }
}

/// Writes `<id>.png` for each image and `batch.json` into `input_dir`.
pub fn stage_batch(input_dir: &Path, images: &[(String, ImageBuffer)]) -> Result<BatchManifest> {
    std::fs::create_dir_all(input_dir).map_err(|e| Error::io(input_dir, e))?;
    images
        .par_iter()
        .try_for_each(|(id, image)| save_image(image, input_dir.join(format!("{id}.png"))))?;
    let manifest = BatchManifest {
        images: images
            .iter()
            .map(|(id, image)| BatchEntry {
                id: id.clone(),
                file: format!("{id}.png"),
                width: image.width(),
                height: image.height(),
            })
            .collect(),
    };
    let path = input_dir.join(BATCH_MANIFEST);
    std::fs::write(&path, manifest.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads `<id>.png` for every batch entry from `output_dir`. Every missing id
/// is reported at once.
pub fn collect_batch(output_dir: &Path, batch: &BatchManifest) -> Result<Vec<(String, LabelMap)>> {
    let missing: Vec<String> = batch
        .images
        .iter()
        .filter(|e| !output_dir.join(format!("{}.png", e.id)).is_file())
        .map(|e| e.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingPrediction { ids: missing });
    }
    batch
        .images
        .par_iter()
        .map(|e| {
            let map = load_labels(output_dir.join(format!("{}.png", e.id)))?;
            ensure_same_dims((e.width, e.height), map.dims())?;
            Ok((e.id.clone(), map))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalPredictor {
    command: String,
    staging_dir: Option<PathBuf>,
    timeout: Duration,
}

impl ExternalPredictor {
    pub fn new(command: String, staging_dir: Option<PathBuf>, timeout_secs: u64) -> Result<Self> {
        if !command.contains("{input_dir}") || !command.contains("{output_dir}") {
            return Err(Error::InvalidConfig(
                "external command must contain {input_dir} and {output_dir}".into(),
            ));
        }
        Ok(Self {
            command,
            staging_dir,
            timeout: Duration::from_secs(timeout_secs),
        })
    }

    pub fn predict_batch(
        &self,
        images: &[(String, ImageBuffer)],
    ) -> Result<Vec<(String, LabelMap)>> {
        let scratch = match &self.staging_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                tempfile::Builder::new().prefix("batch-").tempdir_in(dir)
            }
            None => tempfile::Builder::new().prefix("eo-distort-").tempdir(),
        }
        .map_err(|e| Error::io(self.staging_dir.clone().unwrap_or_default(), e))?;
        let input_dir = scratch.path().join("input_dir");
        let output_dir = scratch.path().join("output_dir");
        std::fs::create_dir_all(&output_dir).map_err(|e| Error::io(&output_dir, e))?;
        let batch = stage_batch(&input_dir, images)?;
        self.run(&input_dir, &output_dir)?;
        collect_batch(&output_dir, &batch)
    }

    /// Runs the command once against prepared directories.
    pub fn run(&self, input_dir: &Path, output_dir: &Path) -> Result<()> {
        let script = self
            .command
            .replace("{input_dir}", &shell_quote(input_dir))
            .replace("{output_dir}", &shell_quote(output_dir));
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&script)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::ExternalCommandFailed {
                status: "spawn failure".into(),
                stderr: e.to_string(),
            })?;
        let drain = |pipe: Option<Box<dyn Read + Send>>| {
            std::thread::spawn(move || {
                let mut text = String::new();
                if let Some(mut p) = pipe {
                    let _ = p.read_to_string(&mut text);
                }
                text
            })
        };
        let _stdout = drain(
            child
                .stdout
                .take()
                .map(|p| Box::new(p) as Box<dyn Read + Send>),
        );
        let stderr = drain(
            child
                .stderr
                .take()
                .map(|p| Box::new(p) as Box<dyn Read + Send>),
        );

        let start = Instant::now();
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if start.elapsed() >= self.timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(Error::ExternalTimeout(self.timeout.as_secs()));
                }
                Ok(None) => std::thread::sleep(Duration::from_millis(5)),
                Err(e) => {
                    return Err(Error::ExternalCommandFailed {
                        status: "wait failure".into(),
                        stderr: e.to_string(),
                    })
                }
            }
        };
        if !status.success() {
            return Err(Error::ExternalCommandFailed {
                status: status.to_string(),
                stderr: stderr.join().unwrap_or_default().trim().to_string(),
            });
        }
        Ok(())
    }
}

fn shell_quote(path: &Path) -> String {
    format!("'{}'", path.display().to_string().replace('\'', r"'\''"))
}
