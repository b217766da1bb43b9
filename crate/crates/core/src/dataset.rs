//! Dataset manifests and split-level statistics.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{load_image, load_labels, ImageBuffer, LabelMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!(
                "unknown split `{other}` (expected train, val or test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub labels: PathBuf,
    pub split: Split,
}

impl ManifestEntry {
    /// Identifier used for staged and predicted files: the image file stem.
    pub fn id(&self) -> String {
        self.image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

/// The class table used when a manifest does not carry its own.
pub fn default_class_table() -> BTreeMap<u8, String> {
    [
        "background",
        "bare",
        "range",
        "developed",
        "road",
        "tree",
        "water",
        "agriculture",
        "building",
    ]
    .iter()
    .enumerate()
    .map(|(id, name)| (id as u8, name.to_string()))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default)]
    pub background_id: u8,
    #[serde(default = "default_class_table")]
    pub classes: BTreeMap<u8, String>,
    pub entries: Vec<ManifestEntry>,
    /// Directory relative entry paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = match std::fs::read_to_string(path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::MissingFile {
                    path: path.to_path_buf(),
                })
            }
            Err(e) => return Err(Error::io(path, e)),
        };
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        Self::from_json(&text, base)
    }

    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut manifest: DatasetManifest =
            serde_json::from_str(text).map_err(|e| Error::MalformedManifest(e.to_string()))?;
        manifest.base_dir = base_dir.into();
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::MalformedManifest(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn split_entries(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    pub fn class_name(&self, class_id: u8) -> &str {
        self.classes
            .get(&class_id)
            .map(String::as_str)
            .unwrap_or("")
    }

    /// Every class in the table except background, ascending.
    pub fn foreground_classes(&self) -> Vec<u8> {
        self.classes
            .keys()
            .copied()
            .filter(|&c| c != self.background_id)
            .collect()
    }

    /// Loads every image/label pair of a split in manifest order, checking
    /// that ids are unique and that each pair has matching dimensions.
    pub fn load_split(&self, split: Split) -> Result<Vec<Sample>> {
        let entries = self.split_entries(split);
        if entries.is_empty() {
            return Err(Error::EmptySplit(split.to_string()));
        }
        let mut seen = HashSet::new();
        for entry in &entries {
            if !seen.insert(entry.id()) {
                return Err(Error::MalformedManifest(format!(
                    "duplicate image id `{}` in split {split}",
                    entry.id()
                )));
            }
        }
        entries
            .par_iter()
            .map(|entry| {
                let image = load_image(self.resolve(&entry.image))?;
                let labels = load_labels(self.resolve(&entry.labels))?;
                crate::raster::ensure_same_dims(image.dims(), labels.dims())?;
                Ok(Sample {
                    id: entry.id(),
                    image,
                    labels,
                })
            })
            .collect()
    }
}

/// One loaded image with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: ImageBuffer,
    pub labels: LabelMap,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DimensionMismatch {
        image: PathBuf,
        labels: PathBuf,
        image_dims: (u32, u32),
        label_dims: (u32, u32),
    },
    UnknownClass {
        labels: PathBuf,
        class_id: u8,
    },
    BackgroundNotInTable {
        background_id: u8,
    },
    Unreadable {
        path: PathBuf,
        reason: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DimensionMismatch {
                image,
                labels,
                image_dims,
                label_dims,
            } => write!(
                f,
                "{} is {}x{} but {} is {}x{}",
                image.display(),
                image_dims.0,
                image_dims.1,
                labels.display(),
                label_dims.0,
                label_dims.1
            ),
            Violation::UnknownClass { labels, class_id } => write!(
                f,
                "{} contains class id {class_id}, which is not in the class table",
                labels.display()
            ),
            Violation::BackgroundNotInTable { background_id } => {
                write!(f, "background id {background_id} is not in the class table")
            }
            Violation::Unreadable { path, reason } => {
                write!(f, "{} cannot be read: {reason}", path.display())
            }
        }
    }
}

/// Lists every consistency problem in the manifest, in entry order.
pub fn validate_manifest(manifest: &DatasetManifest) -> Vec<Violation> {
    let mut violations = Vec::new();
    if !manifest.classes.contains_key(&manifest.background_id) {
        violations.push(Violation::BackgroundNotInTable {
            background_id: manifest.background_id,
        });
    }
    for entry in &manifest.entries {
        let image_path = manifest.resolve(&entry.image);
        let label_path = manifest.resolve(&entry.labels);
        let image = load_image(&image_path);
        let labels = load_labels(&label_path);
        if let Err(e) = &image {
            violations.push(Violation::Unreadable {
                path: image_path.clone(),
                reason: e.to_string(),
            });
        }
        let labels = match labels {
            Ok(labels) => labels,
            Err(e) => {
                violations.push(Violation::Unreadable {
                    path: label_path,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        if let Ok(image) = &image {
            if image.dims() != labels.dims() {
                violations.push(Violation::DimensionMismatch {
                    image: image_path,
                    labels: label_path.clone(),
                    image_dims: image.dims(),
                    label_dims: labels.dims(),
                });
            }
        }
        let present: BTreeSet<u8> = labels.labels().iter().copied().collect();
        for class_id in present {
            if !manifest.classes.contains_key(&class_id) {
                violations.push(Violation::UnknownClass {
                    labels: label_path.clone(),
                    class_id,
                });
            }
        }
    }
    violations
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean_r: f64,
    pub mean_g: f64,
    pub mean_b: f64,
    pub pixel_count: u64,
}

impl ChannelStats {
    pub fn new(means: [f64; 3], pixel_count: u64) -> Result<Self> {
        if pixel_count == 0 {
            return Err(Error::InvalidConfig(
                "channel stats need pixel_count > 0".into(),
            ));
        }
        if means.iter().any(|m| !(0.0..=255.0).contains(m)) {
            return Err(Error::InvalidConfig(format!(
                "channel means {means:?} outside [0, 255]"
            )));
        }
        Ok(Self {
            mean_r: means[0],
            mean_g: means[1],
            mean_b: means[2],
            pixel_count,
        })
    }

    pub fn means(&self) -> [f64; 3] {
        [self.mean_r, self.mean_g, self.mean_b]
    }

    /// Exact per-channel sums folded into means; division happens last.
    pub fn from_sums(sums: [u64; 3], pixel_count: u64) -> Result<Self> {
        if pixel_count == 0 {
            return Err(Error::InvalidConfig(
                "channel stats need pixel_count > 0".into(),
            ));
        }
        let n = pixel_count as f64;
        Self::new(sums.map(|s| s as f64 / n), pixel_count)
    }
}

fn channel_sums(image: &ImageBuffer) -> ([u64; 3], u64) {
    let mut sums = [0u64; 3];
    for px in image.pixels() {
        for (s, &v) in sums.iter_mut().zip(px) {
            *s += u64::from(v);
        }
    }
    (sums, image.pixels().len() as u64)
}

/// Pixel-weighted per-channel means over every image of a split.
pub fn compute_channel_means(manifest: &DatasetManifest, split: Split) -> Result<ChannelStats> {
    let entries = manifest.split_entries(split);
    if entries.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    let partials = entries
        .par_iter()
        .map(|e| load_image(manifest.resolve(&e.image)).map(|img| channel_sums(&img)))
        .collect::<Result<Vec<_>>>()?;
    let (sums, count) = partials
        .into_iter()
        .fold(([0u64; 3], 0u64), |(mut acc, n), (s, c)| {
            for (a, v) in acc.iter_mut().zip(s) {
                *a += v;
            }
            (acc, n + c)
        });
    if count == 0 {
        return Err(Error::EmptySplit(split.to_string()));
    }
    ChannelStats::from_sums(sums, count)
}

pub fn class_pixel_histogram(
    manifest: &DatasetManifest,
    split: Split,
) -> Result<BTreeMap<u8, u64>> {
    let entries = manifest.split_entries(split);
    if entries.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    let partials = entries
        .par_iter()
        .map(|e| {
            load_labels(manifest.resolve(&e.labels)).map(|map| {
                let mut counts = [0u64; 256];
                for &l in map.labels() {
                    counts[l as usize] += 1;
                }
                counts
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = [0u64; 256];
    for counts in partials {
        for (t, c) in total.iter_mut().zip(counts) {
            *t += c;
        }
    }
    Ok(total
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .map(|(id, &n)| (id as u8, n))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{save_image, save_labels};

    fn write_pair(dir: &Path, stem: &str, img: &ImageBuffer, lab: &LabelMap) -> (PathBuf, PathBuf) {
        let ip = dir.join(format!("{stem}.png"));
        let lp = dir.join(format!("{stem}_labels.png"));
        save_image(img, &ip).unwrap();
        save_labels(lab, &lp).unwrap();
        (
            PathBuf::from(format!("{stem}.png")),
            PathBuf::from(format!("{stem}_labels.png")),
        )
    }

    fn manifest(dir: &Path, entries: Vec<(PathBuf, PathBuf, Split)>) -> DatasetManifest {
        DatasetManifest {
            background_id: 0,
            classes: default_class_table(),
            entries: entries
                .into_iter()
                .map(|(image, labels, split)| ManifestEntry {
                    image,
                    labels,
                    split,
                })
                .collect(),
            base_dir: dir.to_path_buf(),
        }
    }

    #[test]
    fn parses_documented_schema() {
        let text = r#"{ "background_id": 0, "classes": {"0": "background", "1": "bare"},
            "entries": [{"image": "a.png", "labels": "a_labels.png", "split": "train"}] }"#;
        let m = DatasetManifest::from_json(text, "/data").unwrap();
        assert_eq!(m.classes[&1], "bare");
        assert_eq!(m.entries[0].split, Split::Train);
        assert_eq!(m.resolve(&m.entries[0].image), PathBuf::from("/data/a.png"));
        assert_eq!(m.entries[0].id(), "a");
    }

    #[test]
    fn bad_json_is_malformed() {
        assert!(matches!(
            DatasetManifest::from_json("{\"entries\": 3}", "."),
            Err(Error::MalformedManifest(_))
        ));
        assert!(matches!(
            DatasetManifest::from_json(
                r#"{"entries": [{"image": "a", "labels": "b", "split": "dev"}]}"#,
                "."
            ),
            Err(Error::MalformedManifest(_))
        ));
    }

    #[test]
    fn default_table_matches_figures() {
        let t = default_class_table();
        assert_eq!(t.len(), 9);
        assert_eq!(t[&5], "tree");
        assert_eq!(t[&8], "building");
    }

    #[test]
    fn constant_image_means() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = write_pair(
            dir.path(),
            "a",
            &ImageBuffer::filled(4, 3, [10, 20, 30]),
            &LabelMap::filled(4, 3, 1),
        );
        let m = manifest(dir.path(), vec![(i, l, Split::Train)]);
        let stats = compute_channel_means(&m, Split::Train).unwrap();
        assert_eq!(stats.means(), [10.0, 20.0, 30.0]);
        assert_eq!(stats.pixel_count, 12);
        let hist = class_pixel_histogram(&m, Split::Train).unwrap();
        assert_eq!(hist, BTreeMap::from([(1, 12)]));
    }

    #[test]
    fn two_single_pixel_images() {
        let dir = tempfile::tempdir().unwrap();
        let (i1, l1) = write_pair(
            dir.path(),
            "a",
            &ImageBuffer::filled(1, 1, [0, 0, 0]),
            &LabelMap::filled(1, 1, 1),
        );
        let (i2, l2) = write_pair(
            dir.path(),
            "b",
            &ImageBuffer::filled(1, 1, [2, 4, 6]),
            &LabelMap::filled(1, 1, 1),
        );
        let m = manifest(dir.path(), vec![(i1, l1, Split::Val), (i2, l2, Split::Val)]);
        assert_eq!(
            compute_channel_means(&m, Split::Val).unwrap().means(),
            [1.0, 2.0, 3.0]
        );
    }

    #[test]
    fn empty_split_errors() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(dir.path(), vec![]);
        assert!(matches!(
            compute_channel_means(&m, Split::Test),
            Err(Error::EmptySplit(_))
        ));
        assert!(matches!(
            class_pixel_histogram(&m, Split::Test),
            Err(Error::EmptySplit(_))
        ));
    }

    #[test]
    fn validation_reports_each_problem() {
        let dir = tempfile::tempdir().unwrap();
        let (i1, l1) = write_pair(
            dir.path(),
            "ok",
            &ImageBuffer::filled(4, 4, [1; 3]),
            &LabelMap::filled(4, 4, 2),
        );
        let ok = manifest(dir.path(), vec![(i1.clone(), l1.clone(), Split::Train)]);
        assert!(validate_manifest(&ok).is_empty());

        save_image(
            &ImageBuffer::filled(512, 512, [1; 3]),
            dir.path().join("big.png"),
        )
        .unwrap();
        save_labels(
            &LabelMap::filled(256, 256, 1),
            dir.path().join("big_labels.png"),
        )
        .unwrap();
        let mismatch = manifest(
            dir.path(),
            vec![("big.png".into(), "big_labels.png".into(), Split::Train)],
        );
        let v = validate_manifest(&mismatch);
        assert_eq!(v.len(), 1);
        let text = v[0].to_string();
        assert!(
            text.contains("big.png") && text.contains("big_labels.png"),
            "{text}"
        );

        let (i3, l3) = write_pair(
            dir.path(),
            "odd",
            &ImageBuffer::filled(2, 2, [1; 3]),
            &LabelMap::filled(2, 2, 99),
        );
        let unknown = manifest(dir.path(), vec![(i3, l3, Split::Val)]);
        assert!(matches!(
            validate_manifest(&unknown)[..],
            [Violation::UnknownClass { class_id: 99, .. }]
        ));
    }

    #[test]
    fn duplicate_ids_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = write_pair(
            dir.path(),
            "a",
            &ImageBuffer::filled(1, 1, [0; 3]),
            &LabelMap::filled(1, 1, 1),
        );
        let m = manifest(
            dir.path(),
            vec![(i.clone(), l.clone(), Split::Val), (i, l, Split::Val)],
        );
        assert!(matches!(
            m.load_split(Split::Val),
            Err(Error::MalformedManifest(_))
        ));
    }
}
