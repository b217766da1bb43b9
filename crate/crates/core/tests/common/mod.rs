#![allow(dead_code)]

use std::path::{Path, PathBuf};

use eo_distort_core::dataset::{default_class_table, DatasetManifest, ManifestEntry, Split};
use eo_distort_core::raster::{save_image, save_labels};
use eo_distort_core::{ImageBuffer, LabelMap, RngStream};

/// Small deterministic generator for test inputs.
pub struct Gen(RngStream);

impl Gen {
    pub fn new(seed: u64) -> Self {
        Gen(RngStream::derive(seed, 0xfeed, 0, 0))
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.0.below(n)
    }

    pub fn byte(&mut self) -> u8 {
        self.0.below(256) as u8
    }

    pub fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn image(&mut self, w: u32, h: u32) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, |_, _| [self.byte(), self.byte(), self.byte()])
    }

    /// Labels drawn from `0..classes`.
    pub fn labels(&mut self, w: u32, h: u32, classes: u8) -> LabelMap {
        LabelMap::from_fn(w, h, |_, _| self.below(u64::from(classes)) as u8)
    }
}

pub struct Pair {
    pub stem: String,
    pub image: ImageBuffer,
    pub labels: LabelMap,
    pub split: Split,
}

/// Writes PNGs and a manifest into `dir`; returns the manifest path.
pub fn write_dataset(dir: &Path, pairs: &[Pair], classes: Option<Vec<(u8, &str)>>) -> PathBuf {
    let mut entries = Vec::new();
    for p in pairs {
        let image = format!("{}.png", p.stem);
        let labels = format!("{}_labels.png", p.stem);
        save_image(&p.image, dir.join(&image)).unwrap();
        save_labels(&p.labels, dir.join(&labels)).unwrap();
        entries.push(ManifestEntry {
            image: image.into(),
            labels: labels.into(),
            split: p.split,
        });
    }
    let manifest = DatasetManifest {
        background_id: 0,
        classes: classes
            .map(|c| c.into_iter().map(|(id, n)| (id, n.to_string())).collect())
            .unwrap_or_else(default_class_table),
        entries,
        base_dir: dir.to_path_buf(),
    };
    let path = dir.join("manifest.json");
    manifest.save(&path).unwrap();
    path
}

/// Four validation images of mixed sizes covering background and classes
/// 1..=8, plus two training images for fill statistics.
pub fn synthetic_dataset(dir: &Path) -> PathBuf {
    let mut g = Gen::new(42);
    let sizes = [(16, 16), (24, 20), (20, 24), (12, 18)];
    let mut pairs: Vec<Pair> = sizes
        .iter()
        .enumerate()
        .map(|(i, &(w, h))| Pair {
            stem: format!("val{i}"),
            image: g.image(w, h),
            labels: LabelMap::from_fn(w, h, |r, c| (((r / 4) * 3 + c / 5 + i as u32) % 9) as u8),
            split: Split::Val,
        })
        .collect();
    for i in 0..2 {
        pairs.push(Pair {
            stem: format!("train{i}"),
            image: g.image(10, 10),
            labels: g.labels(10, 10, 9),
            split: Split::Train,
        });
    }
    write_dataset(dir, &pairs, None)
}

pub const COLOR_A: [u8; 3] = [200, 100, 100];
pub const COLOR_B: [u8; 3] = [60, 140, 110];

/// Two classes painted in flat colors whose luma differs by less than 2.
pub fn color_dataset(dir: &Path) -> PathBuf {
    let pairs: Vec<Pair> = (0..2)
        .map(|i| {
            let labels =
                LabelMap::from_fn(
                    32,
                    32,
                    |r, c| if (r / 8 + c / 8 + i) % 2 == 0 { 1 } else { 2 },
                );
            let image = ImageBuffer::from_fn(32, 32, |r, c| {
                if labels.get(r, c) == 1 {
                    COLOR_A
                } else {
                    COLOR_B
                }
            });
            Pair {
                stem: format!("scene{i}"),
                image,
                labels,
                split: Split::Val,
            }
        })
        .collect();
    write_dataset(
        dir,
        &pairs,
        Some(vec![(0, "background"), (1, "red-ish"), (2, "teal-ish")]),
    )
}

pub const TEXTURE_SIZE: u32 = 128;
pub const TEXTURED: u8 = 1;
pub const FLAT: u8 = 2;

/// A 0/255 checkerboard region (class 1) beside a flat black region
/// (class 2); the split runs vertically in one image and horizontally in
/// the other.
pub fn texture_dataset(dir: &Path) -> PathBuf {
    let n = TEXTURE_SIZE;
    let pairs: Vec<Pair> = (0..2)
        .map(|i| {
            let labels = LabelMap::from_fn(n, n, |r, c| {
                let along = if i == 0 { c } else { r };
                if along < n / 2 {
                    TEXTURED
                } else {
                    FLAT
                }
            });
            let image = ImageBuffer::from_fn(n, n, |r, c| {
                if labels.get(r, c) == TEXTURED && (r + c) % 2 == 1 {
                    [255; 3]
                } else {
                    [0; 3]
                }
            });
            Pair {
                stem: format!("tex{i}"),
                image,
                labels,
                split: Split::Val,
            }
        })
        .collect();
    write_dataset(
        dir,
        &pairs,
        Some(vec![(0, "background"), (1, "textured"), (2, "flat")]),
    )
}

/// Writes a sweep config next to the manifest and returns its path.
pub fn write_config(dir: &Path, json: &str) -> PathBuf {
    let path = dir.join("sweep.json");
    std::fs::write(&path, json).unwrap();
    path
}

/// Copies ground-truth label maps into every staged cell's `output_dir`.
pub fn fill_staged_with_truth(staging: &Path, manifest: &Path) {
    let manifest = DatasetManifest::load(manifest).unwrap();
    for batch in walk(staging).into_iter().filter(|p| {
        p.file_name().is_some_and(|n| n == "batch.json")
            && p.parent().is_some_and(|d| d.join("output_dir").is_dir())
    }) {
        let cell = batch.parent().unwrap();
        let listed = eo_distort_core::predictors::BatchManifest::load(&batch).unwrap();
        for entry in listed.images {
            let source = manifest
                .entries
                .iter()
                .find(|e| e.id() == entry.id)
                .unwrap();
            std::fs::copy(
                manifest.resolve(&source.labels),
                cell.join("output_dir").join(format!("{}.png", entry.id)),
            )
            .unwrap();
        }
    }
}

pub fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}
