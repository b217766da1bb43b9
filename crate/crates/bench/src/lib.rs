//! Synthetic inputs shared by the benchmarks.

use eo_distort_core::{ImageBuffer, LabelMap};

/// A square image with a smooth color ramp and a label map of `classes`
/// vertical stripes (ids 1..=classes).
pub fn striped_scene(size: u32, classes: u8) -> (ImageBuffer, LabelMap) {
    let image = ImageBuffer::from_fn(size, size, |r, c| {
        [(r % 256) as u8, (c % 256) as u8, ((r + c) % 256) as u8]
    });
    let stripe = (size / u32::from(classes)).max(1);
    let labels = LabelMap::from_fn(size, size, |_, c| {
        ((c / stripe).min(u32::from(classes) - 1) + 1) as u8
    });
    (image, labels)
}
