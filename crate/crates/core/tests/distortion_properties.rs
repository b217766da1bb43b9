mod common;

use std::collections::HashMap;

use eo_distort_core::distortions::{
    color_duplication, context_mask, gray_scale_transform, pixel_swap, swap_count,
};
use eo_distort_core::{
    apply, rgb_to_gray, Channel, ChannelStats, Distortion, DistortionSpec, ImageBuffer, LabelMap,
    RngStream,
};
use proptest::prelude::*;

fn scene() -> impl Strategy<Value = (ImageBuffer, LabelMap, u8)> {
    (1u32..24, 1u32..24, any::<u64>(), 1u8..5).prop_map(|(w, h, seed, classes)| {
        let mut g = common::Gen::new(seed);
        let image = g.image(w, h);
        let labels = g.labels(w, h, classes + 1);
        let target = g.below(u64::from(classes) + 1) as u8;
        (image, labels, target)
    })
}

fn luma_exact(p: [u8; 3]) -> f64 {
    (2125.0 * f64::from(p[0]) + 7154.0 * f64::from(p[1]) + 721.0 * f64::from(p[2])) / 10000.0
}

fn sorted_class_pixels(image: &ImageBuffer, labels: &LabelMap, c: u8) -> Vec<[u8; 3]> {
    let mut v: Vec<[u8; 3]> = image
        .pixels()
        .iter()
        .zip(labels.labels())
        .filter(|(_, &l)| l == c)
        .map(|(p, _)| *p)
        .collect();
    v.sort();
    v
}

/// Straight-line restatement of the swap: choose positions by partial
/// Fisher-Yates over the row-major scan, then shuffle their values.
fn reference_swap(
    image: &ImageBuffer,
    labels: &LabelMap,
    c: u8,
    p: f64,
    rng: &mut RngStream,
) -> ImageBuffer {
    let mut pool = Vec::new();
    for row in 0..labels.height() {
        for col in 0..labels.width() {
            if labels.get(row, col) == c {
                pool.push((row, col));
            }
        }
    }
    let k = pool.len();
    let m = (p * k as f64).round() as usize;
    if m < 2 {
        return image.clone();
    }
    let mut chosen = Vec::new();
    for i in 0..m {
        let pick = i + rng.below((k - i) as u64) as usize;
        pool.swap(i, pick);
        chosen.push(pool[i]);
    }
    let mut values: Vec<[u8; 3]> = chosen.iter().map(|&(r, c)| image.get(r, c)).collect();
    let mut i = m - 1;
    while i > 0 {
        let j = rng.below(i as u64 + 1) as usize;
        values.swap(i, j);
        i -= 1;
    }
    let moved: HashMap<(u32, u32), [u8; 3]> = chosen.into_iter().zip(values).collect();
    ImageBuffer::from_fn(image.width(), image.height(), |r, c| {
        moved.get(&(r, c)).copied().unwrap_or(image.get(r, c))
    })
}

#[test]
fn swap_matches_reference_on_fixed_3x3() {
    let image = ImageBuffer::from_fn(3, 3, |r, c| {
        let v = (r * 3 + c) as u8;
        [v * 10, v * 20, 255 - v]
    });
    let labels = LabelMap::filled(3, 3, 4);
    let spec = DistortionSpec {
        seed: 7,
        image_index: 2,
        ..DistortionSpec::new(
            Distortion::PixelSwap {
                proportion: 1.0,
                replicate: 1,
            },
            4,
        )
    };
    let out = apply(&image, &labels, &spec).unwrap();
    let expected = reference_swap(&image, &labels, 4, 1.0, &mut RngStream::derive(7, 2, 4, 1));
    assert_eq!(out, expected);
    assert_ne!(out, image);
    assert_eq!(
        sorted_class_pixels(&out, &labels, 4),
        sorted_class_pixels(&image, &labels, 4)
    );
}

#[test]
fn gray_spot_values() {
    assert_eq!(rgb_to_gray([100, 150, 200]), 143);
    let img = ImageBuffer::filled(1, 1, [100, 150, 200]);
    let lab = LabelMap::filled(1, 1, 1);
    assert_eq!(
        gray_scale_transform(&img, &lab, 1, 1.0).unwrap().pixels(),
        &[[143; 3]]
    );
    assert_eq!(
        gray_scale_transform(&img, &lab, 1, 0.5).unwrap().pixels(),
        &[[121, 146, 171]]
    );
}

#[test]
fn gray_exhaustive_over_ties() {
    // Walk every pixel whose scaled luma lands exactly on .5 in one channel sweep.
    for r in 0..=255u32 {
        for g in (0..=255u32).step_by(17) {
            for b in (0..=255u32).step_by(5) {
                let n = 2125 * r + 7154 * g + 721 * b;
                let expected = ((2 * n + 10_000) / 20_000) as u8;
                assert_eq!(rgb_to_gray([r as u8, g as u8, b as u8]), expected);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_intensity_is_identity((image, labels, c) in scene(), ch in 0usize..3, seed in any::<u64>()) {
        prop_assert_eq!(&gray_scale_transform(&image, &labels, c, 0.0).unwrap(), &image);
        prop_assert_eq!(&color_duplication(&image, &labels, c, Channel::ALL[ch], 0.0).unwrap(), &image);
        let mut rng = RngStream::from_key(seed);
        prop_assert_eq!(&pixel_swap(&image, &labels, c, 0.0, &mut rng).unwrap(), &image);
    }

    #[test]
    fn non_target_pixels_untouched((image, labels, c) in scene(), x in 0.0f64..=1.0, seed in any::<u64>()) {
        let outs = [
            gray_scale_transform(&image, &labels, c, x).unwrap(),
            color_duplication(&image, &labels, c, Channel::B, x).unwrap(),
            pixel_swap(&image, &labels, c, x, &mut RngStream::from_key(seed)).unwrap(),
        ];
        for out in &outs {
            for ((o, i), &l) in out.pixels().iter().zip(image.pixels()).zip(labels.labels()) {
                if l != c {
                    prop_assert_eq!(o, i);
                }
            }
        }
        let fill = ChannelStats::new([12.4, 200.5, 99.9], 1).unwrap();
        let masked = context_mask(&image, &labels, c, &fill).unwrap();
        for ((o, i), &l) in masked.pixels().iter().zip(image.pixels()).zip(labels.labels()) {
            if l == c {
                prop_assert_eq!(o, i);
            } else {
                prop_assert_eq!(*o, [12, 201, 100]);
            }
        }
    }

    #[test]
    fn gray_mix_within_half_unit((image, labels, c) in scene(), x in 0.0f64..=1.0) {
        let out = gray_scale_transform(&image, &labels, c, x).unwrap();
        for ((o, i), &l) in out.pixels().iter().zip(image.pixels()).zip(labels.labels()) {
            if l == c {
                let g = luma_exact(*i);
                for ch in 0..3 {
                    let target = (1.0 - x) * f64::from(i[ch]) + x * g;
                    prop_assert!((f64::from(o[ch]) - target).abs() <= 0.5 + 1e-9);
                }
            }
        }
    }

    #[test]
    fn full_gray_saturates((image, labels, c) in scene()) {
        let out = gray_scale_transform(&image, &labels, c, 1.0).unwrap();
        for ((o, i), &l) in out.pixels().iter().zip(image.pixels()).zip(labels.labels()) {
            if l == c {
                prop_assert!(o[0] == o[1] && o[1] == o[2]);
                prop_assert_eq!(o[0], rgb_to_gray(*i));
            }
        }
    }

    #[test]
    fn color_dup_preserves_source_channel((image, labels, c) in scene(), x in 0.0f64..=1.0, ch in 0usize..3) {
        let channel = Channel::ALL[ch];
        let out = color_duplication(&image, &labels, c, channel, x).unwrap();
        for ((o, i), &l) in out.pixels().iter().zip(image.pixels()).zip(labels.labels()) {
            if l == c {
                prop_assert_eq!(o[ch], i[ch]);
                for k in 0..3 {
                    let target = (1.0 - x) * f64::from(i[k]) + x * f64::from(i[ch]);
                    prop_assert!((f64::from(o[k]) - target).abs() <= 0.5 + 1e-9);
                }
            }
        }
    }

    #[test]
    fn swap_preserves_multiset_and_moves_at_most_m((image, labels, c) in scene(), x in 0.0f64..=1.0, seed in any::<u64>()) {
        let out = pixel_swap(&image, &labels, c, x, &mut RngStream::from_key(seed)).unwrap();
        prop_assert_eq!(sorted_class_pixels(&out, &labels, c), sorted_class_pixels(&image, &labels, c));
        let k = labels.labels().iter().filter(|&&l| l == c).count();
        let changed = out.pixels().iter().zip(image.pixels()).filter(|(a, b)| a != b).count();
        prop_assert!(changed <= swap_count(x, k));
        let reference = reference_swap(&image, &labels, c, x, &mut RngStream::from_key(seed));
        prop_assert_eq!(out, reference);
    }

    #[test]
    fn swap_and_mask_commute((image, labels, c) in scene(), x in 0.0f64..=1.0, seed in any::<u64>()) {
        let fill = ChannelStats::new([1.0, 2.0, 3.0], 1).unwrap();
        let swap_then_mask = context_mask(
            &pixel_swap(&image, &labels, c, x, &mut RngStream::from_key(seed)).unwrap(),
            &labels, c, &fill).unwrap();
        let mask_then_swap = pixel_swap(
            &context_mask(&image, &labels, c, &fill).unwrap(),
            &labels, c, x, &mut RngStream::from_key(seed)).unwrap();
        prop_assert_eq!(&swap_then_mask, &mask_then_swap);

        let spec = DistortionSpec {
            seed,
            context_fill: Some(fill),
            ..DistortionSpec::new(Distortion::PixelSwap { proportion: x, replicate: 0 }, c)
        };
        let combined = apply(&image, &labels, &spec).unwrap();
        let manual = context_mask(
            &pixel_swap(&image, &labels, c, x, &mut spec.rng()).unwrap(),
            &labels, c, &fill).unwrap();
        prop_assert_eq!(combined, manual);
    }

    #[test]
    fn apply_is_deterministic((image, labels, c) in scene(), x in 0.0f64..=1.0, seed in any::<u64>(), idx in 0u64..50) {
        let spec = DistortionSpec {
            seed,
            image_index: idx,
            ..DistortionSpec::new(Distortion::PixelSwap { proportion: x, replicate: 2 }, c)
        };
        prop_assert_eq!(apply(&image, &labels, &spec).unwrap(), apply(&image, &labels, &spec).unwrap());
        let twice = DistortionSpec::new(Distortion::GrayScale { lambda: 0.0 }, c);
        let once = apply(&image, &labels, &twice).unwrap();
        prop_assert_eq!(apply(&once, &labels, &twice).unwrap(), image);
    }
}
