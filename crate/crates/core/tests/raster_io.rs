use eo_distort_core::raster::{load_image, load_labels, save_image, save_labels};
use eo_distort_core::{Error, ImageBuffer, LabelMap};
use proptest::prelude::*;

#[test]
fn reads_file_written_by_independent_encoder() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("four.png");
    let raw = [255u8, 0, 0, 0, 255, 0, 0, 0, 255, 10, 20, 30];
    image::RgbImage::from_raw(2, 2, raw.to_vec())
        .unwrap()
        .save(&path)
        .unwrap();
    let img = load_image(&path).unwrap();
    assert_eq!(
        img.pixels(),
        &[[255, 0, 0], [0, 255, 0], [0, 0, 255], [10, 20, 30]]
    );
}

#[test]
fn written_file_decodes_with_independent_decoder() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("uniform.png");
    save_image(&ImageBuffer::filled(512, 512, [128; 3]), &path).unwrap();
    let decoded = image::open(&path).unwrap();
    assert_eq!(decoded.color(), image::ColorType::Rgb8);
    let rgb = decoded.to_rgb8();
    assert_eq!(rgb.dimensions(), (512, 512));
    assert!(rgb.pixels().all(|p| p.0 == [128, 128, 128]));

    let lpath = dir.path().join("labels.png");
    save_labels(&LabelMap::from_fn(3, 2, |r, c| (r * 3 + c) as u8), &lpath).unwrap();
    let gray = image::open(&lpath).unwrap();
    assert_eq!(gray.color(), image::ColorType::L8);
    assert_eq!(gray.to_luma8().into_raw(), vec![0, 1, 2, 3, 4, 5]);
}

#[test]
fn sixteen_bit_rgb_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("deep.png");
    let img: image::ImageBuffer<image::Rgb<u16>, Vec<u16>> =
        image::ImageBuffer::from_pixel(2, 2, image::Rgb([1000, 2000, 3000]));
    img.save(&path).unwrap();
    assert!(matches!(
        load_image(&path),
        Err(Error::MalformedRaster { .. })
    ));
}

#[test]
fn alpha_is_rejected_not_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rgba.png");
    image::RgbaImage::from_pixel(2, 2, image::Rgba([1, 2, 3, 4]))
        .save(&path)
        .unwrap();
    assert!(matches!(
        load_image(&path),
        Err(Error::MalformedRaster { .. })
    ));
    assert!(matches!(
        load_labels(&path),
        Err(Error::MalformedRaster { .. })
    ));
}

#[test]
fn three_channel_file_is_not_labels() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rgb.png");
    image::RgbImage::from_pixel(1, 1, image::Rgb([3, 3, 3]))
        .save(&path)
        .unwrap();
    assert!(matches!(
        load_labels(&path),
        Err(Error::MalformedRaster { .. })
    ));
}

#[cfg(unix)]
#[test]
fn read_only_destination_is_io_failure() {
    use std::os::unix::fs::PermissionsExt;
    let dir = tempfile::tempdir().unwrap();
    let locked = dir.path().join("locked");
    std::fs::create_dir(&locked).unwrap();
    std::fs::set_permissions(&locked, std::fs::Permissions::from_mode(0o555)).unwrap();
    let target = locked.join("x.png");
    let result = save_image(&ImageBuffer::filled(1, 1, [0; 3]), &target);
    std::fs::set_permissions(&locked, std::fs::Permissions::from_mode(0o755)).unwrap();
    // root ignores directory permissions; only assert when the write was refused
    if !target.exists() {
        assert!(matches!(result, Err(Error::Io { .. })));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn save_load_is_identity(
        w in 1u32..20,
        h in 1u32..20,
        seed in any::<u64>(),
    ) {
        let mut rng = eo_distort_core::RngStream::from_key(seed);
        let img = ImageBuffer::from_fn(w, h, |_, _| {
            let v = rng.next_u64();
            [v as u8, (v >> 8) as u8, (v >> 16) as u8]
        });
        let labels = LabelMap::from_fn(w, h, |_, _| rng.below(256) as u8);
        let dir = tempfile::tempdir().unwrap();
        save_image(&img, dir.path().join("i.png")).unwrap();
        save_labels(&labels, dir.path().join("l.png")).unwrap();
        prop_assert_eq!(load_image(dir.path().join("i.png")).unwrap(), img);
        prop_assert_eq!(load_labels(dir.path().join("l.png")).unwrap(), labels);
    }
}
