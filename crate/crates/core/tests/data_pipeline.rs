use std::fs;

use pemp::data::{
    generate_synthetic_dataset, ingest_external, sample_episode, save_dataset, split_classes, GENERATOR_VERSION,
};
use pemp::model::rng_stream;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn generation_is_deterministic() {
    let a = generate_synthetic_dataset(12, 20, 64, 7).unwrap();
    let b = generate_synthetic_dataset(12, 20, 64, 7).unwrap();
    assert_eq!(a.items.len(), 240);
    assert!(a
        .items
        .iter()
        .zip(&b.items)
        .all(|(x, y)| x.image == y.image && x.mask == y.mask && x.class_id == y.class_id));
    let c = generate_synthetic_dataset(12, 20, 64, 8).unwrap();
    assert!(a.items.iter().zip(&c.items).any(|(x, y)| x.image != y.image));
}

#[test]
fn foreground_fraction_within_bounds() {
    let ds = generate_synthetic_dataset(12, 40, 64, 7).unwrap();
    for item in &ds.items {
        let f = item.foreground_fraction();
        assert!((0.05..=0.6).contains(&f), "class {} fraction {f}", item.class_id);
    }
    for c in 0..12 {
        assert_eq!(ds.indices_of(c).len(), 40);
    }
}

#[test]
fn episodes_use_distinct_images_of_one_pool_class() {
    let ds = generate_synthetic_dataset(8, 8, 32, 1).unwrap();
    let split = split_classes(8, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..50 {
        let ep = sample_episode(&ds, &split.novel_classes, 5, true, &mut rng).unwrap();
        assert!(split.novel_classes.contains(&ep.class_id));
        let mut ids = ep.support_ids.clone();
        ids.push(ep.query_id);
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 6);
        assert!(ids.iter().all(|&i| ds.items[i].class_id == ep.class_id));
    }
    let a = sample_episode(&ds, &split.base_classes, 1, false, &mut rng_stream(3, 9)).unwrap();
    let b = sample_episode(&ds, &split.base_classes, 1, false, &mut rng_stream(3, 9)).unwrap();
    assert_eq!((a.support_ids, a.query_id), (b.support_ids, b.query_id));
}

#[test]
fn save_then_ingest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_synthetic_dataset(4, 8, 32, 2).unwrap();
    let manifest = save_dataset(&ds, dir.path(), 2, GENERATOR_VERSION).unwrap();
    assert_eq!(manifest.counts, vec![8; 4]);
    let back = ingest_external(dir.path()).unwrap();
    assert_eq!(back.class_names, ds.class_names);
    assert_eq!(back.items.len(), ds.items.len());
    for (a, b) in ds.items.iter().zip(&back.items) {
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.class_id, b.class_id);
        assert!(a.image.max_abs_diff(&b.image) <= 0.5 / 255.0 + 1e-12);
    }
}

fn write_png_gray(path: &std::path::Path, w: u32, h: u32, v: u8) {
    image::GrayImage::from_pixel(w, h, image::Luma([v])).save(path).unwrap();
}

fn write_png_rgb(path: &std::path::Path, w: u32, h: u32) {
    image::RgbImage::from_pixel(w, h, image::Rgb([10, 20, 30]))
        .save(path)
        .unwrap();
}

#[test]
fn ingest_binarizes_masks_and_reports_errors() {
    let empty = tempfile::tempdir().unwrap();
    assert!(ingest_external(empty.path()).unwrap().is_empty());

    let dir = tempfile::tempdir().unwrap();
    let class = dir.path().join("cat");
    fs::create_dir_all(&class).unwrap();
    write_png_rgb(&class.join("a.png"), 8, 8);
    write_png_gray(&class.join("a_mask.png"), 8, 8, 200);
    write_png_rgb(&class.join("b.png"), 8, 8);
    write_png_gray(&class.join("b_mask.png"), 8, 8, 50);
    let ds = ingest_external(dir.path()).unwrap();
    assert_eq!(ds.items.len(), 2);
    assert!(ds.items[0].mask.data().iter().all(|&v| v == 1.0));
    assert!(ds.items[1].mask.data().iter().all(|&v| v == 0.0));

    let bad = tempfile::tempdir().unwrap();
    let class = bad.path().join("dog");
    fs::create_dir_all(&class).unwrap();
    write_png_rgb(&class.join("a.png"), 64, 64);
    write_png_gray(&class.join("a_mask.png"), 32, 32, 255);
    assert!(ingest_external(bad.path()).is_err());

    let missing = tempfile::tempdir().unwrap();
    let class = missing.path().join("eel");
    fs::create_dir_all(&class).unwrap();
    write_png_rgb(&class.join("a.png"), 8, 8);
    assert!(ingest_external(missing.path()).is_err());
}
