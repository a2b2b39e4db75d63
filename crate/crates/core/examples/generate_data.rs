//! Generates the synthetic dataset, prints per-class statistics and writes it
//! to disk in the external layout.
//!
//! cargo run --example generate_data -- [OUT_DIR] [KEY=VALUE ...]

use pemp::config::RunConfig;
use pemp::data::{
    generate_synthetic_dataset, ingest_external, save_dataset, split_classes, ShapeFamily, GENERATOR_VERSION,
};

fn main() -> pemp::Result<()> {
    let mut config = RunConfig::default();
    let mut out = None;
    for arg in std::env::args().skip(1) {
        if arg.contains('=') {
            config.apply_override(&arg)?;
        } else {
            out = Some(std::path::PathBuf::from(arg));
        }
    }
    let ds = generate_synthetic_dataset(config.num_classes, config.per_class, config.side, config.data_seed)?;
    println!(
        "{} images, {} classes, {}x{}",
        ds.len(),
        ds.num_classes(),
        config.side,
        config.side
    );
    for c in 0..ds.num_classes() {
        let idx = ds.indices_of(c);
        let fg: Vec<f64> = idx.iter().map(|&i| ds.items[i].foreground_fraction()).collect();
        let mean = fg.iter().sum::<f64>() / fg.len() as f64;
        let (lo, hi) = fg.iter().fold((1.0f64, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
        println!(
            "class {c:2} {:<12} n={:3}  fg mean {mean:.3} range [{lo:.3}, {hi:.3}]",
            ShapeFamily::of_class(c).name(),
            idx.len()
        );
    }
    for fold in 0..4 {
        let s = split_classes(ds.num_classes(), fold)?;
        println!("fold {fold}: novel {:?}", s.novel_classes);
    }
    if let Some(dir) = out {
        let manifest = save_dataset(&ds, &dir, config.data_seed, GENERATOR_VERSION)?;
        let back = ingest_external(&dir)?;
        println!(
            "wrote {} classes to {}; re-ingested {} images",
            manifest.classes.len(),
            dir.display(),
            back.len()
        );
    }
    Ok(())
}
