//! Trains the prior network and then the segmentation network on one fold,
//! printing the smoothed episode loss, and saves both checkpoints.
//!
//! cargo run --release --example train_two_stage -- [OUT_DIR] [KEY=VALUE ...]

use pemp::config::RunConfig;
use pemp::data::{load_dataset, split_classes};
use pemp::model::PempModel;
use pemp::train::{train_prior, train_seg, LogRecord};

fn report(stage: &str, records: &[LogRecord]) {
    for chunk in records.chunks(50) {
        let mean = chunk.iter().map(|r| r.loss).sum::<f64>() / chunk.len() as f64;
        let norm = chunk.iter().map(|r| r.grad_norm_preclip).fold(0.0, f64::max);
        println!(
            "{stage} steps {:4}-{:4}  loss {mean:.4}  max grad norm {norm:.3}",
            chunk[0].step,
            chunk[chunk.len() - 1].step
        );
    }
}

fn main() -> pemp::Result<()> {
    let mut config = RunConfig::compact();
    config.prior_epochs = 3;
    config.seg_epochs = 3;
    let mut out = std::path::PathBuf::from("target/example-run");
    for arg in std::env::args().skip(1) {
        if arg.contains('=') {
            config.apply_override(&arg)?;
        } else {
            out = arg.into();
        }
    }
    config.validate()?;
    let ds = load_dataset(&config)?;
    let split = split_classes(ds.num_classes(), config.fold)?;
    println!("fold {} base classes {:?}", config.fold, split.base_classes);

    let mut records = Vec::new();
    let prior = train_prior(&ds, &split, &config, &mut |r| records.push(r.clone()))?;
    report("prior", &records);
    records.clear();
    let seg = train_seg(&ds, &split, &config, &prior, &mut |r| records.push(r.clone()))?;
    report("seg  ", &records);

    let model = PempModel {
        config: config.clone(),
        prior,
        seg: Some(seg),
    };
    model.save(&out)?;
    std::fs::write(out.join("config.resolved"), config.to_text()).map_err(|e| pemp::Error::io(&out, e))?;
    println!("checkpoints written to {}", out.display());
    Ok(())
}
