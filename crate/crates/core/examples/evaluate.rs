//! Trains one fold with the compact preset, then scores it on novel classes
//! with the 1-shot and 5-shot protocols, next to the ground-truth oracle.
//!
//! cargo run --release --example evaluate -- [KEY=VALUE ...]

use pemp::config::RunConfig;
use pemp::data::{load_dataset, split_classes};
use pemp::eval::{evaluate_protocol, render_table, GroundTruthOracle, ProtocolSpec, TableRow};
use pemp::train::train_two_stage;

fn main() -> pemp::Result<()> {
    let mut config = RunConfig::compact();
    config.eval_runs = 3;
    config.eval_episodes = 60;
    for arg in std::env::args().skip(1) {
        config.apply_override(&arg)?;
    }
    let ds = load_dataset(&config)?;
    let split = split_classes(ds.num_classes(), config.fold)?;
    let model = train_two_stage(&ds, &split, &config, &mut |_| {})?;

    let mut rows = Vec::new();
    for shots in [1, 5] {
        let spec = ProtocolSpec {
            shots,
            ..ProtocolSpec::from_config(&config)
        };
        let report = evaluate_protocol(&model, &ds, &split, &spec, "PEMP", &config)?;
        println!(
            "{shots}-shot: mean-IoU {:.2} ± {:.2}, binary-IoU {:.2} ± {:.2} over {} runs ({:.1}s)",
            100.0 * report.mean_iou.mean,
            100.0 * report.mean_iou.std,
            100.0 * report.binary_iou.mean,
            100.0 * report.binary_iou.std,
            report.runs.len(),
            report.runtime_secs
        );
        for (c, v) in &report.per_class_iou {
            println!("  class {c}: {:.2}", 100.0 * v);
        }
        let mut folds = [None; 4];
        folds[config.fold] = Some(report.mean_iou.mean);
        rows.push(TableRow {
            method: "PEMP".into(),
            shots,
            folds,
        });
    }
    let oracle = evaluate_protocol(
        &GroundTruthOracle,
        &ds,
        &split,
        &ProtocolSpec::from_config(&config),
        "oracle",
        &config,
    )?;
    let mut folds = [None; 4];
    folds[config.fold] = Some(oracle.mean_iou.mean);
    rows.push(TableRow {
        method: "oracle".into(),
        shots: 1,
        folds,
    });
    print!("{}", render_table(&rows));
    Ok(())
}
