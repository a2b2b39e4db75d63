//! Trains a short two-stage model and writes, per novel-class episode, the
//! query image, ground truth, pseudo-label, prediction and winner-prototype map.
//!
//! cargo run --release --example export_maps -- [OUT_DIR] [KEY=VALUE ...]

use pemp::config::RunConfig;
use pemp::data::{load_dataset, sample_episode, split_classes};
use pemp::export::{write_gray_png, write_rgb_png, write_winner_png};
use pemp::model::{rng_stream, streams};
use pemp::train::train_two_stage;

fn main() -> pemp::Result<()> {
    let mut config = RunConfig::compact();
    config.prior_epochs = 3;
    config.seg_epochs = 3;
    let mut out = std::path::PathBuf::from("target/example-maps");
    for arg in std::env::args().skip(1) {
        if arg.contains('=') {
            config.apply_override(&arg)?;
        } else {
            out = arg.into();
        }
    }
    std::fs::create_dir_all(&out).map_err(|e| pemp::Error::io(&out, e))?;
    let ds = load_dataset(&config)?;
    let split = split_classes(ds.num_classes(), config.fold)?;
    let model = train_two_stage(&ds, &split, &config, &mut |_| {})?;
    let mut rng = rng_stream(config.seed, streams::EVAL_BASE);
    for i in 0..6 {
        let ep = sample_episode(&ds, &split.novel_classes, config.shots, false, &mut rng)?;
        let pred = model.predict(&ep)?;
        let name = |kind: &str| out.join(format!("{i:03}_{kind}.png"));
        write_rgb_png(&name("query"), &ep.query.image)?;
        write_gray_png(&name("gt"), &ep.query.mask)?;
        write_gray_png(&name("pred"), &pred.mask)?;
        if let Some(p) = &pred.pseudo_label {
            write_gray_png(&name("pseudo"), p)?;
        }
        let scale = ep.query.height() / pred.map.height();
        write_winner_png(&name("winner"), &pred.map, config.num_prototypes, scale)?;
        let fg_winners = (0..pred.map.winner_index.len())
            .filter(|&p| pred.map.winner_region(p) == pemp::proto::Region::Fg)
            .count();
        println!(
            "episode {i}: class {} fg pixels on grid {fg_winners}{}",
            ep.class_id,
            if pred.degenerate { " (degenerate support)" } else { "" }
        );
    }
    println!("maps written to {}", out.display());
    Ok(())
}
