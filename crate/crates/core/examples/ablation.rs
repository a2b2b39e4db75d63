//! Module ablation (Baseline, PN+MP, PN+SN, PN+SN+MP, PEMP) and an M sweep
//! on a subset of folds, printed as split tables.
//!
//! cargo run --release --example ablation -- [folds=0,1] [seeds=0] [KEY=VALUE ...]

use pemp::ablate::{module_variants, run_ablation, sweep_variants, AblationPlan};
use pemp::config::RunConfig;
use pemp::data::load_dataset;
use pemp::eval::render_table;

fn list<T: std::str::FromStr>(v: &str) -> Vec<T> {
    v.split(',').filter_map(|x| x.trim().parse().ok()).collect()
}

fn main() -> pemp::Result<()> {
    let mut config = RunConfig::compact();
    config.eval_episodes = 100;
    let mut folds = vec![0];
    let mut seeds = vec![0];
    for arg in std::env::args().skip(1) {
        if let Some(v) = arg.strip_prefix("folds=") {
            folds = list(v);
        } else if let Some(v) = arg.strip_prefix("seeds=") {
            seeds = list(v);
        } else {
            config.apply_override(&arg)?;
        }
    }
    let ds = load_dataset(&config)?;
    for variants in [module_variants(config.num_prototypes), sweep_variants("M=1,2,3,5")?] {
        let plan = AblationPlan {
            variants,
            seeds: seeds.clone(),
            folds: folds.clone(),
            eval_shots: vec![1],
        };
        let result = run_ablation(&ds, &config, &plan, &|name, seed, fold, _| {
            eprintln!("trained {name} seed {seed} fold {fold}");
        })?;
        println!("{}", render_table(&result.table_rows()));
    }
    Ok(())
}
