//! Ablation driver: module toggles and single-key sweeps over folds and seeds.
//!
//! Stage-1 results are cached by their stage-1 configuration, so variants
//! that differ only in the second stage (and the M=1 prior network that the
//! Baseline uses) train the prior network once per seed and fold. Cells of
//! one (seed, fold) pair are independent and run on the rayon pool, whose
//! size follows `PEMP_THREADS`.

use std::collections::BTreeMap;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{split_classes, Dataset};
use crate::error::{Error, Result};
use crate::eval::{eval_threads, evaluate_protocol, EvalReport, ProtocolSpec, TableRow};
use crate::model::PempModel;
use crate::params::ParamSet;
use crate::train::{train_prior, train_seg, LogRecord};

/// Display name of the module combination `config` enables.
pub fn method_name(config: &RunConfig) -> String {
    let mp = config.num_prototypes > 1;
    match (config.two_stage, mp, config.use_comm) {
        (false, false, _) => "Baseline".into(),
        (false, true, _) => "PN+MP".into(),
        (true, true, true) => "PEMP".into(),
        (true, mp, comm) => {
            let mut s = String::from("PN+SN");
            if mp {
                s.push_str("+MP");
            }
            if comm {
                s.push_str("+CM");
            }
            s
        }
    }
}

/// Named set of config overrides applied on top of the base config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub overrides: Vec<(String, String)>,
}

impl Variant {
    pub fn new(name: &str, overrides: &[(&str, &str)]) -> Self {
        Self {
            name: name.to_string(),
            overrides: overrides.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    pub fn apply(&self, base: &RunConfig) -> Result<RunConfig> {
        let mut cfg = base.clone();
        for (k, v) in &self.overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The structural axes: prior network alone or with the segmentation
/// network, single or meta-prototypes, with or without Communication Modules.
pub fn module_variants(num_prototypes: usize) -> Vec<Variant> {
    let m = num_prototypes.to_string();
    vec![
        Variant::new("Baseline", &[("num_prototypes", "1"), ("two_stage", "false")]),
        Variant::new("PN+MP", &[("num_prototypes", &m), ("two_stage", "false")]),
        Variant::new(
            "PN+SN",
            &[("num_prototypes", "1"), ("two_stage", "true"), ("use_comm", "false")],
        ),
        Variant::new(
            "PN+SN+MP",
            &[("num_prototypes", &m), ("two_stage", "true"), ("use_comm", "false")],
        ),
        Variant::new(
            "PEMP",
            &[("num_prototypes", &m), ("two_stage", "true"), ("use_comm", "true")],
        ),
    ]
}

/// Parses `KEY=v1,v2,...` into one variant per value. `M` aliases `num_prototypes`.
pub fn sweep_variants(spec: &str) -> Result<Vec<Variant>> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("sweep must look like KEY=v1,v2, got {spec:?}")))?;
    let key = match key.trim() {
        "M" | "m" => "num_prototypes",
        k => k,
    };
    let mut probe = RunConfig::default();
    let variants: Vec<Variant> = values
        .split(',')
        .map(|v| {
            let v = v.trim();
            probe.set(key, v)?;
            let label = if key == "num_prototypes" { "M" } else { key };
            Ok(Variant::new(&format!("{label}={v}"), &[(key, v)]))
        })
        .collect::<Result<_>>()?;
    if variants.is_empty() {
        return Err(Error::Config("empty sweep".into()));
    }
    Ok(variants)
}

/// Settings that only affect the second stage.
const SEG_ONLY_KEYS: [(&str, &str); 6] = [
    ("two_stage", "true"),
    ("use_comm", "true"),
    ("comm_masked_mean", "false"),
    ("seg_lr", "1"),
    ("seg_epochs", "0"),
    ("seg_dropout", "0"),
];

/// Canonical text of the stage-1 relevant part of `config`.
pub fn prior_cache_key(config: &RunConfig) -> String {
    let mut c = config.clone();
    for (k, v) in SEG_ONLY_KEYS {
        c.set(k, v).expect("known key");
    }
    c.shots = 1;
    c.eval_runs = 1;
    c.eval_episodes = 1;
    c.to_text()
}

/// One evaluated (variant, seed, fold, shots) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub variant: String,
    pub seed: u64,
    pub fold: usize,
    pub shots: usize,
    pub report: EvalReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub entries: Vec<AblationEntry>,
}

impl AblationResult {
    /// Mean-IoU averaged over seeds for each evaluated fold.
    pub fn fold_means(&self, variant: &str, shots: usize) -> [Option<f64>; 4] {
        let mut out = [None; 4];
        for (fold, slot) in out.iter_mut().enumerate() {
            let v: Vec<f64> = self
                .entries
                .iter()
                .filter(|e| e.variant == variant && e.shots == shots && e.fold == fold)
                .map(|e| e.report.mean_iou.mean)
                .collect();
            if !v.is_empty() {
                *slot = Some(v.iter().sum::<f64>() / v.len() as f64);
            }
        }
        out
    }

    /// Fold-averaged mean-IoU of each seed.
    pub fn seed_means(&self, variant: &str, shots: usize) -> BTreeMap<u64, f64> {
        let mut acc: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for e in self.entries.iter().filter(|e| e.variant == variant && e.shots == shots) {
            acc.entry(e.seed).or_default().push(e.report.mean_iou.mean);
        }
        acc.into_iter()
            .map(|(s, v)| (s, v.iter().sum::<f64>() / v.len() as f64))
            .collect()
    }

    /// Mean over seeds of the fold-averaged mean-IoU.
    pub fn overall(&self, variant: &str, shots: usize) -> Option<f64> {
        let s = self.seed_means(variant, shots);
        (!s.is_empty()).then(|| s.values().sum::<f64>() / s.len() as f64)
    }

    pub fn table_rows(&self) -> Vec<TableRow> {
        let mut keys: Vec<(String, usize)> = Vec::new();
        for e in &self.entries {
            let k = (e.variant.clone(), e.shots);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(method, shots)| TableRow {
                folds: self.fold_means(&method, shots),
                method,
                shots,
            })
            .collect()
    }
}

/// What to run: variants × seeds × folds, each evaluated at every entry of `eval_shots`.
#[derive(Clone, Debug)]
pub struct AblationPlan {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub folds: Vec<usize>,
    pub eval_shots: Vec<usize>,
}

/// Trains and evaluates every cell of `plan`; `on_model` sees each trained model.
pub fn run_ablation(
    dataset: &Dataset,
    base: &RunConfig,
    plan: &AblationPlan,
    on_model: &(dyn Fn(&str, u64, usize, &PempModel) + Sync),
) -> Result<AblationResult> {
    let cells: Vec<(u64, usize)> = plan
        .seeds
        .iter()
        .flat_map(|&s| plan.folds.iter().map(move |&f| (s, f)))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = eval_threads() {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let per_cell = pool.install(|| {
        cells
            .par_iter()
            .map(|&(seed, fold)| run_cell(dataset, base, plan, seed, fold, on_model))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(AblationResult {
        entries: per_cell.into_iter().flatten().collect(),
    })
}

/// All variants of one (seed, fold) cell; variants that share a prior
/// configuration share one trained prior network.
fn run_cell(
    dataset: &Dataset,
    base: &RunConfig,
    plan: &AblationPlan,
    seed: u64,
    fold: usize,
    on_model: &(dyn Fn(&str, u64, usize, &PempModel) + Sync),
) -> Result<Vec<AblationEntry>> {
    let split = split_classes(dataset.num_classes(), fold)?;
    let mut priors: BTreeMap<String, ParamSet> = BTreeMap::new();
    let mut entries = Vec::new();
    let mut sink = |_: &LogRecord| {};
    for variant in &plan.variants {
        let mut cfg = variant.apply(base)?;
        cfg.seed = seed;
        cfg.fold = fold;
        let key = prior_cache_key(&cfg);
        let prior = match priors.get(&key) {
            Some(p) => p.clone(),
            None => {
                info!("seed {seed} fold {fold}: training prior network for {}", variant.name);
                let p = train_prior(dataset, &split, &cfg, &mut sink)?;
                priors.insert(key, p.clone());
                p
            }
        };
        let seg = if cfg.two_stage {
            info!(
                "seed {seed} fold {fold}: training segmentation network for {}",
                variant.name
            );
            Some(train_seg(dataset, &split, &cfg, &prior, &mut sink)?)
        } else {
            None
        };
        let model = PempModel {
            config: cfg.clone(),
            prior,
            seg,
        };
        on_model(&variant.name, seed, fold, &model);
        for &shots in &plan.eval_shots {
            let mut spec = ProtocolSpec::from_config(&cfg);
            spec.shots = shots;
            let report = evaluate_protocol(&model, dataset, &split, &spec, &variant.name, &cfg)?;
            info!(
                "seed {seed} fold {fold} {} {shots}-shot: mean-IoU {:.4}",
                variant.name, report.mean_iou.mean
            );
            entries.push(AblationEntry {
                variant: variant.name.clone(),
                seed,
                fold,
                shots,
                report,
            });
        }
    }
    Ok(entries)
}
