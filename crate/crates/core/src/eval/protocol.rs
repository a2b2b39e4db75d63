//! Repeated-run evaluation on novel-class episodes.

use std::collections::BTreeMap;
use std::time::Instant;

use pemp_tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{binary_iou, per_class_iou, Confusion, EpisodeResult};
use crate::config::RunConfig;
use crate::data::{sample_episode, Dataset, Episode, FoldSplit};
use crate::error::{Error, Result};
use crate::model::{rng_stream, streams, PempModel};

/// Anything that turns an episode into a binary query mask.
pub trait Predictor: Sync {
    fn predict_mask(&self, episode: &Episode) -> Result<Tensor>;
}

impl Predictor for PempModel {
    fn predict_mask(&self, episode: &Episode) -> Result<Tensor> {
        Ok(self.predict(episode)?.mask)
    }
}

/// Returns the query ground truth; bounds the harness at IoU 1.
pub struct GroundTruthOracle;

impl Predictor for GroundTruthOracle {
    fn predict_mask(&self, episode: &Episode) -> Result<Tensor> {
        Ok(episode.query.mask.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolSpec {
    pub shots: usize,
    pub episodes_per_run: usize,
    pub runs: usize,
    pub seed: u64,
}

impl ProtocolSpec {
    pub fn from_config(config: &RunConfig) -> Self {
        Self {
            shots: config.shots,
            episodes_per_run: config.eval_episodes,
            runs: config.eval_runs,
            seed: config.seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation over runs.
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: usize,
    pub mean_iou: f64,
    pub binary_iou: f64,
    pub per_class_iou: BTreeMap<usize, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub fold: usize,
    pub shots: usize,
    pub episodes_per_run: usize,
    pub runs: Vec<RunResult>,
    /// Per-class IoU averaged over runs.
    pub per_class_iou: BTreeMap<usize, f64>,
    pub mean_iou: Summary,
    pub binary_iou: Summary,
    pub runtime_secs: f64,
    pub config_hash: String,
    pub config: BTreeMap<String, String>,
}

impl EvalReport {
    /// Same report with the wall-clock field cleared, for reproducibility checks.
    pub fn without_runtime(&self) -> Self {
        Self {
            runtime_secs: 0.0,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Worker count from `PEMP_THREADS`, defaulting to rayon's choice.
pub fn eval_threads() -> Option<usize> {
    std::env::var("PEMP_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
}

/// Runs `spec.runs` independent rounds of `spec.episodes_per_run` novel-class
/// episodes in eval mode (no flips) and summarises mean-IoU and binary-IoU.
///
/// Episodes of a run are drawn serially from the run's own RNG stream and
/// then predicted in parallel, so the report does not depend on thread count.
pub fn evaluate_protocol(
    predictor: &dyn Predictor,
    dataset: &Dataset,
    split: &FoldSplit,
    spec: &ProtocolSpec,
    method: &str,
    config: &RunConfig,
) -> Result<EvalReport> {
    if spec.runs == 0 || spec.episodes_per_run == 0 {
        return Err(Error::Config(
            "evaluation needs at least one run and one episode".into(),
        ));
    }
    let start = Instant::now();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = eval_threads() {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut runs = Vec::with_capacity(spec.runs);
    for run in 0..spec.runs {
        let mut rng = rng_stream(spec.seed, streams::EVAL_BASE + run as u64);
        let episodes = (0..spec.episodes_per_run)
            .map(|_| sample_episode(dataset, &split.novel_classes, spec.shots, false, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let results = pool.install(|| {
            episodes
                .par_iter()
                .map(|ep| {
                    let pred = predictor.predict_mask(ep)?;
                    Ok(EpisodeResult {
                        class_id: ep.class_id,
                        confusion: Confusion::from_masks(&pred, &ep.query.mask)?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let per_class = per_class_iou(&results, &split.novel_classes)?;
        let mean = per_class.values().sum::<f64>() / per_class.len() as f64;
        runs.push(RunResult {
            run,
            mean_iou: mean,
            binary_iou: binary_iou(&results),
            per_class_iou: per_class,
        });
    }
    let per_class_iou = split
        .novel_classes
        .iter()
        .map(|c| {
            let v: Vec<f64> = runs.iter().map(|r| r.per_class_iou[c]).collect();
            (*c, Summary::of(&v).mean)
        })
        .collect();
    let mean_iou = Summary::of(&runs.iter().map(|r| r.mean_iou).collect::<Vec<_>>());
    let binary = Summary::of(&runs.iter().map(|r| r.binary_iou).collect::<Vec<_>>());
    Ok(EvalReport {
        method: method.to_string(),
        fold: split.fold,
        shots: spec.shots,
        episodes_per_run: spec.episodes_per_run,
        runs,
        per_class_iou,
        mean_iou,
        binary_iou: binary,
        runtime_secs: start.elapsed().as_secs_f64(),
        config_hash: config.hash(),
        config: config.entries(),
    })
}
