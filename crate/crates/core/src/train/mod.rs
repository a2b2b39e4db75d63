//! Two-stage episodic training with the boundary-weighted loss.

mod edt;
mod optim;

use std::collections::BTreeSet;

use log::{debug, warn};
use pemp_tensor::{Mode, Tape, Tensor, TensorError, Var};
use serde::{Deserialize, Serialize};

use crate::backbone::ForwardCtx;
use crate::config::RunConfig;
use crate::data::{sample_episode, Dataset, FoldSplit};
use crate::error::{Error, Result};
use crate::model::{rng_stream, streams, PempModel, Stage, StageInput};
use crate::params::ParamSet;

pub use edt::{boundary_map, edt, weight_map, BinaryMap, EMPTY_DISTANCE};
pub use optim::{clip_gradients, global_norm, sgd_update, OptimState, SgdConfig, StepReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    Prior,
    Seg,
}

impl StageKind {
    pub fn name(self) -> &'static str {
        match self {
            StageKind::Prior => "prior",
            StageKind::Seg => "seg",
        }
    }
}

/// One JSON-lines training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub stage: StageKind,
    pub class_id: usize,
    pub loss: f64,
    pub grad_norm_preclip: f64,
}

/// Weighted binary cross-entropy of the FG channel of `probs [2,H,W]`.
pub fn weighted_bce<'t>(probs: Var<'t>, label: &Tensor, weight: &Tensor) -> Result<Var<'t>> {
    Ok(probs.slice(0, 0, 1)?.weighted_bce(label, weight)?)
}

/// Loss weights for a query mask under `config`.
pub fn loss_weights(label: &Tensor, config: &RunConfig) -> Tensor {
    if config.use_weight_map {
        weight_map(&boundary_map(label), config.sigma, config.weight_sq_dist)
    } else {
        Tensor::ones(label.shape())
    }
}

struct StageRun<'a> {
    kind: StageKind,
    stage: &'a Stage,
    trainable: &'a dyn Fn(&str) -> bool,
    sgd: SgdConfig,
    epochs: usize,
}

fn diverged(kind: StageKind, step: usize, class_id: usize, query: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Tensor(TensorError::NonFinite { .. }) => Error::Diverged {
            stage: kind.name(),
            step,
            class_id,
            query,
        },
        other => other,
    }
}

fn run_stage(
    run: &StageRun<'_>,
    params: &mut ParamSet,
    dataset: &Dataset,
    base: &BTreeSet<usize>,
    config: &RunConfig,
    prior: Option<&PempModel>,
    log: &mut dyn FnMut(&LogRecord),
) -> Result<()> {
    let (episode_stream, dropout_stream) = match run.kind {
        StageKind::Prior => (streams::EPISODES_PRIOR, streams::DROPOUT_PRIOR),
        StageKind::Seg => (streams::EPISODES_SEG, streams::DROPOUT_SEG),
    };
    let mut episode_rng = rng_stream(config.seed, episode_stream);
    let mut dropout_rng = rng_stream(config.seed, dropout_stream);
    let mut state = OptimState::new(run.sgd);
    let mut tape = Tape::new();
    let steps = run.epochs * config.episodes_per_epoch;
    for step in 0..steps {
        let ep = sample_episode(dataset, base, config.shots, config.flip, &mut episode_rng)?;
        let fail = diverged(run.kind, step, ep.class_id, ep.query_id);
        let pseudo = prior.map(|m| m.pseudo_label(&ep)).transpose().map_err(&fail)?;
        let weight = loss_weights(&ep.query.mask, config);
        tape.reset();
        let (loss, mut grads, bound) = {
            let bound = params.bind(&tape, run.trainable);
            let input = StageInput {
                supports: ep.supports.iter().map(|s| (&s.image, &s.mask)).collect(),
                query: &ep.query.image,
                query_label: pseudo.as_ref(),
            };
            let mut ctx = ForwardCtx {
                mode: Mode::Train,
                rng: &mut dropout_rng,
            };
            let out = run.stage.forward(&tape, &bound, &input, &mut ctx).map_err(&fail)?;
            let loss = weighted_bce(out.probs_full, &ep.query.mask, &weight).map_err(&fail)?;
            let grads = tape.backward(loss).map_err(|e| fail(e.into()))?;
            (loss.value().item(), grads, bound)
        };
        let named = bound.collect_grads(&mut grads);
        let report = match sgd_update(params, named, &mut state) {
            Ok(r) => r,
            Err(Error::NonFiniteGradient) => {
                warn!("{} step {step}: non-finite gradient, update skipped", run.kind.name());
                continue;
            }
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(fail(Error::Tensor(TensorError::NonFinite { op: "loss" })));
        }
        let record = LogRecord {
            step,
            stage: run.kind,
            class_id: ep.class_id,
            loss,
            grad_norm_preclip: report.grad_norm_preclip,
        };
        if step % 200 == 0 {
            debug!("{} step {step}/{steps} loss {loss:.4}", run.kind.name());
        }
        log(&record);
    }
    Ok(())
}

/// Stage 1: prior network and its meta-prototypes on base-class episodes.
pub fn train_prior(
    dataset: &Dataset,
    split: &FoldSplit,
    config: &RunConfig,
    log: &mut dyn FnMut(&LogRecord),
) -> Result<ParamSet> {
    let stage = Stage::prior(config);
    let mut params = stage.init(&mut rng_stream(config.seed, streams::INIT_PRIOR), false);
    let run = StageRun {
        kind: StageKind::Prior,
        stage: &stage,
        trainable: &|_| true,
        sgd: sgd_config(config, config.prior_lr),
        epochs: config.prior_epochs,
    };
    run_stage(&run, &mut params, dataset, &split.base_classes, config, None, log)?;
    Ok(params)
}

/// Stage 2: segmentation network fed pseudo-labels from the frozen prior network.
///
/// With `use_comm` off the Communication Modules stay at zero and are not trained.
pub fn train_seg(
    dataset: &Dataset,
    split: &FoldSplit,
    config: &RunConfig,
    prior: &ParamSet,
    log: &mut dyn FnMut(&LogRecord),
) -> Result<ParamSet> {
    let frozen = PempModel {
        config: config.clone(),
        prior: prior.clone(),
        seg: None,
    };
    let stage = Stage::segmentation(config);
    let mut params = stage.init(&mut rng_stream(config.seed, streams::INIT_SEG), !config.use_comm);
    let use_comm = config.use_comm;
    let trainable = move |name: &str| use_comm || !name.starts_with("comm.");
    let run = StageRun {
        kind: StageKind::Seg,
        stage: &stage,
        trainable: &trainable,
        sgd: sgd_config(config, config.seg_lr),
        epochs: config.seg_epochs,
    };
    run_stage(
        &run,
        &mut params,
        dataset,
        &split.base_classes,
        config,
        Some(&frozen),
        log,
    )?;
    Ok(params)
}

fn sgd_config(config: &RunConfig, lr: f64) -> SgdConfig {
    SgdConfig {
        lr,
        momentum: config.momentum,
        weight_decay: config.weight_decay,
        clip_norm: config.clip_norm,
    }
}

/// Stage 1, then (when `two_stage`) stage 2 with the prior network frozen.
pub fn train_two_stage(
    dataset: &Dataset,
    split: &FoldSplit,
    config: &RunConfig,
    log: &mut dyn FnMut(&LogRecord),
) -> Result<PempModel> {
    config.validate()?;
    let prior = train_prior(dataset, split, config, log)?;
    let seg = if config.two_stage {
        Some(train_seg(dataset, split, config, &prior, log)?)
    } else {
        None
    };
    Ok(PempModel {
        config: config.clone(),
        prior,
        seg,
    })
}
