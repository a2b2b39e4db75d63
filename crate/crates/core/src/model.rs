//! The two networks of PEMP and the episode-level forward pass.

use std::path::Path;

use pemp_tensor::{Mode, Tape, Tensor, Var};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{downsample_label, Branch, ForwardCtx, NetSpec};
use crate::config::RunConfig;
use crate::data::Episode;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamSet};
use crate::proto::{
    adaptive_prototypes, baseline_predict, flatten_shots, fused_predict, init_bank, masked_average_pool_shots,
    mpm_attention, Prediction, PredictionMap, Region, BANK_BG, BANK_FG,
};

pub const PRIOR_CHECKPOINT: &str = "prior.ckpt";
pub const SEG_CHECKPOINT: &str = "seg.ckpt";

/// RNG stream ids so that each consumer of randomness is independent.
pub mod streams {
    pub const INIT_PRIOR: u64 = 1;
    pub const INIT_SEG: u64 = 2;
    pub const EPISODES_PRIOR: u64 = 3;
    pub const EPISODES_SEG: u64 = 4;
    pub const DROPOUT_PRIOR: u64 = 5;
    pub const DROPOUT_SEG: u64 = 6;
    pub const EVAL_BASE: u64 = 100;
}

pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One network plus its prototype head.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub spec: NetSpec,
    pub num_prototypes: usize,
    pub gamma: f64,
}

/// Output of [`Stage::forward`].
pub struct StageOutput<'t> {
    /// Prediction on the feature grid.
    pub pred: Prediction<'t>,
    /// `[2, H, W]` probabilities from logits upsampled to image resolution.
    pub probs_full: Var<'t>,
    /// A support region was empty at feature resolution; its prototypes are zero.
    pub degenerate: bool,
}

/// Supports with their masks and the query image with its (pseudo-) label.
pub struct StageInput<'a> {
    pub supports: Vec<(&'a Tensor, &'a Tensor)>,
    pub query: &'a Tensor,
    pub query_label: Option<&'a Tensor>,
}

impl Stage {
    pub fn prior(config: &RunConfig) -> Self {
        Self::build(config, 3, config.prior_dropout, false)
    }

    pub fn segmentation(config: &RunConfig) -> Self {
        Self::build(config, 4, config.seg_dropout, true)
    }

    fn build(config: &RunConfig, in_channels: usize, dropout: f64, comm: bool) -> Self {
        Self {
            spec: NetSpec {
                in_channels,
                widths: config.widths.clone().try_into().expect("validated widths"),
                feature_dim: config.feature_dim,
                aspp_dilations: config.aspp_dilations.clone(),
                dropout,
                comm,
                comm_masked_mean: config.comm_masked_mean,
            },
            num_prototypes: config.num_prototypes,
            gamma: config.gamma,
        }
    }

    pub fn uses_bank(&self) -> bool {
        self.num_prototypes > 1
    }

    pub fn init(&self, rng: &mut impl Rng, comm_zero: bool) -> ParamSet {
        let mut p = self.spec.init(rng, comm_zero);
        if self.uses_bank() {
            init_bank(&mut p, self.num_prototypes, self.spec.feature_dim, rng);
        }
        p
    }

    fn region_protos<'t>(
        &self,
        p: &Bound<'t>,
        flat: Var<'t>,
        mask: &Tensor,
        region: Region,
    ) -> Result<Option<Var<'t>>> {
        if mask.sum() == 0.0 {
            return Ok(None);
        }
        let bank = p.var(if region == Region::Fg { BANK_FG } else { BANK_BG })?;
        let alpha = mpm_attention(flat, bank)?;
        Ok(Some(adaptive_prototypes(flat, mask, alpha, region)?))
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        p: &Bound<'t>,
        input: &StageInput<'_>,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<StageOutput<'t>> {
        let takes_label = self.spec.in_channels == 4;
        let branches: Vec<Branch<'_>> = input
            .supports
            .iter()
            .map(|(image, mask)| Branch {
                image,
                label: takes_label.then_some(*mask),
            })
            .collect();
        let query = Branch {
            image: input.query,
            label: input.query_label,
        };
        let (support_feats, query_feats) = self.spec.extract_episode(tape, p, &branches, query, ctx)?;
        let fs = query_feats.shape();
        let (d, h, w) = (fs[0], fs[1], fs[2]);
        let small: Vec<Tensor> = input
            .supports
            .iter()
            .map(|(_, mask)| downsample_label(mask, h, w))
            .collect::<Result<_>>()?;
        let shots: Vec<(Var<'t>, &Tensor)> = support_feats.iter().copied().zip(small.iter()).collect();
        let mut degenerate = false;
        let m = self.num_prototypes;
        let pred = if self.uses_bank() {
            let (flat, fg_mask) = flatten_shots(&shots)?;
            let bg_mask = fg_mask.map(|v| 1.0 - v);
            let mut protos = |mask: &Tensor, region| -> Result<Var<'t>> {
                Ok(match self.region_protos(p, flat, mask, region)? {
                    Some(v) => v,
                    None => {
                        degenerate = true;
                        tape.constant(Tensor::zeros(&[m, d]))
                    }
                })
            };
            let p_fg = protos(&fg_mask, Region::Fg)?;
            let p_bg = protos(&bg_mask, Region::Bg)?;
            fused_predict(query_feats, p_fg, p_bg, self.gamma)?
        } else {
            let mut pool = |region| -> Result<Var<'t>> {
                match masked_average_pool_shots(&shots, region) {
                    Ok(v) => Ok(v),
                    Err(crate::Error::EmptyRegion(_)) => {
                        degenerate = true;
                        Ok(tape.constant(Tensor::zeros(&[d])))
                    }
                    Err(e) => Err(e),
                }
            };
            let p_fg = pool(Region::Fg)?;
            let p_bg = pool(Region::Bg)?;
            baseline_predict(query_feats, p_fg, p_bg, self.gamma)?
        };
        let s = input.query.shape();
        let probs_full = pred.logits.resize_bilinear(s[1], s[2])?.softmax(0)?;
        Ok(StageOutput {
            pred,
            probs_full,
            degenerate,
        })
    }
}

/// Thresholds the FG channel of `[2,h,w]` probabilities at 0.5 (inclusive) and
/// brings the result to `(height, width)` by bilinear resize and re-threshold.
pub fn binarize_prior(probs: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let fg = probs.channel(0)?.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
    if fg.shape()[1..] == [height, width] {
        Ok(fg)
    } else {
        downsample_label(&fg, height, width)
    }
}

/// Detached result of a full model on one episode.
#[derive(Clone, Debug)]
pub struct EpisodePrediction {
    /// Binary `[1,H,W]` query mask.
    pub mask: Tensor,
    /// `[2,H,W]` final probabilities.
    pub probs: Tensor,
    /// Feature-grid map of the final stage.
    pub map: PredictionMap,
    pub pseudo_label: Option<Tensor>,
    pub degenerate: bool,
}

/// Trained parameters of the prior network and, for two-stage runs, the segmentation network.
#[derive(Clone, Debug, PartialEq)]
pub struct PempModel {
    pub config: RunConfig,
    pub prior: ParamSet,
    pub seg: Option<ParamSet>,
}

struct NoRng;

impl RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("eval-mode forward passes draw no random numbers")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("eval-mode forward passes draw no random numbers")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("eval-mode forward passes draw no random numbers")
    }
}

/// Eval-mode forward of `stage` on one episode, detached from any tape.
pub fn stage_predict(
    stage: &Stage,
    params: &ParamSet,
    episode: &Episode,
    query_label: Option<&Tensor>,
) -> Result<(Tensor, PredictionMap, bool)> {
    let tape = Tape::new();
    let bound = params.bind(&tape, |_| false);
    let input = StageInput {
        supports: episode.supports.iter().map(|s| (&s.image, &s.mask)).collect(),
        query: &episode.query.image,
        query_label,
    };
    let mut rng = NoRng;
    let mut ctx = ForwardCtx {
        mode: Mode::Eval,
        rng: &mut rng,
    };
    let out = stage.forward(&tape, &bound, &input, &mut ctx)?;
    let probs = (*out.probs_full.value()).clone();
    Ok((probs, out.pred.to_map(), out.degenerate))
}

/// Errors unless `params` has exactly the names and shapes `stage` initialises.
fn check_layout(stage: &Stage, params: &ParamSet, what: &str) -> Result<()> {
    let expected = stage.init(&mut rng_stream(0, 0), false);
    let same = expected.len() == params.len()
        && expected
            .iter()
            .all(|(n, t)| params.get(n).is_some_and(|p| p.shape() == t.shape()));
    if same {
        Ok(())
    } else {
        Err(Error::Checkpoint(format!(
            "{what} parameters do not match the configured architecture"
        )))
    }
}

impl PempModel {
    /// Writes `prior.ckpt` and, for two-stage models, `seg.ckpt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.prior.save(&dir.join(PRIOR_CHECKPOINT))?;
        if let Some(seg) = &self.seg {
            seg.save(&dir.join(SEG_CHECKPOINT))?;
        }
        Ok(())
    }

    /// Loads the checkpoints `config` calls for from `dir`.
    pub fn load(dir: &Path, config: &RunConfig) -> Result<Self> {
        let prior = ParamSet::load(&dir.join(PRIOR_CHECKPOINT))?;
        check_layout(&Stage::prior(config), &prior, "prior network")?;
        let seg = if config.two_stage {
            let seg = ParamSet::load(&dir.join(SEG_CHECKPOINT))?;
            check_layout(&Stage::segmentation(config), &seg, "segmentation network")?;
            Some(seg)
        } else {
            None
        };
        Ok(Self {
            config: config.clone(),
            prior,
            seg,
        })
    }

    pub fn prior_stage(&self) -> Stage {
        Stage::prior(&self.config)
    }

    pub fn seg_stage(&self) -> Stage {
        Stage::segmentation(&self.config)
    }

    /// Pseudo-label for the query of `episode` from the prior network.
    pub fn pseudo_label(&self, episode: &Episode) -> Result<Tensor> {
        let (probs, _, _) = stage_predict(&self.prior_stage(), &self.prior, episode, None)?;
        let (h, w) = (episode.query.height(), episode.query.width());
        binarize_prior(&probs, h, w)
    }

    pub fn predict(&self, episode: &Episode) -> Result<EpisodePrediction> {
        let (prior_probs, prior_map, prior_degenerate) =
            stage_predict(&self.prior_stage(), &self.prior, episode, None)?;
        let (h, w) = (episode.query.height(), episode.query.width());
        let (probs, map, degenerate, pseudo_label) = match &self.seg {
            None => (prior_probs, prior_map, prior_degenerate, None),
            Some(seg) => {
                let pseudo = binarize_prior(&prior_probs, h, w)?;
                let (probs, map, deg) = stage_predict(&self.seg_stage(), seg, episode, Some(&pseudo))?;
                (probs, map, deg, Some(pseudo))
            }
        };
        let mask = binarize_prior(&probs, h, w)?;
        Ok(EpisodePrediction {
            mask,
            probs,
            map,
            pseudo_label,
            degenerate,
        })
    }
}
