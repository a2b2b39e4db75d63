//! Prototype heads: masked average pooling with a cosine predictor, and the
//! Meta-Prototype Module (attention over learned meta-prototypes, adaptive
//! prototypes, max fusion across prototypes).

use pemp_tensor::{concat, Tape, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::params::ParamSet;

pub const BANK_FG: &str = "mpm.fg";
pub const BANK_BG: &str = "mpm.bg";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Region {
    Fg,
    Bg,
}

impl Region {
    pub fn name(self) -> &'static str {
        match self {
            Region::Fg => "foreground",
            Region::Bg => "background",
        }
    }
}

/// Adds meta-prototype banks `[M, d]` for both regions, entries drawn from N(0, 1).
pub fn init_bank(params: &mut ParamSet, m: usize, d: usize, rng: &mut impl Rng) {
    for name in [BANK_FG, BANK_BG] {
        params.insert(name, Tensor::from_fn(&[m, d], |_| rng.sample(StandardNormal)));
    }
}

/// Mean feature vector `[d]` over pixels where `mask [1,h,w]` is 1.
pub fn masked_average_pool<'t>(features: Var<'t>, mask: &Tensor) -> Result<Var<'t>> {
    masked_average_pool_shots(&[(features, mask)], Region::Fg)
}

/// Pools the masked pixels of all shots into one average.
///
/// `region` selects mask-positive (`Fg`) or mask-zero (`Bg`) pixels.
pub fn masked_average_pool_shots<'t>(shots: &[(Var<'t>, &Tensor)], region: Region) -> Result<Var<'t>> {
    let mut total = None;
    let mut count = 0.0;
    for (feats, mask) in shots {
        let m = region_mask(mask, region);
        count += m.sum();
        let s = feats.mask_channels(&m)?.spatial_sum()?;
        total = Some(match total {
            None => s,
            Some(acc) => s.add(acc)?,
        });
    }
    let total = total.ok_or(Error::EmptyRegion(region.name()))?;
    if count == 0.0 {
        return Err(Error::EmptyRegion(region.name()));
    }
    Ok(total.scale(1.0 / count)?)
}

fn region_mask(mask: &Tensor, region: Region) -> Tensor {
    match region {
        Region::Fg => mask.clone(),
        Region::Bg => mask.map(|v| 1.0 - v),
    }
}

/// Support pixels of all shots as columns `[d, N]` with their `[N]` masks.
pub fn flatten_shots<'t>(shots: &[(Var<'t>, &Tensor)]) -> Result<(Var<'t>, Tensor)> {
    let mut cols = Vec::with_capacity(shots.len());
    let mut mask = Vec::new();
    for (feats, m) in shots {
        let s = feats.shape();
        cols.push(feats.reshape(&[s[0], s[1] * s[2]])?);
        mask.extend_from_slice(m.data());
    }
    let n = mask.len();
    Ok((concat(&cols, 1)?, Tensor::new(&[n], mask)?))
}

/// `α[m, i] = softmax_m(-‖h_i - q_m‖)` for features `[d, N]` and a bank `[M, d]`.
pub fn mpm_attention<'t>(features: Var<'t>, bank: Var<'t>) -> Result<Var<'t>> {
    Ok(features.distance_map(bank)?.neg()?.softmax(0)?)
}

/// `p̂_m = (1/|I|) Σ_{i∈I} α[m,i] h_i` over the pixels where `region_mask [N]` is 1.
pub fn adaptive_prototypes<'t>(
    features: Var<'t>,
    region_mask: &Tensor,
    alpha: Var<'t>,
    region: Region,
) -> Result<Var<'t>> {
    let count = region_mask.sum();
    if count == 0.0 {
        return Err(Error::EmptyRegion(region.name()));
    }
    let (m, n) = (alpha.shape()[0], alpha.shape()[1]);
    let mask = region_mask.clone().reshape(&[1, 1, n])?;
    let weighted = alpha.reshape(&[m, 1, n])?.mask_channels(&mask)?.reshape(&[m, n])?;
    Ok(weighted.matmul_nt(features)?.scale(1.0 / count)?)
}

/// Attention maps of both regions as `[2, M, h, w]` for one support feature map.
pub fn attention_map(features: &Tensor, bank_fg: &Tensor, bank_bg: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let s = features.shape();
    let f = tape.constant(features.clone()).reshape(&[s[0], s[1] * s[2]])?;
    let a_fg = mpm_attention(f, tape.constant(bank_fg.clone()))?;
    let a_bg = mpm_attention(f, tape.constant(bank_bg.clone()))?;
    let m = bank_fg.shape()[0];
    let both = concat(&[a_fg, a_bg], 0)?.reshape(&[2, m, s[1], s[2]])?;
    Ok((*both.value()).clone())
}

/// Tape-level prediction on a feature grid.
pub struct Prediction<'t> {
    /// `γ·s_r`, `[2, h, w]` with FG first.
    pub logits: Var<'t>,
    /// Softmax of `logits` over regions.
    pub probs: Var<'t>,
    /// Argmax prototype of the winning region per pixel.
    pub winner_index: Vec<usize>,
}

impl Prediction<'_> {
    pub fn to_map(&self) -> PredictionMap {
        PredictionMap {
            probs: (*self.probs.value()).clone(),
            winner_index: self.winner_index.clone(),
        }
    }
}

/// Detached per-pixel FG/BG probabilities with the winning prototype index.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionMap {
    pub probs: Tensor,
    pub winner_index: Vec<usize>,
}

impl PredictionMap {
    pub fn height(&self) -> usize {
        self.probs.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.probs.shape()[2]
    }

    pub fn fg(&self, pixel: usize) -> f64 {
        self.probs.data()[pixel]
    }

    /// Region whose probability wins at `pixel`; ties go to foreground.
    pub fn winner_region(&self, pixel: usize) -> Region {
        let plane = self.height() * self.width();
        if self.probs.data()[pixel] >= self.probs.data()[plane + pixel] {
            Region::Fg
        } else {
            Region::Bg
        }
    }
}

/// Cosine-max predictor: `s_r = max_m cos(h_i, p̂^r_m)`, probs = softmax over `r` of `γ·s_r`.
///
/// Prototypes are `[M, d]` per region; query features are `[d, h, w]`.
pub fn fused_predict<'t>(query: Var<'t>, protos_fg: Var<'t>, protos_bg: Var<'t>, gamma: f64) -> Result<Prediction<'t>> {
    let s = query.shape();
    let (d, h, w) = (s[0], s[1], s[2]);
    let flat = query.reshape(&[d, h * w])?;
    let (s_fg, idx_fg) = flat.cosine_map(protos_fg)?.max_axis(0)?;
    let (s_bg, idx_bg) = flat.cosine_map(protos_bg)?.max_axis(0)?;
    let logits = concat(&[s_fg, s_bg], 0)?.scale(gamma)?.reshape(&[2, h, w])?;
    let probs = logits.softmax(0)?;
    let p = probs.value();
    let plane = h * w;
    let winner_index = (0..plane)
        .map(|i| {
            if p.data()[i] >= p.data()[plane + i] {
                idx_fg[i]
            } else {
                idx_bg[i]
            }
        })
        .collect();
    Ok(Prediction {
        logits,
        probs,
        winner_index,
    })
}

/// Single-prototype cosine predictor on `[d]` prototypes.
pub fn baseline_predict<'t>(query: Var<'t>, p_fg: Var<'t>, p_bg: Var<'t>, gamma: f64) -> Result<Prediction<'t>> {
    let d = p_fg.shape()[0];
    fused_predict(query, p_fg.reshape(&[1, d])?, p_bg.reshape(&[1, d])?, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_hand_example() {
        let tape = Tape::new();
        // [d=2, 2, 2]: pixels [1,0], [3,0], [0,5], [0,7].
        let f = tape.constant(Tensor::new(&[2, 2, 2], vec![1.0, 3.0, 0.0, 0.0, 0.0, 0.0, 5.0, 7.0]).unwrap());
        let mask = Tensor::new(&[1, 2, 2], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(masked_average_pool(f, &mask).unwrap().value().data(), &[2.0, 0.0]);
        let bg = masked_average_pool_shots(&[(f, &mask)], Region::Bg).unwrap();
        assert_eq!(bg.value().data(), &[0.0, 6.0]);
        assert!(matches!(
            masked_average_pool(f, &Tensor::zeros(&[1, 2, 2])),
            Err(Error::EmptyRegion(_))
        ));
    }

    #[test]
    fn fused_scalar_example() {
        // One pixel, d=2, prototypes arranged so the cosines are FG {0.9, 0.2}, BG {0.1, 0.3}.
        let tape = Tape::new();
        let q = tape.constant(Tensor::new(&[2, 1, 1], vec![1.0, 0.0]).unwrap());
        let unit = |c: f64| [c, (1.0 - c * c).sqrt()];
        let rows = |a: f64, b: f64| {
            let mut v = unit(a).to_vec();
            v.extend(unit(b));
            tape.constant(Tensor::new(&[2, 2], v).unwrap())
        };
        let pred = fused_predict(q, rows(0.9, 0.2), rows(0.1, 0.3), 20.0).unwrap();
        let p = pred.probs.value();
        let expect_bg = 1.0 / (1.0 + (12.0f64).exp());
        assert!((p.data()[1] - expect_bg).abs() < 1e-12);
        assert!((p.data()[0] - 0.999_994).abs() < 1e-6);
        assert_eq!(pred.winner_index, vec![0]);
    }
}
