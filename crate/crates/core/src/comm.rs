//! Communication Modules: masked region statistics are merged across the
//! support and query branches, compressed to two scalars and appended to
//! both branches as constant channels.

use pemp_tensor::{concat, Tensor, Var};

use crate::error::{Error, Result};

/// Channelwise mean and max of label-masked features.
#[derive(Clone, Copy, Debug)]
pub struct RegionStats<'t> {
    pub mean: Var<'t>,
    pub max: Var<'t>,
}

/// Statistics of `features [c,h,w]` inside `label [1,h,w]`.
///
/// The mean divides by `h*w`, or by the label area when `masked_mean` is set
/// (an empty label then yields zero).
pub fn region_stats<'t>(features: Var<'t>, label: &Tensor, masked_mean: bool) -> Result<RegionStats<'t>> {
    let masked = features.mask_channels(label)?;
    let denom = if masked_mean { label.sum() } else { label.numel() as f64 };
    let scale = if denom > 0.0 { 1.0 / denom } else { 0.0 };
    Ok(RegionStats {
        mean: masked.spatial_sum()?.scale(scale)?,
        max: masked.spatial_max()?,
    })
}

fn average<'t>(vars: &[Var<'t>]) -> Result<Var<'t>> {
    let mut acc = vars[0];
    for v in &vars[1..] {
        acc = acc.add(*v)?;
    }
    Ok(acc.scale(1.0 / vars.len() as f64)?)
}

/// `u = W · [mean_avg; max_avg] + b`, with the support side first averaged over shots.
pub fn merge<'t>(
    supports: &[RegionStats<'t>],
    query: &RegionStats<'t>,
    weight: Var<'t>,
    bias: Var<'t>,
) -> Result<Var<'t>> {
    if supports.is_empty() {
        return Err(Error::Data("merge needs at least one support branch".into()));
    }
    let s_mean = average(&supports.iter().map(|s| s.mean).collect::<Vec<_>>())?;
    let s_max = average(&supports.iter().map(|s| s.max).collect::<Vec<_>>())?;
    let mean = s_mean.add(query.mean)?.scale(0.5)?;
    let max = s_max.add(query.max)?.scale(0.5)?;
    let v = concat(&[mean, max], 0)?;
    let n = v.shape()[0];
    let u = weight.matmul(v.reshape(&[n, 1])?)?.reshape(&[2])?;
    Ok(u.add(bias)?)
}

/// Appends `u` broadcast over the plane as two extra channels.
pub fn distribute<'t>(features: Var<'t>, u: Var<'t>) -> Result<Var<'t>> {
    let s = features.shape();
    let plane = u.broadcast_spatial(s[1], s[2])?;
    Ok(concat(&[features, plane], 0)?)
}

/// One-support merge followed by distribution to both branches.
pub fn merge_distribute<'t>(
    stats_s: &RegionStats<'t>,
    stats_q: &RegionStats<'t>,
    weight: Var<'t>,
    bias: Var<'t>,
    features_s: Var<'t>,
    features_q: Var<'t>,
) -> Result<(Var<'t>, Var<'t>)> {
    let (ss, sq) = (features_s.shape(), features_q.shape());
    if ss.len() != 3 || sq.len() != 3 || ss[1..] != sq[1..] {
        return Err(Error::Tensor(pemp_tensor::TensorError::Shape {
            op: "merge_distribute",
            detail: format!("support {ss:?} and query {sq:?} resolutions differ"),
        }));
    }
    let u = merge(std::slice::from_ref(stats_s), stats_q, weight, bias)?;
    Ok((distribute(features_s, u)?, distribute(features_q, u)?))
}
