//! Label-conditioned feature extractor: four conv blocks (total stride 4)
//! followed by the purifier head. Communication Modules, when enabled, sit
//! before every block and append two channels to each branch.

use pemp_tensor::{concat, resize_bilinear, ConvSpec, Mode, Tape, Tensor, Var};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::comm::{distribute, merge, region_stats};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamSet};

pub const BLOCKS: usize = 4;
/// Image intensities are mapped to `(v - INPUT_MEAN) / INPUT_SCALE` on entry.
pub const INPUT_MEAN: f64 = 0.5;
pub const INPUT_SCALE: f64 = 0.25;
/// Extra channels a Communication Module appends.
pub const COMM_CHANNELS: usize = 2;

/// Architecture of one network (prior or segmentation).
#[derive(Clone, Debug, PartialEq)]
pub struct NetSpec {
    /// 3 for image only, 4 when the label is an extra input channel.
    pub in_channels: usize,
    pub widths: [usize; BLOCKS],
    pub feature_dim: usize,
    pub aspp_dilations: Vec<usize>,
    pub dropout: f64,
    pub comm: bool,
    pub comm_masked_mean: bool,
}

/// Mode and randomness for one forward pass.
pub struct ForwardCtx<'r> {
    pub mode: Mode,
    pub rng: &'r mut dyn RngCore,
}

/// One image entering the extractor, with its (pseudo-) label if the network takes one.
#[derive(Clone, Copy)]
pub struct Branch<'a> {
    pub image: &'a Tensor,
    pub label: Option<&'a Tensor>,
}

/// Bilinear resize to `(h, w)` followed by a `>= 0.5` threshold.
pub fn downsample_label(label: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let r = resize_bilinear(label, h, w)?;
    Ok(r.map(|v| if v >= 0.5 { 1.0 } else { 0.0 }))
}

fn conv_param(block: usize, conv: usize) -> String {
    format!("backbone.block{block}.conv{conv}")
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn init_conv(params: &mut ParamSet, name: &str, c_out: usize, c_in: usize, k: usize, gain: f64, rng: &mut impl Rng) {
    let std = (gain / (c_in * k * k) as f64).sqrt();
    params.insert(
        format!("{name}.kernel"),
        Tensor::from_fn(&[c_out, c_in, k, k], |_| std * normal(rng)),
    );
    params.insert(format!("{name}.bias"), Tensor::zeros(&[c_out]));
}

impl NetSpec {
    pub fn block_in_channels(&self, block: usize) -> usize {
        let base = if block == 0 {
            self.in_channels
        } else {
            self.widths[block - 1]
        };
        base + if self.comm { COMM_CHANNELS } else { 0 }
    }

    /// Channels entering block `block` before any Communication Module.
    fn raw_channels(&self, block: usize) -> usize {
        if block == 0 {
            self.in_channels
        } else {
            self.widths[block - 1]
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.in_channels == 3 || self.in_channels == 4) {
            return Err(Error::Config(format!(
                "in_channels {} must be 3 or 4",
                self.in_channels
            )));
        }
        if self.comm && self.in_channels != 4 {
            return Err(Error::Config("Communication Modules need a label input channel".into()));
        }
        Ok(())
    }

    /// He-initialised convolutions, zero biases; comm layers start at zero when `comm_zero`.
    pub fn init(&self, rng: &mut impl Rng, comm_zero: bool) -> ParamSet {
        let mut p = ParamSet::new();
        for b in 0..BLOCKS {
            let cin = self.block_in_channels(b);
            init_conv(&mut p, &conv_param(b + 1, 1), self.widths[b], cin, 3, 2.0, rng);
            init_conv(
                &mut p,
                &conv_param(b + 1, 2),
                self.widths[b],
                self.widths[b],
                3,
                2.0,
                rng,
            );
            if self.comm {
                let n = 2 * self.raw_channels(b);
                let std = if comm_zero { 0.0 } else { (1.0 / n as f64).sqrt() };
                p.insert(
                    format!("comm.block{}.weight", b + 1),
                    Tensor::from_fn(&[COMM_CHANNELS, n], |_| std * normal(rng)),
                );
                p.insert(format!("comm.block{}.bias", b + 1), Tensor::zeros(&[COMM_CHANNELS]));
            }
        }
        let d = self.feature_dim;
        init_conv(&mut p, "purifier.reduce", d, self.widths[BLOCKS - 1], 1, 2.0, rng);
        init_conv(&mut p, "purifier.smooth", d, d, 3, 2.0, rng);
        for (i, _) in self.aspp_dilations.iter().enumerate() {
            init_conv(&mut p, &format!("purifier.aspp{}", i + 1), d, d, 3, 2.0, rng);
        }
        init_conv(
            &mut p,
            "purifier.project",
            d,
            d * self.aspp_dilations.len(),
            1,
            1.0,
            rng,
        );
        p
    }

    fn conv<'t>(&self, p: &Bound<'t>, name: &str, x: Var<'t>, spec: ConvSpec) -> Result<Var<'t>> {
        let k = p.var(&format!("{name}.kernel"))?;
        let b = p.var(&format!("{name}.bias"))?;
        Ok(x.conv2d(k, Some(b), spec)?)
    }

    fn block<'t>(&self, p: &Bound<'t>, b: usize, x: Var<'t>) -> Result<Var<'t>> {
        let same = ConvSpec::same(3, 1);
        let x = self.conv(p, &conv_param(b + 1, 1), x, same)?.relu()?;
        let x = self.conv(p, &conv_param(b + 1, 2), x, same)?.relu()?;
        if b < 2 {
            Ok(x.max_pool2()?)
        } else {
            Ok(x)
        }
    }

    /// Parallel dilated 3x3 convolutions, concatenated then projected back to `d`.
    pub fn aspp<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let branches = self
            .aspp_dilations
            .iter()
            .enumerate()
            .map(|(i, &dil)| {
                self.conv(p, &format!("purifier.aspp{}", i + 1), x, ConvSpec::same(3, dil))?
                    .relu()
                    .map_err(Error::from)
            })
            .collect::<Result<Vec<_>>>()?;
        self.conv(p, "purifier.project", concat(&branches, 0)?, ConvSpec::default())
    }

    fn purify<'t>(&self, p: &Bound<'t>, x: Var<'t>, ctx: &mut ForwardCtx<'_>) -> Result<Var<'t>> {
        let x = self.conv(p, "purifier.reduce", x, ConvSpec::default())?.relu()?;
        let x = self.conv(p, "purifier.smooth", x, ConvSpec::same(3, 1))?.relu()?;
        let x = self.aspp(p, x)?;
        Ok(x.dropout_channels(self.dropout, ctx.mode, &mut *ctx.rng)?)
    }

    fn input<'t>(&self, tape: &'t Tape, branch: &Branch<'_>) -> Result<Var<'t>> {
        let s = branch.image.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(Error::Data(format!("image shape {s:?} is not [3,H,W]")));
        }
        let image = branch.image.map(|v| (v - INPUT_MEAN) / INPUT_SCALE);
        match (branch.label, self.in_channels) {
            (None, 3) => Ok(tape.constant(image)),
            (Some(label), 4) => {
                if label.shape() != [1, s[1], s[2]] {
                    return Err(Error::Data(format!("label {:?} for image {s:?}", label.shape())));
                }
                let mut data = image.into_data();
                data.extend_from_slice(label.data());
                Ok(tape.constant(Tensor::new(&[4, s[1], s[2]], data)?))
            }
            (label, c) => Err(Error::Config(format!(
                "network expects {c} input channels but the label is {}",
                if label.is_some() { "present" } else { "absent" }
            ))),
        }
    }

    /// Features `[d, H/4, W/4]` of one image.
    ///
    /// With Communication Modules the image acts as its own partner branch.
    pub fn extract_features<'t>(
        &self,
        tape: &'t Tape,
        p: &Bound<'t>,
        image: &Tensor,
        label: Option<&Tensor>,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Var<'t>> {
        let branch = Branch { image, label };
        let (mut s, _) = self.extract_episode(tape, p, &[branch], branch, ctx)?;
        Ok(s.remove(0))
    }

    /// Features of all support branches and the query, coupled through the
    /// Communication Modules when enabled.
    pub fn extract_episode<'t>(
        &self,
        tape: &'t Tape,
        p: &Bound<'t>,
        supports: &[Branch<'_>],
        query: Branch<'_>,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<(Vec<Var<'t>>, Var<'t>)> {
        let branches: Vec<Branch<'_>> = supports.iter().copied().chain([query]).collect();
        let mut xs = branches
            .iter()
            .map(|b| self.input(tape, b))
            .collect::<Result<Vec<_>>>()?;
        let size = branches[0].image.shape()[1..].to_vec();
        if branches.iter().any(|b| b.image.shape()[1..] != size[..]) {
            return Err(Error::Data("all branches of an episode must share a resolution".into()));
        }
        for b in 0..BLOCKS {
            if self.comm {
                let shape = xs[0].shape();
                let stats = xs
                    .iter()
                    .zip(&branches)
                    .map(|(x, br)| {
                        let label = br.label.expect("comm networks take labels");
                        let small = downsample_label(label, shape[1], shape[2])?;
                        region_stats(*x, &small, self.comm_masked_mean)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let (support_stats, query_stats) = stats.split_at(supports.len());
                let weight = p.var(&format!("comm.block{}.weight", b + 1))?;
                let bias = p.var(&format!("comm.block{}.bias", b + 1))?;
                let u = merge(support_stats, &query_stats[0], weight, bias)?;
                xs = xs.into_iter().map(|x| distribute(x, u)).collect::<Result<_>>()?;
            }
            xs = xs.into_iter().map(|x| self.block(p, b, x)).collect::<Result<_>>()?;
        }
        let mut feats = xs
            .into_iter()
            .map(|x| self.purify(p, x, ctx))
            .collect::<Result<Vec<_>>>()?;
        let q = feats.pop().expect("query branch");
        Ok((feats, q))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(in_channels: usize, comm: bool) -> NetSpec {
        NetSpec {
            in_channels,
            widths: [4, 6, 6, 8],
            feature_dim: 5,
            aspp_dilations: vec![1, 2, 4],
            dropout: 0.1,
            comm,
            comm_masked_mean: false,
        }
    }

    #[test]
    fn stride_four_output() {
        let s = spec(3, false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = s.init(&mut rng, false);
        let tape = Tape::new();
        let bound = p.bind(&tape, |_| false);
        let img = Tensor::from_fn(&[3, 32, 32], |i| (i % 17) as f64 / 17.0);
        let mut ctx = ForwardCtx {
            mode: Mode::Eval,
            rng: &mut rng,
        };
        let f = s.extract_features(&tape, &bound, &img, None, &mut ctx).unwrap();
        assert_eq!(f.shape(), vec![5, 8, 8]);
    }

    #[test]
    fn label_arity_is_checked() {
        let s = spec(4, false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = s.init(&mut rng, false);
        let tape = Tape::new();
        let bound = p.bind(&tape, |_| false);
        let img = Tensor::zeros(&[3, 16, 16]);
        let mut ctx = ForwardCtx {
            mode: Mode::Eval,
            rng: &mut rng,
        };
        assert!(s.extract_features(&tape, &bound, &img, None, &mut ctx).is_err());
        assert!(spec(3, true).validate().is_err());
    }

    #[test]
    fn parameter_count_depends_only_on_widths() {
        let s = spec(4, true);
        let a = s.init(&mut ChaCha8Rng::seed_from_u64(1), false);
        let b = s.init(&mut ChaCha8Rng::seed_from_u64(2), true);
        assert_eq!(a.numel(), b.numel());
        assert_eq!(
            a.get("backbone.block1.conv1.kernel").unwrap().shape(),
            &[4, 4 + COMM_CHANNELS, 3, 3]
        );
        assert_eq!(a.get("comm.block2.weight").unwrap().shape(), &[2, 8]);
    }

    #[test]
    fn downsample_label_rules() {
        let mut y = Tensor::zeros(&[1, 4, 4]);
        for (r, c) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            y.set(&[0, r, c], 1.0);
        }
        let d = downsample_label(&y, 2, 2).unwrap();
        assert_eq!(d.sum(), 1.0);
        assert_eq!(downsample_label(&y, 4, 4).unwrap(), y);
        assert_eq!(
            downsample_label(&Tensor::ones(&[1, 8, 8]), 3, 5).unwrap(),
            Tensor::ones(&[1, 3, 5])
        );
    }
}
