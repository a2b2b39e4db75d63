//! Labeled images, class folds and 1-way K-shot episodes.

mod io;
mod synth;

use std::collections::BTreeSet;

use pemp_tensor::Tensor;
use rand::seq::index::sample;
use rand::Rng;

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub use io::{ingest_external, save_dataset, Manifest};
pub use synth::{generate_synthetic_dataset, ShapeFamily, FAMILIES, GENERATOR_VERSION};

/// One image with its binary object mask.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    /// `[3,H,W]`, values in `[0,1]`.
    pub image: Tensor,
    /// `[1,H,W]`, values in `{0,1}`.
    pub mask: Tensor,
    pub class_id: usize,
}

impl LabeledImage {
    pub fn new(image: Tensor, mask: Tensor, class_id: usize) -> Result<Self> {
        let (is, ms) = (image.shape(), mask.shape());
        if is.len() != 3 || is[0] != 3 || ms.len() != 3 || ms[0] != 1 || is[1..] != ms[1..] {
            return Err(Error::Data(format!(
                "image {is:?} and mask {ms:?} must be [3,H,W] and [1,H,W]"
            )));
        }
        if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data("mask values must be 0 or 1".into()));
        }
        Ok(Self { image, mask, class_id })
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.mask.sum() / self.mask.numel() as f64
    }

    pub fn flipped(&self) -> Self {
        Self {
            image: self.image.flip_last_axis(),
            mask: self.mask.flip_last_axis(),
            class_id: self.class_id,
        }
    }
}

/// Images plus the ordered class list they index into.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub items: Vec<LabeledImage>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Dataset indices of every image of `class_id`, in storage order.
    pub fn indices_of(&self, class_id: usize) -> Vec<usize> {
        self.items
            .iter()
            .enumerate()
            .filter(|(_, it)| it.class_id == class_id)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Base/novel class partition for one cross-validation fold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold: usize,
    pub base_classes: BTreeSet<usize>,
    pub novel_classes: BTreeSet<usize>,
}

/// Novel classes are the contiguous block `[fold*q, (fold+1)*q)` with `q = num_classes/4`.
pub fn split_classes(num_classes: usize, fold: usize) -> Result<FoldSplit> {
    if fold > 3 {
        return Err(Error::Data(format!("invalid fold {fold}, expected 0..=3")));
    }
    if num_classes == 0 || !num_classes.is_multiple_of(4) {
        return Err(Error::Data(format!(
            "num_classes {num_classes} is not a positive multiple of 4"
        )));
    }
    let q = num_classes / 4;
    let novel: BTreeSet<usize> = (fold * q..(fold + 1) * q).collect();
    let base = (0..num_classes).filter(|c| !novel.contains(c)).collect();
    Ok(FoldSplit {
        fold,
        base_classes: base,
        novel_classes: novel,
    })
}

/// K supports and one query of a single class.
#[derive(Clone, Debug)]
pub struct Episode {
    pub supports: Vec<LabeledImage>,
    pub query: LabeledImage,
    pub class_id: usize,
    /// Dataset indices of the supports, then of the query.
    pub support_ids: Vec<usize>,
    pub query_id: usize,
}

impl Episode {
    pub fn shots(&self) -> usize {
        self.supports.len()
    }
}

/// Draws a class uniformly from `class_pool`, then K+1 distinct images of it.
///
/// With `flip` set each image is mirrored horizontally with probability 1/2.
pub fn sample_episode<R: Rng + ?Sized>(
    dataset: &Dataset,
    class_pool: &BTreeSet<usize>,
    shots: usize,
    flip: bool,
    rng: &mut R,
) -> Result<Episode> {
    if shots == 0 {
        return Err(Error::Data("episodes need at least one support".into()));
    }
    if class_pool.is_empty() {
        return Err(Error::Data("empty class pool".into()));
    }
    let pool: Vec<usize> = class_pool.iter().copied().collect();
    let class_id = pool[rng.random_range(0..pool.len())];
    let members = dataset.indices_of(class_id);
    if members.len() < shots + 1 {
        return Err(Error::Data(format!(
            "class {class_id} has {} images, a {shots}-shot episode needs {}",
            members.len(),
            shots + 1
        )));
    }
    let picks: Vec<usize> = sample(rng, members.len(), shots + 1)
        .into_iter()
        .map(|i| members[i])
        .collect();
    let mut take = |id: usize| {
        let item = &dataset.items[id];
        if flip && rng.random_bool(0.5) {
            item.flipped()
        } else {
            item.clone()
        }
    };
    let supports = picks[..shots].iter().map(|&id| take(id)).collect();
    let query = take(picks[shots]);
    Ok(Episode {
        supports,
        query,
        class_id,
        support_ids: picks[..shots].to_vec(),
        query_id: picks[shots],
    })
}

/// The dataset `config` describes: ingested from `data_dir` when set, else generated.
pub fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    let ds = match &config.data_dir {
        Some(dir) => ingest_external(dir)?,
        None => generate_synthetic_dataset(config.num_classes, config.per_class, config.side, config.data_seed)?,
    };
    if ds.num_classes() != config.num_classes {
        return Err(Error::Data(format!(
            "dataset has {} classes but the config says num_classes = {}",
            ds.num_classes(),
            config.num_classes
        )));
    }
    Ok(ds)
}
