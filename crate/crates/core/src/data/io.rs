//! PNG persistence: `<root>/<class>/<name>.png` plus `<name>_mask.png`.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageReader, RgbImage};
use pemp_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::{Dataset, LabeledImage};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
const MASK_SUFFIX: &str = "_mask";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub classes: Vec<String>,
    pub counts: Vec<usize>,
    pub seed: u64,
    pub side: usize,
    pub generator_version: u32,
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn image_err(path: &Path, detail: impl ToString) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    }
}

/// Writes every image and mask as 8-bit PNG and a `manifest.json`.
pub fn save_dataset(dataset: &Dataset, root: &Path, seed: u64, generator_version: u32) -> Result<Manifest> {
    let mut counts = vec![0; dataset.num_classes()];
    for item in &dataset.items {
        let class = dataset
            .class_names
            .get(item.class_id)
            .ok_or_else(|| Error::Data(format!("class id {} has no name", item.class_id)))?;
        let dir = root.join(class);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let (h, w) = (item.height(), item.width());
        let plane = h * w;
        let px = item.image.data();
        let rgb = RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let i = y as usize * w + x as usize;
            image::Rgb([to_u8(px[i]), to_u8(px[plane + i]), to_u8(px[2 * plane + i])])
        });
        let m = item.mask.data();
        let mask = GrayImage::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([to_u8(m[y as usize * w + x as usize])])
        });
        let stem = format!("{:04}", counts[item.class_id]);
        let img_path = dir.join(format!("{stem}.png"));
        let mask_path = dir.join(format!("{stem}{MASK_SUFFIX}.png"));
        rgb.save(&img_path).map_err(|e| image_err(&img_path, e))?;
        mask.save(&mask_path).map_err(|e| image_err(&mask_path, e))?;
        counts[item.class_id] += 1;
    }
    let manifest = Manifest {
        classes: dataset.class_names.clone(),
        counts,
        seed,
        side: dataset.items.first().map_or(0, |it| it.height()),
        generator_version,
    };
    let path = root.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn load_rgb(path: &Path) -> Result<Tensor> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| image_err(path, e))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = w * h;
    let mut data = vec![0.0; 3 * plane];
    for (i, p) in img.pixels().enumerate() {
        for ch in 0..3 {
            data[ch * plane + i] = f64::from(p[ch]) / 255.0;
        }
    }
    Ok(Tensor::new(&[3, h, w], data)?)
}

fn load_mask(path: &Path) -> Result<Tensor> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| image_err(path, e))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| f64::from(u8::from(p[0] >= 128))).collect();
    Ok(Tensor::new(&[1, h, w], data)?)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

/// Loads `<root>/<class>/<name>.png` with `<name>_mask.png` masks.
///
/// Class order follows `manifest.json` when present, else sorted directory names.
pub fn ingest_external(root: &Path) -> Result<Dataset> {
    let manifest_path = root.join(MANIFEST);
    let class_names: Vec<String> = if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        serde_json::from_str::<Manifest>(&text)?.classes
    } else {
        sorted_entries(root)?
            .into_iter()
            .filter(|p| p.is_dir())
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect()
    };
    let mut items = Vec::new();
    for (class_id, class) in class_names.iter().enumerate() {
        for path in sorted_entries(&root.join(class))? {
            let Some(stem) = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .filter(|s| path.extension().is_some_and(|e| e == "png") && !s.ends_with(MASK_SUFFIX))
            else {
                continue;
            };
            let mask_path = path.with_file_name(format!("{stem}{MASK_SUFFIX}.png"));
            if !mask_path.exists() {
                return Err(image_err(&path, "missing mask"));
            }
            let image = load_rgb(&path)?;
            let mask = load_mask(&mask_path)?;
            if image.shape()[1..] != mask.shape()[1..] {
                return Err(image_err(
                    &mask_path,
                    format!(
                        "size mismatch: image {:?}, mask {:?}",
                        &image.shape()[1..],
                        &mask.shape()[1..]
                    ),
                ));
            }
            items.push(LabeledImage::new(image, mask, class_id)?);
        }
    }
    Ok(Dataset { class_names, items })
}
