//! PNG export of predictions and winner-prototype maps.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::GrayImage;
use pemp_tensor::Tensor;

use crate::error::{Error, Result};
use crate::proto::{PredictionMap, Region};

/// Palette index of prototype `m` of `region`: foreground entries first.
pub fn palette_index(region: Region, m: usize, num_prototypes: usize) -> u8 {
    let base = if region == Region::Fg { 0 } else { num_prototypes };
    (base + m) as u8
}

/// Warm shades for foreground prototypes, cool shades for background ones.
pub fn palette(num_prototypes: usize) -> Vec<[u8; 3]> {
    let shade = |m: usize| {
        if num_prototypes <= 1 {
            1.0
        } else {
            1.0 - 0.6 * m as f64 / (num_prototypes - 1) as f64
        }
    };
    let scale = |c: [f64; 3], k: f64| c.map(|v| (v * k).round() as u8);
    let fg = (0..num_prototypes).map(|m| scale([255.0, 140.0 * shade(m), 40.0], shade(m)));
    let bg = (0..num_prototypes).map(|m| scale([40.0, 120.0 * shade(m) + 60.0, 255.0], shade(m)));
    fg.chain(bg).collect()
}

/// Per-pixel palette indices of `map`, nearest-upsampled by `scale`.
pub fn winner_indices(map: &PredictionMap, num_prototypes: usize, scale: usize) -> (usize, usize, Vec<u8>) {
    let (h, w) = (map.height(), map.width());
    let (oh, ow) = (h * scale, w * scale);
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        for x in 0..ow {
            let p = (y / scale) * w + x / scale;
            out.push(palette_index(map.winner_region(p), map.winner_index[p], num_prototypes));
        }
    }
    (oh, ow, out)
}

/// Writes the winner map as an indexed-colour PNG.
pub fn write_winner_png(path: &Path, map: &PredictionMap, num_prototypes: usize, scale: usize) -> Result<()> {
    let (h, w, indices) = winner_indices(map, num_prototypes, scale);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_palette(palette(num_prototypes).concat());
    let png_err = |e: png::EncodingError| Error::Image {
        path: path.to_path_buf(),
        detail: e.to_string(),
    };
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&indices).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

/// Writes a `[1,H,W]` map with values in `[0,1]` as 8-bit grayscale.
pub fn write_gray_png(path: &Path, values: &Tensor) -> Result<()> {
    let s = values.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let d = values.data();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([(d[y as usize * w + x as usize].clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Writes a `[3,H,W]` image with values in `[0,1]` as 8-bit RGB.
pub fn write_rgb_png(path: &Path, image: &Tensor) -> Result<()> {
    let s = image.shape();
    let (h, w) = (s[1], s[2]);
    let plane = h * w;
    let d = image.data();
    let px = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let img = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Rgb([px(d[i]), px(d[plane + i]), px(d[2 * plane + i])])
    });
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}
