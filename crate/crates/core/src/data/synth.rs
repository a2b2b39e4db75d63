//! Procedural shapes dataset.
//!
//! Class `c` is the pair (family `c mod 12`, texture `c`). Each image has a
//! two-tone noisy background, one or two distractor shapes drawn with other
//! families and other classes' textures, and the class object on top. The
//! mask is the object's analytic rasterization at pixel centres.

use std::f64::consts::{PI, TAU};

use pemp_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Dataset, LabeledImage};
use crate::error::{Error, Result};

pub const GENERATOR_VERSION: u32 = 1;

const MIN_FRACTION: f64 = 0.05;
const MAX_FRACTION: f64 = 0.6;
const MIN_SIDE: usize = 32;
const MIN_RADIUS: f64 = 0.18;
const MAX_RADIUS: f64 = 0.34;
const NOISE: f64 = 0.04;
const MAX_ATTEMPTS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeFamily {
    Disk,
    Square,
    Triangle,
    Ring,
    Cross,
    Ellipse,
    Bar,
    Star,
    LShape,
    Diamond,
    Crescent,
    CheckerDisk,
}

pub const FAMILIES: [ShapeFamily; 12] = [
    ShapeFamily::Disk,
    ShapeFamily::Square,
    ShapeFamily::Triangle,
    ShapeFamily::Ring,
    ShapeFamily::Cross,
    ShapeFamily::Ellipse,
    ShapeFamily::Bar,
    ShapeFamily::Star,
    ShapeFamily::LShape,
    ShapeFamily::Diamond,
    ShapeFamily::Crescent,
    ShapeFamily::CheckerDisk,
];

impl ShapeFamily {
    pub fn name(self) -> &'static str {
        match self {
            ShapeFamily::Disk => "disk",
            ShapeFamily::Square => "square",
            ShapeFamily::Triangle => "triangle",
            ShapeFamily::Ring => "ring",
            ShapeFamily::Cross => "cross",
            ShapeFamily::Ellipse => "ellipse",
            ShapeFamily::Bar => "bar",
            ShapeFamily::Star => "star",
            ShapeFamily::LShape => "l-shape",
            ShapeFamily::Diamond => "diamond",
            ShapeFamily::Crescent => "crescent",
            ShapeFamily::CheckerDisk => "checker-disk",
        }
    }

    pub fn of_class(class_id: usize) -> Self {
        FAMILIES[class_id % FAMILIES.len()]
    }

    /// Membership test in the unit frame; every shape lies inside `[-1, 1]²`.
    pub fn contains(self, u: f64, v: f64) -> bool {
        let rho2 = u * u + v * v;
        match self {
            ShapeFamily::Disk => rho2 <= 1.0,
            ShapeFamily::Square => u.abs().max(v.abs()) <= 0.8,
            ShapeFamily::Triangle => v >= -0.5 && 3f64.sqrt() * u.abs() + v <= 1.0,
            ShapeFamily::Ring => (0.3025..=1.0).contains(&rho2),
            ShapeFamily::Cross => (u.abs() <= 0.3 && v.abs() <= 1.0) || (v.abs() <= 0.3 && u.abs() <= 1.0),
            ShapeFamily::Ellipse => u * u + (v / 0.55).powi(2) <= 1.0,
            ShapeFamily::Bar => u.abs() <= 1.0 && v.abs() <= 0.32,
            ShapeFamily::Star => in_star(u, v),
            ShapeFamily::LShape => {
                let arm = |a: f64, b: f64| (-1.0..=-0.3).contains(&a) && (-1.0..=1.0).contains(&b);
                arm(u, v) || arm(v, u)
            }
            ShapeFamily::Diamond => u.abs() / 0.75 + v.abs() <= 1.0,
            ShapeFamily::Crescent => rho2 <= 1.0 && (u - 0.45).powi(2) + v * v > 0.64,
            ShapeFamily::CheckerDisk => {
                let cell = |a: f64| ((a + 2.0) / 0.5).floor() as i64;
                rho2 <= 1.0 && (cell(u) + cell(v)).rem_euclid(2) == 0
            }
        }
    }
}

fn in_star(u: f64, v: f64) -> bool {
    let verts: Vec<(f64, f64)> = (0..10)
        .map(|k| {
            let r = if k % 2 == 0 { 1.0 } else { 0.45 };
            let a = PI / 2.0 + k as f64 * PI / 5.0;
            (r * a.cos(), r * a.sin())
        })
        .collect();
    let mut inside = false;
    let mut j = verts.len() - 1;
    for i in 0..verts.len() {
        let (xi, yi) = verts[i];
        let (xj, yj) = verts[j];
        if (yi > v) != (yj > v) && u < (xj - xi) * (v - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor() as usize % 6;
    let f = h - h.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

#[derive(Clone, Copy, Debug)]
enum Pattern {
    Stripes,
    Checker,
    Dots,
    Radial,
}

/// Two-colour pattern owned by one class.
#[derive(Clone, Copy, Debug)]
struct Texture {
    primary: [f64; 3],
    secondary: [f64; 3],
    pattern: Pattern,
    period: f64,
}

impl Texture {
    fn of_class(class_id: usize) -> Self {
        let hue = (class_id as f64 * 0.618_033_988_75).fract();
        let pattern = match class_id % 4 {
            0 => Pattern::Stripes,
            1 => Pattern::Checker,
            2 => Pattern::Dots,
            _ => Pattern::Radial,
        };
        Self {
            primary: hsv(hue, 0.8, 0.95),
            secondary: hsv(hue + 0.1, 0.65, 0.5),
            pattern,
            period: 6.0 + (class_id % 3) as f64 * 2.0,
        }
    }

    /// Pattern instance with a random phase and orientation for one drawing.
    fn instance(self, rng: &mut impl Rng) -> TextureInstance {
        let jitter = rng.random_range(-0.04..0.04);
        TextureInstance {
            texture: Texture {
                primary: self.primary.map(|c| (c + jitter).clamp(0.0, 1.0)),
                secondary: self.secondary.map(|c| (c + jitter).clamp(0.0, 1.0)),
                ..self
            },
            angle: rng.random_range(0.0..PI),
            phase: rng.random_range(0.0..1.0),
        }
    }
}

struct TextureInstance {
    texture: Texture,
    angle: f64,
    phase: f64,
}

impl TextureInstance {
    /// Colour at image point `(x, y)` for an object centred at `centre`.
    fn colour(&self, x: f64, y: f64, centre: (f64, f64)) -> [f64; 3] {
        let t = &self.texture;
        let (s, c) = self.angle.sin_cos();
        let (a, b) = (c * x + s * y, -s * x + c * y);
        let p = t.period;
        let mix = match t.pattern {
            Pattern::Stripes => ((TAU * (a / p + self.phase)).sin() + 1.0) / 2.0,
            Pattern::Checker => {
                let k = (a / p + self.phase).floor() as i64 + (b / p).floor() as i64;
                if k.rem_euclid(2) == 0 {
                    1.0
                } else {
                    0.0
                }
            }
            Pattern::Dots => {
                let fa = (a / p + self.phase).fract() - 0.5;
                let fb = (b / p).fract() - 0.5;
                if fa * fa + fb * fb < 0.09 {
                    0.0
                } else {
                    1.0
                }
            }
            Pattern::Radial => {
                let r = ((x - centre.0).powi(2) + (y - centre.1).powi(2)).sqrt();
                ((TAU * (r / p + self.phase)).cos() + 1.0) / 2.0
            }
        };
        std::array::from_fn(|ch| mix * t.primary[ch] + (1.0 - mix) * t.secondary[ch])
    }
}

/// A placed, rotated, scaled shape.
struct Placement {
    family: ShapeFamily,
    cx: f64,
    cy: f64,
    radius: f64,
    angle: f64,
}

impl Placement {
    fn random(family: ShapeFamily, side: f64, radius: (f64, f64), rng: &mut impl Rng) -> Self {
        let radius = rng.random_range(radius.0..radius.1);
        Self {
            family,
            cx: rng.random_range(0.25 * side..0.75 * side),
            cy: rng.random_range(0.25 * side..0.75 * side),
            radius,
            angle: rng.random_range(0.0..TAU),
        }
    }

    fn covers(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (c * dx + s * dy) / self.radius;
        let v = (-s * dx + c * dy) / self.radius;
        self.family.contains(u, v)
    }

    fn mask(&self, side: usize) -> Vec<bool> {
        (0..side * side)
            .map(|i| self.covers((i % side) as f64 + 0.5, (i / side) as f64 + 0.5))
            .collect()
    }
}

fn paint(rgb: &mut [f64], side: usize, mask: &[bool], tex: &TextureInstance, centre: (f64, f64)) {
    let plane = side * side;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let col = tex.colour((i % side) as f64 + 0.5, (i / side) as f64 + 0.5, centre);
        for ch in 0..3 {
            rgb[ch * plane + i] = col[ch];
        }
    }
}

fn background(side: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let plane = side * side;
    let tone = |rng: &mut ChaCha8Rng| {
        hsv(
            rng.random_range(0.0..1.0),
            rng.random_range(0.05..0.3),
            rng.random_range(0.25..0.85),
        )
    };
    let (a, b) = (tone(rng), tone(rng));
    // Two tones split by a random line through the image.
    let theta = rng.random_range(0.0..TAU);
    let offset = rng.random_range(-0.3..0.3) * side as f64;
    let (s, c) = theta.sin_cos();
    let half = side as f64 / 2.0;
    let mut rgb = vec![0.0; 3 * plane];
    for i in 0..plane {
        let (x, y) = ((i % side) as f64 + 0.5 - half, (i / side) as f64 + 0.5 - half);
        let t = if c * x + s * y > offset { a } else { b };
        let shade = 1.0 + 0.1 * (y / side as f64);
        for ch in 0..3 {
            rgb[ch * plane + i] = t[ch] * shade;
        }
    }
    rgb
}

fn render(class_id: usize, num_classes: usize, side: usize, rng: &mut ChaCha8Rng) -> Result<LabeledImage> {
    let family = ShapeFamily::of_class(class_id);
    let fside = side as f64;
    let plane = side * side;

    let (object, object_mask) = (0..MAX_ATTEMPTS)
        .map(|_| {
            let p = Placement::random(family, fside, (MIN_RADIUS * fside, MAX_RADIUS * fside), rng);
            let m = p.mask(side);
            (p, m)
        })
        .find(|(_, m)| {
            let frac = m.iter().filter(|&&b| b).count() as f64 / plane as f64;
            (MIN_FRACTION..=MAX_FRACTION).contains(&frac)
        })
        .ok_or_else(|| Error::Data(format!("could not place a {} object", family.name())))?;

    let mut rgb = background(side, rng);
    let distractors = rng.random_range(1..=2);
    for _ in 0..distractors {
        let other_family = loop {
            let f = FAMILIES[rng.random_range(0..FAMILIES.len())];
            if f != family {
                break f;
            }
        };
        let other_class = loop {
            let c = rng.random_range(0..num_classes.max(2));
            if c != class_id {
                break c;
            }
        };
        let p = Placement::random(other_family, fside, (0.1 * fside, 0.2 * fside), rng);
        let tex = Texture::of_class(other_class).instance(rng);
        paint(&mut rgb, side, &p.mask(side), &tex, (p.cx, p.cy));
    }
    let tex = Texture::of_class(class_id).instance(rng);
    paint(&mut rgb, side, &object_mask, &tex, (object.cx, object.cy));

    for v in rgb.iter_mut() {
        *v = (*v + rng.random_range(-NOISE..NOISE)).clamp(0.0, 1.0);
    }
    let mask = object_mask.iter().map(|&b| f64::from(u8::from(b))).collect();
    LabeledImage::new(
        Tensor::new(&[3, side, side], rgb)?,
        Tensor::new(&[1, side, side], mask)?,
        class_id,
    )
}

fn class_seed(seed: u64, class_id: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (class_id as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Deterministic synthetic dataset; classes are generated in parallel.
pub fn generate_synthetic_dataset(num_classes: usize, per_class: usize, side: usize, seed: u64) -> Result<Dataset> {
    if num_classes == 0 || !num_classes.is_multiple_of(4) {
        return Err(Error::Data(format!(
            "num_classes {num_classes} is not a positive multiple of 4"
        )));
    }
    if per_class < 8 {
        return Err(Error::Data(format!("per_class {per_class} is below 8")));
    }
    if side < MIN_SIDE || MIN_RADIUS * (side as f64) < 4.0 {
        return Err(Error::Data(format!(
            "side {side} too small: objects need a radius of at least 4 pixels"
        )));
    }
    let per_class_items: Vec<Result<Vec<LabeledImage>>> = (0..num_classes)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(class_seed(seed, c));
            (0..per_class).map(|_| render(c, num_classes, side, &mut rng)).collect()
        })
        .collect();
    let mut items = Vec::with_capacity(num_classes * per_class);
    for class_items in per_class_items {
        items.extend(class_items?);
    }
    let class_names = (0..num_classes)
        .map(|c| format!("{c:02}-{}", ShapeFamily::of_class(c).name()))
        .collect();
    Ok(Dataset { class_names, items })
}
