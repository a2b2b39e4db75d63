//! Boundary maps, exact Euclidean distance transform and the boundary weight map.

use pemp_tensor::Tensor;

/// Distance assigned everywhere when the feature set is empty.
pub const EMPTY_DISTANCE: f64 = 1e6;

/// Row-major binary image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl BinaryMap {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), height * width, "binary map size");
        Self { height, width, data }
    }

    /// Pixels of a `[1,H,W]` tensor equal to 1.
    pub fn from_mask(mask: &Tensor) -> Self {
        let s = mask.shape();
        Self::new(
            s[s.len() - 2],
            s[s.len() - 1],
            mask.data().iter().map(|&v| v == 1.0).collect(),
        )
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }
}

/// Foreground pixels with a background 4-neighbour; outside the image counts as background.
pub fn boundary_map(label: &Tensor) -> BinaryMap {
    let m = BinaryMap::from_mask(label);
    let (h, w) = (m.height, m.width);
    let fg =
        |r: isize, c: isize| r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && m.get(r as usize, c as usize);
    let data = (0..h * w)
        .map(|i| {
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            fg(r, c) && !(fg(r - 1, c) && fg(r + 1, c) && fg(r, c - 1) && fg(r, c + 1))
        })
        .collect();
    BinaryMap::new(h, w, data)
}

/// Lower envelope of parabolas rooted at the finite entries of `f`.
fn squared_distance_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let mut roots = (0..f.len()).filter(|&q| f[q].is_finite());
    let Some(first) = roots.next() else {
        out.fill(f64::INFINITY);
        return;
    };
    let mut k = 0;
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in roots {
        let fq = f[q] + (q * q) as f64;
        let mut s;
        loop {
            let p = v[k];
            s = (fq - (f[p] + (p * p) as f64)) / (2 * (q - p)) as f64;
            if s > z[k] {
                break;
            }
            k -= 1;
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Euclidean distance from every pixel to the nearest pixel of `features`.
///
/// Column pass then row pass of the separable squared transform, then a
/// square root. An empty feature set yields [`EMPTY_DISTANCE`] everywhere.
pub fn edt(features: &BinaryMap) -> Tensor {
    let (h, w) = (features.height, features.width);
    if features.count() == 0 {
        return Tensor::full(&[1, h, w], EMPTY_DISTANCE);
    }
    let n = h.max(w);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
    let mut grid: Vec<f64> = features
        .data
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();
    let (mut col, mut out) = (vec![0.0; h], vec![0.0; h]);
    for c in 0..w {
        for r in 0..h {
            col[r] = grid[r * w + c];
        }
        squared_distance_1d(&col, &mut out, &mut v, &mut z);
        for r in 0..h {
            grid[r * w + c] = out[r];
        }
    }
    let mut row_out = vec![0.0; w];
    for r in 0..h {
        let row = &mut grid[r * w..(r + 1) * w];
        squared_distance_1d(row, &mut row_out, &mut v, &mut z);
        row.copy_from_slice(&row_out);
    }
    Tensor::new(&[1, h, w], grid.into_iter().map(f64::sqrt).collect()).expect("edt shape")
}

/// `w = exp(-dist/σ²) + 1` with `dist` the distance to the nearest boundary pixel;
/// `squared` uses `dist²` instead.
pub fn weight_map(boundary: &BinaryMap, sigma: f64, squared: bool) -> Tensor {
    let s2 = sigma * sigma;
    edt(boundary).map(|d| {
        let d = if squared { d * d } else { d };
        (-d / s2).exp() + 1.0
    })
}
