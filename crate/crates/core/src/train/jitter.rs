use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::image::{ImageKind, Planar, RgbImage};

/// Luma row of the opponent transform.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// RGB to the YIQ opponent space. Hue jitter rotates the `(I, Q)` plane and
/// leaves `Y` unchanged; gray pixels have `I = Q = 0`.
pub const RGB_TO_YIQ: [[f64; 3]; 3] = [
    [0.299, 0.587, 0.114],
    [0.596, -0.274, -0.322],
    [0.211, -0.523, 0.312],
];

/// Jitter offsets, each nominally in `[-0.2, 0.2]`.
#[derive(Copy, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Hue rotation in units of pi radians.
    pub hue: f64,
}

impl Jitter {
    pub fn sample(r: &mut impl Rng, range: f64) -> Jitter {
        let mut d = || if range > 0.0 { r.gen_range(-range..=range) } else { 0.0 };
        Jitter {
            brightness: d(),
            contrast: d(),
            saturation: d(),
            hue: d(),
        }
    }
}

fn inverse3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c = |r: usize, k: usize| {
        let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
        let (k1, k2) = ((k + 1) % 3, (k + 2) % 3);
        m[r1][k1] * m[r2][k2] - m[r1][k2] * m[r2][k1]
    };
    let det: f64 = (0..3).map(|k| m[0][k] * c(0, k)).sum();
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = c(k, i) / det;
        }
    }
    inv
}

/// Hue rotation by `theta` radians as an RGB matrix.
pub fn hue_matrix(theta: f64) -> [[f64; 3]; 3] {
    let (s, c) = theta.sin_cos();
    let rot = [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]];
    let inv = inverse3(&RGB_TO_YIQ);
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            out[i][k] = (0..3)
                .flat_map(|a| (0..3).map(move |b| (a, b)))
                .map(|(a, b)| inv[i][a] * rot[a][b] * RGB_TO_YIQ[b][k])
                .sum();
        }
    }
    out
}

/// Brightness, contrast, saturation, then hue; clamped to `[0, 1]` at the end.
pub fn apply_jitter(y: &RgbImage, j: &Jitter) -> RgbImage {
    let (_, h, w) = y.dims();
    let mut px: Vec<[f64; 3]> = (0..h * w)
        .map(|i| {
            let p = y.pixel(i / w, i % w);
            [p[0] as f64 + j.brightness, p[1] as f64 + j.brightness, p[2] as f64 + j.brightness]
        })
        .collect();
    let mean = px.iter().flatten().sum::<f64>() / (3 * h * w).max(1) as f64;
    let hue = hue_matrix(j.hue * std::f64::consts::PI);
    for p in &mut px {
        for v in p.iter_mut() {
            *v = (*v - mean) * (1.0 + j.contrast) + mean;
        }
        let luma: f64 = (0..3).map(|c| LUMA[c] * p[c]).sum();
        for v in p.iter_mut() {
            *v += j.saturation * (luma - *v);
        }
        let q = *p;
        for (c, v) in p.iter_mut().enumerate() {
            *v = (0..3).map(|k| hue[c][k] * q[k]).sum();
        }
    }
    let out = Planar::from_fn(3, h, w, |c, yy, xx| px[yy * w + xx][c].clamp(0.0, 1.0) as f32);
    RgbImage::from_planar(out).expect("three planes")
}

/// Jitter with offsets drawn uniformly from `[-range, range]` by a stream
/// seeded with `seed`.
pub fn color_jitter(y: &RgbImage, seed: u64, range: f64) -> RgbImage {
    let j = Jitter::sample(&mut crate::rng::stream(seed, "jitter", 0), range);
    apply_jitter(y, &j)
}
