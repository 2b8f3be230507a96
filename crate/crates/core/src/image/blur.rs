use super::{ImageKind, Planar};
use crate::error::{Error, Result};

/// Normalized 1-D Gaussian taps of odd length `size`.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Vec<f64>> {
    if size == 0 || size % 2 == 0 {
        return Err(Error::param(format!("blur size must be odd, got {size}")));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::param(format!("blur sigma must be positive, got {sigma}")));
    }
    let r = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    Ok(taps.into_iter().map(|t| t / sum).collect())
}

/// Separable Gaussian blur with replicate borders, any plane count.
pub fn blur_planar(p: &Planar, size: usize, sigma: f64) -> Result<Planar> {
    let k = gaussian_kernel(size, sigma)?;
    Ok(separable(p, &k))
}

/// Gaussian blur of a typed image; dimensions are unchanged.
pub fn gaussian_blur<I: ImageKind>(img: &I, size: usize, sigma: f64) -> Result<I> {
    let out = blur_planar(img.planar(), size, sigma)?;
    I::from_planar(out)
}

pub(crate) fn separable(p: &Planar, k: &[f64]) -> Planar {
    let (c, h, w) = p.dims();
    let r = (k.len() / 2) as isize;
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0f64; c * h * w];
    for ch in 0..c {
        let plane = p.plane(ch);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (t, &kv) in k.iter().enumerate() {
                    let sx = clampi(x as isize + t as isize - r, w);
                    acc += kv * plane[y * w + sx] as f64;
                }
                tmp[(ch * h + y) * w + x] = acc;
            }
        }
    }
    let mut out = Planar::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (t, &kv) in k.iter().enumerate() {
                    let sy = clampi(y as isize + t as isize - r, h);
                    acc += kv * tmp[(ch * h + sy) * w + x];
                }
                out.set(ch, y, x, acc as f32);
            }
        }
    }
    out
}
