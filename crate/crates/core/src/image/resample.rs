use super::{rewrap, ImageKind, Planar};
use crate::error::{Error, Result};

/// Halve both dimensions. With half-pixel aligned centers a factor-2
/// bilinear resize reduces to the mean of each 2x2 block.
pub fn downsample_bilinear_2x<I: ImageKind>(img: &I) -> Result<I> {
    let p = img.planar();
    let (c, h, w) = p.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(format!("2x downsample of odd size {h}x{w}")));
    }
    let out = Planar::from_fn(c, h / 2, w / 2, |ch, y, x| {
        let (sy, sx) = (2 * y, 2 * x);
        0.25 * (p.at(ch, sy, sx) + p.at(ch, sy, sx + 1) + p.at(ch, sy + 1, sx) + p.at(ch, sy + 1, sx + 1))
    });
    I::from_planar(out)
}

/// Double both dimensions by pixel replication.
pub fn upsample_nearest_2x<I: ImageKind>(img: &I) -> I {
    let p = img.planar();
    let (c, h, w) = p.dims();
    rewrap(Planar::from_fn(c, 2 * h, 2 * w, |ch, y, x| {
        p.at(ch, y / 2, x / 2)
    }))
}

/// Bilinear sample of plane `c` at fractional `(x, y)`, clamping the
/// coordinates to the image (replicate border).
#[inline]
pub fn bilinear_sample(p: &Planar, c: usize, x: f32, y: f32) -> f32 {
    let (h, w) = (p.height(), p.width());
    let x = x.clamp(0.0, (w - 1) as f32);
    let y = y.clamp(0.0, (h - 1) as f32);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f32;
    let fy = y - y0 as f32;
    let top = p.at(c, y0, x0) * (1.0 - fx) + p.at(c, y0, x1) * fx;
    let bottom = p.at(c, y1, x0) * (1.0 - fx) + p.at(c, y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}
