//! Weakly paired dataset preparation: crop grids, pair scoring, local
//! homography alignment, manifests, and a synthetic capture generator with
//! known ground truth.

mod homography;
mod manifest;
mod synth;

pub use homography::{apply_homography, homography_dlt, invert_homography, read_point_pairs, warp_homography, Homography, PointPair};
pub use manifest::{filter_pairs, FilterStats, Manifest, Record, Sample, Split};
pub use synth::{render_scene, synth_dataset, synth_sample, SynthConfig, SynthSample};

use crate::error::{Error, Result};
use crate::image::{upsample_nearest_2x, ImageKind, Planar, RawImage, RgbImage};
use crate::rawproc::gamma_process;

/// Top-left origins of a sliding `crop` window moved by `stride` over a
/// `height x width` image, row-major. A crop larger than the image gives an
/// empty list.
pub fn sliding_crops(height: usize, width: usize, crop: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    if crop == 0 || stride == 0 {
        return Err(Error::param(format!("crop ({crop}) and stride ({stride}) must be positive")));
    }
    if crop > height || crop > width {
        log::warn!("crop {crop} exceeds image {height}x{width}; no crops");
        return Ok(Vec::new());
    }
    let axis = |dim: usize| (0..=(dim - crop) / stride).map(move |k| k * stride);
    Ok(axis(height).flat_map(|r| axis(width).map(move |c| (r, c))).collect())
}

/// Zero-mean normalized cross-correlation over all channels jointly.
/// Zero when either image is constant.
pub fn ncc(a: &Planar, b: &Planar) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::dim(format!("ncc: {:?} vs {:?}", a.dims(), b.dims())));
    }
    let n = a.data().len() as f64;
    let mean = |p: &Planar| p.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Ok(0.0);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// NCC between the processed RAW (upsampled to target size) and the target.
pub fn pair_ncc(raw: &RawImage, target: &RgbImage) -> Result<f64> {
    let vis = upsample_nearest_2x(&gamma_process(raw)?.into_rgb());
    ncc(&vis, target)
}

/// A RAW crop with its 2x target crop.
#[derive(Clone, Debug)]
pub struct CropPair {
    pub raw: RawImage,
    pub target: RgbImage,
    pub ncc: f64,
    /// Origin in RAW pixels.
    pub row: usize,
    pub col: usize,
}

/// Cut a capture into sliding RAW crops of `crop` pixels (target crops are
/// twice as large) and score each pair.
pub fn crop_capture(raw: &RawImage, target: &RgbImage, crop: usize, stride: usize) -> Result<Vec<CropPair>> {
    let (_, h, w) = raw.dims();
    if target.height() != 2 * h || target.width() != 2 * w {
        return Err(Error::dim(format!(
            "target {}x{} is not twice RAW {h}x{w}",
            target.height(),
            target.width()
        )));
    }
    sliding_crops(h, w, crop, stride)?
        .into_iter()
        .map(|(row, col)| {
            let r = RawImage::from_planar(raw.crop(row, col, crop, crop)?)?;
            let t = RgbImage::from_planar(target.crop(2 * row, 2 * col, 2 * crop, 2 * crop)?)?;
            Ok(CropPair {
                ncc: pair_ncc(&r, &t)?,
                raw: r,
                target: t,
                row,
                col,
            })
        })
        .collect()
}
