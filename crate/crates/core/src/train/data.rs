use rand::Rng;

use super::{AlignMode, Jitter};
use crate::datapipe::Sample;
use crate::error::{Error, Result};
use crate::flow::{fb_mask, warp, FbConfig};
use crate::image::{downsample_bilinear_2x, upsample_nearest_2x, CoordMap, ImageKind, MaskImage, RawImage, RgbImage};
use crate::rawproc::gamma_process;
use crate::rng;

/// A sample with its alignment resolved for one [`AlignMode`].
#[derive(Clone, Debug)]
pub struct Prepared {
    pub raw: RawImage,
    pub xprime: RgbImage,
    /// Target in the RAW frame (or as captured for `NoAlign`), `2H x 2W`.
    pub target: RgbImage,
    /// Loss mask at RAW resolution.
    pub mask: MaskImage,
}

/// RAW-resolution mask: a pixel survives only if its whole 2x2 block does.
pub fn downsample_mask(m: &MaskImage) -> Result<MaskImage> {
    let (h, w) = (m.height(), m.width());
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Dimension(format!("mask {h}x{w} is not even")));
    }
    Ok(MaskImage::from_fn(h / 2, w / 2, |y, x| {
        m.get(2 * y, 2 * x) && m.get(2 * y, 2 * x + 1) && m.get(2 * y + 1, 2 * x) && m.get(2 * y + 1, 2 * x + 1)
    }))
}

pub fn prepare(s: &Sample, mode: AlignMode, fb: &FbConfig) -> Result<Prepared> {
    let (_, h, w) = s.raw.dims();
    if s.target.height() != 2 * h || s.target.width() != 2 * w {
        return Err(Error::Dimension(format!(
            "{}: target {:?} is not twice RAW {h}x{w}",
            s.id,
            s.target.dims()
        )));
    }
    let need = |what: &str| Error::Contract(format!("{}: {what} flow required for {mode:?}", s.id));
    let (target, mask) = match mode {
        AlignMode::NoAlign => (s.target.clone(), MaskImage::ones(h, w)),
        AlignMode::AlignedLoss => {
            let f = s.flow_fwd.as_ref().ok_or_else(|| need("forward"))?;
            (warp(&s.target, f)?, MaskImage::ones(h, w))
        }
        AlignMode::Mask => {
            let f = s.flow_fwd.as_ref().ok_or_else(|| need("forward"))?;
            let b = s.flow_bwd.as_ref().ok_or_else(|| need("backward"))?;
            (warp(&s.target, f)?, downsample_mask(&fb_mask(f, b, fb)?)?)
        }
    };
    Ok(Prepared {
        xprime: gamma_process(&s.raw)?.into_rgb(),
        raw: s.raw.clone(),
        target,
        mask,
    })
}

/// Where and how one batch element is cut.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct CropPlan {
    pub sample: usize,
    pub y0: usize,
    pub x0: usize,
    pub dihedral: u8,
    pub jitter: Option<Jitter>,
}

/// Batch layout for `step`, drawn from a stream keyed by `(seed, step)`.
pub fn plan_batch(
    dims: &[(usize, usize)],
    crop: usize,
    batch: usize,
    seed: u64,
    step: usize,
    augment: bool,
    jitter: Option<f64>,
) -> Result<Vec<CropPlan>> {
    if dims.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    let mut r = rng::stream(seed, "batch", step as u64);
    (0..batch)
        .map(|_| {
            let sample = r.gen_range(0..dims.len());
            let (h, w) = dims[sample];
            if crop > h || crop > w {
                return Err(Error::Dimension(format!("crop {crop} exceeds sample {sample} of {h}x{w}")));
            }
            Ok(CropPlan {
                sample,
                y0: r.gen_range(0..=h - crop),
                x0: r.gen_range(0..=w - crop),
                dihedral: if augment { r.gen_range(0..8) } else { 0 },
                jitter: jitter.map(|range| Jitter::sample(&mut r, range)),
            })
        })
        .collect()
}

/// One realized batch element, all at the crop's RAW size `n` (targets `2n`).
#[derive(Clone, Debug)]
pub struct Crop {
    pub raw: RawImage,
    pub xprime: RgbImage,
    pub coords: CoordMap,
    pub target: RgbImage,
    /// Target downsampled to RAW resolution.
    pub color: RgbImage,
    pub mask: MaskImage,
    pub mask_up: MaskImage,
}

fn cut<I: ImageKind>(img: &I, y0: usize, x0: usize, n: usize, code: u8) -> Result<I> {
    I::from_planar(img.crop(y0, x0, n, n)?.dihedral(code))
}

pub fn realize(p: &Prepared, plan: &CropPlan, n: usize) -> Result<Crop> {
    let (y0, x0, d) = (plan.y0, plan.x0, plan.dihedral);
    let coords = CoordMap::new(p.raw.height(), p.raw.width());
    let mut target: RgbImage = cut(&p.target, 2 * y0, 2 * x0, 2 * n, d)?;
    if let Some(j) = &plan.jitter {
        target = super::apply_jitter(&target, j);
    }
    let mask: MaskImage = cut(&p.mask, y0, x0, n, d)?;
    Ok(Crop {
        raw: cut(&p.raw, y0, x0, n, d)?,
        xprime: cut(&p.xprime, y0, x0, n, d)?,
        coords: cut(&coords, y0, x0, n, d)?,
        color: downsample_bilinear_2x(&target)?,
        mask_up: upsample_nearest_2x(&mask),
        target,
        mask,
    })
}
