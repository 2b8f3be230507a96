//! PSNR / SSIM evaluation with flow-aligned ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{warp_planar, FlowField};
use crate::image::{gaussian_kernel, Planar};

/// Reported PSNR when the images are identical.
pub const PSNR_IDENTICAL: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn check_dims(a: &Planar, b: &Planar, what: &str) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::dim(format!("{what}: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// `10 log10(1 / MSE)` for signals in `[0, 1]`, capped at [`PSNR_IDENTICAL`].
pub fn psnr(a: &Planar, b: &Planar) -> Result<f64> {
    check_dims(a, b, "psnr")?;
    if a.data().is_empty() {
        return Err(Error::dim("psnr of an empty image"));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_IDENTICAL);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_IDENTICAL))
}

fn gray(p: &Planar) -> Vec<f64> {
    let (c, h, w) = p.dims();
    (0..h * w)
        .map(|i| (0..c).map(|ch| p.plane(ch)[i] as f64).sum::<f64>() / c as f64)
        .collect()
}

/// Valid-mode separable filtering of an `h x w` field.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for xo in 0..ow {
            tmp[y * ow + xo] = (0..n).map(|t| k[t] * x[y * w + xo + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for yo in 0..oh {
        for xo in 0..ow {
            out[yo * ow + xo] = (0..n).map(|t| k[t] * tmp[(yo + t) * ow + xo]).sum();
        }
    }
    out
}

/// Mean SSIM of the channel-mean grayscale images over all valid 11x11
/// Gaussian windows.
pub fn ssim(a: &Planar, b: &Planar) -> Result<f64> {
    check_dims(a, b, "ssim")?;
    let (_, h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::dim(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)?;
    let (ga, gb) = (gray(a), gray(b));
    let prod = |f: &dyn Fn(usize) -> f64| (0..h * w).map(f).collect::<Vec<f64>>();
    let mu_a = filter_valid(&ga, h, w, &k);
    let mu_b = filter_valid(&gb, h, w, &k);
    let aa = filter_valid(&prod(&|i| ga[i] * ga[i]), h, w, &k);
    let bb = filter_valid(&prod(&|i| gb[i] * gb[i]), h, w, &k);
    let ab = filter_valid(&prod(&|i| ga[i] * gb[i]), h, w, &k);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-image and mean scores.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: Vec<ImageScore>,
    pub count: usize,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl EvalReport {
    pub fn push(&mut self, score: ImageScore) {
        self.images.push(score);
        let n = self.images.len();
        self.count = n;
        self.mean_psnr = self.images.iter().map(|s| s.psnr).sum::<f64>() / n as f64;
        self.mean_ssim = self.images.iter().map(|s| s.ssim).sum::<f64>() / n as f64;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Pixels dropped from every side before scoring.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct EvalOptions {
    pub border: usize,
}

fn crop_border(p: &Planar, border: usize) -> Result<Planar> {
    if border == 0 {
        return Ok(p.clone());
    }
    let (_, h, w) = p.dims();
    if 2 * border >= h || 2 * border >= w {
        return Err(Error::dim(format!("border {border} leaves nothing of {h}x{w}")));
    }
    p.crop(border, border, h - 2 * border, w - 2 * border)
}

/// Score a prediction against ground truth already in its frame.
pub fn eval_pre_aligned(name: &str, pred: &Planar, gt: &Planar, opts: EvalOptions) -> Result<ImageScore> {
    check_dims(pred, gt, "eval")?;
    let (p, g) = (crop_border(pred, opts.border)?, crop_border(gt, opts.border)?);
    Ok(ImageScore {
        name: name.to_string(),
        psnr: psnr(&p, &g)?,
        ssim: ssim(&p, &g)?,
    })
}

/// Warp `gt` into the prediction's frame (`flow` maps prediction pixels to
/// ground-truth positions), then score. A missing flow is an error.
pub fn eval_aligned(
    name: &str,
    pred: &Planar,
    gt: &Planar,
    flow: Option<&FlowField>,
    opts: EvalOptions,
) -> Result<ImageScore> {
    let flow = flow.ok_or_else(|| {
        Error::Contract(format!("{name}: ground truth needs an alignment flow for evaluation"))
    })?;
    check_dims(pred, gt, "eval")?;
    let aligned = warp_planar(gt, flow)?;
    eval_pre_aligned(name, pred, &aligned, opts)
}
