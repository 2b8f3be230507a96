use rayon::prelude::*;

use crate::datapipe::Sample;
use crate::error::{Error, Result};
use crate::flow::warp;
use crate::image::{downsample_bilinear_2x, RgbImage};
use crate::metrics::{eval_pre_aligned, EvalOptions, EvalReport};
use crate::pipeline::{run_pipeline, ColorModel, ColorSource, Intermediates, IspModel};

/// Where the color conditioning comes from at evaluation time.
#[derive(Copy, Clone, Debug)]
pub enum EvalColor<'a> {
    /// The ground truth downsampled to RAW resolution.
    Oracle,
    Predictor(&'a ColorModel),
}

/// Ground truth in the RAW frame: the stored aligned image, else the target
/// warped by the forward flow.
pub fn ground_truth(s: &Sample) -> Result<RgbImage> {
    match (&s.aligned, &s.flow_fwd) {
        (Some(a), _) => Ok(a.clone()),
        (None, Some(f)) => warp(&s.target, f),
        (None, None) => Err(Error::Contract(format!("{}: no aligned ground truth or flow", s.id))),
    }
}

pub fn infer_sample(s: &Sample, model: &IspModel, color: EvalColor<'_>) -> Result<Intermediates> {
    match color {
        EvalColor::Oracle => {
            let c = downsample_bilinear_2x(&ground_truth(s)?)?;
            run_pipeline(&s.raw, model, ColorSource::Given(&c))
        }
        EvalColor::Predictor(g) => run_pipeline(&s.raw, model, ColorSource::Predictor(g)),
    }
}

/// PSNR/SSIM of the full pipeline on each sample, in sample order.
pub fn evaluate(samples: &[Sample], model: &IspModel, color: EvalColor<'_>, opts: EvalOptions) -> Result<EvalReport> {
    let scores: Vec<_> = samples
        .par_iter()
        .map(|s| {
            let out = infer_sample(s, model, color)?;
            let gt = ground_truth(s)?;
            eval_pre_aligned(&s.id, &out.yhat, &gt, opts)
        })
        .collect::<Result<_>>()?;
    let mut report = EvalReport::default();
    scores.into_iter().for_each(|s| report.push(s));
    Ok(report)
}
