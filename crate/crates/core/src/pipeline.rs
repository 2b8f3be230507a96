//! Inference: `x -> x' -> x~ -> c -> c^ -> y^`.

use std::path::Path;

use crate::colormap::{apply, fit, ColorMapConfig};
use crate::error::Result;
use crate::grad::ParamSet;
use crate::image::{write_ppm, CoordMap, RawImage, RgbImage};
use crate::models::{ColorPredictor, IspNet};
use crate::rawproc::{gamma_process, PreprocessNet};

/// `P` and `F` with their weights.
#[derive(Clone, Debug)]
pub struct IspModel {
    pub pre: PreprocessNet,
    pub pre_params: ParamSet<f32>,
    pub isp: IspNet,
    pub isp_params: ParamSet<f32>,
    pub colormap: ColorMapConfig,
    /// When false `F` receives an all-zero color hint.
    pub color_hint: bool,
}

#[derive(Clone, Debug)]
pub struct ColorModel {
    pub net: ColorPredictor,
    pub params: ParamSet<f32>,
}

/// Source of the low-resolution color `c` the map is fitted to.
#[derive(Copy, Clone, Debug)]
pub enum ColorSource<'a> {
    Predictor(&'a ColorModel),
    /// A known color image at RAW resolution.
    Given(&'a RgbImage),
}

#[derive(Clone, Debug)]
pub struct Intermediates {
    pub xprime: RgbImage,
    pub xtilde: RgbImage,
    pub c: RgbImage,
    pub chat: RgbImage,
    pub yhat: RgbImage,
}

impl Intermediates {
    /// Write `xprime.ppm`, `xtilde.ppm`, `c.ppm`, `chat.ppm`, `yhat.ppm`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
        for (name, img) in [
            ("xprime", &self.xprime),
            ("xtilde", &self.xtilde),
            ("c", &self.c),
            ("chat", &self.chat),
            ("yhat", &self.yhat),
        ] {
            write_ppm(dir.join(format!("{name}.ppm")), img)?;
        }
        Ok(())
    }
}

pub fn run_pipeline(raw: &RawImage, model: &IspModel, color: ColorSource<'_>) -> Result<Intermediates> {
    let xprime = gamma_process(raw)?.into_rgb();
    let coords = CoordMap::new(raw.height(), raw.width());
    let xtilde = model.pre.apply_with(&xprime, &coords, &model.pre_params)?;
    let c = match color {
        ColorSource::Predictor(g) => g.net.apply(&g.params, raw)?.0,
        ColorSource::Given(c) => c.clone(),
    };
    let chat = apply(&xtilde, &fit(&xtilde, &c, &model.colormap)?)?;
    let hint = if model.color_hint {
        chat.clone()
    } else {
        RgbImage::zeros(raw.height(), raw.width())
    };
    let yhat = model.isp.apply(&model.isp_params, raw, &hint)?.clamp01();
    Ok(Intermediates {
        xprime,
        xtilde,
        c,
        chat,
        yhat,
    })
}
