//! RAW visualization and the learned pre-processing network.

use std::ops::Deref;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{Bound, Graph, ParamSet, Scalar, Tensor, Var};
use crate::image::{CoordMap, ImageKind, RawImage, RgbImage};

/// Constants of the fixed scaling and gamma curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GammaConfig {
    pub gamma: f32,
    /// Lower bounds on the per-plane divisor for R, G and B.
    pub floors: [f32; 3],
}

impl Default for GammaConfig {
    fn default() -> Self {
        GammaConfig {
            gamma: 2.2,
            floors: [1.0 / 2.5, 1.0, 1.0 / 1.4],
        }
    }
}

/// `x'`: the gamma-processed RAW at RAW resolution, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessedRaw(RgbImage);

impl ProcessedRaw {
    pub fn into_rgb(self) -> RgbImage {
        self.0
    }

    /// Wrap an image that is already in processed-RAW space.
    pub fn from_rgb(img: RgbImage) -> Result<Self> {
        if img.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain("processed RAW values must lie in [0, 1]".into()));
        }
        Ok(ProcessedRaw(img))
    }
}

impl Deref for ProcessedRaw {
    type Target = RgbImage;

    fn deref(&self) -> &RgbImage {
        &self.0
    }
}

pub fn gamma_process(x: &RawImage) -> Result<ProcessedRaw> {
    gamma_process_with(x, &GammaConfig::default())
}

/// Drop the second green plane, normalize each remaining plane by
/// `max(plane max, floor)`, apply `1/gamma` and clamp to `[0, 1]`.
pub fn gamma_process_with(x: &RawImage, cfg: &GammaConfig) -> Result<ProcessedRaw> {
    if !(cfg.gamma > 0.0) || cfg.floors.iter().any(|f| !(*f > 0.0)) {
        return Err(Error::param("gamma and floors must be positive"));
    }
    if x.data().iter().any(|&v| v < 0.0) {
        return Err(Error::Domain("negative RAW value".into()));
    }
    let (_, h, w) = x.dims();
    let inv = 1.0 / cfg.gamma;
    let mut out = Vec::with_capacity(3 * h * w);
    for (plane, floor) in [RawImage::R, RawImage::GR, RawImage::B].into_iter().zip(cfg.floors) {
        let p = x.plane(plane);
        let div = p.iter().copied().fold(0.0f32, f32::max).max(floor);
        out.extend(p.iter().map(|&v| (v / div).powf(inv).clamp(0.0, 1.0)));
    }
    Ok(ProcessedRaw(RgbImage::new(h, w, out)?))
}

/// Shape of the noise-estimation network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Number of convolutions, at least 1.
    pub layers: usize,
    pub hidden: usize,
    pub slope: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            layers: 3,
            hidden: 16,
            slope: 0.2,
        }
    }
}

/// `x~ = x' - eta(concat(x', coords))` where `eta` is a stack of 3x3
/// convolutions with leaky ReLUs between them and a linear last layer.
#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessNet {
    pub cfg: PreprocessConfig,
}

impl PreprocessNet {
    pub fn new(cfg: PreprocessConfig) -> Result<Self> {
        if cfg.layers == 0 || cfg.hidden == 0 {
            return Err(Error::param("preprocess net needs at least one layer and channel"));
        }
        Ok(PreprocessNet { cfg })
    }

    fn widths(&self) -> Vec<(usize, usize)> {
        let n = self.cfg.layers;
        (0..n)
            .map(|i| {
                let cin = if i == 0 { 5 } else { self.cfg.hidden };
                let cout = if i + 1 == n { 3 } else { self.cfg.hidden };
                (cin, cout)
            })
            .collect()
    }

    pub fn init<T: Scalar>(&self, rng: &mut impl Rng) -> Result<ParamSet<T>> {
        let mut p = ParamSet::new();
        for (i, (cin, cout)) in self.widths().into_iter().enumerate() {
            p.init_conv(rng, &format!("conv{i}"), cin, cout, 3)?;
        }
        Ok(p)
    }

    /// Every parameter set to zero, so the network is the identity.
    pub fn zeros<T: Scalar>(&self) -> ParamSet<T> {
        let mut p = ParamSet::new();
        for (i, (cin, cout)) in self.widths().into_iter().enumerate() {
            p.set(format!("conv{i}.w"), Tensor::zeros(&[cout, cin, 3, 3]));
            p.set(format!("conv{i}.b"), Tensor::zeros(&[cout]));
        }
        p
    }

    /// Record the forward pass. `xprime` is `[3, H, W]`, `coords` `[2, H, W]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, xprime: Var, coords: Var) -> Result<Var> {
        if g.shape(xprime)[1..] != g.shape(coords)[1..] || g.shape(coords)[0] != 2 {
            return Err(Error::dim(format!(
                "preprocess: image {:?} and coordinates {:?}",
                g.shape(xprime),
                g.shape(coords)
            )));
        }
        let mut h = g.concat(&[xprime, coords], 0)?;
        let n = self.cfg.layers;
        for i in 0..n {
            h = g.conv2d(h, p.get(&format!("conv{i}.w"))?, Some(p.get(&format!("conv{i}.b"))?))?;
            if i + 1 < n {
                h = g.leaky_relu(h, self.cfg.slope)?;
            }
        }
        g.sub(xprime, h)
    }

    /// Evaluate on concrete images with the standard coordinate map.
    pub fn apply(&self, xprime: &RgbImage, params: &ParamSet<f32>) -> Result<RgbImage> {
        self.apply_with(xprime, &CoordMap::new(xprime.height(), xprime.width()), params)
    }

    pub fn apply_with(&self, xprime: &RgbImage, coords: &CoordMap, params: &ParamSet<f32>) -> Result<RgbImage> {
        let mut g = Graph::<f32>::new();
        let b = g.bind(params);
        let x = g.constant(Tensor::from_planar(xprime));
        let c = g.constant(Tensor::from_planar(coords));
        let out = self.forward(&mut g, &b, x, c)?;
        RgbImage::from_planar(g.value(out).to_planar()?)
    }
}

/// `x~` for the given parameters; `coords` must match `x'`.
pub fn preprocess_forward(
    xprime: &ProcessedRaw,
    coords: &CoordMap,
    net: &PreprocessNet,
    params: &ParamSet<f32>,
) -> Result<RgbImage> {
    if !xprime.same_spatial(coords) {
        return Err(Error::dim(format!(
            "preprocess: image {:?} and coordinates {:?}",
            xprime.dims(),
            coords.dims()
        )));
    }
    net.apply_with(xprime, coords, params)
}
