//! Parametric color mapping: soft intensity bins, closed-form per-bin
//! weighted least-squares fits, and their application.

mod op;
mod serial;
mod solve;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{gaussian_blur, MaskImage, RgbImage};

pub use op::ColorMapOp;
pub(crate) use solve::solve_spd;

/// Model family used for the mapping.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Linear3x3,
    ConstVal,
    AffineIndep,
    AffineDep,
    ColorBlur,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Linear3x3,
        Variant::ConstVal,
        Variant::AffineIndep,
        Variant::AffineDep,
        Variant::ColorBlur,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Linear3x3 => "linear3x3",
            Variant::ConstVal => "const_val",
            Variant::AffineIndep => "affine_indep",
            Variant::AffineDep => "affine_dep",
            Variant::ColorBlur => "color_blur",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::param(format!("unknown color map variant `{s}`")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColorMapConfig {
    pub variant: Variant,
    pub bins: usize,
    /// Softmax temperature; `(1/bins)^2` when unset.
    pub temperature: Option<f64>,
    pub ridge: f64,
    pub blur_size: usize,
    pub blur_sigma: f64,
}

impl Default for ColorMapConfig {
    fn default() -> Self {
        ColorMapConfig {
            variant: Variant::AffineDep,
            bins: 15,
            temperature: None,
            ridge: 1e-6,
            blur_size: 9,
            blur_sigma: 2.0,
        }
    }
}

impl ColorMapConfig {
    pub fn with_variant(variant: Variant) -> Self {
        ColorMapConfig {
            variant,
            ..Default::default()
        }
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
            .unwrap_or_else(|| (1.0 / self.bins as f64).powi(2))
    }

    fn validate(&self) -> Result<()> {
        if self.bins == 0 {
            return Err(Error::param("bin count must be at least 1"));
        }
        let t = self.temperature();
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::param(format!("temperature must be positive, got {t}")));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::param("ridge must be non-negative"));
        }
        Ok(())
    }
}

/// Per-channel bin centroids, each list ascending and equally spaced.
pub type Centroids = [Vec<f64>; 3];

/// Centers of an equal partition of each channel's `[min, max]` into `bins` cells.
pub fn make_bins(x: &RgbImage, bins: usize) -> Result<Centroids> {
    if bins == 0 {
        return Err(Error::param("bin count must be at least 1"));
    }
    Ok(std::array::from_fn(|j| {
        let p = x.plane(j);
        let lo = p.iter().copied().fold(f32::INFINITY, f32::min) as f64;
        let hi = p.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let step = (hi - lo) / bins as f64;
        (1..=bins).map(|b| lo + (b as f64 - 0.5) * step).collect()
    }))
}

/// Axis along which soft assignments are normalized.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum BinAxis {
    /// Each pixel's weights sum to 1 over the bins.
    OverBins,
    /// Each bin's weights sum to 1 over the pixels.
    OverPixels,
}

/// Soft assignments per output channel, stored pixel-major (`N x B`).
#[derive(Clone, Debug, PartialEq)]
pub struct BinWeights {
    pub axis: BinAxis,
    pub pixels: usize,
    pub bins: usize,
    pub data: [Vec<f64>; 3],
}

impl BinWeights {
    pub fn get(&self, j: usize, i: usize, b: usize) -> f64 {
        self.data[j][i * self.bins + b]
    }
}

#[inline]
fn logit(x: f64, k: f64, t: f64) -> f64 {
    let d = x - k;
    -d * d / t
}

/// Softmax over bins for one intensity, written into `out`.
pub(crate) fn bin_softmax(x: f64, centroids: &[f64], t: f64, out: &mut [f64]) {
    let mut m = f64::NEG_INFINITY;
    for (o, &k) in out.iter_mut().zip(centroids) {
        *o = logit(x, k, t);
        m = m.max(*o);
    }
    let mut s = 0.0;
    for o in out.iter_mut() {
        *o = (*o - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

pub fn soft_weights(x: &RgbImage, centroids: &Centroids, temperature: f64, axis: BinAxis) -> BinWeights {
    soft_weights_keep(x, centroids, temperature, axis, None)
}

/// [`soft_weights`] where pixels outside `keep` get zero weight; the
/// pixel-axis normalization runs over kept pixels only.
fn soft_weights_keep(
    x: &RgbImage,
    centroids: &Centroids,
    temperature: f64,
    axis: BinAxis,
    keep: Option<&[bool]>,
) -> BinWeights {
    let n = x.pixels();
    let kept = |i: usize| keep.map_or(true, |k| k[i]);
    let nb = centroids[0].len();
    let data = std::array::from_fn(|j| {
        let p = x.plane(j);
        let ks = &centroids[j];
        let mut w = vec![0.0f64; n * nb];
        match axis {
            BinAxis::OverBins => {
                for (i, row) in w.chunks_mut(nb).enumerate() {
                    bin_softmax(p[i] as f64, ks, temperature, row);
                }
            }
            BinAxis::OverPixels => {
                for (b, &k) in ks.iter().enumerate() {
                    let m = p
                        .iter()
                        .enumerate()
                        .filter(|&(i, _)| kept(i))
                        .map(|(_, &v)| logit(v as f64, k, temperature))
                        .fold(f64::NEG_INFINITY, f64::max);
                    let mut s = 0.0;
                    for (i, &v) in p.iter().enumerate() {
                        if !kept(i) {
                            continue;
                        }
                        let e = (logit(v as f64, k, temperature) - m).exp();
                        w[i * nb + b] = e;
                        s += e;
                    }
                    for i in 0..n {
                        w[i * nb + b] /= s;
                    }
                }
            }
        }
        w
    });
    BinWeights {
        axis,
        pixels: n,
        bins: nb,
        data,
    }
}

/// Fitted parameters of each variant.
#[derive(Clone, Debug, PartialEq)]
pub enum MapParams {
    Unfitted,
    /// Per channel, per bin `[A1, A2, A3, B]`.
    AffineDep([Vec<[f64; 4]>; 3]),
    /// Per channel, per bin `[a, b]`.
    AffineIndep([Vec<[f64; 2]>; 3]),
    /// Per channel, per bin value.
    ConstVal([Vec<f64>; 3]),
    /// Row-major `c = M x`.
    Linear3x3([[f64; 3]; 3]),
    /// The blurred target itself.
    ColorBlur(RgbImage),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColorMapModel {
    pub variant: Variant,
    pub temperature: f64,
    pub centroids: Centroids,
    pub blur_size: usize,
    pub blur_sigma: f64,
    /// `(height, width)` of the pair the model was fitted on.
    pub fit_dims: Option<(usize, usize)>,
    pub params: MapParams,
}

impl ColorMapModel {
    /// A model with no fitted parameters; applying it fails.
    pub fn unfitted(cfg: &ColorMapConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(ColorMapModel {
            variant: cfg.variant,
            temperature: cfg.temperature(),
            centroids: std::array::from_fn(|_| vec![0.0; cfg.bins]),
            blur_size: cfg.blur_size,
            blur_sigma: cfg.blur_sigma,
            fit_dims: None,
            params: MapParams::Unfitted,
        })
    }

    pub fn bins(&self) -> usize {
        self.centroids[0].len()
    }

    pub fn is_fitted(&self) -> bool {
        !matches!(self.params, MapParams::Unfitted)
    }

    /// Mapped color of one pixel and, if requested, the Jacobian
    /// `d out_j / d x_k`. Not defined for [`Variant::ColorBlur`].
    pub(crate) fn eval_pixel(&self, x: [f64; 3], scratch: &mut [f64], jac: Option<&mut [[f64; 3]; 3]>) -> [f64; 3] {
        let t = self.temperature;
        let mut out = [0.0; 3];
        let mut jac = jac;
        if let Some(j) = jac.as_deref_mut() {
            *j = [[0.0; 3]; 3];
        }
        match &self.params {
            MapParams::Linear3x3(m) => {
                for j in 0..3 {
                    out[j] = (0..3).map(|k| m[j][k] * x[k]).sum();
                }
                if let Some(jm) = jac {
                    *jm = *m;
                }
            }
            MapParams::Unfitted | MapParams::ColorBlur(_) => {}
            params => {
                for j in 0..3 {
                    let ks = &self.centroids[j];
                    bin_softmax(x[j], ks, t, scratch);
                    let mut acc = 0.0;
                    let mut dacc = [0.0f64; 3];
                    let mut mean_dl = 0.0;
                    let mut dl_y = 0.0;
                    for (b, &wb) in scratch.iter().enumerate() {
                        let (y, dy): (f64, [f64; 3]) = match params {
                            MapParams::AffineDep(v) => {
                                let p = v[j][b];
                                (p[0] * x[0] + p[1] * x[1] + p[2] * x[2] + p[3], [p[0], p[1], p[2]])
                            }
                            MapParams::AffineIndep(v) => {
                                let p = v[j][b];
                                let mut d = [0.0; 3];
                                d[j] = p[0];
                                (p[0] * x[j] + p[1], d)
                            }
                            MapParams::ConstVal(v) => (v[j][b], [0.0; 3]),
                            _ => unreachable!(),
                        };
                        acc += wb * y;
                        if jac.is_some() {
                            let dl = -2.0 * (x[j] - ks[b]) / t;
                            mean_dl += wb * dl;
                            dl_y += wb * dl * y;
                            for k in 0..3 {
                                dacc[k] += wb * dy[k];
                            }
                        }
                    }
                    out[j] = acc;
                    if let Some(jm) = jac.as_deref_mut() {
                        // d/dx_j of sum_b w_b y_b through the bin weights.
                        dacc[j] += dl_y - mean_dl * acc;
                        jm[j] = dacc;
                    }
                }
            }
        }
        out
    }
}

/// Fit the configured variant mapping `x` onto `c`.
pub fn fit(x: &RgbImage, c: &RgbImage, cfg: &ColorMapConfig) -> Result<ColorMapModel> {
    fit_impl(x, c, cfg, None)
}

/// [`fit`] using only pixels set in `mask`. Centroids still come from all of `x`.
/// [`Variant::ColorBlur`] ignores the mask. Falls back to [`fit`] when fewer
/// than 4 pixels are kept.
pub fn fit_masked(x: &RgbImage, c: &RgbImage, mask: &MaskImage, cfg: &ColorMapConfig) -> Result<ColorMapModel> {
    if mask.height() != x.height() || mask.width() != x.width() {
        return Err(Error::dim(format!("color map fit: mask {:?}, source {:?}", mask.dims(), x.dims())));
    }
    if mask.count() < 4 {
        return fit(x, c, cfg);
    }
    let keep: Vec<bool> = (0..x.height())
        .flat_map(|y| (0..x.width()).map(move |xx| (y, xx)))
        .map(|(y, xx)| mask.get(y, xx))
        .collect();
    fit_impl(x, c, cfg, Some(&keep))
}

fn fit_impl(x: &RgbImage, c: &RgbImage, cfg: &ColorMapConfig, keep: Option<&[bool]>) -> Result<ColorMapModel> {
    cfg.validate()?;
    if !x.same_dims(c) {
        return Err(Error::dim(format!(
            "color map fit: source {:?} and target {:?}",
            x.dims(),
            c.dims()
        )));
    }
    if x.pixels() < 4 {
        return Err(Error::dim(format!("color map fit needs at least 4 pixels, got {}", x.pixels())));
    }
    if !x.is_finite() || !c.is_finite() {
        return Err(Error::Domain("non-finite color map input".into()));
    }
    let t = cfg.temperature();
    let centroids = make_bins(x, cfg.bins)?;
    let n = x.pixels();
    let nb = cfg.bins;
    let params = match cfg.variant {
        Variant::Linear3x3 => MapParams::Linear3x3(fit_linear(x, c, keep)),
        Variant::ColorBlur => MapParams::ColorBlur(gaussian_blur(c, cfg.blur_size, cfg.blur_sigma)?),
        variant => {
            let w = soft_weights_keep(x, &centroids, t, BinAxis::OverPixels, keep);
            let xs: [&[f32]; 3] = [x.plane(0), x.plane(1), x.plane(2)];
            match variant {
                Variant::ConstVal => MapParams::ConstVal(std::array::from_fn(|j| {
                    let cj = c.plane(j);
                    (0..nb)
                        .map(|b| (0..n).map(|i| w.get(j, i, b) * cj[i] as f64).sum())
                        .collect()
                })),
                Variant::AffineIndep => MapParams::AffineIndep(std::array::from_fn(|j| {
                    let cj = c.plane(j);
                    (0..nb)
                        .map(|b| {
                            wls(n, cfg.ridge, |i| w.get(j, i, b), |i| [xs[j][i] as f64, 1.0], |i| cj[i] as f64)
                        })
                        .collect()
                })),
                Variant::AffineDep => MapParams::AffineDep(std::array::from_fn(|j| {
                    let cj = c.plane(j);
                    (0..nb)
                        .map(|b| {
                            wls(
                                n,
                                cfg.ridge,
                                |i| w.get(j, i, b),
                                |i| [xs[0][i] as f64, xs[1][i] as f64, xs[2][i] as f64, 1.0],
                                |i| cj[i] as f64,
                            )
                        })
                        .collect()
                })),
                _ => unreachable!(),
            }
        }
    };
    Ok(ColorMapModel {
        variant: cfg.variant,
        temperature: t,
        centroids,
        blur_size: cfg.blur_size,
        blur_sigma: cfg.blur_sigma,
        fit_dims: Some((x.height(), x.width())),
        params,
    })
}

/// Weighted ridge least squares: minimize `sum_i w_i (row_i . v - y_i)^2 + lambda |v|^2`
/// with `lambda = ridge * (sum_i w_i + 1)`.
fn wls<const N: usize>(
    n: usize,
    ridge: f64,
    w: impl Fn(usize) -> f64,
    row: impl Fn(usize) -> [f64; N],
    y: impl Fn(usize) -> f64,
) -> [f64; N] {
    let mut m = [[0.0f64; N]; N];
    let mut rhs = [0.0f64; N];
    let mut wsum = 0.0;
    for i in 0..n {
        let wi = w(i);
        if wi == 0.0 {
            continue;
        }
        wsum += wi;
        let r = row(i);
        let yi = y(i);
        for a in 0..N {
            let wa = wi * r[a];
            rhs[a] += wa * yi;
            for b in 0..=a {
                m[a][b] += wa * r[b];
            }
        }
    }
    let lambda = ridge * (wsum + 1.0);
    for a in 0..N {
        for b in 0..a {
            m[b][a] = m[a][b];
        }
        m[a][a] += lambda;
    }
    solve_spd(&m, &rhs)
}

/// Global least-squares `c = M x` without offset.
fn fit_linear(x: &RgbImage, c: &RgbImage, keep: Option<&[bool]>) -> [[f64; 3]; 3] {
    let n = x.pixels();
    let mut gram = [[0.0f64; 3]; 3];
    let mut cross = [[0.0f64; 3]; 3];
    for i in (0..n).filter(|&i| keep.map_or(true, |k| k[i])) {
        let xi = [x.plane(0)[i] as f64, x.plane(1)[i] as f64, x.plane(2)[i] as f64];
        for a in 0..3 {
            let ca = c.plane(a)[i] as f64;
            for b in 0..3 {
                gram[a][b] += xi[a] * xi[b];
                cross[a][b] += ca * xi[b];
            }
        }
    }
    std::array::from_fn(|j| solve_spd(&gram, &cross[j]))
}

/// `c^ = sum_b w^_b (A_b x + B_b)` per pixel, or the stored blurred target
/// for [`Variant::ColorBlur`]. No clamping is applied.
pub fn apply(x: &RgbImage, model: &ColorMapModel) -> Result<RgbImage> {
    match &model.params {
        MapParams::Unfitted => Err(Error::State("color map model has not been fitted".into())),
        MapParams::ColorBlur(blurred) => {
            if !blurred.same_dims(x) {
                return Err(Error::dim(format!(
                    "color blur model stores {:?}, input is {:?}",
                    blurred.dims(),
                    x.dims()
                )));
            }
            Ok(blurred.clone())
        }
        _ => {
            let (_, h, w) = x.dims();
            let n = h * w;
            let mut scratch = vec![0.0; model.bins()];
            let mut out = vec![0.0f32; 3 * n];
            for i in 0..n {
                let xi = [x.plane(0)[i] as f64, x.plane(1)[i] as f64, x.plane(2)[i] as f64];
                let y = model.eval_pixel(xi, &mut scratch, None);
                for j in 0..3 {
                    out[j * n + i] = y[j] as f32;
                }
            }
            let img = RgbImage::new(h, w, out)
                .map_err(|_| Error::NonFinite("color map apply".into()))?;
            Ok(img)
        }
    }
}

/// Sum of absolute differences over all pixels and channels.
pub fn l1_residual(a: &RgbImage, b: &RgbImage) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum()
}
