//! Dense optical flow: warping, forward-backward consistency masks,
//! Middlebury `.flo` I/O and analytic test fields.

use std::ops::Deref;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{bilinear_sample, ImageKind, MaskImage, Planar, RgbImage};

const FLO_MAGIC: f32 = 202021.25;

/// Per-pixel displacement: plane 0 is `u` (+right), plane 1 is `v` (+down).
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField(Planar);

impl Deref for FlowField {
    type Target = Planar;

    fn deref(&self) -> &Planar {
        &self.0
    }
}

impl From<FlowField> for Planar {
    fn from(f: FlowField) -> Planar {
        f.0
    }
}

impl ImageKind for FlowField {
    fn from_planar(p: Planar) -> Result<Self> {
        if p.channels() != 2 {
            return Err(Error::dim(format!("flow needs 2 planes, got {}", p.channels())));
        }
        if !p.is_finite() {
            return Err(Error::Domain("non-finite flow value".into()));
        }
        Ok(FlowField(p))
    }
}

impl FlowField {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        Self::from_planar(Planar::new(2, height, width, data)?)
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        FlowField(Planar::zeros(2, height, width))
    }

    pub fn constant(height: usize, width: usize, u: f32, v: f32) -> Self {
        FlowField(Planar::from_fn(2, height, width, |c, _, _| if c == 0 { u } else { v }))
    }

    /// Build from a function of `(y, x)` returning `(u, v)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> (f32, f32)) -> Result<Self> {
        let n = height * width;
        let mut data = vec![0.0; 2 * n];
        for y in 0..height {
            for x in 0..width {
                let (u, v) = f(y, x);
                data[y * width + x] = u;
                data[n + y * width + x] = v;
            }
        }
        Self::new(height, width, data)
    }

    pub fn u(&self, y: usize, x: usize) -> f32 {
        self.at(0, y, x)
    }

    pub fn v(&self, y: usize, x: usize) -> f32 {
        self.at(1, y, x)
    }

    /// Flow for a 2x larger image: nearest upsampling with displacements doubled.
    pub fn upsample2(&self) -> FlowField {
        let up = crate::image::upsample_nearest_2x(self);
        FlowField(up.0.map(|v| 2.0 * v))
    }
}

/// `out(p) = img(p + flow(p))`, bilinear with replicate borders.
pub fn warp_planar(img: &Planar, flow: &FlowField) -> Result<Planar> {
    if !img.same_spatial(flow) {
        return Err(Error::dim(format!(
            "warp: image {:?} and flow {:?}",
            img.dims(),
            flow.dims()
        )));
    }
    let (c, h, w) = img.dims();
    Ok(Planar::from_fn(c, h, w, |ch, y, x| {
        let sx = x as f32 + flow.u(y, x);
        let sy = y as f32 + flow.v(y, x);
        bilinear_sample(img, ch, sx, sy)
    }))
}

pub fn warp(img: &RgbImage, flow: &FlowField) -> Result<RgbImage> {
    RgbImage::from_planar(warp_planar(img, flow)?)
}

/// Where the backward flow is read for pixel `p`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FbSampling {
    /// `bwd(p)`, the default.
    #[default]
    SamePixel,
    /// `bwd(p + fwd(p))`, bilinear.
    Displaced,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FbConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub sampling: FbSampling,
}

impl Default for FbConfig {
    fn default() -> Self {
        FbConfig {
            alpha1: 0.01,
            alpha2: 0.5,
            sampling: FbSampling::SamePixel,
        }
    }
}

/// The consistency predicate for one pixel, evaluated in `f64`.
pub fn fb_consistent(f: (f32, f32), b: (f32, f32), alpha1: f64, alpha2: f64) -> bool {
    let (fu, fv, bu, bv) = (f.0 as f64, f.1 as f64, b.0 as f64, b.1 as f64);
    let (su, sv) = (fu + bu, fv + bv);
    su * su + sv * sv < alpha1 * (fu * fu + fv * fv + bu * bu + bv * bv) + alpha2
}

/// 1 where forward and backward flow nearly cancel, 0 elsewhere.
pub fn fb_mask(fwd: &FlowField, bwd: &FlowField, cfg: &FbConfig) -> Result<MaskImage> {
    if fwd.dims() != bwd.dims() {
        return Err(Error::dim(format!(
            "fb_mask: forward {:?} and backward {:?}",
            fwd.dims(),
            bwd.dims()
        )));
    }
    let (_, h, w) = fwd.dims();
    Ok(MaskImage::from_fn(h, w, |y, x| {
        let f = (fwd.u(y, x), fwd.v(y, x));
        let b = match cfg.sampling {
            FbSampling::SamePixel => (bwd.u(y, x), bwd.v(y, x)),
            FbSampling::Displaced => {
                let (sx, sy) = (x as f32 + f.0, y as f32 + f.1);
                (bilinear_sample(bwd, 0, sx, sy), bilinear_sample(bwd, 1, sx, sy))
            }
        };
        fb_consistent(f, b, cfg.alpha1, cfg.alpha2)
    }))
}

pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let (_, h, w) = flow.dims();
    let mut out = Vec::with_capacity(12 + 8 * h * w);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for y in 0..h {
        for x in 0..w {
            out.extend_from_slice(&flow.u(y, x).to_le_bytes());
            out.extend_from_slice(&flow.v(y, x).to_le_bytes());
        }
    }
    out
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField> {
    let word = |i: usize| -> Result<[u8; 4]> {
        bytes
            .get(i..i + 4)
            .map(|s| [s[0], s[1], s[2], s[3]])
            .ok_or_else(|| Error::format(i, "truncated .flo header"))
    };
    if f32::from_le_bytes(word(0)?) != FLO_MAGIC {
        return Err(Error::format(0, "bad .flo magic"));
    }
    let w = i32::from_le_bytes(word(4)?);
    let h = i32::from_le_bytes(word(8)?);
    if w <= 0 || h <= 0 {
        return Err(Error::format(4, format!("bad .flo size {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let need = 12 + 8 * h * w;
    if bytes.len() != need {
        return Err(Error::format(
            bytes.len().min(need),
            format!(".flo payload needs {need} bytes, file has {}", bytes.len()),
        ));
    }
    let n = h * w;
    let mut data = vec![0.0f32; 2 * n];
    for (i, c) in bytes[12..].chunks_exact(8).enumerate() {
        data[i] = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        data[n + i] = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
    }
    FlowField::new(h, w, data)
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    decode_flo(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_flo(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_flo(flow)).map_err(|e| Error::io(path, e))
}

/// Parametric flow fields with a closed-form inverse.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SynthFlow {
    Translation { dx: f64, dy: f64 },
    /// Rotation by `theta` radians about the image center.
    Rotation { theta: f64 },
    /// Scaling by `factor` about the image center.
    Zoom { factor: f64 },
}

impl SynthFlow {
    /// Map `p -> T(p)` and its inverse, in pixel coordinates.
    fn maps(&self, cx: f64, cy: f64) -> Result<(Box<dyn Fn(f64, f64) -> (f64, f64)>, Box<dyn Fn(f64, f64) -> (f64, f64)>)> {
        Ok(match *self {
            SynthFlow::Translation { dx, dy } => {
                if !dx.is_finite() || !dy.is_finite() {
                    return Err(Error::param("translation must be finite"));
                }
                (Box::new(move |x, y| (x + dx, y + dy)), Box::new(move |x, y| (x - dx, y - dy)))
            }
            SynthFlow::Rotation { theta } => {
                if !theta.is_finite() {
                    return Err(Error::param("rotation angle must be finite"));
                }
                let rot = move |t: f64| {
                    let (s, c) = t.sin_cos();
                    move |x: f64, y: f64| {
                        let (rx, ry) = (x - cx, y - cy);
                        (cx + c * rx - s * ry, cy + s * rx + c * ry)
                    }
                };
                (Box::new(rot(theta)), Box::new(rot(-theta)))
            }
            SynthFlow::Zoom { factor } => {
                if !factor.is_finite() || factor <= 0.0 {
                    return Err(Error::Degenerate(format!("zoom factor must be positive, got {factor}")));
                }
                (
                    Box::new(move |x, y| (cx + factor * (x - cx), cy + factor * (y - cy))),
                    Box::new(move |x, y| (cx + (x - cx) / factor, cy + (y - cy) / factor)),
                )
            }
        })
    }
}

/// `(fwd, bwd)` with `fwd(p) = T(p) - p` and `bwd(p) = T^-1(p) - p`, so
/// warping by `fwd` then by `bwd` is the identity away from the borders.
pub fn synth_flow(kind: SynthFlow, height: usize, width: usize) -> Result<(FlowField, FlowField)> {
    let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    let (t, inv) = kind.maps(cx, cy)?;
    let field = |m: &dyn Fn(f64, f64) -> (f64, f64)| {
        FlowField::from_fn(height, width, |y, x| {
            let (tx, ty) = m(x as f64, y as f64);
            ((tx - x as f64) as f32, (ty - y as f64) as f32)
        })
    };
    Ok((field(&t)?, field(&inv)?))
}
