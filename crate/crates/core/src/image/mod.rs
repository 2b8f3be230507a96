//! Planar image buffers shared by every stage of the pipeline.
//!
//! All buffers are channel-major (`data[c][y][x]`, row-major within a
//! plane) 32-bit floats. The typed wrappers ([`RgbImage`], [`RawImage`],
//! [`MaskImage`], [`CoordMap`]) enforce their invariants at construction
//! and dereference to the underlying [`Planar`] buffer.

mod blur;
mod io;
mod resample;

use std::ops::Deref;

pub use blur::{gaussian_blur, gaussian_kernel, blur_planar};
pub use io::{
    decode_pgm, decode_ppm, decode_raw4, encode_pgm, encode_ppm, encode_raw4, read_pgm, read_ppm,
    read_raw4, write_pgm, write_ppm, write_raw4,
};
pub use resample::{bilinear_sample, downsample_bilinear_2x, upsample_nearest_2x};

use crate::error::{Error, Result};

/// A dense multi-plane image of `f32` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Planar {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Planar {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::dim(format!(
                "empty image {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::dim(format!(
                "buffer of {} values for a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        Ok(Planar {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        assert!(channels > 0 && height > 0 && width > 0, "empty image");
        Planar {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    /// Build by evaluating `f(c, y, x)` at every sample.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut out = Self::zeros(channels, height, width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    out.data[(c * height + y) * width + x] = f(c, y, x);
                }
            }
        }
        out
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn same_dims(&self, other: &Planar) -> bool {
        self.dims() == other.dims()
    }

    pub fn same_spatial(&self, other: &Planar) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> Planar {
        Planar {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamped(&self, lo: f32, hi: f32) -> Planar {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn max_abs_diff(&self, other: &Planar) -> f32 {
        assert!(self.same_dims(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Concatenate along the channel axis.
    pub fn concat(parts: &[&Planar]) -> Result<Planar> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat of zero images"))?;
        let mut data = Vec::new();
        let mut channels = 0;
        for p in parts {
            if !p.same_spatial(first) {
                return Err(Error::dim(format!(
                    "concat {}x{} with {}x{}",
                    first.height, first.width, p.height, p.width
                )));
            }
            channels += p.channels;
            data.extend_from_slice(&p.data);
        }
        Planar::new(channels, first.height, first.width, data)
    }

    /// Keep channels `range`.
    pub fn select_channels(&self, range: std::ops::Range<usize>) -> Planar {
        let n = self.pixels();
        Planar {
            channels: range.len(),
            height: self.height,
            width: self.width,
            data: self.data[range.start * n..range.end * n].to_vec(),
        }
    }

    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Planar> {
        if height == 0 || width == 0 || y0 + height > self.height || x0 + width > self.width {
            return Err(Error::dim(format!(
                "crop {height}x{width} at ({y0},{x0}) outside {}x{}",
                self.height, self.width
            )));
        }
        Ok(Planar::from_fn(self.channels, height, width, |c, y, x| {
            self.at(c, y0 + y, x0 + x)
        }))
    }

    /// Apply one of the eight flip/rotation symmetries of the square.
    /// `code & 3` counts 90 degree counter-clockwise turns, `code & 4` flips
    /// horizontally first.
    pub fn dihedral(&self, code: u8) -> Planar {
        let flip = code & 4 != 0;
        let turns = code & 3;
        let (h, w) = (self.height, self.width);
        let (oh, ow) = if turns % 2 == 1 { (w, h) } else { (h, w) };
        Planar::from_fn(self.channels, oh, ow, |c, y, x| {
            // map output (y, x) back to source coordinates
            let (sy, mut sx) = match turns {
                0 => (y, x),
                1 => (x, w - 1 - y),
                2 => (h - 1 - y, w - 1 - x),
                _ => (h - 1 - x, y),
            };
            if flip {
                sx = w - 1 - sx;
            }
            self.at(c, sy, sx)
        })
    }
}

/// Common access to the typed image wrappers.
pub trait ImageKind: Sized + Deref<Target = Planar> {
    /// Wrap a buffer, checking the kind's invariants.
    fn from_planar(p: Planar) -> Result<Self>;

    fn planar(&self) -> &Planar {
        self
    }
}

macro_rules! image_kind {
    ($name:ident) => {
        impl Deref for $name {
            type Target = Planar;
            fn deref(&self) -> &Planar {
                &self.0
            }
        }

        impl From<$name> for Planar {
            fn from(v: $name) -> Planar {
                v.0
            }
        }
    };
}

/// Three-plane (R, G, B) color image.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage(Planar);
image_kind!(RgbImage);

impl ImageKind for RgbImage {
    fn from_planar(p: Planar) -> Result<Self> {
        if p.channels() != 3 {
            return Err(Error::dim(format!(
                "RGB image needs 3 planes, got {}",
                p.channels()
            )));
        }
        if !p.is_finite() {
            return Err(Error::Domain("non-finite RGB sample".into()));
        }
        Ok(RgbImage(p))
    }
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        Self::from_planar(Planar::new(3, height, width, data)?)
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        RgbImage(Planar::zeros(3, height, width))
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        RgbImage(Planar::filled(3, height, width, value))
    }

    pub fn from_fn(height: usize, width: usize, f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        RgbImage(Planar::from_fn(3, height, width, f))
    }

    /// Values clamped into `[0, 1]`.
    pub fn clamp01(&self) -> RgbImage {
        RgbImage(self.0.clamped(0.0, 1.0))
    }

    pub fn as_planar_mut(&mut self) -> &mut Planar {
        &mut self.0
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        [self.at(0, y, x), self.at(1, y, x), self.at(2, y, x)]
    }
}

/// Four-plane packed Bayer sensor data, plane order R, Gr, Gb, B.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage(Planar);
image_kind!(RawImage);

impl ImageKind for RawImage {
    fn from_planar(p: Planar) -> Result<Self> {
        if p.channels() != 4 {
            return Err(Error::dim(format!(
                "RAW image needs 4 planes, got {}",
                p.channels()
            )));
        }
        if let Some(v) = p.data().iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Domain(format!("RAW sample {v} is negative or non-finite")));
        }
        Ok(RawImage(p))
    }
}

impl RawImage {
    pub const R: usize = 0;
    pub const GR: usize = 1;
    pub const GB: usize = 2;
    pub const B: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        Self::from_planar(Planar::new(4, height, width, data)?)
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        RawImage(Planar::zeros(4, height, width))
    }
}

/// Binary single-plane mask.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskImage(Planar);
image_kind!(MaskImage);

impl ImageKind for MaskImage {
    fn from_planar(p: Planar) -> Result<Self> {
        if p.channels() != 1 {
            return Err(Error::dim(format!(
                "mask needs 1 plane, got {}",
                p.channels()
            )));
        }
        if p.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Domain("mask values must be exactly 0 or 1".into()));
        }
        Ok(MaskImage(p))
    }
}

impl MaskImage {
    pub fn ones(height: usize, width: usize) -> Self {
        MaskImage(Planar::filled(1, height, width, 1.0))
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        MaskImage(Planar::zeros(1, height, width))
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        MaskImage(Planar::from_fn(1, height, width, |_, y, x| {
            if f(y, x) {
                1.0
            } else {
                0.0
            }
        }))
    }

    /// Threshold any single-plane buffer at 0.5.
    pub fn threshold(p: &Planar) -> Result<Self> {
        if p.channels() != 1 {
            return Err(Error::dim("threshold needs a single plane"));
        }
        Ok(MaskImage(p.map(|v| if v >= 0.5 { 1.0 } else { 0.0 })))
    }

    pub fn count(&self) -> usize {
        self.data().iter().filter(|&&v| v == 1.0).count()
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.at(0, y, x) == 1.0
    }
}

/// Two-plane normalized pixel coordinates: plane 0 is the column, plane 1
/// the row, both spanning `[-1, 1]` corner to corner.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordMap(Planar);
image_kind!(CoordMap);

impl ImageKind for CoordMap {
    fn from_planar(p: Planar) -> Result<Self> {
        if p.channels() != 2 {
            return Err(Error::dim("coordinate map needs 2 planes"));
        }
        Ok(CoordMap(p))
    }
}

impl CoordMap {
    pub fn new(height: usize, width: usize) -> Self {
        let norm = |i: usize, n: usize| {
            if n > 1 {
                -1.0 + 2.0 * i as f32 / (n - 1) as f32
            } else {
                0.0
            }
        };
        CoordMap(Planar::from_fn(2, height, width, |c, y, x| {
            if c == 0 {
                norm(x, width)
            } else {
                norm(y, height)
            }
        }))
    }
}

/// Re-wrap a transformed buffer as the same image kind. Only used for
/// operations that provably keep the kind's invariants.
pub(crate) fn rewrap<I: ImageKind>(p: Planar) -> I {
    I::from_planar(p).expect("operation preserves image invariants")
}
