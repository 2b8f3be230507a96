use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{conv, RrdbConfig};
use crate::error::{Error, Result};
use crate::grad::{Bound, Graph, ParamSet, Scalar, Tensor, Var};
use crate::image::{ImageKind, RawImage, RgbImage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IspNetConfig {
    pub rrdb_blocks: usize,
    pub channels: usize,
    pub rrdb: RrdbConfig,
}

impl Default for IspNetConfig {
    fn default() -> Self {
        IspNetConfig {
            rrdb_blocks: 2,
            channels: 16,
            rrdb: RrdbConfig::toy(),
        }
    }
}

impl IspNetConfig {
    /// 8 blocks of 64 channels with growth 32.
    pub fn paper() -> Self {
        IspNetConfig {
            rrdb_blocks: 8,
            channels: 64,
            rrdb: RrdbConfig::default(),
        }
    }
}

/// `F`: RAW (4 planes) and color hint (3 planes) at RAW resolution to an
/// sRGB image at twice that resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct IspNet {
    pub cfg: IspNetConfig,
}

impl IspNet {
    pub fn new(cfg: IspNetConfig) -> Result<Self> {
        if cfg.channels == 0 {
            return Err(Error::param("ISP network needs channels > 0"));
        }
        cfg.rrdb.validate()?;
        Ok(IspNet { cfg })
    }

    pub fn init<T: Scalar>(&self, rng: &mut impl Rng) -> Result<ParamSet<T>> {
        let nf = self.cfg.channels;
        let mut p = ParamSet::new();
        p.init_conv(rng, "head", 7, nf, 3)?;
        for b in 0..self.cfg.rrdb_blocks {
            self.cfg.rrdb.init(rng, &mut p, &format!("rrdb{b}."), nf)?;
        }
        p.init_conv(rng, "trunk", nf, nf, 3)?;
        p.init_conv(rng, "up", nf, nf, 3)?;
        p.init_conv(rng, "out", nf, 3, 3)?;
        Ok(p)
    }

    /// `raw` is `[4, H, W]`, `color` `[3, H, W]`; returns `[3, 2H, 2W]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, raw: Var, color: Var) -> Result<Var> {
        let (rs, cs) = (g.shape(raw), g.shape(color));
        if rs.len() != 3 || cs.len() != 3 || rs[0] != 4 || cs[0] != 3 || rs[1..] != cs[1..] {
            return Err(Error::dim(format!("ISP network: RAW {rs:?} and color {cs:?}")));
        }
        let x = g.concat(&[raw, color], 0)?;
        let f = conv(g, p, "head", x, false)?;
        let mut h = f;
        for b in 0..self.cfg.rrdb_blocks {
            h = self.cfg.rrdb.forward(g, p, &format!("rrdb{b}."), h)?;
        }
        let t = conv(g, p, "trunk", h, false)?;
        let h = g.add(f, t)?;
        let u = g.upsample2(h)?;
        let u = conv(g, p, "up", u, true)?;
        conv(g, p, "out", u, false)
    }

    pub fn apply(&self, params: &ParamSet<f32>, raw: &RawImage, color: &RgbImage) -> Result<RgbImage> {
        if !raw.same_spatial(color) {
            return Err(Error::dim(format!(
                "ISP network: RAW {:?} and color {:?}",
                raw.dims(),
                color.dims()
            )));
        }
        let mut g = Graph::<f32>::new();
        let b = g.bind(params);
        let r = g.constant(Tensor::from_planar(raw));
        let c = g.constant(Tensor::from_planar(color));
        let y = self.forward(&mut g, &b, r, c)?;
        RgbImage::from_planar(g.value(y).to_planar()?)
    }
}
