use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{conv, Gct, GctConfig, RrdbConfig};
use crate::error::{Error, Result};
use crate::grad::{Bound, Graph, ParamSet, Scalar, Tensor, Var};
use crate::image::{CoordMap, ImageKind, RawImage, RgbImage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UNetConfig {
    /// Feature channels `D_l` per level; the level count is its length.
    pub channels: Vec<usize>,
    /// Latent count `K_l` per level.
    pub latents: Vec<usize>,
    /// Latent width `C_l` per level.
    pub latent_dims: Vec<usize>,
    pub heads: usize,
    pub self_attn_layers: usize,
    pub use_gct: bool,
    /// Build the RAW reconstruction decoder.
    pub use_reconstruct: bool,
    pub rrdb: RrdbConfig,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl UNetConfig {
    /// Two levels of 8 and 16 channels, 8 latents of width 16, one head.
    pub fn toy() -> Self {
        UNetConfig {
            channels: vec![8, 16],
            latents: vec![8, 8],
            latent_dims: vec![16, 16],
            heads: 1,
            self_attn_layers: 1,
            use_gct: true,
            use_reconstruct: true,
            rrdb: RrdbConfig {
                growth: 4,
                ..RrdbConfig::toy()
            },
        }
    }

    /// Four levels with `D_l = 64 * 2^l`, `K_l = 1024 / 2^l`, `C_l = 2^(l+7)`.
    pub fn paper() -> Self {
        UNetConfig {
            channels: (0..4).map(|l| 64 << l).collect(),
            latents: (0..4).map(|l| 1024 >> l).collect(),
            latent_dims: (0..4).map(|l| 128 << l).collect(),
            heads: 4,
            self_attn_layers: 2,
            use_gct: true,
            use_reconstruct: true,
            rrdb: RrdbConfig::default(),
        }
    }

    pub fn levels(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.levels();
        if l == 0 {
            return Err(Error::param("U-Net needs at least one level"));
        }
        if self.latents.len() != l || self.latent_dims.len() != l {
            return Err(Error::param(format!(
                "U-Net has {l} levels but {} latent counts and {} latent widths",
                self.latents.len(),
                self.latent_dims.len()
            )));
        }
        if self.channels.contains(&0) {
            return Err(Error::param("U-Net channel counts must be positive"));
        }
        self.rrdb.validate()?;
        if self.use_gct {
            for i in 0..l {
                self.gct(i).validate()?;
            }
        }
        Ok(())
    }

    fn gct(&self, level: usize) -> GctConfig {
        GctConfig {
            latents: self.latents[level],
            latent_dim: self.latent_dims[level],
            heads: self.heads,
            self_attn_layers: self.self_attn_layers,
            input_dim: self.channels[level],
            ff_mult: 2,
        }
    }
}

/// `G`: shared encoder with a transformer block per level, a decoder that
/// predicts the low-resolution target color and an optional decoder that
/// reconstructs the RAW input.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorPredictor {
    pub cfg: UNetConfig,
    gcts: Vec<Gct>,
}

impl ColorPredictor {
    pub fn new(cfg: UNetConfig) -> Result<Self> {
        cfg.validate()?;
        let gcts = if cfg.use_gct {
            (0..cfg.levels()).map(|l| Gct::new(cfg.gct(l))).collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(ColorPredictor { cfg, gcts })
    }

    pub fn init<T: Scalar>(&self, rng: &mut impl Rng) -> Result<ParamSet<T>> {
        let ch = &self.cfg.channels;
        let l = ch.len();
        let mut p = ParamSet::new();
        for i in 0..l {
            let cin = if i == 0 { 6 } else { ch[i - 1] };
            p.init_conv(rng, &format!("enc{i}.c0"), cin, ch[i], 3)?;
            p.init_conv(rng, &format!("enc{i}.c1"), ch[i], ch[i], 3)?;
            if let Some(gct) = self.gcts.get(i) {
                gct.init(rng, &mut p, &format!("enc{i}.gct."))?;
            }
        }
        let mut decoders = vec!["dslr"];
        if self.cfg.use_reconstruct {
            decoders.push("phone");
        }
        for d in decoders {
            for i in (0..l).rev() {
                let below = if i + 1 == l { ch[l - 1] } else { ch[i + 1] };
                p.init_conv_t(rng, &format!("{d}.up{i}"), below, ch[i])?;
                p.init_conv(rng, &format!("{d}.dec{i}.c0"), 2 * ch[i], ch[i], 3)?;
                p.init_conv(rng, &format!("{d}.dec{i}.c1"), ch[i], ch[i], 3)?;
            }
        }
        self.cfg.rrdb.init(rng, &mut p, "dslr.rrdb.", ch[0])?;
        p.init_conv(rng, "dslr.out", ch[0], 3, 3)?;
        if self.cfg.use_reconstruct {
            p.init_conv(rng, "phone.out", ch[0], 4, 3)?;
        }
        Ok(p)
    }

    fn decode<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, name: &str, bottom: Var, skips: &[Var]) -> Result<Var> {
        let mut h = bottom;
        for i in (0..skips.len()).rev() {
            let up = g.conv_transpose2x2(
                h,
                p.get(&format!("{name}.up{i}.w"))?,
                Some(p.get(&format!("{name}.up{i}.b"))?),
            )?;
            let cat = g.concat(&[up, skips[i]], 0)?;
            h = conv(g, p, &format!("{name}.dec{i}.c0"), cat, true)?;
            h = conv(g, p, &format!("{name}.dec{i}.c1"), h, true)?;
        }
        Ok(h)
    }

    /// `raw` is `[4, H, W]`, `coords` `[2, H, W]` with `H` and `W` divisible
    /// by `2^levels`. Returns the color prediction `[3, H, W]` and, when
    /// enabled, the RAW reconstruction `[4, H, W]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, raw: Var, coords: Var) -> Result<(Var, Option<Var>)> {
        let (rs, cs) = (g.shape(raw).to_vec(), g.shape(coords).to_vec());
        if rs.len() != 3 || rs[0] != 4 || cs.len() != 3 || cs[0] != 2 || rs[1..] != cs[1..] {
            return Err(Error::dim(format!("color predictor: RAW {rs:?} and coordinates {cs:?}")));
        }
        let l = self.cfg.levels();
        for level in 0..l {
            let f = 1usize << (level + 1);
            if rs[1] % f != 0 || rs[2] % f != 0 {
                return Err(Error::dim(format!(
                    "color predictor level {level}: {}x{} is not divisible by {f}",
                    rs[1], rs[2]
                )));
            }
        }
        let mut h = g.concat(&[raw, coords], 0)?;
        let mut skips = Vec::with_capacity(l);
        for i in 0..l {
            h = conv(g, p, &format!("enc{i}.c0"), h, true)?;
            h = conv(g, p, &format!("enc{i}.c1"), h, true)?;
            if let Some(gct) = self.gcts.get(i) {
                h = gct.forward(g, &p.scope(&format!("enc{i}.gct.")), h)?;
            }
            skips.push(h);
            h = g.avg_pool2(h)?;
        }
        let d = self.decode(g, p, "dslr", h, &skips)?;
        let d = self.cfg.rrdb.forward(g, p, "dslr.rrdb.", d)?;
        let color = conv(g, p, "dslr.out", d, false)?;
        let recon = if self.cfg.use_reconstruct {
            let d = self.decode(g, p, "phone", h, &skips)?;
            Some(conv(g, p, "phone.out", d, false)?)
        } else {
            None
        };
        Ok((color, recon))
    }

    /// Color prediction and RAW reconstruction for a concrete input.
    pub fn apply(&self, params: &ParamSet<f32>, raw: &RawImage) -> Result<(RgbImage, Option<RawImage>)> {
        let mut g = Graph::<f32>::new();
        let b = g.bind(params);
        let r = g.constant(Tensor::from_planar(raw));
        let c = g.constant(Tensor::from_planar(&CoordMap::new(raw.height(), raw.width())));
        let (color, recon) = self.forward(&mut g, &b, r, c)?;
        let color = RgbImage::from_planar(g.value(color).to_planar()?)?;
        let recon = match recon {
            Some(v) => Some(RawImage::from_planar(g.value(v).to_planar()?.map(|x| x.max(0.0)))?),
            None => None,
        };
        Ok((color, recon))
    }
}
