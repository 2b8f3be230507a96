use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{layer_norm, linear};
use crate::error::{Error, Result};
use crate::grad::{Bound, Graph, ParamSet, Scalar, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GctConfig {
    /// Number of latent vectors `K`.
    pub latents: usize,
    /// Latent width `C`.
    pub latent_dim: usize,
    pub heads: usize,
    pub self_attn_layers: usize,
    /// Channel count `D` of the feature map the block is applied to.
    pub input_dim: usize,
    /// Hidden width of the feed-forward layers as a multiple of `C`.
    #[serde(default = "default_ff_mult")]
    pub ff_mult: usize,
}

fn default_ff_mult() -> usize {
    2
}

impl GctConfig {
    pub fn new(input_dim: usize, latents: usize, latent_dim: usize) -> Self {
        GctConfig {
            latents,
            latent_dim,
            heads: 4,
            self_attn_layers: 2,
            input_dim,
            ff_mult: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latents == 0 || self.latent_dim == 0 || self.heads == 0 || self.input_dim == 0 || self.ff_mult == 0 {
            return Err(Error::param("GCT sizes must be positive"));
        }
        if self.latent_dim % self.heads != 0 {
            return Err(Error::param(format!(
                "latent dim {} is not divisible by {} heads",
                self.latent_dim, self.heads
            )));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.latent_dim / self.heads
    }
}

/// Analytic multiply-add based FLOP count of one forward pass, split into
/// the parts that scale with the token count and the parts that do not.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GctFlops {
    pub token_terms: u64,
    pub latent_terms: u64,
}

impl GctFlops {
    pub fn total(&self) -> u64 {
        self.token_terms + self.latent_terms
    }
}

/// Global context transformer: image tokens are summarized into `K`
/// learned latents by cross-attention, the latents are refined by
/// self-attention, and each token reads the result back through a second
/// cross-attention. Cost is linear in the token count.
#[derive(Clone, Debug, PartialEq)]
pub struct Gct {
    pub cfg: GctConfig,
}

impl Gct {
    pub fn new(cfg: GctConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Gct { cfg })
    }

    pub fn init<T: Scalar>(&self, rng: &mut impl Rng, p: &mut ParamSet<T>, prefix: &str) -> Result<()> {
        let c = &self.cfg;
        let (d, cl, dh) = (c.input_dim, c.latent_dim, c.head_dim());
        let n = |s: &str| format!("{prefix}{s}");
        p.init_uniform(rng, &n("z"), &[c.latents, cl], 1.0 / (cl as f64).sqrt())?;
        p.init_layer_norm(&n("ln_tok"), d)?;
        p.init_layer_norm(&n("enc.ln_z"), cl)?;
        for h in 0..c.heads {
            p.init_linear(rng, &n(&format!("enc.h{h}.q")), cl, dh, false)?;
            p.init_linear(rng, &n(&format!("enc.h{h}.k")), d, dh, false)?;
            p.init_linear(rng, &n(&format!("enc.h{h}.v")), d, dh, false)?;
        }
        p.init_linear(rng, &n("enc.o"), cl, cl, true)?;
        for l in 0..c.self_attn_layers {
            p.init_layer_norm(&n(&format!("sa{l}.ln1")), cl)?;
            for h in 0..c.heads {
                for m in ["q", "k", "v"] {
                    p.init_linear(rng, &n(&format!("sa{l}.h{h}.{m}")), cl, dh, false)?;
                }
            }
            p.init_linear(rng, &n(&format!("sa{l}.o")), cl, cl, true)?;
            p.init_layer_norm(&n(&format!("sa{l}.ln2")), cl)?;
            p.init_linear(rng, &n(&format!("sa{l}.ff1")), cl, c.ff_mult * cl, true)?;
            p.init_linear(rng, &n(&format!("sa{l}.ff2")), c.ff_mult * cl, cl, true)?;
        }
        p.init_layer_norm(&n("dec.ln_z"), cl)?;
        for h in 0..c.heads {
            p.init_linear(rng, &n(&format!("dec.h{h}.q")), d, dh, false)?;
            p.init_linear(rng, &n(&format!("dec.h{h}.k")), cl, dh, false)?;
            p.init_linear(rng, &n(&format!("dec.h{h}.v")), cl, dh, false)?;
        }
        p.init_linear(rng, &n("dec.o"), cl, d, true)?;
        Ok(())
    }

    /// Multi-head attention: `queries [Nq, *]` attend over `keys [Nk, *]`.
    /// Per-head projections `{name}.h{i}.{q,k,v}`, heads concatenated and
    /// projected by `{name}.o`.
    fn attention<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, name: &str, queries: Var, keys: Var) -> Result<Var> {
        let scale = 1.0 / (self.cfg.head_dim() as f64).sqrt();
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            let q = linear(g, p, &format!("{name}.h{h}.q"), queries)?;
            let k = linear(g, p, &format!("{name}.h{h}.k"), keys)?;
            let v = linear(g, p, &format!("{name}.h{h}.v"), keys)?;
            let kt = g.transpose(k)?;
            let s = g.matmul(q, kt)?;
            let s = g.scale(s, scale)?;
            let a = g.softmax(s, 1)?;
            heads.push(g.matmul(a, v)?);
        }
        let cat = if heads.len() == 1 { heads[0] } else { g.concat(&heads, 1)? };
        linear(g, p, &format!("{name}.o"), cat)
    }

    /// `x` is `[D, H, W]`; the result has the same shape and includes the
    /// residual skip.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let c = &self.cfg;
        let (d, h, w) = match g.shape(x) {
            [d, h, w] if *d == c.input_dim => (*d, *h, *w),
            s => {
                return Err(Error::dim(format!(
                    "GCT expects [{}, H, W], got {s:?}",
                    c.input_dim
                )))
            }
        };
        let n = h * w;
        let flat = g.reshape(x, &[d, n])?;
        let tokens = g.transpose(flat)?;
        let tok = layer_norm(g, p, "ln_tok", tokens)?;

        let z0 = p.get("z")?;
        let zn = layer_norm(g, p, "enc.ln_z", z0)?;
        let upd = self.attention(g, p, "enc", zn, tok)?;
        let mut z = g.add(z0, upd)?;
        for l in 0..c.self_attn_layers {
            let zn = layer_norm(g, p, &format!("sa{l}.ln1"), z)?;
            let a = self.attention(g, p, &format!("sa{l}"), zn, zn)?;
            z = g.add(z, a)?;
            let zn = layer_norm(g, p, &format!("sa{l}.ln2"), z)?;
            let f = linear(g, p, &format!("sa{l}.ff1"), zn)?;
            let f = g.leaky_relu(f, super::SLOPE)?;
            let f = linear(g, p, &format!("sa{l}.ff2"), f)?;
            z = g.add(z, f)?;
        }
        let zn = layer_norm(g, p, "dec.ln_z", z)?;
        let o = self.attention(g, p, "dec", tok, zn)?;
        let ot = g.transpose(o)?;
        let o = g.reshape(ot, &[d, h, w])?;
        g.add(x, o)
    }

    /// FLOPs (2 per multiply-add) of one forward pass over `tokens` tokens.
    pub fn flops(&self, tokens: usize) -> GctFlops {
        let c = &self.cfg;
        let (n, k, d, cl, dh, hds) = (
            tokens as u64,
            c.latents as u64,
            c.input_dim as u64,
            c.latent_dim as u64,
            c.head_dim() as u64,
            c.heads as u64,
        );
        let mm = |a: u64, b: u64, e: u64| 2 * a * b * e;
        let ln = |rows: u64, width: u64| 8 * rows * width;
        let softmax = |rows: u64, width: u64| 4 * rows * width;
        // Token-dependent: token norm, encoder k/v, encoder scores and mix,
        // decoder q, decoder scores and mix, output projection, residual.
        let token_terms = ln(n, d)
            + hds * (2 * mm(n, d, dh) + mm(k, dh, n) + softmax(k, n) + mm(k, n, dh))
            + hds * (mm(n, d, dh) + mm(n, dh, k) + softmax(n, k) + mm(n, k, dh))
            + mm(n, cl, d)
            + 2 * n * d;
        let per_layer = ln(k, cl)
            + hds * (3 * mm(k, cl, dh) + mm(k, dh, k) + softmax(k, k) + mm(k, k, dh))
            + mm(k, cl, cl)
            + ln(k, cl)
            + mm(k, cl, c.ff_mult as u64 * cl)
            + mm(k, c.ff_mult as u64 * cl, cl)
            + 4 * k * cl;
        let latent_terms = ln(k, cl)
            + hds * mm(k, cl, dh)
            + mm(k, cl, cl)
            + c.self_attn_layers as u64 * per_layer
            + ln(k, cl)
            + hds * 2 * mm(k, cl, dh);
        GctFlops {
            token_terms,
            latent_terms,
        }
    }
}
