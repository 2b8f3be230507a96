use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conv;
use crate::error::{Error, Result};
use crate::grad::{Bound, Graph, ParamSet, Scalar, Var};

/// Residual-in-residual dense block layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RrdbConfig {
    /// Growth channels of each dense convolution.
    pub growth: usize,
    pub dense_blocks: usize,
    pub convs: usize,
    pub residual_scale: f64,
}

impl Default for RrdbConfig {
    fn default() -> Self {
        RrdbConfig {
            growth: 32,
            dense_blocks: 3,
            convs: 5,
            residual_scale: 0.2,
        }
    }
}

impl RrdbConfig {
    pub fn toy() -> Self {
        RrdbConfig {
            growth: 8,
            ..Default::default()
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.growth == 0 || self.dense_blocks == 0 || self.convs < 2 {
            return Err(Error::param("RRDB needs growth > 0, at least one dense block and two convolutions"));
        }
        Ok(())
    }

    pub(crate) fn init<T: Scalar>(&self, rng: &mut impl Rng, p: &mut ParamSet<T>, prefix: &str, nf: usize) -> Result<()> {
        for d in 0..self.dense_blocks {
            for i in 0..self.convs {
                let cin = nf + i * self.growth;
                let cout = if i + 1 == self.convs { nf } else { self.growth };
                p.init_conv(rng, &format!("{prefix}db{d}.c{i}"), cin, cout, 3)?;
            }
        }
        Ok(())
    }

    fn dense<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, name: &str, x: Var) -> Result<Var> {
        let mut feats = vec![x];
        for i in 0..self.convs {
            let input = if feats.len() == 1 { x } else { g.concat(&feats, 0)? };
            let last = i + 1 == self.convs;
            let y = conv(g, p, &format!("{name}.c{i}"), input, !last)?;
            if last {
                let s = g.scale(y, self.residual_scale)?;
                return g.add(x, s);
            }
            feats.push(y);
        }
        unreachable!("convs >= 2")
    }

    /// `x + s * DB_n(...DB_1(x))`, each dense block itself residual.
    pub(crate) fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
        let mut h = x;
        for d in 0..self.dense_blocks {
            h = self.dense(g, p, &format!("{prefix}db{d}"), h)?;
        }
        let s = g.scale(h, self.residual_scale)?;
        g.add(x, s)
    }
}
