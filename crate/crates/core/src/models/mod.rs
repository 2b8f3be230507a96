//! The color predictor `G`, the color-conditional ISP network `F` and the
//! global context transformer block they share.

mod gct;
mod ispnet;
mod rrdb;
mod unet;

pub use gct::{Gct, GctConfig, GctFlops};
pub use ispnet::{IspNet, IspNetConfig};
pub use rrdb::RrdbConfig;
pub use unet::{ColorPredictor, UNetConfig};

use crate::error::Result;
use crate::grad::{Bound, Graph, Scalar, Var};

pub(crate) const SLOPE: f64 = 0.2;

/// `conv(x)` with the `{name}.w` / `{name}.b` parameters, optionally
/// followed by a leaky ReLU.
pub(crate) fn conv<T: Scalar>(g: &mut Graph<T>, p: &Bound, name: &str, x: Var, act: bool) -> Result<Var> {
    let y = g.conv2d(x, p.get(&format!("{name}.w"))?, Some(p.get(&format!("{name}.b"))?))?;
    if act {
        g.leaky_relu(y, SLOPE)
    } else {
        Ok(y)
    }
}

/// Row-token linear layer `x W (+ b)`.
pub(crate) fn linear<T: Scalar>(g: &mut Graph<T>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let y = g.matmul(x, p.get(&format!("{name}.w"))?)?;
    let bias = format!("{name}.b");
    if p.has(&bias) {
        g.add_row(y, p.get(&bias)?)
    } else {
        Ok(y)
    }
}

pub(crate) fn layer_norm<T: Scalar>(g: &mut Graph<T>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    g.layer_norm(x, p.get(&format!("{name}.g"))?, p.get(&format!("{name}.b"))?)
}
