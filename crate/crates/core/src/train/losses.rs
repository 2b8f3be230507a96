use std::sync::Arc;

use crate::colormap::{fit_masked, ColorMapConfig, ColorMapModel, ColorMapOp};
use crate::error::{Error, Result};
use crate::grad::{Graph, L1Norm, Scalar, Tensor, Var};
use crate::image::{gaussian_kernel, ImageKind, MaskImage, RgbImage};

/// Size and sigma of the blur inside the constraint loss.
pub const CONSTRAINT_BLUR: (usize, f64) = (9, 2.0);

fn mask_tensor<T: Scalar>(m: &MaskImage) -> Tensor<T> {
    Tensor::new(vec![m.height(), m.width()], m.data().iter().map(|&v| T::from_f32(v)).collect())
        .expect("mask dims")
}

fn warn_if_empty(m: &MaskImage, what: &str) {
    if m.count() == 0 {
        log::warn!("{what}: mask is empty; sample contributes no gradient");
    }
}

/// Masked L1 between the prediction and the aligned target, with
/// `mask_up` at prediction resolution.
pub fn loss_isp<T: Scalar>(g: &mut Graph<T>, yhat: Var, target: Var, mask_up: &MaskImage, norm: L1Norm) -> Result<Var> {
    warn_if_empty(mask_up, "loss_isp");
    g.masked_l1(yhat, target, &mask_tensor(mask_up), norm)
}

/// Terms of the pre-processing loss plus the color map fitted on this pass.
pub struct PreprocessLoss {
    pub map: Var,
    pub constraint: Var,
    /// `c^ = apply(fit(x~, c), x~)` as a graph node.
    pub chat: Var,
    pub model: Arc<ColorMapModel>,
}

/// `L_map` and `L_constraint`. The color map is fitted on the masked pixels of
/// the current value of `xtilde` and enters the graph as a constant; gradients
/// reach `xtilde` only through the map's application.
pub fn loss_preprocess<T: Scalar>(
    g: &mut Graph<T>,
    xtilde: Var,
    xprime: Var,
    color: &RgbImage,
    mask: &MaskImage,
    cm: &ColorMapConfig,
    norm: L1Norm,
) -> Result<PreprocessLoss> {
    warn_if_empty(mask, "loss_preprocess");
    let xt = RgbImage::from_planar(g.value(xtilde).to_planar()?)?;
    if !xt.same_dims(color) || xt.height() != mask.height() || xt.width() != mask.width() {
        return Err(Error::dim(format!(
            "loss_preprocess: x~ {:?}, color {:?}, mask {:?}",
            xt.dims(),
            color.dims(),
            mask.dims()
        )));
    }
    let model = Arc::new(fit_masked(&xt, color, mask, cm)?);
    loss_preprocess_with(g, xtilde, xprime, color, mask, model, norm)
}

/// [`loss_preprocess`] with an already fitted color map.
pub fn loss_preprocess_with<T: Scalar>(
    g: &mut Graph<T>,
    xtilde: Var,
    xprime: Var,
    color: &RgbImage,
    mask: &MaskImage,
    model: Arc<ColorMapModel>,
    norm: L1Norm,
) -> Result<PreprocessLoss> {
    let chat = g.custom(Box::new(ColorMapOp::new(model.clone())?), &[xtilde])?;
    let c = g.constant(Tensor::from_planar(color));
    let map = g.masked_l1(chat, c, &mask_tensor(mask), norm)?;
    let (size, sigma) = CONSTRAINT_BLUR;
    let taps = gaussian_kernel(size, sigma)?;
    let bx = g.blur(xprime, &taps)?;
    let bt = g.blur(xtilde, &taps)?;
    let constraint = g.l1(bx, bt)?;
    Ok(PreprocessLoss {
        map,
        constraint,
        chat,
        model,
    })
}

/// `L_clr_pred` (masked) and, when a reconstruction is given, `L_reconstruct`
/// (plain mean L1 against the input RAW).
pub fn loss_color_predictor<T: Scalar>(
    g: &mut Graph<T>,
    color: Var,
    target: Var,
    mask: &MaskImage,
    recon: Option<Var>,
    raw: Var,
    norm: L1Norm,
) -> Result<(Var, Option<Var>)> {
    warn_if_empty(mask, "loss_color_predictor");
    let clr = g.masked_l1(color, target, &mask_tensor(mask), norm)?;
    let rec = recon.map(|r| g.l1(r, raw)).transpose()?;
    Ok((clr, rec))
}
