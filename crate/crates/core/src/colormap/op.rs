use std::sync::Arc;

use super::{ColorMapModel, MapParams};
use crate::error::{Error, Result};
use crate::grad::{CustomOp, Scalar, Tensor};

/// Graph node applying a fitted color map to a `[3, H, W]` input. The fit
/// itself is a constant: gradients flow only through the input image.
#[derive(Clone, Debug)]
pub struct ColorMapOp {
    model: Arc<ColorMapModel>,
}

impl ColorMapOp {
    pub fn new(model: Arc<ColorMapModel>) -> Result<Self> {
        if !model.is_fitted() {
            return Err(Error::State("color map model has not been fitted".into()));
        }
        Ok(ColorMapOp { model })
    }
}

fn pixel<T: Scalar>(d: &[T], n: usize, i: usize) -> [f64; 3] {
    [d[i].to_f64(), d[n + i].to_f64(), d[2 * n + i].to_f64()]
}

impl<T: Scalar> CustomOp<T> for ColorMapOp {
    fn name(&self) -> &str {
        "color_map"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let x = inputs[0];
        let (h, w) = match x.shape() {
            [3, h, w] => (*h, *w),
            s => return Err(Error::dim(format!("color map input must be [3, H, W], got {s:?}"))),
        };
        if let MapParams::ColorBlur(img) = &self.model.params {
            if img.dims() != (3, h, w) {
                return Err(Error::dim(format!(
                    "color blur model stores {:?}, input is {:?}",
                    img.dims(),
                    x.shape()
                )));
            }
            return Ok(Tensor::from_planar(img));
        }
        let n = h * w;
        let d = x.data();
        let mut scratch = vec![0.0; self.model.bins()];
        let mut out = vec![T::ZERO; 3 * n];
        for i in 0..n {
            let y = self.model.eval_pixel(pixel(d, n, i), &mut scratch, None);
            for j in 0..3 {
                out[j * n + i] = T::from_f64(y[j]);
            }
        }
        Tensor::new(x.shape().to_vec(), out)
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        if let MapParams::ColorBlur(_) = self.model.params {
            return vec![None];
        }
        let x = inputs[0];
        let n = x.len() / 3;
        let (d, g) = (x.data(), grad.data());
        let mut scratch = vec![0.0; self.model.bins()];
        let mut jac = [[0.0; 3]; 3];
        let mut gx = vec![T::ZERO; 3 * n];
        for i in 0..n {
            self.model.eval_pixel(pixel(d, n, i), &mut scratch, Some(&mut jac));
            for k in 0..3 {
                let s: f64 = (0..3).map(|j| g[j * n + i].to_f64() * jac[j][k]).sum();
                gx[k * n + i] = T::from_f64(s);
            }
        }
        vec![Some(Tensor::new(x.shape().to_vec(), gx).expect("same shape"))]
    }
}
