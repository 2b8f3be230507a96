use std::collections::BTreeMap;

use super::kernels::{self, ConvDims};
use super::tensor::numel;
use super::{ParamSet, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// How a masked L1 loss is normalized.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L1Norm {
    /// Divide by the number of masked elements (masked pixels x channels).
    #[default]
    Mean,
    /// Sum over channels, divide by the number of masked pixels.
    PerPixel,
    /// Plain masked sum.
    Sum,
}

/// A differentiable operation defined outside the engine.
pub trait CustomOp<T: Scalar>: Send + Sync {
    fn name(&self) -> &str;

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;

    /// Gradient for each input given the output gradient. `None` means the
    /// input is treated as constant.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Vec<Option<Tensor<T>>>;
}

enum Op<T: Scalar> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var> },
    ConvT2 { x: Var, w: Var, b: Option<Var> },
    LeakyRelu { x: Var, slope: T },
    AvgPool2 { x: Var },
    Upsample2 { x: Var },
    MatMul { a: Var, b: Var },
    AddRow { x: Var, b: Var },
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, norm: Vec<T>, inv_std: Vec<T> },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, s: T },
    Concat { xs: Vec<Var>, axis: usize },
    Reshape { x: Var },
    Transpose { x: Var },
    Sum { x: Var },
    Blur { x: Var, taps: Vec<T> },
    MaskedL1 { pred: Var, target: Var, mask: Vec<T>, scale: T },
    Custom { xs: Vec<Var>, op: Box<dyn CustomOp<T>> },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Reverse-mode tape. Every operation appends a node holding its forward
/// value; [`Graph::backward`] walks the nodes in reverse.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, Var)>,
}

/// Named parameter handles produced by [`Graph::bind`].
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    /// Handles under `prefix`, with the prefix stripped from their names.
    pub fn scope(&self, prefix: &str) -> Bound {
        Bound {
            vars: self
                .vars
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), *v)))
                .collect(),
        }
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(String, Var)>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of every bound parameter, zeros where the loss does not depend on it.
    pub fn params(&self) -> ParamSet<T> {
        let mut out = ParamSet::new();
        for (name, v) in &self.params {
            let g = self.grads[v.0]
                .clone()
                .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]));
            out.insert(name.clone(), g).expect("parameter names are unique");
        }
        out
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::dim(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool, name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant input; no gradient is tracked.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false, "constant")
            .expect("constant inputs must be finite")
    }

    /// A constant that may contain non-finite values is rejected here.
    pub fn try_constant(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, Op::Leaf, false, "constant")
    }

    /// An unnamed leaf whose gradient is tracked.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true, "variable")
            .expect("variables must be finite")
    }

    /// A named trainable leaf.
    pub fn param(&mut self, name: &str, t: Tensor<T>) -> Var {
        let v = self.variable(t);
        self.params.push((name.to_string(), v));
        v
    }

    /// Record every entry of `params` as a named leaf.
    pub fn bind(&mut self, params: &ParamSet<T>) -> Bound {
        let mut vars = BTreeMap::new();
        for (name, t) in params.iter() {
            vars.insert(name.clone(), self.param(name, t.clone()));
        }
        Bound { vars }
    }

    /// A constant copy of `v`'s current value.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        let d = match (xs, ws) {
            ([cin, h, wd], [cout, wcin, k, k2]) if cin == wcin && k == k2 && (*k == 1 || *k == 3) => {
                ConvDims {
                    cin: *cin,
                    cout: *cout,
                    h: *h,
                    w: *wd,
                    k: *k,
                }
            }
            _ => return Err(shape_err("conv2d", xs, ws)),
        };
        if let Some(b) = b {
            if self.shape(b) != [d.cout] {
                return Err(shape_err("conv2d bias", self.shape(b), &[d.cout]));
            }
        }
        let out = kernels::conv2d(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &d,
        );
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        let t = Tensor::new(vec![d.cout, d.h, d.w], out)?;
        self.push(t, Op::Conv2d { x, w, b }, ng, "conv2d")
    }

    pub fn conv_transpose2x2(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        let d = match (xs, ws) {
            ([cin, h, wd], [wcin, cout, 2, 2]) if cin == wcin => ConvDims {
                cin: *cin,
                cout: *cout,
                h: *h,
                w: *wd,
                k: 2,
            },
            _ => return Err(shape_err("conv_transpose2x2", xs, ws)),
        };
        if let Some(b) = b {
            if self.shape(b) != [d.cout] {
                return Err(shape_err("conv_transpose2x2 bias", self.shape(b), &[d.cout]));
            }
        }
        let out = kernels::conv_transpose2x2(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &d,
        );
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        let t = Tensor::new(vec![d.cout, 2 * d.h, 2 * d.w], out)?;
        self.push(t, Op::ConvT2 { x, w, b }, ng, "conv_transpose2x2")
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let s = T::from_f64(slope);
        let t = self.value(x).map(|v| if v > T::ZERO { v } else { v * s });
        let ng = self.ng(x);
        self.push(t, Op::LeakyRelu { x, slope: s }, ng, "leaky_relu")
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = match self.shape(x) {
            [c, h, w] if h % 2 == 0 && w % 2 == 0 => (*c, *h, *w),
            s => return Err(Error::dim(format!("avg_pool2 needs even [C, H, W], got {s:?}"))),
        };
        let xv = self.value(x).data();
        let (oh, ow) = (h / 2, w / 2);
        let quarter = T::from_f64(0.25);
        let t = Tensor::from_fn(&[c, oh, ow], |i| {
            let (ch, y, xx) = (i / (oh * ow), (i / ow) % oh, i % ow);
            let base = (ch * h + 2 * y) * w + 2 * xx;
            (xv[base] + xv[base + 1] + xv[base + w] + xv[base + w + 1]) * quarter
        });
        let ng = self.ng(x);
        self.push(t, Op::AvgPool2 { x }, ng, "avg_pool2")
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = match self.shape(x) {
            [c, h, w] => (*c, *h, *w),
            s => return Err(Error::dim(format!("upsample2 needs [C, H, W], got {s:?}"))),
        };
        let xv = self.value(x).data();
        let (oh, ow) = (2 * h, 2 * w);
        let t = Tensor::from_fn(&[c, oh, ow], |i| {
            let (ch, y, xx) = (i / (oh * ow), (i / ow) % oh, i % ow);
            xv[(ch * h + y / 2) * w + xx / 2]
        });
        let ng = self.ng(x);
        self.push(t, Op::Upsample2 { x }, ng, "upsample2")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n) = match (self.shape(a), self.shape(b)) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            (sa, sb) => return Err(shape_err("matmul", sa, sb)),
        };
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b }, ng, "matmul")
    }

    /// `x + b` with `b` broadcast along every leading axis of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap_or(&0);
        if self.shape(b) != [n] {
            return Err(shape_err("add_row", self.shape(x), self.shape(b)));
        }
        let bv = self.value(b).data().to_vec();
        let mut t = self.value(x).clone();
        for row in t.data_mut().chunks_mut(n) {
            for (v, &bb) in row.iter_mut().zip(&bv) {
                *v += bb;
            }
        }
        let ng = self.ng(x) || self.ng(b);
        self.push(t, Op::AddRow { x, b }, ng, "add_row")
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!("softmax axis {axis} of {shape:?}")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let xv = self.value(x).data();
        let mut out = vec![T::ZERO; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * len + a) * inner + i;
                let mut m = xv[idx(0)];
                for a in 1..len {
                    m = m.max(xv[idx(a)]);
                }
                let mut s = T::ZERO;
                for a in 0..len {
                    let e = (xv[idx(a)] - m).exp();
                    out[idx(a)] = e;
                    s += e;
                }
                for a in 0..len {
                    out[idx(a)] = out[idx(a)] / s;
                }
            }
        }
        let ng = self.ng(x);
        self.push(Tensor::new(shape, out)?, Op::Softmax { x, axis }, ng, "softmax")
    }

    /// Normalize over the last axis, then scale by `gain` and shift by `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::dim("layer_norm of a scalar"))?;
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(shape_err("layer_norm", &shape, self.shape(gain)));
        }
        let eps = T::from_f64(1e-5);
        let dn = T::from_f64(d as f64);
        let (gv, bv) = (self.value(gain).data(), self.value(bias).data());
        let xv = self.value(x).data();
        let rows = xv.len() / d;
        let mut norm = vec![T::ZERO; xv.len()];
        let mut inv_std = vec![T::ZERO; rows];
        let mut out = vec![T::ZERO; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let is = T::ONE / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let nv = (row[j] - mean) * is;
                norm[r * d + j] = nv;
                out[r * d + j] = nv * gv[j] + bv[j];
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            norm,
            inv_std,
        };
        self.push(Tensor::new(shape, out)?, op, ng, "layer_norm")
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(name, self.shape(a), self.shape(b)));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        Tensor::new(
            self.shape(a).to_vec(),
            av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect(),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        self.push(t, Op::Add { a, b }, ng, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        self.push(t, Op::Sub { a, b }, ng, "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        self.push(t, Op::Mul { a, b }, ng, "mul")
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let s = T::from_f64(s);
        let t = self.value(x).map(|v| v * s);
        let ng = self.ng(x);
        self.push(t, Op::Scale { x, s }, ng, "scale")
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*xs.first().ok_or_else(|| Error::dim("concat of nothing"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::dim(format!("concat axis {axis} of {first:?}")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", &first, s));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let ng = xs.iter().any(|&v| self.ng(v));
        let op = Op::Concat {
            xs: xs.to_vec(),
            axis,
        };
        self.push(Tensor::new(shape, out)?, op, ng, "concat")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshaped(shape)?;
        let ng = self.ng(x);
        self.push(t, Op::Reshape { x }, ng, "reshape")
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = match self.shape(x) {
            [m, n] => (*m, *n),
            s => return Err(Error::dim(format!("transpose needs rank 2, got {s:?}"))),
        };
        let out = kernels::transpose(self.value(x).data(), m, n);
        let ng = self.ng(x);
        self.push(Tensor::new(vec![n, m], out)?, Op::Transpose { x }, ng, "transpose")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, ng, "sum")
    }

    /// Separable blur of a `[C, H, W]` tensor with the given 1-D taps.
    pub fn blur(&mut self, x: Var, taps: &[f64]) -> Result<Var> {
        let (c, h, w) = match self.shape(x) {
            [c, h, w] => (*c, *h, *w),
            s => return Err(Error::dim(format!("blur needs [C, H, W], got {s:?}"))),
        };
        let taps: Vec<T> = taps.iter().map(|&t| T::from_f64(t)).collect();
        let out = kernels::blur(self.value(x).data(), c, h, w, &taps);
        let ng = self.ng(x);
        self.push(Tensor::new(vec![c, h, w], out)?, Op::Blur { x, taps }, ng, "blur")
    }

    /// `sum(mask * |pred - target|)`, normalized per `norm`. `pred` and
    /// `target` are `[C, H, W]`; `mask` is `[H, W]` and broadcast over
    /// channels. An all-zero mask yields 0 with zero gradients.
    pub fn masked_l1(&mut self, pred: Var, target: Var, mask: &Tensor<T>, norm: L1Norm) -> Result<Var> {
        let (c, h, w) = match self.shape(pred) {
            [c, h, w] => (*c, *h, *w),
            s => return Err(Error::dim(format!("masked_l1 needs [C, H, W], got {s:?}"))),
        };
        if self.shape(target) != self.shape(pred) {
            return Err(shape_err("masked_l1", self.shape(pred), self.shape(target)));
        }
        if mask.len() != h * w {
            return Err(shape_err("masked_l1 mask", &[h, w], mask.shape()));
        }
        let m = mask.data().to_vec();
        let msum: T = m.iter().copied().sum();
        let scale = match norm {
            _ if msum == T::ZERO => T::ZERO,
            L1Norm::Mean => T::ONE / (msum * T::from_f64(c as f64)),
            L1Norm::PerPixel => T::ONE / msum,
            L1Norm::Sum => T::ONE,
        };
        let (pv, tv) = (self.value(pred).data(), self.value(target).data());
        let mut acc = T::ZERO;
        for ch in 0..c {
            for i in 0..h * w {
                let k = ch * h * w + i;
                acc += m[i] * (pv[k] - tv[k]).abs();
            }
        }
        let ng = self.ng(pred) || self.ng(target);
        let op = Op::MaskedL1 {
            pred,
            target,
            mask: m,
            scale,
        };
        self.push(Tensor::scalar(acc * scale), op, ng, "masked_l1")
    }

    /// Mean absolute difference over all elements.
    pub fn l1(&mut self, pred: Var, target: Var) -> Result<Var> {
        let s = self.shape(pred);
        if s.len() != 3 {
            return Err(Error::dim(format!("l1 needs [C, H, W], got {s:?}")));
        }
        let ones = Tensor::full(&[s[1], s[2]], T::ONE);
        self.masked_l1(pred, target, &ones, L1Norm::Mean)
    }

    pub fn custom(&mut self, op: Box<dyn CustomOp<T>>, xs: &[Var]) -> Result<Var> {
        let out = {
            let inputs: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
            op.forward(&inputs)?
        };
        let ng = xs.iter().any(|&v| self.ng(v));
        let name = op.name().to_string();
        self.push(
            out,
            Op::Custom {
                xs: xs.to_vec(),
                op,
            },
            ng,
            &name,
        )
    }

    /// Gradients of the scalar `loss` with respect to every tracked node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::ONE));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for (v, gi) in self.local_grads(node, &g) {
                if !self.nodes[v.0].needs_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&gi),
                    slot => *slot = Some(gi),
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn local_grads(&self, node: &Node<T>, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let val = |v: Var| &self.nodes[v.0].value;
        let like = |v: Var, data: Vec<T>| Tensor::new(val(v).shape().to_vec(), data).unwrap();
        let gd = g.data();
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b } => {
                let (xs, ws) = (val(*x).shape(), val(*w).shape());
                let d = ConvDims {
                    cin: xs[0],
                    cout: ws[0],
                    h: xs[1],
                    w: xs[2],
                    k: ws[2],
                };
                let (gx, gw, gb) = kernels::conv2d_backward(
                    val(*x).data(),
                    val(*w).data(),
                    gd,
                    &d,
                    self.ng(*x),
                );
                if let Some(gx) = gx {
                    out.push((*x, like(*x, gx)));
                }
                out.push((*w, like(*w, gw)));
                if let Some(b) = b {
                    out.push((*b, like(*b, gb)));
                }
            }
            Op::ConvT2 { x, w, b } => {
                let (xs, ws) = (val(*x).shape(), val(*w).shape());
                let d = ConvDims {
                    cin: xs[0],
                    cout: ws[1],
                    h: xs[1],
                    w: xs[2],
                    k: 2,
                };
                let (gx, gw, gb) =
                    kernels::conv_transpose2x2_backward(val(*x).data(), val(*w).data(), gd, &d);
                out.push((*x, like(*x, gx)));
                out.push((*w, like(*w, gw)));
                if let Some(b) = b {
                    out.push((*b, like(*b, gb)));
                }
            }
            Op::LeakyRelu { x, slope } => {
                let xv = val(*x).data();
                let gx = xv
                    .iter()
                    .zip(gd)
                    .map(|(&v, &gg)| if v > T::ZERO { gg } else { gg * *slope })
                    .collect();
                out.push((*x, like(*x, gx)));
            }
            Op::AvgPool2 { x } => {
                let s = val(*x).shape();
                let (h, w) = (s[1], s[2]);
                let (oh, ow) = (h / 2, w / 2);
                let quarter = T::from_f64(0.25);
                let gx = (0..val(*x).len())
                    .map(|i| {
                        let (ch, y, xx) = (i / (h * w), (i / w) % h, i % w);
                        gd[(ch * oh + y / 2) * ow + xx / 2] * quarter
                    })
                    .collect();
                out.push((*x, like(*x, gx)));
            }
            Op::Upsample2 { x } => {
                let s = val(*x).shape();
                let (h, w) = (s[1], s[2]);
                let ow = 2 * w;
                let gx = (0..val(*x).len())
                    .map(|i| {
                        let (ch, y, xx) = (i / (h * w), (i / w) % h, i % w);
                        let base = (ch * 2 * h + 2 * y) * ow + 2 * xx;
                        gd[base] + gd[base + 1] + gd[base + ow] + gd[base + ow + 1]
                    })
                    .collect();
                out.push((*x, like(*x, gx)));
            }
            Op::MatMul { a, b } => {
                let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
                let n = val(*b).shape()[1];
                if self.ng(*a) {
                    let bt = kernels::transpose(val(*b).data(), k, n);
                    out.push((*a, like(*a, kernels::matmul(gd, &bt, m, n, k))));
                }
                if self.ng(*b) {
                    let at = kernels::transpose(val(*a).data(), m, k);
                    out.push((*b, like(*b, kernels::matmul(&at, gd, k, m, n))));
                }
            }
            Op::AddRow { x, b } => {
                let n = val(*b).len();
                let mut gb = vec![T::ZERO; n];
                for row in gd.chunks(n) {
                    for (acc, &v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                out.push((*x, g.clone()));
                out.push((*b, like(*b, gb)));
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                let mut gx = vec![T::ZERO; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |a: usize| (o * len + a) * inner + i;
                        let dot: T = (0..len).map(|a| gd[idx(a)] * y[idx(a)]).sum();
                        for a in 0..len {
                            gx[idx(a)] = y[idx(a)] * (gd[idx(a)] - dot);
                        }
                    }
                }
                out.push((*x, like(*x, gx)));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                norm,
                inv_std,
            } => {
                let gv = val(*gain).data();
                let d = gv.len();
                let dn = T::from_f64(d as f64);
                let mut ggain = vec![T::ZERO; d];
                let mut gbias = vec![T::ZERO; d];
                let mut gx = vec![T::ZERO; norm.len()];
                for (r, &is) in inv_std.iter().enumerate() {
                    let row = r * d..(r + 1) * d;
                    let (gr, nr) = (&gd[row.clone()], &norm[row.clone()]);
                    let mut s1 = T::ZERO;
                    let mut s2 = T::ZERO;
                    for j in 0..d {
                        ggain[j] += gr[j] * nr[j];
                        gbias[j] += gr[j];
                        let gn = gr[j] * gv[j];
                        s1 += gn;
                        s2 += gn * nr[j];
                    }
                    for j in 0..d {
                        let gn = gr[j] * gv[j];
                        gx[r * d + j] = is * (gn - s1 / dn - nr[j] * s2 / dn);
                    }
                }
                out.push((*x, like(*x, gx)));
                out.push((*gain, like(*gain, ggain)));
                out.push((*bias, like(*bias, gbias)));
            }
            Op::Add { a, b } => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Sub { a, b } => {
                out.push((*a, g.clone()));
                out.push((*b, g.map(|v| -v)));
            }
            Op::Mul { a, b } => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                out.push((*a, like(*a, gd.iter().zip(bv).map(|(&gg, &y)| gg * y).collect())));
                out.push((*b, like(*b, gd.iter().zip(av).map(|(&gg, &x)| gg * x).collect())));
            }
            Op::Scale { x, s } => out.push((*x, g.map(|v| v * *s))),
            Op::Concat { xs, axis } => {
                let (outer, _, inner) = split_axis(node.value.shape(), *axis);
                let mut parts: Vec<Vec<T>> = xs.iter().map(|v| Vec::with_capacity(val(*v).len())).collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (k, v) in xs.iter().enumerate() {
                        let len = val(*v).shape()[*axis] * inner;
                        parts[k].extend_from_slice(&gd[pos..pos + len]);
                        pos += len;
                    }
                }
                for (v, p) in xs.iter().zip(parts) {
                    out.push((*v, like(*v, p)));
                }
            }
            Op::Reshape { x } => out.push((*x, like(*x, gd.to_vec()))),
            Op::Transpose { x } => {
                let s = node.value.shape();
                out.push((*x, like(*x, kernels::transpose(gd, s[0], s[1]))));
            }
            Op::Sum { x } => {
                let gg = gd[0];
                out.push((*x, Tensor::full(val(*x).shape(), gg)));
            }
            Op::Blur { x, taps } => {
                let s = val(*x).shape();
                out.push((*x, like(*x, kernels::blur_backward(gd, s[0], s[1], s[2], taps))));
            }
            Op::MaskedL1 {
                pred,
                target,
                mask,
                scale,
            } => {
                let (pv, tv) = (val(*pred).data(), val(*target).data());
                let hw = mask.len();
                let k = gd[0] * *scale;
                let gp: Vec<T> = pv
                    .iter()
                    .zip(tv)
                    .enumerate()
                    .map(|(i, (&p, &t))| k * mask[i % hw] * (p - t).signum0())
                    .collect();
                out.push((*target, like(*target, gp.iter().map(|&v| -v).collect())));
                out.push((*pred, like(*pred, gp)));
            }
            Op::Custom { xs, op } => {
                let inputs: Vec<&Tensor<T>> = xs.iter().map(|&v| val(v)).collect();
                for (v, gi) in xs.iter().zip(op.backward(&inputs, &node.value, g)) {
                    if let Some(gi) = gi {
                        out.push((*v, gi));
                    }
                }
            }
        }
        out
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
