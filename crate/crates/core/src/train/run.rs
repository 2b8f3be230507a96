use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::data::{plan_batch, prepare, realize, CropPlan, Prepared};
use super::losses::{loss_color_predictor, loss_isp, loss_preprocess};
use super::{Adam, LrSchedule, TrainConfig};
use crate::colormap::{apply, fit};
use crate::datapipe::Sample;
use crate::error::{Error, Result};
use crate::grad::{Graph, ParamSet, Tensor, Var};
use crate::image::{ImageKind, RgbImage};
use crate::models::{ColorPredictor, IspNet};
use crate::pipeline::{ColorModel, IspModel};
use crate::rawproc::PreprocessNet;
use crate::rng;

/// Line-oriented progress record.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TrainEvent {
    Step {
        step: usize,
        loss: f64,
        lr: f64,
        #[serde(flatten)]
        parts: LossParts,
    },
    Checkpoint {
        step: usize,
        path: PathBuf,
    },
}

/// Batch-mean value of each loss term (0 when unused).
#[derive(Copy, Clone, Debug, Default, PartialEq, Serialize)]
pub struct LossParts {
    pub pred: f64,
    pub map: f64,
    pub constraint: f64,
    pub clr_pred: f64,
    pub reconstruct: f64,
}

impl LossParts {
    fn add(&mut self, o: &LossParts) {
        self.pred += o.pred;
        self.map += o.map;
        self.constraint += o.constraint;
        self.clr_pred += o.clr_pred;
        self.reconstruct += o.reconstruct;
    }

    fn scale(&mut self, s: f64) {
        for v in [&mut self.pred, &mut self.map, &mut self.constraint, &mut self.clr_pred, &mut self.reconstruct] {
            *v *= s;
        }
    }
}

/// Checkpointing, resuming and progress reporting for a run.
#[derive(Default)]
pub struct RunOptions<'a> {
    /// Written every `checkpoint_every` steps and at the end.
    pub checkpoint: Option<PathBuf>,
    /// A checkpoint to continue from.
    pub resume: Option<ParamSet<f32>>,
    /// Stop once this many steps are complete (the schedule still spans
    /// `cfg.steps`).
    pub stop_at: Option<usize>,
    pub on_event: Option<&'a mut (dyn FnMut(&TrainEvent) + Send)>,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    /// Model weights only, without optimizer state.
    pub params: ParamSet<f32>,
    /// Batch-mean total loss, one entry per step run.
    pub losses: Vec<f64>,
    /// Completed steps, counting resumed ones.
    pub step: usize,
}

/// Weights for `P` under `pre.`, `F` under `isp.`, `G` under `g.`.
pub fn init_params(cfg: &TrainConfig, pre: bool, isp: bool, g: bool) -> Result<ParamSet<f32>> {
    let mut p = ParamSet::new();
    if pre {
        let net = PreprocessNet::new(cfg.preprocess.clone())?;
        let mut q = net.init::<f32>(&mut rng::stream(cfg.seed, "init-pre", 0))?;
        // Start from the identity so x~ = x' before training.
        let last = cfg.preprocess.layers - 1;
        for suffix in ["w", "b"] {
            let t = q.get_mut(&format!("conv{last}.{suffix}")).expect("last layer");
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        p.extend_prefixed("pre.", &q);
    }
    if isp {
        let net = IspNet::new(cfg.isp.clone())?;
        p.extend_prefixed("isp.", &net.init::<f32>(&mut rng::stream(cfg.seed, "init-isp", 0))?);
    }
    if g {
        let net = ColorPredictor::new(cfg.unet.clone())?;
        p.extend_prefixed("g.", &net.init::<f32>(&mut rng::stream(cfg.seed, "init-g", 0))?);
    }
    Ok(p)
}

fn weighted_sum(g: &mut Graph<f32>, terms: &[(f64, Var)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &(w, v) in terms {
        if w == 0.0 {
            continue;
        }
        let s = g.scale(v, w)?;
        acc = Some(match acc {
            Some(a) => g.add(a, s)?,
            None => s,
        });
    }
    acc.ok_or_else(|| Error::Parameter("every loss weight is zero".into()))
}

fn item(g: &Graph<f32>, v: Var) -> f64 {
    g.value(v).item() as f64
}

fn save_checkpoint(path: &Path, params: &ParamSet<f32>, adam: &Adam, step: usize) -> Result<()> {
    let mut out = params.clone();
    adam.export(&mut out);
    out.set("meta.step", Tensor::scalar(step as f32));
    out.save(path)
}

/// Model weights of a checkpoint (optimizer state and metadata dropped).
pub fn checkpoint_weights(ckpt: &ParamSet<f32>) -> ParamSet<f32> {
    let mut p = ParamSet::new();
    for (k, v) in ckpt.iter() {
        if !k.starts_with("adam.") && !k.starts_with("meta.") {
            p.set(k.clone(), v.clone());
        }
    }
    p
}

type ItemFn<'a> = dyn Fn(&ParamSet<f32>, &Prepared, &CropPlan) -> Result<(LossParts, f64, ParamSet<f32>)> + Sync + 'a;

fn optimize(
    cfg: &TrainConfig,
    data: &[Prepared],
    mut params: ParamSet<f32>,
    jitter: bool,
    opts: RunOptions<'_>,
    item_fn: &ItemFn<'_>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    let (mut adam, start) = match &opts.resume {
        Some(ck) => {
            for (k, v) in checkpoint_weights(ck).iter() {
                if params.get(k)?.shape() != v.shape() {
                    return Err(Error::Dimension(format!("checkpoint `{k}` has shape {:?}", v.shape())));
                }
                params.set(k.clone(), v.clone());
            }
            (Adam::import(cfg.adam.clone(), ck, &params)?, ck.get("meta.step")?.item() as usize)
        }
        None => (Adam::new(cfg.adam.clone(), &params), 0),
    };
    let mut on_event = opts.on_event;
    let dims: Vec<(usize, usize)> = data.iter().map(|p| (p.raw.height(), p.raw.width())).collect();
    let sched = LrSchedule { total: cfg.steps };
    let end = opts.stop_at.unwrap_or(cfg.steps).min(cfg.steps);
    let mut losses = Vec::new();
    for step in start..end {
        let plans = plan_batch(
            &dims,
            cfg.crop,
            cfg.batch,
            cfg.seed,
            step,
            cfg.augment,
            (jitter && cfg.jitter).then_some(cfg.jitter_range),
        )?;
        let results: Vec<_> = plans
            .par_iter()
            .map(|pl| item_fn(&params, &data[pl.sample], pl))
            .collect();
        let mut grads: Option<ParamSet<f32>> = None;
        let (mut total, mut parts) = (0.0, LossParts::default());
        for r in results {
            let (p, l, gr) = r.map_err(|e| match e {
                Error::NonFinite(_) => Error::Diverged { step: step + 1 },
                e => e,
            })?;
            parts.add(&p);
            total += l;
            match &mut grads {
                None => grads = Some(gr),
                Some(acc) => {
                    for (k, t) in acc.iter_mut() {
                        t.add_assign(gr.get(k)?);
                    }
                }
            }
        }
        let inv = 1.0 / cfg.batch as f64;
        total *= inv;
        parts.scale(inv);
        if !total.is_finite() {
            return Err(Error::Diverged { step: step + 1 });
        }
        let mut grads = grads.expect("batch >= 1");
        for (_, t) in grads.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= inv as f32);
        }
        let mult = sched.multiplier(step);
        adam.update(&mut params, &grads, mult)?;
        if !params.is_finite() {
            return Err(Error::Diverged { step: step + 1 });
        }
        losses.push(total);
        let done = step + 1;
        if let Some(f) = on_event.as_deref_mut() {
            if cfg.log_every > 0 && (done % cfg.log_every == 0 || done == end) {
                f(&TrainEvent::Step {
                    step: done,
                    loss: total,
                    lr: cfg.adam.lr * mult,
                    parts,
                });
            }
        }
        if let Some(path) = &opts.checkpoint {
            if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) || done == end {
                save_checkpoint(path, &params, &adam, done)?;
                if let Some(f) = on_event.as_deref_mut() {
                    f(&TrainEvent::Checkpoint {
                        step: done,
                        path: path.clone(),
                    });
                }
            }
        }
    }
    Ok(TrainOutput {
        params,
        losses,
        step: end.max(start),
    })
}

fn prepare_all(samples: &[Sample], cfg: &TrainConfig) -> Result<Vec<Prepared>> {
    samples.iter().map(|s| prepare(s, cfg.align, &cfg.fb)).collect()
}

fn tensor<I: ImageKind>(img: &I) -> Tensor<f32> {
    Tensor::from_planar(img)
}

fn zeros_like_color(img: &RgbImage) -> Tensor<f32> {
    Tensor::zeros(&[3, img.height(), img.width()])
}

/// Train `P` and `F` (parameters `pre.*`, `isp.*`).
pub fn train_isp(samples: &[Sample], cfg: &TrainConfig, opts: RunOptions<'_>) -> Result<TrainOutput> {
    let data = prepare_all(samples, cfg)?;
    let pre = PreprocessNet::new(cfg.preprocess.clone())?;
    let isp = IspNet::new(cfg.isp.clone())?;
    let params = init_params(cfg, true, true, false)?;
    let w = &cfg.weights;
    let item = |params: &ParamSet<f32>, p: &Prepared, plan: &CropPlan| {
        let crop = realize(p, plan, cfg.crop)?;
        let mut g = Graph::<f32>::new();
        let b = g.bind(params);
        let xp = g.constant(tensor(&crop.xprime));
        let co = g.constant(tensor(&crop.coords));
        let xt = pre.forward(&mut g, &b.scope("pre."), xp, co)?;
        let pl = loss_preprocess(&mut g, xt, xp, &crop.color, &crop.mask, &cfg.colormap, cfg.masked_norm)?;
        let hint = if cfg.color_hint {
            g.detach(pl.chat)
        } else {
            g.constant(zeros_like_color(&crop.color))
        };
        let raw = g.constant(tensor(&crop.raw));
        let yhat = isp.forward(&mut g, &b.scope("isp."), raw, hint)?;
        let y = g.constant(tensor(&crop.target));
        let lp = loss_isp(&mut g, yhat, y, &crop.mask_up, cfg.masked_norm)?;
        let total = weighted_sum(&mut g, &[(w.pred, lp), (w.map, pl.map), (w.constraint, pl.constraint)])?;
        let parts = LossParts {
            pred: item(&g, lp),
            map: item(&g, pl.map),
            constraint: item(&g, pl.constraint),
            ..Default::default()
        };
        let grads = g.backward(total)?.params();
        Ok((parts, item(&g, total), grads))
    };
    optimize(cfg, &data, params, true, opts, &item)
}

/// Train `G` (parameters `g.*`).
pub fn train_color_predictor(samples: &[Sample], cfg: &TrainConfig, opts: RunOptions<'_>) -> Result<TrainOutput> {
    let data = prepare_all(samples, cfg)?;
    let net = ColorPredictor::new(cfg.unet.clone())?;
    let params = init_params(cfg, false, false, true)?;
    let w = &cfg.weights;
    let item = |params: &ParamSet<f32>, p: &Prepared, plan: &CropPlan| {
        let crop = realize(p, plan, cfg.crop)?;
        let mut g = Graph::<f32>::new();
        let b = g.bind(params);
        let raw = g.constant(tensor(&crop.raw));
        let co = g.constant(tensor(&crop.coords));
        let (col, rec) = net.forward(&mut g, &b.scope("g."), raw, co)?;
        let c = g.constant(tensor(&crop.color));
        let (clr, rec) = loss_color_predictor(&mut g, col, c, &crop.mask, rec, raw, cfg.masked_norm)?;
        let mut terms = vec![(w.clr_pred, clr)];
        terms.extend(rec.map(|r| (w.reconstruct, r)));
        let total = weighted_sum(&mut g, &terms)?;
        let parts = LossParts {
            clr_pred: item(&g, clr),
            reconstruct: rec.map_or(0.0, |r| item(&g, r)),
            ..Default::default()
        };
        let grads = g.backward(total)?.params();
        Ok((parts, item(&g, total), grads))
    };
    optimize(cfg, &data, params, false, opts, &item)
}

/// Fine-tune `P`, `F` and `G` together, with `F` conditioned on the color
/// map fitted to `G`'s prediction. `start` holds `pre.*`, `isp.*` and `g.*`.
pub fn train_joint(samples: &[Sample], cfg: &TrainConfig, start: ParamSet<f32>, opts: RunOptions<'_>) -> Result<TrainOutput> {
    let data = prepare_all(samples, cfg)?;
    let pre = PreprocessNet::new(cfg.preprocess.clone())?;
    let isp = IspNet::new(cfg.isp.clone())?;
    let net = ColorPredictor::new(cfg.unet.clone())?;
    let expect = init_params(cfg, true, true, true)?;
    for (k, t) in expect.iter() {
        if start.get(k)?.shape() != t.shape() {
            return Err(Error::Dimension(format!("joint start `{k}` has shape {:?}", start.get(k)?.shape())));
        }
    }
    let w = &cfg.weights;
    let item = |params: &ParamSet<f32>, p: &Prepared, plan: &CropPlan| {
        let crop = realize(p, plan, cfg.crop)?;
        let mut g = Graph::<f32>::new();
        let b = g.bind(params);
        let xp = g.constant(tensor(&crop.xprime));
        let co = g.constant(tensor(&crop.coords));
        let raw = g.constant(tensor(&crop.raw));
        let xt = pre.forward(&mut g, &b.scope("pre."), xp, co)?;
        let pl = loss_preprocess(&mut g, xt, xp, &crop.color, &crop.mask, &cfg.colormap, cfg.masked_norm)?;
        let (col, rec) = net.forward(&mut g, &b.scope("g."), raw, co)?;
        let hint = if cfg.color_hint {
            let xt_img = RgbImage::from_planar(g.value(xt).to_planar()?)?;
            let pred = RgbImage::from_planar(g.value(col).to_planar()?)?;
            g.constant(tensor(&apply(&xt_img, &fit(&xt_img, &pred, &cfg.colormap)?)?))
        } else {
            g.constant(zeros_like_color(&crop.color))
        };
        let yhat = isp.forward(&mut g, &b.scope("isp."), raw, hint)?;
        let y = g.constant(tensor(&crop.target));
        let lp = loss_isp(&mut g, yhat, y, &crop.mask_up, cfg.masked_norm)?;
        let c = g.constant(tensor(&crop.color));
        let (clr, rec) = loss_color_predictor(&mut g, col, c, &crop.mask, rec, raw, cfg.masked_norm)?;
        let mut terms = vec![(w.pred, lp), (w.map, pl.map), (w.constraint, pl.constraint), (w.clr_pred, clr)];
        terms.extend(rec.map(|r| (w.reconstruct, r)));
        let total = weighted_sum(&mut g, &terms)?;
        let parts = LossParts {
            pred: item(&g, lp),
            map: item(&g, pl.map),
            constraint: item(&g, pl.constraint),
            clr_pred: item(&g, clr),
            reconstruct: rec.map_or(0.0, |r| item(&g, r)),
        };
        let grads = g.backward(total)?.params();
        Ok((parts, item(&g, total), grads))
    };
    optimize(cfg, &data, start, true, opts, &item)
}

/// `P` and `F` from a parameter set holding `pre.*` and `isp.*`.
pub fn isp_model(cfg: &TrainConfig, params: &ParamSet<f32>) -> Result<IspModel> {
    Ok(IspModel {
        pre: PreprocessNet::new(cfg.preprocess.clone())?,
        pre_params: params.with_prefix("pre."),
        isp: IspNet::new(cfg.isp.clone())?,
        isp_params: params.with_prefix("isp."),
        colormap: cfg.colormap.clone(),
        color_hint: cfg.color_hint,
    })
}

/// `G` from a parameter set holding `g.*`.
pub fn color_model(cfg: &TrainConfig, params: &ParamSet<f32>) -> Result<ColorModel> {
    Ok(ColorModel {
        net: ColorPredictor::new(cfg.unet.clone())?,
        params: params.with_prefix("g."),
    })
}

