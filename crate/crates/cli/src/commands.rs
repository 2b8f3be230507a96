use std::ffi::OsString;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde_json::json;
use wildisp::colormap::{apply, fit, ColorMapConfig, ColorMapModel, Variant};
use wildisp::datapipe::{
    crop_capture, filter_pairs, homography_dlt, read_point_pairs, synth_dataset, warp_homography, Manifest, Record,
    Split, SynthConfig,
};
use wildisp::flow::{fb_mask, read_flo, warp, FbConfig, FbSampling};
use wildisp::grad::ParamSet;
use wildisp::image::{downsample_bilinear_2x, read_ppm, read_raw4, write_pgm, write_ppm, write_raw4};
use wildisp::metrics::{eval_aligned, eval_pre_aligned, EvalOptions, EvalReport};
use wildisp::pipeline::{run_pipeline, ColorSource};
use wildisp::rawproc::gamma_process;
use wildisp::train::{
    checkpoint_weights, color_model, evaluate, fit_residual, isp_model, run_ablation, synth_split, train_color_predictor,
    train_isp, train_joint, AblationConfig, EvalColor, RunOptions, TrainConfig, TrainEvent,
};

use crate::args::{AblateArgs, Cli, ColormapCmd, Command, CropsArgs, EvalArgs, SplitArg, SynthArgs, TrainCmd, TrainOpts};
use crate::logging::emit;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn load_config<T: DeserializeOwned + Default>(cli: &Cli) -> Result<T> {
    match &cli.config {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))
        }
    }
}

fn no_config(cli: &Cli, what: &str) -> Result<()> {
    match cli.config {
        Some(_) => Err(invalid(format!("`{what}` takes no --config"))),
        None => Ok(()),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Validation(format!("{}: {e}", dir.display())))
}

fn sidecar(ckpt: &Path) -> PathBuf {
    let mut s = OsString::from(ckpt.as_os_str());
    s.push(".json");
    PathBuf::from(s)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializes") + "\n";
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// The training config stored next to a checkpoint.
fn ckpt_config(ckpt: &Path) -> Result<TrainConfig> {
    let side = sidecar(ckpt);
    let text = std::fs::read_to_string(&side).map_err(|e| invalid(format!("{}: {e}", side.display())))?;
    Ok(TrainConfig::from_json(&text)?)
}

pub fn run(cli: &Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(invalid("--threads must be at least 1"));
    }
    match &cli.command {
        Command::Preprocess { raw, out } => {
            no_config(cli, "preprocess")?;
            let x = gamma_process(&read_raw4(raw)?)?.into_rgb();
            write_ppm(out, &x)?;
            emit(&json!({"event": "done", "command": "preprocess", "height": x.height(), "width": x.width()}));
            Ok(())
        }
        Command::Colormap(c) => colormap(cli, c),
        Command::Flowmask {
            fwd,
            bwd,
            out,
            alpha1,
            alpha2,
            displaced,
        } => {
            let mut cfg: FbConfig = load_config(cli)?;
            if let Some(a) = alpha1 {
                cfg.alpha1 = *a;
            }
            if let Some(a) = alpha2 {
                cfg.alpha2 = *a;
            }
            if *displaced {
                cfg.sampling = FbSampling::Displaced;
            }
            let m = fb_mask(&read_flo(fwd)?, &read_flo(bwd)?, &cfg)?;
            write_pgm(out, &m)?;
            emit(&json!({"event": "done", "command": "flowmask", "kept": m.count(), "total": m.height() * m.width()}));
            Ok(())
        }
        Command::Warp {
            image,
            flow,
            points,
            out,
        } => {
            no_config(cli, "warp")?;
            let img = read_ppm(image)?;
            let warped = match (flow, points) {
                (Some(f), _) => warp(&img, &read_flo(f)?)?,
                (None, Some(p)) => warp_homography(&img, &homography_dlt(&read_point_pairs(p)?)?)?,
                (None, None) => return Err(invalid("warp needs --flow or --points")),
            };
            write_ppm(out, &warped)?;
            emit(&json!({"event": "done", "command": "warp"}));
            Ok(())
        }
        Command::Synth(a) => synth(cli, a),
        Command::Crops(a) => crops(cli, a),
        Command::Train(t) => train(cli, t),
        Command::Infer {
            raw,
            ckpt,
            color_ckpt,
            color,
            out,
        } => infer(cli, raw, ckpt, color_ckpt.as_deref(), color.as_deref(), out),
        Command::Eval(a) => eval(cli, a),
        Command::Ablate(a) => ablate(cli, a),
    }
}

fn parse_variant(s: &str) -> Result<Variant> {
    Ok(s.parse::<Variant>()?)
}

fn colormap(cli: &Cli, c: &ColormapCmd) -> Result<()> {
    match c {
        ColormapCmd::Fit {
            x,
            c,
            variant,
            bins,
            out,
        } => {
            let mut cfg: ColorMapConfig = load_config(cli)?;
            if let Some(v) = variant {
                cfg.variant = parse_variant(v)?;
            }
            if let Some(b) = bins {
                cfg.bins = *b;
            }
            let (xi, ci) = (read_ppm(x)?, read_ppm(c)?);
            let model = fit(&xi, &ci, &cfg)?;
            model.save(out)?;
            let residual = wildisp::colormap::l1_residual(&apply(&xi, &model)?, &ci);
            emit(&json!({"event": "done", "command": "colormap fit", "variant": cfg.variant.name(), "residual": residual}));
            Ok(())
        }
        ColormapCmd::Apply { x, model, out } => {
            no_config(cli, "colormap apply")?;
            let m = ColorMapModel::load(model)?;
            write_ppm(out, &apply(&read_ppm(x)?, &m)?)?;
            emit(&json!({"event": "done", "command": "colormap apply"}));
            Ok(())
        }
        ColormapCmd::Bench { n, size, bins, out } => {
            let mut cm: ColorMapConfig = load_config(cli)?;
            if let Some(b) = bins {
                cm.bins = *b;
            }
            let synth = SynthConfig {
                height: *size,
                width: *size,
                ..SynthConfig::default()
            };
            let (pairs, _) = synth_split(&synth, cli.seed.unwrap_or(0), *n, 0)?;
            let mut rows = Vec::new();
            for v in Variant::ALL {
                let cfg = ColorMapConfig {
                    variant: v,
                    ..cm.clone()
                };
                rows.push(json!({"variant": v.name(), "residual": fit_residual(&pairs, &cfg)?}));
            }
            let report = json!({"pairs": n, "bins": cm.bins, "rows": rows});
            if let Some(o) = out {
                write_json(o, &report)?;
            }
            emit(&report);
            Ok(())
        }
    }
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = if a.identity {
        no_config(cli, "synth --identity")?;
        SynthConfig::identity()
    } else {
        load_config(cli)?
    };
    let set = |dst: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut cfg.height, a.height);
    set(&mut cfg.width, a.width);
    set(&mut cfg.val, a.val);
    set(&mut cfg.test, a.test);
    set(&mut cfg.occluders, a.occluders);
    let m = synth_dataset(a.n, cli.seed.unwrap_or(0), &cfg, &a.out)?;
    emit(&json!({"event": "done", "command": "synth", "records": m.records.len(), "manifest": a.out.join("manifest.json")}));
    Ok(())
}

fn split_of(s: SplitArg) -> Split {
    match s {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
        SplitArg::Test => Split::Test,
    }
}

fn crops(cli: &Cli, a: &CropsArgs) -> Result<()> {
    no_config(cli, "crops")?;
    let raw = read_raw4(&a.raw)?;
    let mut target = read_ppm(&a.target)?;
    if let Some(p) = &a.points {
        let pairs: Vec<_> = read_point_pairs(p)?
            .into_iter()
            .map(|(s, d)| ([2.0 * s[0], 2.0 * s[1]], [2.0 * d[0], 2.0 * d[1]]))
            .collect();
        target = warp_homography(&target, &homography_dlt(&pairs)?)?;
    }
    ensure_dir(&a.out)?;
    let mut records = Vec::new();
    for (i, c) in crop_capture(&raw, &target, a.crop, a.stride)?.into_iter().enumerate() {
        let id = format!("{}-{i:04}", a.capture);
        let (rp, tp) = (PathBuf::from(format!("{id}.raw4")), PathBuf::from(format!("{id}.ppm")));
        write_raw4(a.out.join(&rp), &c.raw)?;
        write_ppm(a.out.join(&tp), &c.target)?;
        records.push(Record {
            id,
            capture: a.capture.clone(),
            split: split_of(a.split),
            raw: rp,
            target: tp,
            flow_fwd: None,
            flow_bwd: None,
            aligned: None,
            ncc: c.ncc,
            row: c.row,
            col: c.col,
        });
    }
    let all = Manifest {
        records,
        rejected: 0,
        base: a.out.clone(),
    };
    let (kept, stats) = filter_pairs(&all, a.threshold);
    kept.save(a.out.join("manifest.json"))?;
    emit(&json!({"event": "done", "command": "crops", "kept": stats.kept, "rejected": stats.rejected}));
    Ok(())
}

fn train_config(cli: &Cli, o: &TrainOpts) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = load_config(cli)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(v) = o.steps {
        cfg.steps = v;
    }
    if let Some(v) = o.batch {
        cfg.batch = v;
    }
    if let Some(v) = o.crop {
        cfg.crop = v;
    }
    if let Some(v) = o.lr {
        cfg.adam.lr = v;
    }
    if let Some(v) = &o.align {
        cfg.align = v.parse()?;
    }
    if let Some(v) = &o.variant {
        cfg.colormap.variant = parse_variant(v)?;
    }
    if o.no_color_hint {
        cfg.color_hint = false;
    }
    if let Some(v) = o.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    if let Some(v) = o.log_every {
        cfg.log_every = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_ckpt(p: &Path) -> Result<ParamSet<f32>> {
    Ok(ParamSet::<f32>::load(p)?)
}

fn train(cli: &Cli, t: &TrainCmd) -> Result<()> {
    let opts = match t {
        TrainCmd::Isp { opts, .. } | TrainCmd::Color { opts, .. } | TrainCmd::Joint { opts, .. } => opts,
    };
    let cfg = train_config(cli, opts)?;
    let manifest = Manifest::load(&opts.manifest)?;
    let samples = manifest.load_split(Split::Train)?;
    if let Some(dir) = opts.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    write_json(&sidecar(&opts.out), &cfg)?;
    let mut sink = |e: &TrainEvent| emit(e);
    let run = |resume: Option<&PathBuf>| -> Result<RunOptions<'_>> {
        Ok(RunOptions {
            checkpoint: Some(opts.out.clone()),
            resume: resume.map(|p| load_ckpt(p)).transpose()?,
            stop_at: None,
            on_event: None,
        })
    };
    let out = match t {
        TrainCmd::Isp { resume, .. } => {
            let mut ro = run(resume.as_ref())?;
            ro.on_event = Some(&mut sink);
            train_isp(&samples, &cfg, ro)?
        }
        TrainCmd::Color { resume, .. } => {
            let mut ro = run(resume.as_ref())?;
            ro.on_event = Some(&mut sink);
            train_color_predictor(&samples, &cfg, ro)?
        }
        TrainCmd::Joint { isp, color, .. } => {
            let mut start = checkpoint_weights(&load_ckpt(isp)?);
            for (k, v) in checkpoint_weights(&load_ckpt(color)?).iter() {
                if k.starts_with("g.") {
                    start.set(k.clone(), v.clone());
                }
            }
            let mut ro = run(None)?;
            ro.on_event = Some(&mut sink);
            train_joint(&samples, &cfg, start, ro)?
        }
    };
    emit(&json!({
        "event": "done",
        "command": "train",
        "steps": out.step,
        "final_loss": out.losses.last(),
        "checkpoint": opts.out,
    }));
    Ok(())
}

fn infer(
    cli: &Cli,
    raw: &Path,
    ckpt: &Path,
    color_ckpt: Option<&Path>,
    color: Option<&Path>,
    out: &Path,
) -> Result<()> {
    no_config(cli, "infer")?;
    let cfg = ckpt_config(ckpt)?;
    let params = checkpoint_weights(&load_ckpt(ckpt)?);
    let model = isp_model(&cfg, &params)?;
    let x = read_raw4(raw)?;
    let result = if let Some(c) = color {
        let mut c = read_ppm(c)?;
        if c.height() == 2 * x.height() && c.width() == 2 * x.width() {
            c = downsample_bilinear_2x(&c)?;
        }
        run_pipeline(&x, &model, ColorSource::Given(&c))?
    } else {
        let (gcfg, gparams) = match color_ckpt {
            Some(p) => (ckpt_config(p)?, checkpoint_weights(&load_ckpt(p)?)),
            None => (cfg.clone(), params.clone()),
        };
        if !gparams.names().any(|n| n.starts_with("g.")) {
            return Err(invalid("no color predictor: pass --color-ckpt, --color, or a joint checkpoint"));
        }
        let g = color_model(&gcfg, &gparams)?;
        run_pipeline(&x, &model, ColorSource::Predictor(&g))?
    };
    result.write(out)?;
    emit(&json!({
        "event": "done",
        "command": "infer",
        "height": result.yhat.height(),
        "width": result.yhat.width(),
        "out": out,
    }));
    Ok(())
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    no_config(cli, "eval")?;
    let opts = EvalOptions { border: a.border };
    let report = match (&a.manifest, &a.pred, &a.gt) {
        (Some(m), _, _) => {
            let ckpt = a.ckpt.as_ref().ok_or_else(|| invalid("eval --manifest needs --ckpt"))?;
            let cfg = ckpt_config(ckpt)?;
            let model = isp_model(&cfg, &checkpoint_weights(&load_ckpt(ckpt)?))?;
            let samples = Manifest::load(m)?.load_split(split_of(a.split))?;
            if samples.is_empty() {
                return Err(invalid(format!("no {:?} records in {}", a.split, m.display())));
            }
            match &a.color_ckpt {
                Some(g) => {
                    let gm = color_model(&ckpt_config(g)?, &checkpoint_weights(&load_ckpt(g)?))?;
                    evaluate(&samples, &model, EvalColor::Predictor(&gm), opts)?
                }
                None => evaluate(&samples, &model, EvalColor::Oracle, opts)?,
            }
        }
        (None, Some(p), Some(g)) => {
            let (pred, gt) = (read_ppm(p)?, read_ppm(g)?);
            let name = p.display().to_string();
            let score = match &a.flow {
                Some(f) => eval_aligned(&name, &pred, &gt, Some(&read_flo(f)?), opts)?,
                None => eval_pre_aligned(&name, &pred, &gt, opts)?,
            };
            let mut r = EvalReport::default();
            r.push(score);
            r
        }
        _ => return Err(invalid("eval needs --manifest with --ckpt, or --pred with --gt")),
    };
    if let Some(o) = &a.out {
        write_text(o, &(report.to_json() + "\n"))?;
    }
    emit(&json!({"event": "done", "command": "eval", "count": report.count, "psnr": report.mean_psnr, "ssim": report.mean_ssim}));
    Ok(())
}

fn ablate(cli: &Cli, a: &AblateArgs) -> Result<()> {
    let mut cfg: AblationConfig = load_config(cli)?;
    if let Some(g) = &a.grid {
        cfg.grid = g.parse()?;
    }
    match (&a.seeds, cli.seed) {
        (Some(s), _) => cfg.seeds = s.clone(),
        (None, Some(s)) => cfg.seeds = vec![s],
        _ => {}
    }
    if let Some(v) = a.steps {
        cfg.train.steps = v;
    }
    if let Some(v) = a.train_samples {
        cfg.train_samples = v;
    }
    if let Some(v) = a.test_samples {
        cfg.test_samples = v;
    }
    cfg.train.validate()?;
    let report = run_ablation(&cfg)?;
    ensure_dir(&a.out)?;
    write_text(&a.out.join("ablation.json"), &(report.to_json() + "\n"))?;
    write_text(&a.out.join("ablation.md"), &report.to_markdown())?;
    emit(&json!({"event": "done", "command": "ablate", "grid": cfg.grid.name(), "rows": report.rows}));
    Ok(())
}
