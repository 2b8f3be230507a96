use serde::{Deserialize, Serialize};

use super::eval::{evaluate, ground_truth, EvalColor};
use super::run::{color_model, isp_model, train_color_predictor, train_isp, RunOptions};
use super::{AlignMode, TrainConfig};
use crate::colormap::{apply, fit, l1_residual, ColorMapConfig, Variant};
use crate::datapipe::{synth_sample, Sample, SynthConfig};
use crate::error::{Error, Result};
use crate::image::downsample_bilinear_2x;
use crate::metrics::EvalOptions;
use crate::rawproc::gamma_process;

/// Which family of variants to compare.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grid {
    /// Color-map model families.
    Colormap,
    /// Alignment handling of the prediction loss.
    Loss,
    /// Color predictor components.
    Colorpred,
}

impl Grid {
    pub const ALL: [Grid; 3] = [Grid::Colormap, Grid::Loss, Grid::Colorpred];

    pub fn name(self) -> &'static str {
        match self {
            Grid::Colormap => "colormap",
            Grid::Loss => "loss",
            Grid::Colorpred => "colorpred",
        }
    }
}

impl std::str::FromStr for Grid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Grid::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown ablation grid `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub grid: Grid,
    /// Each seed draws its own synthetic set and training run.
    pub seeds: Vec<u64>,
    pub train_samples: usize,
    pub test_samples: usize,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    /// Steps for the color predictor (defaults to `train.steps`).
    pub color_steps: Option<usize>,
    /// Pixels ignored at each border when scoring.
    pub border: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            grid: Grid::Colormap,
            seeds: vec![0, 1, 2],
            train_samples: 16,
            test_samples: 8,
            synth: SynthConfig::default(),
            train: TrainConfig {
                steps: 300,
                ..TrainConfig::default()
            },
            color_steps: None,
            border: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    /// Mean over seeds of the mean test PSNR.
    pub psnr: f64,
    pub ssim: f64,
    pub psnr_per_seed: Vec<f64>,
    /// Mean per-pair L1 residual of the color-map fit (colormap grid only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub grid: Grid,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_markdown(&self) -> String {
        let with_res = self.rows.iter().any(|r| r.residual.is_some());
        let mut s = String::new();
        if with_res {
            s += "| variant | PSNR | SSIM | fit residual |\n|---|---|---|---|\n";
        } else {
            s += "| variant | PSNR | SSIM |\n|---|---|---|\n";
        }
        for r in &self.rows {
            s += &format!("| {} | {:.2} | {:.4} |", r.variant, r.psnr, r.ssim);
            if with_res {
                s += &match r.residual {
                    Some(v) => format!(" {v:.6} |"),
                    None => " |".into(),
                };
            }
            s.push('\n');
        }
        s
    }
}

/// Train and test captures for one seed, drawn from the same generator.
pub fn synth_split(cfg: &SynthConfig, seed: u64, train: usize, test: usize) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let all: Vec<Sample> = (0..train + test)
        .map(|i| Ok(synth_sample(cfg, seed, i as u64)?.into_sample(format!("{i:05}"))))
        .collect::<Result<_>>()?;
    let mut train_set = all;
    let test_set = train_set.split_off(train);
    Ok((train_set, test_set))
}

/// Mean L1 residual of fitting `variant` from the processed RAW to the
/// downsampled ground truth.
pub fn fit_residual(samples: &[Sample], cm: &ColorMapConfig) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let x = gamma_process(&s.raw)?.into_rgb();
        let c = downsample_bilinear_2x(&ground_truth(s)?)?;
        total += l1_residual(&apply(&x, &fit(&x, &c, cm)?)?, &c);
    }
    Ok(total / samples.len().max(1) as f64)
}

struct Arm {
    name: String,
    train: TrainConfig,
    /// Color predictor config, when the arm is scored with predicted color.
    predictor: Option<TrainConfig>,
}

fn arms(cfg: &AblationConfig) -> Vec<Arm> {
    let base = &cfg.train;
    let color_cfg = |f: &dyn Fn(&mut TrainConfig)| {
        let mut c = base.clone();
        c.steps = cfg.color_steps.unwrap_or(base.steps);
        f(&mut c);
        c
    };
    match cfg.grid {
        Grid::Colormap => Variant::ALL
            .into_iter()
            .map(|v| Arm {
                name: v.name().into(),
                train: TrainConfig {
                    colormap: ColorMapConfig {
                        variant: v,
                        ..base.colormap.clone()
                    },
                    ..base.clone()
                },
                predictor: None,
            })
            .collect(),
        Grid::Loss => AlignMode::ALL
            .into_iter()
            .map(|m| Arm {
                name: m.name().into(),
                train: TrainConfig {
                    align: m,
                    ..base.clone()
                },
                predictor: None,
            })
            .collect(),
        Grid::Colorpred => vec![
            Arm {
                name: "no_color_pred".into(),
                train: TrainConfig {
                    color_hint: false,
                    ..base.clone()
                },
                predictor: None,
            },
            Arm {
                name: "no_gct".into(),
                train: base.clone(),
                predictor: Some(color_cfg(&|c| c.unet.use_gct = false)),
            },
            Arm {
                name: "no_reconstruct".into(),
                train: base.clone(),
                predictor: Some(color_cfg(&|c| c.unet.use_reconstruct = false)),
            },
            Arm {
                name: "full".into(),
                train: base.clone(),
                predictor: Some(color_cfg(&|_| {})),
            },
        ],
    }
}

/// Run every variant of the grid for every seed and score on held-out data.
pub fn run_ablation(cfg: &AblationConfig) -> Result<AblationReport> {
    if cfg.seeds.is_empty() || cfg.train_samples == 0 || cfg.test_samples == 0 {
        return Err(Error::Parameter("ablation needs seeds, training and test samples".into()));
    }
    let arms = arms(cfg);
    let opts = EvalOptions { border: cfg.border };
    let mut rows: Vec<AblationRow> = arms
        .iter()
        .map(|a| AblationRow {
            variant: a.name.clone(),
            psnr: 0.0,
            ssim: 0.0,
            psnr_per_seed: Vec::new(),
            residual: None,
        })
        .collect();
    let n = cfg.seeds.len() as f64;
    for &seed in &cfg.seeds {
        let (train, test) = synth_split(&cfg.synth, seed, cfg.train_samples, cfg.test_samples)?;
        // F with the color hint is shared by all predictor arms of one seed.
        let mut shared_f = None;
        for (arm, row) in arms.iter().zip(&mut rows) {
            let tcfg = TrainConfig {
                seed,
                ..arm.train.clone()
            };
            let f_params = match (&arm.predictor, &shared_f) {
                (Some(_), Some(p)) => Clone::clone(p),
                _ => {
                    let p = train_isp(&train, &tcfg, RunOptions::default())?.params;
                    if arm.predictor.is_some() {
                        shared_f = Some(p.clone());
                    }
                    p
                }
            };
            let model = isp_model(&tcfg, &f_params)?;
            let report = match &arm.predictor {
                Some(gcfg) => {
                    let gcfg = TrainConfig {
                        seed,
                        ..gcfg.clone()
                    };
                    let g = train_color_predictor(&train, &gcfg, RunOptions::default())?.params;
                    evaluate(&test, &model, EvalColor::Predictor(&color_model(&gcfg, &g)?), opts)?
                }
                None => evaluate(&test, &model, EvalColor::Oracle, opts)?,
            };
            log::info!(
                "ablation {} seed {seed} variant {}: psnr {:.3}",
                cfg.grid.name(),
                arm.name,
                report.mean_psnr
            );
            row.psnr_per_seed.push(report.mean_psnr);
            row.psnr += report.mean_psnr / n;
            row.ssim += report.mean_ssim / n;
            if cfg.grid == Grid::Colormap {
                let r = fit_residual(&test, &tcfg.colormap)?;
                *row.residual.get_or_insert(0.0) += r / n;
            }
        }
    }
    Ok(AblationReport { grid: cfg.grid, rows })
}
