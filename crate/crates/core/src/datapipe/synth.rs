use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, Record, Sample, Split};
use super::pair_ncc;
use crate::error::{Error, Result};
use crate::flow::{warp, write_flo, FlowField};
use crate::image::{write_ppm, write_raw4, ImageKind, MaskImage, Planar, RawImage, RgbImage};
use crate::rng;

/// Synthetic capture generator settings. Sizes are RAW pixels; targets are
/// twice as large.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub blobs: usize,
    /// Max per-channel slope of the base gradient across the image.
    pub gradient: f64,
    /// Max per-channel blob amplitude.
    pub blob_amplitude: f64,
    /// Blob standard deviation range as a fraction of the image side.
    pub blob_sigma: [f64; 2],
    /// Hard-edged half-plane steps.
    pub edges: usize,
    /// Additive read noise standard deviation.
    pub noise_sigma: f64,
    /// Signal-dependent noise: variance `shot_noise * value`.
    pub shot_noise: f64,
    /// Skip the color transform and gains entirely.
    pub identity_color: bool,
    /// Off-diagonal/diagonal jitter of the dataset-wide color matrix.
    pub color_jitter: f64,
    /// Extra per-sample jitter on top of the dataset matrix.
    pub sample_color_jitter: f64,
    /// Target gamma exponent drawn from `[1 - g, 1 + g]`.
    pub gamma_jitter: f64,
    /// Max translation in target pixels.
    pub max_shift: f64,
    /// Max rotation in radians.
    pub max_rotation: f64,
    /// Rectangles pasted into the target where the stored flow is wrong.
    pub occluders: usize,
    /// Occluder side as a fraction of the image side.
    pub occluder_size: f64,
    /// Error added to the forward flow inside occluders, in target pixels.
    pub occluder_offset: f64,
    /// Captures assigned to the validation and test splits (taken from the end).
    pub val: usize,
    pub test: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 40,
            width: 40,
            blobs: 6,
            gradient: 0.3,
            blob_amplitude: 0.4,
            blob_sigma: [0.1, 0.3],
            edges: 2,
            noise_sigma: 0.01,
            shot_noise: 0.002,
            identity_color: false,
            color_jitter: 0.15,
            sample_color_jitter: 0.05,
            gamma_jitter: 0.2,
            max_shift: 3.0,
            max_rotation: 0.02,
            occluders: 0,
            occluder_size: 0.3,
            occluder_offset: 6.0,
            val: 0,
            test: 0,
        }
    }
}

impl SynthConfig {
    /// Noise-free, aligned, identity color: `gamma_process(raw)` reproduces
    /// the downsampled target.
    pub fn identity() -> Self {
        SynthConfig {
            edges: 0,
            blobs: 3,
            gradient: 0.1,
            blob_amplitude: 0.25,
            blob_sigma: [0.4, 0.6],
            noise_sigma: 0.0,
            shot_noise: 0.0,
            identity_color: true,
            max_shift: 0.0,
            max_rotation: 0.0,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::param("synthetic size must be positive"));
        }
        let nonneg = [
            self.noise_sigma,
            self.shot_noise,
            self.gradient,
            self.blob_amplitude,
            self.color_jitter,
            self.sample_color_jitter,
            self.gamma_jitter,
            self.max_shift,
            self.max_rotation,
            self.occluder_size,
            self.occluder_offset,
        ];
        if nonneg.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::param("synthetic noise, jitter and misalignment settings must be finite and >= 0"));
        }
        if !(self.blob_sigma[0] > 0.0 && self.blob_sigma[0] <= self.blob_sigma[1]) {
            return Err(Error::param("blob_sigma must be an increasing positive range"));
        }
        if self.gamma_jitter >= 1.0 {
            return Err(Error::param("gamma_jitter must be < 1"));
        }
        Ok(())
    }
}

/// One generated capture.
#[derive(Clone, Debug)]
pub struct SynthSample {
    pub raw: RawImage,
    /// Misaligned target.
    pub target: RgbImage,
    /// Occluder-free ground truth in the RAW-aligned frame.
    pub aligned: RgbImage,
    /// Flow into the target as an estimator would report it (wrong inside occluders).
    pub flow_fwd: FlowField,
    pub flow_bwd: FlowField,
    /// Occluder support in the aligned frame.
    pub occlusion: MaskImage,
}

impl SynthSample {
    pub fn into_sample(self, id: impl Into<String>) -> Sample {
        Sample {
            id: id.into(),
            raw: self.raw,
            target: self.target,
            flow_fwd: Some(self.flow_fwd),
            flow_bwd: Some(self.flow_bwd),
            aligned: Some(self.aligned),
        }
    }
}

/// Mosaic site of each RAW plane inside its 2x2 block, with the scene channel it samples.
const SITES: [(usize, usize, usize); 4] = [(0, 0, 0), (0, 1, 1), (1, 0, 1), (1, 1, 2)];

/// Smooth random scene (gradients, Gaussian blobs, a few hard edges) at
/// `2h x 2w`, scaled per channel so its maximum over that channel's mosaic
/// sites is exactly 1.
pub fn render_scene(h: usize, w: usize, cfg: &SynthConfig, r: &mut impl Rng) -> RgbImage {
    let (hh, ww) = (2 * h, 2 * w);
    let side = hh.max(ww) as f64;
    let mut p = Planar::zeros(3, hh, ww);
    for c in 0..3 {
        let (a, gx, gy): (f64, f64, f64) = (r.gen_range(0.3..0.6), sym(r, cfg.gradient), sym(r, cfg.gradient));
        for y in 0..hh {
            for x in 0..ww {
                let v = a + gx * (x as f64 / ww as f64 - 0.5) + gy * (y as f64 / hh as f64 - 0.5);
                p.set(c, y, x, v as f32);
            }
        }
    }
    for _ in 0..cfg.blobs {
        let (cx, cy) = (r.gen_range(0.0..ww as f64), r.gen_range(0.0..hh as f64));
        let s = r.gen_range(cfg.blob_sigma[0]..=cfg.blob_sigma[1]) * side;
        let amp: [f64; 3] = [sym(r, cfg.blob_amplitude), sym(r, cfg.blob_amplitude), sym(r, cfg.blob_amplitude)];
        for y in 0..hh {
            for x in 0..ww {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let g = (-d2 / (2.0 * s * s)).exp();
                for (c, a) in amp.iter().enumerate() {
                    let v = p.at(c, y, x) as f64 + a * g;
                    p.set(c, y, x, v as f32);
                }
            }
        }
    }
    for _ in 0..cfg.edges {
        let t: f64 = r.gen_range(0.0..std::f64::consts::TAU);
        let (nx, ny) = (t.cos(), t.sin());
        let off = r.gen_range(-0.3..0.3) * side;
        let step: [f64; 3] = [r.gen_range(-0.25..0.25), r.gen_range(-0.25..0.25), r.gen_range(-0.25..0.25)];
        for y in 0..hh {
            for x in 0..ww {
                let d = (x as f64 - ww as f64 / 2.0) * nx + (y as f64 - hh as f64 / 2.0) * ny;
                if d > off {
                    for (c, s) in step.iter().enumerate() {
                        let v = p.at(c, y, x) as f64 + s;
                        p.set(c, y, x, v as f32);
                    }
                }
            }
        }
    }
    let mut p = p.clamped(0.02, 1.5);
    for c in 0..3 {
        let peak = SITES
            .iter()
            .filter(|s| s.2 == c)
            .flat_map(|&(dy, dx, _)| {
                let p = &p;
                (0..h).flat_map(move |y| (0..w).map(move |x| p.at(c, 2 * y + dy, 2 * x + dx)))
            })
            .fold(0.0f32, f32::max);
        p.plane_mut(c).iter_mut().for_each(|v| *v = (*v / peak).min(1.0));
    }
    RgbImage::from_planar(p).expect("three planes")
}

fn rand_matrix(r: &mut impl Rng, j: f64) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = if i == k { 1.0 } else { 0.0 } + if j > 0.0 { r.gen_range(-j..j) } else { 0.0 };
        }
    }
    m
}

fn similarity_flows(h: usize, w: usize, theta: f64, tx: f64, ty: f64) -> Result<(FlowField, FlowField)> {
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (s, c) = theta.sin_cos();
    let fwd = FlowField::from_fn(h, w, |y, x| {
        let (rx, ry) = (x as f64 - cx, y as f64 - cy);
        let (px, py) = (cx + c * rx - s * ry + tx, cy + s * rx + c * ry + ty);
        ((px - x as f64) as f32, (py - y as f64) as f32)
    })?;
    let bwd = FlowField::from_fn(h, w, |y, x| {
        let (rx, ry) = (x as f64 - cx - tx, y as f64 - cy - ty);
        let (px, py) = (cx + c * rx + s * ry, cy - s * rx + c * ry);
        ((px - x as f64) as f32, (py - y as f64) as f32)
    })?;
    Ok((fwd, bwd))
}

/// Generate capture `index` of the dataset seeded by `seed`.
pub fn synth_sample(cfg: &SynthConfig, seed: u64, index: u64) -> Result<SynthSample> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let (hh, ww) = (2 * h, 2 * w);
    let mut r = rng::stream(seed, "synth-sample", index);
    let scene = render_scene(h, w, cfg, &mut r);

    // DSLR rendition of the scene.
    let (m, gamma, gains) = if cfg.identity_color {
        ([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], 1.0, [1.0f64; 3])
    } else {
        let base = rand_matrix(&mut rng::stream(seed, "synth-color", 0), cfg.color_jitter);
        let jit = rand_matrix(&mut r, cfg.sample_color_jitter);
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for k in 0..3 {
                m[i][k] = (0..3).map(|l| jit[i][l] * base[l][k]).sum();
            }
        }
        let g = 1.0 + r.gen_range(-cfg.gamma_jitter..=cfg.gamma_jitter);
        let gains = [r.gen_range(0.5..1.0), r.gen_range(0.7..1.0), r.gen_range(0.5..1.0)];
        (m, g, gains)
    };
    let aligned = RgbImage::from_fn(hh, ww, |c, y, x| {
        let px = scene.pixel(y, x);
        let v: f64 = (0..3).map(|k| m[c][k] * px[k] as f64).sum();
        v.clamp(0.0, 1.0).powf(gamma) as f32
    });

    // Phone RAW: linearize, apply gains, mosaic, add noise.
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut raw = Planar::zeros(4, h, w);
    for (plane, &(dy, dx, c)) in SITES.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let lin = (scene.at(c, 2 * y + dy, 2 * x + dx) as f64).powf(2.2) * gains[c];
                let var = cfg.noise_sigma.powi(2) + cfg.shot_noise * lin;
                let n = if var > 0.0 { var.sqrt() * normal.sample(&mut r) } else { 0.0 };
                raw.set(plane, y, x, (lin + n).max(0.0) as f32);
            }
        }
    }
    let raw = RawImage::from_planar(raw)?;

    // Occluders live in the aligned frame.
    let mut occluded = Planar::from(aligned.clone());
    let mut occ = Planar::from(MaskImage::zeros(hh, ww));
    let (theta, tx, ty) = (
        sym(&mut r, cfg.max_rotation),
        sym(&mut r, cfg.max_shift),
        sym(&mut r, cfg.max_shift),
    );
    let mut offsets = Vec::new();
    for _ in 0..cfg.occluders {
        let oh = ((cfg.occluder_size * r.gen_range(0.6..1.0) * hh as f64).round() as usize).clamp(1, hh);
        let ow = ((cfg.occluder_size * r.gen_range(0.6..1.0) * ww as f64).round() as usize).clamp(1, ww);
        let (y0, x0) = (r.gen_range(0..=hh - oh), r.gen_range(0..=ww - ow));
        let color: [f32; 3] = [r.gen(), r.gen(), r.gen()];
        let period = r.gen_range(3..8usize);
        let phi: f64 = r.gen_range(0.0..std::f64::consts::TAU);
        let d = (phi.cos() * cfg.occluder_offset, phi.sin() * cfg.occluder_offset);
        for y in y0..y0 + oh {
            for x in x0..x0 + ow {
                let stripe = if (x + y) / period % 2 == 0 { 1.0 } else { 0.6 };
                for (c, v) in color.iter().enumerate() {
                    occluded.set(c, y, x, v * stripe);
                }
                occ.set(0, y, x, 1.0);
            }
        }
        offsets.push((y0, x0, oh, ow, d));
    }
    let (fwd, bwd) = similarity_flows(hh, ww, theta, tx, ty)?;
    let target = warp(&RgbImage::from_planar(occluded)?, &bwd)?;
    let mut fwd_est = Planar::from(fwd);
    for &(y0, x0, oh, ow, (du, dv)) in &offsets {
        for y in y0..y0 + oh {
            for x in x0..x0 + ow {
                fwd_est.set(0, y, x, fwd_est.at(0, y, x) + du as f32);
                fwd_est.set(1, y, x, fwd_est.at(1, y, x) + dv as f32);
            }
        }
    }
    Ok(SynthSample {
        raw,
        target,
        aligned,
        flow_fwd: FlowField::from_planar(fwd_est)?,
        flow_bwd: bwd,
        occlusion: MaskImage::from_planar(occ)?,
    })
}

fn sym(r: &mut impl Rng, a: f64) -> f64 {
    if a > 0.0 {
        r.gen_range(-a..=a)
    } else {
        0.0
    }
}

/// Write `n` captures plus `manifest.json` under `out`. The last
/// `cfg.test` captures form the test split and the `cfg.val` before them
/// the validation split.
pub fn synth_dataset(n: usize, seed: u64, cfg: &SynthConfig, out: impl AsRef<Path>) -> Result<Manifest> {
    cfg.validate()?;
    if cfg.val + cfg.test > n {
        return Err(Error::param(format!("val {} + test {} exceed {n} captures", cfg.val, cfg.test)));
    }
    let out = out.as_ref();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let s = synth_sample(cfg, seed, i as u64)?;
        let id = format!("{i:05}");
        let dir = out.join(&id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_raw4(dir.join("raw.raw4"), &s.raw)?;
        write_ppm(dir.join("target.ppm"), &s.target)?;
        write_ppm(dir.join("aligned.ppm"), &s.aligned)?;
        write_flo(dir.join("flow_fwd.flo"), &s.flow_fwd)?;
        write_flo(dir.join("flow_bwd.flo"), &s.flow_bwd)?;
        let split = if i >= n - cfg.test {
            Split::Test
        } else if i >= n - cfg.test - cfg.val {
            Split::Val
        } else {
            Split::Train
        };
        let rel = |f: &str| Path::new(&id).join(f);
        records.push(Record {
            id: id.clone(),
            capture: format!("synth-{seed}-{id}"),
            split,
            raw: rel("raw.raw4"),
            target: rel("target.ppm"),
            flow_fwd: Some(rel("flow_fwd.flo")),
            flow_bwd: Some(rel("flow_bwd.flo")),
            aligned: Some(rel("aligned.ppm")),
            ncc: pair_ncc(&s.raw, &s.target)?,
            row: 0,
            col: 0,
        });
    }
    let m = Manifest {
        records,
        rejected: 0,
        base: out.to_path_buf(),
    };
    m.save(out.join("manifest.json"))?;
    Ok(m)
}
