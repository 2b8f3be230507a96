use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{ColorMapModel, MapParams, Variant};
use crate::error::{Error, Result};
use crate::image::RgbImage;

/// Largest bin count written with inline decimal arrays.
const INLINE_MAX_BINS: usize = 16;

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Payload {
    Inline(Vec<f64>),
    Base64(String),
}

impl Payload {
    fn encode(v: &[f64], inline: bool) -> Self {
        if inline {
            Payload::Inline(v.to_vec())
        } else {
            let bytes: Vec<u8> = v.iter().flat_map(|&x| (x as f32).to_le_bytes()).collect();
            Payload::Base64(STANDARD.encode(bytes))
        }
    }

    fn decode(self, what: &str) -> Result<Vec<f64>> {
        match self {
            Payload::Inline(v) => Ok(v),
            Payload::Base64(s) => {
                let bytes = STANDARD
                    .decode(s)
                    .map_err(|e| Error::param(format!("{what}: bad base64: {e}")))?;
                if bytes.len() % 4 != 0 {
                    return Err(Error::param(format!("{what}: payload is not a whole number of f32 values")));
                }
                Ok(bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                    .collect())
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelJson {
    variant: Variant,
    bins: usize,
    temperature: f64,
    blur_size: usize,
    blur_sigma: f64,
    dims: Option<[usize; 2]>,
    fitted: bool,
    centroids: Payload,
    params: Payload,
}

impl ColorMapModel {
    fn flat_params(&self) -> Vec<f64> {
        match &self.params {
            MapParams::Unfitted => vec![],
            MapParams::AffineDep(v) => v.iter().flatten().flatten().copied().collect(),
            MapParams::AffineIndep(v) => v.iter().flatten().flatten().copied().collect(),
            MapParams::ConstVal(v) => v.iter().flatten().copied().collect(),
            MapParams::Linear3x3(m) => m.iter().flatten().copied().collect(),
            MapParams::ColorBlur(img) => img.data().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let inline = self.bins() <= INLINE_MAX_BINS;
        let centroids: Vec<f64> = self.centroids.iter().flatten().copied().collect();
        let params_inline = inline && !matches!(self.params, MapParams::ColorBlur(_));
        let j = ModelJson {
            variant: self.variant,
            bins: self.bins(),
            temperature: self.temperature,
            blur_size: self.blur_size,
            blur_sigma: self.blur_sigma,
            dims: self.fit_dims.map(|(h, w)| [h, w]),
            fitted: self.is_fitted(),
            centroids: Payload::encode(&centroids, inline),
            params: Payload::encode(&self.flat_params(), params_inline),
        };
        serde_json::to_string_pretty(&j).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: ModelJson = serde_json::from_str(s)?;
        let nb = j.bins;
        if nb == 0 {
            return Err(Error::param("bin count must be at least 1"));
        }
        if !(j.temperature > 0.0) {
            return Err(Error::param("temperature must be positive"));
        }
        let c = j.centroids.decode("centroids")?;
        if c.len() != 3 * nb {
            return Err(Error::param(format!("expected {} centroids, got {}", 3 * nb, c.len())));
        }
        let centroids = std::array::from_fn(|k| c[k * nb..(k + 1) * nb].to_vec());
        let p = j.params.decode("params")?;
        let need = |n: usize| -> Result<()> {
            if p.len() != n {
                return Err(Error::param(format!(
                    "{} model needs {n} parameters, got {}",
                    j.variant,
                    p.len()
                )));
            }
            Ok(())
        };
        let params = if !j.fitted {
            need(0)?;
            MapParams::Unfitted
        } else {
            match j.variant {
                Variant::AffineDep => {
                    need(12 * nb)?;
                    MapParams::AffineDep(std::array::from_fn(|k| {
                        (0..nb).map(|b| std::array::from_fn(|e| p[(k * nb + b) * 4 + e])).collect()
                    }))
                }
                Variant::AffineIndep => {
                    need(6 * nb)?;
                    MapParams::AffineIndep(std::array::from_fn(|k| {
                        (0..nb).map(|b| std::array::from_fn(|e| p[(k * nb + b) * 2 + e])).collect()
                    }))
                }
                Variant::ConstVal => {
                    need(3 * nb)?;
                    MapParams::ConstVal(std::array::from_fn(|k| p[k * nb..(k + 1) * nb].to_vec()))
                }
                Variant::Linear3x3 => {
                    need(9)?;
                    MapParams::Linear3x3(std::array::from_fn(|r| std::array::from_fn(|k| p[3 * r + k])))
                }
                Variant::ColorBlur => {
                    let [h, w] = j
                        .dims
                        .ok_or_else(|| Error::param("color blur model needs dims"))?;
                    need(3 * h * w)?;
                    MapParams::ColorBlur(RgbImage::new(h, w, p.iter().map(|&v| v as f32).collect())?)
                }
            }
        };
        if p.iter().chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite color map parameter".into()));
        }
        Ok(ColorMapModel {
            variant: j.variant,
            temperature: j.temperature,
            centroids,
            blur_size: j.blur_size,
            blur_sigma: j.blur_sigma,
            fit_dims: j.dims.map(|[h, w]| (h, w)),
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}
