use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{read_flo, FlowField};
use crate::image::{read_ppm, read_raw4, RawImage, RgbImage};

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One crop pair. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: String,
    /// Source capture; splits never share a capture.
    pub capture: String,
    pub split: Split,
    /// RAW4 file, `H x W`.
    pub raw: PathBuf,
    /// PPM target, `2H x 2W`, misaligned with the RAW.
    pub target: PathBuf,
    /// `.flo` flow from the RAW-aligned frame into the target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_fwd: Option<PathBuf>,
    /// `.flo` flow from the target back into the RAW-aligned frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_bwd: Option<PathBuf>,
    /// PPM ground truth already in the RAW-aligned frame (synthetic data only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aligned: Option<PathBuf>,
    pub ncc: f64,
    #[serde(default)]
    pub row: usize,
    #[serde(default)]
    pub col: usize,
}

/// Crop-pair list as stored in `manifest.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub records: Vec<Record>,
    /// Pairs dropped by [`filter_pairs`].
    #[serde(default)]
    pub rejected: usize,
    /// Directory the record paths are relative to. Not serialized.
    #[serde(skip)]
    pub base: PathBuf,
}

/// A record with its files loaded.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub raw: RawImage,
    pub target: RgbImage,
    pub flow_fwd: Option<FlowField>,
    pub flow_bwd: Option<FlowField>,
    pub aligned: Option<RgbImage>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text)?;
        m.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }

    /// Files exist and no capture appears in two splits.
    pub fn validate(&self) -> Result<()> {
        let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
        for r in &self.records {
            if let Some(prev) = seen.insert(&r.capture, r.split) {
                if prev != r.split {
                    return Err(Error::Contract(format!(
                        "capture {} appears in both {prev:?} and {:?}",
                        r.capture, r.split
                    )));
                }
            }
            let files = [Some(&r.raw), Some(&r.target), r.flow_fwd.as_ref(), r.flow_bwd.as_ref(), r.aligned.as_ref()];
            for f in files.into_iter().flatten() {
                let full = self.resolve(f);
                if !full.is_file() {
                    return Err(Error::io(full, std::io::Error::from(std::io::ErrorKind::NotFound)));
                }
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn load_sample(&self, r: &Record) -> Result<Sample> {
        let opt_flo = |p: &Option<PathBuf>| p.as_ref().map(|p| read_flo(self.resolve(p))).transpose();
        Ok(Sample {
            id: r.id.clone(),
            raw: read_raw4(self.resolve(&r.raw))?,
            target: read_ppm(self.resolve(&r.target))?,
            flow_fwd: opt_flo(&r.flow_fwd)?,
            flow_bwd: opt_flo(&r.flow_bwd)?,
            aligned: r.aligned.as_ref().map(|p| read_ppm(self.resolve(p))).transpose()?,
        })
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Sample>> {
        self.split(split).map(|r| self.load_sample(r)).collect()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FilterStats {
    pub kept: usize,
    pub rejected: usize,
}

/// Keep records whose NCC is at least `threshold`.
pub fn filter_pairs(manifest: &Manifest, threshold: f64) -> (Manifest, FilterStats) {
    let (kept, dropped): (Vec<_>, Vec<_>) = manifest.records.iter().cloned().partition(|r| r.ncc >= threshold);
    let stats = FilterStats {
        kept: kept.len(),
        rejected: dropped.len(),
    };
    let out = Manifest {
        records: kept,
        rejected: manifest.rejected + dropped.len(),
        base: manifest.base.clone(),
    };
    (out, stats)
}
