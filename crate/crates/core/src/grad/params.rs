use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ISPW";
const VERSION: u32 = 1;
const LEAKY_SLOPE: f64 = 0.2;

/// Named collection of tensors, ordered by name.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            map: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.map.contains_key(&name) {
            return Err(Error::param(format!("duplicate parameter `{name}`")));
        }
        self.map.insert(name, t);
        Ok(())
    }

    /// Insert or overwrite.
    pub fn set(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.map.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.map
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.map.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.map.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar entries.
    pub fn count(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            map: self.map.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Entries whose name starts with `prefix`, with the prefix stripped.
    pub fn with_prefix(&self, prefix: &str) -> ParamSet<T> {
        ParamSet {
            map: self
                .map
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    /// Copy every entry of `other` in under `prefix`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParamSet<T>) {
        for (k, v) in other.iter() {
            self.map.insert(format!("{prefix}{k}"), v.clone());
        }
    }

    pub fn is_finite(&self) -> bool {
        self.map.values().all(Tensor::is_finite)
    }

    /// Weights `[cout, cin, k, k]` at `{name}.w` and zero bias at `{name}.b`.
    pub fn init_conv(&mut self, rng: &mut impl Rng, name: &str, cin: usize, cout: usize, k: usize) -> Result<()> {
        let w = kaiming(rng, &[cout, cin, k, k], cin * k * k);
        self.insert(format!("{name}.w"), w)?;
        self.insert(format!("{name}.b"), Tensor::zeros(&[cout]))
    }

    /// Transposed 2x2 weights `[cin, cout, 2, 2]` and zero bias.
    pub fn init_conv_t(&mut self, rng: &mut impl Rng, name: &str, cin: usize, cout: usize) -> Result<()> {
        let w = kaiming(rng, &[cin, cout, 2, 2], cin);
        self.insert(format!("{name}.w"), w)?;
        self.insert(format!("{name}.b"), Tensor::zeros(&[cout]))
    }

    /// Linear map stored as `[din, dout]` so that `y = x W + b` for row-vector tokens.
    pub fn init_linear(&mut self, rng: &mut impl Rng, name: &str, din: usize, dout: usize, bias: bool) -> Result<()> {
        self.insert(format!("{name}.w"), kaiming(rng, &[din, dout], din))?;
        if bias {
            self.insert(format!("{name}.b"), Tensor::zeros(&[dout]))?;
        }
        Ok(())
    }

    /// Unit gain at `{name}.g`, zero shift at `{name}.b`.
    pub fn init_layer_norm(&mut self, name: &str, d: usize) -> Result<()> {
        self.insert(format!("{name}.g"), Tensor::full(&[d], T::ONE))?;
        self.insert(format!("{name}.b"), Tensor::zeros(&[d]))
    }

    /// Uniform values in `[-bound, bound]`.
    pub fn init_uniform(&mut self, rng: &mut impl Rng, name: &str, shape: &[usize], bound: f64) -> Result<()> {
        let t = Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-bound..=bound)));
        self.insert(name, t)
    }
}

/// Kaiming-uniform initialization for a leaky-ReLU network.
fn kaiming<T: Scalar>(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
    let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-bound..=bound)))
}

impl ParamSet<f32> {
    /// Binary checkpoint: `"ISPW"`, `u32` version, `u32` entry count, then per
    /// entry a `u16` name length, UTF-8 name, `u8` rank, `u32` dims and `f32`
    /// data, all little-endian.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.map.len() as u32).to_le_bytes());
        for (name, t) in &self.map {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format(0, "bad checkpoint magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32()?;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let at = r.pos;
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format(at + 2, "parameter name is not UTF-8"))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let data_at = r.pos;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::format(data_at, "tensor too large"))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            set.insert(name, Tensor::new(shape, data)?)
                .map_err(|e| Error::format(at, e.to_string()))?;
        }
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos, "trailing bytes after checkpoint"));
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.pos, "unexpected end of checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
