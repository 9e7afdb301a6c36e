//! Binary model files and their metadata sidecar.
//!
//! Little-endian layout:
//!
//! ```text
//! "FPLM"                       magic, 4 bytes
//! format_version               u32
//! mean shape                   68 × (x f64, y f64)
//! T                            u32 cascade count
//! per cascade:
//!   P                          u32
//!   P × (anchor u32, dx f64, dy f64)
//!   K                          u32
//!   per tree:
//!     D                        u32
//!     2^D − 1 × (u u32, v u32, threshold f64)   breadth-first
//!     2^D × 136 × f32                          leaf deltas
//! ```

use std::path::Path;

use super::{Cascade, FeaturePoint, RegressionTree, ShapePredictorModel, Split, TrainParams, SHAPE_DIM};
use crate::error::{Error, Result};
use crate::geometry::{Point2, Shape68, NUM_LANDMARKS};

pub const MAGIC: [u8; 4] = *b"FPLM";
pub const FORMAT_VERSION: u32 = 1;
pub(crate) const MAX_TREE_DEPTH: u32 = 16;

pub fn serialize(model: &ShapePredictorModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for p in model.mean_shape.iter() {
        out.extend_from_slice(&p.x.to_le_bytes());
        out.extend_from_slice(&p.y.to_le_bytes());
    }
    put_u32(&mut out, model.cascades.len());
    for c in &model.cascades {
        put_u32(&mut out, c.pool.len());
        for f in &c.pool {
            put_u32(&mut out, f.anchor);
            out.extend_from_slice(&f.offset.x.to_le_bytes());
            out.extend_from_slice(&f.offset.y.to_le_bytes());
        }
        put_u32(&mut out, c.trees.len());
        for t in &c.trees {
            out.extend_from_slice(&t.depth.to_le_bytes());
            for s in &t.splits {
                out.extend_from_slice(&s.u.to_le_bytes());
                out.extend_from_slice(&s.v.to_le_bytes());
                out.extend_from_slice(&s.threshold.to_le_bytes());
            }
            for v in &t.leaves {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("count fits in u32");
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::ModelFormat(format!(
                "truncated stream: need {n} bytes at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    /// A count whose elements occupy at least `min_bytes` each, rejected
    /// early if the stream cannot possibly hold them.
    fn count(&mut self, min_bytes: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_bytes) > self.bytes.len() - self.pos {
            return Err(Error::ModelFormat(format!(
                "truncated stream: count {n} at offset {} exceeds remaining data",
                self.pos - 4
            )));
        }
        Ok(n)
    }
}

/// Parses and structurally validates a model.
pub fn deserialize(bytes: &[u8]) -> Result<ShapePredictorModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| Error::ModelFormat("bad magic".into()))? != MAGIC {
        return Err(Error::ModelFormat("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!("unsupported version {version}")));
    }
    let mut mean = [Point2::ZERO; NUM_LANDMARKS];
    for p in mean.iter_mut() {
        *p = Point2::new(r.f64()?, r.f64()?);
    }
    let mean_shape =
        Shape68::new(mean).map_err(|e| Error::ModelFormat(format!("mean shape: {e}")))?;

    let n_cascades = r.count(8)?;
    let mut cascades = Vec::with_capacity(n_cascades);
    for _ in 0..n_cascades {
        let p = r.count(20)?;
        let mut pool = Vec::with_capacity(p);
        for _ in 0..p {
            let anchor = r.u32()? as usize;
            let offset = Point2::new(r.f64()?, r.f64()?);
            pool.push(FeaturePoint { anchor, offset });
        }
        let k = r.count(4)?;
        let mut trees = Vec::with_capacity(k);
        for _ in 0..k {
            let depth = r.u32()?;
            if depth == 0 || depth > MAX_TREE_DEPTH {
                return Err(Error::ModelFormat(format!("tree depth {depth} out of range")));
            }
            let n_leaves = 1usize << depth;
            let mut splits = Vec::with_capacity(n_leaves - 1);
            for _ in 0..n_leaves - 1 {
                splits.push(Split {
                    u: r.u32()?,
                    v: r.u32()?,
                    threshold: r.f64()?,
                });
            }
            let n_values = n_leaves * SHAPE_DIM;
            if n_values * 4 > bytes.len() - r.pos {
                return Err(Error::ModelFormat("truncated stream in leaf values".into()));
            }
            let mut leaves = Vec::with_capacity(n_values);
            for _ in 0..n_values {
                leaves.push(r.f32()?);
            }
            trees.push(RegressionTree {
                depth,
                splits,
                leaves,
            });
        }
        cascades.push(Cascade { pool, trees });
    }
    if r.pos != bytes.len() {
        return Err(Error::ModelFormat(format!(
            "{} trailing bytes after model",
            bytes.len() - r.pos
        )));
    }
    let model = ShapePredictorModel {
        mean_shape,
        cascades,
        params: None,
        format_version: version,
    };
    model.validate()?;
    Ok(model)
}

impl ShapePredictorModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serialize(self)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        deserialize(&bytes)
    }

    pub fn byte_size(&self) -> usize {
        let mut n = 4 + 4 + NUM_LANDMARKS * 16 + 4;
        for c in &self.cascades {
            n += 4 + c.pool.len() * 20 + 4;
            for t in &c.trees {
                n += 4 + t.splits.len() * 16 + t.leaves.len() * 4;
            }
        }
        n
    }
}

/// `key=value` lines: format version, training parameters (if known) and
/// any extra description entries, in that order.
pub fn write_sidecar(
    path: &Path,
    model: &ShapePredictorModel,
    description: &[(String, String)],
) -> Result<()> {
    let mut text = format!("format_version={}\n", model.format_version);
    text.push_str(&format!("cascades={}\n", model.cascades.len()));
    if let Some(params) = &model.params {
        for (k, v) in params.to_key_values() {
            text.push_str(&format!("{k}={v}\n"));
        }
    }
    for (k, v) in description {
        let v = v.replace(['\n', '\r'], " ");
        text.push_str(&format!("{k}={v}\n"));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Training parameters, if present, plus the remaining description entries.
pub type SidecarContents = (Option<TrainParams>, Vec<(String, String)>);

/// Reads the training parameters back out of a sidecar. Unknown keys are
/// returned as description entries.
pub fn read_sidecar(path: &Path) -> Result<SidecarContents> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut params = TrainParams::default();
    let mut saw_params = false;
    let mut extra = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(n + 1, "expected key=value"))?;
        match k {
            "format_version" | "cascades" => {}
            _ if params.set(k, v).is_ok() => saw_params = true,
            _ => extra.push((k.to_string(), v.to_string())),
        }
    }
    Ok((saw_params.then_some(params), extra))
}
