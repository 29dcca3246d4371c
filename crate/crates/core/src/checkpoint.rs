//! On-disk checkpoints: a directory holding `meta.txt` (ordered `key=value`
//! lines, including one `param=<name> <rows>x<cols>` line per tensor) and
//! `params.bin` (little-endian `f64` values in the declared order).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamSet};

pub const FORMAT_VERSION: u32 = 1;
pub const META_FILE: &str = "meta.txt";
pub const BLOB_FILE: &str = "params.bin";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Model family, e.g. `gcn` or `hubert`.
    pub kind: String,
    /// Model-specific settings in insertion order.
    pub meta: Vec<(String, String)>,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, params: ParamSet) -> Self {
        Self {
            kind: kind.into(),
            meta: Vec::new(),
            params,
        }
    }

    pub fn with(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.meta.push((key.into(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::parse("checkpoint metadata", format!("missing key {key:?}")))?;
        raw.parse().map_err(|_| {
            Error::parse(
                "checkpoint metadata",
                format!("value {raw:?} for {key:?} is malformed"),
            )
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut meta = format!("format_version={FORMAT_VERSION}\nkind={}\n", self.kind);
        for (k, v) in &self.meta {
            meta.push_str(&format!("{k}={v}\n"));
        }
        let mut blob = Vec::with_capacity(self.params.num_scalars() * 8);
        for (name, m) in self.params.iter() {
            meta.push_str(&format!("param={name} {}x{}\n", m.rows(), m.cols()));
            for v in m.as_slice() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let meta_path = dir.join(META_FILE);
        fs::write(&meta_path, meta).map_err(|e| Error::io(meta_path, e))?;
        let blob_path = dir.join(BLOB_FILE);
        fs::write(&blob_path, blob).map_err(|e| Error::io(blob_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let blob_path = dir.join(BLOB_FILE);
        let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;

        let ctx = |i: usize| format!("{} line {}", meta_path.display(), i + 1);
        let mut version = None;
        let mut kind = None;
        let mut meta = Vec::new();
        let mut shapes = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(ctx(i), "expected key=value"))?;
            match k {
                "format_version" => version = Some(v.to_string()),
                "kind" => kind = Some(v.to_string()),
                "param" => {
                    let (name, dims) = v
                        .rsplit_once(' ')
                        .ok_or_else(|| Error::parse(ctx(i), "expected `param=<name> <r>x<c>`"))?;
                    let (r, c) = dims
                        .split_once('x')
                        .and_then(|(r, c)| {
                            Some((r.parse::<usize>().ok()?, c.parse::<usize>().ok()?))
                        })
                        .ok_or_else(|| Error::parse(ctx(i), format!("bad shape {dims:?}")))?;
                    shapes.push((name.to_string(), r, c));
                }
                _ => meta.push((k.to_string(), v.to_string())),
            }
        }
        if version.as_deref() != Some(&FORMAT_VERSION.to_string()) {
            return Err(Error::parse(
                meta_path.display().to_string(),
                format!("unsupported format_version {version:?}"),
            ));
        }
        let kind =
            kind.ok_or_else(|| Error::parse(meta_path.display().to_string(), "missing kind"))?;
        let total: usize = shapes.iter().map(|(_, r, c)| r * c).sum();
        if blob.len() != total * 8 {
            return Err(Error::parse(
                blob_path.display().to_string(),
                format!("expected {} bytes, found {}", total * 8, blob.len()),
            ));
        }
        let mut values = blob
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")));
        let mut params = ParamSet::new();
        for (name, r, c) in shapes {
            let data: Vec<f64> = values.by_ref().take(r * c).collect();
            params.push(name, Matrix::from_vec(r, c, data)?);
        }
        params.ensure_finite()?;
        Ok(Self { kind, meta, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = ParamSet::new();
        p.push(
            "w",
            Matrix::from_rows(&[[0.1, -2.5e-300], [3.0, 1.0 / 3.0]]).unwrap(),
        );
        p.push("b", Matrix::row_vector(&[7.0]));
        let ck = Checkpoint::new("gcn", p)
            .with("seed", 7)
            .with("hidden", 128);
        ck.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.require::<u64>("seed").unwrap(), 7);
        let blob = std::fs::read(dir.path().join(BLOB_FILE)).unwrap();
        assert_eq!(blob.len(), 5 * 8);
        assert_eq!(&blob[..8], &0.1f64.to_le_bytes());
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = ParamSet::new();
        p.push("w", Matrix::zeros(2, 2));
        Checkpoint::new("gcn", p).save(dir.path()).unwrap();
        std::fs::write(dir.path().join(BLOB_FILE), [0u8; 8]).unwrap();
        assert!(Checkpoint::load(dir.path()).is_err());
    }
}
