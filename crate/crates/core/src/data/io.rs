//! Binary dataset files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "NCDS" | version u32 | K u32 | D u32 | n u64
//! meta_len u32 | meta JSON (meta_len bytes)
//! features: n*D f64, row-major
//! labels:   n u16
//! ```
//!
//! A `<file>.json` sidecar mirrors the meta block for humans and scripts;
//! loading reads only the binary file.

use std::path::{Path, PathBuf};

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::Matrix;

use super::{Dataset, DatasetMeta};

pub const DATASET_MAGIC: [u8; 4] = *b"NCDS";
pub const DATASET_VERSION: u32 = 1;

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_dataset(d: &Dataset, path: &Path) -> Result<()> {
    let meta = d.meta();
    let k = u32::try_from(meta.num_classes)
        .ok()
        .filter(|&k| k <= u32::from(u16::MAX) + 1)
        .ok_or_else(|| Error::invalid("too many classes for u16 labels"))?;
    let dim = u32::try_from(meta.dim).map_err(|_| Error::invalid("dimension exceeds u32"))?;
    let meta_json = serde_json::to_vec(meta)?;

    let mut w = Writer::default();
    w.bytes(&DATASET_MAGIC);
    w.u32(DATASET_VERSION);
    w.u32(k);
    w.u32(dim);
    w.u64(d.len() as u64);
    w.u32(u32::try_from(meta_json.len()).map_err(|_| Error::invalid("meta too large"))?);
    w.bytes(&meta_json);
    w.f64s(d.features().data());
    for &y in d.labels() {
        w.u16(y as u16);
    }
    write_file(path, &w.finish())?;
    write_file(&sidecar_path(path), serde_json::to_string_pretty(meta)?.as_bytes())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(path, &bytes);
    r.header(DATASET_MAGIC, DATASET_VERSION)?;
    let k = r.u32("class count")? as usize;
    let dim = r.u32("dimension")? as usize;
    let n = r.len("sample count")?;
    let meta_len = r.u32("meta length")? as usize;
    let meta: DatasetMeta =
        serde_json::from_slice(r.take(meta_len, "meta")?).map_err(|e| r.truncated(format!("meta block: {e}")))?;
    if meta.num_classes != k || meta.dim != dim {
        return Err(
            r.truncated(format!("header says K={k}, D={dim} but meta says K={}, D={}", meta.num_classes, meta.dim))
        );
    }
    let len = n.checked_mul(dim).ok_or_else(|| r.truncated("feature size overflow"))?;
    let features = r.f64s(len, "features")?;
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(usize::from(r.u16("labels")?));
    }
    r.finish()?;
    let recorded = meta.class_counts.clone();
    let d = Dataset::new(Matrix::new(n, dim, features)?, labels, meta)
        .map_err(|e| Error::Truncated { path: path.to_path_buf(), detail: e.to_string() })?;
    if d.meta().class_counts != recorded {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            detail: "class counts in meta do not match labels".into(),
        });
    }
    Ok(d)
}
