//! On-disk parameter format: one line of JSON header, then the concatenated
//! little-endian f32 payloads of every tensor in header order.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::params::{tensor, Params};
use super::real::Real;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    kind: String,
    meta: BTreeMap<String, Value>,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    dtype: String,
    /// Byte offset of each payload, relative to the end of the header line.
    offsets: Vec<u64>,
}

/// A decoded checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub kind: String,
    pub meta: BTreeMap<String, Value>,
    pub params: Params<T>,
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format { kind: "checkpoint", msg: msg.into() }
}

pub fn to_bytes<T: Real>(kind: &str, meta: &BTreeMap<String, Value>, params: &Params<T>) -> Result<Vec<u8>> {
    params.check_finite()?;
    let mut names = Vec::new();
    let mut shapes = Vec::new();
    let mut offsets = Vec::new();
    let mut off = 0u64;
    for (name, v) in params.iter() {
        names.push(name.to_string());
        shapes.push(v.shape().to_vec());
        offsets.push(off);
        off += 4 * v.len() as u64;
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        meta: meta.clone(),
        names,
        shapes,
        dtype: "f32".into(),
        offsets,
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.reserve(off as usize);
    for (_, v) in params.iter() {
        for x in v.iter() {
            let f = x.as_f64() as f32;
            if !f.is_finite() {
                return Err(Error::NonFinite("checkpoint payload (f32 overflow)".into()));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes<T: Real>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| fmt_err("missing header terminator"))?;
    let header: Header = serde_json::from_slice(&bytes[..nl]).map_err(|e| fmt_err(format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(fmt_err(format!("unsupported format_version {}", header.format_version)));
    }
    if header.dtype != "f32" {
        return Err(fmt_err(format!("unsupported dtype {}", header.dtype)));
    }
    let n = header.names.len();
    if header.shapes.len() != n || header.offsets.len() != n {
        return Err(fmt_err("names, shapes and offsets differ in length"));
    }
    let payload = &bytes[nl + 1..];
    let mut expected = 0u64;
    let mut values = Vec::with_capacity(n);
    for ((name, shape), &off) in header.names.iter().zip(&header.shapes).zip(&header.offsets) {
        if off != expected {
            return Err(fmt_err(format!("offset of {name} is {off}, expected {expected}")));
        }
        let count: usize = shape.iter().product();
        let end = off as usize + 4 * count;
        let raw = payload.get(off as usize..end).ok_or_else(|| fmt_err(format!("payload of {name} truncated")))?;
        let mut data = Vec::with_capacity(count);
        for c in raw.chunks_exact(4) {
            let f = f32::from_le_bytes(c.try_into().expect("4 bytes"));
            if !f.is_finite() {
                return Err(Error::NonFinite(format!("checkpoint parameter {name}")));
            }
            data.push(T::lit(f as f64));
        }
        values.push(tensor(shape, data)?);
        expected = end as u64;
    }
    if expected as usize != payload.len() {
        return Err(fmt_err(format!("{} trailing bytes", payload.len() - expected as usize)));
    }
    let params = Params::from_parts(header.names, values).map_err(|e| fmt_err(e.to_string()))?;
    Ok(Checkpoint { kind: header.kind, meta: header.meta, params })
}

/// Write `bytes` to `path` through a temporary sibling so a failed write never
/// leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension(format!(
        "{}.partial",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(res?)
}

pub fn save<T: Real>(path: &Path, kind: &str, meta: &BTreeMap<String, Value>, params: &Params<T>) -> Result<()> {
    write_atomic(path, &to_bytes(kind, meta, params)?)
}

pub fn load<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    from_bytes(&fs::read(path)?)
}

/// Load and check the checkpoint kind.
pub fn load_kind<T: Real>(path: &Path, kind: &str) -> Result<Checkpoint<T>> {
    let ck = load(path)?;
    if ck.kind != kind {
        return Err(fmt_err(format!("{} holds a {} checkpoint, expected {kind}", path.display(), ck.kind)));
    }
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use ndarray::IxDyn;

    use super::*;
    use crate::nn::init::kaiming_normal;
    use crate::nn::params::Tensor;
    use crate::rng::SeedStream;

    fn sample() -> Params<f32> {
        let mut rng = SeedStream::new(1).rng();
        let mut p = Params::new();
        p.add("enc.0.weight", kaiming_normal(&[3, 4], &mut rng)).unwrap();
        p.add("enc.0.bias", Tensor::zeros(IxDyn(&[4]))).unwrap();
        p.add("scalar", Tensor::from_elem(IxDyn(&[1]), -1.5e-7)).unwrap();
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = sample();
        let mut meta = BTreeMap::new();
        meta.insert("latent_dim".into(), Value::from(16));
        let bytes = to_bytes("world_model", &meta, &p).unwrap();
        let ck: Checkpoint<f32> = from_bytes(&bytes).unwrap();
        assert_eq!(ck.kind, "world_model");
        assert_eq!(ck.meta, meta);
        for ((n1, a), (n2, b)) in p.iter().zip(ck.params.iter()) {
            assert_eq!(n1, n2);
            let ab: Vec<u32> = a.iter().map(|x| x.to_bits()).collect();
            let bb: Vec<u32> = b.iter().map(|x| x.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        assert_eq!(to_bytes("world_model", &meta, &ck.params).unwrap(), bytes);
    }

    #[test]
    fn rejects_non_finite_and_truncation() {
        let mut p = sample();
        let id = p.id_of("scalar").unwrap();
        p.get_mut(id)[[0]] = f32::NAN;
        assert!(to_bytes("x", &BTreeMap::new(), &p).is_err());

        let bytes = to_bytes("x", &BTreeMap::new(), &sample()).unwrap();
        assert!(from_bytes::<f32>(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 4..].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(from_bytes::<f32>(&bad), Err(Error::NonFinite(_))));
    }

    #[test]
    fn file_round_trip_and_kind_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&path, "gc_idm", &BTreeMap::new(), &sample()).unwrap();
        assert!(load_kind::<f32>(&path, "gc_idm").is_ok());
        assert!(load_kind::<f32>(&path, "world_model").is_err());
    }
}
