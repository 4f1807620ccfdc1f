//! QVOL container: `b"QVOL"`, u32 little-endian header length, UTF-8 JSON
//! header, raw little-endian payload in x-fastest order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use super::{Geometry, Grid, LabelVolume, ProbVolume, Volume, Voxel};
use crate::error::{Error, Result};
use crate::NUM_CLASSES;

const MAGIC: &[u8; 4] = b"QVOL";

#[derive(Serialize)]
struct Header<'a> {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    dtype: &'a str,
    kind: &'a str,
}

/// Either kind of grid a QVOL file may hold.
#[derive(Clone, Debug, PartialEq)]
pub enum LoadedVolume {
    Intensity(Volume),
    Label(LabelVolume),
}

pub fn encode<T: Voxel>(v: &Grid<T>) -> Vec<u8> {
    let g = v.geom();
    let header = serde_json::to_vec(&Header {
        dims: g.dims,
        spacing: g.spacing,
        origin: g.origin,
        dtype: T::DTYPE,
        kind: T::KIND,
    })
    .expect("header serialization cannot fail");
    let mut out = Vec::with_capacity(8 + header.len() + v.len() * T::BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for &x in v.data() {
        x.write_le(&mut out);
    }
    out
}

pub fn save_qvol<T: Voxel>(path: impl AsRef<Path>, v: &Grid<T>) -> Result<()> {
    fs::write(path, encode(v))?;
    Ok(())
}

fn triple<T>(header: &Value, key: &str, parse: impl Fn(&Value) -> Option<T>) -> Result<[T; 3]> {
    let arr = header
        .get(key)
        .ok_or_else(|| Error::format(key, "missing"))?
        .as_array()
        .ok_or_else(|| Error::format(key, "not an array"))?;
    if arr.len() != 3 {
        return Err(Error::format(key, format!("expected 3 entries, found {}", arr.len())));
    }
    let mut vals = Vec::with_capacity(3);
    for item in arr {
        vals.push(parse(item).ok_or_else(|| Error::format(key, format!("bad entry {item}")))?);
    }
    let mut it = vals.into_iter();
    Ok([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
}

fn string<'a>(header: &'a Value, key: &str) -> Result<&'a str> {
    header
        .get(key)
        .ok_or_else(|| Error::format(key, "missing"))?
        .as_str()
        .ok_or_else(|| Error::format(key, "not a string"))
}

fn decode_payload<T: Voxel>(geom: Geometry, payload: &[u8]) -> Result<Grid<T>> {
    let expected = geom.len();
    if payload.len() != expected * T::BYTES {
        return Err(Error::Truncated {
            expected,
            found: payload.len() / T::BYTES,
        });
    }
    let data = payload.chunks_exact(T::BYTES).map(T::read_le).collect();
    Grid::new(geom, data)
}

pub fn decode(bytes: &[u8]) -> Result<LoadedVolume> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::format("magic", "file does not start with QVOL"));
    }
    let hlen = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    let header_bytes = bytes
        .get(8..8 + hlen)
        .ok_or_else(|| Error::format("header_length", format!("{hlen} exceeds file size")))?;
    let text = std::str::from_utf8(header_bytes).map_err(|e| Error::format("header", e.to_string()))?;
    let header: Value = serde_json::from_str(text).map_err(|e| Error::format("header", e.to_string()))?;
    if !header.is_object() {
        return Err(Error::format("header", "not a JSON object"));
    }

    let dims = triple(&header, "dims", |v| v.as_u64().map(|d| d as usize))?;
    let spacing = triple(&header, "spacing", Value::as_f64)?;
    let origin = triple(&header, "origin", Value::as_f64)?;
    let dtype = string(&header, "dtype")?;
    let kind = string(&header, "kind")?;
    let geom = Geometry::new(dims, spacing, origin)?;
    let payload = &bytes[8 + hlen..];

    match (dtype, kind) {
        ("f32", "intensity") => Ok(LoadedVolume::Intensity(decode_payload(geom, payload)?)),
        ("u8", "label") => Ok(LoadedVolume::Label(decode_payload(geom, payload)?)),
        ("f32", _) | ("u8", _) => Err(Error::format("kind", format!("`{kind}` does not match dtype `{dtype}`"))),
        _ => Err(Error::format("dtype", format!("unsupported `{dtype}`"))),
    }
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<LoadedVolume> {
    decode(&fs::read(path)?)
}

pub fn load_intensity(path: impl AsRef<Path>) -> Result<Volume> {
    match load_volume(path.as_ref())? {
        LoadedVolume::Intensity(v) => Ok(v),
        LoadedVolume::Label(_) => Err(Error::format("kind", format!("{} holds labels", path.as_ref().display()))),
    }
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    match load_volume(path.as_ref())? {
        LoadedVolume::Label(v) => Ok(v),
        LoadedVolume::Intensity(_) => Err(Error::format("kind", format!("{} holds intensities", path.as_ref().display()))),
    }
}

fn class_path(base: &Path, k: usize) -> PathBuf {
    base.with_extension(format!("c{k}.qvol"))
}

/// Writes one intensity QVOL per class next to `base`.
pub fn save_probs(base: impl AsRef<Path>, p: &ProbVolume) -> Result<()> {
    for k in 0..NUM_CLASSES {
        let v = Volume::new(p.geom().clone(), p.class(k).to_vec())?;
        save_qvol(class_path(base.as_ref(), k), &v)?;
    }
    Ok(())
}

pub fn load_probs(base: impl AsRef<Path>) -> Result<ProbVolume> {
    let mut values = Vec::new();
    let mut geom = None;
    for k in 0..NUM_CLASSES {
        let v = load_intensity(class_path(base.as_ref(), k))?;
        if let Some(g) = &geom {
            v.geom().check_same(g)?;
        } else {
            geom = Some(v.geom().clone());
        }
        values.extend_from_slice(v.data());
    }
    ProbVolume::from_classes(geom.unwrap(), values)
}
