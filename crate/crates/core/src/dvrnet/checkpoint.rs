//! `DVRW` weight container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DVRW" | version u8 | header_len u32 | header (JSON) | n_tensors u32 |
//!   per tensor: name_len u16 | name | ndim u8 | dims u32 x ndim | f32 x prod(dims)
//! ```
//!
//! The JSON header carries the layer configuration, the init seed and free-form
//! string tags. Tensors appear in layer order: parameters, then running
//! statistics, then the output affine (`output.offset`, `output.scale`).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::config::DvrConfig;
use super::model::DvrModel;
use crate::error::{Error, Result};
use crate::Scalar;

pub const DVRW_MAGIC: &[u8; 4] = b"DVRW";
pub const DVRW_VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: DvrConfig,
    seed: u64,
    #[serde(default)]
    tags: BTreeMap<String, String>,
}

/// A model plus the tags stored beside it.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub model: DvrModel<T>,
    pub tags: BTreeMap<String, String>,
}

fn named_tensors<T: Scalar>(model: &DvrModel<T>) -> Vec<(String, ArrayD<T>)> {
    let mut out = Vec::new();
    for layer in model.layers() {
        for (n, p) in layer.param_names().iter().zip(&layer.params) {
            out.push((format!("{}.{n}", layer.spec.name), p.clone()));
        }
        for (n, b) in layer.buffer_names().iter().zip(&layer.buffers) {
            out.push((format!("{}.{n}", layer.spec.name), b.clone()));
        }
    }
    let (offset, scale) = model.output_affine();
    out.push(("output.offset".into(), offset.clone().into_dyn()));
    out.push(("output.scale".into(), scale.clone().into_dyn()));
    out
}

pub fn save_checkpoint<T: Scalar>(
    model: &DvrModel<T>,
    tags: &BTreeMap<String, String>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let header = serde_json::to_vec(&Header {
        config: model.config().clone(),
        seed: model.seed(),
        tags: tags.clone(),
    })?;
    let tensors = named_tensors(model);
    let mut buf = Vec::new();
    buf.extend_from_slice(DVRW_MAGIC);
    buf.push(DVRW_VERSION);
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(t.ndim() as u8);
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.iter() {
            buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::Truncated {
                expected: (self.pos + n) as u64,
                found: self.data.len() as u64,
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor { data: &data, pos: 0 };
    if c.take(4).ok() != Some(&DVRW_MAGIC[..]) {
        return Err(Error::BadMagic(path.display().to_string()));
    }
    let version = c.u8()?;
    if version != DVRW_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let header_len = c.u32()? as usize;
    let header: Header = serde_json::from_slice(c.take(header_len)?)?;
    let mut model = DvrModel::<T>::from_config(header.config, header.seed)?;
    let expected = named_tensors(&model);
    let n = c.u32()? as usize;
    if n != expected.len() {
        return Err(Error::shape(format!("checkpoint has {n} tensors, model needs {}", expected.len())));
    }
    let mut loaded = Vec::with_capacity(n);
    for (want_name, want) in &expected {
        let name_len = c.u16()? as usize;
        let name = String::from_utf8_lossy(c.take(name_len)?).into_owned();
        let ndim = c.u8()? as usize;
        let dims = (0..ndim).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if &name != want_name || dims != want.shape() {
            return Err(Error::shape(format!(
                "tensor {name} {dims:?} does not match expected {want_name} {:?}",
                want.shape()
            )));
        }
        let count: usize = dims.iter().product();
        let raw = c.take(count * 4)?;
        let values = raw
            .chunks_exact(4)
            .map(|b| T::lit(f32::from_le_bytes(b.try_into().unwrap()) as f64))
            .collect();
        loaded.push(ArrayD::from_shape_vec(IxDyn(&dims), values).unwrap());
    }
    let mut it = loaded.into_iter();
    for layer in model.layers_mut() {
        for p in layer.params.iter_mut().chain(layer.buffers.iter_mut()) {
            *p = it.next().unwrap();
        }
    }
    let (offset, scale) = model.output_affine_mut();
    *offset = it.next().unwrap().into_dimensionality().unwrap();
    *scale = it.next().unwrap().into_dimensionality().unwrap();
    Ok(Checkpoint {
        model,
        tags: header.tags,
    })
}

#[cfg(test)]
mod tests {
    use super::super::config::{InputShape, Scale, Variant};
    use super::*;

    fn mini() -> DvrModel<f32> {
        let scale = Scale {
            input: InputShape {
                frames: 40,
                height: 16,
                width: 16,
                channels: 1,
            },
            filter_divisor: 16,
        };
        let mut m = DvrModel::from_config(DvrConfig::scaled(Variant::Dvr2, scale, 2).unwrap(), 9).unwrap();
        m.set_output_affine(&[81.0, 22.0], &[17.7, 8.3]).unwrap();
        m.layers_mut()[2].buffers[0].fill(0.123_456_7);
        m
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.dvrw");
        let model = mini();
        let tags = BTreeMap::from([("task".to_string(), "both".to_string())]);
        save_checkpoint(&model, &tags, &p).unwrap();
        let back = load_checkpoint::<f32>(&p).unwrap();
        assert_eq!(back.tags, tags);
        assert_eq!(back.model.config(), model.config());
        for (a, b) in named_tensors(&model).iter().zip(named_tensors(&back.model).iter()) {
            assert_eq!(a.0, b.0);
            let bits_a: Vec<u32> = a.1.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = b.1.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b, "{}", a.0);
        }
        assert_eq!(back.model, model);
    }

    #[test]
    fn rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.dvrw");
        save_checkpoint(&mini(), &BTreeMap::new(), &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();

        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&p), Err(Error::Truncated { .. })));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&p, &bad).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&p), Err(Error::BadMagic(_))));

        let mut bad = bytes;
        bad[4] = 9;
        std::fs::write(&p, &bad).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&p), Err(Error::UnsupportedVersion(9))));
    }
}
