//! Binary model files: magic, format version, a length-prefixed JSON header
//! (architecture plus tensor names and shapes), then little-endian f64 data
//! in header order.

use std::io::{Read, Write};
use std::path::Path;

use litese_autograd::Tensor;
use serde::{Deserialize, Serialize};

use super::model::Model;
use super::spec::ArchitectureSpec;
use crate::error::{Error, Result};
use crate::nn::Module;

pub const MAGIC: &[u8; 8] = b"LITESE\0\x01";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ArchitectureSpec,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let params = model.params();
    let header = Header {
        spec: model.spec.clone(),
        tensors: params
            .iter()
            .map(|p| Entry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Mismatch(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in params {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = bytes;
    let mut magic = [0u8; 8];
    read(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Mismatch("not a model file".into()));
    }
    let mut b4 = [0u8; 4];
    read(&mut r, &mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(Error::Mismatch(format!("model file version {} (expected {})", version, VERSION)));
    }
    let mut b8 = [0u8; 8];
    read(&mut r, &mut b8)?;
    let len = u64::from_le_bytes(b8) as usize;
    if len > r.len() {
        return Err(Error::Mismatch("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&r[..len]).map_err(|e| Error::Mismatch(format!("bad header: {}", e)))?;
    r = &r[len..];

    let mut model = Model::assemble(&header.spec, 0)?;
    let expected: Vec<(String, Vec<usize>)> = model
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.value.shape().to_vec()))
        .collect();
    let found: Vec<(String, Vec<usize>)> = header.tensors.into_iter().map(|e| (e.name, e.shape)).collect();
    if expected != found {
        let first = expected
            .iter()
            .zip(&found)
            .find(|(a, b)| a != b)
            .map(|(a, b)| format!("expected {} {:?}, found {} {:?}", a.0, a.1, b.0, b.1))
            .unwrap_or_else(|| format!("expected {} tensors, found {}", expected.len(), found.len()));
        return Err(Error::Mismatch(format!("tensor layout differs from the architecture: {}", first)));
    }
    let total: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if r.len() != total * 8 {
        return Err(Error::Mismatch(format!("expected {} data bytes, found {}", total * 8, r.len())));
    }
    let mut err = None;
    model.visit_mut(&mut |p| {
        let n = p.numel();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0u8; 8];
            if let Err(e) = read(&mut r, &mut b) {
                err = Some(e);
                return;
            }
            data.push(f64::from_le_bytes(b));
        }
        p.value = Tensor::new(p.value.shape(), data);
    });
    match err {
        Some(e) => Err(e),
        None => Ok(model),
    }
}

fn read(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Mismatch("truncated model file".into()))
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    from_bytes(&std::fs::read(path)?)
}
