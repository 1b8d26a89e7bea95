//! Binary checkpoint format: a small JSON header (model config + vocab)
//! followed by raw little-endian f64 tensor payloads. Round-trips bitwise.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::registry::ParamRegistry;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"CLSTMCK\0";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vec<String>,
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_exact_vec(r: &mut impl Read, len: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn save(path: &Path, model: &Model, vocab: &Vocab) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let header = Header {
        config: model.cfg.clone(),
        vocab: vocab.tokens().to_vec(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::Config(format!("header encode: {e}")))?;
    write_u64(&mut w, header_json.len() as u64)?;
    w.write_all(&header_json)?;
    write_u64(&mut w, model.registry.len() as u64)?;
    for (name, tensor, embedding) in model.registry.iter() {
        write_u64(&mut w, name.len() as u64)?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[u8::from(embedding)])?;
        write_u64(&mut w, tensor.shape().len() as u64)?;
        for &dim in tensor.shape() {
            write_u64(&mut w, dim as u64)?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Model, Vocab)> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Config("not a checkpoint file (bad magic)".into()));
    }
    let mut version = [0u8; 4];
    r.read_exact(&mut version)?;
    let version = u32::from_le_bytes(version);
    if version != VERSION {
        return Err(Error::Config(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let header_len = read_u64(&mut r)? as usize;
    let header_json = read_exact_vec(&mut r, header_len)?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| Error::Config(format!("header decode: {e}")))?;
    let n_tensors = read_u64(&mut r)? as usize;
    let mut registry = ParamRegistry::new();
    for _ in 0..n_tensors {
        let name_len = read_u64(&mut r)? as usize;
        let name = String::from_utf8(read_exact_vec(&mut r, name_len)?)
            .map_err(|_| Error::Config("tensor name is not UTF-8".into()))?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let ndims = read_u64(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            shape.push(read_u64(&mut r)? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        registry.register(&name, Tensor::new(shape, data)?, flag[0] != 0)?;
    }
    let vocab = Vocab::from_tokens(header.vocab)?;
    let model = Model::from_parts(header.config, registry)?;
    Ok((model, vocab))
}
