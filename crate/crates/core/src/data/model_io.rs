//! SPCM model files.
//!
//! Layout (little-endian): `"SPCM"`, `u16` version, then every parameter
//! tensor as `f64` in declaration order, then a CRC-32 of all preceding bytes.

use std::path::Path;

use super::DataError;
use crate::binio::{split_crc, Reader, Writer};
use crate::nn::ModelParams;

pub const MODEL_MAGIC: &[u8; 4] = b"SPCM";
pub const MODEL_FORMAT_VERSION: u16 = 1;

pub fn encode_model(model: &ModelParams) -> Vec<u8> {
    let mut w = Writer::with_capacity(10 + model.num_params() * 8);
    w.bytes(MODEL_MAGIC);
    w.u16(MODEL_FORMAT_VERSION);
    for (_, t) in model.tensors() {
        w.f64s(t);
    }
    w.finish_with_crc()
}

pub fn decode_model(data: &[u8]) -> Result<ModelParams, DataError> {
    let mut header = Reader::new(data);
    let magic = header.take(4).map_err(|e| DataError::Model(e.to_string()))?;
    if magic != MODEL_MAGIC {
        return Err(DataError::Model(format!("bad magic {magic:?}, expected \"SPCM\"")));
    }
    let version = header.u16().map_err(|e| DataError::Model(e.to_string()))?;
    if version != MODEL_FORMAT_VERSION {
        return Err(DataError::Version { found: version, supported: MODEL_FORMAT_VERSION });
    }
    let mut model = ModelParams::zeros();
    let expected = 6 + model.num_params() * 8 + 4;
    if data.len() != expected {
        return Err(DataError::Model(format!("expected {expected} bytes, got {}", data.len())));
    }
    let (body, stored, computed) = split_crc(data).expect("length checked");
    if stored != computed {
        return Err(DataError::Checksum { stored, computed });
    }
    let mut r = Reader::new(&body[6..]);
    for (_, t) in model.tensors_mut() {
        r.f64s(t).map_err(|e| DataError::Model(e.to_string()))?;
    }
    model.validate().map_err(|e| DataError::Model(e.to_string()))?;
    Ok(model)
}

pub fn save_model(model: &ModelParams, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, encode_model(model)).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

pub fn load_model(path: &Path) -> Result<ModelParams, DataError> {
    let data = std::fs::read(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    decode_model(&data)
}
