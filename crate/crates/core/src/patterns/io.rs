//! SPCP pattern packs and PGM previews.
//!
//! SPCP layout (little-endian): `"SPCP"`, `u16` version, `u32` upsample
//! ratio, then for each of the 15 pairs: `u16` kernel index, `f64` scale,
//! `f64` bias, and `P⁺` bit-packed row-major, most significant bit first,
//! each row padded to a whole byte. A CRC-32 of all preceding bytes closes
//! the file. `P⁻` is rebuilt as the complement on load.

use std::path::Path;

use super::{make_pattern_pair, BinaryPattern, PatternError, PatternPack};
use crate::binio::{split_crc, Reader, Writer};
use crate::nn::{IMAGE_SIDE, NUM_KERNELS};

pub const PACK_MAGIC: &[u8; 4] = b"SPCP";
pub const PACK_FORMAT_VERSION: u16 = 1;

fn pack_bits(p: &BinaryPattern, w: &mut Writer) {
    for row in p.bits.chunks_exact(p.width) {
        for byte in row.chunks(8) {
            let mut v = 0u8;
            for (i, &b) in byte.iter().enumerate() {
                v |= b << (7 - i);
            }
            w.bytes(&[v]);
        }
    }
}

fn unpack_bits(data: &[u8], side: usize) -> BinaryPattern {
    let row_bytes = side.div_ceil(8);
    let mut bits = Vec::with_capacity(side * side);
    for row in data.chunks_exact(row_bytes) {
        for x in 0..side {
            bits.push((row[x / 8] >> (7 - x % 8)) & 1);
        }
    }
    BinaryPattern { width: side, height: side, bits }
}

pub fn encode_pack(pack: &PatternPack) -> Result<Vec<u8>, PatternError> {
    pack.check_layout()?;
    let side = pack.side();
    let mut w = Writer::with_capacity(14 + NUM_KERNELS * (18 + side * side.div_ceil(8)));
    w.bytes(PACK_MAGIC);
    w.u16(PACK_FORMAT_VERSION);
    w.u32(pack.upsample as u32);
    for (pair, &bias) in pack.pairs.iter().zip(&pack.biases) {
        if pair.p_plus.width != side || pair.p_plus.height != side {
            return Err(PatternError::PackLayout(format!("kernel {} pattern is not {side}×{side}", pair.kernel)));
        }
        w.u16(pair.kernel as u16);
        w.f64(pair.scale);
        w.f64(bias);
        pack_bits(&pair.p_plus, &mut w);
    }
    Ok(w.finish_with_crc())
}

pub fn decode_pack(data: &[u8]) -> Result<PatternPack, PatternError> {
    let fmt = |e: crate::binio::Truncated| PatternError::Format(e.to_string());
    let mut r = Reader::new(data);
    let magic = r.take(4).map_err(fmt)?;
    if magic != PACK_MAGIC {
        return Err(PatternError::Format(format!("bad magic {magic:?}, expected \"SPCP\"")));
    }
    let version = r.u16().map_err(fmt)?;
    if version != PACK_FORMAT_VERSION {
        return Err(PatternError::Version { found: version, supported: PACK_FORMAT_VERSION });
    }
    let (_, stored, computed) = split_crc(data).ok_or_else(|| PatternError::Format("missing checksum".into()))?;
    if stored != computed {
        return Err(PatternError::Checksum { stored, computed });
    }
    let upsample = r.u32().map_err(fmt)? as usize;
    if upsample == 0 {
        return Err(PatternError::UpsampleRatio(0));
    }
    let side = IMAGE_SIDE * upsample;
    let expected = 10 + NUM_KERNELS * (18 + side * side.div_ceil(8)) + 4;
    if data.len() != expected {
        return Err(PatternError::Format(format!(
            "expected {expected} bytes for ratio {upsample}, got {}",
            data.len()
        )));
    }
    let mut pairs = Vec::with_capacity(NUM_KERNELS);
    let mut biases = Vec::with_capacity(NUM_KERNELS);
    for _ in 0..NUM_KERNELS {
        let kernel = r.u16().map_err(fmt)? as usize;
        let scale = r.f64().map_err(fmt)?;
        let bias = r.f64().map_err(fmt)?;
        if !(scale.is_finite() && scale > 0.0) || !bias.is_finite() {
            return Err(PatternError::Format(format!("kernel {kernel}: invalid scale {scale} or bias {bias}")));
        }
        let bits = unpack_bits(r.take(side * side.div_ceil(8)).map_err(fmt)?, side);
        pairs.push(make_pattern_pair(bits, kernel, scale, upsample));
        biases.push(bias);
    }
    let pack = PatternPack { pairs, biases, upsample, version };
    pack.check_layout()?;
    Ok(pack)
}

pub fn save_pack(pack: &PatternPack, path: &Path) -> Result<(), PatternError> {
    std::fs::write(path, encode_pack(pack)?).map_err(|source| PatternError::Io { path: path.to_path_buf(), source })
}

pub fn load_pack(path: &Path) -> Result<PatternPack, PatternError> {
    let data = std::fs::read(path).map_err(|source| PatternError::Io { path: path.to_path_buf(), source })?;
    decode_pack(&data)
}

/// Binary (P5) portable graymap of values in `[0, 1]`.
pub fn write_pgm(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_params;
    use crate::patterns::build_pattern_pack;

    #[test]
    fn bit_packing_is_msb_first() {
        let p = BinaryPattern { width: 10, height: 1, bits: vec![1, 0, 0, 0, 0, 0, 0, 1, 1, 0] };
        let mut w = Writer::default();
        pack_bits(&p, &mut w);
        let bytes = w.finish();
        assert_eq!(bytes, vec![0b1000_0001, 0b1000_0000]);
        assert_eq!(unpack_bits(&bytes, 10).bits[..10], p.bits[..]);
    }

    #[test]
    fn round_trip_is_exact() {
        let pack = build_pattern_pack(&init_params(3), 3).unwrap();
        let bytes = encode_pack(&pack).unwrap();
        let back = decode_pack(&bytes).unwrap();
        assert_eq!(back, pack);
        assert_eq!(encode_pack(&back).unwrap(), bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.spcp");
        let pack = build_pattern_pack(&init_params(3), 1).unwrap();
        save_pack(&pack, &path).unwrap();
        assert_eq!(load_pack(&path).unwrap(), pack);
    }

    #[test]
    fn corruption_and_version_are_reported() {
        let mut bytes = encode_pack(&build_pattern_pack(&init_params(3), 1).unwrap()).unwrap();
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(decode_pack(&flipped), Err(PatternError::Checksum { .. })));
        bytes[4] = 9;
        let msg = decode_pack(&bytes).unwrap_err().to_string();
        assert!(msg.contains('9') && msg.contains('1'), "{msg}");
        assert!(decode_pack(b"SPCP").is_err());
    }

    #[test]
    fn pgm_header() {
        let pgm = write_pgm(2, 1, &[0.0, 1.0]);
        assert_eq!(pgm, b"P5\n2 1\n255\n\x00\xff");
    }
}
