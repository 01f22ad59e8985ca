//! Portable weight files for the toy detector.
//!
//! Layout (all integers little-endian `u32`, all values little-endian `f32`):
//! the magic `PKDW`, a format version, the length of a JSON-encoded
//! [`ToyDetectorConfig`] followed by its bytes, the layer count, then per
//! layer `out_c in_c k stride pad` and the weight and bias values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::conv::Conv2d;
use super::toy::{ToyDetector, ToyDetectorConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PKDW";
static BUNDLED: &[u8] = include_bytes!("../../fixtures/toy_detector.bin");
const VERSION: u32 = 1;

pub fn write_weights<W: Write>(model: &ToyDetector, mut w: W) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    let cfg = serde_json::to_vec(model.config()).expect("config serializes");
    w.write_u32::<LittleEndian>(cfg.len() as u32)?;
    w.write_all(&cfg)?;
    let layers = model.layers();
    w.write_u32::<LittleEndian>(layers.len() as u32)?;
    for l in layers {
        for v in [l.out_c, l.in_c, l.k, l.stride, l.pad] {
            w.write_u32::<LittleEndian>(v as u32)?;
        }
        for &v in l.weight.iter().chain(&l.bias) {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    w.flush()
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(format!("malformed detector weights: {}", msg.into()))
}

pub fn read_weights<R: Read>(mut r: R) -> Result<ToyDetector> {
    let io = |e: std::io::Error| bad(e.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let len = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    if len > 1 << 20 {
        return Err(bad("config header too large"));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(io)?;
    let cfg: ToyDetectorConfig = serde_json::from_slice(&buf).map_err(|e| bad(e.to_string()))?;
    cfg.validate()?;
    let n = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    if n > 1024 {
        return Err(bad("implausible layer count"));
    }
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        }
        let [out_c, in_c, k, stride, pad] = dims;
        let count = out_c
            .checked_mul(in_c)
            .and_then(|v| v.checked_mul(k * k))
            .filter(|&v| v <= 1 << 24)
            .ok_or_else(|| bad("layer too large"))?;
        let mut read = |m: usize| -> Result<Vec<f64>> {
            (0..m)
                .map(|_| r.read_f32::<LittleEndian>().map(f64::from).map_err(io))
                .collect()
        };
        let weight = read(count)?;
        let bias = read(out_c)?;
        layers.push(Conv2d {
            in_c,
            out_c,
            k,
            stride,
            pad,
            weight,
            bias,
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(io)? != 0 {
        return Err(bad("trailing bytes"));
    }
    ToyDetector::from_parts(cfg, layers)
}

pub fn save_weights(model: &ToyDetector, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_weights(model, BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<ToyDetector> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_weights(BufReader::new(f))
}

/// The detector weights shipped with the crate.
pub fn bundled_detector() -> Result<ToyDetector> {
    read_weights(BUNDLED)
}

/// Rounds every parameter to `f32` so an in-memory model matches its saved form.
pub fn quantize(model: &mut ToyDetector) {
    for l in model.layers_mut() {
        for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
            *v = *v as f32 as f64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut m = ToyDetector::new(ToyDetectorConfig::default(), 3).unwrap();
        quantize(&mut m);
        let mut buf = Vec::new();
        write_weights(&m, &mut buf).unwrap();
        let back = read_weights(&buf[..]).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_truncation_and_garbage() {
        let m = ToyDetector::new(ToyDetectorConfig::default(), 3).unwrap();
        let mut buf = Vec::new();
        write_weights(&m, &mut buf).unwrap();
        assert!(read_weights(&buf[..buf.len() - 2]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_weights(&extra[..]).is_err());
        assert!(read_weights(&b"nope"[..]).is_err());
    }
}
