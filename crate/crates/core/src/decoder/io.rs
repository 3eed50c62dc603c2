//! KMCD decoder weights and KMCS training-sample files.
//!
//! KMCD: `"KMCD" | version u16 = 1 | K u16 | grid rows u16 | grid cols u16 |
//! layer count u16 | per layer (out, in, kh, kw) u16 x 4 | f32 weights` in
//! declaration order. KMCS: `"KMCS" | count u32 | per sample: target f32 x 2,
//! K u16, rows u16, cols u16, K*rows*cols f32`. Everything little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DecoderNet, Layout, ResponseStack, TrainingSample};
use crate::{KmcError, Result};

const DECODER_MAGIC: &[u8; 4] = b"KMCD";
const SAMPLES_MAGIC: &[u8; 4] = b"KMCS";
const VERSION: u16 = 1;

fn u16_of(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| KmcError::Format(format!("{what} {v} does not fit in u16")))
}

fn read_bytes<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => KmcError::Format("truncated file".into()),
        _ => KmcError::Io(e),
    })?;
    Ok(buf)
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    Ok(u16::from_le_bytes(read_bytes::<2>(r)?))
}

fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut raw = vec![0u8; n * 4];
    r.read_exact(&mut raw).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => KmcError::Format("truncated file".into()),
        _ => KmcError::Io(e),
    })?;
    Ok(raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect())
}

fn expect_eof(r: &mut impl Read) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(KmcError::Format("trailing bytes".into())),
    }
}

pub fn save_decoder(path: &Path, net: &DecoderNet) -> Result<()> {
    let l = &net.layout;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DECODER_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [l.inputs, l.rows, l.cols] {
        w.write_all(&u16_of(v, "dimension")?.to_le_bytes())?;
    }
    let shapes = l.layer_shapes();
    w.write_all(&u16_of(shapes.len(), "layer count")?.to_le_bytes())?;
    for (o, i, kh, kw) in shapes {
        for v in [o, i, kh, kw] {
            w.write_all(&u16_of(v, "layer dimension")?.to_le_bytes())?;
        }
    }
    for &p in &net.params {
        w.write_all(&(p as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_decoder(path: &Path) -> Result<DecoderNet> {
    let mut r = BufReader::new(File::open(path)?);
    if &read_bytes::<4>(&mut r)? != DECODER_MAGIC {
        return Err(KmcError::Format("bad magic, expected KMCD".into()));
    }
    let version = read_u16(&mut r)?;
    if version != VERSION {
        return Err(KmcError::Format(format!("unsupported KMCD version {version}")));
    }
    let inputs = read_u16(&mut r)? as usize;
    let rows = read_u16(&mut r)? as usize;
    let cols = read_u16(&mut r)? as usize;
    let layout = Layout::new(inputs, rows, cols).map_err(|e| KmcError::Format(e.to_string()))?;
    let count = read_u16(&mut r)? as usize;
    let expected = layout.layer_shapes();
    if count != expected.len() {
        return Err(KmcError::Format(format!("{count} layers, expected {}", expected.len())));
    }
    for shape in expected {
        let got = (
            read_u16(&mut r)? as usize,
            read_u16(&mut r)? as usize,
            read_u16(&mut r)? as usize,
            read_u16(&mut r)? as usize,
        );
        if got != shape {
            return Err(KmcError::Format(format!("layer shape {got:?}, expected {shape:?}")));
        }
    }
    let params = read_f32s(&mut r, layout.total)?;
    expect_eof(&mut r)?;
    Ok(DecoderNet { layout, params })
}

pub fn save_samples(path: &Path, samples: &[TrainingSample]) -> Result<()> {
    let count = u32::try_from(samples.len()).map_err(|_| KmcError::Format("too many samples".into()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SAMPLES_MAGIC)?;
    w.write_all(&count.to_le_bytes())?;
    for s in samples {
        w.write_all(&(s.target.0 as f32).to_le_bytes())?;
        w.write_all(&(s.target.1 as f32).to_le_bytes())?;
        for v in [s.stack.channels, s.stack.rows, s.stack.cols] {
            w.write_all(&u16_of(v, "stack dimension")?.to_le_bytes())?;
        }
        for &v in &s.stack.data {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_samples(path: &Path) -> Result<Vec<TrainingSample>> {
    let mut r = BufReader::new(File::open(path)?);
    if &read_bytes::<4>(&mut r)? != SAMPLES_MAGIC {
        return Err(KmcError::Format("bad magic, expected KMCS".into()));
    }
    let count = u32::from_le_bytes(read_bytes::<4>(&mut r)?) as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let target = read_f32s(&mut r, 2)?;
        let k = read_u16(&mut r)? as usize;
        let rows = read_u16(&mut r)? as usize;
        let cols = read_u16(&mut r)? as usize;
        let data = read_f32s(&mut r, k * rows * cols)?;
        let mut stack = ResponseStack::new(k, rows, cols, data).map_err(|e| KmcError::Format(e.to_string()))?;
        stack.cell_sizes = vec![1; k];
        out.push(TrainingSample {
            stack,
            target: (target[0], target[1]),
        });
    }
    expect_eof(&mut r)?;
    Ok(out)
}
