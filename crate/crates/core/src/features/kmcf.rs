//! KMCF binary feature files.
//!
//! Layout (all integers little-endian):
//! `"KMCF" | version u16 = 1 | frame_count u32 | layer_count u16`, then per
//! layer `layer_id u16, cell_size u16, D u16, M u16, N u16`, then the tensors
//! frame-major and layer-major as `f32` in (channel, row, col) order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use super::{FeatureMap, FeatureStack};
use crate::{KmcError, Result};

const MAGIC: &[u8; 4] = b"KMCF";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerHeader {
    pub layer_id: u16,
    pub cell_size: u16,
    pub channels: u16,
    pub rows: u16,
    pub cols: u16,
}

impl LayerHeader {
    fn len(&self) -> Option<usize> {
        (self.channels as usize)
            .checked_mul(self.rows as usize)?
            .checked_mul(self.cols as usize)
    }
}

/// Random-access reader over the frames of one KMCF file.
#[derive(Debug)]
pub struct KmcfReader {
    file: BufReader<File>,
    frame_count: usize,
    layers: Vec<LayerHeader>,
    data_offset: u64,
    frame_bytes: u64,
}

impl KmcfReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = BufReader::new(File::open(path)?);
        let file_len = file.get_ref().metadata()?.len();
        let mut head = [0u8; 12];
        read_exact(&mut file, &mut head)?;
        if &head[..4] != MAGIC {
            return Err(KmcError::Format("bad magic, expected KMCF".into()));
        }
        let version = u16::from_le_bytes([head[4], head[5]]);
        if version != VERSION {
            return Err(KmcError::Format(format!("unsupported KMCF version {version}")));
        }
        let frame_count = u32::from_le_bytes([head[6], head[7], head[8], head[9]]) as usize;
        let layer_count = u16::from_le_bytes([head[10], head[11]]) as usize;
        if layer_count == 0 {
            return Err(KmcError::Format("zero layers".into()));
        }
        let mut layers = Vec::with_capacity(layer_count);
        let mut frame_values: usize = 0;
        for _ in 0..layer_count {
            let mut raw = [0u8; 10];
            read_exact(&mut file, &mut raw)?;
            let f = |i: usize| u16::from_le_bytes([raw[2 * i], raw[2 * i + 1]]);
            let header = LayerHeader {
                layer_id: f(0),
                cell_size: f(1),
                channels: f(2),
                rows: f(3),
                cols: f(4),
            };
            if header.channels == 0 || header.rows == 0 || header.cols == 0 {
                return Err(KmcError::Format(format!("layer {} has a zero dimension", header.layer_id)));
            }
            if layers.last().is_some_and(|prev: &LayerHeader| prev.layer_id >= header.layer_id) {
                return Err(KmcError::Format("layer ids not strictly increasing".into()));
            }
            frame_values = header
                .len()
                .and_then(|n| frame_values.checked_add(n))
                .ok_or_else(|| KmcError::Format("dimension overflow".into()))?;
            layers.push(header);
        }
        let data_offset = 12 + 10 * layer_count as u64;
        let frame_bytes = (frame_values as u64)
            .checked_mul(4)
            .ok_or_else(|| KmcError::Format("dimension overflow".into()))?;
        let expected = frame_bytes
            .checked_mul(frame_count as u64)
            .and_then(|n| n.checked_add(data_offset))
            .ok_or_else(|| KmcError::Format("dimension overflow".into()))?;
        if file_len != expected {
            return Err(KmcError::Format(format!("file is {file_len} bytes, header implies {expected}")));
        }
        Ok(Self {
            file,
            frame_count,
            layers,
            data_offset,
            frame_bytes,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn layers(&self) -> &[LayerHeader] {
        &self.layers
    }

    /// Reads the stack for a 1-based frame index.
    pub fn read_frame(&mut self, frame_index: usize) -> Result<FeatureStack> {
        if frame_index == 0 || frame_index > self.frame_count {
            return Err(KmcError::Index {
                index: frame_index,
                len: self.frame_count,
            });
        }
        let offset = self.data_offset + (frame_index as u64 - 1) * self.frame_bytes;
        self.file.seek(SeekFrom::Start(offset))?;
        let mut maps = Vec::with_capacity(self.layers.len());
        for header in &self.layers {
            let len = header.len().expect("validated on open");
            let mut raw = vec![0u8; len * 4];
            read_exact(&mut self.file, &mut raw)?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            maps.push(FeatureMap::new(
                header.channels as usize,
                header.rows as usize,
                header.cols as usize,
                data,
                header.layer_id as usize,
                header.cell_size as usize,
            )?);
        }
        FeatureStack::new(maps, frame_index)
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => KmcError::Format("truncated KMCF file".into()),
        _ => KmcError::Io(e),
    })
}

/// Loads the stack stored for the 1-based `frame_index`.
pub fn load_feature_stack(path: &Path, frame_index: usize) -> Result<FeatureStack> {
    KmcfReader::open(path)?.read_frame(frame_index)
}

/// Writes `stacks` (one per frame, identical layer layout) as a KMCF file.
/// Values are stored as `f32`.
pub fn write_feature_stacks(path: &Path, stacks: &[FeatureStack]) -> Result<()> {
    let first = stacks
        .first()
        .ok_or_else(|| KmcError::Format("no frames to write".into()))?;
    let to_u16 = |v: usize, what: &str| {
        u16::try_from(v).map_err(|_| KmcError::Format(format!("{what} {v} does not fit in u16")))
    };
    let headers = first
        .layers
        .iter()
        .map(|l| {
            Ok(LayerHeader {
                layer_id: to_u16(l.layer_id, "layer id")?,
                cell_size: to_u16(l.cell_size, "cell size")?,
                channels: to_u16(l.channels(), "channel count")?,
                rows: to_u16(l.rows(), "row count")?,
                cols: to_u16(l.cols(), "column count")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    for stack in stacks {
        let same = stack.layers.len() == first.layers.len()
            && stack.layers.iter().zip(&first.layers).all(|(a, b)| {
                a.shape() == b.shape() && a.layer_id == b.layer_id && a.cell_size == b.cell_size
            });
        if !same {
            return Err(KmcError::Shape("all frames must share one layer layout".into()));
        }
    }
    let frame_count = u32::try_from(stacks.len()).map_err(|_| KmcError::Format("too many frames".into()))?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&frame_count.to_le_bytes())?;
    w.write_all(&to_u16(headers.len(), "layer count")?.to_le_bytes())?;
    for h in &headers {
        for v in [h.layer_id, h.cell_size, h.channels, h.rows, h.cols] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for stack in stacks {
        for layer in &stack.layers {
            for &v in layer.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
