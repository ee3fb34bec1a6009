use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DescriptorKind {
    A4,
    A7,
    A8,
    A9,
    D4,
}

impl DescriptorKind {
    pub fn dims(self) -> usize {
        match self {
            Self::A4 => 8,
            Self::A7 | Self::A8 | Self::A9 => 12,
            Self::D4 => 4,
        }
    }

    pub fn is_audio(self) -> bool {
        !matches!(self, Self::D4)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::A4 => "A4",
            Self::A7 => "A7",
            Self::A8 => "A8",
            Self::A9 => "A9",
            Self::D4 => "D4",
        }
    }
}

impl std::str::FromStr for DescriptorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A4" => Ok(Self::A4),
            "A7" => Ok(Self::A7),
            "A8" => Ok(Self::A8),
            "A9" => Ok(Self::A9),
            "D4" => Ok(Self::D4),
            _ => Err(Error::Invalid(format!("unknown descriptor kind {s}"))),
        }
    }
}

/// Time-indexed descriptor matrix, `frames x dims` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorTensor {
    pub kind: DescriptorKind,
    pub frames: usize,
    pub values: Vec<f64>,
    /// Bands (A4) or frames (A7/A8/A9) whose output was replaced by the
    /// degenerate-input rule.
    pub degenerate: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DumpHeader {
    kind: DescriptorKind,
    frames: usize,
    dims: usize,
    dtype: String,
}

impl DescriptorTensor {
    pub fn new(kind: DescriptorKind, frames: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != frames * kind.dims() {
            return Err(Error::Shape(format!(
                "{} descriptor: {} values for {frames} x {}",
                kind.name(),
                values.len(),
                kind.dims()
            )));
        }
        Ok(Self { kind, frames, values, degenerate: Vec::new() })
    }

    pub fn zeros(kind: DescriptorKind, frames: usize) -> Self {
        Self { kind, frames, values: vec![0.0; frames * kind.dims()], degenerate: Vec::new() }
    }

    pub fn dims(&self) -> usize {
        self.kind.dims()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let d = self.dims();
        &self.values[t * d..(t + 1) * d]
    }

    pub fn at(&self, t: usize, c: usize) -> f64 {
        self.values[t * self.dims() + c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.frames).map(|t| self.at(t, c)).collect()
    }

    /// JSON header line followed by a row-major little-endian f32 payload.
    pub fn dump(&self, mut w: impl Write) -> Result<()> {
        let header = DumpHeader { kind: self.kind, frames: self.frames, dims: self.dims(), dtype: "f32le".into() };
        let mut line = serde_json::to_vec(&header)?;
        line.push(b'\n');
        let payload: Vec<u8> = self.values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
        w.write_all(&line).and_then(|_| w.write_all(&payload)).map_err(io_err("<descriptor dump>"))
    }

    pub fn parse_dump(bytes: &[u8]) -> Result<Self> {
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Format("missing dump header".into()))?;
        let header: DumpHeader = serde_json::from_slice(&bytes[..nl])?;
        if header.dtype != "f32le" || header.dims != header.kind.dims() {
            return Err(Error::Format(format!("unsupported dump header dtype={} dims={}", header.dtype, header.dims)));
        }
        let payload = &bytes[nl + 1..];
        if payload.len() != header.frames * header.dims * 4 {
            return Err(Error::Format("dump payload length does not match header".into()));
        }
        let values = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        Self::new(header.kind, header.frames, values)
    }

    pub fn write_dump(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(io_err(path))?;
        self.dump(std::io::BufWriter::new(f))
    }
}
