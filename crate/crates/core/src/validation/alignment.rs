//! Matched-pair cosine statistics and a flat embedding export.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::retrieval::cosine;

pub const HIST_BINS: usize = 50;
const EXPORT_HEADER: &str = "# modality\tpiece_id\tembedding";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentStats {
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Counts over `HIST_BINS` equal bins spanning [-1, 1]; 1.0 lands in the last bin.
    pub histogram: Vec<usize>,
}

/// Cosine between each matched audio/MIDI embedding pair.
pub fn cosine_alignment(audio: &[Vec<f64>], midi: &[Vec<f64>]) -> Result<AlignmentStats> {
    if audio.len() != midi.len() {
        return Err(Error::Shape(format!("{} audio vs {} MIDI embeddings", audio.len(), midi.len())));
    }
    if audio.len() < 2 {
        return Err(Error::Invalid("cosine alignment needs at least 2 pairs".into()));
    }
    let cos: Vec<f64> = audio.iter().zip(midi).map(|(a, m)| cosine(a, m)).collect();
    if cos.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("cosine of a zero embedding".into()));
    }
    let n = cos.len() as f64;
    let mean = cos.iter().sum::<f64>() / n;
    let std = (cos.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut histogram = vec![0; HIST_BINS];
    for c in &cos {
        let b = ((c.clamp(-1.0, 1.0) + 1.0) / 2.0 * HIST_BINS as f64).floor() as usize;
        histogram[b.min(HIST_BINS - 1)] += 1;
    }
    Ok(AlignmentStats { n: cos.len(), mean, std, histogram })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRow {
    pub modality: String,
    pub piece_id: usize,
    pub values: Vec<f64>,
}

/// Header line, then one tab-separated row per modality per item. Floats use
/// the shortest representation that parses back to the same bits.
pub fn export_embeddings(
    mut w: impl Write,
    piece_ids: &[usize],
    audio: &[Vec<f64>],
    midi: &[Vec<f64>],
    n: usize,
) -> Result<usize> {
    if n > piece_ids.len() || audio.len() != piece_ids.len() || midi.len() != piece_ids.len() {
        return Err(Error::Invalid(format!("cannot export {n} of {} items", piece_ids.len())));
    }
    let io = |e| io_err("embedding export")(e);
    writeln!(w, "{EXPORT_HEADER}").map_err(io)?;
    let mut rows = 0;
    for i in 0..n {
        for (tag, e) in [("audio", &audio[i]), ("midi", &midi[i])] {
            let vals: Vec<String> = e.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{tag}\t{}\t{}", piece_ids[i], vals.join(",")).map_err(io)?;
            rows += 1;
        }
    }
    Ok(rows)
}

pub fn read_embeddings(r: impl BufRead) -> Result<Vec<EmbeddingRow>> {
    let mut lines = r.lines();
    let io = |e| io_err("embedding export")(e);
    let header = lines.next().transpose().map_err(io)?;
    if header.as_deref() != Some(EXPORT_HEADER) {
        return Err(Error::Format("embedding export: missing header".into()));
    }
    let mut out = Vec::new();
    for (no, line) in lines.enumerate() {
        let line = line.map_err(io)?;
        let bad = || Error::Format(format!("embedding export line {}: malformed", no + 2));
        let mut parts = line.split('\t');
        let (Some(modality), Some(pid), Some(vals), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad());
        };
        let values = vals.split(',').map(|v| v.parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>().map_err(|_| bad())?;
        out.push(EmbeddingRow { modality: modality.into(), piece_id: pid.parse().map_err(|_| bad())?, values });
    }
    Ok(out)
}
