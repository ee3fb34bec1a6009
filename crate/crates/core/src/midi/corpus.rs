use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::midi::{render_audio, MidiSegment, NoteEvent, SynthParams};
use crate::rng::{below, normal, sub_rng, uniform, XRng};
use crate::signal::AudioSegment;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_pieces: usize,
    pub n_composers: usize,
    pub segments_per_piece: usize,
    pub sample_rate: u32,
    pub segment_s: f64,
    /// Spacing between consecutive segment starts within a piece.
    pub hop_s: f64,
    pub max_notes: usize,
    pub synth: SynthParams,
}


impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_pieces: 30,
            n_composers: 3,
            segments_per_piece: 10,
            sample_rate: 4000,
            segment_s: 0.5,
            hop_s: 0.5,
            max_notes: 64,
            synth: SynthParams::default(),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_pieces == 0 || self.segments_per_piece == 0 {
            return Err(Error::Config("corpus would contain zero items".into()));
        }
        if self.n_composers == 0 || self.n_composers > self.n_pieces {
            return Err(Error::Config(format!("{} composers for {} pieces", self.n_composers, self.n_pieces)));
        }
        if !(self.segment_s > 0.0 && self.hop_s > 0.0) || self.sample_rate == 0 || self.max_notes == 0 {
            return Err(Error::Config("segment length, hop, sample rate and max_notes must be positive".into()));
        }
        self.synth.validate()
    }

    pub fn segment_samples(&self) -> usize {
        (self.segment_s * self.sample_rate as f64).round() as usize
    }

    pub fn n_items(&self) -> usize {
        self.n_pieces * self.segments_per_piece
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusItem {
    pub piece_id: usize,
    pub composer_id: usize,
    pub segment_index: usize,
    pub audio: AudioSegment,
    pub midi: MidiSegment,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub seed: u64,
    pub items: Vec<CorpusItem>,
}

/// Sampling profile shared by every piece of one synthetic composer.
#[derive(Clone, Copy, Debug)]
struct Composer {
    register: f64,
    spread: f64,
    notes_per_s: f64,
    dyad_prob: f64,
    velocity: f64,
    legato: f64,
}

impl Composer {
    fn sample(rng: &mut XRng) -> Self {
        Self {
            register: 48.0 + 24.0 * uniform(rng),
            spread: 4.0 + 6.0 * uniform(rng),
            notes_per_s: 6.0 + 8.0 * uniform(rng),
            dyad_prob: 0.4 * uniform(rng),
            velocity: 60.0 + 50.0 * uniform(rng),
            legato: 0.6 + 0.9 * uniform(rng),
        }
    }
}

/// Note list for a whole piece: a short interval motif and rhythm cell
/// repeated with small variations around the piece's register.
fn piece_notes(c: &Composer, length_s: f64, rng: &mut XRng) -> Vec<NoteEvent> {
    let center = c.register + 3.0 * normal(rng);
    let motif: Vec<i32> = (0..3 + below(rng, 4)).map(|_| below(rng, 15) as i32 - 7).collect();
    let base_ioi = 1.0 / c.notes_per_s;
    let rhythm: Vec<f64> = (0..2 + below(rng, 3)).map(|_| base_ioi * (0.5 + uniform(rng))).collect();
    let piece_velocity = c.velocity + 8.0 * normal(rng);
    let lo = (center - 2.0 * c.spread).max(24.0);
    let hi = (center + 2.0 * c.spread).min(96.0);

    let mut notes = Vec::new();
    let mut pitch = center;
    let mut t = 0.0;
    let mut j = 0;
    while t < length_s {
        let step = motif[j % motif.len()] + if uniform(rng) < 0.15 { below(rng, 5) as i32 - 2 } else { 0 };
        pitch += step as f64;
        if pitch > hi || pitch < lo {
            pitch -= 2.0 * step as f64;
            pitch = pitch.clamp(lo, hi);
        }
        let ioi = rhythm[j % rhythm.len()];
        let velocity = (piece_velocity + 6.0 * normal(rng)).round().clamp(20.0, 127.0) as u8;
        let duration_s = (ioi * c.legato * (0.8 + 0.4 * uniform(rng))).max(0.03);
        let p = pitch.round() as u8;
        notes.push(NoteEvent { pitch: p, velocity, duration_s, onset_s: t });
        if uniform(rng) < c.dyad_prob {
            let third = [3u8, 4, 7][below(rng, 3)];
            notes.push(NoteEvent { pitch: (p + third).min(108), velocity, duration_s, onset_s: t });
        }
        t += ioi;
        j += 1;
    }
    notes
}

fn segment_events(notes: &[NoteEvent], start: f64, length: f64, rng: &mut XRng) -> Vec<NoteEvent> {
    let mut ev: Vec<NoteEvent> = notes
        .iter()
        .filter(|n| n.onset_s >= start && n.onset_s < start + length)
        .map(|n| NoteEvent { onset_s: n.onset_s - start, ..*n })
        .collect();
    if ev.is_empty() {
        let nearest = notes
            .iter()
            .min_by(|a, b| (a.onset_s - start).abs().total_cmp(&(b.onset_s - start).abs()))
            .copied()
            .unwrap_or(NoteEvent { pitch: 60, velocity: 80, duration_s: 0.2, onset_s: 0.0 });
        ev.push(NoteEvent { onset_s: length * 0.25 * uniform(rng), ..nearest });
    }
    ev
}

/// Deterministic synthetic corpus. Pieces draw from a composer profile and
/// each piece is cut into `segments_per_piece` windows; every window's audio
/// is rendered from its own notes and stored at f32 precision.
pub fn generate_corpus(config: &CorpusConfig, seed: u64) -> Result<Corpus> {
    config.validate()?;
    let composers: Vec<Composer> =
        (0..config.n_composers).map(|c| Composer::sample(&mut sub_rng(seed, &format!("composer/{c}")))).collect();
    let length_s = (config.segments_per_piece - 1) as f64 * config.hop_s + config.segment_s;
    let mut items = Vec::with_capacity(config.n_items());
    for piece_id in 0..config.n_pieces {
        let composer_id = piece_id % config.n_composers;
        let rng = &mut sub_rng(seed, &format!("piece/{piece_id}"));
        let notes = piece_notes(&composers[composer_id], length_s, rng);
        for segment_index in 0..config.segments_per_piece {
            let start = segment_index as f64 * config.hop_s;
            let mut ev = segment_events(&notes, start, config.segment_s, rng);
            ev.truncate(config.max_notes);
            let midi = MidiSegment::new(ev, config.max_notes)?;
            let mut audio = render_audio(&midi, &config.synth, config.sample_rate, config.segment_s)?;
            audio.samples.iter_mut().for_each(|x| *x = *x as f32 as f64);
            items.push(CorpusItem { piece_id, composer_id, segment_index, audio, midi });
        }
    }
    Ok(Corpus { config: config.clone(), seed, items })
}

/// Shift the audio against its MIDI by `shift_samples`, zero-filling.
pub fn temporal_shift(item: &CorpusItem, shift_samples: isize) -> Result<CorpusItem> {
    if shift_samples.unsigned_abs() >= item.audio.len() {
        return Err(Error::Invalid(format!("shift {shift_samples} not shorter than {} samples", item.audio.len())));
    }
    Ok(CorpusItem { audio: item.audio.shifted(shift_samples), ..item.clone() })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLine {
    piece_id: usize,
    composer_id: usize,
    segment_index: usize,
    audio_offset: usize,
    audio_len: usize,
    /// `[pitch, velocity, duration_s, onset_s]` per note.
    events: Vec<(u8, u8, f64, f64)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusHeader {
    seed: u64,
    config: CorpusConfig,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const AUDIO_FILE: &str = "audio.f32";
pub const HEADER_FILE: &str = "corpus.json";

impl Corpus {
    /// Indices of training and held-out items; the last `val_frac` of
    /// pieces (at least one) are held out.
    pub fn split(&self, val_frac: f64) -> (Vec<usize>, Vec<usize>) {
        let n = self.config.n_pieces;
        let n_val = ((n as f64 * val_frac).round() as usize).clamp(1, n.saturating_sub(1).max(1));
        let first_val = n - n_val;
        (0..self.items.len()).partition(|&i| self.items[i].piece_id < first_val)
    }

    /// Write `corpus.json`, `manifest.jsonl` and one concatenated PCM file.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let header = dir.join(HEADER_FILE);
        let h = CorpusHeader { seed: self.seed, config: self.config.clone() };
        std::fs::write(&header, serde_json::to_vec_pretty(&h)?).map_err(io_err(&header))?;

        let manifest = dir.join(MANIFEST_FILE);
        let mut w = BufWriter::new(std::fs::File::create(&manifest).map_err(io_err(&manifest))?);
        let mut samples = Vec::new();
        for item in &self.items {
            let line = ManifestLine {
                piece_id: item.piece_id,
                composer_id: item.composer_id,
                segment_index: item.segment_index,
                audio_offset: samples.len(),
                audio_len: item.audio.len(),
                events: item.midi.events.iter().map(|e| (e.pitch, e.velocity, e.duration_s, e.onset_s)).collect(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n").map_err(io_err(&manifest))?;
            samples.extend_from_slice(&item.audio.samples);
        }
        w.flush().map_err(io_err(&manifest))?;
        AudioSegment::new(samples, self.config.sample_rate).write_fixture(dir.join(AUDIO_FILE))
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let header = dir.join(HEADER_FILE);
        let h: CorpusHeader = serde_json::from_slice(&std::fs::read(&header).map_err(io_err(&header))?)?;
        h.config.validate()?;
        let audio = AudioSegment::read_fixture(dir.join(AUDIO_FILE))?;
        let manifest = dir.join(MANIFEST_FILE);
        let r = BufReader::new(std::fs::File::open(&manifest).map_err(io_err(&manifest))?);
        let mut items = Vec::new();
        for line in r.lines() {
            let line = line.map_err(io_err(&manifest))?;
            if line.trim().is_empty() {
                continue;
            }
            let m: ManifestLine = serde_json::from_str(&line)?;
            let samples = audio
                .samples
                .get(m.audio_offset..m.audio_offset + m.audio_len)
                .ok_or_else(|| Error::Format(format!("audio range {}+{} out of bounds", m.audio_offset, m.audio_len)))?
                .to_vec();
            let events = m
                .events
                .iter()
                .map(|&(pitch, velocity, duration_s, onset_s)| NoteEvent { pitch, velocity, duration_s, onset_s })
                .collect();
            items.push(CorpusItem {
                piece_id: m.piece_id,
                composer_id: m.composer_id,
                segment_index: m.segment_index,
                audio: AudioSegment::new(samples, h.config.sample_rate),
                midi: MidiSegment::new(events, h.config.max_notes)?,
            });
        }
        Ok(Self { config: h.config, seed: h.seed, items })
    }
}
