//! STFT front-end and audio descriptors.

pub mod a4;
pub mod attractor;
mod audio;
pub mod bands;
pub mod chroma;
pub mod descriptor;
pub mod stft;

use serde::{Deserialize, Serialize};

pub use a4::a4_descriptor;
pub use attractor::{a7_descriptor, a9_descriptor};
pub use audio::{add_noise_snr, AudioSegment, AudioSidecar, Snr};
pub use bands::{band_edges, Band};
pub use chroma::{a8_descriptor, chroma};
pub use descriptor::{DescriptorKind, DescriptorTensor};
pub use stft::{stft_magnitude, Spectrogram};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftParams {
    pub nfft: usize,
    pub hop: usize,
}

impl StftParams {
    pub const FULL: Self = Self { nfft: 2048, hop: 512 };
    pub const TOY: Self = Self { nfft: 256, hop: 64 };

    pub fn frames_for(&self, samples: usize) -> usize {
        samples / self.hop + 1
    }
}

/// Compute an audio-side descriptor of the given kind.
pub fn audio_descriptor(kind: DescriptorKind, audio: &AudioSegment, stft: StftParams) -> Result<DescriptorTensor> {
    let spec = stft_magnitude(&audio.samples, audio.sample_rate, stft.nfft, stft.hop)?;
    match kind {
        DescriptorKind::A4 => Ok(a4::a4_from_spectrogram(&spec)),
        DescriptorKind::A7 => Ok(attractor::a7_from_spectrogram(&spec)),
        DescriptorKind::A8 => Ok(chroma::a8_from_spectrogram(&spec)),
        DescriptorKind::A9 => Ok(attractor::a9_from_spectrogram(&spec)),
        DescriptorKind::D4 => Err(Error::Invalid("D4 is computed from MIDI, not audio".into())),
    }
}
