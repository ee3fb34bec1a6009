use crate::error::{Error, Result};

/// Octave band boundaries in Hz.
pub const BAND_HZ: [(f64, f64); 8] = [
    (47.0, 94.0),
    (94.0, 188.0),
    (188.0, 375.0),
    (375.0, 750.0),
    (750.0, 1500.0),
    (1500.0, 3000.0),
    (3000.0, 6000.0),
    (6000.0, 12000.0),
];

/// One octave band: Hz range and the half-open STFT bin range `[bin_lo, bin_hi)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Band {
    pub lo_hz: f64,
    pub hi_hz: f64,
    pub bin_lo: usize,
    pub bin_hi: usize,
}

impl Band {
    pub fn is_empty(&self) -> bool {
        self.bin_hi <= self.bin_lo
    }
}

/// Bins for band `index` at the given resolution. The Hz ranges are fixed;
/// bins are the nearest bin to each edge, and a band reaching Nyquist
/// extends through the last bin. Bands above Nyquist come back empty.
pub fn band_edges(index: usize, sample_rate: u32, nfft: usize) -> Result<Band> {
    let &(lo_hz, hi_hz) = BAND_HZ
        .get(index)
        .ok_or_else(|| Error::Invalid(format!("band index {index} outside 0..=7")))?;
    let n_bins = nfft / 2 + 1;
    let df = sample_rate as f64 / nfft as f64;
    let nyquist = sample_rate as f64 / 2.0;
    let bin_lo = ((lo_hz / df).round() as usize).min(n_bins);
    let bin_hi = if hi_hz >= nyquist { n_bins } else { ((hi_hz / df).round() as usize).min(n_bins) };
    Ok(Band { lo_hz, hi_hz, bin_lo, bin_hi: bin_hi.max(bin_lo) })
}

/// All eight bands.
pub fn band_table(sample_rate: u32, nfft: usize) -> [Band; 8] {
    std::array::from_fn(|i| band_edges(i, sample_rate, nfft).expect("index in range"))
}
