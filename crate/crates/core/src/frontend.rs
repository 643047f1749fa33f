//! Gammatone log-power spectrogram: an FFT power spectrogram weighted by
//! Gammatone magnitude responses on an ERB-rate spaced filterbank.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{matmul, Scalar};

/// Magic bytes of the spectrogram matrix file.
pub const GTSG_MAGIC: &[u8; 4] = b"GTSG";

/// Gammatone filter order used for the spectral weights.
const GAMMATONE_ORDER: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontendConfig {
    pub window_s: f64,
    pub hop_s: f64,
    pub num_bands: usize,
    pub min_freq_hz: f64,
    pub max_freq_hz: f64,
    pub sample_rate_hz: u32,
    pub floor_db: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            window_s: 0.080,
            hop_s: 0.020,
            num_bands: 32,
            min_freq_hz: 50.0,
            max_freq_hz: 24_000.0,
            sample_rate_hz: 48_000,
            floor_db: -100.0,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.hop_s > 0.0 && self.window_s > self.hop_s) {
            return bad("require window_s > hop_s > 0");
        }
        if self.num_bands == 0 {
            return bad("num_bands must be at least 1");
        }
        if !(self.min_freq_hz > 0.0 && self.min_freq_hz < self.max_freq_hz && self.max_freq_hz <= nyquist) {
            return bad("require 0 < min_freq_hz < max_freq_hz <= sample_rate/2");
        }
        if !self.floor_db.is_finite() {
            return bad("floor_db must be finite");
        }
        if self.hop_samples() == 0 || self.window_samples() <= self.hop_samples() {
            return bad("window/hop shorter than one sample");
        }
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        (self.window_s * self.sample_rate_hz as f64).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_s * self.sample_rate_hz as f64).round() as usize
    }

    /// `ceil(num_samples / hop)`.
    pub fn num_frames(&self, num_samples: usize) -> usize {
        num_samples.div_ceil(self.hop_samples())
    }
}

/// Glasberg & Moore equivalent rectangular bandwidth in Hz.
pub fn erb_hz(freq_hz: f64) -> f64 {
    24.7 * (4.37 * freq_hz / 1000.0 + 1.0)
}

/// ERB-rate (number of ERBs below `freq_hz`).
pub fn hz_to_erb_rate(freq_hz: f64) -> f64 {
    21.4 * (1.0 + 0.00437 * freq_hz).log10()
}

pub fn erb_rate_to_hz(erb_rate: f64) -> f64 {
    (10f64.powf(erb_rate / 21.4) - 1.0) / 0.00437
}

/// Center frequencies plus a `num_bands × num_bins` weight matrix (row-major, unit row sums).
#[derive(Debug, Clone, PartialEq)]
pub struct FilterbankSpec<T> {
    pub center_freqs_hz: Vec<f64>,
    pub num_bins: usize,
    pub weights: Vec<T>,
}

impl<T: Scalar> FilterbankSpec<T> {
    pub fn num_bands(&self) -> usize {
        self.center_freqs_hz.len()
    }

    pub fn row(&self, band: usize) -> &[T] {
        &self.weights[band * self.num_bins..(band + 1) * self.num_bins]
    }
}

/// Designs the ERB-spaced Gammatone weighting for the configured FFT size.
pub fn design_filterbank<T: Scalar>(config: &FrontendConfig) -> Result<FilterbankSpec<T>> {
    config.validate()?;
    let fft_len = config.window_samples();
    let num_bins = fft_len / 2 + 1;
    let bin_hz = config.sample_rate_hz as f64 / fft_len as f64;

    let lo = hz_to_erb_rate(config.min_freq_hz);
    let step = (hz_to_erb_rate(config.max_freq_hz) - lo) / config.num_bands as f64;
    let centers: Vec<f64> = (0..config.num_bands)
        .map(|k| {
            if k == 0 {
                config.min_freq_hz
            } else {
                erb_rate_to_hz(lo + step * k as f64)
            }
        })
        .collect();

    let mut weights = Vec::with_capacity(centers.len() * num_bins);
    for &fc in &centers {
        let b = 1.019 * erb_hz(fc);
        let row: Vec<f64> = (0..num_bins)
            .map(|k| {
                let x = (k as f64 * bin_hz - fc) / b;
                // squared magnitude of an order-4 Gammatone around its center
                (1.0 + x * x).powi(-GAMMATONE_ORDER)
            })
            .collect();
        let sum: f64 = row.iter().sum();
        weights.extend(row.iter().map(|w| T::lit(w / sum)));
    }
    Ok(FilterbankSpec {
        center_freqs_hz: centers,
        num_bins,
        weights,
    })
}

/// Band-by-frame log power in dB, row-major (`num_bands × num_frames`).
#[derive(Debug, Clone, PartialEq)]
pub struct GammatoneSpectrogram<T> {
    pub values_db: Vec<T>,
    pub num_bands: usize,
    pub num_frames: usize,
    pub config: FrontendConfig,
}

impl<T: Scalar> GammatoneSpectrogram<T> {
    pub fn get(&self, band: usize, frame: usize) -> T {
        self.values_db[band * self.num_frames + frame]
    }

    pub fn band(&self, band: usize) -> &[T] {
        &self.values_db[band * self.num_frames..(band + 1) * self.num_frames]
    }

    /// Writes the GTSG matrix file: magic, u32 bands, u32 frames, u32 reserved, f32 LE payload.
    pub fn write_gtsg(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut buf = Vec::with_capacity(16 + 4 * self.values_db.len());
        buf.extend_from_slice(GTSG_MAGIC);
        buf.extend_from_slice(&(self.num_bands as u32).to_le_bytes());
        buf.extend_from_slice(&(self.num_frames as u32).to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        for v in &self.values_db {
            buf.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
        out.write_all(&buf).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads a GTSG file into `(bands, frames, row-major values)`.
pub fn read_gtsg(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f32>)> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let corrupt = |reason: &str| Error::CorruptFile {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 16 || &bytes[..4] != GTSG_MAGIC {
        return Err(corrupt("missing GTSG header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (bands, frames) = (u32_at(4), u32_at(8));
    if bytes.len() != 16 + 4 * bands * frames {
        return Err(corrupt("payload length does not match header"));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((bands, frames, values))
}

/// Reusable spectrogram engine: filterbank, analysis window and FFT plan.
pub struct GammatoneFrontend<T: Scalar> {
    config: FrontendConfig,
    filterbank: FilterbankSpec<T>,
    window: Vec<T>,
    power_scale: T,
    fft: Arc<dyn Fft<T>>,
}

impl<T: Scalar> GammatoneFrontend<T> {
    pub fn new(config: FrontendConfig) -> Result<Self> {
        let filterbank = design_filterbank(&config)?;
        let n = config.window_samples();
        let window: Vec<T> = (0..n)
            .map(|i| {
                T::lit(0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            })
            .collect();
        let window_sum: f64 = window.iter().map(|w| w.as_f64()).sum();
        // a full-scale sinusoid centred on a bin has power 0.5
        let power_scale = T::lit(2.0 / (window_sum * window_sum));
        let fft = FftPlanner::new().plan_fft_forward(n);
        Ok(Self {
            config,
            filterbank,
            window,
            power_scale,
            fft,
        })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &FilterbankSpec<T> {
        &self.filterbank
    }

    /// Per-frame one-sided power spectra, `num_frames × num_bins` row-major.
    fn power_frames(&self, samples: &[T]) -> Vec<T> {
        let hop = self.config.hop_samples();
        let n = self.window.len();
        let bins = self.filterbank.num_bins;
        let frames = self.config.num_frames(samples.len());
        let mut power = vec![T::zero(); frames * bins];
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        let mut scratch = vec![Complex::new(T::zero(), T::zero()); self.fft.get_inplace_scratch_len()];
        for (f, row) in power.chunks_exact_mut(bins).enumerate() {
            let start = f * hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                let s = samples.get(start + i).copied().unwrap_or_else(T::zero);
                *slot = Complex::new(s * self.window[i], T::zero());
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, x) in row.iter_mut().zip(&buf) {
                *p = x.norm_sqr() * self.power_scale;
            }
        }
        power
    }

    /// Computes the log-power Gammatone spectrogram of one channel.
    pub fn compute(&self, samples: &[T]) -> Result<GammatoneSpectrogram<T>> {
        if samples.is_empty() {
            return Err(Error::EmptySignal);
        }
        let bands = self.filterbank.num_bands();
        let bins = self.filterbank.num_bins;
        let frames = self.config.num_frames(samples.len());
        let power = self.power_frames(samples);
        let mut band_power = vec![T::zero(); bands * frames];
        matmul(
            bands,
            bins,
            frames,
            &self.filterbank.weights,
            false,
            &power,
            true,
            T::zero(),
            &mut band_power,
        );

        let floor = T::lit(self.config.floor_db);
        let eps = T::lit(10f64.powf(self.config.floor_db / 10.0));
        let ten = T::lit(10.0);
        let values_db = band_power
            .into_iter()
            .map(|p| if p > eps { (ten * p.log10()).max(floor) } else { floor })
            .collect();
        Ok(GammatoneSpectrogram {
            values_db,
            num_bands: bands,
            num_frames: frames,
            config: self.config,
        })
    }

    /// Like [`compute`](Self::compute) but checks the signal's sample rate first.
    pub fn compute_at_rate(&self, samples: &[T], sample_rate: u32) -> Result<GammatoneSpectrogram<T>> {
        if sample_rate != self.config.sample_rate_hz {
            return Err(Error::SampleRateMismatch {
                expected: self.config.sample_rate_hz,
                found: sample_rate,
            });
        }
        self.compute(samples)
    }
}

/// One-shot spectrogram of a single channel sampled at `sample_rate`.
pub fn compute_spectrogram<T: Scalar>(
    samples: &[T],
    sample_rate: u32,
    config: &FrontendConfig,
) -> Result<GammatoneSpectrogram<T>> {
    GammatoneFrontend::new(*config)?.compute_at_rate(samples, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_filterbank_layout() {
        let fb = design_filterbank::<f64>(&FrontendConfig::default()).unwrap();
        assert_eq!(fb.num_bands(), 32);
        assert_eq!(fb.center_freqs_hz[0], 50.0);
        assert!(fb.center_freqs_hz.windows(2).all(|w| w[0] < w[1]));
        assert!(fb.center_freqs_hz[31] < 24_000.0);
        assert_eq!(fb.num_bins, 1921);
        for b in 0..32 {
            let row = fb.row(b);
            assert!(row.iter().all(|&w| w >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_band() {
        let cfg = FrontendConfig {
            num_bands: 1,
            ..Default::default()
        };
        let fb = design_filterbank::<f64>(&cfg).unwrap();
        assert_eq!(fb.center_freqs_hz, vec![50.0]);
        assert!((fb.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs() {
        let base = FrontendConfig::default();
        for cfg in [
            FrontendConfig { num_bands: 0, ..base },
            FrontendConfig { hop_s: 0.1, ..base },
            FrontendConfig { min_freq_hz: 0.0, ..base },
            FrontendConfig { max_freq_hz: 30_000.0, ..base },
        ] {
            assert!(matches!(design_filterbank::<f32>(&cfg), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn erb_rate_inverse() {
        for f in [50.0, 440.0, 1000.0, 12_345.0, 24_000.0] {
            assert!((erb_rate_to_hz(hz_to_erb_rate(f)) - f).abs() < 1e-8 * f);
        }
    }

    #[test]
    fn silence_maps_to_floor() {
        let cfg = FrontendConfig::default();
        let s = compute_spectrogram(&vec![0.0f64; 48_000], 48_000, &cfg).unwrap();
        assert_eq!(s.num_frames, 50);
        assert!(s.values_db.iter().all(|&v| v == -100.0));
    }

    #[test]
    fn rejects_empty_and_wrong_rate() {
        let cfg = FrontendConfig::default();
        assert!(matches!(compute_spectrogram::<f32>(&[], 48_000, &cfg), Err(Error::EmptySignal)));
        assert!(matches!(
            compute_spectrogram(&[0.0f32; 10], 44_100, &cfg),
            Err(Error::SampleRateMismatch { .. })
        ));
    }

    #[test]
    fn gtsg_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.gtsg");
        let sig: Vec<f32> = (0..5000).map(|i| (i as f32 * 0.1).sin() * 0.3).collect();
        let s = compute_spectrogram(&sig, 48_000, &FrontendConfig::default()).unwrap();
        s.write_gtsg(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"GTSG");
        assert_eq!(bytes.len(), 16 + 4 * 32 * 6);
        let (b, f, v) = read_gtsg(&p).unwrap();
        assert_eq!((b, f), (32, 6));
        assert_eq!(v, s.values_db);
    }
}
