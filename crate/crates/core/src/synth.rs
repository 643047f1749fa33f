//! Synthetic labelled datasets: low-pass anchors and parameterized
//! degradations with monotone proxy scores.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::{load_wav, write_manifest, write_wav_f32, AudioExcerpt, RatedPair, SAMPLE_RATE};
use crate::conditioning::{from_mid_side, to_mid_side};
use crate::error::{Error, Result};
use crate::frontend::{erb_rate_to_hz, hz_to_erb_rate, FrontendConfig};
use crate::scalar::Scalar;

pub const LOWPASS_TAPS: usize = 511;
/// Low-pass anchor cutoffs in Hz.
pub const ANCHOR_CUTOFFS: [f64; 2] = [7000.0, 3500.0];
pub const REFERENCE_MOS: f64 = 100.0;
pub const MANIFEST_NAME: &str = "manifest.jsonl";

/// Linear-phase Hann-windowed-sinc low-pass with unit DC gain.
pub fn lowpass_kernel(cutoff_hz: f64, sample_rate: u32) -> Result<Vec<f64>> {
    let nyquist = sample_rate as f64 / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(Error::InvalidCutoff(cutoff_hz));
    }
    let fc = cutoff_hz / sample_rate as f64;
    let mid = (LOWPASS_TAPS / 2) as f64;
    // computed for the first half and mirrored so the phase is exactly linear
    let mut h: Vec<f64> = (0..LOWPASS_TAPS)
        .map(|k| {
            let k = k.min(LOWPASS_TAPS - 1 - k);
            let t = k as f64 - mid;
            let sinc = if t == 0.0 { 2.0 * fc } else { (2.0 * PI * fc * t).sin() / (PI * t) };
            let w = 0.5 - 0.5 * (2.0 * PI * k as f64 / (LOWPASS_TAPS - 1) as f64).cos();
            sinc * w
        })
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    Ok(h)
}

/// Low-pass filters every channel; the filter delay is removed so the output
/// lines up with the input and has the same length.
pub fn lowpass<T: Scalar>(excerpt: &AudioExcerpt<T>, cutoff_hz: f64) -> Result<AudioExcerpt<T>> {
    let h = lowpass_kernel(cutoff_hz, excerpt.sample_rate())?;
    let delay = LOWPASS_TAPS / 2;
    let n = excerpt.num_samples();
    // linear (not circular) convolution by zero-padding to the full output length
    let len = n + LOWPASS_TAPS - 1;
    let mut planner = FftPlanner::<f64>::new();
    let (fwd, inv) = (planner.plan_fft_forward(len), planner.plan_fft_inverse(len));
    let mut kernel: Vec<Complex<f64>> = h.iter().map(|&v| Complex::new(v, 0.0)).collect();
    kernel.resize(len, Complex::new(0.0, 0.0));
    fwd.process(&mut kernel);
    let channels = excerpt
        .channels()
        .iter()
        .map(|x| {
            let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v.as_f64(), 0.0)).collect();
            buf.resize(len, Complex::new(0.0, 0.0));
            fwd.process(&mut buf);
            buf.iter_mut().zip(&kernel).for_each(|(b, k)| *b *= k);
            inv.process(&mut buf);
            buf[delay..delay + n].iter().map(|v| T::lit(v.re / len as f64)).collect()
        })
        .collect();
    AudioExcerpt::new(channels, excerpt.sample_rate())
}

/// Adds white Gaussian noise at `snr_db` relative to the excerpt's mean power;
/// the result is clamped to `[-1, 1]`.
pub fn additive_noise<T: Scalar>(excerpt: &AudioExcerpt<T>, snr_db: f64, rng: &mut impl Rng) -> Result<AudioExcerpt<T>> {
    if !snr_db.is_finite() {
        return Err(Error::InvalidConfig(format!("SNR {snr_db} dB")));
    }
    let samples = (excerpt.num_samples() * excerpt.num_channels()) as f64;
    let power = excerpt.energy().as_f64() / samples;
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let channels = excerpt
        .channels()
        .iter()
        .map(|c| {
            c.iter()
                .map(|&s| {
                    let z: f64 = rng.sample(StandardNormal);
                    T::lit((s.as_f64() + sigma * z).clamp(-1.0, 1.0))
                })
                .collect()
        })
        .collect();
    AudioExcerpt::new(channels, excerpt.sample_rate())
}

/// Removes all content between `lo_hz` and `hi_hz` (whole-signal FFT).
pub fn band_gap_hz<T: Scalar>(excerpt: &AudioExcerpt<T>, lo_hz: f64, hi_hz: f64) -> Result<AudioExcerpt<T>> {
    if !(0.0..=hi_hz).contains(&lo_hz) {
        return Err(Error::InvalidConfig(format!("band gap {lo_hz}..{hi_hz} Hz")));
    }
    let n = excerpt.num_samples();
    let rate = excerpt.sample_rate() as f64;
    let mut planner = FftPlanner::<f64>::new();
    let (fwd, inv) = (planner.plan_fft_forward(n), planner.plan_fft_inverse(n));
    let channels = excerpt
        .channels()
        .iter()
        .map(|c| {
            let mut buf: Vec<Complex<f64>> = c.iter().map(|v| Complex::new(v.as_f64(), 0.0)).collect();
            fwd.process(&mut buf);
            for (k, v) in buf.iter_mut().enumerate() {
                let f = k.min(n - k) as f64 * rate / n as f64;
                if (lo_hz..=hi_hz).contains(&f) {
                    *v = Complex::new(0.0, 0.0);
                }
            }
            inv.process(&mut buf);
            buf.iter().map(|v| T::lit(v.re / n as f64)).collect()
        })
        .collect();
    AudioExcerpt::new(channels, excerpt.sample_rate())
}

/// Frequency span of Gammatone bands `first..=last` (half a band spacing
/// beyond the outer centres).
pub fn band_span_hz(config: &FrontendConfig, first: usize, last: usize) -> Result<(f64, f64)> {
    config.validate()?;
    if first > last || last >= config.num_bands {
        return Err(Error::InvalidConfig(format!(
            "band range {first}..={last} outside 0..{}",
            config.num_bands
        )));
    }
    let lo = hz_to_erb_rate(config.min_freq_hz);
    let step = (hz_to_erb_rate(config.max_freq_hz) - lo) / config.num_bands as f64;
    let edge = |e: f64| erb_rate_to_hz(e).clamp(0.0, config.sample_rate_hz as f64 / 2.0);
    Ok((
        edge(lo + step * (first as f64 - 0.5)),
        edge(lo + step * (last as f64 + 0.5)),
    ))
}

/// Zeroes the frequency span of Gammatone bands `first..=last`.
pub fn band_gap<T: Scalar>(
    excerpt: &AudioExcerpt<T>,
    first: usize,
    last: usize,
    config: &FrontendConfig,
) -> Result<AudioExcerpt<T>> {
    let (lo, hi) = band_span_hz(config, first, last)?;
    band_gap_hz(excerpt, lo, hi)
}

/// Scales the side signal by `1 − fraction`; `fraction = 1` yields dual-mono.
pub fn ms_crosstalk<T: Scalar>(excerpt: &AudioExcerpt<T>, fraction: f64) -> Result<AudioExcerpt<T>> {
    if !excerpt.is_stereo() {
        return Err(Error::NotStereo(excerpt.num_channels()));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!("crosstalk fraction {fraction}")));
    }
    if fraction == 0.0 {
        return Ok(excerpt.clone());
    }
    let (mid, side) = to_mid_side(excerpt.channel(0), excerpt.channel(1))?;
    let keep = T::lit(1.0 - fraction);
    let side: Vec<T> = side.into_iter().map(|s| s * keep).collect();
    let (left, right) = from_mid_side(&mid, &side);
    AudioExcerpt::stereo(left, right, excerpt.sample_rate())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Degradation {
    Lowpass { cutoff_hz: f64 },
    AdditiveNoise { snr_db: f64 },
    BandGap { first_band: usize, last_band: usize },
    MsCrosstalk { fraction: f64 },
}

impl Degradation {
    pub fn kind(&self) -> &'static str {
        match self {
            Degradation::Lowpass { .. } => "lowpass",
            Degradation::AdditiveNoise { .. } => "additive_noise",
            Degradation::BandGap { .. } => "band_gap",
            Degradation::MsCrosstalk { .. } => "ms_crosstalk",
        }
    }

    /// Larger means more degraded, comparable only within one kind.
    pub fn strength(&self) -> f64 {
        match *self {
            Degradation::Lowpass { cutoff_hz } => -cutoff_hz,
            Degradation::AdditiveNoise { snr_db } => -snr_db,
            Degradation::BandGap { first_band, last_band } => (last_band + 1 - first_band) as f64,
            Degradation::MsCrosstalk { fraction } => fraction,
        }
    }

    /// File-name tag, e.g. `lp3500` or `noise20`.
    pub fn tag(&self) -> String {
        match *self {
            Degradation::Lowpass { cutoff_hz } => format!("lp{cutoff_hz}"),
            Degradation::AdditiveNoise { snr_db } => format!("noise{snr_db}"),
            Degradation::BandGap { first_band, last_band } => format!("gap{first_band}-{last_band}"),
            Degradation::MsCrosstalk { fraction } => format!("xtalk{fraction}"),
        }
    }

    pub fn apply<T: Scalar>(
        &self,
        excerpt: &AudioExcerpt<T>,
        frontend: &FrontendConfig,
        rng: &mut impl Rng,
    ) -> Result<AudioExcerpt<T>> {
        match *self {
            Degradation::Lowpass { cutoff_hz } => lowpass(excerpt, cutoff_hz),
            Degradation::AdditiveNoise { snr_db } => additive_noise(excerpt, snr_db, rng),
            Degradation::BandGap { first_band, last_band } => band_gap(excerpt, first_band, last_band, frontend),
            Degradation::MsCrosstalk { fraction } => ms_crosstalk(excerpt, fraction),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    #[serde(flatten)]
    pub degradation: Degradation,
    pub proxy_mos: f64,
}

impl DegradationSpec {
    pub fn new(degradation: Degradation, proxy_mos: f64) -> Self {
        Self { degradation, proxy_mos }
    }
}

/// The 7 kHz and 3.5 kHz low-pass anchors with their proxy scores.
pub fn anchor_specs() -> Vec<DegradationSpec> {
    vec![
        DegradationSpec::new(Degradation::Lowpass { cutoff_hz: ANCHOR_CUTOFFS[0] }, 55.0),
        DegradationSpec::new(Degradation::Lowpass { cutoff_hz: ANCHOR_CUTOFFS[1] }, 30.0),
    ]
}

/// Default non-anchor conditions: noise at 30/20/10 dB SNR and M/S crosstalk 0.5/1.0.
pub fn default_degradations() -> Vec<DegradationSpec> {
    vec![
        DegradationSpec::new(Degradation::AdditiveNoise { snr_db: 30.0 }, 80.0),
        DegradationSpec::new(Degradation::AdditiveNoise { snr_db: 20.0 }, 60.0),
        DegradationSpec::new(Degradation::AdditiveNoise { snr_db: 10.0 }, 35.0),
        DegradationSpec::new(Degradation::MsCrosstalk { fraction: 0.5 }, 70.0),
        DegradationSpec::new(Degradation::MsCrosstalk { fraction: 1.0 }, 50.0),
    ]
}

/// Checks labels lie in `[0, 100]` and strictly decrease with strength within each kind.
pub fn check_monotone(specs: &[DegradationSpec]) -> Result<()> {
    for s in specs {
        if !(0.0..=100.0).contains(&s.proxy_mos) {
            return Err(Error::InvalidConfig(format!("proxy_mos {} outside [0, 100]", s.proxy_mos)));
        }
    }
    for a in specs {
        for b in specs {
            let same_kind = a.degradation.kind() == b.degradation.kind();
            if same_kind && a.degradation.strength() < b.degradation.strength() && a.proxy_mos <= b.proxy_mos {
                return Err(Error::InvalidConfig(format!(
                    "{} ({}) must score above {} ({})",
                    a.degradation.tag(),
                    a.proxy_mos,
                    b.degradation.tag(),
                    b.proxy_mos
                )));
            }
        }
    }
    Ok(())
}

/// A synthetic stereo "music" excerpt: panned harmonic voices with slow
/// envelopes plus partially decorrelated coloured noise. Peak level 0.5.
pub fn synth_source(seconds: f64, seed: u64) -> AudioExcerpt<f32> {
    let rate = SAMPLE_RATE as f64;
    let n = (seconds * rate).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut left = vec![0.0f64; n];
    let mut right = vec![0.0f64; n];
    for _ in 0..3 {
        let f0: f64 = rng.gen_range(110.0..440.0);
        let pan: f64 = rng.gen_range(0.0..std::f64::consts::FRAC_PI_2);
        let (gl, gr) = (pan.cos(), pan.sin());
        let rate_hz: f64 = rng.gen_range(0.3..2.0);
        let phase0: f64 = rng.gen_range(0.0..2.0 * PI);
        let partials: Vec<(f64, f64, f64)> = (1..)
            .map(|k| k as f64 * f0)
            .take_while(|&f| f < 16_000.0)
            .enumerate()
            .map(|(k, f)| (f, 1.0 / (k + 1) as f64, rng.gen_range(0.0..2.0 * PI)))
            .collect();
        for i in 0..n {
            let t = i as f64 / rate;
            let env = 0.6 + 0.4 * (2.0 * PI * rate_hz * t + phase0).sin();
            let v: f64 = partials.iter().map(|&(f, a, p)| a * (2.0 * PI * f * t + p).sin()).sum();
            left[i] += gl * env * v;
            right[i] += gr * env * v;
        }
    }
    // gently coloured noise: a shared component plus independent per-channel parts
    let (mut s, mut l, mut r) = (0.0f64, 0.0f64, 0.0f64);
    let pole = 0.7;
    for i in 0..n {
        let (zs, zl, zr): (f64, f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        s = pole * s + zs;
        l = pole * l + zl;
        r = pole * r + zr;
        left[i] += 0.3 * s + 0.2 * l;
        right[i] += 0.3 * s + 0.2 * r;
    }
    let peak = left.iter().chain(&right).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let g = 0.5 / peak;
    AudioExcerpt::stereo(
        left.iter().map(|v| (v * g) as f32).collect(),
        right.iter().map(|v| (v * g) as f32).collect(),
        SAMPLE_RATE,
    )
    .expect("two equal-length channels")
}

/// Writes `count` synthetic sources named `src00.wav`, `src01.wav`, ...
pub fn write_sources(dir: &Path, count: usize, seconds: f64, seed: u64) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let path = dir.join(format!("src{i:02}.wav"));
            write_wav_f32(&path, &synth_source(seconds, seed.wrapping_add(i as u64)))?;
            Ok(path)
        })
        .collect()
}

/// Sorted `.wav` files directly inside `dir`.
pub fn list_sources(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Error::EmptySource(dir.to_path_buf()));
    }
    Ok(out)
}

/// For every source: a hidden-reference row, both anchors, then one row per
/// spec. Writes degraded WAVs under `out_dir/<source>/` and the manifest to
/// `out_dir/manifest.jsonl`, with paths relative to `out_dir`.
pub fn gen_dataset(source_dir: &Path, out_dir: &Path, specs: &[DegradationSpec], seed: u64) -> Result<Vec<RatedPair>> {
    let sources = list_sources(source_dir)?;
    let mut conditions = anchor_specs();
    conditions.extend_from_slice(specs);
    check_monotone(&conditions)?;
    let frontend = FrontendConfig::default();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let per_source: Vec<Vec<RatedPair>> = sources
        .par_iter()
        .enumerate()
        .map(|(si, src)| {
            let stem = src.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let audio: AudioExcerpt<f32> = load_wav(src)?;
            let dir = out_dir.join(&stem);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let ref_rel = PathBuf::from(&stem).join("reference.wav");
            write_wav_f32(out_dir.join(&ref_rel), &audio.map_samples(|s| s.clamp(-1.0, 1.0)))?;
            let mut rows = vec![RatedPair {
                ref_path: ref_rel.clone(),
                cod_path: ref_rel.clone(),
                mos: REFERENCE_MOS,
                codec: Some("reference".into()),
                bitrate_kbps: None,
                group: Some(stem.clone()),
            }];
            let degraded: Vec<RatedPair> = conditions
                .par_iter()
                .enumerate()
                .map(|(ci, spec)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(((si as u64) << 32) | ci as u64);
                    let out = spec.degradation.apply(&audio, &frontend, &mut rng)?;
                    let rel = PathBuf::from(&stem).join(format!("{}.wav", spec.degradation.tag()));
                    write_wav_f32(out_dir.join(&rel), &out.map_samples(|s| s.clamp(-1.0, 1.0)))?;
                    Ok(RatedPair {
                        ref_path: ref_rel.clone(),
                        cod_path: rel,
                        mos: spec.proxy_mos,
                        codec: Some(spec.degradation.kind().into()),
                        bitrate_kbps: None,
                        group: Some(stem.clone()),
                    })
                })
                .collect::<Result<_>>()?;
            rows.extend(degraded);
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let rows: Vec<RatedPair> = per_source.into_iter().flatten().collect();
    write_manifest(out_dir.join(MANIFEST_NAME), &rows)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_symmetric_with_unit_dc() {
        let h = lowpass_kernel(3500.0, 48_000).unwrap();
        assert_eq!(h.len(), LOWPASS_TAPS);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for k in 0..LOWPASS_TAPS {
            assert_eq!(h[k], h[LOWPASS_TAPS - 1 - k]);
        }
        for bad in [0.0, -5.0, 24_000.0, f64::NAN] {
            assert!(matches!(lowpass_kernel(bad, 48_000), Err(Error::InvalidCutoff(_))));
        }
    }

    #[test]
    fn lowpass_is_delay_compensated() {
        // a 200 Hz tone passes through a 7 kHz low-pass unchanged and undelayed
        let x: Vec<f64> = (0..4800).map(|i| (2.0 * PI * 200.0 * i as f64 / 48_000.0).sin()).collect();
        let y = lowpass(&AudioExcerpt::mono(x.clone(), 48_000).unwrap(), 7000.0).unwrap();
        assert_eq!(y.num_samples(), x.len());
        for i in 600..4200 {
            assert!((y.channel(0)[i] - x[i]).abs() < 1e-4);
        }
    }

    #[test]
    fn crosstalk_extremes() {
        let x = synth_source(0.1, 3).cast::<f64>();
        assert_eq!(ms_crosstalk(&x, 0.0).unwrap(), x);
        let y = ms_crosstalk(&x, 1.0).unwrap();
        let (m, _) = to_mid_side(x.channel(0), x.channel(1)).unwrap();
        assert_eq!(y.channel(0), y.channel(1));
        for (a, b) in y.channel(0).iter().zip(&m) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(matches!(
            ms_crosstalk(&AudioExcerpt::mono(vec![0.0f64; 4], 48_000).unwrap(), 0.5),
            Err(Error::NotStereo(1))
        ));
    }

    #[test]
    fn noise_respects_snr_and_range() {
        let x = synth_source(0.5, 9).cast::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = additive_noise(&x, 20.0, &mut rng).unwrap();
        let diff: f64 = x
            .channels()
            .iter()
            .zip(y.channels())
            .flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q).powi(2)))
            .sum();
        let snr = 10.0 * (x.energy() / diff).log10();
        assert!((snr - 20.0).abs() < 0.3, "{snr}");
        assert!(y.channels().iter().flatten().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn band_span_is_ordered() {
        let cfg = FrontendConfig::default();
        let (lo, hi) = band_span_hz(&cfg, 10, 14).unwrap();
        assert!(lo > 0.0 && lo < hi && hi < 24_000.0);
        assert!(band_span_hz(&cfg, 5, 32).is_err());
    }

    #[test]
    fn default_labels_are_monotone() {
        let mut all = anchor_specs();
        all.extend(default_degradations());
        check_monotone(&all).unwrap();
        all.push(DegradationSpec::new(Degradation::AdditiveNoise { snr_db: 5.0 }, 40.0));
        assert!(check_monotone(&all).is_err());
    }

    #[test]
    fn spec_serialization() {
        let s = DegradationSpec::new(Degradation::MsCrosstalk { fraction: 0.5 }, 70.0);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"kind":"ms_crosstalk","fraction":0.5,"proxy_mos":70.0}"#);
        assert_eq!(serde_json::from_str::<DegradationSpec>(&json).unwrap(), s);
    }
}
