//! WAV loading/writing, pair validation and rated-pair manifests.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Sample rate every excerpt is validated against.
pub const SAMPLE_RATE: u32 = 48_000;

/// Ref/coded length tolerance: one 20 ms hop at 48 kHz.
pub const PAIR_LENGTH_TOLERANCE: usize = 960;

/// Multichannel waveform with samples in [-1, 1], stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioExcerpt<T> {
    channels: Vec<Vec<T>>,
    sample_rate: u32,
}

impl<T: Scalar> AudioExcerpt<T> {
    /// Builds an excerpt, checking equal channel lengths, 1–2 channels and finite samples.
    pub fn new(channels: Vec<Vec<T>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() || channels.len() > 2 {
            return Err(Error::UnsupportedFormat(format!(
                "{} channels (1 or 2 supported)",
                channels.len()
            )));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::ShapeMismatch("channels differ in length".into()));
        }
        if channels.iter().flatten().any(|s| !s.is_finite()) {
            return Err(Error::DegenerateInput("non-finite sample".into()));
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn stereo(left: Vec<T>, right: Vec<T>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![left, right], sample_rate)
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn num_samples(&self) -> usize {
        self.channels[0].len()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_s(&self) -> f64 {
        self.num_samples() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, index: usize) -> &[T] {
        &self.channels[index]
    }

    pub fn channels(&self) -> &[Vec<T>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<T>> {
        self.channels
    }

    pub fn is_stereo(&self) -> bool {
        self.channels.len() == 2
    }

    /// Sum of squared samples over all channels.
    pub fn energy(&self) -> T {
        self.channels.iter().flatten().map(|&s| s * s).sum()
    }

    /// Appends zeros to every channel until `len` samples; no-op when already that long.
    pub(crate) fn pad_tail(&mut self, len: usize) {
        for c in &mut self.channels {
            if c.len() < len {
                c.resize(len, T::zero());
            }
        }
    }

    pub fn map_samples(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|&s| f(s)).collect())
                .collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Converts the element type.
    pub fn cast<U: Scalar>(&self) -> AudioExcerpt<U> {
        AudioExcerpt {
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|&s| U::lit(s.as_f64())).collect())
                .collect(),
            sample_rate: self.sample_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Resample non-48 kHz input with a windowed-sinc interpolator instead of rejecting it.
    pub resample: bool,
}

/// Loads a WAV file, rejecting sample rates other than 48 kHz.
pub fn load_wav<T: Scalar>(path: impl AsRef<Path>) -> Result<AudioExcerpt<T>> {
    load_wav_with(path, LoadOptions::default())
}

pub fn load_wav_with<T: Scalar>(
    path: impl AsRef<Path>,
    options: LoadOptions,
) -> Result<AudioExcerpt<T>> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(Error::UnsupportedFormat(format!(
            "{} channels in {}",
            spec.channels,
            path.display()
        )));
    }
    let scale = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => 32_768.0,
        (hound::SampleFormat::Int, 24) => 8_388_608.0,
        (hound::SampleFormat::Int, 32) => 2_147_483_648.0,
        (hound::SampleFormat::Float, 32) => 1.0,
        (format, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "{bits}-bit {format:?} samples in {}",
                path.display()
            )))
        }
    };

    let nch = spec.channels as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => reader
            .into_samples::<i32>()
            .map(|s| s.map(|v| v as f64 / scale))
            .collect::<Result<_, _>>(),
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>(),
    }
    .map_err(|e| wav_error(path, e))?;

    if !interleaved.len().is_multiple_of(nch) {
        return Err(Error::CorruptFile {
            path: path.to_path_buf(),
            reason: "partial sample frame".into(),
        });
    }
    if interleaved.iter().any(|s| !s.is_finite()) {
        return Err(Error::CorruptFile {
            path: path.to_path_buf(),
            reason: "non-finite sample".into(),
        });
    }

    let frames = interleaved.len() / nch;
    let mut channels = vec![Vec::with_capacity(frames); nch];
    for frame in interleaved.chunks_exact(nch) {
        for (c, &s) in channels.iter_mut().zip(frame) {
            c.push(T::lit(s));
        }
    }

    if spec.sample_rate != SAMPLE_RATE {
        if !options.resample {
            return Err(Error::SampleRateMismatch {
                expected: SAMPLE_RATE,
                found: spec.sample_rate,
            });
        }
        channels = channels
            .iter()
            .map(|c| resample(c, spec.sample_rate, SAMPLE_RATE))
            .collect();
    }
    AudioExcerpt::new(channels, SAMPLE_RATE)
}

fn wav_error(path: &Path, err: hound::Error) -> Error {
    match err {
        // hound reports short reads as `Other`
        hound::Error::IoError(e)
            if matches!(e.kind(), std::io::ErrorKind::UnexpectedEof | std::io::ErrorKind::Other) =>
        {
            Error::CorruptFile {
                path: path.to_path_buf(),
                reason: format!("truncated data ({e})"),
            }
        }
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::Unsupported => {
            Error::UnsupportedFormat(format!("compressed or unknown encoding in {}", path.display()))
        }
        other => Error::CorruptFile {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

/// Writes the excerpt as interleaved IEEE float32.
pub fn write_wav_f32<T: Scalar>(path: impl AsRef<Path>, excerpt: &AudioExcerpt<T>) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: excerpt.num_channels() as u16,
        sample_rate: excerpt.sample_rate(),
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for i in 0..excerpt.num_samples() {
        for c in excerpt.channels() {
            let s = c[i].to_f32().unwrap_or(0.0);
            writer.write_sample(s).map_err(|e| wav_error(path, e))?;
        }
    }
    writer.finalize().map_err(|e| wav_error(path, e))
}

/// Windowed-sinc (Hann, 32 zero crossings) sample-rate conversion.
pub fn resample<T: Scalar>(input: &[T], from_hz: u32, to_hz: u32) -> Vec<T> {
    if from_hz == to_hz || input.is_empty() {
        return input.to_vec();
    }
    const ZERO_CROSSINGS: f64 = 32.0;
    let ratio = to_hz as f64 / from_hz as f64;
    let cutoff = ratio.min(1.0);
    let half_width = ZERO_CROSSINGS / cutoff;
    let out_len = (input.len() as f64 * ratio).round() as usize;
    let n = input.len() as isize;
    (0..out_len)
        .map(|m| {
            let t = m as f64 / ratio;
            let lo = (t - half_width).ceil() as isize;
            let hi = (t + half_width).floor() as isize;
            let mut acc = 0.0;
            for j in lo.max(0)..=hi.min(n - 1) {
                let d = t - j as f64;
                let x = cutoff * d;
                let sinc = if x == 0.0 {
                    1.0
                } else {
                    (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
                };
                let w = 0.5 + 0.5 * (std::f64::consts::PI * d / half_width).cos();
                acc += input[j as usize].as_f64() * cutoff * sinc * w;
            }
            T::lit(acc)
        })
        .collect()
}

/// Checks channel layout and length agreement, tail-padding the shorter signal.
pub fn validate_pair<T: Scalar>(
    mut reference: AudioExcerpt<T>,
    mut coded: AudioExcerpt<T>,
) -> Result<(AudioExcerpt<T>, AudioExcerpt<T>)> {
    if reference.num_channels() != coded.num_channels() {
        return Err(Error::ChannelMismatch {
            reference: reference.num_channels(),
            coded: coded.num_channels(),
        });
    }
    if reference.sample_rate() != coded.sample_rate() {
        return Err(Error::SampleRateMismatch {
            expected: reference.sample_rate(),
            found: coded.sample_rate(),
        });
    }
    let (r, c) = (reference.num_samples(), coded.num_samples());
    if r.abs_diff(c) > PAIR_LENGTH_TOLERANCE {
        return Err(Error::LengthMismatch {
            reference: r,
            coded: c,
            tolerance: PAIR_LENGTH_TOLERANCE,
        });
    }
    let len = r.max(c);
    reference.pad_tail(len);
    coded.pad_tail(len);
    Ok((reference, coded))
}

/// One rated reference/coded pair from a listening test or generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatedPair {
    pub ref_path: PathBuf,
    pub cod_path: PathBuf,
    pub mos: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codec: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bitrate_kbps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

impl RatedPair {
    /// Reference and coded paths, with relative paths taken relative to `base`.
    pub fn resolved_paths(&self, base: &Path) -> (PathBuf, PathBuf) {
        (base.join(&self.ref_path), base.join(&self.cod_path))
    }

    pub fn codec_tag(&self) -> &str {
        self.codec.as_deref().unwrap_or("untagged")
    }
}

/// Reads a line-delimited JSON manifest. Blank lines are skipped; line numbers are 1-based.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<RatedPair>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: RatedPair = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            reason: e.to_string(),
        })?;
        if !(0.0..=100.0).contains(&row.mos) {
            return Err(Error::Range {
                line: line_no,
                mos: row.mos,
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_manifest(path: impl AsRef<Path>, rows: &[RatedPair]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for row in rows {
        let line = serde_json::to_string(row).expect("RatedPair serializes");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Directory that relative manifest paths are resolved against.
pub fn manifest_base(path: &Path) -> PathBuf {
    path.parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}
