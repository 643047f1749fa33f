//! Turns a reference/coded pair into the stacked spectrogram tensor the network consumes.

use serde::{Deserialize, Serialize};

use std::path::Path;

use crate::audio::{load_wav, validate_pair, AudioExcerpt, RatedPair};
use crate::error::{Error, Result};
use crate::frontend::{FrontendConfig, GammatoneFrontend};
use crate::scalar::Scalar;

/// Which signal planes are stacked into the network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputLayout {
    /// `[ref_L, cod_L, ref_R, cod_R, ref_M, cod_M, ref_S, cod_S]`
    Stereo,
    /// `[ref_L, cod_L, ref_R, cod_R, ref_S, cod_S]`
    StereoNoMid,
    /// `[ref, cod]` of a mono signal (the mid projection for stereo input).
    Mono,
}

/// Signal kinds in stacking order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signal {
    Left,
    Right,
    Mid,
    Side,
    Mono,
}

impl InputLayout {
    pub fn signals(self) -> &'static [Signal] {
        match self {
            InputLayout::Stereo => &[Signal::Left, Signal::Right, Signal::Mid, Signal::Side],
            InputLayout::StereoNoMid => &[Signal::Left, Signal::Right, Signal::Side],
            InputLayout::Mono => &[Signal::Mono],
        }
    }

    /// Number of input planes (two per signal: reference then coded).
    pub fn channels(self) -> usize {
        2 * self.signals().len()
    }
}

/// Left, right, mid and side signals of one stereo excerpt.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet<T> {
    pub left: Vec<T>,
    pub right: Vec<T>,
    pub mid: Vec<T>,
    pub side: Vec<T>,
}

impl<T: Scalar> ChannelSet<T> {
    pub fn from_excerpt(excerpt: &AudioExcerpt<T>) -> Result<Self> {
        if !excerpt.is_stereo() {
            return Err(Error::NotStereo(excerpt.num_channels()));
        }
        let (left, right) = (excerpt.channel(0).to_vec(), excerpt.channel(1).to_vec());
        let (mid, side) = to_mid_side(&left, &right)?;
        Ok(Self {
            left,
            right,
            mid,
            side,
        })
    }

    fn signal(&self, s: Signal) -> &[T] {
        match s {
            Signal::Left => &self.left,
            Signal::Right => &self.right,
            Signal::Mid | Signal::Mono => &self.mid,
            Signal::Side => &self.side,
        }
    }
}

/// `M = 0.5 (L + R)`, `S = 0.5 (L - R)`.
pub fn to_mid_side<T: Scalar>(left: &[T], right: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    if left.len() != right.len() {
        return Err(Error::LengthMismatch {
            reference: left.len(),
            coded: right.len(),
            tolerance: 0,
        });
    }
    let half = T::lit(0.5);
    let mid = left.iter().zip(right).map(|(&l, &r)| half * (l + r)).collect();
    let side = left.iter().zip(right).map(|(&l, &r)| half * (l - r)).collect();
    Ok((mid, side))
}

/// Inverse of [`to_mid_side`]: `L = M + S`, `R = M - S`.
pub fn from_mid_side<T: Scalar>(mid: &[T], side: &[T]) -> (Vec<T>, Vec<T>) {
    let left = mid.iter().zip(side).map(|(&m, &s)| m + s).collect();
    let right = mid.iter().zip(side).map(|(&m, &s)| m - s).collect();
    (left, right)
}

/// Zero-pads every channel to `target_samples`, splitting the deficit evenly
/// (the odd sample goes to the tail).
pub fn pad_to_length<T: Scalar>(excerpt: &AudioExcerpt<T>, target_samples: usize) -> Result<AudioExcerpt<T>> {
    let len = excerpt.num_samples();
    if len > target_samples {
        return Err(Error::TooLong {
            len,
            target: target_samples,
        });
    }
    let front = (target_samples - len) / 2;
    let channels = excerpt
        .channels()
        .iter()
        .map(|c| {
            let mut padded = vec![T::zero(); target_samples];
            padded[front..front + len].copy_from_slice(c);
            padded
        })
        .collect();
    AudioExcerpt::new(channels, excerpt.sample_rate())
}

/// Stereo with both channels equal to the mono input.
pub fn dual_mono<T: Scalar>(mono: &AudioExcerpt<T>) -> Result<AudioExcerpt<T>> {
    if mono.num_channels() != 1 {
        return Err(Error::NotMono(mono.num_channels()));
    }
    let x = mono.channel(0).to_vec();
    AudioExcerpt::stereo(x.clone(), x, mono.sample_rate())
}

/// Exchanges left and right channels.
pub fn swap_channels<T: Scalar>(excerpt: &AudioExcerpt<T>) -> Result<AudioExcerpt<T>> {
    if !excerpt.is_stereo() {
        return Err(Error::NotStereo(excerpt.num_channels()));
    }
    AudioExcerpt::stereo(
        excerpt.channel(1).to_vec(),
        excerpt.channel(0).to_vec(),
        excerpt.sample_rate(),
    )
}

/// A reference/coded pair loaded into memory together with its score.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedPair<T> {
    pub reference: AudioExcerpt<T>,
    pub coded: AudioExcerpt<T>,
    pub mos: f64,
}

/// Loads one manifest row; with `dual_mono`, mono files are widened to `L = R`.
pub fn load_pair<T: Scalar>(row: &RatedPair, base: &Path, dual_mono: bool) -> Result<LoadedPair<T>> {
    let (ref_path, cod_path) = row.resolved_paths(base);
    let widen = |x: AudioExcerpt<T>| {
        if dual_mono && x.num_channels() == 1 {
            self::dual_mono(&x)
        } else {
            Ok(x)
        }
    };
    Ok(LoadedPair {
        reference: widen(load_wav(&ref_path)?)?,
        coded: widen(load_wav(&cod_path)?)?,
        mos: row.mos,
    })
}

/// L/R swap augmentation: both signals have their channels exchanged, the score is kept.
pub fn swap_lr<T: Scalar>(pair: &LoadedPair<T>) -> Result<LoadedPair<T>> {
    Ok(LoadedPair {
        reference: swap_channels(&pair.reference)?,
        coded: swap_channels(&pair.coded)?,
        mos: pair.mos,
    })
}

/// `channels × bands × frames` input stack, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTensor<T> {
    pub data: Vec<T>,
    pub channels: usize,
    pub bands: usize,
    pub frames: usize,
}

impl<T: Scalar> InputTensor<T> {
    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.bands, self.frames]
    }

    pub fn plane(&self, channel: usize) -> &[T] {
        let n = self.bands * self.frames;
        &self.data[channel * n..(channel + 1) * n]
    }

    /// New tensor whose plane `i` is this tensor's plane `order[i]`.
    pub fn permute_planes(&self, order: &[usize]) -> Self {
        let data = order.iter().flat_map(|&c| self.plane(c).iter().copied()).collect();
        Self {
            data,
            channels: order.len(),
            bands: self.bands,
            frames: self.frames,
        }
    }
}

/// Builds input tensors with a shared frontend.
pub struct TensorBuilder<T: Scalar> {
    frontend: GammatoneFrontend<T>,
    layout: InputLayout,
    min_frames: usize,
}

impl<T: Scalar> TensorBuilder<T> {
    pub fn new(config: FrontendConfig, layout: InputLayout) -> Result<Self> {
        Ok(Self {
            frontend: GammatoneFrontend::new(config)?,
            layout,
            min_frames: 1,
        })
    }

    /// Variable-length inputs shorter than this are zero-padded on both sides.
    pub fn with_min_frames(mut self, min_frames: usize) -> Self {
        self.min_frames = min_frames.max(1);
        self
    }

    pub fn layout(&self) -> InputLayout {
        self.layout
    }

    pub fn frontend(&self) -> &GammatoneFrontend<T> {
        &self.frontend
    }

    pub fn min_frames(&self) -> usize {
        self.min_frames
    }

    /// Stacks spectrograms of the reference and coded signals.
    ///
    /// With `fixed_frames`, both excerpts are first centre-padded to
    /// `fixed_frames × hop` samples.
    pub fn build(
        &self,
        reference: &AudioExcerpt<T>,
        coded: &AudioExcerpt<T>,
        fixed_frames: Option<usize>,
    ) -> Result<InputTensor<T>> {
        let (reference, coded) = validate_pair(reference.clone(), coded.clone())?;
        let hop = self.frontend.config().hop_samples();
        let target_frames = match fixed_frames {
            Some(frames) => Some(frames),
            None if self.frontend.config().num_frames(reference.num_samples()) < self.min_frames => {
                Some(self.min_frames)
            }
            None => None,
        };
        let (reference, coded) = match target_frames {
            Some(frames) => (
                pad_to_length(&reference, frames * hop)?,
                pad_to_length(&coded, frames * hop)?,
            ),
            None => (reference, coded),
        };

        let ref_set = self.channel_set(&reference)?;
        let cod_set = self.channel_set(&coded)?;
        let rate = reference.sample_rate();
        let mut data = Vec::new();
        let mut bands = 0;
        let mut frames = 0;
        for &sig in self.layout.signals() {
            for set in [&ref_set, &cod_set] {
                let spec = self.frontend.compute_at_rate(set.signal(sig), rate)?;
                bands = spec.num_bands;
                frames = spec.num_frames;
                data.extend_from_slice(&spec.values_db);
            }
        }
        Ok(InputTensor {
            data,
            channels: self.layout.channels(),
            bands,
            frames,
        })
    }

    fn channel_set(&self, excerpt: &AudioExcerpt<T>) -> Result<ChannelSet<T>> {
        match (self.layout, excerpt.num_channels()) {
            (InputLayout::Mono, 1) => {
                let x = excerpt.channel(0).to_vec();
                let zeros = vec![T::zero(); x.len()];
                Ok(ChannelSet {
                    left: x.clone(),
                    right: x.clone(),
                    mid: x,
                    side: zeros,
                })
            }
            _ => ChannelSet::from_excerpt(excerpt),
        }
    }
}

/// One-shot tensor construction.
pub fn build_input_tensor<T: Scalar>(
    reference: &AudioExcerpt<T>,
    coded: &AudioExcerpt<T>,
    config: &FrontendConfig,
    layout: InputLayout,
    fixed_frames: Option<usize>,
) -> Result<InputTensor<T>> {
    TensorBuilder::new(*config, layout)?.build(reference, coded, fixed_frames)
}
