use serde::{Deserialize, Serialize};

use super::layers::{conv_out_len, AvgPool2d};
use crate::conditioning::InputLayout;
use crate::error::{Error, Result};

/// How branch convolutions and the pool branch are padded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// `kernel / 2` on each side.
    Same,
    /// Every branch yields the output of an unpadded convolution with this
    /// kernel extent; smaller kernels crop, larger kernels pad.
    Valid { extent: (usize, usize) },
}

impl Padding {
    pub fn amount(self, kernel: (usize, usize)) -> (isize, isize) {
        match self {
            Padding::Same => ((kernel.0 / 2) as isize, (kernel.1 / 2) as isize),
            Padding::Valid { extent } => (
                (kernel.0 as isize - extent.0 as isize) / 2,
                (kernel.1 as isize - extent.1 as isize) / 2,
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl PoolSpec {
    pub fn layer(self) -> AvgPool2d {
        AvgPool2d {
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
        }
    }
}

/// One Inception block: horizontal, vertical and 1×1 convolution branches plus
/// an average-pool branch with a 1×1 projection, concatenated along channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InceptionConfig {
    pub name: String,
    /// `(bands, frames)` kernel of the horizontal branch.
    pub horizontal: (usize, usize),
    pub vertical: (usize, usize),
    pub branch_channels: usize,
    pub pool_kernel: (usize, usize),
    pub pool_channels: usize,
    pub stride: (usize, usize),
    pub padding: Padding,
    /// Optional average pool applied to the concatenated output.
    pub block_pool: Option<PoolSpec>,
    /// Whether a squeeze-and-excitation unit follows the block.
    pub squeeze_excite: bool,
}

impl InceptionConfig {
    pub fn out_channels(&self) -> usize {
        3 * self.branch_channels + self.pool_channels
    }

    pub fn branch_pool(&self) -> Result<AvgPool2d> {
        let (ph, pw) = self.padding.amount(self.pool_kernel);
        if ph < 0 || pw < 0 {
            return Err(Error::InvalidConfig(format!(
                "{}: pool kernel {:?} smaller than valid extent",
                self.name, self.pool_kernel
            )));
        }
        Ok(AvgPool2d {
            kernel: self.pool_kernel,
            stride: self.stride,
            padding: (ph as usize, pw as usize),
        })
    }

    /// Output `(bands, frames)` for an input of `(h, w)`, or `None` if too small.
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let branch = |k: (usize, usize)| {
            let (ph, pw) = self.padding.amount(k);
            conv_out_len(h, k.0, self.stride.0, ph).zip(conv_out_len(w, k.1, self.stride.1, pw))
        };
        let outs = [
            branch(self.horizontal)?,
            branch(self.vertical)?,
            branch((1, 1))?,
            branch(self.pool_kernel)?,
        ];
        if outs.iter().any(|o| *o != outs[0]) {
            return None;
        }
        let (oh, ow) = outs[0];
        match self.block_pool {
            Some(p) => p.layer().output_hw(oh, ow).ok(),
            None => Some((oh, ow)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layout: InputLayout,
    pub bands: usize,
    pub blocks: Vec<InceptionConfig>,
    pub se_reduction: usize,
    pub pooled: (usize, usize),
    /// Widths of the fully connected layers; the last must be 1.
    pub head: Vec<usize>,
}

/// Per-stage output shape `(name, channels, bands, frames)`.
pub type StageShape = (String, usize, usize, usize);

impl ModelConfig {
    /// The full-size network for the given input layout.
    pub fn full(layout: InputLayout) -> Self {
        let block = |name: &str,
                     h: (usize, usize),
                     v: (usize, usize),
                     pool: (usize, usize),
                     pool_channels: usize,
                     stride: (usize, usize),
                     padding: Padding,
                     block_pool: Option<PoolSpec>,
                     squeeze_excite: bool| InceptionConfig {
            name: name.into(),
            horizontal: h,
            vertical: v,
            branch_channels: 64,
            pool_kernel: pool,
            pool_channels,
            stride,
            padding,
            block_pool,
            squeeze_excite,
        };
        Self {
            layout,
            bands: 32,
            blocks: vec![
                block(
                    "a1",
                    (3, 7),
                    (7, 3),
                    (5, 5),
                    16,
                    (2, 4),
                    Padding::Same,
                    Some(PoolSpec {
                        kernel: (1, 5),
                        stride: (1, 4),
                        padding: (0, 2),
                    }),
                    false,
                ),
                block("a2", (3, 7), (7, 3), (5, 5), 32, (1, 2), Padding::Same, None, true),
                block("b", (3, 5), (5, 3), (5, 5), 64, (1, 2), Padding::Same, None, true),
                block(
                    "c",
                    (3, 3),
                    (5, 5),
                    (3, 3),
                    64,
                    (1, 2),
                    Padding::Valid { extent: (3, 3) },
                    None,
                    true,
                ),
            ],
            se_reduction: 16,
            pooled: (4, 4),
            head: vec![3200, 512, 1],
        }
    }

    pub fn stereo() -> Self {
        Self::full(InputLayout::Stereo)
    }

    pub fn mono() -> Self {
        Self::full(InputLayout::Mono)
    }

    /// Same topology with narrow branches and a small head, for desk-scale training.
    pub fn compact(layout: InputLayout) -> Self {
        let mut cfg = Self::full(layout);
        for (b, proj) in cfg.blocks.iter_mut().zip([2, 4, 8, 8]) {
            b.branch_channels = 8;
            b.pool_channels = proj;
        }
        cfg.se_reduction = 4;
        cfg.head = vec![32, 16, 1];
        cfg
    }

    /// A minimal network covering every layer type, sized for gradient checks
    /// on `8 bands × 16 frames` inputs.
    pub fn tiny(layout: InputLayout) -> Self {
        let mut cfg = Self::compact(layout);
        cfg.bands = 8;
        for (b, proj) in cfg.blocks.iter_mut().zip([1, 2, 2, 2]) {
            b.branch_channels = 2;
            b.pool_channels = proj;
        }
        cfg.blocks[0].stride = (2, 2);
        cfg.blocks[0].block_pool = Some(PoolSpec {
            kernel: (1, 3),
            stride: (1, 1),
            padding: (0, 1),
        });
        cfg.blocks[1].stride = (1, 1);
        cfg.se_reduction = 2;
        cfg.pooled = (2, 2);
        cfg.head = vec![6, 4, 1];
        cfg
    }

    pub fn in_channels(&self) -> usize {
        self.layout.channels()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.blocks.is_empty() {
            return bad("at least one Inception block required".into());
        }
        if self.bands == 0 || self.pooled.0 == 0 || self.pooled.1 == 0 || self.se_reduction == 0 {
            return bad("bands, pooled size and SE reduction must be positive".into());
        }
        if self.head.last() != Some(&1) || self.head.contains(&0) {
            return bad(format!("head widths {:?} must be positive and end in 1", self.head));
        }
        for b in &self.blocks {
            let kernels = [b.horizontal, b.vertical, b.pool_kernel];
            if kernels.iter().any(|k| k.0 % 2 == 0 || k.1 % 2 == 0) {
                return bad(format!("{}: kernels must have odd extents", b.name));
            }
            if b.branch_channels == 0 || b.pool_channels == 0 || b.stride.0 == 0 || b.stride.1 == 0 {
                return bad(format!("{}: channels and strides must be positive", b.name));
            }
            b.branch_pool()?;
        }
        Ok(())
    }

    /// Output shape after each block (and SE unit) for an input of `frames` frames.
    pub fn stage_shapes(&self, frames: usize) -> Result<Vec<StageShape>> {
        let (mut h, mut w) = (self.bands, frames);
        let mut out = Vec::new();
        for b in &self.blocks {
            let (oh, ow) = b.output_hw(h, w).ok_or_else(|| {
                Error::ShapeMismatch(format!("block {} cannot process {h}×{w}", b.name))
            })?;
            h = oh;
            w = ow;
            out.push((b.name.clone(), b.out_channels(), h, w));
            if b.squeeze_excite {
                out.push((format!("{}_se", b.name), b.out_channels(), h, w));
            }
        }
        Ok(out)
    }

    /// Smallest frame count the network accepts.
    pub fn min_frames(&self) -> usize {
        (1..=100_000)
            .find(|&t| self.stage_shapes(t).is_ok())
            .unwrap_or(usize::MAX)
    }

    /// Width of the flattened pooled features.
    pub fn pooled_features(&self) -> usize {
        self.blocks.last().map_or(0, InceptionConfig::out_channels) * self.pooled.0 * self.pooled.1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_stage_shapes() {
        let cfg = ModelConfig::stereo();
        cfg.validate().unwrap();
        let shapes = cfg.stage_shapes(2824).unwrap();
        let channels: Vec<_> = shapes.iter().map(|s| s.1).collect();
        assert_eq!(channels, vec![208, 224, 224, 256, 256, 256, 256]);
        let bands: Vec<_> = shapes.iter().map(|s| s.2).collect();
        assert_eq!(bands, vec![16, 16, 16, 16, 16, 14, 14]);
        let frames: Vec<_> = shapes.iter().map(|s| s.3).collect();
        assert_eq!(frames, vec![177, 89, 89, 45, 45, 22, 22]);
        assert_eq!(cfg.pooled_features(), 4096);
    }

    #[test]
    fn minimum_frames() {
        let cfg = ModelConfig::stereo();
        let t = cfg.min_frames();
        assert!(cfg.stage_shapes(t).is_ok());
        assert!(cfg.stage_shapes(t - 1).is_err());
        assert!(ModelConfig::tiny(InputLayout::Stereo).stage_shapes(16).is_ok());
    }

    #[test]
    fn validation_catches_bad_configs() {
        let mut cfg = ModelConfig::stereo();
        cfg.head = vec![10, 2];
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::stereo();
        cfg.blocks[0].horizontal = (2, 7);
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::stereo();
        cfg.blocks[3].pool_kernel = (1, 1);
        assert!(cfg.validate().is_err());
    }
}
