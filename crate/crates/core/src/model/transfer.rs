//! Initializing a stereo network from a trained mono network.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::layers::Params;
use super::net::QualityNet;
use super::tensor::Tensor;
use crate::conditioning::{InputLayout, Signal};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Number of leading Inception blocks copied from the mono network.
pub const TRANSFERRED_BLOCKS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    /// Mono input kernels are copied into every non-side plane pair; side
    /// kernels keep their fresh initialization.
    ReplicateRandomS,
    /// Mono input kernels are split evenly across the non-side plane pairs and
    /// side kernels are zeroed, so dual-mono inputs reproduce the mono
    /// network's first-block pre-activations.
    MonoPreserving,
}

/// Builds a stereo network whose first two Inception blocks (and input
/// normalization) come from `mono`; everything else is freshly initialized from `seed`.
pub fn transfer_from_mono<T: Scalar>(
    mono: &QualityNet<T>,
    stereo_config: &ModelConfig,
    mode: TransferMode,
    seed: u64,
) -> Result<QualityNet<T>> {
    let incompatible = |m: String| Err(Error::ShapeIncompatible(m));
    if mono.config().layout != InputLayout::Mono {
        return incompatible(format!("source layout is {:?}, expected mono", mono.config().layout));
    }
    if stereo_config.layout == InputLayout::Mono {
        return incompatible("target layout must be stereo".into());
    }
    if mono.config().bands != stereo_config.bands {
        return incompatible(format!(
            "band counts differ: {} vs {}",
            mono.config().bands,
            stereo_config.bands
        ));
    }
    if mono.blocks.len() < TRANSFERRED_BLOCKS || stereo_config.blocks.len() < TRANSFERRED_BLOCKS {
        return incompatible("both networks need at least two Inception blocks".into());
    }
    for i in 0..TRANSFERRED_BLOCKS {
        if mono.config().blocks[i] != stereo_config.blocks[i] {
            return incompatible(format!("block {} configurations differ", stereo_config.blocks[i].name));
        }
    }

    let mut stereo = QualityNet::build(stereo_config.clone(), seed)?;
    let mut source: BTreeMap<String, Tensor<T>> = BTreeMap::new();
    for block in &mono.blocks[..TRANSFERRED_BLOCKS] {
        block.visit(&mut |name, t, _| {
            source.insert(name, t.clone());
        });
    }
    let input_weights: Vec<String> = stereo.blocks[0]
        .input_convs()
        .iter()
        .map(|c| format!("{}.weight", c.name))
        .collect();

    let signals = stereo_config.layout.signals();
    let shared = signals.iter().filter(|&&s| s != Signal::Side).count();
    let scale = match mode {
        TransferMode::ReplicateRandomS => T::one(),
        TransferMode::MonoPreserving => T::one() / T::lit(shared as f64),
    };

    let mut problem = None;
    for block in &mut stereo.blocks[..TRANSFERRED_BLOCKS] {
        block.visit_mut(&mut |name, target, _| {
            let Some(src) = source.get(&name) else {
                problem.get_or_insert(format!("mono network lacks {name}"));
                return;
            };
            if src.shape == target.shape {
                *target = src.clone();
            } else if input_weights.contains(&name) {
                if let Err(e) = splice_input_kernel(src, target, signals, scale, mode) {
                    problem.get_or_insert(e);
                }
            } else {
                problem.get_or_insert(format!("{name}: {:?} vs {:?}", src.shape, target.shape));
            }
        });
    }
    if let Some(p) = problem {
        return Err(Error::ShapeIncompatible(p));
    }
    stereo.norm = mono.norm.clone();
    Ok(stereo)
}

/// Writes the mono `[out, 2, kh, kw]` kernel into each plane pair of the stereo kernel.
fn splice_input_kernel<T: Scalar>(
    mono: &Tensor<T>,
    stereo: &mut Tensor<T>,
    signals: &[Signal],
    scale: T,
    mode: TransferMode,
) -> std::result::Result<(), String> {
    let (out, kh, kw) = (stereo.shape[0], stereo.shape[2], stereo.shape[3]);
    if mono.shape != [out, 2, kh, kw] || stereo.shape[1] != 2 * signals.len() {
        return Err(format!("input kernel {:?} cannot seed {:?}", mono.shape, stereo.shape));
    }
    let k = kh * kw;
    let in_ch = stereo.shape[1];
    for o in 0..out {
        let src = &mono.data[o * 2 * k..(o + 1) * 2 * k];
        for (s, &signal) in signals.iter().enumerate() {
            let start = (o * in_ch + 2 * s) * k;
            let dst = &mut stereo.data[start..start + 2 * k];
            match (signal, mode) {
                (Signal::Side, TransferMode::ReplicateRandomS) => {}
                (Signal::Side, TransferMode::MonoPreserving) => dst.fill(T::zero()),
                _ => {
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d = v * scale;
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_layout_after_replication() {
        let cfg = ModelConfig::compact(InputLayout::Stereo);
        let mono = QualityNet::<f32>::build(ModelConfig::compact(InputLayout::Mono), 1).unwrap();
        let fresh = QualityNet::<f32>::build(cfg.clone(), 2).unwrap();
        let st = transfer_from_mono(&mono, &cfg, TransferMode::ReplicateRandomS, 2).unwrap();
        let (m, s, f) = (
            &mono.blocks[0].horizontal.conv.weight,
            &st.blocks[0].horizontal.conv.weight,
            &fresh.blocks[0].horizontal.conv.weight,
        );
        assert_eq!(m.shape, vec![8, 2, 3, 7]);
        assert_eq!(s.shape, vec![8, 8, 3, 7]);
        let k = 21;
        for o in 0..8 {
            for pair in 0..3 {
                assert_eq!(
                    &s.data[(o * 8 + 2 * pair) * k..(o * 8 + 2 * pair + 2) * k],
                    &m.data[o * 2 * k..(o + 1) * 2 * k]
                );
            }
            assert_eq!(&s.data[(o * 8 + 6) * k..(o * 8 + 8) * k], &f.data[(o * 8 + 6) * k..(o * 8 + 8) * k]);
        }
        // later blocks and head are the fresh initialization
        assert_eq!(st.blocks[2].horizontal.conv.weight, fresh.blocks[2].horizontal.conv.weight);
        assert_eq!(st.head[0].weight, fresh.head[0].weight);
        assert_eq!(st.blocks[1].vertical.conv.weight, mono.blocks[1].vertical.conv.weight);
    }

    #[test]
    fn rejects_non_mono_source() {
        let cfg = ModelConfig::compact(InputLayout::Stereo);
        let src = QualityNet::<f32>::build(cfg.clone(), 1).unwrap();
        assert!(matches!(
            transfer_from_mono(&src, &cfg, TransferMode::MonoPreserving, 0),
            Err(Error::ShapeIncompatible(_))
        ));
        let mono = QualityNet::<f32>::build(ModelConfig::compact(InputLayout::Mono), 1).unwrap();
        assert!(matches!(
            transfer_from_mono(&mono, &ModelConfig::stereo(), TransferMode::MonoPreserving, 0),
            Err(Error::ShapeIncompatible(_))
        ));
    }
}
