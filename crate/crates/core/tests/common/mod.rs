#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use stereoqual::model::{Params, Tensor4};
use stereoqual::synth::{default_degradations, gen_dataset, write_sources};
use stereoqual::{AudioExcerpt, InputLayout, Loss, ModelConfig, QualityNet, RatedPair, SmoothL1};

/// Gaussian noise at roughly -12 dBFS.
pub fn noise(samples: usize, channels: usize, seed: u64) -> AudioExcerpt<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chans = (0..channels)
        .map(|_| (0..samples).map(|_| 0.25 * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    AudioExcerpt::new(chans, 48_000).unwrap()
}

pub fn tone(freq: f64, samples: usize, amplitude: f64) -> Vec<f64> {
    (0..samples)
        .map(|i| amplitude * (2.0 * std::f64::consts::PI * freq * i as f64 / 48_000.0).sin())
        .collect()
}

/// Synthetic sources of `seconds` each plus the default dataset under `dir/data`.
pub fn synthetic_dataset(dir: &Path, sources: usize, seconds: f64, seed: u64) -> Vec<RatedPair> {
    write_sources(&dir.join("src"), sources, seconds, seed).unwrap();
    gen_dataset(&dir.join("src"), &dir.join("data"), &default_degradations(), seed).unwrap()
}

pub struct GradReport {
    pub checked: usize,
    pub within: usize,
    pub max_err: f64,
    pub tensors: usize,
}

/// Relative error with a magnitude floor so exactly-zero gradients (conv
/// biases ahead of batch norm) compare on an absolute scale.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central differences against analytic gradients on the tiny network,
/// sampling up to `per_tensor` entries of every trainable tensor.
pub fn check_gradients(layout: InputLayout, per_tensor: usize, seed: u64) -> GradReport {
    let cfg = ModelConfig::tiny(layout);
    let mut net = QualityNet::<f64>::build(cfg.clone(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let (n, frames) = (3, 16);
    let len = n * cfg.in_channels() * cfg.bands * frames;
    let data = (0..len).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let x = Tensor4::from_vec(n, cfg.in_channels(), cfg.bands, frames, data).unwrap();
    let targets = [0.2, 0.9, 0.55];
    let loss = SmoothL1 { beta: 0.05 };
    let (_, grads) = net.gradients(&x, &targets, &loss).unwrap();

    let mut names = Vec::new();
    net.visit(&mut |name, t, trainable| {
        if trainable {
            names.push((name, t.len()));
        }
    });
    let loss_at = |net: &mut QualityNet<f64>, name: &str, i: usize, delta: f64| {
        net.visit_mut(&mut |n, t, _| {
            if n == name {
                t.data[i] += delta;
            }
        });
        let (preds, _) = net.forward_train(&x).unwrap();
        loss.batch_mean(&preds, &targets)
    };
    let h = 1e-6;
    let mut report = GradReport {
        checked: 0,
        within: 0,
        max_err: 0.0,
        tensors: names.len(),
    };
    for (name, len) in &names {
        let analytic = grads.get(name).unwrap_or_else(|| panic!("no gradient for {name}"));
        for _ in 0..per_tensor.min(*len) {
            let i = rng.gen_range(0..*len);
            let up = loss_at(&mut net, name, i, h);
            let down = loss_at(&mut net, name, i, -2.0 * h);
            loss_at(&mut net, name, i, h);
            let err = rel_err(analytic.data[i], (up - down) / (2.0 * h));
            report.checked += 1;
            report.within += usize::from(err < 1e-4);
            report.max_err = report.max_err.max(err);
        }
    }
    report
}
