use super::config::ModelConfig;
use super::inception::{InceptionBlock, InceptionCache};
use super::layers::{
    relu_backward, relu_inplace, AdaptiveAvgPool2d, Linear, Params, SeCache, SqueezeExcite, Visitor,
    VisitorMut,
};
use super::tensor::{Gradients, Tensor, Tensor4};
use crate::conditioning::InputTensor;
use crate::error::{Error, Result};
use crate::loss::Loss;
use crate::scalar::Scalar;

/// Per-band standardization of the dB input, shared by every input plane.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Scalar> InputNorm<T> {
    pub fn identity(bands: usize) -> Self {
        Self {
            mean: vec![T::zero(); bands],
            std: vec![T::one(); bands],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.mean.iter().all(|&m| m == T::zero()) && self.std.iter().all(|&s| s == T::one())
    }

    /// Mean and standard deviation per band over every plane and frame of `inputs`.
    pub fn fit(inputs: &[&InputTensor<T>], bands: usize) -> Result<Self> {
        let mut sum = vec![0.0f64; bands];
        let mut sq = vec![0.0f64; bands];
        let mut count = 0usize;
        for x in inputs {
            if x.bands != bands {
                return Err(Error::ShapeMismatch(format!("{} bands, expected {bands}", x.bands)));
            }
            for c in 0..x.channels {
                let plane = x.plane(c);
                for b in 0..bands {
                    for &v in &plane[b * x.frames..(b + 1) * x.frames] {
                        let v = v.as_f64();
                        sum[b] += v;
                        sq[b] += v * v;
                    }
                }
            }
            count += x.channels * x.frames;
        }
        if count == 0 {
            return Err(Error::DegenerateInput("no frames to fit normalization".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| T::lit((s / n - m * m).max(0.0).sqrt().max(1e-3)))
            .collect();
        Ok(Self {
            mean: mean.into_iter().map(T::lit).collect(),
            std,
        })
    }

    pub fn apply(&self, x: &mut Tensor4<T>) -> Result<()> {
        if x.h != self.mean.len() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} bands, normalization expects {}",
                x.h,
                self.mean.len()
            )));
        }
        let w = x.w;
        for plane in x.data.chunks_exact_mut(x.h * w) {
            for (b, row) in plane.chunks_exact_mut(w).enumerate() {
                let (m, inv) = (self.mean[b], T::one() / self.std[b]);
                for v in row {
                    *v = (*v - m) * inv;
                }
            }
        }
        Ok(())
    }
}

/// The Inception/SE regression network.
pub struct QualityNet<T> {
    config: ModelConfig,
    pub norm: InputNorm<T>,
    pub blocks: Vec<InceptionBlock<T>>,
    pub squeeze_excite: Vec<Option<SqueezeExcite<T>>>,
    pool: AdaptiveAvgPool2d,
    pub head: Vec<Linear<T>>,
}

/// Intermediate values kept for the backward pass.
pub struct NetCache<T> {
    n: usize,
    block_inputs: Vec<Tensor4<T>>,
    block_caches: Vec<InceptionCache<T>>,
    se_inputs: Vec<Option<(Tensor4<T>, SeCache<T>)>>,
    pooled_from: [usize; 4],
    head_inputs: Vec<Vec<T>>,
    head_outputs: Vec<Vec<T>>,
}

impl<T: Scalar> QualityNet<T> {
    /// Constructs the network with seeded fan-in uniform weights.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut blocks = Vec::new();
        let mut squeeze_excite = Vec::new();
        let mut ch = config.in_channels();
        for b in &config.blocks {
            blocks.push(InceptionBlock::new(b, ch, seed)?);
            ch = b.out_channels();
            squeeze_excite.push(
                b.squeeze_excite
                    .then(|| SqueezeExcite::new(&format!("{}_se", b.name), ch, config.se_reduction, seed)),
            );
        }
        let mut head = Vec::new();
        let mut width = config.pooled_features();
        for (i, &out) in config.head.iter().enumerate() {
            head.push(Linear::new(&format!("fc{}", i + 1), width, out, seed));
            width = out;
        }
        Ok(Self {
            norm: InputNorm::identity(config.bands),
            pool: AdaptiveAvgPool2d {
                output: config.pooled,
            },
            config,
            blocks,
            squeeze_excite,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn min_frames(&self) -> usize {
        self.config.min_frames()
    }

    /// Number of trainable scalars.
    pub fn count_params(&self) -> usize {
        let mut total = 0;
        self.visit(&mut |_, t, trainable| {
            if trainable {
                total += t.len();
            }
        });
        total
    }

    /// Trainable parameter counts per tensor, in visiting order.
    pub fn param_counts(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        self.visit(&mut |name, t, trainable| {
            if trainable {
                out.push((name, t.len()));
            }
        });
        out
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit(&mut |name, t, _| out.push((name, t.clone())));
        out
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, t, _| ok &= t.is_finite());
        ok && self.norm.mean.iter().chain(&self.norm.std).all(|v| v.is_finite())
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        if x.c != self.config.in_channels() || x.h != self.config.bands {
            return Err(Error::ShapeMismatch(format!(
                "input {}×{}×{} does not match model ({} channels × {} bands)",
                x.c,
                x.h,
                x.w,
                self.config.in_channels(),
                self.config.bands
            )));
        }
        let min = self.min_frames();
        if x.w < min {
            return Err(Error::ShapeMismatch(format!("{} frames, model needs at least {min}", x.w)));
        }
        Ok(())
    }

    fn normalized(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(x)?;
        let mut x = x.clone();
        self.norm.apply(&mut x)?;
        Ok(x)
    }

    /// Evaluation-mode forward pass over a batch; one score per item.
    pub fn forward_batch(&self, x: &Tensor4<T>) -> Result<Vec<T>> {
        let mut h = self.normalized(x)?;
        for (block, se) in self.blocks.iter().zip(&self.squeeze_excite) {
            h = block.forward_eval(&h)?;
            if let Some(se) = se {
                h = se.forward_eval(h)?;
            }
        }
        let pooled = self.pool.forward(&h);
        let n = pooled.n;
        let mut feats = pooled.data;
        for (i, layer) in self.head.iter().enumerate() {
            feats = layer.forward(&feats, n)?;
            if i + 1 < self.head.len() {
                relu_inplace(&mut feats);
            }
        }
        Ok(feats)
    }

    /// Raw network output for one input (evaluation mode).
    pub fn forward(&self, input: &InputTensor<T>) -> Result<T> {
        Ok(self.forward_batch(&stack_inputs(&[input])?)?[0])
    }

    /// Pre-batch-norm outputs of the first block's four convolutions.
    pub fn first_block_pre_activations(&self, input: &InputTensor<T>) -> Result<[Tensor4<T>; 4]> {
        let x = self.normalized(&stack_inputs(&[input])?)?;
        self.blocks[0].pre_activations(&x)
    }

    /// Training-mode forward: batch statistics in batch norm, running stats updated.
    pub fn forward_train(&mut self, x: &Tensor4<T>) -> Result<(Vec<T>, NetCache<T>)> {
        let mut h = self.normalized(x)?;
        let mut block_inputs = Vec::new();
        let mut block_caches = Vec::new();
        let mut se_inputs = Vec::new();
        for (block, se) in self.blocks.iter_mut().zip(&self.squeeze_excite) {
            let (y, cache) = block.forward_train(&h)?;
            block_inputs.push(std::mem::replace(&mut h, y));
            block_caches.push(cache);
            match se {
                Some(se) => {
                    let (y, cache) = se.forward_train(&h)?;
                    se_inputs.push(Some((std::mem::replace(&mut h, y), cache)));
                }
                None => se_inputs.push(None),
            }
        }
        let pooled_from = h.dims();
        let pooled = self.pool.forward(&h);
        let n = pooled.n;
        let mut feats = pooled.data;
        let mut head_inputs = Vec::new();
        let mut head_outputs = Vec::new();
        for (i, layer) in self.head.iter().enumerate() {
            let mut y = layer.forward(&feats, n)?;
            if i + 1 < self.head.len() {
                relu_inplace(&mut y);
            }
            head_inputs.push(std::mem::replace(&mut feats, y.clone()));
            head_outputs.push(y);
        }
        Ok((
            feats,
            NetCache {
                n,
                block_inputs,
                block_caches,
                se_inputs,
                pooled_from,
                head_inputs,
                head_outputs,
            },
        ))
    }

    /// Reverse pass given d loss / d output for each batch item.
    pub fn backward(&self, cache: &NetCache<T>, d_out: &[T]) -> Gradients<T> {
        let mut grads = Gradients::new();
        let n = cache.n;
        let mut d = d_out.to_vec();
        let last = self.head.len() - 1;
        for i in (0..self.head.len()).rev() {
            if i != last {
                relu_backward(&cache.head_outputs[i], &mut d);
            }
            d = self.head[i].backward(&cache.head_inputs[i], &d, n, &mut grads);
        }
        let [_, c, _, _] = cache.pooled_from;
        let (ph, pw) = self.config.pooled;
        let d = Tensor4::from_vec(n, c, ph, pw, d).expect("pooled gradient shape");
        let mut d = self.pool.backward(cache.pooled_from, &d);
        for i in (0..self.blocks.len()).rev() {
            if let (Some(se), Some((se_in, se_cache))) = (&self.squeeze_excite[i], &cache.se_inputs[i]) {
                d = se.backward(se_in, se_cache, &d, &mut grads);
            }
            match self.blocks[i].backward(&cache.block_inputs[i], &cache.block_caches[i], d, i > 0, &mut grads) {
                Some(dx) => d = dx,
                None => break,
            }
        }
        grads
    }

    /// Mean batch loss and its exact gradients with respect to every trainable tensor.
    pub fn gradients(
        &mut self,
        inputs: &Tensor4<T>,
        targets: &[T],
        loss: &dyn Loss<T>,
    ) -> Result<(T, Gradients<T>)> {
        if inputs.n == 0 || inputs.n != targets.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} inputs for {} targets",
                inputs.n,
                targets.len()
            )));
        }
        let (preds, cache) = self.forward_train(inputs)?;
        let value = loss.batch_mean(&preds, targets);
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss(format!("batch loss {value}")));
        }
        let inv_n = T::one() / T::lit(targets.len() as f64);
        let d: Vec<T> = preds
            .iter()
            .zip(targets)
            .map(|(&p, &t)| loss.derivative(p, t) * inv_n)
            .collect();
        Ok((value, self.backward(&cache, &d)))
    }
}

impl<T: Scalar> Params<T> for QualityNet<T> {
    fn visit(&self, f: &mut Visitor<'_, T>) {
        for (block, se) in self.blocks.iter().zip(&self.squeeze_excite) {
            block.visit(f);
            if let Some(se) = se {
                se.visit(f);
            }
        }
        for layer in &self.head {
            layer.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut VisitorMut<'_, T>) {
        for (block, se) in self.blocks.iter_mut().zip(self.squeeze_excite.iter_mut()) {
            block.visit_mut(f);
            if let Some(se) = se {
                se.visit_mut(f);
            }
        }
        for layer in &mut self.head {
            layer.visit_mut(f);
        }
    }
}

/// Stacks equally shaped inputs into a batch.
pub fn stack_inputs<T: Scalar>(inputs: &[&InputTensor<T>]) -> Result<Tensor4<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::ShapeMismatch("empty batch".into()))?;
    if inputs.iter().any(|x| x.shape() != first.shape()) {
        return Err(Error::ShapeMismatch("batch inputs differ in shape".into()));
    }
    let data = inputs.iter().flat_map(|x| x.data.iter().copied()).collect();
    Tensor4::from_vec(inputs.len(), first.channels, first.bands, first.frames, data)
}

/// Network output (MUSHRA / 100) mapped onto the 0–100 scale.
pub fn to_mushra<T: Scalar>(raw: T) -> f64 {
    (raw.as_f64() * 100.0).clamp(0.0, 100.0)
}
