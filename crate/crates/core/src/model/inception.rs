use super::config::InceptionConfig;
use super::layers::{
    relu_backward, relu_inplace, AvgPool2d, BatchNorm2d, BnCache, Conv2d, Params, Visitor, VisitorMut,
};
use super::tensor::{Gradients, Tensor4};
use crate::error::Result;
use crate::scalar::Scalar;

/// Convolution → batch norm → ReLU.
pub struct ConvBnRelu<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
}

pub struct ConvBnReluCache<T> {
    bn: BnCache<T>,
    output: Tensor4<T>,
}

impl<T: Scalar> ConvBnRelu<T> {
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (isize, isize),
        seed: u64,
    ) -> Self {
        Self {
            conv: Conv2d::new(&format!("{name}.conv"), in_ch, out_ch, kernel, stride, padding, seed),
            bn: BatchNorm2d::new(&format!("{name}.bn"), out_ch),
        }
    }

    pub fn forward_eval(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut y = self.conv.forward(x)?;
        self.bn.forward_eval(&mut y);
        relu_inplace(&mut y.data);
        Ok(y)
    }

    pub fn forward_train(&mut self, x: &Tensor4<T>) -> Result<(Tensor4<T>, ConvBnReluCache<T>)> {
        let mut y = self.conv.forward(x)?;
        let bn = self.bn.forward_train(&mut y);
        relu_inplace(&mut y.data);
        Ok((y.clone(), ConvBnReluCache { bn, output: y }))
    }

    pub fn backward(
        &self,
        x: &Tensor4<T>,
        cache: &ConvBnReluCache<T>,
        mut dy: Tensor4<T>,
        need_dx: bool,
        grads: &mut Gradients<T>,
    ) -> Option<Tensor4<T>> {
        relu_backward(&cache.output.data, &mut dy.data);
        self.bn.backward(&cache.bn, &mut dy, grads);
        self.conv.backward(x, &dy, need_dx, grads)
    }
}

impl<T: Scalar> Params<T> for ConvBnRelu<T> {
    fn visit(&self, f: &mut Visitor<'_, T>) {
        self.conv.visit(f);
        self.bn.visit(f);
    }

    fn visit_mut(&mut self, f: &mut VisitorMut<'_, T>) {
        self.conv.visit_mut(f);
        self.bn.visit_mut(f);
    }
}

pub struct InceptionBlock<T> {
    pub name: String,
    pub horizontal: ConvBnRelu<T>,
    pub vertical: ConvBnRelu<T>,
    pub pointwise: ConvBnRelu<T>,
    pub pool: AvgPool2d,
    pub projection: ConvBnRelu<T>,
    pub block_pool: Option<AvgPool2d>,
}

pub struct InceptionCache<T> {
    horizontal: ConvBnReluCache<T>,
    vertical: ConvBnReluCache<T>,
    pointwise: ConvBnReluCache<T>,
    pooled: Tensor4<T>,
    projection: ConvBnReluCache<T>,
    concat_dims: [usize; 4],
}

impl<T: Scalar> InceptionBlock<T> {
    pub fn new(cfg: &InceptionConfig, in_ch: usize, seed: u64) -> Result<Self> {
        let name = &cfg.name;
        let branch = |suffix: &str, kernel: (usize, usize), out: usize| {
            ConvBnRelu::new(
                &format!("{name}.{suffix}"),
                in_ch,
                out,
                kernel,
                cfg.stride,
                cfg.padding.amount(kernel),
                seed,
            )
        };
        Ok(Self {
            name: name.clone(),
            horizontal: branch("horizontal", cfg.horizontal, cfg.branch_channels),
            vertical: branch("vertical", cfg.vertical, cfg.branch_channels),
            pointwise: branch("pointwise", (1, 1), cfg.branch_channels),
            pool: cfg.branch_pool()?,
            projection: ConvBnRelu::new(
                &format!("{name}.projection"),
                in_ch,
                cfg.pool_channels,
                (1, 1),
                (1, 1),
                (0, 0),
                seed,
            ),
            block_pool: cfg.block_pool.map(|p| p.layer()),
        })
    }

    fn widths(&self) -> [usize; 4] {
        [
            self.horizontal.conv.out_channels(),
            self.vertical.conv.out_channels(),
            self.pointwise.conv.out_channels(),
            self.projection.conv.out_channels(),
        ]
    }

    /// The four convolutions that read the block input, in branch order.
    /// The projection reads the average-pooled input.
    pub fn input_convs(&self) -> [&Conv2d<T>; 4] {
        [
            &self.horizontal.conv,
            &self.vertical.conv,
            &self.pointwise.conv,
            &self.projection.conv,
        ]
    }

    pub fn input_convs_mut(&mut self) -> [&mut Conv2d<T>; 4] {
        [
            &mut self.horizontal.conv,
            &mut self.vertical.conv,
            &mut self.pointwise.conv,
            &mut self.projection.conv,
        ]
    }

    /// Convolution outputs before batch norm, one tensor per branch.
    pub fn pre_activations(&self, x: &Tensor4<T>) -> Result<[Tensor4<T>; 4]> {
        let pooled = self.pool.forward(x)?;
        Ok([
            self.horizontal.conv.forward(x)?,
            self.vertical.conv.forward(x)?,
            self.pointwise.conv.forward(x)?,
            self.projection.conv.forward(&pooled)?,
        ])
    }

    pub fn forward_eval(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let h = self.horizontal.forward_eval(x)?;
        let v = self.vertical.forward_eval(x)?;
        let p = self.pointwise.forward_eval(x)?;
        let q = self.projection.forward_eval(&self.pool.forward(x)?)?;
        let y = Tensor4::concat_channels(&[&h, &v, &p, &q])?;
        match &self.block_pool {
            Some(pool) => pool.forward(&y),
            None => Ok(y),
        }
    }

    pub fn forward_train(&mut self, x: &Tensor4<T>) -> Result<(Tensor4<T>, InceptionCache<T>)> {
        let (h, hc) = self.horizontal.forward_train(x)?;
        let (v, vc) = self.vertical.forward_train(x)?;
        let (p, pc) = self.pointwise.forward_train(x)?;
        let pooled = self.pool.forward(x)?;
        let (q, qc) = self.projection.forward_train(&pooled)?;
        let y = Tensor4::concat_channels(&[&h, &v, &p, &q])?;
        let concat_dims = y.dims();
        let y = match &self.block_pool {
            Some(pool) => pool.forward(&y)?,
            None => y,
        };
        Ok((
            y,
            InceptionCache {
                horizontal: hc,
                vertical: vc,
                pointwise: pc,
                pooled,
                projection: qc,
                concat_dims,
            },
        ))
    }

    pub fn backward(
        &self,
        x: &Tensor4<T>,
        cache: &InceptionCache<T>,
        dy: Tensor4<T>,
        need_dx: bool,
        grads: &mut Gradients<T>,
    ) -> Option<Tensor4<T>> {
        let dy = match &self.block_pool {
            Some(pool) => pool.backward(cache.concat_dims, &dy),
            None => dy,
        };
        let mut parts = dy.split_channels(&self.widths()).into_iter();
        let (dh, dv, dp, dq) = (
            parts.next().unwrap(),
            parts.next().unwrap(),
            parts.next().unwrap(),
            parts.next().unwrap(),
        );
        let gh = self.horizontal.backward(x, &cache.horizontal, dh, need_dx, grads);
        let gv = self.vertical.backward(x, &cache.vertical, dv, need_dx, grads);
        let gp = self.pointwise.backward(x, &cache.pointwise, dp, need_dx, grads);
        let gq = self
            .projection
            .backward(&cache.pooled, &cache.projection, dq, need_dx, grads)
            .map(|g| self.pool.backward(x.dims(), &g));
        if !need_dx {
            return None;
        }
        let mut dx = gh?;
        for g in [gv?, gp?, gq?] {
            for (a, b) in dx.data.iter_mut().zip(&g.data) {
                *a = *a + *b;
            }
        }
        Some(dx)
    }
}

impl<T: Scalar> Params<T> for InceptionBlock<T> {
    fn visit(&self, f: &mut Visitor<'_, T>) {
        self.horizontal.visit(f);
        self.vertical.visit(f);
        self.pointwise.visit(f);
        self.projection.visit(f);
    }

    fn visit_mut(&mut self, f: &mut VisitorMut<'_, T>) {
        self.horizontal.visit_mut(f);
        self.vertical.visit_mut(f);
        self.pointwise.visit_mut(f);
        self.projection.visit_mut(f);
    }
}
