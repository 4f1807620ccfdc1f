use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{
    concat, concat_backward, dropout, dropout_backward, maxpool2, maxpool2_backward, relu, relu_backward, BatchNorm,
    BnCache, Conv2d, Mode, Param, Scalar, Tensor4, UpConv2,
};
use crate::NUM_CLASSES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    /// Resolution levels including the bottleneck; there are `depth - 1` poolings.
    pub depth: usize,
    pub base_channels: usize,
    pub num_classes: usize,
    pub dropout_rate: f64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_channels: 8,
            num_classes: NUM_CLASSES,
            dropout_rate: 0.2,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::Domain(format!("U-Net depth {} < 2", self.depth)));
        }
        if self.base_channels < 4 {
            return Err(Error::Domain(format!("base channels {} < 4", self.base_channels)));
        }
        if self.num_classes != NUM_CLASSES {
            return Err(Error::Domain(format!("expected {NUM_CLASSES} classes, got {}", self.num_classes)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Domain(format!("dropout rate {}", self.dropout_rate)));
        }
        Ok(())
    }

    /// Slice sides must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << (self.depth - 1)
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

/// conv3x3 → batch norm → ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBnRelu<T = f32> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm<T>,
}

struct CbrCache<T> {
    x: Tensor4<T>,
    bn: BnCache<T>,
    pre_relu: Tensor4<T>,
}

impl<T: Scalar> ConvBnRelu<T> {
    fn new(c_in: usize, c_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv: Conv2d::new(c_in, c_out, 3, rng),
            bn: BatchNorm::new(c_out),
        }
    }

    fn forward(&mut self, x: Tensor4<T>, mode: Mode) -> Result<(Tensor4<T>, CbrCache<T>)> {
        let c = self.conv.forward(&x)?;
        let (b, bn) = self.bn.forward(&c, mode)?;
        let y = relu(&b);
        Ok((y, CbrCache { x, bn, pre_relu: b }))
    }

    fn backward(&mut self, cache: &CbrCache<T>, grad: &Tensor4<T>) -> Result<Tensor4<T>> {
        let g = relu_backward(&cache.pre_relu, grad);
        let g = self.bn.backward(&cache.bn, &g)?;
        self.conv.backward_accumulate(&cache.x, &g)
    }

    fn params_mut(&mut self) -> [&mut Param<T>; 4] {
        [&mut self.conv.weight, &mut self.conv.bias, &mut self.bn.gamma, &mut self.bn.beta]
    }
}

/// Two [`ConvBnRelu`] blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct DoubleConv<T = f32> {
    pub first: ConvBnRelu<T>,
    pub second: ConvBnRelu<T>,
}

struct DoubleCache<T>(CbrCache<T>, CbrCache<T>);

impl<T: Scalar> DoubleConv<T> {
    fn new(c_in: usize, c_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            first: ConvBnRelu::new(c_in, c_out, rng),
            second: ConvBnRelu::new(c_out, c_out, rng),
        }
    }

    fn forward(&mut self, x: Tensor4<T>, mode: Mode) -> Result<(Tensor4<T>, DoubleCache<T>)> {
        let (a, ca) = self.first.forward(x, mode)?;
        let (b, cb) = self.second.forward(a, mode)?;
        Ok((b, DoubleCache(ca, cb)))
    }

    fn backward(&mut self, cache: &DoubleCache<T>, grad: &Tensor4<T>) -> Result<Tensor4<T>> {
        let g = self.second.backward(&cache.1, grad)?;
        self.first.backward(&cache.0, &g)
    }

    fn blocks_mut(&mut self) -> [&mut ConvBnRelu<T>; 2] {
        [&mut self.first, &mut self.second]
    }

    fn blocks(&self) -> [&ConvBnRelu<T>; 2] {
        [&self.first, &self.second]
    }
}

/// Same-padding U-Net: per encoder level two conv-BN-ReLU then 2×2 max
/// pooling; a two-block bottleneck; per decoder level a 2×2 up-convolution,
/// skip concatenation and two conv-BN-ReLU; a 1×1 convolution to the class
/// logits followed by dropout. The softmax is applied by the loss or at
/// inference.
#[derive(Clone, Debug, PartialEq)]
pub struct UNet<T = f32> {
    pub config: UNetConfig,
    pub encoders: Vec<DoubleConv<T>>,
    pub bottleneck: DoubleConv<T>,
    /// Decoder levels ordered from the deepest to the shallowest.
    pub ups: Vec<UpConv2<T>>,
    pub decoders: Vec<DoubleConv<T>>,
    pub head: Conv2d<T>,
}

/// Intermediate values of a forward pass needed by [`UNet::backward`].
pub struct ForwardCache<T> {
    enc: Vec<DoubleCache<T>>,
    skips_c: Vec<usize>,
    pools: Vec<(Vec<usize>, [usize; 4])>,
    bottleneck: DoubleCache<T>,
    ups_in: Vec<Tensor4<T>>,
    dec: Vec<DoubleCache<T>>,
    head_in: Tensor4<T>,
    dropout_mask: Vec<T>,
}

impl<T: Scalar> UNet<T> {
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let levels = config.depth - 1;
        let mut encoders = Vec::with_capacity(levels);
        let mut c_in = 1;
        for l in 0..levels {
            encoders.push(DoubleConv::new(c_in, config.channels(l), &mut rng));
            c_in = config.channels(l);
        }
        let bottleneck = DoubleConv::new(c_in, config.channels(levels), &mut rng);
        let mut ups = Vec::with_capacity(levels);
        let mut decoders = Vec::with_capacity(levels);
        for l in (0..levels).rev() {
            ups.push(UpConv2::new(config.channels(l + 1), config.channels(l), &mut rng));
            decoders.push(DoubleConv::new(2 * config.channels(l), config.channels(l), &mut rng));
        }
        let head = Conv2d::new(config.channels(0), config.num_classes, 1, &mut rng);
        Ok(Self {
            config,
            encoders,
            bottleneck,
            ups,
            decoders,
            head,
        })
    }

    pub fn param_count(&self) -> usize {
        let dc = |d: &DoubleConv<T>| d.blocks().iter().map(|b| b.conv.param_count() + b.bn.param_count()).sum::<usize>();
        self.encoders.iter().map(dc).sum::<usize>()
            + dc(&self.bottleneck)
            + self.ups.iter().map(|u| u.param_count()).sum::<usize>()
            + self.decoders.iter().map(dc).sum::<usize>()
            + self.head.param_count()
    }

    /// Every trainable parameter in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out: Vec<&mut Param<T>> = Vec::new();
        for d in self.encoders.iter_mut() {
            for b in d.blocks_mut() {
                out.extend(b.params_mut());
            }
        }
        for b in self.bottleneck.blocks_mut() {
            out.extend(b.params_mut());
        }
        for (u, d) in self.ups.iter_mut().zip(self.decoders.iter_mut()) {
            out.push(&mut u.weight);
            out.push(&mut u.bias);
            for b in d.blocks_mut() {
                out.extend(b.params_mut());
            }
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    /// Every batch-norm layer in the same order as [`params_mut`](Self::params_mut).
    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm<T>> {
        let mut out = Vec::new();
        for d in self.encoders.iter_mut() {
            for b in d.blocks_mut() {
                out.push(&mut b.bn);
            }
        }
        for b in self.bottleneck.blocks_mut() {
            out.push(&mut b.bn);
        }
        for d in self.decoders.iter_mut() {
            for b in d.blocks_mut() {
                out.push(&mut b.bn);
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Logits (n, 5, h, w) for a (n, 1, h, w) input.
    pub fn forward(&mut self, x: &Tensor4<T>, mode: Mode, dropout_seed: u64) -> Result<(Tensor4<T>, ForwardCache<T>)> {
        let d = self.config.divisor();
        if x.c() != 1 {
            return Err(Error::Shape(format!("U-Net input must have 1 channel, got {}", x.c())));
        }
        if x.h() % d != 0 || x.w() % d != 0 {
            return Err(Error::Shape(format!("slice {}×{} not divisible by {d}", x.h(), x.w())));
        }
        let mut enc = Vec::with_capacity(self.encoders.len());
        let mut skips = Vec::with_capacity(self.encoders.len());
        let mut pools = Vec::with_capacity(self.encoders.len());
        let mut cur = x.clone();
        for e in self.encoders.iter_mut() {
            let (y, c) = e.forward(cur, mode)?;
            let (p, arg) = maxpool2(&y)?;
            pools.push((arg, y.shape()));
            skips.push(y);
            enc.push(c);
            cur = p;
        }
        let (mut cur, bottleneck) = self.bottleneck.forward(cur, mode)?;
        let mut ups_in = Vec::with_capacity(self.ups.len());
        let mut dec = Vec::with_capacity(self.decoders.len());
        let skips_c = skips.iter().map(|s| s.c()).collect();
        for (u, dcv) in self.ups.iter().zip(self.decoders.iter_mut()) {
            let up = u.forward(&cur)?;
            let skip = skips.pop().expect("one skip per decoder level");
            let cat = concat(&skip, &up)?;
            ups_in.push(cur);
            let (y, c) = dcv.forward(cat, mode)?;
            dec.push(c);
            cur = y;
        }
        let logits = self.head.forward(&cur)?;
        let (out, dropout_mask) = dropout(&logits, self.config.dropout_rate, mode, dropout_seed)?;
        Ok((
            out,
            ForwardCache {
                enc,
                skips_c,
                pools,
                bottleneck,
                ups_in,
                dec,
                head_in: cur,
                dropout_mask,
            },
        ))
    }

    /// Accumulates parameter gradients for the upstream gradient of the
    /// logits; returns the gradient with respect to the input.
    pub fn backward(&mut self, cache: &ForwardCache<T>, grad_logits: &Tensor4<T>) -> Result<Tensor4<T>> {
        let g = dropout_backward(&cache.dropout_mask, grad_logits);
        let mut g = self.head.backward_accumulate(&cache.head_in, &g)?;
        let levels = self.decoders.len();
        let mut skip_grads: Vec<Tensor4<T>> = Vec::with_capacity(levels);
        for i in (0..levels).rev() {
            let gcat = self.decoders[i].backward(&cache.dec[i], &g)?;
            // Decoder i consumes the skip of encoder level `levels - 1 - i`.
            let skip_c = cache.skips_c[levels - 1 - i];
            let (gskip, gup) = concat_backward(&gcat, skip_c);
            skip_grads.push(gskip);
            g = self.ups[i].backward_accumulate(&cache.ups_in[i], &gup)?;
        }
        let mut g = self.bottleneck.backward(&cache.bottleneck, &g)?;
        // skip_grads[j] belongs to encoder level j (pushed from decoder `levels-1` down to 0).
        for l in (0..self.encoders.len()).rev() {
            let (arg, shape) = &cache.pools[l];
            let mut gy = maxpool2_backward(arg, *shape, &g);
            for (a, b) in gy.data_mut().iter_mut().zip(skip_grads[l].data()) {
                *a += *b;
            }
            g = self.encoders[l].backward(&cache.enc[l], &gy)?;
        }
        Ok(g)
    }
}
